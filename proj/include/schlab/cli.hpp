#pragma once

// Subcommand dispatch and output layout for sch-lab.
//
// Layout under the output directory:
//   manifest.json   hash, version, constants, wall clock, counts
//   report.jsonl    one record per experiment (byte-stable)
//   *.csv           time series / ladders (byte-stable)
//   snapshots.schg  optional SCHG stream (simulate)
//   errors.json     only file written for an invalid config
//
// Everything is written from the calling thread after the reductions.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "schlab/config.hpp"

namespace schlab::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInvalidConfig = 2,
  kNumericalFailure = 3,
  kIoError = 4,
  kExperimentInvalid = 5,
};

struct Options {
  std::string subcommand;
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed_override;
};

inline int resolve_workers(const std::optional<int>& flag)
{
  if (flag) return std::max(1, *flag);
  if (const char* env = std::getenv("SCH_LAB_WORKERS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
    }
  }
  return 1;
}

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Writer {
 public:
  explicit Writer(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void ensure_dir() const
  {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
  }

  void text(const std::string& name, const std::string& body)
  {
    ensure_dir();
    std::ofstream os(dir_ / name, std::ios::binary);
    os << body;
    if (!os) throw IoError("cannot write " + (dir_ / name).string());
    files_.push_back(name);
  }

  void json(const std::string& name, const nlohmann::json& j) { text(name, j.dump(2) + "\n"); }

  void jsonl(const std::string& name, const std::vector<nlohmann::json>& records)
  {
    std::string body;
    for (const auto& r : records) body += r.dump() + "\n";
    text(name, body);
  }

  [[nodiscard]] const std::vector<std::string>& files() const noexcept { return files_; }
  [[nodiscard]] const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<std::string> files_;
};

inline std::string csv_row(std::initializer_list<double> xs)
{
  std::string s;
  for (double x : xs) {
    if (!s.empty()) s += ',';
    s += format_double(x);
  }
  return s + "\n";
}

struct Result {
  int code = kOk;
  nlohmann::json record;  // one report.jsonl record
  nlohmann::json counts = nlohmann::json::object();
};

namespace detail {

inline nlohmann::json header(const RunConfig& cfg, const std::string& sub, const EstimatedConstants& k)
{
  return {{"subcommand", sub}, {"config_hash", hex64(cfg.hash)}, {"seed", cfg.seed},
          {"constants", to_json(k)}, {"gamma0", cfg.gamma0}, {"s", cfg.s}, {"s_threshold", cfg.s_threshold()}};
}

inline nlohmann::json detection_json(const std::optional<BlowupDetection>& b)
{
  if (!b) return nullptr;
  return {{"kind", b->kind}, {"t_detect", b->t_detect}};
}

inline int path_exit(const PathCounts& c, bool blowup_invalidates)
{
  if (c.failures > 0) return kNumericalFailure;
  if (blowup_invalidates && c.blowups > 0) return kExperimentInvalid;
  return kOk;
}

inline std::int64_t total_steps(const std::vector<Trajectory>& trs)
{
  std::int64_t s = 0;
  for (const auto& t : trs) s += t.steps;
  return s;
}

inline Result do_simulate(const RunConfig& cfg, Writer& w)
{
  const PathSetup s = build_setup(cfg);
  RunOptions opt;
  opt.diag_s = cfg.s;
  opt.keep_snapshots = cfg.experiment.snapshots;
  const Trajectory tr = run(s.model, s.scheme, s.monitor, s.path_rng(0), s.u0, opt);
  std::ostringstream csv;
  write_trajectory_csv(csv, tr.rows);
  w.text("trajectory.csv", csv.str());
  if (cfg.experiment.snapshots) {
    std::ostringstream bin(std::ios::binary);
    for (const auto& u : tr.snapshots) write_snapshot(bin, u);
    w.text("snapshots.schg", bin.str());
  }
  Result r;
  r.record = {{"experiment", "simulate"},          {"outcome", outcome_name(tr.outcome)},
              {"blowup", detection_json(tr.blowup)}, {"t_final", tr.t_final},
              {"steps", tr.steps},                   {"halvings", tr.halvings},
              {"records", tr.rows.size()}};
  if (!tr.failure.empty()) r.record["failure"] = tr.failure;
  r.counts = {{"paths", 1}, {"steps", tr.steps}};
  r.code = tr.outcome == Outcome::NumericalFailure ? kNumericalFailure : kOk;
  return r;
}

inline Result do_ensemble(const RunConfig& cfg, Writer& w, int workers)
{
  const PathSetup s = build_setup(cfg);
  const auto trs = run_paths(s, cfg.experiment.paths, workers);
  const auto counts = count_outcomes(trs);
  const auto l2 = ensemble_series(trs, [](const DiagnosticRow& d) { return d.l2_sq; });
  const auto h1 = ensemble_series(trs, [](const DiagnosticRow& d) { return d.h1_sq; });
  const auto hs = ensemble_series(trs, [](const DiagnosticRow& d) { return d.hs_sq; });
  const auto wl = ensemble_series(trs, [](const DiagnosticRow& d) { return d.w1inf; });
  std::string csv = "t,n,l2_sq_mean,l2_sq_se,h1_sq_mean,h1_sq_se,hs_sq_mean,hs_sq_se,w1inf_mean,w1inf_se\n";
  for (std::size_t i = 0; i < h1.t.size(); ++i) {
    csv += csv_row({h1.t[i], static_cast<double>(h1.stat[i].n), l2.stat[i].mean, l2.stat[i].se, h1.stat[i].mean,
                    h1.stat[i].se, hs.stat[i].mean, hs.stat[i].se, wl.stat[i].mean, wl.stat[i].se});
  }
  w.text("ensemble.csv", csv);
  Result r;
  r.record = {{"experiment", "ensemble"}, {"conditioning", kConditioningNote}, {"paths", to_json(counts)},
              {"records", h1.t.size()}};
  r.counts = {{"paths", to_json(counts)}, {"steps", total_steps(trs)}};
  r.code = path_exit(counts, false);
  return r;
}

inline Result do_decay(const RunConfig& cfg, const EstimatedConstants& k, Writer& w, int workers)
{
  const PathSetup s = build_setup(cfg);
  const auto rep = decay_experiment(s, cfg.experiment.paths, k.xi_h1, k.c0, workers);
  std::string csv = "t,n,mean_h1_sq,se,bound,margin\n";
  for (std::size_t i = 0; i < rep.t.size(); ++i) {
    csv += csv_row({rep.t[i], static_cast<double>(rep.h1[i].n), rep.h1[i].mean, rep.h1[i].se, rep.bound[i],
                    rep.margin[i]});
  }
  w.text("decay.csv", csv);
  Result r;
  r.record = to_json(rep);
  r.record["lambda_vs_rate"] = {{"lambda0", cfg.drift.damping(0.0)}, {"half_xi_plus_c0", 0.5 * (k.xi_h1 + k.c0)}};
  r.counts = {{"paths", to_json(rep.counts)}};
  r.code = rep.counts.failures ? kNumericalFailure : (rep.valid ? kOk : kExperimentInvalid);
  return r;
}

inline LyapunovInputs lyapunov_inputs(const RunConfig& cfg, const EstimatedConstants& k)
{
  LyapunovInputs in;
  in.s = cfg.s;
  in.xi = k.xi_hs;
  in.theta = k.theta_hat;
  in.damping = cfg.drift.damping;
  in.g = cfg.experiment.g;
  return in;
}

inline std::vector<LyapunovSample> lyapunov_samples(const RunConfig& cfg)
{
  const auto& e = cfg.experiment;
  return lyapunov_sample_set(cfg.grid(), cfg.s, e.condition_samples, e.sample_seed, e.sample_norm_lo,
                             e.sample_norm_hi, e.sample_t_lo, e.sample_t_hi);
}

inline Result do_lyapunov(const RunConfig& cfg, const EstimatedConstants& k, Writer& w, int workers)
{
  const PathSetup s = build_setup(cfg);
  const LyapunovInputs in = lyapunov_inputs(cfg, k);
  const LyapunovReport pre = check_lyapunov_condition(cfg.ito, in, lyapunov_samples(cfg));
  Result r;
  if (!pre.holds()) {
    r.record = {{"experiment", "lyapunov"}, {"refused", true}, {"condition", to_json(pre)}};
    r.code = kExperimentInvalid;
    return r;
  }
  const auto rep = lyapunov_experiment(s, cfg.experiment.paths, in, pre, workers);
  std::string csv = "t,n,mean_V,se,bound,margin\n";
  for (std::size_t i = 0; i < rep.t.size(); ++i) {
    csv += csv_row({rep.t[i], static_cast<double>(rep.v[i].n), rep.v[i].mean, rep.v[i].se, rep.bound[i],
                    rep.margin[i]});
  }
  w.text("lyapunov.csv", csv);
  r.record = to_json(rep);
  r.record["bound_holds_within_3se"] = rep.bound_holds_within(3.0);
  r.counts = {{"paths", to_json(rep.counts)}};
  r.code = path_exit(rep.counts, false);
  return r;
}

inline GridFunction stability_direction(const RunConfig& cfg)
{
  const TorusGrid g = cfg.grid();
  const auto& e = cfg.experiment;
  if (e.perturbation_mode > 0) {
    const double m = e.perturbation_mode;
    return GridFunction::sample(g, [m](double x) { return std::cos(m * x); });
  }
  return random_band_limited(g, g.size() / 4, CounterRng(e.perturbation_seed), 0, *cfg.sigma + 1.0);
}

inline Result do_stability(const RunConfig& cfg, Writer& w, int workers)
{
  const PathSetup s = build_setup(cfg);
  const auto rep =
      stability_experiment(s, cfg.experiment.paths, stability_direction(cfg), cfg.experiment.deltas, *cfg.sigma, workers);
  std::string csv = "delta,pairs,excluded,mean_sq_diff,se\n";
  for (std::size_t i = 0; i < rep.deltas.size(); ++i) {
    csv += csv_row({rep.deltas[i], static_cast<double>(rep.diff[i].n), static_cast<double>(rep.excluded[i]),
                    rep.diff[i].mean, rep.diff[i].se});
  }
  w.text("stability.csv", csv);
  Result r;
  r.record = to_json(rep);
  r.record["t_eval"] = cfg.scheme.t_end;
  std::size_t excl = 0;
  for (auto e : rep.excluded) excl = std::max(excl, e);
  r.counts = {{"pairs", rep.paths}, {"max_excluded", excl}};
  r.code = kOk;
  return r;
}

inline Result do_measure(const RunConfig& cfg, Writer& w, int workers)
{
  const PathSetup s = build_setup(cfg);
  Result r;
  if (cfg.experiment.ou_calibration) {
    const auto rep = ou_calibration(s, cfg.experiment.paths, workers);
    std::string csv = "k,variance,expected,rel_err\n";
    for (const auto& m : rep.modes) csv += csv_row({static_cast<double>(m.k), m.measured, m.expected, m.rel_err});
    w.text("ou_modes.csv", csv);
    r.record = to_json(rep);
    r.counts = {{"paths", to_json(rep.counts)}};
    r.code = path_exit(rep.counts, true);
    return r;
  }
  const auto rep = measure_experiment(s, cfg.experiment.measure, workers);
  std::string csv = "n,T_a,T_b,energy_distance,bootstrap_se\n";
  for (std::size_t i = 0; i < rep.ladder.size(); ++i) {
    csv += csv_row({rep.n_ref, rep.ladder_T[i].first, rep.ladder_T[i].second, rep.ladder[i].distance,
                    rep.ladder[i].se});
  }
  w.text("measure_ladder.csv", csv);
  r.record = to_json(rep);
  nlohmann::json cc = nlohmann::json::array();
  std::size_t total = 0;
  for (const auto& c : rep.clouds) {
    cc.push_back(to_json(c.counts));
    total += c.counts.total;
  }
  r.counts = {{"clouds", cc}, {"paths", total}};
  r.code = rep.valid ? kOk : kExperimentInvalid;
  return r;
}

inline Result do_estimate(const RunConfig& cfg, Writer& w)
{
  std::string csv = "n,xi_hat_h1,xi_hat_hs,theta_hat\n";
  nlohmann::json per = nlohmann::json::array();
  for (int n : cfg.experiment.resolutions) {
    const TorusGrid g(n);
    const double x1 = estimate_Xi(cfg.bank, g, 1.0, cfg.estimates.xi_samples, cfg.estimates.seed);
    const double xs = estimate_Xi(cfg.bank, g, std::max(1.0, cfg.s), cfg.estimates.xi_samples, cfg.estimates.seed);
    const double th = estimate_Theta(g, cfg.s, cfg.estimates.theta_samples, cfg.estimates.seed);
    csv += csv_row({static_cast<double>(n), x1, xs, th});
    per.push_back({{"n", n}, {"xi_hat_h1", x1}, {"xi_hat_hs", xs}, {"theta_hat", th}});
  }
  w.text("constants.csv", csv);
  nlohmann::json orders = nlohmann::json::array();
  std::vector<int> dense;
  for (int n : cfg.experiment.resolutions) {
    if (n <= kDenseMatrixLimit) dense.push_back(n);
  }
  for (std::size_t i = 0; i < cfg.bank.size(); ++i) {
    if (dense.size() < 2) break;
    const auto rep = estimate_symmetrized_order(cfg.bank[i], dense);
    orders.push_back({{"channel", i}, {"base", cfg.bank[i].base.name}, {"order", cfg.bank[i].order},
                      {"slope", rep.slope}, {"admissible", rep.admissible()}, {"zero_norm", rep.zero_norm}});
  }
  Result r;
  r.record = {{"experiment", "estimate-constants"}, {"resolutions", per}, {"symmetrized_order", orders},
              {"gamma0", cfg.gamma0}};
  r.counts = {{"resolutions", cfg.experiment.resolutions.size()}};
  return r;
}

inline Result do_blowup_scan(const RunConfig& cfg, Writer& w)
{
  nlohmann::json runs = nlohmann::json::array();
  std::vector<double> tdet;
  Result r;
  std::int64_t steps = 0;
  for (int n : cfg.experiment.resolutions) {
    RunConfig c = cfg;
    c.n = n;
    c.bank = cfg.bank;
    const PathSetup s = build_setup(c);
    RunOptions opt;
    opt.diag_s = c.s;
    const Trajectory tr = run(s.model, s.scheme, s.monitor, s.path_rng(0), s.u0, opt);
    std::ostringstream csv;
    write_trajectory_csv(csv, tr.rows);
    w.text("trajectory_N" + std::to_string(n) + ".csv", csv.str());
    double min_ux = 0.0, max_u = 0.0;
    if (!tr.rows.empty()) {
      min_ux = tr.rows.back().min_ux;
      max_u = tr.rows.back().max_u;
    }
    runs.push_back({{"n", n}, {"outcome", outcome_name(tr.outcome)}, {"blowup", detection_json(tr.blowup)},
                    {"t_final", tr.t_final}, {"min_ux_final", min_ux}, {"max_u_final", max_u},
                    {"max_abs_u_final", max_abs(tr.final_state)}});
    tdet.push_back(tr.blowup ? tr.blowup->t_detect : std::nan(""));
    steps += tr.steps;
    if (tr.outcome == Outcome::NumericalFailure) r.code = kNumericalFailure;
  }
  nlohmann::json rel = nlohmann::json::array();
  const double ref = tdet.back();
  for (std::size_t i = 0; i + 1 < tdet.size(); ++i) {
    const double d = std::abs(tdet[i] - ref) / ref;
    if (std::isfinite(d)) rel.push_back({{"n", cfg.experiment.resolutions[i]}, {"rel_diff_vs_finest", d}});
    else rel.push_back({{"n", cfg.experiment.resolutions[i]}, {"rel_diff_vs_finest", nullptr}});
  }
  r.record = {{"experiment", "blowup-scan"}, {"runs", runs}, {"detection_agreement", rel}};
  r.counts = {{"paths", runs.size()}, {"steps", steps}};
  return r;
}

}  // namespace detail

/// Runs one subcommand; returns the process exit status. Diagnostics go to err.
inline int dispatch(const Options& o, std::ostream& err = std::cerr)
{
  const auto clock0 = std::chrono::steady_clock::now();
  const auto sub_kind = parse_experiment(o.subcommand);
  if (!sub_kind) {
    err << "sch-lab: unknown subcommand '" << o.subcommand << "'\n";
    return kUsage;
  }

  // Output directory: flag, else the config's output_dir (read leniently so an
  // invalid config can still place its error report).
  std::optional<std::string> out = o.out_dir;
  if (!out) {
    std::ifstream in(o.config_path);
    try {
      const auto j = nlohmann::json::parse(in);
      if (j.is_object() && j.contains("output_dir") && j["output_dir"].is_string()) out = j["output_dir"].get<std::string>();
    } catch (const std::exception&) {
    }
  }

  RunConfig cfg;
  try {
    cfg = load_run_config(o.config_path);
    if (cfg.experiment.kind != *sub_kind) {
      throw ConfigInvalid({{"experiment.kind", "config describes '" + experiment_name(cfg.experiment.kind) +
                                                   "' but the subcommand is '" + o.subcommand + "'"}});
    }
  } catch (const ConfigInvalid& e) {
    err << "sch-lab: " << e.what() << "\n";
    if (out) {
      try {
        Writer w(*out);
        w.json("errors.json", to_json(e.errors()));
      } catch (const std::exception& io) {
        err << "sch-lab: " << io.what() << "\n";
        return kIoError;
      }
    }
    return kInvalidConfig;
  }
  if (!out) {
    err << "sch-lab: no output directory (use --out or output_dir)\n";
    return kUsage;
  }
  if (o.seed_override) {
    cfg.seed = *o.seed_override;
    cfg.hash = fnv1a64(hex64(cfg.hash) + ":seed=" + std::to_string(cfg.seed));
  }
  const int workers = resolve_workers(o.workers);

  Writer w(*out);
  Result res;
  EstimatedConstants k;
  try {
    w.ensure_dir();
    k = resolve_constants(cfg);
    switch (*sub_kind) {
      case ExperimentKind::Simulate: res = detail::do_simulate(cfg, w); break;
      case ExperimentKind::Ensemble: res = detail::do_ensemble(cfg, w, workers); break;
      case ExperimentKind::Decay: res = detail::do_decay(cfg, k, w, workers); break;
      case ExperimentKind::Lyapunov: res = detail::do_lyapunov(cfg, k, w, workers); break;
      case ExperimentKind::Stability: res = detail::do_stability(cfg, w, workers); break;
      case ExperimentKind::Measure: res = detail::do_measure(cfg, w, workers); break;
      case ExperimentKind::EstimateConstants: res = detail::do_estimate(cfg, w); break;
      case ExperimentKind::BlowupScan: res = detail::do_blowup_scan(cfg, w); break;
    }
  } catch (const IoError& e) {
    err << "sch-lab: " << e.what() << "\n";
    return kIoError;
  } catch (const NonFiniteError& e) {
    err << "sch-lab: numerical failure: " << e.what() << "\n";
    res.code = kNumericalFailure;
    res.record = {{"experiment", o.subcommand}, {"error", e.what()}};
  } catch (const std::exception& e) {
    err << "sch-lab: experiment invalid: " << e.what() << "\n";
    res.code = kExperimentInvalid;
    res.record = {{"experiment", o.subcommand}, {"error", e.what()}};
  }

  try {
    nlohmann::json rec = detail::header(cfg, o.subcommand, k);
    rec.update(res.record);
    w.jsonl("report.jsonl", {rec});
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock0).count();
    nlohmann::json files = w.files();
    files.push_back("manifest.json");
    w.json("manifest.json", {{"tool", "sch-lab"},
                             {"version", kToolVersion},
                             {"subcommand", o.subcommand},
                             {"config_path", o.config_path},
                             {"config_hash", hex64(cfg.hash)},
                             {"seed", cfg.seed},
                             {"workers", workers},
                             {"constants", to_json(k)},
                             {"resolved_psi", {{"c_psi", cfg.ito.c_psi}, {"theta_psi", cfg.ito.theta_psi}}},
                             {"wall_clock_s", wall},
                             {"counts", res.counts},
                             {"exit_status", res.code},
                             {"outputs", files}});
  } catch (const std::exception& e) {
    err << "sch-lab: " << e.what() << "\n";
    return kIoError;
  }
  return res.code;
}

}  // namespace schlab::cli
