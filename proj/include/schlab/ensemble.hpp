#pragma once

// Monte Carlo ensembles: decay envelope, Lyapunov bound, coupled-path
// stability, backward Cesaro averages of the transition measures, and the
// energy distance used to compare empirical clouds.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "schlab/integrator.hpp"
#include "schlab/noise.hpp"

namespace schlab {

/// Runs f(0..n-1) on up to `workers` threads; results come back in index order.
template <class F>
auto parallel_map(std::size_t n, int workers, F&& f) -> std::vector<decltype(f(std::size_t{0}))>
{
  using R = decltype(f(std::size_t{0}));
  std::vector<std::optional<R>> slots(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        slots[i].emplace(f(i));
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (!err) err = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (w == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < w; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Shared per-path setup; path p uses CounterRng(seed).split(p).
struct PathSetup {
  Model model;
  SchemeConfig scheme;
  MonitorConfig monitor;
  GridFunction u0;
  double diag_s = 2.0;
  std::uint64_t seed = 0;

  [[nodiscard]] CounterRng path_rng(std::uint64_t p) const { return CounterRng(seed).split(p); }
};

inline constexpr const char* kConditioningNote =
    "deterministic u0: conditional expectations given F_0 reduce to plain ensemble means";

struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

inline MeanSE mean_se(const std::vector<double>& xs)
{
  MeanSE r;
  r.n = xs.size();
  if (xs.empty()) return r;
  // Identical samples (deterministic runs) get an exact mean and zero SE.
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) {
    r.mean = xs.front();
    return r;
  }
  double s = 0.0;
  for (double x : xs) s += x;
  r.mean = s / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double q = 0.0;
    for (double x : xs) q += (x - r.mean) * (x - r.mean);
    r.se = std::sqrt(q / static_cast<double>(xs.size() - 1) / static_cast<double>(xs.size()));
  }
  return r;
}

inline std::vector<Trajectory> run_paths(const PathSetup& s, std::size_t paths, int workers,
                                         const RunOptions& opt = {})
{
  RunOptions o = opt;
  o.diag_s = s.diag_s;
  return parallel_map(paths, workers, [&](std::size_t p) {
    return run(s.model, s.scheme, s.monitor, s.path_rng(p), s.u0, o);
  });
}

/// Per-record-time mean and SE of one diagnostic over surviving paths.
struct EnsembleSeries {
  std::vector<double> t;
  std::vector<MeanSE> stat;
};

template <class Get>
EnsembleSeries ensemble_series(const std::vector<Trajectory>& trs, Get&& get)
{
  EnsembleSeries out;
  std::size_t rows = 0;
  for (const auto& tr : trs) {
    if (tr.outcome == Outcome::Completed) rows = std::max(rows, tr.rows.size());
  }
  for (std::size_t i = 0; i < rows; ++i) {
    std::vector<double> xs;
    double t = 0.0;
    for (const auto& tr : trs) {
      if (tr.outcome != Outcome::Completed || i >= tr.rows.size()) continue;
      xs.push_back(get(tr.rows[i]));
      t = tr.rows[i].t;
    }
    out.t.push_back(t);
    out.stat.push_back(mean_se(xs));
  }
  return out;
}

struct PathCounts {
  std::size_t total = 0;
  std::size_t completed = 0;
  std::size_t blowups = 0;
  std::size_t failures = 0;
};

inline PathCounts count_outcomes(const std::vector<Trajectory>& trs)
{
  PathCounts c;
  c.total = trs.size();
  for (const auto& tr : trs) {
    if (tr.outcome == Outcome::Completed) ++c.completed;
    if (tr.outcome == Outcome::BlowUp) ++c.blowups;
    if (tr.outcome == Outcome::NumericalFailure) ++c.failures;
  }
  return c;
}

inline nlohmann::json to_json(const PathCounts& c)
{
  return {{"total", c.total}, {"completed", c.completed}, {"blowups", c.blowups}, {"numerical_failures", c.failures}};
}

// ---------------------------------------------------------------------------
// Decay envelope

struct DecayReport {
  double xi = 0.0;
  double c0 = 0.0;
  double u0_h1_sq = 0.0;
  std::vector<double> t;
  std::vector<MeanSE> h1;
  std::vector<double> bound;   // ||u0||^2 exp((xi + c0) t - 2 int_0^t lambda)
  std::vector<double> margin;  // bound - mean
  PathCounts counts;
  bool valid = true;           // false as soon as any path leaves Completed

  [[nodiscard]] double min_margin_in_se() const
  {
    double m = INFINITY;
    for (std::size_t i = 0; i < margin.size(); ++i) {
      const double se = h1[i].se;
      m = std::min(m, se > 0.0 ? margin[i] / se : (margin[i] >= 0.0 ? INFINITY : -INFINITY));
    }
    return m;
  }
  [[nodiscard]] double min_margin() const
  {
    double m = INFINITY;
    for (double x : margin) m = std::min(m, x);
    return m;
  }
};

/// c0 for the linear-growth family: sum_k ||h_k||^2_{H^1} <= c_psi ||u||^2_{H^1}
/// when Psi is constant; zero noise has c0 = 0.
inline double linear_growth_c0(const ItoNoiseSpec& h)
{
  if (!h.active()) return 0.0;
  if (h.family == ItoNoiseSpec::Family::BandProjection && h.theta_psi == 0.0 && !h.fixed_field) return h.c_psi;
  throw std::invalid_argument("decay: h must be zero or band_projection with constant Psi (theta_psi = 0)");
}

inline DecayReport decay_experiment(const PathSetup& s, std::size_t paths, double xi, double c0, int workers)
{
  if (!(s.model.drift.epsilon > 0.0 && s.model.drift.theta > 0.5)) {
    throw std::invalid_argument("decay: requires epsilon > 0 and theta > 1/2");
  }
  if (paths < 2) throw std::invalid_argument("decay: need at least 2 paths");
  (void)linear_growth_c0(s.model.ito);
  const auto trs = run_paths(s, paths, workers);
  DecayReport r;
  r.xi = xi;
  r.c0 = c0;
  r.counts = count_outcomes(trs);
  r.valid = r.counts.completed == r.counts.total;
  r.u0_h1_sq = sobolev_norm_sq(1.0, s.u0);
  const auto series = ensemble_series(trs, [](const DiagnosticRow& d) { return d.h1_sq; });
  const double t0 = s.scheme.t0;
  for (std::size_t i = 0; i < series.t.size(); ++i) {
    const double t = series.t[i];
    const double b =
        r.u0_h1_sq * std::exp((xi + c0) * (t - t0) - 2.0 * s.model.drift.damping.integral(t0, t));
    r.t.push_back(t);
    r.h1.push_back(series.stat[i]);
    r.bound.push_back(b);
    r.margin.push_back(b - series.stat[i].mean);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Lyapunov bound

class LyapunovPreconditionError : public std::runtime_error {
 public:
  explicit LyapunovPreconditionError(LyapunovReport r)
      : std::runtime_error("lyapunov: condition fails on the sample set (max margin " +
                           std::to_string(r.max_margin) + ", g required " + std::to_string(r.g_required) + ")"),
        report_(std::move(r))
  {
  }
  [[nodiscard]] const LyapunovReport& report() const noexcept { return report_; }

 private:
  LyapunovReport report_;
};

/// Samples for the condition check: smooth random fields with H^s norm
/// log-uniform in [lo, hi], sample times uniform in [t_lo, t_hi].
inline std::vector<LyapunovSample> lyapunov_sample_set(const TorusGrid& g, double s, int n, std::uint64_t seed,
                                                       double lo, double hi, double t_lo = 0.0, double t_hi = 0.0)
{
  if (!(lo > 0.0 && hi >= lo)) throw std::invalid_argument("lyapunov: need 0 < lo <= hi");
  const CounterRng rng(seed);
  std::vector<LyapunovSample> out;
  for (int i = 0; i < n; ++i) {
    const auto ui = static_cast<std::uint64_t>(i);
    const GridFunction base = random_band_limited(g, g.size() / 4, rng, ui, s + 1.0);
    const double nrm = std::sqrt(sobolev_norm_sq(s, base));
    const double target = std::exp(std::log(lo) + rng.uniform(1u << 20, ui) * std::log(hi / lo));
    const double t = t_lo + rng.uniform((1u << 20) + 1, ui) * (t_hi - t_lo);
    out.push_back({t, (target / nrm) * base});
  }
  return out;
}

struct LyapunovEnsembleReport {
  LyapunovReport precondition;
  double v0 = 0.0;
  std::vector<double> t;
  std::vector<MeanSE> v;
  std::vector<double> bound;   // V(||u0||^2) exp(int_0^t g)
  std::vector<double> margin;  // bound - mean
  PathCounts counts;

  [[nodiscard]] bool bound_holds_within(double n_se) const
  {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (v[i].mean > bound[i] + n_se * v[i].se) return false;
    }
    return true;
  }
};

inline LyapunovEnsembleReport lyapunov_experiment(const PathSetup& s, std::size_t paths, const LyapunovInputs& in,
                                                  const LyapunovReport& pre, int workers)
{
  if (!pre.holds()) throw LyapunovPreconditionError(pre);
  if (paths < 2) throw std::invalid_argument("lyapunov: need at least 2 paths");
  PathSetup ps = s;
  ps.diag_s = in.s;
  const auto trs = run_paths(ps, paths, workers);
  LyapunovEnsembleReport r;
  r.precondition = pre;
  r.counts = count_outcomes(trs);
  r.v0 = in.v(sobolev_norm_sq(in.s, s.u0));
  const auto series = ensemble_series(trs, [&](const DiagnosticRow& d) { return in.v(d.hs_sq); });
  for (std::size_t i = 0; i < series.t.size(); ++i) {
    const double t = series.t[i];
    const double b = r.v0 * std::exp(in.g.integral(s.scheme.t0, t));
    r.t.push_back(t);
    r.v.push_back(series.stat[i]);
    r.bound.push_back(b);
    r.margin.push_back(b - series.stat[i].mean);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Coupled-path stability

struct StabilityReport {
  double sigma = 0.0;
  std::vector<double> deltas;
  std::vector<MeanSE> diff;        // ||u_delta(T) - u(T)||^2_{H^sigma}
  std::vector<std::size_t> excluded;  // pairs dropped for blow-up or failure
  bool zero_delta_bitwise = false;
  std::size_t paths = 0;

  [[nodiscard]] bool strictly_decreasing() const
  {
    // deltas are listed from largest to smallest
    for (std::size_t i = 1; i < diff.size(); ++i) {
      if (!(diff[i].mean < diff[i - 1].mean)) return false;
    }
    return true;
  }
};

/// Perturbations u0 + delta * phi with ||phi||_{H^sigma} = 1, each paired with
/// the unperturbed path on the same noise realization.
inline StabilityReport stability_experiment(const PathSetup& s, std::size_t paths, const GridFunction& phi,
                                            std::vector<double> deltas, double sigma, int workers)
{
  const double pn = std::sqrt(sobolev_norm_sq(sigma, phi));
  if (!(pn > 0.0)) throw std::invalid_argument("stability: perturbation must be nonzero");
  const GridFunction dir = (1.0 / pn) * phi;
  std::sort(deltas.begin(), deltas.end(), std::greater<>());
  RunOptions opt;
  opt.record = false;
  opt.diag_s = s.diag_s;
  const auto base = parallel_map(paths, workers, [&](std::size_t p) {
    return run(s.model, s.scheme, s.monitor, s.path_rng(p), s.u0, opt);
  });
  const auto twin = parallel_map(paths, workers, [&](std::size_t p) {
    return run(s.model, s.scheme, s.monitor, s.path_rng(p), s.u0, opt);
  });
  StabilityReport r;
  r.sigma = sigma;
  r.paths = paths;
  r.zero_delta_bitwise = true;
  for (std::size_t p = 0; p < paths; ++p) {
    const auto a = base[p].final_state.values();
    const auto b = twin[p].final_state.values();
    if (!std::equal(a.begin(), a.end(), b.begin())) r.zero_delta_bitwise = false;
  }
  for (double d : deltas) {
    const GridFunction u0d = s.u0 + d * dir;
    const auto pert = parallel_map(paths, workers, [&](std::size_t p) {
      return run(s.model, s.scheme, s.monitor, s.path_rng(p), u0d, opt);
    });
    std::vector<double> xs;
    std::size_t excl = 0;
    for (std::size_t p = 0; p < paths; ++p) {
      if (base[p].outcome != Outcome::Completed || pert[p].outcome != Outcome::Completed) {
        ++excl;
        continue;
      }
      xs.push_back(sobolev_norm_sq(sigma, pert[p].final_state - base[p].final_state));
    }
    r.deltas.push_back(d);
    r.diff.push_back(mean_se(xs));
    r.excluded.push_back(excl);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Energy distance

using Cloud = std::vector<std::vector<double>>;

struct EnergyDistance {
  double distance = 0.0;
  double se = 0.0;  // bootstrap standard error
};

namespace detail {

inline double euclid(const std::vector<double>& a, const std::vector<double>& b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double mean_pair_distance(const Cloud& a, const std::vector<std::size_t>& ia, const Cloud& b,
                                 const std::vector<std::size_t>& ib)
{
  double s = 0.0;
  for (std::size_t i : ia) {
    for (std::size_t j : ib) s += euclid(a[i], b[j]);
  }
  return s / (static_cast<double>(ia.size()) * static_cast<double>(ib.size()));
}

inline double energy_distance_indexed(const Cloud& a, const std::vector<std::size_t>& ia, const Cloud& b,
                                      const std::vector<std::size_t>& ib)
{
  return 2.0 * mean_pair_distance(a, ia, b, ib) - mean_pair_distance(a, ia, a, ia) -
         mean_pair_distance(b, ib, b, ib);
}

}  // namespace detail

/// 2E|X-Y| - E|X-X'| - E|Y-Y'| (V-statistic, so identical clouds give 0),
/// with a bootstrap SE from `bootstrap` resamples of both clouds.
inline EnergyDistance energy_distance(const Cloud& a, const Cloud& b, int bootstrap = 200, std::uint64_t seed = 0)
{
  if (a.empty() || b.empty()) throw std::invalid_argument("energy_distance: empty cloud");
  const std::size_t d = a.front().size();
  for (const auto* c : {&a, &b}) {
    for (const auto& x : *c) {
      if (x.size() != d) throw std::invalid_argument("energy_distance: summary dimensions differ");
      for (double v : x) {
        if (!std::isfinite(v)) throw std::invalid_argument("energy_distance: non-finite summary");
      }
    }
  }
  std::vector<std::size_t> ia(a.size()), ib(b.size());
  for (std::size_t i = 0; i < ia.size(); ++i) ia[i] = i;
  for (std::size_t i = 0; i < ib.size(); ++i) ib[i] = i;
  EnergyDistance r;
  r.distance = std::max(0.0, detail::energy_distance_indexed(a, ia, b, ib));
  if (bootstrap > 1) {
    const CounterRng rng(seed);
    std::vector<double> reps;
    for (int k = 0; k < bootstrap; ++k) {
      const auto uk = static_cast<std::uint64_t>(k);
      for (std::size_t i = 0; i < ia.size(); ++i) {
        ia[i] = std::min(a.size() - 1, static_cast<std::size_t>(rng.uniform(0, uk, i) * a.size()));
      }
      for (std::size_t i = 0; i < ib.size(); ++i) {
        ib[i] = std::min(b.size() - 1, static_cast<std::size_t>(rng.uniform(1, uk, i) * b.size()));
      }
      reps.push_back(detail::energy_distance_indexed(a, ia, b, ib));
    }
    r.se = mean_se(reps).se * std::sqrt(static_cast<double>(reps.size()));
  }
  return r;
}

/// (||u||_{H^1}, ||u||_{H^s}, max u, min u_x).
inline std::vector<double> summary_vector(const GridFunction& u, double s)
{
  const GridFunction ux = derivative(u);
  return {std::sqrt(sobolev_norm_sq(1.0, u)), std::sqrt(sobolev_norm_sq(s, u)),
          *std::max_element(u.values().begin(), u.values().end()),
          *std::min_element(ux.values().begin(), ux.values().end())};
}

// ---------------------------------------------------------------------------
// Evolution system of measures

struct MeasureOptions {
  std::vector<double> start_times{4.0, 8.0, 16.0};  // T: paths start in [-T, -n]
  std::vector<double> handoffs{1.0, 2.0};           // n
  double t_eval = 0.0;
  std::size_t paths = 128;
  int bootstrap = 200;
  std::size_t composition_checks = 4;
};

struct MeasureCloud {
  double T = 0.0;
  double n = 0.0;
  Cloud points;
  std::vector<double> start_times;
  PathCounts counts;
};

struct MeasureReport {
  std::vector<MeasureCloud> clouds;  // ordered by (n, T)
  double n_ref = 0.0;
  std::vector<std::pair<double, double>> ladder_T;  // successive T pairs for n_ref
  std::vector<EnergyDistance> ladder;
  EnergyDistance n_independence;  // n_ref vs the other handoff at the largest T
  double n_other = 0.0;
  bool composition_bitwise = true;
  std::size_t composition_checked = 0;
  bool valid = true;

  [[nodiscard]] bool cauchy_decreasing() const
  {
    for (std::size_t i = 1; i < ladder.size(); ++i) {
      if (!(ladder[i].distance < ladder[i - 1].distance)) return false;
    }
    return true;
  }
  [[nodiscard]] bool n_independent(double factor = 3.0) const
  {
    return n_independence.distance <= factor * n_independence.se;
  }
};

namespace detail {

inline double snap_to_lattice(double t, double dt) { return std::round(t / dt) * dt; }

}  // namespace detail

/// For each (T, n): path p starts from u0 at a uniform time in [-T, -n],
/// runs to -n (a draw from nu_{T,-n}) and is pushed forward to t_eval.
inline MeasureReport measure_experiment(const PathSetup& s, const MeasureOptions& o, int workers)
{
  if (o.start_times.empty() || o.handoffs.empty()) throw std::invalid_argument("measure: empty T or n list");
  if (o.paths < 2) throw std::invalid_argument("measure: need at least 2 paths");
  const double dt = s.scheme.dt;
  for (double n : o.handoffs) {
    if (!(n > 0.0)) throw std::invalid_argument("measure: handoff n must be > 0");
    if (!(o.t_eval >= -n)) throw std::invalid_argument("measure: t_eval must be >= -n");
    for (double T : o.start_times) {
      if (!(T > n)) throw std::invalid_argument("measure: every T must exceed every n");
    }
  }
  RunOptions opt;
  opt.record = false;
  opt.diag_s = s.diag_s;
  MeasureReport r;
  r.n_ref = o.handoffs.front();
  std::uint64_t cloud_id = 0;
  for (double n : o.handoffs) {
    for (double T : o.start_times) {
      const CounterRng cloud_rng = CounterRng(s.seed).split(0xC10D0000ULL + cloud_id++);
      MeasureCloud c;
      c.T = T;
      c.n = n;
      struct PathOut {
        double ts;
        Trajectory first, second;
      };
      const auto outs = parallel_map(o.paths, workers, [&](std::size_t p) {
        const double ts = detail::snap_to_lattice(-T + cloud_rng.uniform(0, p) * (T - n), dt);
        const CounterRng prng = cloud_rng.split(p);
        SchemeConfig a = s.scheme;
        a.t0 = ts;
        a.t_end = -n;
        Trajectory first = ts < -n ? run(s.model, a, s.monitor, prng, s.u0, opt)
                                   : Trajectory{{}, std::nullopt, Outcome::Completed, {}, s.u0, -n, 0, 0, {}};
        Trajectory second = first;
        if (first.outcome == Outcome::Completed && o.t_eval > -n) {
          SchemeConfig b = s.scheme;
          b.t0 = -n;
          b.t_end = o.t_eval;
          second = run(s.model, b, s.monitor, prng, first.final_state, opt);
        }
        return PathOut{ts, std::move(first), std::move(second)};
      });
      std::vector<Trajectory> finals;
      for (std::size_t p = 0; p < outs.size(); ++p) {
        finals.push_back(outs[p].second);
        c.start_times.push_back(outs[p].ts);
        if (outs[p].second.outcome == Outcome::Completed) c.points.push_back(summary_vector(outs[p].second.final_state, s.diag_s));
      }
      c.counts = count_outcomes(finals);
      if (c.counts.completed != c.counts.total) r.valid = false;

      // Propagator composition: one leg from ts to t_eval must match the two legs bitwise.
      if (n == r.n_ref && T == o.start_times.back()) {
        const std::size_t checks = std::min(o.composition_checks, o.paths);
        for (std::size_t p = 0; p < checks; ++p) {
          if (outs[p].second.outcome != Outcome::Completed || !(outs[p].ts < o.t_eval)) continue;
          SchemeConfig w = s.scheme;
          w.t0 = outs[p].ts;
          w.t_end = o.t_eval;
          const auto whole = run(s.model, w, s.monitor, cloud_rng.split(p), s.u0, opt);
          const auto x = summary_vector(whole.final_state, s.diag_s);
          const auto y = summary_vector(outs[p].second.final_state, s.diag_s);
          const auto wa = whole.final_state.values();
          const auto wb = outs[p].second.final_state.values();
          if (x != y || !std::equal(wa.begin(), wa.end(), wb.begin())) r.composition_bitwise = false;
          ++r.composition_checked;
        }
      }
      r.clouds.push_back(std::move(c));
    }
  }
  if (!r.valid) return r;
  auto cloud = [&](double n, double T) -> const MeasureCloud& {
    for (const auto& c : r.clouds) {
      if (c.n == n && c.T == T) return c;
    }
    throw std::logic_error("measure: missing cloud");
  };
  std::uint64_t bs = 0;
  for (std::size_t i = 0; i + 1 < o.start_times.size(); ++i) {
    const double ta = o.start_times[i], tb = o.start_times[i + 1];
    r.ladder_T.emplace_back(ta, tb);
    r.ladder.push_back(energy_distance(cloud(r.n_ref, ta).points, cloud(r.n_ref, tb).points, o.bootstrap,
                                       hash_key(s.seed, 0xED, bs++)));
  }
  if (o.handoffs.size() > 1) {
    r.n_other = o.handoffs[1];
    const double T = o.start_times.back();
    r.n_independence = energy_distance(cloud(r.n_ref, T).points, cloud(r.n_other, T).points, o.bootstrap,
                                       hash_key(s.seed, 0xED, bs++));
  }
  return r;
}

// ---------------------------------------------------------------------------
// OU calibration: linear damped system driven by band noise on a fixed field,
// each cosine amplitude is an OU process with stationary variance Psi^2/(2 lambda).

struct OuModeStat {
  int k = 0;
  double measured = 0.0;
  double expected = 0.0;
  double rel_err = 0.0;
};

struct OuCalibration {
  std::vector<OuModeStat> modes;
  PathCounts counts;
  [[nodiscard]] double max_rel_err() const
  {
    double m = 0.0;
    for (const auto& s : modes) m = std::max(m, s.rel_err);
    return m;
  }
};

inline OuCalibration ou_calibration(const PathSetup& s, std::size_t paths, int workers)
{
  const auto& h = s.model.ito;
  const auto& d = s.model.drift;
  if (!(h.family == ItoNoiseSpec::Family::BandProjection && h.fixed_field && h.theta_psi == 0.0)) {
    throw std::invalid_argument("ou: needs band_projection with constant Psi on a fixed field");
  }
  if (d.convection || d.nonlocal || d.epsilon != 0.0 || !d.damping.is_autonomous() || !s.model.q_ops.empty()) {
    throw std::invalid_argument("ou: needs a linear system with constant damping and no Q bank");
  }
  const double lam = d.damping(0.0);
  if (!(lam > 0.0)) throw std::invalid_argument("ou: damping must be > 0");
  RunOptions opt;
  opt.record = false;
  const auto trs = run_paths(s, paths, workers, opt);
  OuCalibration r;
  r.counts = count_outcomes(trs);
  const TorusGrid& g = s.u0.grid();
  const GridFunction phi = GridFunction::sample(g, [&](double x) { return (*h.fixed_field)(x); });
  const int kmax = std::min(h.channels, g.nyquist() - 1);
  for (int k = 1; k <= kmax; ++k) {
    // Field amplitude of cos(kx) is Re(u_hat(k)) / pi; forcing amplitude likewise from phi.
    const double amp = phi.spectrum()[static_cast<std::size_t>(k)].real() / std::numbers::pi;
    if (std::abs(amp) < 1e-12) continue;
    std::vector<double> xs;
    for (const auto& tr : trs) {
      if (tr.outcome == Outcome::Completed) {
        xs.push_back(tr.final_state.spectrum()[static_cast<std::size_t>(k)].real() / std::numbers::pi);
      }
    }
    const MeanSE m = mean_se(xs);
    double var = 0.0;
    for (double x : xs) var += (x - m.mean) * (x - m.mean);
    var /= static_cast<double>(xs.size() - 1);
    const double expected = h.psi(0.0) * h.psi(0.0) * amp * amp / (2.0 * lam);
    r.modes.push_back({k, var, expected, std::abs(var - expected) / expected});
  }
  return r;
}

// ---------------------------------------------------------------------------
// JSON views for the reports

inline nlohmann::json to_json(const MeanSE& m) { return {{"mean", m.mean}, {"se", m.se}, {"n", m.n}}; }

inline nlohmann::json to_json(const EnergyDistance& e) { return {{"distance", e.distance}, {"bootstrap_se", e.se}}; }

inline nlohmann::json to_json(const DecayReport& r)
{
  nlohmann::json times = nlohmann::json::array();
  for (std::size_t i = 0; i < r.t.size(); ++i) {
    times.push_back({{"t", r.t[i]}, {"mean_h1_sq", r.h1[i].mean}, {"se", r.h1[i].se}, {"n", r.h1[i].n},
                     {"bound", r.bound[i]}, {"margin", r.margin[i]},
                     {"margin_minus_3se", r.margin[i] - 3.0 * r.h1[i].se}});
  }
  return {{"experiment", "decay"},   {"conditioning", kConditioningNote}, {"xi_hat", r.xi}, {"c0_hat", r.c0},
          {"u0_h1_sq", r.u0_h1_sq}, {"paths", to_json(r.counts)},         {"valid", r.valid}, {"times", times}};
}

inline nlohmann::json to_json(const LyapunovReport& r)
{
  return {{"samples", r.lhs.size()}, {"max_margin", r.max_margin}, {"g_required", r.g_required}, {"holds", r.holds()}};
}

inline nlohmann::json to_json(const LyapunovEnsembleReport& r)
{
  nlohmann::json times = nlohmann::json::array();
  for (std::size_t i = 0; i < r.t.size(); ++i) {
    times.push_back({{"t", r.t[i]}, {"mean_V", r.v[i].mean}, {"se", r.v[i].se}, {"n", r.v[i].n},
                     {"bound", r.bound[i]}, {"margin", r.margin[i]}});
  }
  return {{"experiment", "lyapunov"}, {"conditioning", kConditioningNote}, {"condition", to_json(r.precondition)},
          {"V0", r.v0},               {"paths", to_json(r.counts)},         {"times", times}};
}

inline nlohmann::json to_json(const StabilityReport& r)
{
  nlohmann::json ladder = nlohmann::json::array();
  for (std::size_t i = 0; i < r.deltas.size(); ++i) {
    ladder.push_back({{"delta", r.deltas[i]}, {"mean_sq_diff", r.diff[i].mean}, {"se", r.diff[i].se},
                      {"pairs", r.diff[i].n}, {"excluded", r.excluded[i]}});
  }
  return {{"experiment", "stability"},        {"conditioning", kConditioningNote}, {"sigma", r.sigma},
          {"paths", r.paths},                  {"zero_delta_bitwise", r.zero_delta_bitwise},
          {"strictly_decreasing", r.strictly_decreasing()}, {"ladder", ladder}};
}

inline nlohmann::json to_json(const MeasureReport& r)
{
  nlohmann::json clouds = nlohmann::json::array();
  for (const auto& c : r.clouds) clouds.push_back({{"T", c.T}, {"n", c.n}, {"paths", to_json(c.counts)}});
  nlohmann::json ladder = nlohmann::json::array();
  for (std::size_t i = 0; i < r.ladder.size(); ++i) {
    ladder.push_back({{"T_a", r.ladder_T[i].first}, {"T_b", r.ladder_T[i].second}, {"energy", to_json(r.ladder[i])}});
  }
  return {{"experiment", "measure"},
          {"conditioning", kConditioningNote},
          {"valid", r.valid},
          {"clouds", clouds},
          {"ladder_n", r.n_ref},
          {"ladder", ladder},
          {"cauchy_decreasing", r.cauchy_decreasing()},
          {"n_independence", {{"n_a", r.n_ref}, {"n_b", r.n_other}, {"energy", to_json(r.n_independence)},
                              {"within_3_se", r.n_independent()}}},
          {"composition", {{"checked", r.composition_checked}, {"bitwise", r.composition_bitwise}}}};
}

inline nlohmann::json to_json(const OuCalibration& r)
{
  nlohmann::json modes = nlohmann::json::array();
  for (const auto& m : r.modes) {
    modes.push_back({{"k", m.k}, {"variance", m.measured}, {"expected", m.expected}, {"rel_err", m.rel_err}});
  }
  return {{"experiment", "ou_calibration"}, {"paths", to_json(r.counts)}, {"modes", modes},
          {"max_rel_err", r.max_rel_err()}};
}

}  // namespace schlab
