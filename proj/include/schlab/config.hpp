#pragma once

// Run configuration: strict JSON schema, exhaustive validation.
//
// Physics parameters have no defaults; every one must be spelled out. Only
// numerical plumbing (monitor thresholds, channel caps, estimation sample
// counts) falls back to documented defaults. Unknown keys are errors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "schlab/dynamics.hpp"
#include "schlab/ensemble.hpp"
#include "schlab/integrator.hpp"
#include "schlab/noise.hpp"
#include "schlab/psdo.hpp"
#include "schlab/spectral.hpp"

namespace schlab {

inline constexpr const char* kToolVersion = "0.3.0";

struct ConfigError {
  std::string field;
  std::string message;
};

class ConfigInvalid : public std::runtime_error {
 public:
  explicit ConfigInvalid(std::vector<ConfigError> errors)
      : std::runtime_error(summary(errors)), errors_(std::move(errors))
  {
  }
  [[nodiscard]] const std::vector<ConfigError>& errors() const noexcept { return errors_; }

 private:
  static std::string summary(const std::vector<ConfigError>& e)
  {
    std::string s = "invalid config (" + std::to_string(e.size()) + " error(s))";
    for (const auto& x : e) s += "\n  " + x.field + ": " + x.message;
    return s;
  }
  std::vector<ConfigError> errors_;
};

inline nlohmann::json to_json(const std::vector<ConfigError>& errs)
{
  nlohmann::json a = nlohmann::json::array();
  for (const auto& e : errs) a.push_back({{"field", e.field}, {"message", e.message}});
  return {{"valid", false}, {"errors", a}};
}

enum class ExperimentKind { Simulate, Ensemble, Decay, Lyapunov, Stability, Measure, EstimateConstants, BlowupScan };

inline const std::vector<std::pair<ExperimentKind, std::string>>& experiment_names()
{
  static const std::vector<std::pair<ExperimentKind, std::string>> n = {
      {ExperimentKind::Simulate, "simulate"},
      {ExperimentKind::Ensemble, "ensemble"},
      {ExperimentKind::Decay, "decay"},
      {ExperimentKind::Lyapunov, "lyapunov"},
      {ExperimentKind::Stability, "stability"},
      {ExperimentKind::Measure, "measure"},
      {ExperimentKind::EstimateConstants, "estimate-constants"},
      {ExperimentKind::BlowupScan, "blowup-scan"},
  };
  return n;
}

inline std::string experiment_name(ExperimentKind k)
{
  for (const auto& [kk, s] : experiment_names()) {
    if (kk == k) return s;
  }
  return "?";
}

inline std::optional<ExperimentKind> parse_experiment(const std::string& s)
{
  for (const auto& [k, n] : experiment_names()) {
    if (n == s) return k;
  }
  return std::nullopt;
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Simulate;
  std::size_t paths = 0;
  bool snapshots = false;  // simulate

  // lyapunov
  LyapunovFamily v_family = LyapunovFamily::LogEPlus;
  TimeProfile g = TimeProfile::constant(0.0);
  int condition_samples = 500;
  double sample_norm_lo = 0.1, sample_norm_hi = 10.0;
  double sample_t_lo = 0.0, sample_t_hi = 0.0;
  std::uint64_t sample_seed = 0;

  // stability: phi = cos(mode x) when mode > 0, else a smooth random field
  std::vector<double> deltas;
  int perturbation_mode = 0;
  std::uint64_t perturbation_seed = 0;

  // measure
  bool ou_calibration = false;
  MeasureOptions measure;

  // estimate-constants, blowup-scan
  std::vector<int> resolutions;
};

/// Sample counts for the working constants; not physics.
struct EstimateSettings {
  int xi_samples = 64;
  int theta_samples = 200;
  std::uint64_t seed = 7;
};

struct RunConfig {
  int n = 0;
  DriftConfig drift;
  std::string bank_path;  // resolved; empty when no bank
  NoiseBank bank;         // after the q_channels cap
  int q_channels = 16;
  ItoNoiseSpec ito;
  std::optional<double> c_psi_extra;  // c_psi = Xi_hat(eta = s) + extra
  bool theta_psi_auto = false;        // theta_psi = Theta_hat(s)
  std::uint64_t seed = 0;
  SchemeConfig scheme;
  MonitorConfig monitor;
  Coefficient initial;
  double s = 0.0;
  std::optional<double> sigma;
  ExperimentConfig experiment;
  EstimateSettings estimates;
  std::string output_dir;

  // Derived.
  double gamma0 = 0.0;
  double regularity_offset = 0.0;  // max{2 gamma0, 1, 2 theta 1[eps > 0]}
  std::uint64_t hash = 0;
  nlohmann::json source;

  [[nodiscard]] double s_threshold() const { return 1.5 + regularity_offset; }
  [[nodiscard]] TorusGrid grid() const { return TorusGrid(n); }
};

inline double regularity_offset(double gamma0, double epsilon, double theta)
{
  return std::max({2.0 * gamma0, 1.0, epsilon > 0.0 ? 2.0 * theta : 0.0});
}

inline std::uint64_t fnv1a64(const std::string& s)
{
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

using nlohmann::json;

class Checker {
 public:
  std::vector<ConfigError> errors;

  void fail(const std::string& field, const std::string& msg) { errors.push_back({field, msg}); }

  static std::string join(const std::string& path, const std::string& key)
  {
    return path.empty() ? key : path + "." + key;
  }

  bool object(const json& j, const std::string& path)
  {
    if (j.is_object()) return true;
    fail(path.empty() ? "<root>" : path, "expected an object");
    return false;
  }

  void known_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys)
  {
    if (!j.is_object()) return;
    for (const auto& [k, _] : j.items()) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
        fail(join(path, k), "unknown key");
      }
    }
  }

  const json* get(const json& j, const std::string& path, const char* key, bool required)
  {
    if (!j.is_object()) return nullptr;
    auto it = j.find(key);
    if (it == j.end()) {
      if (required) fail(join(path, key), "required");
      return nullptr;
    }
    return &*it;
  }

  std::optional<double> number(const json& j, const std::string& path, const char* key, bool required)
  {
    const json* v = get(j, path, key, required);
    if (!v) return std::nullopt;
    if (!v->is_number()) {
      fail(join(path, key), "expected a number");
      return std::nullopt;
    }
    const double x = v->get<double>();
    if (!std::isfinite(x)) {
      fail(join(path, key), "must be finite");
      return std::nullopt;
    }
    return x;
  }

  std::optional<std::int64_t> integer(const json& j, const std::string& path, const char* key, bool required)
  {
    const json* v = get(j, path, key, required);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) {
      fail(join(path, key), "expected an integer");
      return std::nullopt;
    }
    return v->get<std::int64_t>();
  }

  std::optional<std::uint64_t> u64(const json& j, const std::string& path, const char* key, bool required)
  {
    const json* v = get(j, path, key, required);
    if (!v) return std::nullopt;
    if (!v->is_number_unsigned()) {
      fail(join(path, key), "expected a non-negative integer");
      return std::nullopt;
    }
    return v->get<std::uint64_t>();
  }

  std::optional<bool> boolean(const json& j, const std::string& path, const char* key, bool required)
  {
    const json* v = get(j, path, key, required);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) {
      fail(join(path, key), "expected true or false");
      return std::nullopt;
    }
    return v->get<bool>();
  }

  std::optional<std::string> string(const json& j, const std::string& path, const char* key, bool required)
  {
    const json* v = get(j, path, key, required);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      fail(join(path, key), "expected a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  std::optional<std::vector<double>> numbers(const json& j, const std::string& path, const char* key, bool required)
  {
    const json* v = get(j, path, key, required);
    if (!v) return std::nullopt;
    if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number(); })) {
      fail(join(path, key), "expected an array of numbers");
      return std::nullopt;
    }
    auto out = v->get<std::vector<double>>();
    if (!std::all_of(out.begin(), out.end(), [](double x) { return std::isfinite(x); })) {
      fail(join(path, key), "entries must be finite");
      return std::nullopt;
    }
    return out;
  }

  std::optional<std::vector<int>> ints(const json& j, const std::string& path, const char* key, bool required)
  {
    const json* v = get(j, path, key, required);
    if (!v) return std::nullopt;
    if (!v->is_array() || !std::all_of(v->begin(), v->end(), [](const json& e) { return e.is_number_integer(); })) {
      fail(join(path, key), "expected an array of integers");
      return std::nullopt;
    }
    return v->get<std::vector<int>>();
  }

  std::optional<TimeProfile> profile(const json& j, const std::string& path, const char* key, bool required)
  {
    const json* v = get(j, path, key, required);
    if (!v) return std::nullopt;
    const std::string p = join(path, key);
    if (!object(*v, p)) return std::nullopt;
    const auto kind = string(*v, p, "kind", true);
    if (!kind) return std::nullopt;
    if (*kind == "constant") known_keys(*v, p, {"kind", "value"});
    else if (*kind == "piecewise") known_keys(*v, p, {"kind", "breaks", "values"});
    else if (*kind == "sine_plus") known_keys(*v, p, {"kind", "amplitude", "omega", "phase"});
    else if (*kind == "integrable_tail") known_keys(*v, p, {"kind", "amplitude", "power"});
    try {
      return TimeProfile::from_json(*v);
    } catch (const std::exception& e) {
      fail(p, e.what());
      return std::nullopt;
    }
  }

  std::optional<Coefficient> coefficient(const json& j, const std::string& path, const char* key, bool required)
  {
    const json* v = get(j, path, key, required);
    if (!v) return std::nullopt;
    const std::string p = join(path, key);
    if (!object(*v, p)) return std::nullopt;
    known_keys(*v, p, {"fourier"});
    const json* f = get(*v, p, "fourier", true);
    if (!f) return std::nullopt;
    const std::string pf = p + ".fourier";
    if (!object(*f, pf)) return std::nullopt;
    known_keys(*f, pf, {"mean", "cos", "sin"});
    const auto mean = number(*f, pf, "mean", true);
    const auto cs = numbers(*f, pf, "cos", true);
    const auto sn = numbers(*f, pf, "sin", true);
    if (!mean || !cs || !sn) return std::nullopt;
    return Coefficient{*mean, *cs, *sn};
  }
};

inline std::string dir_of(const std::string& path)
{
  const auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string() : path.substr(0, pos + 1);
}

inline std::string slurp(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void parse_experiment_block(Checker& c, const json& e, RunConfig& cfg)
{
  const std::string p = "experiment";
  if (!c.object(e, p)) return;
  const auto kind_s = c.string(e, p, "kind", true);
  if (!kind_s) return;
  const auto kind = parse_experiment(*kind_s);
  if (!kind) {
    c.fail("experiment.kind", "unknown experiment '" + *kind_s + "'");
    return;
  }
  ExperimentConfig& x = cfg.experiment;
  x.kind = *kind;
  auto paths = [&](std::int64_t min) {
    if (auto v = c.integer(e, p, "paths", true)) {
      if (*v < min) c.fail("experiment.paths", "must be >= " + std::to_string(min));
      else x.paths = static_cast<std::size_t>(*v);
    }
  };
  switch (*kind) {
    case ExperimentKind::Simulate:
      c.known_keys(e, p, {"kind", "snapshots"});
      x.snapshots = c.boolean(e, p, "snapshots", false).value_or(false);
      break;
    case ExperimentKind::Ensemble:
    case ExperimentKind::Decay:
      c.known_keys(e, p, {"kind", "paths"});
      paths(2);
      break;
    case ExperimentKind::Lyapunov: {
      c.known_keys(e, p, {"kind", "paths", "V", "g", "condition_samples", "sample_norm_range",
                          "sample_time_range", "sample_seed"});
      paths(2);
      if (auto v = c.string(e, p, "V", true)) {
        try {
          x.v_family = parse_lyapunov(*v);
        } catch (const std::exception& ex) {
          c.fail("experiment.V", ex.what());
        }
      }
      if (auto g = c.profile(e, p, "g", true)) x.g = *g;
      if (auto v = c.integer(e, p, "condition_samples", true)) {
        if (*v < 1) c.fail("experiment.condition_samples", "must be >= 1");
        else x.condition_samples = static_cast<int>(*v);
      }
      if (auto r = c.numbers(e, p, "sample_norm_range", true)) {
        if (r->size() != 2 || !((*r)[0] > 0.0 && (*r)[1] >= (*r)[0])) {
          c.fail("experiment.sample_norm_range", "expected [lo, hi] with 0 < lo <= hi");
        } else {
          x.sample_norm_lo = (*r)[0];
          x.sample_norm_hi = (*r)[1];
        }
      }
      if (auto r = c.numbers(e, p, "sample_time_range", true)) {
        if (r->size() != 2 || !((*r)[1] >= (*r)[0])) {
          c.fail("experiment.sample_time_range", "expected [t_lo, t_hi] with t_lo <= t_hi");
        } else {
          x.sample_t_lo = (*r)[0];
          x.sample_t_hi = (*r)[1];
        }
      }
      if (auto v = c.u64(e, p, "sample_seed", true)) x.sample_seed = *v;
      break;
    }
    case ExperimentKind::Stability: {
      c.known_keys(e, p, {"kind", "paths", "deltas", "perturbation"});
      paths(1);
      if (auto d = c.numbers(e, p, "deltas", true)) {
        if (d->empty() || !std::all_of(d->begin(), d->end(), [](double v) { return v >= 0.0; })) {
          c.fail("experiment.deltas", "expected a nonempty list of nonnegative sizes");
        } else {
          x.deltas = *d;
        }
      }
      if (const json* pj = c.get(e, p, "perturbation", true); pj && c.object(*pj, "experiment.perturbation")) {
        const std::string pp = "experiment.perturbation";
        c.known_keys(*pj, pp, {"mode", "random_seed"});
        const bool has_mode = pj->contains("mode"), has_seed = pj->contains("random_seed");
        if (has_mode == has_seed) {
          c.fail(pp, "give exactly one of mode or random_seed");
        } else if (has_mode) {
          if (auto m = c.integer(*pj, pp, "mode", true)) {
            if (*m < 1 || *m > cfg.n / 2 - 1) c.fail(pp + ".mode", "must lie in [1, N/2 - 1]");
            else x.perturbation_mode = static_cast<int>(*m);
          }
        } else if (auto sd = c.u64(*pj, pp, "random_seed", true)) {
          x.perturbation_seed = *sd;
        }
      }
      break;
    }
    case ExperimentKind::Measure: {
      auto mode = c.string(e, p, "mode", true);
      if (mode && *mode == "ou_calibration") {
        c.known_keys(e, p, {"kind", "mode", "paths"});
        x.ou_calibration = true;
        paths(2);
      } else if (mode && *mode == "cesaro") {
        c.known_keys(e, p, {"kind", "mode", "paths", "start_times", "handoffs", "t_eval", "bootstrap",
                            "composition_checks"});
        paths(2);
        x.measure.paths = x.paths;
        if (auto v = c.numbers(e, p, "start_times", true)) {
          if (v->size() < 2) c.fail("experiment.start_times", "need at least two start times");
          x.measure.start_times = *v;
        }
        if (auto v = c.numbers(e, p, "handoffs", true)) {
          if (v->size() < 2) c.fail("experiment.handoffs", "need at least two handoff times");
          x.measure.handoffs = *v;
        }
        if (auto v = c.number(e, p, "t_eval", true)) x.measure.t_eval = *v;
        if (auto v = c.integer(e, p, "bootstrap", false)) {
          if (*v < 2) c.fail("experiment.bootstrap", "must be >= 2");
          else x.measure.bootstrap = static_cast<int>(*v);
        }
        if (auto v = c.integer(e, p, "composition_checks", false)) {
          if (*v < 0) c.fail("experiment.composition_checks", "must be >= 0");
          else x.measure.composition_checks = static_cast<std::size_t>(*v);
        }
        const auto& m = x.measure;
        for (double T : m.start_times) {
          for (double h : m.handoffs) {
            if (!(T > h)) c.fail("experiment.start_times", "every start time must exceed every handoff");
            if (!(h > 0.0)) c.fail("experiment.handoffs", "handoff times must be > 0");
          }
        }
        for (double h : m.handoffs) {
          if (!(m.t_eval >= -h)) c.fail("experiment.t_eval", "t_eval must not precede -n");
        }
      } else if (mode) {
        c.fail("experiment.mode", "expected \"cesaro\" or \"ou_calibration\"");
      }
      break;
    }
    case ExperimentKind::EstimateConstants:
    case ExperimentKind::BlowupScan: {
      c.known_keys(e, p, {"kind", "resolutions"});
      if (auto r = c.ints(e, p, "resolutions", true)) {
        if (r->size() < 2) c.fail("experiment.resolutions", "need at least two resolutions");
        for (int v : *r) {
          if (v < 8 || v % 2 != 0) c.fail("experiment.resolutions", "entries must be even and >= 8");
        }
        x.resolutions = *r;
      }
      break;
    }
  }
}

}  // namespace detail

/// Parses and validates a config document. base_dir resolves relative file
/// references (bank files). Throws ConfigInvalid listing every violation.
inline RunConfig parse_run_config(const nlohmann::json& root, const std::string& base_dir = "")
{
  using nlohmann::json;
  detail::Checker c;
  RunConfig cfg;
  cfg.source = root;
  if (!c.object(root, "")) throw ConfigInvalid(c.errors);
  c.known_keys(root, "", {"grid", "drift", "noise", "scheme", "monitor", "initial", "diagnostics", "experiment",
                          "estimates", "output_dir"});

  // grid
  if (const json* g = c.get(root, "", "grid", true); g && c.object(*g, "grid")) {
    c.known_keys(*g, "grid", {"n", "dealias"});
    if (auto n = c.integer(*g, "grid", "n", true)) {
      if (*n < 8 || *n % 2 != 0) c.fail("grid.n", "must be even and >= 8");
      else cfg.n = static_cast<int>(*n);
    }
    if (auto d = c.boolean(*g, "grid", "dealias", true)) cfg.drift.dealias = *d;
  }

  // drift
  if (const json* d = c.get(root, "", "drift", true); d && c.object(*d, "drift")) {
    c.known_keys(*d, "drift", {"epsilon", "theta", "damping", "convection", "nonlocal", "mollifier"});
    if (auto e = c.number(*d, "drift", "epsilon", true)) {
      if (!(*e >= 0.0)) c.fail("drift.epsilon", "must be >= 0");
      cfg.drift.epsilon = *e;
    }
    if (auto t = c.number(*d, "drift", "theta", true)) {
      if (!(*t > 0.0 && *t <= 1.0)) c.fail("drift.theta", "must lie in (0, 1]");
      cfg.drift.theta = *t;
    }
    if (auto p = c.profile(*d, "drift", "damping", true)) cfg.drift.damping = *p;
    if (auto b = c.boolean(*d, "drift", "convection", false)) cfg.drift.convection = *b;
    if (auto b = c.boolean(*d, "drift", "nonlocal", false)) cfg.drift.nonlocal = *b;
    if (auto m = c.integer(*d, "drift", "mollifier", false)) {
      if (*m < 1) c.fail("drift.mollifier", "must be >= 1");
      else cfg.drift.mollifier = static_cast<int>(*m);
    }
  }

  // noise
  if (const json* nz = c.get(root, "", "noise", true); nz && c.object(*nz, "noise")) {
    c.known_keys(*nz, "noise", {"bank", "q_channels", "h", "seed"});
    if (auto s = c.u64(*nz, "noise", "seed", true)) cfg.seed = *s;
    if (auto q = c.integer(*nz, "noise", "q_channels", false)) {
      if (*q < 0) c.fail("noise.q_channels", "must be >= 0");
      else cfg.q_channels = static_cast<int>(*q);
    }
    if (const json* b = c.get(*nz, "noise", "bank", true)) {
      if (b->is_null()) {
        cfg.bank_path.clear();
      } else if (!b->is_string()) {
        c.fail("noise.bank", "expected a file path or null");
      } else {
        std::string path = b->get<std::string>();
        if (!path.empty() && path.front() != '/') path = base_dir + path;
        cfg.bank_path = path;
        try {
          cfg.bank = load_bank(path);
          if (static_cast<int>(cfg.bank.size()) > cfg.q_channels) cfg.bank.resize(static_cast<std::size_t>(cfg.q_channels));
        } catch (const std::exception& e) {
          c.fail("noise.bank", e.what());
        }
      }
    }
    if (const json* h = c.get(*nz, "noise", "h", true); h && c.object(*h, "noise.h")) {
      const std::string p = "noise.h";
      if (auto fam = c.string(*h, p, "family", true)) {
        try {
          cfg.ito.family = ItoNoiseSpec::parse_family(*fam);
        } catch (const std::exception& e) {
          c.fail("noise.h.family", e.what());
        }
      }
      switch (cfg.ito.family) {
        case ItoNoiseSpec::Family::Zero: c.known_keys(*h, p, {"family"}); break;
        case ItoNoiseSpec::Family::SmoothingQuadratic:
          c.known_keys(*h, p, {"family", "channels", "q"});
          if (auto q = c.profile(*h, p, "q", true)) cfg.ito.q = *q;
          break;
        case ItoNoiseSpec::Family::BandProjection: {
          c.known_keys(*h, p, {"family", "channels", "c_psi", "theta_psi", "fixed_field"});
          if (const json* cp = c.get(*h, p, "c_psi", true)) {
            if (cp->is_number()) {
              cfg.ito.c_psi = cp->get<double>();
              if (!(cfg.ito.c_psi >= 0.0)) c.fail("noise.h.c_psi", "must be >= 0");
            } else if (cp->is_object()) {
              c.known_keys(*cp, "noise.h.c_psi", {"xi_hat_plus"});
              if (auto ex = c.number(*cp, "noise.h.c_psi", "xi_hat_plus", true)) {
                if (!(*ex >= 0.0)) c.fail("noise.h.c_psi.xi_hat_plus", "must be >= 0");
                cfg.c_psi_extra = *ex;
              }
            } else {
              c.fail("noise.h.c_psi", "expected a number or {\"xi_hat_plus\": x}");
            }
          }
          if (const json* tp = c.get(*h, p, "theta_psi", true)) {
            if (tp->is_number()) {
              cfg.ito.theta_psi = tp->get<double>();
              if (!(cfg.ito.theta_psi >= 0.0)) c.fail("noise.h.theta_psi", "must be >= 0");
            } else if (tp->is_string() && tp->get<std::string>() == "theta_hat") {
              cfg.theta_psi_auto = true;
            } else {
              c.fail("noise.h.theta_psi", "expected a number or \"theta_hat\"");
            }
          }
          if (auto f = c.coefficient(*h, p, "fixed_field", false)) cfg.ito.fixed_field = *f;
          break;
        }
      }
      if (auto k = c.integer(*h, p, "channels", false)) {
        if (*k < 0) c.fail("noise.h.channels", "must be >= 0");
        else cfg.ito.channels = static_cast<int>(*k);
      } else if (cfg.n > 0 && cfg.ito.family != ItoNoiseSpec::Family::Zero) {
        cfg.ito.channels = default_h_channels(TorusGrid(cfg.n));
      }
      if (cfg.n > 0 && cfg.ito.channels > cfg.n / 2) c.fail("noise.h.channels", "must not exceed N/2");
    }
  }

  // scheme
  if (const json* s = c.get(root, "", "scheme", true); s && c.object(*s, "scheme")) {
    c.known_keys(*s, "scheme", {"scheme", "dt", "t0", "t_end", "record_every"});
    if (auto n = c.string(*s, "scheme", "scheme", true)) {
      try {
        cfg.scheme.scheme = parse_scheme(*n);
      } catch (const std::exception& e) {
        c.fail("scheme.scheme", e.what());
      }
    }
    const auto dt = c.number(*s, "scheme", "dt", true);
    const auto t0 = c.number(*s, "scheme", "t0", true);
    const auto t1 = c.number(*s, "scheme", "t_end", true);
    const auto re = c.integer(*s, "scheme", "record_every", true);
    if (dt) {
      if (!(*dt > 0.0)) c.fail("scheme.dt", "must be > 0");
      cfg.scheme.dt = *dt;
    }
    if (t0) cfg.scheme.t0 = *t0;
    if (t1) cfg.scheme.t_end = *t1;
    if (re) {
      if (*re < 1) c.fail("scheme.record_every", "must be >= 1");
      else cfg.scheme.record_every = static_cast<int>(*re);
    }
    if (dt && t0 && t1) {
      if (!(*t1 >= *t0)) c.fail("scheme.t_end", "must be >= t0");
      if (*dt > 0.0) {
        for (auto [name, t] : {std::pair{"scheme.t0", *t0}, std::pair{"scheme.t_end", *t1}}) {
          try {
            (void)SchemeConfig::lattice_index(t, *dt);
          } catch (const std::exception&) {
            c.fail(name, "must be an integer multiple of dt");
          }
        }
      }
    }
  }

  // monitor (numerical plumbing: defaults allowed)
  if (const json* m = c.get(root, "", "monitor", false); m && c.object(*m, "monitor")) {
    const std::string p = "monitor";
    c.known_keys(*m, p, {"w1inf_threshold", "slope_integral_threshold", "cfl", "adaptive_halving", "max_halvings"});
    if (auto v = c.number(*m, p, "w1inf_threshold", false)) cfg.monitor.w1inf_threshold = *v;
    if (auto v = c.number(*m, p, "slope_integral_threshold", false)) cfg.monitor.slope_integral_threshold = *v;
    if (auto v = c.number(*m, p, "cfl", false)) cfg.monitor.cfl = *v;
    if (auto v = c.boolean(*m, p, "adaptive_halving", false)) cfg.monitor.adaptive_halving = *v;
    if (auto v = c.integer(*m, p, "max_halvings", false)) cfg.monitor.max_halvings = static_cast<int>(*v);
    try {
      cfg.monitor.validate();
    } catch (const std::exception& e) {
      c.fail("monitor", e.what());
    }
  }

  // initial data
  if (const json* in = c.get(root, "", "initial", true); in && c.object(*in, "initial")) {
    if (auto coef = c.coefficient(root, "", "initial", true)) {
      cfg.initial = *coef;
      if (cfg.n > 0) {
        const int top = static_cast<int>(std::max(coef->cos_terms.size(), coef->sin_terms.size()));
        if (top > cfg.n / 2 - 1) c.fail("initial.fourier", "modes above N/2 - 1 are not representable");
      }
    }
  }

  // experiment first, since sigma depends on the kind
  if (const json* e = c.get(root, "", "experiment", true)) detail::parse_experiment_block(c, *e, cfg);

  if (const json* es = c.get(root, "", "estimates", false); es && c.object(*es, "estimates")) {
    c.known_keys(*es, "estimates", {"xi_samples", "theta_samples", "seed"});
    if (auto v = c.integer(*es, "estimates", "xi_samples", false)) {
      if (*v < 1) c.fail("estimates.xi_samples", "must be >= 1");
      else cfg.estimates.xi_samples = static_cast<int>(*v);
    }
    if (auto v = c.integer(*es, "estimates", "theta_samples", false)) {
      if (*v < 1) c.fail("estimates.theta_samples", "must be >= 1");
      else cfg.estimates.theta_samples = static_cast<int>(*v);
    }
    if (auto v = c.u64(*es, "estimates", "seed", false)) cfg.estimates.seed = *v;
  }

  if (auto o = c.string(root, "", "output_dir", false)) cfg.output_dir = *o;

  // regularity thresholds
  cfg.gamma0 = gamma0(cfg.bank);
  cfg.regularity_offset = regularity_offset(cfg.gamma0, cfg.drift.epsilon, cfg.drift.theta);
  const bool needs_sigma =
      cfg.experiment.kind == ExperimentKind::Stability ||
      (cfg.experiment.kind == ExperimentKind::Measure && !cfg.experiment.ou_calibration);
  if (const json* d = c.get(root, "", "diagnostics", true); d && c.object(*d, "diagnostics")) {
    c.known_keys(*d, "diagnostics", {"s", "sigma"});
    if (auto s = c.number(*d, "diagnostics", "s", true)) {
      cfg.s = *s;
      if (!(*s > cfg.s_threshold())) {
        std::ostringstream m;
        m << "must exceed " << cfg.s_threshold() << " = 3/2 + max{2 gamma0, 1, 2 theta 1[eps>0]} with gamma0 = "
          << cfg.gamma0;
        c.fail("diagnostics.s", m.str());
      }
    }
    if (auto sg = c.number(*d, "diagnostics", "sigma", needs_sigma)) {
      cfg.sigma = *sg;
      const double hi = cfg.s - cfg.regularity_offset;
      if (!(*sg > 1.5 && *sg < hi)) {
        std::ostringstream m;
        m << "must lie in (3/2, " << hi << ") = (3/2, s - max{2 gamma0, 1, 2 theta 1[eps>0]})";
        c.fail("diagnostics.sigma", m.str());
      }
    }
  }

  // cross-block checks
  if (cfg.scheme.scheme == Scheme::RK4 && (!cfg.bank.empty() || cfg.ito.active())) {
    c.fail("scheme.scheme", "RK4 is deterministic; the configured noise is nonzero");
  }
  if (cfg.experiment.kind == ExperimentKind::Decay) {
    if (!(cfg.drift.epsilon > 0.0 && cfg.drift.theta > 0.5)) {
      c.fail("drift", "decay requires epsilon > 0 and theta > 1/2");
    }
    const bool ok = !cfg.ito.active() || (cfg.ito.family == ItoNoiseSpec::Family::BandProjection &&
                                          !cfg.theta_psi_auto && cfg.ito.theta_psi == 0.0 && !cfg.ito.fixed_field);
    if (!ok) c.fail("noise.h", "decay requires zero noise or band_projection with constant Psi");
  }
  if (cfg.experiment.ou_calibration) {
    if (cfg.ito.family != ItoNoiseSpec::Family::BandProjection || !cfg.ito.fixed_field) {
      c.fail("noise.h", "ou_calibration requires band_projection with a fixed_field");
    }
    if (cfg.drift.convection || cfg.drift.nonlocal || cfg.drift.epsilon != 0.0) {
      c.fail("drift", "ou_calibration requires a linear system: convection and nonlocal off, epsilon 0");
    }
    if (!cfg.drift.damping.is_autonomous()) c.fail("drift.damping", "ou_calibration requires constant damping");
    if (!cfg.bank.empty()) c.fail("noise.bank", "ou_calibration requires an empty Q bank");
  }

  if (!c.errors.empty()) throw ConfigInvalid(c.errors);

  std::string canon = root.dump();
  if (!cfg.bank_path.empty()) canon += detail::slurp(cfg.bank_path);
  cfg.hash = fnv1a64(canon);
  return cfg;
}

inline RunConfig load_run_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw ConfigInvalid({{"<file>", "cannot open " + path}});
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigInvalid({{"<file>", std::string("malformed JSON: ") + e.what()}});
  }
  return parse_run_config(j, detail::dir_of(path));
}

// ---------------------------------------------------------------------------
// Working constants and model assembly

struct EstimatedConstants {
  double xi_h1 = 0.0;     // Xi_hat at eta = 1
  double xi_hs = 0.0;     // Xi_hat at eta = s
  double theta_hat = 0.0; // Theta_hat at s
  double c0 = 0.0;        // linear-growth constant of the resolved h family
};

inline nlohmann::json to_json(const EstimatedConstants& c)
{
  return {{"xi_hat_h1", c.xi_h1}, {"xi_hat_hs", c.xi_hs}, {"theta_hat", c.theta_hat}, {"c0_hat", c.c0}};
}

/// Estimates the working constants on the configured grid and resolves the
/// automatic Psi parameters in place.
inline EstimatedConstants resolve_constants(RunConfig& cfg)
{
  const TorusGrid g = cfg.grid();
  EstimatedConstants k;
  k.xi_h1 = estimate_Xi(cfg.bank, g, 1.0, cfg.estimates.xi_samples, cfg.estimates.seed);
  k.xi_hs = estimate_Xi(cfg.bank, g, std::max(1.0, cfg.s), cfg.estimates.xi_samples, cfg.estimates.seed);
  k.theta_hat = estimate_Theta(g, cfg.s, cfg.estimates.theta_samples, cfg.estimates.seed);
  if (cfg.c_psi_extra) cfg.ito.c_psi = k.xi_hs + *cfg.c_psi_extra;
  if (cfg.theta_psi_auto) cfg.ito.theta_psi = k.theta_hat;
  const bool linear = !cfg.ito.active() || (cfg.ito.family == ItoNoiseSpec::Family::BandProjection &&
                                            cfg.ito.theta_psi == 0.0 && !cfg.ito.fixed_field);
  k.c0 = linear ? linear_growth_c0(cfg.ito) : std::nan("");
  return k;
}

inline Model build_model(const RunConfig& cfg)
{
  Model m;
  m.drift = cfg.drift;
  m.q_ops = discretize(cfg.bank, cfg.grid());
  m.ito = cfg.ito;
  return m;
}

inline GridFunction build_initial(const RunConfig& cfg)
{
  const Coefficient& c = cfg.initial;
  return GridFunction::sample(cfg.grid(), [&c](double x) { return c(x); });
}

inline PathSetup build_setup(const RunConfig& cfg)
{
  return PathSetup{build_model(cfg), cfg.scheme, cfg.monitor, build_initial(cfg), cfg.s, cfg.seed};
}

}  // namespace schlab
