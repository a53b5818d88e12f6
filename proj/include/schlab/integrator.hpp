#pragma once

// Time stepping for the Ito-form equation, blow-up monitors and trajectory
// recording (CSV rows plus an optional SCHG snapshot stream).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "schlab/dynamics.hpp"
#include "schlab/noise.hpp"
#include "schlab/psdo.hpp"
#include "schlab/spectral.hpp"

namespace schlab {

// RK4 is deterministic only; it backs the conservation check where a
// first-order scheme would drown the invariant in O(dt) error.
enum class Scheme { EulerMaruyama, StratonovichHeun, ExponentialEM, RK4 };

inline std::string scheme_name(Scheme s)
{
  switch (s) {
    case Scheme::EulerMaruyama: return "EulerMaruyama";
    case Scheme::StratonovichHeun: return "StratonovichHeun";
    case Scheme::ExponentialEM: return "ExponentialEM";
    case Scheme::RK4: return "RK4";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s)
{
  for (Scheme c : {Scheme::EulerMaruyama, Scheme::StratonovichHeun, Scheme::ExponentialEM, Scheme::RK4}) {
    if (scheme_name(c) == s) return c;
  }
  throw std::invalid_argument("scheme: unknown scheme '" + s + "'");
}

inline constexpr int kHeunCorrections = 3;

struct SchemeConfig {
  Scheme scheme = Scheme::EulerMaruyama;
  double dt = 1e-3;
  double t0 = 0.0;
  double t_end = 1.0;
  int record_every = 1;

  void validate() const
  {
    if (!(dt > 0.0)) throw std::invalid_argument("scheme: dt must be > 0");
    if (!(t_end > t0)) throw std::invalid_argument("scheme: t_end must exceed t0");
    if (record_every < 1) throw std::invalid_argument("scheme: record_every must be >= 1");
  }

  /// Times live on the lattice t = j*dt so that increments keyed by j line up
  /// across runs with different start times.
  [[nodiscard]] static std::int64_t lattice_index(double t, double dt)
  {
    const double r = t / dt;
    const auto j = static_cast<std::int64_t>(std::llround(r));
    if (std::abs(r - static_cast<double>(j)) > 1e-6) {
      throw std::invalid_argument("scheme: time " + std::to_string(t) + " is not a multiple of dt");
    }
    return j;
  }
};

/// Everything the right-hand side needs; built once per run.
struct Model {
  DriftConfig drift;
  std::vector<DiscreteNoiseOperator> q_ops;
  ItoNoiseSpec ito;

  [[nodiscard]] bool has_noise() const { return !q_ops.empty() || ito.active(); }
  [[nodiscard]] int h_channels() const { return ito.active() ? ito.channels : 0; }
};

struct NoiseDrivers {
  BrownianDriver q;
  BrownianDriver h;

  static NoiseDrivers make(const CounterRng& path_rng, const Model& m, double dt, int aggregation = 1)
  {
    return {BrownianDriver(path_rng.split(1), static_cast<int>(m.q_ops.size()), dt, aggregation),
            BrownianDriver(path_rng.split(2), m.h_channels(), dt, aggregation)};
  }
};

namespace detail {

inline std::vector<Complex> exponential_factor(const DriftConfig& d, const TorusGrid& g, double t, double dt)
{
  // Autonomous profiles use dt * lambda so the factor does not depend on t.
  const double lam = d.damping.is_autonomous() ? dt * d.damping(t) : d.damping.integral(t, t + dt);
  std::vector<Complex> f(static_cast<std::size_t>(g.spectrum_size()));
  for (std::size_t k = 0; k < f.size(); ++k) {
    const double kk = static_cast<double>(k);
    const double diff = (d.epsilon > 0.0 && k > 0) ? d.epsilon * std::pow(kk, 2.0 * d.theta) : 0.0;
    f[k] = std::exp(-dt * diff - lam);
  }
  return f;
}

inline GridFunction apply_factor(std::span<const Complex> f, const GridFunction& u)
{
  std::vector<Complex> spec(u.spectrum().begin(), u.spectrum().end());
  for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= f[k];
  return GridFunction::from_spectrum(u.grid(), std::move(spec));
}

}  // namespace detail

/// One step from t to t+dt with the given Q- and h-increments.
inline GridFunction step(const Model& m, Scheme scheme, double t, double dt, const GridFunction& u,
                         std::span<const double> dwq, std::span<const double> dwh)
{
  if (dwq.size() != m.q_ops.size()) throw std::invalid_argument("step: Q increment count mismatch");
  const GridFunction ito = m.ito.active() ? ito_noise_apply(m.ito, t, u, dwh) : GridFunction::zero(u.grid());

  switch (scheme) {
    case Scheme::EulerMaruyama: {
      const GridFunction f = deterministic_drift(m.drift, t, u) + stratonovich_correction(m.q_ops, u);
      return u + dt * f + stratonovich_noise_apply(m.q_ops, u, dwq) + ito;
    }
    case Scheme::ExponentialEM: {
      const GridFunction f = nonlinear_drift(m.drift, u) + stratonovich_correction(m.q_ops, u);
      const auto e = detail::exponential_factor(m.drift, u.grid(), t, dt);
      return detail::apply_factor(e, u + dt * f + stratonovich_noise_apply(m.q_ops, u, dwq) + ito);
    }
    case Scheme::StratonovichHeun: {
      // Midpoint rule on the Q part, iterated from an Euler predictor.
      const GridFunction base = u + dt * deterministic_drift(m.drift, t, u) + ito;
      GridFunction v = base + stratonovich_noise_apply(m.q_ops, u, dwq);
      for (int i = 0; i < kHeunCorrections && !m.q_ops.empty(); ++i) {
        v = base + stratonovich_noise_apply(m.q_ops, 0.5 * (u + v), dwq);
      }
      return v;
    }
    case Scheme::RK4: {
      if (m.has_noise()) throw std::invalid_argument("step: RK4 is deterministic; disable all noise");
      const double h = 0.5 * dt;
      const GridFunction k1 = deterministic_drift(m.drift, t, u);
      const GridFunction k2 = deterministic_drift(m.drift, t + h, u + h * k1);
      const GridFunction k3 = deterministic_drift(m.drift, t + h, u + h * k2);
      const GridFunction k4 = deterministic_drift(m.drift, t + dt, u + dt * k3);
      return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  throw std::logic_error("step: unknown scheme");
}

// ---------------------------------------------------------------------------
// Monitors

struct MonitorConfig {
  double w1inf_threshold = 1e3;
  double slope_integral_threshold = 1e3;
  double cfl = 0.5;  // abort (or halve) when dt * max|u_x| exceeds this
  bool adaptive_halving = false;
  int max_halvings = 12;

  void validate() const
  {
    if (!(w1inf_threshold > 0.0)) throw std::invalid_argument("monitor: w1inf_threshold must be > 0");
    if (!(slope_integral_threshold > 0.0)) {
      throw std::invalid_argument("monitor: slope_integral_threshold must be > 0");
    }
    if (!(cfl > 0.0)) throw std::invalid_argument("monitor: cfl must be > 0");
    if (max_halvings < 0) throw std::invalid_argument("monitor: max_halvings must be >= 0");
  }
};

/// kind: 1 = W^{1,inf} threshold, 2 = slope integral, 3 = both on the same step.
struct BlowupDetection {
  int kind = 0;
  double t_detect = 0.0;
};

class BlowupMonitor {
 public:
  explicit BlowupMonitor(MonitorConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  [[nodiscard]] const MonitorConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] double slope_integral() const noexcept { return integral_; }

  /// Adds dt * max|u_x| to the running integral, then tests both criteria.
  std::optional<BlowupDetection> detect(const GridFunction& u, double t, double dt)
  {
    const double slope = max_abs(derivative(u));
    integral_ += dt * slope;
    int kind = 0;
    if (max_abs(u) + slope >= cfg_.w1inf_threshold) kind |= 1;
    if (integral_ >= cfg_.slope_integral_threshold) kind |= 2;
    if (kind == 0) return std::nullopt;
    return BlowupDetection{kind, t};
  }

 private:
  MonitorConfig cfg_;
  double integral_ = 0.0;
};

// ---------------------------------------------------------------------------
// Trajectories

struct DiagnosticRow {
  double t = 0.0;
  double l2_sq = 0.0;
  double h1_sq = 0.0;
  double hs_sq = 0.0;
  double w1inf = 0.0;
  double min_ux = 0.0;
  double max_u = 0.0;
  double slope_int = 0.0;
  int blowup_kind = 0;
};

inline DiagnosticRow diagnose(double t, const GridFunction& u, double s, double slope_int, int kind = 0)
{
  const GridFunction ux = derivative(u);
  DiagnosticRow r;
  r.t = t;
  r.l2_sq = sobolev_norm_sq(0.0, u);
  r.h1_sq = sobolev_norm_sq(1.0, u);
  r.hs_sq = sobolev_norm_sq(s, u);
  r.w1inf = max_abs(u) + max_abs(ux);
  r.min_ux = *std::min_element(ux.values().begin(), ux.values().end());
  r.max_u = *std::max_element(u.values().begin(), u.values().end());
  r.slope_int = slope_int;
  r.blowup_kind = kind;
  return r;
}

enum class Outcome { Completed, BlowUp, NumericalFailure };

inline std::string outcome_name(Outcome o)
{
  switch (o) {
    case Outcome::Completed: return "completed";
    case Outcome::BlowUp: return "blowup";
    case Outcome::NumericalFailure: return "numerical_failure";
  }
  return "?";
}

struct Trajectory {
  std::vector<DiagnosticRow> rows;
  std::optional<BlowupDetection> blowup;
  Outcome outcome = Outcome::Completed;
  std::string failure;  // set for NumericalFailure
  GridFunction final_state;
  double t_final = 0.0;
  std::int64_t steps = 0;
  int halvings = 0;  // sub-steps taken by adaptive halving
  std::vector<GridFunction> snapshots;
};

struct RunOptions {
  double diag_s = 2.0;
  int aggregation = 1;        // driver fine steps per step (same path at coarser dt)
  bool keep_snapshots = false;
  bool record = true;         // false: only the final state matters
  std::function<void(const DiagnosticRow&, const GridFunction&)> on_record;
};

namespace detail {

struct StepFailure {
  std::string reason;
};

inline bool all_finite(const GridFunction& u)
{
  for (double v : u.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

class Stepper {
 public:
  Stepper(const Model& m, Scheme s, const NoiseDrivers& d, const MonitorConfig& mc, double diag_s)
      : m_(m), scheme_(s), d_(d), mc_(mc), diag_s_(diag_s)
  {
  }

  int halvings = 0;

  /// Advances u over [t, t+dt]; node keys the bridge refinement tree.
  std::variant<GridFunction, StepFailure> advance(const GridFunction& u, double t, double dt, std::int64_t step,
                                                  std::span<const double> dwq, std::span<const double> dwh,
                                                  int depth, std::uint64_t node)
  {
    const double c = dt * max_abs(derivative(u));
    if (c > mc_.cfl) {
      if (!mc_.adaptive_halving || depth >= mc_.max_halvings) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "CFL guard: dt*max|u_x| = %.6g > %.6g at t = %.17g", c, mc_.cfl, t);
        return StepFailure{buf};
      }
      ++halvings;
      std::vector<double> q1(dwq.size()), q2(dwq.size()), h1(dwh.size()), h2(dwh.size());
      for (std::size_t k = 0; k < dwq.size(); ++k) {
        std::tie(q1[k], q2[k]) = d_.q.bridge_split(static_cast<int>(k), step, node, dwq[k], dt);
      }
      for (std::size_t k = 0; k < dwh.size(); ++k) {
        std::tie(h1[k], h2[k]) = d_.h.bridge_split(static_cast<int>(k), step, node, dwh[k], dt);
      }
      auto a = advance(u, t, 0.5 * dt, step, q1, h1, depth + 1, 2 * node);
      if (std::holds_alternative<StepFailure>(a)) return a;
      return advance(std::get<GridFunction>(a), t + 0.5 * dt, 0.5 * dt, step, q2, h2, depth + 1, 2 * node + 1);
    }
    try {
      GridFunction v = schlab::step(m_, scheme_, t, dt, u, dwq, dwh);
      // Finite values whose recorded norms overflow count as failure too.
      if (!all_finite(v) || !std::isfinite(sobolev_norm_sq(std::max(1.0, diag_s_), v))) {
        return StepFailure{"non-finite state after step at t = " + std::to_string(t)};
      }
      return v;
    } catch (const NonFiniteError& e) {
      return StepFailure{std::string("non-finite state: ") + e.what()};
    }
  }

 private:
  const Model& m_;
  Scheme scheme_;
  const NoiseDrivers& d_;
  const MonitorConfig& mc_;
  double diag_s_;
};

}  // namespace detail

/// Steps from t0 to t_end, stopping at blow-up detection or numerical failure.
/// Deterministic given path_rng.
inline Trajectory run(const Model& m, const SchemeConfig& sc, const MonitorConfig& mc, const CounterRng& path_rng,
                      const GridFunction& u0, const RunOptions& opt = {})
{
  sc.validate();
  m.drift.validate();
  m.ito.validate();
  if (sc.scheme == Scheme::RK4 && m.has_noise()) {
    throw std::invalid_argument("run: RK4 is deterministic; disable all noise");
  }
  if (opt.aggregation < 1) throw std::invalid_argument("run: aggregation must be >= 1");
  const std::int64_t j0 = SchemeConfig::lattice_index(sc.t0, sc.dt);
  const std::int64_t j1 = SchemeConfig::lattice_index(sc.t_end, sc.dt);

  const NoiseDrivers drivers = NoiseDrivers::make(path_rng, m, sc.dt, opt.aggregation);
  BlowupMonitor monitor(mc);
  detail::Stepper stepper(m, sc.scheme, drivers, mc, opt.diag_s);

  Trajectory tr{{}, std::nullopt, Outcome::Completed, {}, u0, 0.0, 0, 0, {}};
  auto record = [&](double t, const GridFunction& u, int kind) {
    if (!opt.record && !opt.on_record) return;
    const DiagnosticRow row = diagnose(t, u, opt.diag_s, monitor.slope_integral(), kind);
    if (opt.record) tr.rows.push_back(row);
    if (opt.keep_snapshots) tr.snapshots.push_back(u);
    if (opt.on_record) opt.on_record(row, u);
  };

  if (!detail::all_finite(u0)) throw std::invalid_argument("run: initial state is not finite");
  GridFunction u = u0;
  record(static_cast<double>(j0) * sc.dt, u, 0);
  for (std::int64_t j = j0; j < j1; ++j) {
    const double t = static_cast<double>(j) * sc.dt;
    const double tn = static_cast<double>(j + 1) * sc.dt;
    const auto dwq = drivers.q.sample_increments(j);
    const auto dwh = drivers.h.sample_increments(j);
    auto r = stepper.advance(u, t, sc.dt, j, dwq, dwh, 0, 1);
    tr.halvings = stepper.halvings;
    if (auto* f = std::get_if<detail::StepFailure>(&r)) {
      tr.outcome = Outcome::NumericalFailure;
      tr.failure = f->reason;
      tr.t_final = t;
      tr.final_state = u;
      return tr;
    }
    u = std::move(std::get<GridFunction>(r));
    ++tr.steps;
    if (auto det = monitor.detect(u, tn, sc.dt)) {
      tr.blowup = det;
      tr.outcome = Outcome::BlowUp;
      tr.t_final = tn;
      record(tn, u, det->kind);
      tr.final_state = u;
      return tr;
    }
    if ((j + 1 - j0) % sc.record_every == 0 || j + 1 == j1) record(tn, u, 0);
  }
  tr.t_final = static_cast<double>(j1) * sc.dt;
  tr.final_state = u;
  return tr;
}

// ---------------------------------------------------------------------------
// Output

inline constexpr const char* kTrajectoryHeader = "t,l2_sq,h1_sq,hs_sq,w1inf,min_ux,max_u,slope_int,blowup_kind";

inline std::string format_double(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_trajectory_csv(std::ostream& os, const std::vector<DiagnosticRow>& rows)
{
  os << kTrajectoryHeader << '\n';
  for (const auto& r : rows) {
    os << format_double(r.t) << ',' << format_double(r.l2_sq) << ',' << format_double(r.h1_sq) << ','
       << format_double(r.hs_sq) << ',' << format_double(r.w1inf) << ',' << format_double(r.min_ux) << ','
       << format_double(r.max_u) << ',' << format_double(r.slope_int) << ',' << r.blowup_kind << '\n';
  }
}

}  // namespace schlab
