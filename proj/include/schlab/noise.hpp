#pragma once

// Brownian drivers, the Stratonovich channel bank and the nonlinear Ito
// channels h_k(t,u), plus the Lyapunov-condition check for the latter.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "schlab/dynamics.hpp"
#include "schlab/psdo.hpp"
#include "schlab/rng.hpp"
#include "schlab/spectral.hpp"

namespace schlab {

/// Counter-based Wiener increments. A step of size dt is the sum of
/// `aggregation` fine increments of size dt/aggregation, each keyed by
/// (seed, channel, absolute fine index), so drivers with different
/// aggregation factors sample the same Brownian path.
class BrownianDriver {
 public:
  BrownianDriver(CounterRng rng, int channels, double dt, int aggregation = 1)
      : rng_(rng), channels_(channels), dt_(dt), aggregation_(aggregation)
  {
    if (channels < 0) throw std::invalid_argument("BrownianDriver: negative channel count");
    if (!(dt > 0.0)) throw std::invalid_argument("BrownianDriver: dt must be > 0");
    if (aggregation < 1) throw std::invalid_argument("BrownianDriver: aggregation must be >= 1");
  }

  [[nodiscard]] int channels() const noexcept { return channels_; }
  [[nodiscard]] double dt() const noexcept { return dt_; }
  [[nodiscard]] const CounterRng& rng() const noexcept { return rng_; }

  [[nodiscard]] double fine_increment(int channel, std::int64_t fine_index) const
  {
    const double fine_dt = dt_ / aggregation_;
    return std::sqrt(fine_dt) *
           rng_.normal(static_cast<std::uint64_t>(channel), static_cast<std::uint64_t>(fine_index));
  }

  [[nodiscard]] double increment(int channel, std::int64_t step) const
  {
    double s = 0.0;
    for (int i = 0; i < aggregation_; ++i) {
      s += fine_increment(channel, step * aggregation_ + i);
    }
    return s;
  }

  /// Increments of every channel over [step*dt, (step+1)*dt].
  [[nodiscard]] std::vector<double> sample_increments(std::int64_t step) const
  {
    std::vector<double> w(static_cast<std::size_t>(channels_));
    for (int c = 0; c < channels_; ++c) w[static_cast<std::size_t>(c)] = increment(c, step);
    return w;
  }

  /// Brownian bridge split of an increment `total` over a span of length h
  /// into two halves; `key` identifies the sub-interval deterministically.
  [[nodiscard]] std::pair<double, double> bridge_split(int channel, std::int64_t step,
                                                       std::uint64_t key, double total,
                                                       double h) const
  {
    const double z = rng_.normal(static_cast<std::uint64_t>(channel) | (1ULL << 62),
                                 static_cast<std::uint64_t>(step), key);
    const double first = 0.5 * total + 0.5 * std::sqrt(h) * z;
    return {first, total - first};
  }

 private:
  CounterRng rng_;
  int channels_;
  double dt_;
  int aggregation_;
};

// ---------------------------------------------------------------------------
// Stratonovich bank

/// (1/2) sum_k Q_k(Q_k u).
inline GridFunction stratonovich_correction(const std::vector<DiscreteNoiseOperator>& ops,
                                            const GridFunction& u)
{
  GridFunction acc = GridFunction::zero(u.grid());
  for (const auto& q : ops) acc = acc + 0.5 * q.apply(q.apply(u));
  return acc;
}

/// sum_k Q_k u * dW_k.
inline GridFunction stratonovich_noise_apply(const std::vector<DiscreteNoiseOperator>& ops,
                                             const GridFunction& u, std::span<const double> dw)
{
  GridFunction acc = GridFunction::zero(u.grid());
  for (std::size_t k = 0; k < ops.size(); ++k) acc = acc + dw[k] * ops[k].apply(u);
  return acc;
}

// ---------------------------------------------------------------------------
// Ito channels

struct ItoNoiseSpec {
  enum class Family { Zero, SmoothingQuadratic, BandProjection };
  Family family = Family::Zero;
  int channels = 0;  // K_h

  // smoothing_quadratic: h_k = 2^{-k} q(t) R[u^2 + u_x^2], R = (1+k^2)^{-1/2}.
  TimeProfile q = TimeProfile::constant(1.0);

  // band_projection: h_k = Psi(||u||_{W^{1,inf}}) * (modes |xi| = k of u),
  // Psi(x) = sqrt(c_psi + 4 theta_psi x).
  double c_psi = 1.0;
  double theta_psi = 0.0;
  // Test hook: project this fixed field instead of u (additive noise).
  std::optional<Coefficient> fixed_field;

  [[nodiscard]] double psi(double w1inf) const { return std::sqrt(c_psi + 4.0 * theta_psi * w1inf); }

  static std::string family_name(Family f)
  {
    switch (f) {
      case Family::Zero: return "zero";
      case Family::SmoothingQuadratic: return "smoothing_quadratic";
      case Family::BandProjection: return "band_projection";
    }
    return "?";
  }

  static Family parse_family(const std::string& s)
  {
    if (s == "zero") return Family::Zero;
    if (s == "smoothing_quadratic") return Family::SmoothingQuadratic;
    if (s == "band_projection") return Family::BandProjection;
    throw std::invalid_argument("noise: unknown h family '" + s + "'");
  }

  void validate() const
  {
    if (channels < 0) throw std::invalid_argument("noise: h channel count must be >= 0");
    if (family == Family::BandProjection) {
      if (!(c_psi >= 0.0)) throw std::invalid_argument("noise: c_psi must be >= 0");
      if (!(theta_psi >= 0.0)) throw std::invalid_argument("noise: theta_psi must be >= 0");
    }
  }

  [[nodiscard]] bool active() const noexcept { return family != Family::Zero && channels > 0; }
};

inline int default_h_channels(const TorusGrid& g) { return std::min(g.nyquist(), 32); }

namespace detail {

inline GridFunction band_source(const ItoNoiseSpec& spec, const GridFunction& u)
{
  if (!spec.fixed_field) return u;
  const Coefficient& c = *spec.fixed_field;
  return GridFunction::sample(u.grid(), [&c](double x) { return c(x); });
}

inline GridFunction smoothing_base(const GridFunction& u)
{
  const GridFunction ux = derivative(u);
  const GridFunction w = product(u, u, true) + product(ux, ux, true);
  return apply_multiplier(symbols::bessel_potential(u.grid(), -1.0), w);
}

}  // namespace detail

/// h_1..h_K as fields (diagnostics and the Lyapunov check).
inline std::vector<GridFunction> ito_channels(const ItoNoiseSpec& spec, double t,
                                              const GridFunction& u)
{
  std::vector<GridFunction> hs;
  if (!spec.active()) return hs;
  const TorusGrid& g = u.grid();
  if (spec.family == ItoNoiseSpec::Family::SmoothingQuadratic) {
    const GridFunction base = detail::smoothing_base(u);
    const double qt = spec.q(t);
    for (int k = 1; k <= spec.channels; ++k) hs.push_back((std::ldexp(1.0, -k) * qt) * base);
    return hs;
  }
  const GridFunction src = detail::band_source(spec, u);
  const double ps = spec.psi(lipschitz_norm(src));
  for (int k = 1; k <= spec.channels; ++k) {
    std::vector<Complex> spec_k(static_cast<std::size_t>(g.spectrum_size()));
    if (k <= g.nyquist()) spec_k[static_cast<std::size_t>(k)] = ps * src.spectrum()[static_cast<std::size_t>(k)];
    hs.push_back(GridFunction::from_spectrum(g, std::move(spec_k)));
  }
  return hs;
}

/// sum_k h_k(t,u) dW~_k, evaluated with a single transform per family.
inline GridFunction ito_noise_apply(const ItoNoiseSpec& spec, double t, const GridFunction& u,
                                    std::span<const double> dw)
{
  const TorusGrid& g = u.grid();
  if (!spec.active()) return GridFunction::zero(g);
  if (static_cast<int>(dw.size()) != spec.channels) {
    throw std::invalid_argument("ito_noise_apply: increment count does not match channels");
  }
  if (spec.family == ItoNoiseSpec::Family::SmoothingQuadratic) {
    double s = 0.0;
    for (int k = 1; k <= spec.channels; ++k) s += std::ldexp(1.0, -k) * dw[static_cast<std::size_t>(k - 1)];
    return (s * spec.q(t)) * detail::smoothing_base(u);
  }
  const GridFunction src = detail::band_source(spec, u);
  const double ps = spec.psi(lipschitz_norm(src));
  std::vector<Complex> out(static_cast<std::size_t>(g.spectrum_size()));
  for (int k = 1; k <= std::min(spec.channels, g.nyquist()); ++k) {
    const auto i = static_cast<std::size_t>(k);
    out[i] = ps * dw[i - 1] * src.spectrum()[i];
  }
  return GridFunction::from_spectrum(g, std::move(out));
}

// ---------------------------------------------------------------------------
// Lyapunov condition

enum class LyapunovFamily { LogEPlus };

inline LyapunovFamily parse_lyapunov(const std::string& s)
{
  if (s == "log_e_plus") return LyapunovFamily::LogEPlus;
  throw std::invalid_argument("lyapunov: unsupported V family '" + s + "' (supported: log_e_plus)");
}

/// V(x) = log(e + x) and its first two derivatives.
struct LyapunovV {
  LyapunovFamily family = LyapunovFamily::LogEPlus;
  [[nodiscard]] double operator()(double x) const { return std::log(std::numbers::e + x); }
  [[nodiscard]] double d1(double x) const { return 1.0 / (std::numbers::e + x); }
  [[nodiscard]] double d2(double x) const
  {
    const double a = std::numbers::e + x;
    return -1.0 / (a * a);
  }
};

struct LyapunovSample {
  double t = 0.0;
  GridFunction u;
};

struct LyapunovReport {
  std::vector<double> margins;  // LHS - g(t) V
  std::vector<double> lhs;
  double max_margin = 0.0;
  double g_required = 0.0;  // max over samples of LHS / V
  [[nodiscard]] bool holds() const { return max_margin <= 0.0; }
};

struct LyapunovInputs {
  double s = 2.0;
  double xi = 0.0;
  double theta = 0.0;
  TimeProfile damping = TimeProfile::constant(0.0);
  TimeProfile g = TimeProfile::constant(0.0);
  LyapunovV v;
};

/// LHS = V'(X) [(Xi + 2 Theta w) X - 2 lambda X + sum ||h_k||^2_{H^s}]
///       + 2 V''(X) sum <h_k, u>^2_{H^s},  X = ||u||^2_{H^s}, w = ||u||_{W^{1,inf}}.
inline double lyapunov_lhs(const ItoNoiseSpec& spec, const LyapunovInputs& in, double t,
                           const GridFunction& u)
{
  const double x = sobolev_norm_sq(in.s, u);
  const double w = lipschitz_norm(u);
  double hh = 0.0, hu = 0.0;
  for (const auto& h : ito_channels(spec, t, u)) {
    hh += sobolev_norm_sq(in.s, h);
    const double p = sobolev_inner(in.s, h, u);
    hu += p * p;
  }
  return in.v.d1(x) * ((in.xi + 2.0 * in.theta * w) * x - 2.0 * in.damping(t) * x + hh) +
         2.0 * in.v.d2(x) * hu;
}

inline LyapunovReport check_lyapunov_condition(const ItoNoiseSpec& spec, const LyapunovInputs& in,
                                               const std::vector<LyapunovSample>& samples)
{
  LyapunovReport r;
  r.max_margin = -INFINITY;
  r.g_required = 0.0;
  for (const auto& smp : samples) {
    const double lhs = lyapunov_lhs(spec, in, smp.t, smp.u);
    const double vx = in.v(sobolev_norm_sq(in.s, smp.u));
    const double m = lhs - in.g(smp.t) * vx;
    r.lhs.push_back(lhs);
    r.margins.push_back(m);
    r.max_margin = std::max(r.max_margin, m);
    r.g_required = std::max(r.g_required, lhs / vx);
  }
  if (samples.empty()) r.max_margin = 0.0;
  return r;
}

}  // namespace schlab
