#pragma once

// Deterministic Camassa-Holm vector field
//   du/dt = -[eps Lambda^{2 theta} u + lambda(t) u + u u_x + F(u)],
//   F(u) = d/dx (1 - d^2/dx^2)^{-1} (u^2 + u_x^2 / 2).

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "schlab/rng.hpp"
#include "schlab/spectral.hpp"

namespace schlab {

/// Nonnegative time profile with a closed-form integral.
class TimeProfile {
 public:
  enum class Kind { Constant, Piecewise, SinePlus, IntegrableTail };

  static TimeProfile constant(double value)
  {
    if (!(value >= 0.0)) throw std::invalid_argument("profile: constant value must be >= 0");
    TimeProfile p(Kind::Constant);
    p.a_ = value;
    return p;
  }

  /// values[i] on [breaks[i-1], breaks[i]) with breaks[-1] = -inf, breaks[n] = +inf.
  static TimeProfile piecewise(std::vector<double> breaks, std::vector<double> values)
  {
    if (values.size() != breaks.size() + 1) {
      throw std::invalid_argument("profile: piecewise needs one more value than breakpoints");
    }
    for (std::size_t i = 1; i < breaks.size(); ++i) {
      if (!(breaks[i] > breaks[i - 1])) {
        throw std::invalid_argument("profile: piecewise breakpoints must increase");
      }
    }
    for (double v : values) {
      if (!(v >= 0.0)) throw std::invalid_argument("profile: piecewise values must be >= 0");
    }
    TimeProfile p(Kind::Piecewise);
    p.breaks_ = std::move(breaks);
    p.values_ = std::move(values);
    return p;
  }

  /// a (1 + sin(omega t + phase)), nonnegative for a >= 0.
  static TimeProfile sine_plus(double a, double omega, double phase = 0.0)
  {
    if (!(a >= 0.0)) throw std::invalid_argument("profile: sine_plus amplitude must be >= 0");
    if (!(omega > 0.0)) throw std::invalid_argument("profile: sine_plus omega must be > 0");
    TimeProfile p(Kind::SinePlus);
    p.a_ = a;
    p.b_ = omega;
    p.c_ = phase;
    return p;
  }

  /// a / (1 + |t|)^p with p > 1, integrable over the real line.
  static TimeProfile integrable_tail(double a, double power)
  {
    if (!(a >= 0.0)) throw std::invalid_argument("profile: integrable_tail amplitude must be >= 0");
    if (!(power > 1.0)) throw std::invalid_argument("profile: integrable_tail needs p > 1");
    TimeProfile p(Kind::IntegrableTail);
    p.a_ = a;
    p.b_ = power;
    return p;
  }

  [[nodiscard]] Kind kind() const noexcept { return kind_; }
  [[nodiscard]] bool is_autonomous() const noexcept
  {
    return kind_ == Kind::Constant || (kind_ == Kind::Piecewise && breaks_.empty());
  }

  [[nodiscard]] double operator()(double t) const
  {
    switch (kind_) {
      case Kind::Constant: return a_;
      case Kind::Piecewise: {
        std::size_t i = 0;
        while (i < breaks_.size() && t >= breaks_[i]) ++i;
        return values_[i];
      }
      case Kind::SinePlus: return a_ * (1.0 + std::sin(b_ * t + c_));
      case Kind::IntegrableTail: return a_ / std::pow(1.0 + std::abs(t), b_);
    }
    return 0.0;
  }

  /// Exact integral over [t0, t1].
  [[nodiscard]] double integral(double t0, double t1) const
  {
    if (t1 < t0) return -integral(t1, t0);
    switch (kind_) {
      case Kind::Constant: return a_ * (t1 - t0);
      case Kind::Piecewise: {
        double s = 0.0;
        double lo = t0;
        for (std::size_t i = 0; i <= breaks_.size(); ++i) {
          const double hi = i < breaks_.size() ? std::min(t1, breaks_[i]) : t1;
          if (hi > lo) {
            s += values_[i] * (hi - lo);
            lo = hi;
          }
        }
        return s;
      }
      case Kind::SinePlus:
        return a_ * ((t1 - t0) - (std::cos(b_ * t1 + c_) - std::cos(b_ * t0 + c_)) / b_);
      case Kind::IntegrableTail: {
        auto prim = [this](double t) {
          const double m = (1.0 - std::pow(1.0 + std::abs(t), 1.0 - b_)) / (b_ - 1.0);
          return t >= 0 ? m : -m;
        };
        return a_ * (prim(t1) - prim(t0));
      }
    }
    return 0.0;
  }

  /// {"kind": "constant", "value": x} | {"kind": "piecewise", "breaks": [...], "values": [...]}
  /// | {"kind": "sine_plus", "amplitude": a, "omega": w, "phase": p}
  /// | {"kind": "integrable_tail", "amplitude": a, "power": p}
  static TimeProfile from_json(const nlohmann::json& j)
  {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "constant") return constant(j.at("value").get<double>());
    if (kind == "piecewise") {
      return piecewise(j.at("breaks").get<std::vector<double>>(),
                       j.at("values").get<std::vector<double>>());
    }
    if (kind == "sine_plus") {
      return sine_plus(j.at("amplitude").get<double>(), j.at("omega").get<double>(),
                       j.value("phase", 0.0));
    }
    if (kind == "integrable_tail") {
      return integrable_tail(j.at("amplitude").get<double>(), j.at("power").get<double>());
    }
    throw std::invalid_argument("profile: unknown kind '" + kind + "'");
  }

  [[nodiscard]] nlohmann::json to_json() const
  {
    switch (kind_) {
      case Kind::Constant: return {{"kind", "constant"}, {"value", a_}};
      case Kind::Piecewise: return {{"kind", "piecewise"}, {"breaks", breaks_}, {"values", values_}};
      case Kind::SinePlus:
        return {{"kind", "sine_plus"}, {"amplitude", a_}, {"omega", b_}, {"phase", c_}};
      case Kind::IntegrableTail:
        return {{"kind", "integrable_tail"}, {"amplitude", a_}, {"power", b_}};
    }
    return {};
  }

  /// Same profile evaluated at t + shift.
  [[nodiscard]] TimeProfile shifted(double shift) const
  {
    TimeProfile p = *this;
    switch (kind_) {
      case Kind::Constant: break;
      case Kind::Piecewise:
        for (auto& b : p.breaks_) b -= shift;
        break;
      case Kind::SinePlus: p.c_ += b_ * shift; break;
      case Kind::IntegrableTail:
        if (shift != 0.0) throw std::invalid_argument("profile: integrable_tail cannot be shifted");
        break;
    }
    return p;
  }

 private:
  explicit TimeProfile(Kind k) : kind_(k) {}
  Kind kind_;
  double a_ = 0.0, b_ = 0.0, c_ = 0.0;
  std::vector<double> breaks_;
  std::vector<double> values_;
};

struct DriftConfig {
  double epsilon = 0.0;
  double theta = 1.0;
  TimeProfile damping = TimeProfile::constant(0.0);
  bool dealias = true;
  // Test hooks.
  bool convection = true;
  bool nonlocal = true;
  std::optional<int> mollifier;  // J_n around the convection term

  void validate() const
  {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("drift: epsilon must be >= 0");
    if (!(theta > 0.0 && theta <= 1.0)) throw std::invalid_argument("drift: theta must lie in (0,1]");
    if (mollifier && *mollifier < 1) throw std::invalid_argument("drift: mollifier n must be >= 1");
  }
};

namespace detail {

inline GridFunction maybe_band(const GridFunction& u, bool dealias)
{
  return dealias ? project_band(u, u.grid().dealias_cutoff()) : u;
}

}  // namespace detail

/// u^2 + u_x^2 / 2 pushed through d/dx (1 - d^2/dx^2)^{-1}: symbol ik / (1+k^2).
inline GridFunction nonlocal_F(const GridFunction& u, bool dealias = true)
{
  const TorusGrid& g = u.grid();
  const GridFunction v = detail::maybe_band(u, dealias);
  const GridFunction vx = derivative(v);
  std::vector<double> w(static_cast<std::size_t>(g.size()));
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = v[j] * v[j] + 0.5 * vx[j] * vx[j];
  GridFunction p = detail::maybe_band(GridFunction::from_values(g, std::move(w)), dealias);
  std::vector<Complex> spec(p.spectrum().begin(), p.spectrum().end());
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double kk = static_cast<double>(k);
    spec[k] *= Complex(0.0, kk / (1.0 + kk * kk));
  }
  spec.back() = 0.0;
  return GridFunction::from_spectrum(g, std::move(spec));
}

/// u u_x with spectral u_x.
inline GridFunction convection(const GridFunction& u, bool dealias = true)
{
  const GridFunction v = detail::maybe_band(u, dealias);
  return product(v, derivative(v), dealias);
}

/// Right-hand side of du/dt for the deterministic part.
inline GridFunction deterministic_drift(const DriftConfig& cfg, double t, const GridFunction& u)
{
  const TorusGrid& g = u.grid();
  std::vector<Complex> spec(static_cast<std::size_t>(g.spectrum_size()));
  const double lam = cfg.damping(t);
  const auto us = u.spectrum();
  for (std::size_t k = 0; k < spec.size(); ++k) {
    const double kk = static_cast<double>(k);
    const double diff = (cfg.epsilon > 0.0 && k > 0) ? cfg.epsilon * std::pow(kk, 2.0 * cfg.theta) : 0.0;
    spec[k] = -(diff + lam) * us[k];
  }
  if (cfg.convection) {
    GridFunction c = cfg.mollifier ? mollify(*cfg.mollifier, convection(mollify(*cfg.mollifier, u), cfg.dealias))
                                   : convection(u, cfg.dealias);
    for (std::size_t k = 0; k < spec.size(); ++k) spec[k] -= c.spectrum()[k];
  }
  if (cfg.nonlocal) {
    const GridFunction f = nonlocal_F(u, cfg.dealias);
    for (std::size_t k = 0; k < spec.size(); ++k) spec[k] -= f.spectrum()[k];
  }
  return GridFunction::from_spectrum(g, std::move(spec));
}

/// -(u u_x + F(u)), the part ExponentialEM treats explicitly.
inline GridFunction nonlinear_drift(const DriftConfig& cfg, const GridFunction& u)
{
  DriftConfig nl = cfg;
  nl.epsilon = 0.0;
  nl.damping = TimeProfile::constant(0.0);
  return deterministic_drift(nl, 0.0, u);
}

/// <u u_x + F(u), u>_{H^1}.
inline double h1_pairing_residual(const GridFunction& u, bool dealias = true)
{
  return sobolev_inner(1.0, convection(u, dealias) + nonlocal_F(u, dealias), u);
}

/// Random field for constant estimation: spectrum (a + ib)(1+k^2)^{-(s+1)/2}
/// on 1 <= |k| <= N/4, so the same sample is consistent across resolutions.
inline GridFunction theta_sample(const TorusGrid& g, double s, const CounterRng& rng,
                                 std::uint64_t index)
{
  return random_band_limited(g, g.size() / 4, rng, index, s + 1.0);
}

/// Ratio (|<J(u u_x), J u>_{H^s}| + |<J F(u), J u>_{H^s}|) / (||u||_{W^{1,inf}} ||u||^2_{H^s}),
/// maximized over J in {J_4, J_16, I}.
inline double theta_ratio(double s, const GridFunction& u)
{
  const double w = lipschitz_norm(u);
  const double hs = sobolev_norm_sq(s, u);
  if (w == 0.0 || hs == 0.0) return 0.0;
  const GridFunction c = convection(u, true);
  const GridFunction f = nonlocal_F(u, true);
  double best = 0.0;
  for (int n : {4, 16, 0}) {
    const GridFunction jc = n ? mollify(n, c) : c;
    const GridFunction jf = n ? mollify(n, f) : f;
    const GridFunction ju = n ? mollify(n, u) : u;
    const double num = std::abs(sobolev_inner(s, jc, ju)) + std::abs(sobolev_inner(s, jf, ju));
    best = std::max(best, num / (w * hs));
  }
  return best;
}

/// Working value of Theta: max of theta_ratio over random samples.
inline double estimate_Theta(const TorusGrid& g, double s, int n_samples, std::uint64_t seed)
{
  if (!(s > 1.5)) throw std::invalid_argument("estimate_Theta: s must exceed 3/2");
  const CounterRng rng(seed);
  double best = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    best = std::max(best, theta_ratio(s, theta_sample(g, s, rng, static_cast<std::uint64_t>(i))));
  }
  return best;
}

}  // namespace schlab
