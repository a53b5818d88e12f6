#pragma once

// Toroidal pseudo-differential operators: x-dependent symbols, dense grid
// matrices, the noise operator banks and numerical cancellation constants.
//
// Quantization: (Pu)(x) = (1/2pi) sum_k p(x,k) u_hat(k) e^{ikx}.

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "schlab/rng.hpp"
#include "schlab/spectral.hpp"

namespace schlab {

/// p(x_j, k) on the grid, stored for k = 0..N/2 (negative k by realness).
class FullSymbol {
 public:
  template <class F>
  static FullSymbol tabulate(const TorusGrid& grid, double order, F&& p,
                             double realness_tol = 1e-12)
  {
    const int n = grid.size();
    const int nyq = grid.nyquist();
    std::vector<Complex> t(static_cast<std::size_t>(n) * static_cast<std::size_t>(nyq + 1));
    for (int j = 0; j < n; ++j) {
      const double x = grid.point(j);
      for (int k = 0; k < nyq; ++k) {
        const Complex plus = p(x, k);
        const Complex minus = p(x, -k);
        if (!std::isfinite(plus.real()) || !std::isfinite(plus.imag()) ||
            std::abs(minus - std::conj(plus)) > realness_tol * std::max(1.0, std::abs(plus)) ||
            (k == 0 && std::abs(plus.imag()) > realness_tol * std::max(1.0, std::abs(plus)))) {
          throw std::invalid_argument("FullSymbol: realness constraint violated at x_" +
                                      std::to_string(j) + ", k = " + std::to_string(k));
        }
        t[index(j, k, nyq)] = plus;
      }
      t[index(j, 0, nyq)] = t[index(j, 0, nyq)].real();
      t[index(j, nyq, nyq)] = 0.5 * (p(x, nyq) + p(x, -nyq)).real();
    }
    return FullSymbol(grid, order, std::move(t), std::nullopt);
  }

  static FullSymbol from_multiplier(const MultiplierSymbol& m)
  {
    const TorusGrid& g = m.grid();
    const int nyq = g.nyquist();
    std::vector<Complex> t(static_cast<std::size_t>(g.size()) * static_cast<std::size_t>(nyq + 1));
    for (int j = 0; j < g.size(); ++j) {
      for (int k = 0; k <= nyq; ++k) t[index(j, k, nyq)] = m.table()[static_cast<std::size_t>(k)];
    }
    return FullSymbol(g, m.order(), std::move(t), m);
  }

  [[nodiscard]] const TorusGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] double order() const noexcept { return order_; }
  [[nodiscard]] double bound_constant() const noexcept { return bound_; }
  [[nodiscard]] bool is_x_independent() const noexcept { return multiplier_.has_value(); }
  [[nodiscard]] const std::optional<MultiplierSymbol>& multiplier() const noexcept
  {
    return multiplier_;
  }

  [[nodiscard]] Complex operator()(int j, int k) const
  {
    const int nyq = grid_.nyquist();
    const Complex c = table_[index(j, std::abs(k), nyq)];
    return k >= 0 ? c : std::conj(c);
  }

 private:
  static std::size_t index(int j, int k, int nyq)
  {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(nyq + 1) +
           static_cast<std::size_t>(k);
  }

  FullSymbol(const TorusGrid& g, double order, std::vector<Complex> t,
             std::optional<MultiplierSymbol> m)
      : grid_(g), order_(order), table_(std::move(t)), multiplier_(std::move(m))
  {
    const int nyq = g.nyquist();
    for (int j = 0; j < g.size(); ++j) {
      for (int k = 0; k <= nyq; ++k) {
        bound_ = std::max(bound_, std::abs(table_[index(j, k, nyq)]) / std::pow(1.0 + k, order_));
      }
    }
  }

  TorusGrid grid_;
  double order_;
  std::vector<Complex> table_;
  std::optional<MultiplierSymbol> multiplier_;
  double bound_ = 0.0;
};

/// Direct O(N^2) quantization; x-independent symbols go through the FFT path.
inline GridFunction quantize_apply(const FullSymbol& p, const GridFunction& u)
{
  if (!(p.grid() == u.grid())) throw std::invalid_argument("quantize_apply: grid mismatch");
  if (p.is_x_independent()) return apply_multiplier(*p.multiplier(), u);
  const TorusGrid& g = u.grid();
  const int n = g.size();
  const int nyq = g.nyquist();
  std::vector<Complex> twiddle(static_cast<std::size_t>(n));
  for (int m = 0; m < n; ++m) twiddle[static_cast<std::size_t>(m)] = std::polar(1.0, kTwoPi * m / n);
  const auto spec = u.spectrum();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    double s = (p(j, 0) * spec[0]).real();
    for (int k = 1; k < nyq; ++k) {
      const auto w = twiddle[static_cast<std::size_t>((static_cast<long>(k) * j) % n)];
      s += 2.0 * (p(j, k) * spec[static_cast<std::size_t>(k)] * w).real();
    }
    s += (p(j, nyq) * spec[static_cast<std::size_t>(nyq)]).real() * ((j % 2) ? -1.0 : 1.0);
    out[static_cast<std::size_t>(j)] = s / kTwoPi;
  }
  return GridFunction::from_values(g, std::move(out));
}

inline constexpr int kDenseMatrixLimit = 1024;

namespace detail {
inline void check_dense_guard(const TorusGrid& g)
{
  if (g.size() > kDenseMatrixLimit) {
    throw std::invalid_argument("dense_matrix: N = " + std::to_string(g.size()) +
                                " exceeds the guard " + std::to_string(kDenseMatrixLimit));
  }
}

inline GridFunction unit_vector(const TorusGrid& g, int l)
{
  std::vector<double> e(static_cast<std::size_t>(g.size()), 0.0);
  e[static_cast<std::size_t>(l)] = 1.0;
  return GridFunction::from_values(g, std::move(e));
}
}  // namespace detail

/// Matrix of u -> Pu on grid values, assembled column by column.
inline Eigen::MatrixXd dense_matrix(const FullSymbol& p)
{
  detail::check_dense_guard(p.grid());
  const int n = p.grid().size();
  Eigen::MatrixXd m(n, n);
  for (int l = 0; l < n; ++l) {
    const auto col = quantize_apply(p, detail::unit_vector(p.grid(), l));
    for (int j = 0; j < n; ++j) m(j, l) = col[static_cast<std::size_t>(j)];
  }
  return m;
}

/// Adjoint for the uniform-weight grid L^2 product: the transpose.
inline Eigen::MatrixXd adjoint_matrix(const FullSymbol& p) { return dense_matrix(p).transpose(); }

// ---------------------------------------------------------------------------
// Noise operator banks

enum class NoiseKind { A_family, B_family };

/// x-independent base symbol with its native order.
struct BaseSymbol {
  std::string name;
  double base_order = 0.0;
  std::function<Complex(int)> fn;
};

namespace base_symbols {

/// ik, order 1.
inline BaseSymbol derivative()
{
  return {"derivative", 1.0, [](int k) { return Complex(0.0, k); }};
}

/// i sign(k), optionally restricted to |k| <= band; order 0, skew-adjoint.
inline BaseSymbol hilbert_band(std::optional<int> band = std::nullopt)
{
  return {"hilbert_band", 0.0, [band](int k) {
            if (k == 0 || (band && std::abs(k) > *band)) return Complex(0.0);
            return Complex(0.0, k > 0 ? 1.0 : -1.0);
          }};
}

/// i k / sqrt(1+k^2): bounded, real-odd, order 0, skew-adjoint.
inline BaseSymbol halfmoon_e_k()
{
  return {"halfmoon_e_k", 0.0,
          [](int k) { return Complex(0.0, k / std::sqrt(1.0 + double(k) * k)); }};
}

/// Symbol table on k = 0..K, linearly interpolated in k, extended beyond K by
/// m(K) (k/K)^order; negative k by conjugation.
inline BaseSymbol from_table(const std::vector<double>& ks, const std::vector<Complex>& values,
                             double order, std::string name = "table")
{
  if (ks.size() != values.size() || ks.size() < 2) {
    throw std::invalid_argument("symbol table: need >= 2 matching (k, value) rows");
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 0 || (i > 0 && ks[i] <= ks[i - 1])) {
      throw std::invalid_argument("symbol table: k must be nonnegative and increasing");
    }
  }
  if (ks.front() != 0.0 || std::abs(values.front().imag()) > 0.0) {
    throw std::invalid_argument("symbol table: must start at k = 0 with a real value");
  }
  return {std::move(name), order, [ks, values, order](int kk) {
            const double a = std::abs(static_cast<double>(kk));
            Complex v;
            if (a >= ks.back()) {
              v = values.back() * std::pow(a / ks.back(), order);
            } else {
              const auto it = std::upper_bound(ks.begin(), ks.end(), a);
              const auto i = static_cast<std::size_t>(it - ks.begin());
              const double w = (a - ks[i - 1]) / (ks[i] - ks[i - 1]);
              v = (1.0 - w) * values[i - 1] + w * values[i];
            }
            return kk >= 0 ? v : std::conj(v);
          }};
}

}  // namespace base_symbols

/// Coefficient a(x) = mean + sum_m (cos_m cos(mx) + sin_m sin(mx)), or a scalar.
struct Coefficient {
  double mean = 0.0;
  std::vector<double> cos_terms;
  std::vector<double> sin_terms;

  static Coefficient scalar(double c) { return {c, {}, {}}; }

  [[nodiscard]] bool is_scalar() const noexcept
  {
    auto zero = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double c) { return c == 0.0; });
    };
    return zero(cos_terms) && zero(sin_terms);
  }
  [[nodiscard]] bool is_zero() const noexcept { return mean == 0.0 && is_scalar(); }

  [[nodiscard]] double operator()(double x) const
  {
    double s = mean;
    for (std::size_t m = 0; m < cos_terms.size(); ++m) s += cos_terms[m] * std::cos((m + 1.0) * x);
    for (std::size_t m = 0; m < sin_terms.size(); ++m) s += sin_terms[m] * std::sin((m + 1.0) * x);
    return s;
  }
};

/// One channel Q = c(x) * OP(base(k) |k|^{order - base_order}).
/// Resolution independent; discretize() binds it to a grid.
struct NoiseOperatorSpec {
  NoiseKind kind = NoiseKind::A_family;
  double order = 0.0;  // alpha (A family) or beta (B family)
  Coefficient coefficient;
  BaseSymbol base;

  [[nodiscard]] bool active() const noexcept { return !coefficient.is_zero(); }

  [[nodiscard]] Complex symbol(int k) const
  {
    const double e = order - base.base_order;
    const Complex b = base.fn(k);
    if (e == 0.0) return b;
    if (k == 0) return Complex(0.0);
    return b * std::pow(std::abs(static_cast<double>(k)), e);
  }

  void validate() const
  {
    if (kind == NoiseKind::A_family && !(order >= 0.0 && order <= 1.0)) {
      throw std::invalid_argument("A-family channel: alpha must lie in [0,1]");
    }
    if (kind == NoiseKind::B_family) {
      if (!(order >= 0.0)) throw std::invalid_argument("B-family channel: beta must be >= 0");
      if (!coefficient.is_scalar()) {
        throw std::invalid_argument("B-family channel: coefficient b_k must be a scalar");
      }
    }
  }
};

/// A channel bound to a grid: multiplier followed by pointwise coefficient.
class DiscreteNoiseOperator {
 public:
  DiscreteNoiseOperator(const NoiseOperatorSpec& spec, const TorusGrid& grid)
      : multiplier_(MultiplierSymbol::tabulate(grid, spec.order,
                                               [&spec](int k) { return spec.symbol(k); })),
        scalar_(spec.coefficient.is_scalar()),
        scale_(spec.coefficient.mean)
  {
    if (!scalar_) {
      coef_.resize(static_cast<std::size_t>(grid.size()));
      for (int j = 0; j < grid.size(); ++j) {
        coef_[static_cast<std::size_t>(j)] = spec.coefficient(grid.point(j));
      }
    } else {
      // Fold the scalar into the multiplier so application is a single FFT pair.
      std::vector<Complex> t(multiplier_.table().begin(), multiplier_.table().end());
      for (auto& c : t) c *= scale_;
      multiplier_ = MultiplierSymbol::from_table(grid, spec.order, std::move(t));
    }
  }

  [[nodiscard]] const TorusGrid& grid() const noexcept { return multiplier_.grid(); }
  [[nodiscard]] bool is_x_independent() const noexcept { return scalar_; }

  [[nodiscard]] GridFunction apply(const GridFunction& u) const
  {
    const GridFunction v = apply_multiplier(multiplier_, u);
    if (scalar_) return v;
    std::vector<double> w(v.values().begin(), v.values().end());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] *= coef_[j];
    return GridFunction::from_values(grid(), std::move(w));
  }

  /// Transpose of the grid matrix: conj-symbol multiplier after the coefficient.
  [[nodiscard]] GridFunction apply_transpose(const GridFunction& u) const
  {
    std::vector<Complex> t(multiplier_.table().begin(), multiplier_.table().end());
    for (auto& c : t) c = std::conj(c);
    const auto mt = MultiplierSymbol::from_table(grid(), multiplier_.order(), std::move(t));
    if (scalar_) return apply_multiplier(mt, u);
    std::vector<double> w(u.values().begin(), u.values().end());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] *= coef_[j];
    return apply_multiplier(mt, GridFunction::from_values(grid(), std::move(w)));
  }

  [[nodiscard]] FullSymbol full_symbol() const
  {
    if (scalar_) return FullSymbol::from_multiplier(multiplier_);
    const TorusGrid& g = grid();
    const auto coef = coef_;
    const auto m = multiplier_;
    const int n = g.size();
    return FullSymbol::tabulate(g, m.order(), [&](double x, int k) {
      const int j = static_cast<int>(std::lround(x / kTwoPi * n)) % n;
      return coef[static_cast<std::size_t>(j)] * m(k);
    });
  }

  /// Grid matrix diag(c) * C with C circulant; O(N^2).
  [[nodiscard]] Eigen::MatrixXd dense() const
  {
    detail::check_dense_guard(grid());
    const int n = grid().size();
    const auto col0 = apply_multiplier(multiplier_, detail::unit_vector(grid(), 0));
    Eigen::MatrixXd m(n, n);
    for (int l = 0; l < n; ++l) {
      for (int j = 0; j < n; ++j) {
        const double c = col0[static_cast<std::size_t>(((j - l) % n + n) % n)];
        m(j, l) = scalar_ ? c : coef_[static_cast<std::size_t>(j)] * c;
      }
    }
    return m;
  }

 private:
  MultiplierSymbol multiplier_;
  bool scalar_;
  double scale_;
  std::vector<double> coef_;
};

using NoiseBank = std::vector<NoiseOperatorSpec>;

inline std::vector<DiscreteNoiseOperator> discretize(const NoiseBank& bank, const TorusGrid& g)
{
  std::vector<DiscreteNoiseOperator> ops;
  for (const auto& spec : bank) {
    if (spec.active()) ops.emplace_back(spec, g);
  }
  return ops;
}

/// max{alpha over active A channels, beta over active B channels}, 0 if none.
inline double gamma0(const NoiseBank& bank)
{
  double g = 0.0;
  for (const auto& c : bank) {
    if (c.active()) g = std::max(g, c.order);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Empirical order of the symmetrized part

struct SymmetrizedOrderReport {
  double slope = 0.0;
  bool zero_norm = false;  // M + M^T vanished at every resolution
  std::vector<int> resolutions;
  std::vector<double> norms;  // ||P (M+M^T) P||_2
  std::vector<double> operator_norms;  // ||P M P||_2
  [[nodiscard]] bool admissible() const { return slope < 0.25; }
};

namespace detail {

inline Eigen::MatrixXd band_projector(const TorusGrid& g, int kmax)
{
  const auto lp = symbols::low_pass(g, kmax);
  const int n = g.size();
  const auto col0 = apply_multiplier(lp, unit_vector(g, 0));
  Eigen::MatrixXd p(n, n);
  for (int l = 0; l < n; ++l) {
    for (int j = 0; j < n; ++j) p(j, l) = col0[static_cast<std::size_t>(((j - l) % n + n) % n)];
  }
  return p;
}

inline double spectral_norm_symmetric(const Eigen::MatrixXd& s)
{
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace detail

/// Least-squares slope of log ||P(M_N + M_N^T)P||_2 against log N, P the
/// projection onto |k| <= N/4.
inline SymmetrizedOrderReport estimate_symmetrized_order(const NoiseOperatorSpec& spec,
                                                         const std::vector<int>& resolutions)
{
  if (resolutions.size() < 2) {
    throw std::invalid_argument("estimate_symmetrized_order: need at least two resolutions");
  }
  SymmetrizedOrderReport r;
  r.resolutions = resolutions;
  for (int n : resolutions) {
    const TorusGrid g(n);
    const DiscreteNoiseOperator op(spec, g);
    const Eigen::MatrixXd m = op.dense();
    const Eigen::MatrixXd p = detail::band_projector(g, n / 4);
    const Eigen::MatrixXd s = p * (m + m.transpose()) * p;
    const Eigen::MatrixXd pm = p * m * p;
    r.norms.push_back(detail::spectral_norm_symmetric(s));
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(pm);
    r.operator_norms.push_back(svd.singularValues()(0));
  }
  bool all_zero = true;
  for (std::size_t i = 0; i < r.norms.size(); ++i) {
    if (r.norms[i] > 1e-10 * std::max(1.0, r.operator_norms[i])) all_zero = false;
  }
  if (all_zero) {
    r.zero_norm = true;
    r.slope = 0.0;
    return r;
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double cnt = static_cast<double>(r.norms.size());
  for (std::size_t i = 0; i < r.norms.size(); ++i) {
    const double x = std::log(static_cast<double>(resolutions[i]));
    const double y = std::log(std::max(r.norms[i], 1e-300));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = cnt * sxx - sx * sx;
  if (den <= 0.0) throw std::invalid_argument("estimate_symmetrized_order: degenerate fit");
  r.slope = (cnt * sxy - sx * sy) / den;
  return r;
}

// ---------------------------------------------------------------------------
// Cancellation constants

struct XiOptions {
  std::optional<int> mollifier;  // sandwich with J_n when set
  bool outer_sandwich = true;    // J_n^3 Q^2 J_n form (else J_n Q^2 f paired with J_n f)
  int refine_iters = 100;        // power-iteration steps from the best random sample
};

/// sum_k (<Q_k^2 f, f>_{H^eta} + ||Q_k f||^2_{H^eta}), or a J_n-sandwiched variant.
inline double cancellation_form(const std::vector<DiscreteNoiseOperator>& ops, double eta,
                                const GridFunction& f, const XiOptions& opt = {})
{
  double total = 0.0;
  for (const auto& q : ops) {
    if (!opt.mollifier) {
      const auto qf = q.apply(f);
      total += sobolev_inner(eta, q.apply(qf), f) + sobolev_norm_sq(eta, qf);
    } else {
      const int n = *opt.mollifier;
      if (opt.outer_sandwich) {
        const auto qjf = q.apply(mollify(n, f));
        const auto j3 = mollify(n, mollify(n, mollify(n, q.apply(qjf))));
        total += sobolev_inner(eta, j3, f) + sobolev_norm_sq(eta, mollify(n, qjf));
      } else {
        const auto qf = q.apply(f);
        const auto jq2f = mollify(n, q.apply(qf));
        total += sobolev_inner(eta, jq2f, mollify(n, f)) + sobolev_norm_sq(eta, mollify(n, qf));
      }
    }
  }
  return total;
}

namespace detail {

// H^eta-self-adjoint operator T with <T f, f>_{H^eta} = cancellation_form(f).
// With A_eta = D^{-2eta} A^T D^{2eta} the H^eta adjoint of a grid operator:
// T = sym(Q^2) + Q^dag Q, and the J_n variants analogously (J_n is
// self-adjoint and commutes with D).
inline GridFunction cancellation_operator(const std::vector<DiscreteNoiseOperator>& ops,
                                          double eta, const GridFunction& f,
                                          const XiOptions& opt)
{
  const TorusGrid& g = f.grid();
  const auto up = symbols::bessel_potential(g, 2.0 * eta);
  const auto down = symbols::bessel_potential(g, -2.0 * eta);
  auto adj = [&](const DiscreteNoiseOperator& q, const GridFunction& v) {
    return apply_multiplier(down, q.apply_transpose(apply_multiplier(up, v)));
  };
  auto j = [&](const GridFunction& v, int times) {
    GridFunction w = v;
    for (int i = 0; i < times && opt.mollifier; ++i) w = mollify(*opt.mollifier, w);
    return w;
  };
  const bool outer = opt.mollifier && opt.outer_sandwich;
  GridFunction acc = GridFunction::zero(g);
  for (const auto& q : ops) {
    // A = outer ? J^3 Q^2 J : J^2 Q^2 ;  C = outer ? J Q J : J Q.
    const GridFunction a = outer ? j(q.apply(q.apply(j(f, 1))), 3) : j(q.apply(q.apply(f)), 2);
    const GridFunction at = outer ? j(adj(q, adj(q, j(f, 3))), 1) : adj(q, adj(q, j(f, 2)));
    const GridFunction c = outer ? j(q.apply(j(f, 1)), 1) : j(q.apply(f), 1);
    const GridFunction ctc = outer ? j(adj(q, j(c, 1)), 1) : adj(q, j(c, 1));
    acc = acc + 0.5 * (a + at) + ctc;
  }
  return acc;
}

}  // namespace detail

/// Working value of Xi: max of |cancellation_form(f)| / ||f||^2_{H^eta} over
/// random f (white spectrum, |k| <= N/4), refined by power iteration of the
/// associated band-restricted operator from the best sample. Every iterate is
/// an admissible f, so the result stays a lower estimate of the supremum.
inline double estimate_Xi(const NoiseBank& bank, const TorusGrid& grid, double eta,
                          int n_samples, std::uint64_t seed, const XiOptions& opt = {})
{
  if (eta < 1.0) throw std::invalid_argument("estimate_Xi: eta must be >= 1");
  const auto ops = discretize(bank, grid);
  if (ops.empty()) return 0.0;
  const int band = grid.size() / 4;
  const CounterRng rng(seed);
  double best = 0.0;
  std::optional<GridFunction> arg;
  for (int s = 0; s < n_samples; ++s) {
    const auto f = random_band_limited(grid, band, rng, static_cast<std::uint64_t>(s));
    const double den = sobolev_norm_sq(eta, f);
    if (den == 0.0) continue;
    const double r = std::abs(cancellation_form(ops, eta, f, opt)) / den;
    if (!arg || r > best) {
      best = r;
      arg = f;
    }
  }
  if (!arg) return best;
  GridFunction f = *arg;
  for (int it = 0; it < opt.refine_iters; ++it) {
    f = project_band(detail::cancellation_operator(ops, eta, f, opt), band);
    const double den = sobolev_norm_sq(eta, f);
    if (!(den > 0.0)) break;
    f = (1.0 / std::sqrt(den)) * f;
    best = std::max(best, std::abs(cancellation_form(ops, eta, f, opt)));
  }
  return best;
}

/// (sum_k <Q_k f, f>^2_{H^eta}, ||f||^4_{H^eta}).
inline std::pair<double, double> cancellation_pair_check(const NoiseBank& bank, double eta,
                                                         const GridFunction& f)
{
  const auto ops = discretize(bank, f.grid());
  double s = 0.0;
  for (const auto& q : ops) {
    const double v = sobolev_inner(eta, q.apply(f), f);
    s += v * v;
  }
  const double n2 = sobolev_norm_sq(eta, f);
  return {s, n2 * n2};
}

// ---------------------------------------------------------------------------
// Bank files

namespace detail {

inline Coefficient parse_coefficient(const nlohmann::json& j)
{
  if (j.is_number()) return Coefficient::scalar(j.get<double>());
  if (j.contains("scalar")) return Coefficient::scalar(j.at("scalar").get<double>());
  if (j.contains("fourier")) {
    const auto& f = j.at("fourier");
    Coefficient c;
    c.mean = f.value("mean", 0.0);
    c.cos_terms = f.value("cos", std::vector<double>{});
    c.sin_terms = f.value("sin", std::vector<double>{});
    return c;
  }
  throw std::invalid_argument("bank: coefficient must be a number, {scalar} or {fourier}");
}

inline BaseSymbol load_table_file(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("bank: cannot open symbol table " + path);
  const auto j = nlohmann::json::parse(in);
  const auto ks = j.at("k").get<std::vector<double>>();
  const auto re = j.at("re").get<std::vector<double>>();
  const auto im = j.value("im", std::vector<double>(re.size(), 0.0));
  if (re.size() != ks.size() || im.size() != ks.size()) {
    throw std::invalid_argument("bank: table columns k/re/im differ in length");
  }
  std::vector<Complex> v(ks.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = {re[i], im[i]};
  return base_symbols::from_table(ks, v, j.at("order").get<double>(), "table:" + path);
}

inline std::string parent_dir(const std::string& path)
{
  const auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string() : path.substr(0, pos + 1);
}

}  // namespace detail

inline BaseSymbol parse_base_symbol(const nlohmann::json& j, const std::string& base_dir = "")
{
  std::string name;
  nlohmann::json params = nlohmann::json::object();
  if (j.is_string()) {
    name = j.get<std::string>();
  } else if (j.contains("builtin")) {
    name = j.at("builtin").get<std::string>();
    params = j;
  } else if (j.contains("table")) {
    std::string p = j.at("table").get<std::string>();
    if (!p.empty() && p.front() != '/') p = base_dir + p;
    return detail::load_table_file(p);
  } else {
    throw std::invalid_argument("bank: base must be a builtin name, {builtin} or {table}");
  }
  if (name == "derivative") return base_symbols::derivative();
  if (name == "hilbert_band") {
    std::optional<int> band;
    if (params.contains("band")) band = params.at("band").get<int>();
    return base_symbols::hilbert_band(band);
  }
  if (name == "halfmoon_e_k") return base_symbols::halfmoon_e_k();
  throw std::invalid_argument("bank: unknown builtin symbol '" + name + "'");
}

/// {"channels": [{"kind": "A"|"B", "order": x, "coefficient": ..., "base": ...}, ...]}
inline NoiseBank parse_bank(const nlohmann::json& j, const std::string& base_dir = "")
{
  NoiseBank bank;
  for (const auto& c : j.at("channels")) {
    NoiseOperatorSpec s;
    const auto kind = c.at("kind").get<std::string>();
    if (kind == "A") s.kind = NoiseKind::A_family;
    else if (kind == "B") s.kind = NoiseKind::B_family;
    else throw std::invalid_argument("bank: kind must be \"A\" or \"B\", got " + kind);
    s.order = c.at("order").get<double>();
    s.coefficient = detail::parse_coefficient(c.at("coefficient"));
    s.base = parse_base_symbol(c.at("base"), base_dir);
    s.validate();
    bank.push_back(std::move(s));
  }
  return bank;
}

inline NoiseBank load_bank(const std::string& path)
{
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("bank: cannot open " + path);
  return parse_bank(nlohmann::json::parse(in), detail::parent_dir(path));
}

}  // namespace schlab
