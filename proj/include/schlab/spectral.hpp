#pragma once

// Periodic fields on the 2*pi torus, Fourier multipliers, mollifiers and
// Sobolev / Lipschitz norms.
//
// Fourier convention (integral normalization):
//   u_hat(k) = int_T u(x) e^{-ikx} dx,   u(x) = (1/2pi) sum_k u_hat(k) e^{ikx},
// realized as u_hat = (2pi/N) * DFT(u). Only k = 0..N/2 is stored; negative
// modes follow from Hermitian symmetry u_hat(-k) = conj(u_hat(k)).

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <istream>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "schlab/rng.hpp"

namespace schlab {

using Complex = std::complex<double>;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t index, double value)
      : std::runtime_error("non-finite value " + std::to_string(value) + " at grid index " +
                           std::to_string(index)),
        index_(index)
  {
  }
  [[nodiscard]] std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// N uniform collocation points x_j = 2*pi*j/N on the torus; N even, N >= 8.
class TorusGrid {
 public:
  explicit TorusGrid(int n_points) : n_(n_points)
  {
    if (n_points < 8 || n_points % 2 != 0) {
      throw std::invalid_argument("TorusGrid: n_points must be even and >= 8, got " +
                                  std::to_string(n_points));
    }
  }

  [[nodiscard]] int size() const noexcept { return n_; }
  [[nodiscard]] int nyquist() const noexcept { return n_ / 2; }
  [[nodiscard]] int spectrum_size() const noexcept { return n_ / 2 + 1; }
  [[nodiscard]] double spacing() const noexcept { return kTwoPi / n_; }
  [[nodiscard]] double point(int j) const noexcept { return kTwoPi * j / n_; }
  /// Largest mode kept by the 2/3 rule: quadratic products of fields with
  /// |k| <= K alias only outside |k| <= K when 3K < N.
  [[nodiscard]] int dealias_cutoff() const noexcept { return (n_ - 1) / 3; }

  friend bool operator==(const TorusGrid&, const TorusGrid&) = default;

 private:
  int n_;
};

namespace detail {

struct FftPlans {
  fftw_plan forward;
  fftw_plan inverse;
};

// Planner calls are serialized; execution uses the new-array interface,
// which FFTW documents as thread safe.
inline const FftPlans& fft_plans(int n)
{
  static std::mutex mutex;
  static std::map<int, FftPlans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) {
    std::vector<double> real(static_cast<std::size_t>(n));
    std::vector<Complex> spec(static_cast<std::size_t>(n / 2 + 1));
    auto* c = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    FftPlans plans{fftw_plan_dft_r2c_1d(n, real.data(), c, flags),
                   fftw_plan_dft_c2r_1d(n, c, real.data(), flags)};
    it = cache.emplace(n, plans).first;
  }
  return it->second;
}

inline void check_finite(std::span<const double> values)
{
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (!std::isfinite(values[j])) throw NonFiniteError(j, values[j]);
  }
}

inline std::vector<Complex> forward_raw(std::span<const double> values)
{
  const int n = static_cast<int>(values.size());
  std::vector<Complex> spec(static_cast<std::size_t>(n / 2 + 1));
  // r2c out-of-place leaves its input untouched.
  fftw_execute_dft_r2c(fft_plans(n).forward, const_cast<double*>(values.data()),
                       reinterpret_cast<fftw_complex*>(spec.data()));
  const double scale = kTwoPi / n;
  for (auto& c : spec) c *= scale;
  return spec;
}

inline std::vector<double> inverse_raw(std::vector<Complex> spec, int n)
{
  std::vector<double> values(static_cast<std::size_t>(n));
  fftw_execute_dft_c2r(fft_plans(n).inverse, reinterpret_cast<fftw_complex*>(spec.data()),
                       values.data());
  const double scale = 1.0 / kTwoPi;
  for (auto& v : values) v *= scale;
  return values;
}

}  // namespace detail

/// A real field with its spectrum; both representations are kept consistent
/// and the object is immutable once built.
class GridFunction {
 public:
  static GridFunction from_values(const TorusGrid& grid, std::vector<double> values)
  {
    if (static_cast<int>(values.size()) != grid.size()) {
      throw std::invalid_argument("GridFunction: value count does not match grid");
    }
    detail::check_finite(values);
    auto spec = detail::forward_raw(values);
    return GridFunction(grid, std::move(values), std::move(spec));
  }

  /// Half spectrum k = 0..N/2. Imaginary parts of the k = 0 and Nyquist
  /// entries are discarded (they carry no real-field information).
  static GridFunction from_spectrum(const TorusGrid& grid, std::vector<Complex> spectrum)
  {
    if (static_cast<int>(spectrum.size()) != grid.spectrum_size()) {
      throw std::invalid_argument("GridFunction: spectrum size does not match grid");
    }
    spectrum.front() = spectrum.front().real();
    spectrum.back() = spectrum.back().real();
    auto values = detail::inverse_raw(spectrum, grid.size());
    detail::check_finite(values);
    return GridFunction(grid, std::move(values), std::move(spectrum));
  }

  template <class F>
  static GridFunction sample(const TorusGrid& grid, F&& f)
  {
    std::vector<double> v(static_cast<std::size_t>(grid.size()));
    for (int j = 0; j < grid.size(); ++j) v[static_cast<std::size_t>(j)] = f(grid.point(j));
    return from_values(grid, std::move(v));
  }

  static GridFunction zero(const TorusGrid& grid)
  {
    return GridFunction(grid, std::vector<double>(static_cast<std::size_t>(grid.size()), 0.0),
                        std::vector<Complex>(static_cast<std::size_t>(grid.spectrum_size())));
  }

  [[nodiscard]] const TorusGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] std::span<const Complex> spectrum() const noexcept { return spectrum_; }
  [[nodiscard]] double operator[](std::size_t j) const noexcept { return values_[j]; }

  /// u_hat(k) for any representable k in (-N/2, N/2].
  [[nodiscard]] Complex coefficient(int k) const
  {
    const int a = std::abs(k);
    if (a > grid_.nyquist() || k == -grid_.nyquist()) {
      throw std::out_of_range("GridFunction::coefficient: mode out of range");
    }
    const Complex c = spectrum_[static_cast<std::size_t>(a)];
    return k >= 0 ? c : std::conj(c);
  }

  friend GridFunction operator+(const GridFunction& a, const GridFunction& b)
  {
    return combine(1.0, a, 1.0, b);
  }
  friend GridFunction operator-(const GridFunction& a, const GridFunction& b)
  {
    return combine(1.0, a, -1.0, b);
  }
  friend GridFunction operator*(double s, const GridFunction& a)
  {
    auto v = a.values_;
    auto c = a.spectrum_;
    for (auto& x : v) x *= s;
    for (auto& x : c) x *= s;
    return GridFunction(a.grid_, std::move(v), std::move(c));
  }

  /// alpha*a + beta*b without any transform (both representations are linear).
  static GridFunction combine(double alpha, const GridFunction& a, double beta,
                              const GridFunction& b)
  {
    if (!(a.grid_ == b.grid_)) throw std::invalid_argument("GridFunction: grid mismatch");
    std::vector<double> v(a.values_.size());
    std::vector<Complex> c(a.spectrum_.size());
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = alpha * a.values_[j] + beta * b.values_[j];
    for (std::size_t k = 0; k < c.size(); ++k) {
      c[k] = alpha * a.spectrum_[k] + beta * b.spectrum_[k];
    }
    return GridFunction(a.grid_, std::move(v), std::move(c));
  }

 private:
  GridFunction(const TorusGrid& grid, std::vector<double> values, std::vector<Complex> spectrum)
      : grid_(grid), values_(std::move(values)), spectrum_(std::move(spectrum))
  {
  }

  TorusGrid grid_;
  std::vector<double> values_;
  std::vector<Complex> spectrum_;
};

/// Smooth compactly supported cutoff: 1 on |y| <= 1, 0 on |y| >= 2.
inline double cutoff_profile(double y) noexcept
{
  const double a = std::abs(y);
  if (a <= 1.0) return 1.0;
  if (a >= 2.0) return 0.0;
  const double r = a - 1.0;
  return std::exp(1.0 - 1.0 / (1.0 - r * r));
}

/// x-independent symbol m(k), stored on k = 0..N/2. The realness constraint
/// m(-k) = conj(m(k)) is checked when tabulating; the Nyquist entry is the
/// real part of the average of its two aliases (zero for odd symbols).
class MultiplierSymbol {
 public:
  template <class F>
  static MultiplierSymbol tabulate(const TorusGrid& grid, double order, F&& symbol,
                                   double realness_tol = 1e-12)
  {
    const int nyq = grid.nyquist();
    std::vector<Complex> half(static_cast<std::size_t>(nyq + 1));
    for (int k = 0; k < nyq; ++k) {
      const Complex plus = symbol(k);
      const Complex minus = symbol(-k);
      const double scale = std::max(1.0, std::abs(plus));
      if (!std::isfinite(plus.real()) || !std::isfinite(plus.imag()) ||
          std::abs(minus - std::conj(plus)) > realness_tol * scale) {
        throw std::invalid_argument("MultiplierSymbol: realness constraint m(-k) = conj(m(k)) "
                                    "violated at k = " + std::to_string(k));
      }
      half[static_cast<std::size_t>(k)] = plus;
    }
    half[0] = half[0].real();
    half[static_cast<std::size_t>(nyq)] = 0.5 * (symbol(nyq) + symbol(-nyq)).real();
    return MultiplierSymbol(grid, order, std::move(half));
  }

  static MultiplierSymbol from_table(const TorusGrid& grid, double order,
                                     std::vector<Complex> half)
  {
    if (static_cast<int>(half.size()) != grid.spectrum_size()) {
      throw std::invalid_argument("MultiplierSymbol: table size does not match grid");
    }
    if (std::abs(half.front().imag()) > 1e-12 * std::max(1.0, std::abs(half.front())) ||
        std::abs(half.back().imag()) > 1e-12 * std::max(1.0, std::abs(half.back()))) {
      throw std::invalid_argument("MultiplierSymbol: k = 0 and Nyquist entries must be real");
    }
    half.front() = half.front().real();
    half.back() = half.back().real();
    return MultiplierSymbol(grid, order, std::move(half));
  }

  [[nodiscard]] const TorusGrid& grid() const noexcept { return grid_; }
  [[nodiscard]] double order() const noexcept { return order_; }
  /// C in |m(k)| <= C (1+|k|)^order.
  [[nodiscard]] double bound_constant() const noexcept { return bound_; }
  [[nodiscard]] std::span<const Complex> table() const noexcept { return half_; }

  [[nodiscard]] Complex operator()(int k) const
  {
    const int a = std::abs(k);
    if (a > grid_.nyquist()) throw std::out_of_range("MultiplierSymbol: mode out of range");
    const Complex c = half_[static_cast<std::size_t>(a)];
    return k >= 0 ? c : std::conj(c);
  }

  /// Composition of multipliers: symbols multiply, orders add.
  friend MultiplierSymbol operator*(const MultiplierSymbol& a, const MultiplierSymbol& b)
  {
    if (!(a.grid_ == b.grid_)) throw std::invalid_argument("MultiplierSymbol: grid mismatch");
    std::vector<Complex> t(a.half_.size());
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = a.half_[k] * b.half_[k];
    return MultiplierSymbol(a.grid_, a.order_ + b.order_, std::move(t));
  }

 private:
  MultiplierSymbol(const TorusGrid& grid, double order, std::vector<Complex> half)
      : grid_(grid), order_(order), half_(std::move(half))
  {
    bound_ = 0.0;
    for (std::size_t k = 0; k < half_.size(); ++k) {
      const double r = std::abs(half_[k]) / std::pow(1.0 + static_cast<double>(k), order_);
      if (!std::isfinite(r)) throw std::invalid_argument("MultiplierSymbol: non-finite entry");
      bound_ = std::max(bound_, r);
    }
  }

  TorusGrid grid_;
  double order_;
  std::vector<Complex> half_;
  double bound_ = 0.0;
};

namespace symbols {

inline MultiplierSymbol identity(const TorusGrid& g)
{
  return MultiplierSymbol::tabulate(g, 0.0, [](int) { return Complex(1.0); });
}

/// d/dx: symbol ik.
inline MultiplierSymbol derivative(const TorusGrid& g)
{
  return MultiplierSymbol::tabulate(g, 1.0, [](int k) { return Complex(0.0, k); });
}

/// Lambda^s = (-d^2/dx^2)^{s/2}: symbol |k|^s (the k = 0 entry is 0 for s > 0).
inline MultiplierSymbol fractional_laplacian(const TorusGrid& g, double s)
{
  return MultiplierSymbol::tabulate(g, s, [s](int k) {
    if (k == 0) return Complex(s == 0.0 ? 1.0 : 0.0);
    return Complex(std::pow(std::abs(static_cast<double>(k)), s));
  });
}

/// D^s = (I - d^2/dx^2)^{s/2}: symbol (1+k^2)^{s/2}.
inline MultiplierSymbol bessel_potential(const TorusGrid& g, double s)
{
  return MultiplierSymbol::tabulate(g, s, [s](int k) {
    return Complex(std::pow(1.0 + static_cast<double>(k) * k, 0.5 * s));
  });
}

inline MultiplierSymbol helmholtz_inverse(const TorusGrid& g) { return bessel_potential(g, -2.0); }

/// J_n: symbol j(k/n) with the compactly supported cutoff profile.
inline MultiplierSymbol mollifier(const TorusGrid& g, int n)
{
  if (n < 1) throw std::invalid_argument("mollifier: n must be >= 1");
  return MultiplierSymbol::tabulate(
      g, 0.0, [n](int k) { return Complex(cutoff_profile(static_cast<double>(k) / n)); });
}

/// Indicator of lo < |k| <= hi.
inline MultiplierSymbol band_pass(const TorusGrid& g, double lo, double hi)
{
  return MultiplierSymbol::tabulate(g, 0.0, [lo, hi](int k) {
    const double a = std::abs(static_cast<double>(k));
    return Complex(a > lo && a <= hi ? 1.0 : 0.0);
  });
}

inline MultiplierSymbol low_pass(const TorusGrid& g, int kmax)
{
  return band_pass(g, -1.0, static_cast<double>(kmax));
}

}  // namespace symbols

inline std::vector<Complex> forward_transform(const GridFunction& u)
{
  return {u.spectrum().begin(), u.spectrum().end()};
}

/// Non-finite input is rejected with the offending index.
inline std::vector<Complex> forward_transform(const TorusGrid& grid,
                                              std::span<const double> values)
{
  if (static_cast<int>(values.size()) != grid.size()) {
    throw std::invalid_argument("forward_transform: size mismatch");
  }
  detail::check_finite(values);
  return detail::forward_raw(values);
}

inline GridFunction inverse_transform(const TorusGrid& grid, std::vector<Complex> spectrum)
{
  return GridFunction::from_spectrum(grid, std::move(spectrum));
}

inline GridFunction apply_multiplier(const MultiplierSymbol& m, const GridFunction& u)
{
  if (!(m.grid() == u.grid())) {
    throw std::invalid_argument("apply_multiplier: symbol and field live on different grids");
  }
  std::vector<Complex> spec(u.spectrum().begin(), u.spectrum().end());
  const auto table = m.table();
  for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= table[k];
  return GridFunction::from_spectrum(u.grid(), std::move(spec));
}

inline GridFunction mollify(int n, const GridFunction& u)
{
  return apply_multiplier(symbols::mollifier(u.grid(), n), u);
}

inline GridFunction derivative(const GridFunction& u)
{
  std::vector<Complex> spec(u.spectrum().begin(), u.spectrum().end());
  for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= Complex(0.0, static_cast<double>(k));
  spec.back() = 0.0;
  return GridFunction::from_spectrum(u.grid(), std::move(spec));
}

/// Zero every mode with |k| > kmax.
inline GridFunction project_band(const GridFunction& u, int kmax)
{
  std::vector<Complex> spec(u.spectrum().begin(), u.spectrum().end());
  for (std::size_t k = 0; k < spec.size(); ++k) {
    if (static_cast<int>(k) > kmax) spec[k] = 0.0;
  }
  return GridFunction::from_spectrum(u.grid(), std::move(spec));
}

/// Multiplicity of the stored half-spectrum entry k in the full sum over k.
inline double spectral_weight(int k, int nyquist) noexcept
{
  return (k == 0 || k == nyquist) ? 1.0 : 2.0;
}

/// <u, v>_{H^s} = sum_k (1+k^2)^s Re(u_hat conj(v_hat)) / (2pi).
inline double sobolev_inner(double s, const GridFunction& u, const GridFunction& v)
{
  if (!(u.grid() == v.grid())) throw std::invalid_argument("sobolev_inner: grid mismatch");
  const auto a = u.spectrum();
  const auto b = v.spectrum();
  const int nyq = u.grid().nyquist();
  double sum = 0.0;
  for (int k = 0; k <= nyq; ++k) {
    const auto i = static_cast<std::size_t>(k);
    const double w = spectral_weight(k, nyq) * std::pow(1.0 + static_cast<double>(k) * k, s);
    sum += w * (a[i].real() * b[i].real() + a[i].imag() * b[i].imag());
  }
  return sum / kTwoPi;
}

inline double sobolev_norm_sq(double s, const GridFunction& u)
{
  if (s < 0.0) throw std::invalid_argument("sobolev_norm_sq: s must be >= 0");
  return sobolev_inner(s, u, u);
}

inline double max_abs(const GridFunction& u)
{
  double m = 0.0;
  for (double v : u.values()) m = std::max(m, std::abs(v));
  return m;
}

/// max_j |u(x_j)| + max_j |u_x(x_j)| (grid maxima, spectral derivative).
inline double lipschitz_norm(const GridFunction& u)
{
  return max_abs(u) + max_abs(derivative(u));
}

/// Pointwise product; with dealiasing both factors are cut to the 2/3 band
/// and so is the result, which makes every retained mode exact.
inline GridFunction product(const GridFunction& a, const GridFunction& b, bool dealias)
{
  if (!(a.grid() == b.grid())) throw std::invalid_argument("product: grid mismatch");
  const TorusGrid& g = a.grid();
  if (!dealias) {
    std::vector<double> v(static_cast<std::size_t>(g.size()));
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = a[j] * b[j];
    return GridFunction::from_values(g, std::move(v));
  }
  const int kc = g.dealias_cutoff();
  const GridFunction at = project_band(a, kc);
  const GridFunction bt = project_band(b, kc);
  std::vector<double> v(static_cast<std::size_t>(g.size()));
  for (std::size_t j = 0; j < v.size(); ++j) v[j] = at[j] * bt[j];
  return project_band(GridFunction::from_values(g, std::move(v)), kc);
}

/// Random real field with spectrum on 1 <= |k| <= kmax (plus a mean mode when
/// include_mean), coefficients (a + ib) * (1+k^2)^{-decay/2} with a, b ~ N(0,1).
/// The draw for mode k depends only on (rng, sample, k), so the same sample at
/// two resolutions shares all common modes.
inline GridFunction random_band_limited(const TorusGrid& grid, int kmax, const CounterRng& rng,
                                        std::uint64_t sample, double decay = 0.0,
                                        bool include_mean = false)
{
  kmax = std::min(kmax, grid.nyquist() - 1);
  std::vector<Complex> spec(static_cast<std::size_t>(grid.spectrum_size()));
  // Scale so values are O(1): u(x) = (1/2pi) sum u_hat e^{ikx}.
  const double amp = kTwoPi / 2.0;
  for (int k = include_mean ? 0 : 1; k <= kmax; ++k) {
    const double w = amp * std::pow(1.0 + static_cast<double>(k) * k, -0.5 * decay);
    const double re = rng.normal(sample, static_cast<std::uint64_t>(k), 0);
    const double im = k == 0 ? 0.0 : rng.normal(sample, static_cast<std::uint64_t>(k), 1);
    spec[static_cast<std::size_t>(k)] = w * Complex(re, im);
  }
  return GridFunction::from_spectrum(grid, std::move(spec));
}

// Snapshot records: "SCHG", u32 N (little endian), then N little-endian float64.
namespace detail {

inline void put_le(std::ostream& os, std::uint64_t v, int bytes)
{
  for (int i = 0; i < bytes; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint64_t get_le(std::istream& is, int bytes)
{
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw std::runtime_error("snapshot: truncated record");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

inline void write_snapshot(std::ostream& os, const GridFunction& u)
{
  os.write("SCHG", 4);
  detail::put_le(os, static_cast<std::uint32_t>(u.grid().size()), 4);
  for (double v : u.values()) detail::put_le(os, std::bit_cast<std::uint64_t>(v), 8);
}

inline GridFunction read_snapshot(std::istream& is)
{
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (!is || std::string(magic.data(), 4) != "SCHG") {
    throw std::runtime_error("snapshot: bad magic");
  }
  const auto n = static_cast<int>(detail::get_le(is, 4));
  const TorusGrid grid(n);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = std::bit_cast<double>(detail::get_le(is, 8));
  return GridFunction::from_values(grid, std::move(v));
}

}  // namespace schlab
