#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "schlab/psdo.hpp"

using namespace schlab;
using oracle::pi;

namespace {

double max_diff(const GridFunction& a, const GridFunction& b)
{
  double m = 0.0;
  for (std::size_t j = 0; j < a.values().size(); ++j) m = std::max(m, std::abs(a[j] - b[j]));
  return m;
}

GridFunction wave(const TorusGrid& g, double (*f)(double), int k, double amp = 1.0)
{
  return GridFunction::sample(g, [=](double x) { return amp * f(k * x); });
}

// M_{jl} = (1/N) sum_k p(x_j,k) e^{ik(x_j - x_l)} with the Nyquist entry
// taken as Re(p(x,N/2) + p(x,-N/2))/2.
template <class P>
Eigen::MatrixXd naive_matrix(int n, P&& p)
{
  Eigen::MatrixXd m(n, n);
  for (int j = 0; j < n; ++j) {
    const double x = 2 * pi * j / n;
    for (int l = 0; l < n; ++l) {
      const double y = 2 * pi * l / n;
      oracle::cplx s = 0.0;
      for (int k = -n / 2 + 1; k < n / 2; ++k) s += p(x, k) * std::polar(1.0, k * (x - y));
      const double pn = 0.5 * (p(x, n / 2) + p(x, -n / 2)).real();
      s += pn * std::cos(n / 2 * (x - y));
      m(j, l) = s.real() / n;
    }
  }
  return m;
}

NoiseOperatorSpec transport(double amp_cos = 0.0)
{
  NoiseOperatorSpec s;
  s.kind = NoiseKind::A_family;
  s.order = 1.0;
  s.coefficient.mean = 1.0;
  if (amp_cos != 0.0) s.coefficient.cos_terms = {amp_cos};
  s.base = base_symbols::derivative();
  return s;
}

NoiseOperatorSpec identity_channel()
{
  NoiseOperatorSpec s;
  s.kind = NoiseKind::B_family;
  s.order = 0.0;
  s.coefficient = Coefficient::scalar(1.0);
  s.base = {"one", 0.0, [](int) { return Complex(1.0); }};
  return s;
}

NoiseOperatorSpec hilbert_fractional(double alpha, double amp_cos)
{
  NoiseOperatorSpec s;
  s.kind = NoiseKind::A_family;
  s.order = alpha;
  s.coefficient.mean = 1.0;
  s.coefficient.cos_terms = {amp_cos};
  s.base = base_symbols::hilbert_band();
  return s;
}

NoiseOperatorSpec planted_abs()
{
  NoiseOperatorSpec s;
  s.kind = NoiseKind::A_family;
  s.order = 1.0;
  s.coefficient = Coefficient::scalar(1.0);
  s.base = base_symbols::from_table({0.0, 1.0}, {Complex(0.0), Complex(1.0)}, 1.0, "abs");
  return s;
}

}  // namespace

TEST(QuantizeApply, Examples)
{
  const TorusGrid g(32);
  const auto d = FullSymbol::tabulate(g, 1.0, [](double, int k) { return Complex(0.0, k); });
  EXPECT_LT(max_diff(quantize_apply(d, wave(g, std::cos, 2)), wave(g, std::sin, 2, -2.0)), 1e-12);

  const auto tr = FullSymbol::tabulate(
      g, 1.0, [](double x, int k) { return std::sin(x) * Complex(0.0, k); });
  const auto want = GridFunction::sample(g, [](double x) { return -std::sin(x) * std::sin(x); });
  EXPECT_LT(max_diff(quantize_apply(tr, wave(g, std::cos, 1)), want), 1e-12);
  // Dense oracle agrees.
  const Eigen::MatrixXd m = naive_matrix(32, [](double x, int k) { return std::sin(x) * oracle::cplx(0.0, k); });
  const auto u = wave(g, std::cos, 1);
  Eigen::VectorXd uv = Eigen::Map<const Eigen::VectorXd>(u.values().data(), 32);
  Eigen::VectorXd mv = m * uv;
  for (int j = 0; j < 32; ++j) EXPECT_NEAR(mv(j), want[j], 1e-12);

  const auto id = FullSymbol::tabulate(g, 0.0, [](double, int) { return Complex(1.0); });
  const auto r = random_band_limited(g, 15, CounterRng(1), 0, 0.0, true);
  EXPECT_LT(max_diff(quantize_apply(id, r), r), 1e-12);
}

TEST(QuantizeApply, RealnessViolationRejected)
{
  const TorusGrid g(16);
  EXPECT_THROW(FullSymbol::tabulate(g, 1.0, [](double x, int k) { return Complex(std::cos(x) * k, 0.0); }),
               std::invalid_argument);
}

TEST(QuantizeApply, FastPathMatchesFullQuantization)
{
  const TorusGrid g(64);
  // cos even and sin odd in k: Hermitian.
  auto herm = [](int k) { return Complex(std::cos(0.1 * k), std::sin(0.2 * k)); };
  const auto m = MultiplierSymbol::tabulate(g, 0.0, herm);
  const auto fast = FullSymbol::from_multiplier(m);
  const auto slow = FullSymbol::tabulate(g, 0.0, [&](double, int k) { return herm(k); });
  EXPECT_TRUE(fast.is_x_independent());
  EXPECT_FALSE(slow.is_x_independent());
  const CounterRng rng(2);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto u = random_band_limited(g, 31, rng, s, 0.0, true);
    const auto a = quantize_apply(fast, u);
    const auto b = apply_multiplier(m, u);
    for (int j = 0; j < 64; ++j) EXPECT_EQ(a[j], b[j]);
    EXPECT_LT(max_diff(quantize_apply(slow, u), a), 1e-12 * std::max(1.0, max_abs(a)));
  }
}

TEST(DenseMatrix, DerivativeAndIdentity)
{
  const TorusGrid g(8);
  const auto d = FullSymbol::tabulate(g, 1.0, [](double, int k) { return Complex(0.0, k); });
  const Eigen::MatrixXd m = dense_matrix(d);
  const auto c = wave(g, std::cos, 1);
  Eigen::VectorXd v = m * Eigen::Map<const Eigen::VectorXd>(c.values().data(), 8);
  for (int j = 0; j < 8; ++j) EXPECT_NEAR(v(j), -std::sin(g.point(j)), 1e-12);
  EXPECT_LT((m + m.transpose()).norm(), 1e-12);
  EXPECT_LT((m - naive_matrix(8, [](double, int k) { return oracle::cplx(0.0, k); })).norm(), 1e-12);
  const auto id = FullSymbol::tabulate(g, 0.0, [](double, int) { return Complex(1.0); });
  EXPECT_LT((dense_matrix(id) - Eigen::MatrixXd::Identity(8, 8)).norm(), 1e-12);
  EXPECT_LT((adjoint_matrix(id) - Eigen::MatrixXd::Identity(8, 8)).norm(), 1e-12);
}

TEST(DenseMatrix, RandomSymbolsAgreeWithQuantization)
{
  const TorusGrid g(64);
  const CounterRng rng(31);
  for (std::uint64_t s = 0; s < 100; ++s) {
    const double a = rng.normal(s, 0), b = rng.normal(s, 1), c = rng.normal(s, 2);
    auto p = [=](double x, int k) {
      const double kk = k;
      return (1.0 + a * std::cos(x)) * oracle::cplx(0.0, kk) / std::sqrt(1.0 + kk * kk) +
             b * std::sin(2 * x) + c * std::cos(0.3 * kk) * std::cos(x);
    };
    const auto fs = FullSymbol::tabulate(g, 0.0, p);
    const auto u = random_band_limited(g, 31, rng.split(s), 0, 0.0, true);
    const Eigen::MatrixXd m = naive_matrix(64, p);
    Eigen::VectorXd mu = m * Eigen::Map<const Eigen::VectorXd>(u.values().data(), 64);
    const auto q = quantize_apply(fs, u);
    const double scale = std::max(1.0, mu.cwiseAbs().maxCoeff());
    for (int j = 0; j < 64; ++j) ASSERT_NEAR(mu(j), q[j], 1e-10 * scale);
  }
}

TEST(DenseMatrix, GuardRejectsLargeGrids)
{
  const TorusGrid g(2048);
  const auto id = FullSymbol::from_multiplier(symbols::identity(g));
  EXPECT_THROW((void)dense_matrix(id), std::invalid_argument);
}

TEST(AdjointMatrix, SkewExamples)
{
  const TorusGrid g(64);
  // i*sign(k) and i*e_k with e_k odd: skew-adjoint multipliers.
  for (const auto& base : {base_symbols::hilbert_band(), base_symbols::halfmoon_e_k(),
                           base_symbols::hilbert_band(10)}) {
    const auto fs = FullSymbol::tabulate(g, 0.0, [&](double, int k) { return base.fn(k); });
    const Eigen::MatrixXd m = dense_matrix(fs);
    const Eigen::MatrixXd a = adjoint_matrix(fs);
    EXPECT_LE((m + a).norm(), 1e-10 * m.norm()) << base.name;
  }
  // Composition with (-Delta)^beta keeps a multiplier skew.
  NoiseOperatorSpec s;
  s.kind = NoiseKind::B_family;
  s.order = 1.5;
  s.coefficient = Coefficient::scalar(0.7);
  s.base = base_symbols::halfmoon_e_k();
  const Eigen::MatrixXd m = DiscreteNoiseOperator(s, g).dense();
  EXPECT_LE((m + m.transpose()).norm(), 1e-10 * m.norm());
}

TEST(NoiseOperator, DenseMatchesApplyAndFullSymbol)
{
  const TorusGrid g(32);
  const DiscreteNoiseOperator op(hilbert_fractional(0.5, 0.3), g);
  const Eigen::MatrixXd m = op.dense();
  const auto fs = op.full_symbol();
  const Eigen::MatrixXd m2 = dense_matrix(fs);
  EXPECT_LT((m - m2).norm(), 1e-11 * m.norm());
  const auto u = random_band_limited(g, 10, CounterRng(4), 0);
  Eigen::VectorXd mu = m * Eigen::Map<const Eigen::VectorXd>(u.values().data(), 32);
  const auto v = op.apply(u);
  for (int j = 0; j < 32; ++j) EXPECT_NEAR(mu(j), v[j], 1e-12);
  Eigen::VectorXd mtu = m.transpose() * Eigen::Map<const Eigen::VectorXd>(u.values().data(), 32);
  const auto vt = op.apply_transpose(u);
  for (int j = 0; j < 32; ++j) EXPECT_NEAR(mtu(j), vt[j], 1e-12);
}

TEST(SymmetrizedOrder, Examples)
{
  const auto d = estimate_symmetrized_order(transport(), {32, 64, 128});
  EXPECT_TRUE(d.zero_norm);
  EXPECT_EQ(d.slope, 0.0);
  EXPECT_TRUE(d.admissible());

  const auto h = estimate_symmetrized_order(hilbert_fractional(0.5, 0.3), {32, 64, 128});
  EXPECT_FALSE(h.zero_norm);
  EXPECT_LT(h.slope, 0.25);

  const auto v = estimate_symmetrized_order(transport(0.3), {32, 64, 128});
  EXPECT_LT(v.slope, 0.25);

  const auto bad = estimate_symmetrized_order(planted_abs(), {32, 64, 128});
  EXPECT_NEAR(bad.slope, 1.0, 0.05);
  EXPECT_FALSE(bad.admissible());

  EXPECT_THROW((void)estimate_symmetrized_order(transport(), {64}), std::invalid_argument);
}

TEST(EstimateXi, ExactCancellationForMultipliers)
{
  const TorusGrid g(64);
  EXPECT_LE(estimate_Xi({transport()}, g, 1.0, 100, 7), 1e-8);
  EXPECT_EQ(estimate_Xi({}, g, 1.0, 100, 7), 0.0);
  EXPECT_THROW((void)estimate_Xi({transport()}, g, 0.5, 10, 7), std::invalid_argument);
}

namespace {

// Sup of |B(f,f)|/||f||^2_{H^eta} over the band |k| <= N/4, where
// B(f,g) = <Q^2 f, g> + <Q f, Q g> in H^eta, for Q = a(x) d/dx, computed from
// naive matrices and naive DFT inner products (generalized eigenvalues).
double xi_eigen_bound(int n, double eta, double amp)
{
  auto p = [amp](double x, int k) { return (1.0 + amp * std::cos(x)) * oracle::cplx(0.0, k); };
  const Eigen::MatrixXd q = naive_matrix(n, p);
  const int kb = n / 4;
  std::vector<std::vector<double>> basis;
  for (int k = 0; k <= kb; ++k) {
    std::vector<double> c(n), s(n);
    for (int j = 0; j < n; ++j) {
      c[j] = std::cos(k * 2 * pi * j / n);
      s[j] = std::sin(k * 2 * pi * j / n);
    }
    basis.push_back(c);
    if (k > 0) basis.push_back(s);
  }
  const int b = static_cast<int>(basis.size());
  auto coeffs = [n](const std::vector<double>& v) {
    std::vector<oracle::cplx> c(n);
    for (int k = -n / 2 + 1; k <= n / 2; ++k) c[k + n / 2 - 1] = oracle::dft_coefficient(v, k);
    return c;
  };
  auto inner = [n, eta](const std::vector<oracle::cplx>& a, const std::vector<oracle::cplx>& c) {
    double s = 0.0;
    for (int k = -n / 2 + 1; k <= n / 2; ++k) {
      s += std::pow(1.0 + double(k) * k, eta) * (a[k + n / 2 - 1] * std::conj(c[k + n / 2 - 1])).real();
    }
    return s / (2 * pi);
  };
  std::vector<std::vector<oracle::cplx>> fb, qb, q2b;
  for (const auto& v : basis) {
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(v.data(), n);
    Eigen::VectorXd y = q * x;
    Eigen::VectorXd z = q * y;
    fb.push_back(coeffs(v));
    qb.push_back(coeffs(std::vector<double>(y.data(), y.data() + n)));
    q2b.push_back(coeffs(std::vector<double>(z.data(), z.data() + n)));
  }
  Eigen::MatrixXd gm(b, b), w(b, b);
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < b; ++j) {
      gm(i, j) = inner(q2b[i], fb[j]) + inner(qb[i], qb[j]);
      w(i, j) = inner(fb[i], fb[j]);
    }
  }
  const Eigen::MatrixXd sym = 0.5 * (gm + gm.transpose());
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, w);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

TEST(EstimateXi, VariableCoefficientBankStableAndBounded)
{
  const NoiseBank bank{transport(0.3)};
  const double x64 = estimate_Xi(bank, TorusGrid(64), 1.0, 500, 13);
  const double x128 = estimate_Xi(bank, TorusGrid(128), 1.0, 500, 13);
  EXPECT_GT(x128, 0.0);
  EXPECT_TRUE(std::isfinite(x128));
  EXPECT_LE(std::abs(x128 - x64), 0.2 * x64);
  const double bound = xi_eigen_bound(64, 1.0, 0.3);
  EXPECT_LE(x64, bound * (1 + 1e-9));
  EXPECT_GE(x64, 0.9 * bound);
}

TEST(EstimateXi, SandwichedFormsSpotCheck)
{
  const NoiseBank bank{transport(0.3)};
  const TorusGrid g(64);
  const double plain = estimate_Xi(bank, g, 1.0, 200, 3);
  for (int n : {4, 16}) {
    for (bool outer : {true, false}) {
      const double s = estimate_Xi(bank, g, 1.0, 200, 3, {n, outer});
      EXPECT_TRUE(std::isfinite(s));
      EXPECT_LE(s, 4.0 * plain + 1e-12) << n << outer;
    }
  }
}

TEST(CancellationPair, Examples)
{
  const TorusGrid g(32);
  const auto f = wave(g, std::cos, 1);
  auto [a, b] = cancellation_pair_check({transport()}, 0.0, f);
  EXPECT_LT(a, 1e-24);
  EXPECT_NEAR(b, pi * pi, 1e-10);
  auto [c, d] = cancellation_pair_check({identity_channel()}, 0.0, f);
  EXPECT_NEAR(c, pi * pi, 1e-10);
  EXPECT_NEAR(d, pi * pi, 1e-10);
}

TEST(CancellationPair, RatioStableUnderRefinement)
{
  const NoiseBank bank{transport(0.3), hilbert_fractional(0.5, 0.2)};
  std::vector<double> worst;
  for (int n : {64, 128}) {
    const TorusGrid g(n);
    const CounterRng rng(17);
    double w = 0.0;
    for (std::uint64_t s = 0; s < 500; ++s) {
      const auto f = random_band_limited(g, n / 4, rng, s);
      auto [num, den] = cancellation_pair_check(bank, 1.0, f);
      w = std::max(w, num / den);
    }
    worst.push_back(w);
  }
  EXPECT_GT(worst[0], 0.0);
  EXPECT_LE(worst[1], 1.5 * worst[0]);
}

TEST(Gamma0, FromActiveChannels)
{
  auto b = identity_channel();
  b.order = 2.0;
  b.coefficient = Coefficient::scalar(0.0);
  EXPECT_EQ(gamma0({transport(), b}), 1.0);
  b.coefficient = Coefficient::scalar(0.5);
  EXPECT_EQ(gamma0({transport(), b}), 2.0);
  EXPECT_EQ(gamma0({}), 0.0);
}

TEST(BankFile, ParsesBuiltinsAndTables)
{
  const std::string dir = ::testing::TempDir();
  {
    std::ofstream t(dir + "abs_table.json");
    t << R"({"order": 1, "k": [0, 1], "re": [0, 1]})";
    std::ofstream b(dir + "bank.json");
    b << R"({"channels": [
      {"kind": "A", "order": 1, "coefficient": {"fourier": {"mean": 1, "cos": [0.3]}}, "base": "derivative"},
      {"kind": "A", "order": 0.5, "coefficient": 0.2, "base": {"builtin": "hilbert_band", "band": 4}},
      {"kind": "B", "order": 0, "coefficient": {"scalar": 0.1}, "base": "halfmoon_e_k"},
      {"kind": "A", "order": 1, "coefficient": 1, "base": {"table": "abs_table.json"}}
    ]})";
  }
  const auto bank = load_bank(dir + "bank.json");
  ASSERT_EQ(bank.size(), 4u);
  EXPECT_EQ(bank[0].base.name, "derivative");
  EXPECT_NEAR(bank[0].coefficient(0.0), 1.3, 1e-15);
  EXPECT_EQ(bank[1].symbol(5), Complex(0.0));
  EXPECT_NEAR(bank[1].symbol(4).imag(), 2.0, 1e-15);
  EXPECT_NEAR(bank[2].symbol(-3).imag(), -3 / std::sqrt(10.0), 1e-15);
  EXPECT_NEAR(bank[3].symbol(7).real(), 7.0, 1e-12);
  EXPECT_NEAR(bank[3].symbol(-7).real(), 7.0, 1e-12);
}

TEST(BankFile, RejectsInvalidChannels)
{
  using nlohmann::json;
  EXPECT_THROW(parse_bank(json::parse(R"({"channels":[{"kind":"A","order":1.5,"coefficient":1,"base":"derivative"}]})")),
               std::invalid_argument);
  EXPECT_THROW(parse_bank(json::parse(R"({"channels":[{"kind":"B","order":1,"coefficient":{"fourier":{"mean":1,"cos":[1]}},"base":"derivative"}]})")),
               std::invalid_argument);
  EXPECT_THROW(parse_bank(json::parse(R"({"channels":[{"kind":"C","order":1,"coefficient":1,"base":"derivative"}]})")),
               std::invalid_argument);
  EXPECT_THROW(parse_bank(json::parse(R"({"channels":[{"kind":"A","order":1,"coefficient":1,"base":"laplace"}]})")),
               std::invalid_argument);
}
