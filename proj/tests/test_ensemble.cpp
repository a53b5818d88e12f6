#include <gtest/gtest.h>

#include "schlab/ensemble.hpp"

using namespace schlab;

namespace {

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

PathSetup small_setup(int n = 32)
{
  const TorusGrid g(n);
  PathSetup s{Model{}, SchemeConfig{Scheme::ExponentialEM, 1e-3, 0.0, 1.0, 100}, MonitorConfig{},
              GridFunction::sample(g, [](double x) { return 0.5 * std::sin(x); }), 2.0, 42};
  s.model.drift.epsilon = 0.5;
  s.model.drift.theta = 0.75;
  return s;
}

Cloud gaussian_cloud(std::size_t n, double shift, std::uint64_t seed)
{
  const CounterRng rng(seed);
  Cloud c;
  for (std::size_t i = 0; i < n; ++i) c.push_back({rng.normal(0, i) + shift});
  return c;
}

}  // namespace

TEST(ParallelMap, OrderedAndWorkerIndependent)
{
  auto sq = [](std::size_t i) { return static_cast<int>(i * i); };
  const auto a = parallel_map(100, 1, sq);
  const auto b = parallel_map(100, 4, sq);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[7], 49);
  EXPECT_THROW(parallel_map(10, 3, [](std::size_t i) -> int {
                 if (i == 5) throw std::runtime_error("x");
                 return 0;
               }),
               std::runtime_error);

  PathSetup s = small_setup();
  s.model.q_ops = discretize({transport(0.2)}, s.u0.grid());
  const auto t1 = run_paths(s, 6, 1);
  const auto t3 = run_paths(s, 6, 3);
  for (std::size_t p = 0; p < 6; ++p) {
    ASSERT_EQ(t1[p].rows.size(), t3[p].rows.size());
    for (std::size_t i = 0; i < t1[p].rows.size(); ++i) EXPECT_EQ(t1[p].rows[i].h1_sq, t3[p].rows[i].h1_sq);
  }
  EXPECT_NE(t1[0].rows.back().h1_sq, t1[1].rows.back().h1_sq);
}

TEST(MeanSE, Basic)
{
  const auto m = mean_se({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.se, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
  EXPECT_EQ(m.n, 4u);
}

TEST(EnergyDistance, Examples)
{
  const Cloud a = gaussian_cloud(50, 0.0, 1);
  EXPECT_EQ(energy_distance(a, a, 0).distance, 0.0);
  const Cloud p{{0.0, 0.0}}, q{{3.0, 4.0}};
  EXPECT_NEAR(energy_distance(p, q, 0).distance, 10.0, 1e-14);
  EXPECT_THROW((void)energy_distance({}, p), std::invalid_argument);
  EXPECT_THROW((void)energy_distance(p, {{1.0}}), std::invalid_argument);

  // Same distribution: within 3 bootstrap SE.
  const auto same = energy_distance(gaussian_cloud(500, 0.0, 2), gaussian_cloud(500, 0.0, 3), 200, 7);
  EXPECT_GT(same.se, 0.0);
  EXPECT_LE(same.distance, 3 * same.se);
  const auto diff = energy_distance(gaussian_cloud(500, 0.0, 2), gaussian_cloud(500, 1.0, 3), 200, 7);
  EXPECT_GT(diff.distance, 3 * diff.se);
}

TEST(EnergyDistance, MatchesClosedFormForShiftedNormals)
{
  // For N(0,1) vs N(mu,1): 2E|X-Y| - 2E|X-X'| with E|Z| for Z ~ N(m, 2).
  auto e_abs = [](double m, double var) {
    const double s = std::sqrt(var);
    return s * std::sqrt(2 / std::numbers::pi) * std::exp(-m * m / (2 * var)) + m * std::erf(m / (s * std::sqrt(2.0)));
  };
  const double mu = 1.0;
  const double exact = 2 * e_abs(mu, 2.0) - 2 * e_abs(0.0, 2.0);
  const auto e = energy_distance(gaussian_cloud(2000, 0.0, 11), gaussian_cloud(2000, mu, 12), 0);
  EXPECT_NEAR(e.distance, exact, 0.05);
}

TEST(Decay, NoiseOffDeterministicMarginNonNegative)
{
  PathSetup s = small_setup();
  s.model.drift.damping = TimeProfile::constant(0.5);
  s.scheme.t_end = 2.0;
  const auto r = decay_experiment(s, 2, 0.0, 0.0, 1);
  EXPECT_TRUE(r.valid);
  EXPECT_DOUBLE_EQ(r.margin.front(), 0.0);
  EXPECT_GE(r.min_margin(), 0.0);
  for (std::size_t i = 1; i < r.margin.size(); ++i) EXPECT_GT(r.margin[i], 0.0);
  for (const auto& m : r.h1) EXPECT_EQ(m.se, 0.0);

  s.u0 = GridFunction::zero(s.u0.grid());
  const auto z = decay_experiment(s, 2, 0.0, 0.0, 1);
  for (const auto& m : z.h1) EXPECT_EQ(m.mean, 0.0);

  s.model.drift.theta = 0.5;
  EXPECT_THROW((void)decay_experiment(s, 2, 0.0, 0.0, 1), std::invalid_argument);
  s.model.drift.theta = 0.75;
  s.model.ito.family = ItoNoiseSpec::Family::SmoothingQuadratic;
  s.model.ito.channels = 4;
  EXPECT_THROW((void)decay_experiment(s, 2, 0.0, 0.0, 1), std::invalid_argument);
}

TEST(Decay, NoisyEnvelopeHoldsStatistically)
{
  PathSetup s = small_setup();
  const TorusGrid& g = s.u0.grid();
  const NoiseBank bank{transport(0.3)};
  s.model.q_ops = discretize(bank, g);
  s.model.ito.family = ItoNoiseSpec::Family::BandProjection;
  s.model.ito.channels = 16;
  s.model.ito.c_psi = 0.25;
  const double xi = estimate_Xi(bank, g, 1.0, 100, 5);
  const double c0 = linear_growth_c0(s.model.ito);
  s.model.drift.damping = TimeProfile::constant(0.5 * (xi + c0) + 0.3);
  s.scheme.t_end = 2.0;
  const auto r = decay_experiment(s, 32, xi, c0, 1);
  EXPECT_TRUE(r.valid);
  EXPECT_GE(r.min_margin_in_se(), -3.0);
  EXPECT_LT(r.h1.back().mean, r.u0_h1_sq);
}

TEST(Lyapunov, PreconditionAndZeroData)
{
  PathSetup s = small_setup();
  s.model.drift.epsilon = 0.0;
  s.model.ito.family = ItoNoiseSpec::Family::BandProjection;
  s.model.ito.channels = 16;
  LyapunovInputs in;
  in.s = 3.0;
  in.theta = 0.1;
  in.g = TimeProfile::constant(0.0);
  const auto samples = lyapunov_sample_set(s.u0.grid(), 3.0, 20, 1, 0.1, 10.0);
  const auto bad = check_lyapunov_condition(s.model.ito, in, samples);
  EXPECT_FALSE(bad.holds());
  EXPECT_THROW((void)lyapunov_experiment(s, 4, in, bad, 1), LyapunovPreconditionError);

  in.g = TimeProfile::constant(bad.g_required * 1.01);
  const auto good = check_lyapunov_condition(s.model.ito, in, samples);
  EXPECT_TRUE(good.holds());
  s.u0 = GridFunction::zero(s.u0.grid());
  const auto r = lyapunov_experiment(s, 4, in, good, 1);
  EXPECT_EQ(r.v0, 1.0);
  for (const auto& v : r.v) EXPECT_EQ(v.mean, 1.0);
  EXPECT_TRUE(r.bound_holds_within(0.0));
  EXPECT_EQ(r.counts.blowups, 0u);
}

TEST(LyapunovSampleSet, NormsInRange)
{
  const TorusGrid g(64);
  const auto ss = lyapunov_sample_set(g, 2.0, 100, 3, 0.5, 50.0, -1.0, 2.0);
  for (const auto& s : ss) {
    const double n = std::sqrt(sobolev_norm_sq(2.0, s.u));
    EXPECT_GE(n, 0.5 * (1 - 1e-12));
    EXPECT_LE(n, 50.0 * (1 + 1e-12));
    EXPECT_GE(s.t, -1.0);
    EXPECT_LE(s.t, 2.0);
  }
}

TEST(Stability, CoupledLadder)
{
  PathSetup s = small_setup();
  s.model.drift.epsilon = 0.0;
  s.model.ito.family = ItoNoiseSpec::Family::BandProjection;
  s.model.ito.channels = 16;
  s.model.ito.theta_psi = 0.1;
  const TorusGrid& g = s.u0.grid();
  const auto phi = GridFunction::sample(g, [](double x) { return std::cos(8 * x); });
  const auto r = stability_experiment(s, 8, phi, {0.1, 0.05, 0.025, 0.0125}, 1.75, 1);
  EXPECT_TRUE(r.zero_delta_bitwise);
  EXPECT_TRUE(r.strictly_decreasing());
  for (std::size_t e : r.excluded) EXPECT_EQ(e, 0u);
  // Lipschitz flow: the squared difference scales roughly like delta^2.
  EXPECT_NEAR(r.diff[0].mean / r.diff[1].mean, 4.0, 1.0);
  EXPECT_THROW((void)stability_experiment(s, 2, GridFunction::zero(g), {0.1}, 1.75, 1), std::invalid_argument);
}

TEST(Measure, ZeroNoiseCollapsesAndComposes)
{
  PathSetup s = small_setup(16);
  s.model.drift.damping = TimeProfile::constant(12.0);
  s.scheme.dt = 1e-2;
  MeasureOptions o;
  o.paths = 8;
  o.bootstrap = 20;
  const auto r = measure_experiment(s, o, 1);
  EXPECT_TRUE(r.valid);
  EXPECT_EQ(r.clouds.size(), 6u);
  for (const auto& c : r.clouds) {
    for (const auto& p : c.points) EXPECT_LT(std::abs(p[0]), 1e-4);
  }
  for (const auto& d : r.ladder) EXPECT_LT(d.distance, 1e-4);
  EXPECT_TRUE(r.composition_bitwise);
  EXPECT_GT(r.composition_checked, 0u);

  o.handoffs = {5.0};
  EXPECT_THROW((void)measure_experiment(s, o, 1), std::invalid_argument);
}

TEST(Measure, NoisyCompositionIsBitwise)
{
  PathSetup s = small_setup(16);
  s.model.drift.epsilon = 0.0;
  s.model.ito.family = ItoNoiseSpec::Family::BandProjection;
  s.model.ito.channels = 8;
  s.model.q_ops = discretize({transport(0.2)}, s.u0.grid());
  MeasureOptions o;
  o.start_times = {3.0, 4.0};
  o.handoffs = {1.0, 2.0};
  o.t_eval = 0.5;
  o.paths = 6;
  o.bootstrap = 10;
  o.composition_checks = 6;
  const auto r = measure_experiment(s, o, 2);
  EXPECT_TRUE(r.valid);
  EXPECT_TRUE(r.composition_bitwise);
  EXPECT_EQ(r.composition_checked, 6u);
  const auto j = to_json(r);
  EXPECT_EQ(j["experiment"], "measure");
  EXPECT_EQ(j["clouds"].size(), 4u);
}

TEST(OuCalibration, StationaryVariancePerMode)
{
  const TorusGrid g(16);
  PathSetup s{Model{}, SchemeConfig{Scheme::ExponentialEM, 1e-3, 0.0, 1.5, 1}, MonitorConfig{},
              GridFunction::zero(g), 2.0, 17};
  s.model.drift.convection = s.model.drift.nonlocal = false;
  s.model.drift.damping = TimeProfile::constant(2.0);
  s.model.ito.family = ItoNoiseSpec::Family::BandProjection;
  s.model.ito.channels = 7;
  s.model.ito.c_psi = 0.5;
  Coefficient phi;
  phi.cos_terms = std::vector<double>(7, 1.0);
  s.model.ito.fixed_field = phi;
  const auto r = ou_calibration(s, 1024, 1);
  EXPECT_EQ(r.modes.size(), 7u);
  for (const auto& m : r.modes) EXPECT_NEAR(m.expected, 0.125, 1e-12);
  EXPECT_LT(r.max_rel_err(), 0.2);  // ~4.4% relative SE per mode at 1024 paths
  s.model.drift.convection = true;
  EXPECT_THROW((void)ou_calibration(s, 4, 1), std::invalid_argument);
}
