#include <gtest/gtest.h>

#include <limits>
#include <sstream>

#include "oracles.hpp"
#include "schlab/integrator.hpp"

using namespace schlab;

namespace {

double max_diff(const GridFunction& a, const GridFunction& b)
{
  double m = 0.0;
  for (std::size_t j = 0; j < a.values().size(); ++j) m = std::max(m, std::abs(a[j] - b[j]));
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

// Convection and F off: du = Q u o dW.
Model linear_transport(const TorusGrid& g, double amp_cos = 0.0)
{
  Model m;
  m.drift.convection = false;
  m.drift.nonlocal = false;
  m.q_ops = discretize({transport(amp_cos)}, g);
  return m;
}

double w_at(const NoiseDrivers& d, std::int64_t fine_steps)
{
  double w = 0.0;
  for (std::int64_t i = 0; i < fine_steps; ++i) w += d.q.fine_increment(0, i);
  return w;
}

const std::vector<Scheme> kAllSchemes{Scheme::EulerMaruyama, Scheme::StratonovichHeun, Scheme::ExponentialEM,
                                      Scheme::RK4};

}  // namespace

TEST(Step, ConstantIsEquilibrium)
{
  const TorusGrid g(32);
  const auto c = GridFunction::sample(g, [](double) { return 0.8; });
  Model m;
  for (Scheme s : kAllSchemes) {
    const auto v = step(m, s, 0.0, 1e-2, c, {}, {});
    EXPECT_LT(max_diff(v, c), 1e-15) << scheme_name(s);
  }
}

TEST(Step, ExponentialDampingIsExact)
{
  const TorusGrid g(32);
  Model m;
  m.drift.convection = m.drift.nonlocal = false;
  m.drift.damping = TimeProfile::constant(2.0);
  const auto u = random_band_limited(g, 10, CounterRng(1), 0, 0.0, true);
  const double dt = 0.01;
  const auto v = step(m, Scheme::ExponentialEM, 0.0, dt, u, {}, {});
  EXPECT_LT(max_diff(v, std::exp(-2 * dt) * u), 1e-15 * max_abs(u) * 4);
  EXPECT_THROW((void)step(linear_transport(g), Scheme::RK4, 0, dt, u, std::vector<double>{0.1}, {}),
               std::invalid_argument);
}

TEST(Step, HeunIsNearlyConservativeForTransport)
{
  const TorusGrid g(32);
  const Model m = linear_transport(g);
  SchemeConfig sc{Scheme::StratonovichHeun, 1e-3, 0.0, 1.0, 100};
  for (std::uint64_t p = 0; p < 8; ++p) {
    const auto u0 = GridFunction::sample(g, [](double x) { return std::cos(x); });
    const auto tr = run(m, sc, {}, CounterRng(100 + p), u0);
    ASSERT_EQ(tr.outcome, Outcome::Completed);
    const double l0 = tr.rows.front().l2_sq;
    for (const auto& r : tr.rows) EXPECT_LE(std::abs(r.l2_sq - l0) / l0, 1e-4 * r.t + 1e-14);
    // Pathwise exact solution cos(x + W_t).
    const auto d = NoiseDrivers::make(CounterRng(100 + p), m, 1e-3);
    const double w = w_at(d, 1000);
    const auto exact = GridFunction::sample(g, [w](double x) { return std::cos(x + w); });
    EXPECT_LT(max_diff(tr.final_state, exact), 1e-3);
  }
}

TEST(Run, EulerMaruyamaStrongOrder)
{
  const TorusGrid g(32);
  const Model m = linear_transport(g);
  const auto u0 = GridFunction::sample(g, [](double x) { return std::cos(x); });
  const double fine = 1.25e-3;
  const std::vector<int> agg{8, 4, 2, 1};
  std::vector<double> err(agg.size(), 0.0);
  const int paths = 64;
  for (int p = 0; p < paths; ++p) {
    const CounterRng rng(5000 + p);
    const auto d = NoiseDrivers::make(rng, m, fine);
    const double w = w_at(d, 800);
    const auto exact = GridFunction::sample(g, [w](double x) { return std::cos(x + w); });
    for (std::size_t i = 0; i < agg.size(); ++i) {
      RunOptions opt;
      opt.aggregation = agg[i];
      opt.record = false;
      const auto tr = run(m, {Scheme::EulerMaruyama, fine * agg[i], 0.0, 1.0, 1}, {}, rng, u0, opt);
      err[i] += std::sqrt(sobolev_norm_sq(0.0, tr.final_state - exact)) / paths;
    }
  }
  // Least-squares slope of log err against log dt.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < agg.size(); ++i) {
    const double x = std::log(fine * agg[i]), y = std::log(err[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(agg.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_GE(slope, 0.45);
  EXPECT_LE(slope, 0.75);
}

TEST(Run, ItoAndStratonovichMeansAgree)
{
  const TorusGrid g(32);
  const Model m = linear_transport(g, 0.3);
  const auto u0 = GridFunction::sample(g, [](double x) { return std::cos(2 * x); });
  const int paths = 256;
  double mean[2] = {0, 0}, sq[2] = {0, 0};
  int i = 0;
  for (Scheme s : {Scheme::EulerMaruyama, Scheme::StratonovichHeun}) {
    for (int p = 0; p < paths; ++p) {
      RunOptions opt;
      opt.record = false;
      const auto tr = run(m, {s, 1e-3, 0.0, 1.0, 1}, {}, CounterRng(900 + p), u0, opt);
      ASSERT_EQ(tr.outcome, Outcome::Completed);
      const double l2 = sobolev_norm_sq(0.0, tr.final_state);
      mean[i] += l2 / paths;
      sq[i] += l2 * l2 / paths;
    }
    ++i;
  }
  const double se = std::sqrt((sq[0] - mean[0] * mean[0]) / paths + (sq[1] - mean[1] * mean[1]) / paths);
  EXPECT_LE(std::abs(mean[0] - mean[1]), 3 * se) << mean[0] << " " << mean[1];
}

TEST(Run, RK4ConservesH1)
{
  const TorusGrid g(64);
  Model m;
  const auto u0 = GridFunction::sample(g, [](double x) { return 0.3 * std::sin(x) + 0.1 * std::cos(2 * x); });
  const auto tr = run(m, {Scheme::RK4, 1e-3, 0.0, 0.5, 50}, {}, CounterRng(1), u0);
  ASSERT_EQ(tr.outcome, Outcome::Completed);
  const double h0 = tr.rows.front().h1_sq;
  for (const auto& r : tr.rows) EXPECT_LE(std::abs(r.h1_sq - h0) / h0, 1e-10);
}

TEST(Run, DeterministicFirstOrderConvergence)
{
  const TorusGrid g(64);
  Model m;
  m.drift.epsilon = 0.1;
  m.drift.theta = 0.75;
  m.drift.damping = TimeProfile::constant(0.5);
  const auto u0 = GridFunction::sample(g, [](double x) { return 0.4 * std::sin(x) + 0.1 * std::cos(3 * x); });
  RunOptions opt;
  opt.record = false;
  const auto ref = run(m, {Scheme::RK4, 1e-4, 0.0, 0.5, 1}, {}, CounterRng(0), u0, opt).final_state;
  for (Scheme s : {Scheme::EulerMaruyama, Scheme::ExponentialEM}) {
    std::vector<double> e;
    for (double dt : {4e-3, 2e-3, 1e-3}) {
      const auto v = run(m, {s, dt, 0.0, 0.5, 1}, {}, CounterRng(0), u0, opt).final_state;
      e.push_back(std::sqrt(sobolev_norm_sq(0.0, v - ref)));
    }
    EXPECT_GE(std::log2(e[0] / e[1]), 0.9) << scheme_name(s);
    EXPECT_GE(std::log2(e[1] / e[2]), 0.9) << scheme_name(s);
  }
}

TEST(Run, DampingEnvelopePerStep)
{
  const TorusGrid g(64);
  Model m;
  m.drift.epsilon = 0.2;
  m.drift.theta = 1.0;
  m.drift.damping = TimeProfile::sine_plus(0.7, 2.0);
  const auto u0 = random_band_limited(g, 8, CounterRng(3), 0, 1.0);
  const double dt = 1e-3;
  for (Scheme s : {Scheme::EulerMaruyama, Scheme::ExponentialEM}) {
    const auto tr = run(m, {s, dt, 0.0, 1.0, 1}, {}, CounterRng(0), u0);
    for (std::size_t i = 1; i < tr.rows.size(); ++i) {
      const double env = tr.rows[i - 1].h1_sq * std::exp(-2 * m.drift.damping.integral(tr.rows[i - 1].t, tr.rows[i].t));
      EXPECT_LE(tr.rows[i].h1_sq - env, dt * dt * tr.rows[i - 1].h1_sq) << scheme_name(s) << " " << i;
    }
  }
}

TEST(Run, TimeShiftInvarianceForAutonomousProfiles)
{
  const TorusGrid g(32);
  Model m;
  m.drift.epsilon = 0.5;
  m.drift.damping = TimeProfile::constant(0.3);
  const auto u0 = GridFunction::sample(g, [](double x) { return std::sin(x); });
  const auto a = run(m, {Scheme::ExponentialEM, 1e-3, -3.0, 0.0, 100}, {}, CounterRng(2), u0);
  const auto b = run(m, {Scheme::ExponentialEM, 1e-3, 0.0, 3.0, 100}, {}, CounterRng(2), u0);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    EXPECT_NEAR(a.rows[i].t + 3.0, b.rows[i].t, 1e-12);
    EXPECT_EQ(a.rows[i].h1_sq, b.rows[i].h1_sq);
  }
  EXPECT_EQ(max_diff(a.final_state, b.final_state), 0.0);
}

TEST(Run, PropagatorCompositionIsBitwise)
{
  const TorusGrid g(32);
  Model m = linear_transport(g, 0.2);
  m.drift = DriftConfig{};
  m.drift.epsilon = 0.3;
  m.ito.family = ItoNoiseSpec::Family::BandProjection;
  m.ito.channels = 8;
  const auto u0 = GridFunction::sample(g, [](double x) { return 0.5 * std::sin(x); });
  RunOptions opt;
  opt.record = false;
  const CounterRng rng(77);
  const auto whole = run(m, {Scheme::ExponentialEM, 1e-3, -2.0, 0.5, 1}, {}, rng, u0, opt);
  const auto first = run(m, {Scheme::ExponentialEM, 1e-3, -2.0, -0.75, 1}, {}, rng, u0, opt);
  const auto second = run(m, {Scheme::ExponentialEM, 1e-3, -0.75, 0.5, 1}, {}, rng, first.final_state, opt);
  EXPECT_EQ(max_diff(whole.final_state, second.final_state), 0.0);
}

TEST(Monitor, Examples)
{
  const TorusGrid g(64);
  MonitorConfig mc;
  mc.w1inf_threshold = 10.0;
  mc.slope_integral_threshold = 0.5;
  BlowupMonitor a(mc);
  // max|u_x| = 20 = 2 * threshold.
  const auto steep = GridFunction::sample(g, [](double x) { return std::sin(20 * x); });
  const auto d = a.detect(steep, 0.0, 1e-3);
  ASSERT_TRUE(d);
  EXPECT_EQ(d->kind, 1);

  // Unit slope: the integral equals t, so kind 2 fires exactly when t reaches the threshold.
  BlowupMonitor b(mc);
  const auto unit = GridFunction::sample(g, [](double x) { return std::sin(x); });
  const double slope = max_abs(derivative(unit));
  EXPECT_NEAR(slope, 1.0, 1e-14);
  int fired = -1;
  for (int j = 1; j <= 1000; ++j) {
    if (b.detect(unit, j * 1e-3, 1e-3)) {
      fired = j;
      break;
    }
  }
  EXPECT_GE(fired * 1e-3 * slope, 0.5 - 1e-12);
  EXPECT_LE(std::abs(fired - 500), 1);

  mc.w1inf_threshold = -1;
  EXPECT_THROW(BlowupMonitor{mc}, std::invalid_argument);
}

TEST(Run, NumericalFailureIsNotBlowup)
{
  const TorusGrid g(32);
  Model m;
  m.drift.epsilon = 1e6;
  m.drift.convection = m.drift.nonlocal = false;
  const auto u0 = GridFunction::sample(g, [](double x) { return std::cos(3 * x); });
  MonitorConfig mc;
  mc.w1inf_threshold = mc.slope_integral_threshold = mc.cfl = std::numeric_limits<double>::infinity();
  const auto tr = run(m, {Scheme::EulerMaruyama, 1e-2, 0.0, 10.0, 1}, mc, CounterRng(0), u0);
  EXPECT_EQ(tr.outcome, Outcome::NumericalFailure);
  EXPECT_FALSE(tr.blowup);
  for (const auto& r : tr.rows) EXPECT_TRUE(std::isfinite(r.h1_sq));

  // Same state with the default monitor: the threshold is crossed first.
  const auto tb = run(m, {Scheme::EulerMaruyama, 1e-2, 0.0, 10.0, 1}, {.cfl = 1e300}, CounterRng(0), u0);
  EXPECT_EQ(tb.outcome, Outcome::BlowUp);
  ASSERT_TRUE(tb.blowup);
  EXPECT_EQ(tb.rows.back().blowup_kind, tb.blowup->kind);
}

TEST(Run, CflGuardAndAdaptiveHalving)
{
  const TorusGrid g(64);
  Model m;
  m.drift.epsilon = 0.5;
  m.drift.theta = 0.75;
  const auto u0 = GridFunction::sample(g, [](double x) { return 2.0 * std::sin(3 * x); });
  const SchemeConfig sc{Scheme::ExponentialEM, 0.1, 0.0, 0.5, 1};
  const auto strict = run(m, sc, {}, CounterRng(0), u0);
  EXPECT_EQ(strict.outcome, Outcome::NumericalFailure);
  EXPECT_NE(strict.failure.find("CFL"), std::string::npos);

  MonitorConfig mc;
  mc.adaptive_halving = true;
  const auto halved = run(m, sc, mc, CounterRng(0), u0);
  EXPECT_EQ(halved.outcome, Outcome::Completed);
  EXPECT_GT(halved.halvings, 0);
}

TEST(Run, BridgeHalvingKeepsTheIncrementTotal)
{
  // Linear transport is exactly solvable along the path, so the halved run must
  // still track cos(x + W_t) with W_t built from the unsplit increments.
  const TorusGrid g(32);
  const Model m = linear_transport(g);
  const auto u0 = GridFunction::sample(g, [](double x) { return 3.0 * std::cos(x); });
  MonitorConfig mc;
  mc.cfl = 1e-3;
  mc.adaptive_halving = true;
  const auto tr = run(m, {Scheme::StratonovichHeun, 1e-2, 0.0, 0.2, 1}, mc, CounterRng(4), u0);
  ASSERT_EQ(tr.outcome, Outcome::Completed);
  EXPECT_GT(tr.halvings, 0);
  const auto d = NoiseDrivers::make(CounterRng(4), m, 1e-2);
  const double w = w_at(d, 20);
  const auto exact = GridFunction::sample(g, [w](double x) { return 3.0 * std::cos(x + w); });
  EXPECT_LT(max_diff(tr.final_state, exact), 1e-4);
}

TEST(Run, ReproducibleAndRecorded)
{
  const TorusGrid g(32);
  Model m = linear_transport(g, 0.1);
  m.drift = DriftConfig{};
  m.ito.family = ItoNoiseSpec::Family::SmoothingQuadratic;
  m.ito.channels = 4;
  const auto u0 = GridFunction::sample(g, [](double x) { return 0.5 * std::cos(x); });
  std::ostringstream snaps;
  RunOptions opt;
  opt.keep_snapshots = true;
  opt.on_record = [&](const DiagnosticRow&, const GridFunction& u) { write_snapshot(snaps, u); };
  const SchemeConfig sc{Scheme::EulerMaruyama, 1e-3, 0.0, 0.1, 10};
  const auto a = run(m, sc, {}, CounterRng(9), u0, opt);
  const auto b = run(m, sc, {}, CounterRng(9), u0);
  const auto c = run(m, sc, {}, CounterRng(10), u0);
  std::ostringstream ca, cb, cc;
  write_trajectory_csv(ca, a.rows);
  write_trajectory_csv(cb, b.rows);
  write_trajectory_csv(cc, c.rows);
  EXPECT_EQ(ca.str(), cb.str());
  EXPECT_NE(ca.str(), cc.str());
  EXPECT_EQ(ca.str().substr(0, ca.str().find('\n')), "t,l2_sq,h1_sq,hs_sq,w1inf,min_ux,max_u,slope_int,blowup_kind");
  EXPECT_EQ(a.rows.size(), 11u);
  EXPECT_EQ(a.snapshots.size(), 11u);

  std::istringstream in(snaps.str());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    const auto u = read_snapshot(in);
    EXPECT_EQ(max_diff(u, a.snapshots[i]), 0.0);
    EXPECT_NEAR(sobolev_norm_sq(1.0, u), a.rows[i].h1_sq, 1e-13 * a.rows[i].h1_sq);
  }
  EXPECT_THROW((void)run(m, {Scheme::EulerMaruyama, 1e-3, 0.00005, 0.1, 1}, {}, CounterRng(9), u0),
               std::invalid_argument);
}

TEST(Run, ViscousRegimeStaysSmooth)
{
  const TorusGrid g(128);
  Model m;
  m.drift.epsilon = 0.5;
  m.drift.theta = 0.75;
  const auto u0 = GridFunction::sample(g, [](double x) { return std::sin(x); });
  const auto tr = run(m, {Scheme::ExponentialEM, 1e-3, 0.0, 3.0, 100}, {}, CounterRng(0), u0);
  EXPECT_EQ(tr.outcome, Outcome::Completed);
  for (std::size_t i = 1; i < tr.rows.size(); ++i) EXPECT_LE(tr.rows[i].h1_sq, tr.rows[i - 1].h1_sq);
}
