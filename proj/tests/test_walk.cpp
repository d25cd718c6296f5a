#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "symcocycle/walk.hpp"

using namespace symc;

namespace {

WalkConfig point_mass(double t, double alpha, long m_max) {
  WalkConfig c;
  c.steps = StepSource::point_mass(t);
  c.alpha = alpha;
  c.m_max = m_max;
  c.paths = 10;
  return c;
}

// Unwrapped sum with the circle distance computed from scratch.
long reference_absorption(const WalkConfig& cfg, long index) {
  auto rng = substream(cfg.seed, index);
  const double r = cfg.steps.radius;
  double S = 0.0;
  for (long n = 1; n <= cfg.m_max; ++n) {
    S += r * (2 * std::ldexp(static_cast<double>(rng() >> 11), -53) - 1);
    double d = std::fmod(std::abs(S - kPi / 2), kPi);
    d = std::min(d, kPi - d);
    if (d <= cfg.alpha / 20) return n;
  }
  return -1;
}

}  // namespace

TEST(Walk, PointMassAbsorptionTime) {
  // n 0.01 enters [pi/2 - 0.02, pi/2 + 0.02] first at n = ceil((pi/2 - 0.02) / 0.01) = 156.
  const auto r = simulate_walk(point_mass(0.01, 0.4, 400));
  for (long t : r.absorption) EXPECT_EQ(t, 156);
  EXPECT_EQ(r.failure_prob[155], 1.0);
  EXPECT_EQ(r.failure_prob[156], 0.0);
  ASSERT_TRUE(r.m1);
  EXPECT_EQ(*r.m1, 156);
}

TEST(Walk, NegativeStepsWrapAround) {
  // S_n = -0.01 n mod pi reaches pi/2 + 0.02 at n = ceil((pi/2 - 0.02) / 0.01) as well.
  const auto r = simulate_walk(point_mass(-0.01, 0.4, 400));
  EXPECT_EQ(r.absorption[0], 156);
}

TEST(Walk, DegenerateSourceNeverAbsorbs) {
  auto c = point_mass(0.0, 0.4, 1000);
  const auto r = find_m1(c);
  EXPECT_FALSE(r.m1);
  EXPECT_EQ(r.failure_prob.back(), 1.0);
  EXPECT_FALSE(r.diagnostic.empty());
  EXPECT_TRUE(StepSource::point_mass(kPi).degenerate());
  EXPECT_TRUE(StepSource::empirical({0.0, 0.0}).degenerate());
}

TEST(Walk, MatchesScalarReference) {
  WalkConfig c;
  c.steps = StepSource::uniform(0.05);
  c.alpha = 0.4;
  c.m_max = 3000;
  c.paths = 1000;
  c.seed = 17;
  const auto r = simulate_walk(c);
  for (long i = 0; i < c.paths; ++i) EXPECT_EQ(r.absorption[i], reference_absorption(c, i)) << i;
}

TEST(Walk, FailureProbabilityIsMonotone) {
  WalkConfig c;
  c.steps = StepSource::uniform(0.1);
  c.m_max = 2000;
  c.paths = 500;
  const auto r = simulate_walk(c);
  EXPECT_EQ(r.failure_prob[0], 1.0);
  for (long m = 1; m <= c.m_max; ++m) EXPECT_LE(r.failure_prob[m], r.failure_prob[m - 1]);
  for (long m = 0; m <= c.m_max; ++m) {
    const double p = r.failure_prob[m];
    EXPECT_NEAR(r.std_error[m], std::sqrt(p * (1 - p) / c.paths), 1e-15);
  }
}

TEST(Walk, LargerStepsAbsorbSooner) {
  WalkConfig a;
  a.steps = StepSource::uniform(0.1);
  a.paths = 400;
  a.m_max = 500;
  a.seed = 3;
  WalkConfig b = a;
  b.steps = StepSource::uniform(0.05);
  const auto ra = find_m1(a), rb = find_m1(b);
  ASSERT_TRUE(ra.m1 && rb.m1);
  EXPECT_LT(*ra.m1, *rb.m1);
}

TEST(Walk, GrowthEqualsSingleRun) {
  WalkConfig c;
  c.steps = StepSource::uniform(0.1);
  c.paths = 300;
  c.m_max = 64;
  c.seed = 5;
  const auto grown = find_m1(c);
  ASSERT_TRUE(grown.m1);
  WalkConfig d = c;
  d.m_max = grown.m_max;
  const auto once = simulate_walk(d);
  EXPECT_EQ(once.absorption, grown.absorption);
  EXPECT_EQ(once.failure_prob, grown.failure_prob);
  EXPECT_EQ(*once.m1, *grown.m1);
  const double p = grown.failure_prob[*grown.m1];
  EXPECT_LT(p + 2 * grown.std_error[*grown.m1], c.kappa / 20);
}

TEST(Walk, Determinism) {
  WalkConfig c;
  c.steps = StepSource::empirical({0.01, -0.02, 0.03});
  c.paths = 200;
  c.m_max = 5000;
  c.seed = 99;
  EXPECT_EQ(simulate_walk(c).absorption, simulate_walk(c).absorption);
  c.seed = 100;
  const auto a = simulate_walk(c).absorption;
  c.seed = 99;
  EXPECT_NE(a, simulate_walk(c).absorption);
}

TEST(Walk, Validation) {
  EXPECT_THROW(StepSource::uniform(2.0), Error);
  EXPECT_THROW(StepSource::empirical({}), Error);
  auto c = point_mass(0.01, 0.4, 10);
  c.paths = 0;
  EXPECT_THROW(simulate_walk(c), Error);
  c = point_mass(0.01, 2.0, 10);
  EXPECT_THROW(simulate_walk(c), Error);
}

TEST(Fixed4, ShearMatchesGeneric) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    Vec v = random_unit_vector(4, rng);
    if (!in_cone(v, 1.0)) continue;
    const auto [L, Li] = detail::shear4(Vec4(v));
    EXPECT_LE((L - Mat4(shear_map_Lv(v))).norm(), 1e-13);
    EXPECT_LE((L * Li - Mat4::Identity()).norm(), 1e-13);
    EXPECT_LE(symplectic_defect(Mat(L)), 1e-12);
    EXPECT_NEAR(detail::theta4(Vec4(v)), direction_angle(v), 1e-15);
    // L_v maps dp1 onto the line of v.
    const Vec4 e = (L * Vec4::UnitX()).normalized();
    EXPECT_LE(std::min((e - Vec4(v)).norm(), (e + Vec4(v)).norm()), 1e-13);
  }
}

TEST(Fixed4, KickMatchesMidpointFlow) {
  const KickHamiltonian kh = make_kick_hamiltonian({1.0, 1.5, 0, 0.2, 500});
  detail::Kick4 k;
  k.s = kh.scale;
  k.c = Vec4(kh.H.support_center);
  k.r = kh.H.support_radius;
  k.z = make_bump(BumpKind::Zeta, kh.sigma);
  const auto [steps, err] = detail::calibrate_steps(k, 1e-10, 20, 1);
  EXPECT_LE(err, 1e-10);
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const Vec x = kh.H.support_center + kh.H.support_radius * uniform_in_ball(4, rng);
    const auto a = detail::flow4(k, Vec4(x), steps);
    const auto b = flow(kh.H, 1.0, x, {1e-13, Integrator::Midpoint, 0, false});
    EXPECT_LE((a.end - Vec4(b.endpoint)).norm(), 1e-9);
    EXPECT_LE((a.tangent - Mat4(b.tangent)).norm(), 1e-9);
    EXPECT_NEAR(detail::step_angle(a), kick_angle(kh.H, x, {1e-12, Integrator::Midpoint, 0, false}), 1e-9);
  }
  // Outside the support the map is the identity.
  const Vec4 far = Vec4(kh.H.support_center) + Vec4(0, 0, 0, 2 * kh.H.support_radius);
  EXPECT_EQ(detail::flow4(k, far, steps).tangent, Mat4::Identity());
}

TEST(Cascade, ConeThresholdIsSharp) {
  // Brute force over boundary directions and rank-one perturbations E = e v^T of norm eps.
  std::mt19937_64 rng(5);
  for (double tau : {1.1, 2.0, 3.0}) {
    const double eps = detail::cone_threshold(tau);
    double worst = 0.0;
    for (int t = 0; t < 20000; ++t) {
      Vec4 v = Vec4(random_unit_vector(4, rng));
      const double pn = std::hypot(v(0), v(1)), qn = std::hypot(v(2), v(3));
      v.head<2>() /= std::sqrt(2.0) * pn;
      v.tail<2>() /= std::sqrt(2.0) * qn;
      const Vec4 e = eps * (1 - 1e-9) * Vec4(random_unit_vector(4, rng));
      const Vec4 w = v + e;
      worst = std::max(worst, std::hypot(w(2), w(3)) / std::hypot(w(0), w(1)));
    }
    EXPECT_LE(worst, tau * tau);
    // Slightly above the threshold the extremal perturbation leaves C_{tau^2}.
    const double a = 1 / std::sqrt(1 + std::pow(tau, 4)), b = tau * tau * a;
    const Vec4 v(1 / std::sqrt(2.0), 0, 1 / std::sqrt(2.0), 0);
    const Vec4 w = v + eps * (1 + 1e-6) * Vec4(-b, 0, a, 0);
    EXPECT_GT(std::hypot(w(2), w(3)), tau * tau * std::hypot(w(0), w(1)));
  }
}

TEST(Cascade, ZeroKickNeverArrives) {
  CascadeConfig c;
  c.delta = 0.0;
  c.depth = 30;
  c.itineraries = 50;
  c.nu_samples = 100;
  const auto r = cascade_run(c);
  EXPECT_EQ(r.arrived_fraction, 0.0);
  EXPECT_NEAR(r.not_arrived + r.measure_loss, 1.0, 1e-12);
  for (const auto& it : r.itineraries) {
    EXPECT_EQ(it.final_theta, 0.0);
    EXPECT_LE(it.max_residual, 1e-15);
    EXPECT_NEAR(it.log_norm, 30 * std::log(2.0), 1e-9);
  }
  EXPECT_TRUE(r.wedge_drop.empty);
  EXPECT_EQ(r.wedge_drop.gap, 0.0);
  EXPECT_TRUE(cascade_verify(r).passed);
}

TEST(Cascade, SmallDepthInvariants) {
  CascadeConfig c;
  c.depth = 200;
  c.itineraries = 60;
  c.nu_samples = 500;
  c.rates = {2.0, 3.0};
  c.seed = 4;
  const auto r = cascade_run(c);
  EXPECT_EQ(r.setup.depth, 200);
  EXPECT_NEAR(r.arrived_fraction + r.not_arrived + r.measure_loss, 1.0, 1e-12);
  double by_level = 0;
  for (double x : r.loss_by_level) by_level += x;
  EXPECT_NEAR(by_level, r.measure_loss, 1e-12);
  by_level = 0;
  for (double x : r.arrived_by_level) by_level += x;
  // Arrived boxes are not subdivided again, so their weight is fixed at arrival.
  EXPECT_NEAR(by_level, r.arrived_fraction, 1e-12);
  double hist = 0;
  for (double x : r.theta_histogram) hist += x;
  EXPECT_NEAR(hist, r.arrived_fraction + r.not_arrived, 1e-12);
  const auto v = cascade_verify(r);
  EXPECT_LE(v.max_residual, v.residual_bound);
  EXPECT_LE(v.max_arrived_increment, v.arrived_bound);
  EXPECT_LE(v.max_measure_residual, 1e-9);
  EXPECT_LE(v.total_loss, v.loss_bound);
  EXPECT_TRUE(v.deterministic);
  EXPECT_LE(v.trace_angle_error, 1e-8);
  EXPECT_GT(v.max_kick_deviation, 0.0);
  EXPECT_LT(v.max_kick_deviation, v.eps_prime);
  EXPECT_TRUE(v.passed);
  ASSERT_FALSE(r.trace.empty());
  for (const auto& rec : r.trace) EXPECT_LE(rec.residual, v.residual_bound);
}

TEST(Cascade, ExplicitEtaValidation) {
  CascadeConfig c;
  c.depth = 10;
  c.itineraries = 2;
  c.nu_samples = 100;
  c.eta = 1.0;
  EXPECT_THROW(cascade_run(c), Error);
  c.rates = {1.0};
  EXPECT_THROW(cascade_run(c), Error);
}

TEST(NormDrop, DiagonalRates) {
  CascadeResult r;
  r.config.rates = {2.0};
  r.setup.depth = 4;
  ItinerarySummary a;
  a.arrived = true;
  a.final_direction = {0, 1, 0, 0};
  a.log_norm = 4 * std::log(2.0);
  r.itineraries = {a};
  const auto d = norm_drop_report(r, 10, 3.0);
  EXPECT_FALSE(d.empty);
  EXPECT_NEAR(d.unperturbed_rate, std::log(3.0), 1e-15);
  EXPECT_NEAR(d.perturbed_rate, 0.0, 1e-15);
  EXPECT_NEAR(d.gap, std::log(3.0), 1e-15);
  EXPECT_NEAR(d.component_mass[1], 1.0, 1e-15);
  EXPECT_NEAR(d.perturbed_orbit_rate, 4 * std::log(2.0) / 14, 1e-15);
  EXPECT_NEAR(d.unperturbed_orbit_rate, (4 * std::log(2.0) + 10 * std::log(3.0)) / 14, 1e-15);
  // A direction along dp1 keeps the full rate.
  r.itineraries[0].final_direction = {1, 0, 0, 0};
  EXPECT_NEAR(norm_drop_report(r, 10, 3.0).gap, 0.0, 1e-15);
}
