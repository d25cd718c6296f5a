#include <gtest/gtest.h>

#include <random>

#include "symcocycle/symplin.hpp"

using namespace symc;

namespace {

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

Mat diag(std::initializer_list<double> xs) { return vec(xs).asDiagonal(); }

// Span equality through mutual projection.
bool same_span(const Subspace& E, const Subspace& F, double tol) {
  return E.dim() == F.dim() && span_distance(E, F) <= tol;
}

}  // namespace

TEST(StandardForm, SmallCases) {
  Mat J1(2, 2);
  J1 << 0, -1, 1, 0;
  EXPECT_EQ(standard_form_matrix(1), J1);
  const Vec p1 = Vec::Unit(4, 0), q1 = Vec::Unit(4, 2), p2 = Vec::Unit(4, 1);
  EXPECT_DOUBLE_EQ(omega(p1, q1), 1.0);
  EXPECT_DOUBLE_EQ((standard_form_matrix(2) * p1).dot(q1), 1.0);
  EXPECT_DOUBLE_EQ(omega(p1, p2), 0.0);
  EXPECT_THROW(standard_form_matrix(0), Error);
}

TEST(IsSymplectic, Examples) {
  EXPECT_TRUE(is_symplectic(Mat::Identity(2, 2), 0.0));
  EXPECT_TRUE(is_symplectic(diag({2, 0.5}), 1e-12));
  EXPECT_FALSE(is_symplectic(diag({2, 1}), 1e-12));
  EXPECT_THROW(is_symplectic(Mat::Identity(3, 3), 1e-12), Error);
}

TEST(OperatorStats, Diagonal) {
  const auto s = operator_stats(diag({3, 1.0 / 3}), 1);
  EXPECT_NEAR(s.norm, 3, 1e-14);
  EXPECT_NEAR(s.conorm, 1.0 / 3, 1e-14);
  EXPECT_NEAR(s.wedge_p_norm, 3, 1e-14);
  EXPECT_NEAR(operator_stats(diag({2, 2, 0.5, 0.5}), 2).wedge_p_norm, 4, 1e-14);
  EXPECT_THROW(operator_stats(Mat::Zero(2, 2), 1), Error);
}

TEST(OperatorStats, WedgeNormMatchesBruteForceArea) {
  // A = R_0.7 [[I,0],[S,I]] diag(2,1.5,1/2,1/1.5); maximal 2-frame area expansion
  // found by random search plus hill climbing over orthonormal frames.
  Mat S(2, 2);
  S << 0.3, -0.2, -0.2, 0.5;
  Mat M = Mat::Identity(4, 4);
  M.bottomLeftCorner(2, 2) = S;
  const Mat A = rotation_Rt(0.7) * M * diag({2, 1.5, 0.5, 1 / 1.5});
  ASSERT_TRUE(is_symplectic(A, 1e-12));
  EXPECT_NEAR(operator_stats(A, 2).wedge_p_norm, 3.658455693446, 1e-6);
  EXPECT_NEAR(spectral_norm(wedge_power(A, 2)), 3.658455693446, 1e-6);
}

TEST(SubspaceAngle, Planar) {
  const Subspace p1 = coordinate_subspace(4, {0}), q1 = coordinate_subspace(4, {2});
  EXPECT_NEAR(subspace_angle(p1, q1), kPi / 2, 1e-15);
  EXPECT_NEAR(subspace_angle(p1, p1), 0.0, 1e-15);
  Vec w = std::cos(0.3) * Vec::Unit(4, 0) + std::sin(0.3) * Vec::Unit(4, 2);
  EXPECT_NEAR(subspace_angle(p1, make_subspace(w)), 0.3, 1e-14);
  EXPECT_NEAR(subspace_angle(p1, make_subspace(Vec(Vec::Unit(4, 0) + 1e-9 * Vec::Unit(4, 1)))), 1e-9, 1e-15);
  EXPECT_THROW(subspace_angle(p1, coordinate_subspace(2, {0})), Error);
}

TEST(SymplecticComplement, CoordinateCases) {
  EXPECT_TRUE(same_span(symplectic_complement(coordinate_subspace(2, {0})), coordinate_subspace(2, {0}), 1e-14));
  EXPECT_TRUE(same_span(symplectic_complement(coordinate_subspace(4, {0, 1})), coordinate_subspace(4, {0, 1}), 1e-14));
  EXPECT_TRUE(same_span(symplectic_complement(coordinate_subspace(4, {0, 2})), coordinate_subspace(4, {1, 3}), 1e-14));
}

TEST(SymplecticComplement, InvolutionAndNullPairing) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 1 + trial % 5;
    Mat X = Mat::Random(6, k);
    const Subspace E = make_subspace(X);
    const Subspace W = symplectic_complement(E);
    ASSERT_EQ(W.dim(), 6 - k);
    EXPECT_LE((E.basis.transpose() * standard_form_matrix(3) * W.basis).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_TRUE(same_span(symplectic_complement(W), E, 1e-10));
  }
}

TEST(OrthosymplecticExtend, CanonicalPairCompletes) {
  const auto ext = orthosymplectic_extend({Vec::Unit(4, 0)}, {Vec::Unit(4, 2)}, 1.0);
  EXPECT_NEAR(std::abs(ext.basis(1, 1)), 1.0, 1e-14);
  EXPECT_NEAR(std::abs(ext.basis(3, 3)), 1.0, 1e-14);
  EXPECT_LE((ext.chart * ext.chart.transpose() - Mat::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(OrthosymplecticExtend, RescaledPair) {
  const auto ext = orthosymplectic_extend({vec({2, 0})}, {vec({0, 0.5})}, 2.0);
  EXPECT_LE((ext.chart - diag({0.5, 2})).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_TRUE(is_symplectic(ext.chart, 1e-14));
}

TEST(OrthosymplecticExtend, RandomPairsRespectBound) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const Mat C = random_bounded_symplectic(2, rng, 2.0);
    const Vec e = C.col(0), f = C.col(2);
    const double K1 = std::max(e.norm(), f.norm());
    const auto ext = orthosymplectic_extend({e}, {f}, K1);
    ASSERT_LE(symplectic_defect(ext.basis), 1e-10);
    EXPECT_LE((ext.basis.col(0) - e).norm(), 1e-14);
    EXPECT_LE((ext.basis.col(2) - f).norm(), 1e-14);
    EXPECT_LE(spectral_norm(ext.chart), ext.norm_bound);
    EXPECT_LE(spectral_norm(ext.basis), ext.norm_bound);
  }
}

TEST(OrthosymplecticExtend, RejectsNonPairedInput) {
  EXPECT_THROW(orthosymplectic_extend({Vec::Unit(4, 0)}, {Vec::Unit(4, 1)}, 1.0), Error);
  EXPECT_THROW(orthosymplectic_extend({Vec::Unit(2, 0), Vec::Unit(2, 0)}, {Vec::Unit(2, 1), Vec::Unit(2, 1)}, 1.0), Error);
}

TEST(DualVector, CanonicalPairs) {
  const auto d1 = dual_vector(Vec::Unit(2, 0), coordinate_subspace(2, {0}), coordinate_subspace(2, {1}));
  EXPECT_LE((d1.v_star - Vec::Unit(2, 1)).norm(), 1e-14);
  EXPECT_NEAR(d1.pairing, 1.0, 1e-14);
  const auto d2 = dual_vector(Vec::Unit(4, 0), coordinate_subspace(4, {0}), coordinate_subspace(4, {2, 3}));
  EXPECT_LE((d2.v_star - Vec::Unit(4, 2)).norm(), 1e-14);
  EXPECT_NEAR(d2.pairing, 1.0, 1e-14);
  EXPECT_THROW(dual_vector(Vec::Unit(2, 0), coordinate_subspace(2, {0}), coordinate_subspace(2, {0})), Error);
}

TEST(DualVector, PairingBoundFromAngle) {
  std::mt19937_64 rng(3);
  int checked = 0;
  while (checked < 300) {
    const Subspace E = make_subspace(random_unit_vector(4, rng));
    const Subspace F = make_subspace(random_unit_vector(4, rng));
    const double beta = subspace_angle(symplectic_complement(E), F);
    if (beta <= 0.3) continue;
    const auto d = dual_vector(E.basis.col(0), E, F);
    EXPECT_GE(d.pairing, 1.0 / d.B - 1e-12);
    EXPECT_GE(d.pairing, std::sin(0.3));
    EXPECT_LE(distance_to_subspace(d.v_star, F), 1e-12);
    ++checked;
  }
}

TEST(RotationRt, Examples) {
  EXPECT_LE((rotation_Rt(0) - Mat::Identity(4, 4)).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((rotation_Rt(kPi / 2) * Vec::Unit(4, 0) - Vec::Unit(4, 1)).norm(), 1e-15);
  EXPECT_TRUE(is_symplectic(rotation_Rt(0.7), 1e-12));
  EXPECT_LE((rotation_Rt(0.4) * rotation_Rt(-1.3) - rotation_Rt(-0.9)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DirectionAngle, Examples) {
  EXPECT_NEAR(direction_angle(vec({1, 0, 0.5, -0.2})), 0.0, 1e-15);
  EXPECT_NEAR(direction_angle(vec({0, 3, 0, 0})), kPi / 2, 1e-15);
  EXPECT_NEAR(direction_angle(vec({1, 1, 0, 0})), kPi / 4, 1e-15);
  EXPECT_NEAR(direction_angle(vec({-1, -1, 4, 0})), kPi / 4, 1e-15);
  EXPECT_THROW(direction_angle(vec({0, 0, 1, 0})), Error);
}

TEST(CircleDistance, Examples) {
  EXPECT_NEAR(circle_distance(0.1, 0.1), 0.0, 1e-15);
  EXPECT_NEAR(circle_distance(0.05, kPi - 0.05), 0.1, 1e-15);
  EXPECT_NEAR(circle_distance(0, kPi / 2), kPi / 2, 1e-15);
}

TEST(ShearMap, Examples) {
  EXPECT_LE((shear_map_Lv(Vec::Unit(4, 0)) - Mat::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-15);
  const Vec v = vec({1, 0, 0.5, 0.3}).normalized();
  const Mat L = shear_map_Lv(v);
  EXPECT_NEAR(L(2, 0), 0.5, 1e-14);
  EXPECT_NEAR(L(2, 1), 0.3, 1e-14);
  EXPECT_NEAR(L(3, 0), 0.3, 1e-14);
  EXPECT_LE(distance_to_subspace(L.col(0), make_subspace(v)), 1e-14);
  EXPECT_THROW(shear_map_Lv(vec({1, 0, 2, 0})), Error);
}

TEST(ShearMap, AngleAdditivityAndNorms) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ang(0, 2 * kPi), rad(0, 0.999);
  auto cone_vec = [&]() {
    const double a = ang(rng), b = ang(rng), r = rad(rng);
    return vec({std::cos(a), std::sin(a), r * std::cos(b), r * std::sin(b)});
  };
  for (int k = 0; k < 2000; ++k) {
    const Vec v = cone_vec(), w = cone_vec();
    const Mat L = shear_map_Lv(v);
    ASSERT_LE(symplectic_defect(L), 1e-10);
    const double d = centered_mod_pi(direction_angle(L * w) - direction_angle(w) - direction_angle(v));
    EXPECT_LE(std::abs(d), 1e-10);
    EXPECT_NEAR(spectral_norm(L), spectral_norm(symplectic_inverse(L)), 1e-10);
  }
  std::mt19937_64 rng2(1);
  const double KL = measure_KL(20000, rng2);
  EXPECT_LT(KL, std::sqrt(3.0) + 1e-12);
  EXPECT_GT(KL, 1.6);
}
