#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "symcocycle/cocycle.hpp"

using namespace symc;

namespace {

// log of the larger root of t^2 - 3t + 1, the characteristic polynomial of [[2,1],[1,1]].
const double kCatRate = std::log((3.0 + std::sqrt(5.0)) / 2.0);

Mat diag(std::initializer_list<double> xs) {
  Vec v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v.asDiagonal();
}

std::vector<Mat> constant(const Mat& A, int n) { return std::vector<Mat>(n, A); }

}  // namespace

TEST(GenerateCocycle, CatMap) {
  const auto mats = generate_cocycle({SourceKind::CatMap}, 3);
  ASSERT_EQ(mats.size(), 3u);
  for (const auto& A : mats) EXPECT_EQ(A, cat_matrix());
}

TEST(GenerateCocycle, ConstantMatrix) {
  OrbitSource src{SourceKind::ConstantMatrix};
  src.matrix = diag({2, 2, 0.5, 0.5});
  const auto mats = generate_cocycle(src, 5);
  ASSERT_EQ(mats.size(), 5u);
  EXPECT_EQ(mats[4], src.matrix);
  src.matrix = diag({2, 1});
  EXPECT_THROW(generate_cocycle(src, 1), Error);
}

TEST(GenerateCocycle, CoupledStandardMapIsSymplecticAndDeterministic) {
  OrbitSource src{SourceKind::CoupledStandardMap, {0.9, 0.9, 0.05}, 42};
  const auto a = generate_cocycle(src, 100), b = generate_cocycle(src, 100);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(is_symplectic(a[i], 1e-9));
    EXPECT_EQ(a[i], b[i]);
  }
  src.seed = 43;
  EXPECT_NE(generate_cocycle(src, 1)[0], a[0]);
}

TEST(GenerateCocycle, JacobianMatchesFiniteDifferences) {
  CoupledStandardMap f{0.9, 0.7, 0.05};
  Vec x(4);
  x << 0.3, -0.2, 1.1, 2.5;
  const Mat D = f.jacobian(x);
  for (int j = 0; j < 4; ++j) {
    const double h = 1e-6;
    Vec xp = x, xm = x;
    xp(j) += h, xm(j) -= h;
    // Undo the mod 2pi wrap on q by comparing unwrapped images.
    auto raw = [&](Vec y) {
      const double s = std::sin(y(2) + y(3));
      y(0) += f.K1 * std::sin(y(2)) + f.b * s;
      y(1) += f.K2 * std::sin(y(3)) + f.b * s;
      y(2) += y(0);
      y(3) += y(1);
      return y;
    };
    const Vec col = (raw(xp) - raw(xm)) / (2 * h);
    EXPECT_LE((col - D.col(j)).norm(), 1e-8);
  }
}

TEST(SymplecticDirectSum, InterleavesBlocks) {
  const Mat S = symplectic_direct_sum(cat_matrix(), diag({3, 1.0 / 3}));
  EXPECT_TRUE(is_symplectic(S, 1e-14));
  EXPECT_EQ(S(0, 0), 2);
  EXPECT_EQ(S(0, 2), 1);
  EXPECT_EQ(S(2, 0), 1);
  EXPECT_EQ(S(1, 1), 3);
  EXPECT_DOUBLE_EQ(S(3, 3), 1.0 / 3);
}

TEST(LyapunovSpectrum, CatMapAllMethods) {
  const auto mats = generate_cocycle({SourceKind::CatMap}, 100);
  const auto exact = finite_lyapunov_spectrum(mats, SpectrumMethod::ExactEigen);
  EXPECT_NEAR(exact.exponents[0], kCatRate, 1e-12);
  EXPECT_NEAR(exact.exponents[1], -kCatRate, 1e-12);
  EXPECT_NEAR(kCatRate, 0.962424, 1e-6);
  EXPECT_NEAR(finite_lyapunov_spectrum(mats, SpectrumMethod::QR).exponents[0], kCatRate, 1e-6);
  EXPECT_LE(finite_lyapunov_spectrum(mats, SpectrumMethod::QR).symmetry_defect, 1e-10);
  const auto svd = finite_lyapunov_spectrum(mats, SpectrumMethod::SVD);
  EXPECT_NEAR(svd.exponents[0], kCatRate, 1e-6);
  EXPECT_LE(svd.symmetry_defect, 1e-10);
}

TEST(LyapunovSpectrum, IdentityIsZero) {
  const auto mats = constant(Mat::Identity(4, 4), 10);
  for (auto m : {SpectrumMethod::QR, SpectrumMethod::SVD, SpectrumMethod::ExactEigen})
    for (double e : finite_lyapunov_spectrum(mats, m).exponents) EXPECT_NEAR(e, 0.0, 1e-14);
}

TEST(LyapunovSpectrum, DiagonalQR) {
  const auto sp = finite_lyapunov_spectrum(constant(diag({2, 2, 0.5, 0.5}), 50), SpectrumMethod::QR);
  const double l2 = std::log(2.0);
  EXPECT_NEAR(sp.exponents[0], l2, 1e-10);
  EXPECT_NEAR(sp.exponents[1], l2, 1e-10);
  EXPECT_NEAR(sp.exponents[2], -l2, 1e-10);
  EXPECT_NEAR(sp.exponents[3], -l2, 1e-10);
}

TEST(LyapunovSpectrum, QRAndSVDAgreeOnConstantCocycles) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 20; ++t) {
    const auto mats = constant(random_symplectic(2, rng, 0.6), 100);
    const auto q = finite_lyapunov_spectrum(mats, SpectrumMethod::QR);
    const auto s = finite_lyapunov_spectrum(mats, SpectrumMethod::SVD);
    const auto e = finite_lyapunov_spectrum(mats, SpectrumMethod::ExactEigen);
    EXPECT_LE(q.symmetry_defect, 1e-10);
    EXPECT_LE(s.symmetry_defect, 1e-10);
    EXPECT_LE(e.symmetry_defect, 1e-10);
    // Both finite-time estimates sit within the 1/n transient of the eigenvalue moduli.
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(s.exponents[i], e.exponents[i], 0.1);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(q.exponents[i], e.exponents[i], 0.1);
  }
}

TEST(LyapunovSpectrum, StandardMapSymmetry) {
  const auto mats = generate_cocycle({SourceKind::CoupledStandardMap, {}, 7}, 10000);
  const auto qr = finite_lyapunov_spectrum(mats, SpectrumMethod::QR);
  EXPECT_LE(qr.symmetry_defect, 1e-10);
  EXPECT_GT(qr.exponents[0], 0.0);
}

TEST(LambdaPhi, WedgeIdentity) {
  const auto mats = constant(diag({2, 2, 0.5, 0.5}), 20);
  const auto r = lambda_p_and_phi(mats, 1, 20);
  EXPECT_NEAR(r.Lpm1, 0.0, 1e-15);
  EXPECT_NEAR(r.Lp, std::log(2.0), 1e-12);
  EXPECT_NEAR(r.Lpp1, 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(r.Phi, std::log(2.0), 1e-12);
  const auto z = lambda_p_and_phi(constant(Mat::Identity(4, 4), 5), 2, 5);
  EXPECT_NEAR(z.Lp, 0, 1e-15);
  EXPECT_NEAR(z.Phi, 0, 1e-15);
  const auto cc = constant(symplectic_direct_sum(cat_matrix(), cat_matrix()), 200);
  const auto c = lambda_p_and_phi(cc, 2, 200);
  // Finite-time transient: log of the eigenvector condition of cat, divided by n.
  EXPECT_NEAR(c.Lp, 2 * kCatRate, 1e-6);
  EXPECT_NEAR(c.Phi, kCatRate, 1e-6);
  const auto diagmats = constant(diag({3, 1.5, 1.0 / 3, 1 / 1.5}), 30);
  const auto qr = finite_lyapunov_spectrum(diagmats, SpectrumMethod::QR);
  EXPECT_NEAR(lambda_p_and_phi(diagmats, 2, 30).Lp, qr.exponents[0] + qr.exponents[1], 1e-6);
}

TEST(OseledetsSplitting, DiagonalCocycle) {
  const auto s = oseledets_splitting(constant(diag({2, 1, 0.5, 1}), 30), 1);
  EXPECT_LE(span_distance(s.Eu[0], coordinate_subspace(4, {0})), 1e-10);
  EXPECT_LE(span_distance(s.Es[0], coordinate_subspace(4, {2})), 1e-10);
  EXPECT_LE(span_distance(s.Ec[0], coordinate_subspace(4, {1, 3})), 1e-10);
  EXPECT_LE(span_distance(s.Ec[30], coordinate_subspace(4, {1, 3})), 1e-10);
  EXPECT_THROW(oseledets_splitting(constant(Mat::Identity(4, 4), 10), 1), Error);
}

TEST(OseledetsSplitting, CatPlusRotation) {
  Mat R(2, 2);
  R << std::cos(0.4), -std::sin(0.4), std::sin(0.4), std::cos(0.4);
  const auto s = oseledets_splitting(constant(symplectic_direct_sum(cat_matrix(), R), 60), 1);
  // Eigenvectors of [[2,1],[1,1]]: (1, phi - 1) expanding and (1, -phi) contracting, phi the golden ratio.
  const double phi = (1 + std::sqrt(5.0)) / 2;
  Vec u = Vec::Zero(4), st = Vec::Zero(4);
  u(0) = 1, u(2) = phi - 1;
  st(0) = 1, st(2) = -phi;
  for (int i : {0, 30, 60}) {
    EXPECT_LE(distance_to_subspace(u, s.Eu[i]), 1e-10);
    EXPECT_LE(distance_to_subspace(st, s.Es[i]), 1e-10);
  }
  const auto res = segment_residuals(s);
  EXPECT_LE(res.invariance, 1e-10);
  EXPECT_LE(res.omega, 1e-10);
}

TEST(OseledetsSplitting, CatMapInvariance) {
  const auto s = oseledets_splitting(generate_cocycle({SourceKind::CatMap}, 40), 1);
  SplitSeq seq{s.mats, s.Eu, s.Es, 1};
  const auto rep = check_split_invariance(seq);
  EXPECT_TRUE(rep.passed);
  EXPECT_LE(rep.max, 1e-10);
}

TEST(OseledetsSplitting, StandardMapResiduals) {
  const auto mats = generate_cocycle({SourceKind::CoupledStandardMap, {0.9, 0.9, 0.05}, 3}, 10000);
  const auto s = oseledets_splitting(mats, 1);
  const auto res = segment_residuals(s);
  RecordProperty("invariance_residual", std::to_string(res.invariance));
  RecordProperty("omega_residual", std::to_string(res.omega));
  EXPECT_LT(res.invariance, 1e-4);
  EXPECT_LT(res.omega, 1e-4);
}

TEST(ZippedSplitting, Dimensions) {
  const auto id = constant(Mat::Identity(4, 4), 10);
  Segment dummy;
  dummy.mats = id;
  dummy.Eu = dummy.Ec = dummy.Es = std::vector<Subspace>(11, trivial_subspace(4));
  const auto z0 = zipped_splitting(finite_lyapunov_spectrum(id, SpectrumMethod::QR), dummy);
  EXPECT_EQ(z0.zero[0].dim(), 4);
  EXPECT_EQ(z0.plus[0].dim(), 0);

  const auto cat = generate_cocycle({SourceKind::CatMap}, 50);
  const auto zc = zipped_splitting(finite_lyapunov_spectrum(cat, SpectrumMethod::SVD), oseledets_splitting(cat, 1), 1e-3);
  EXPECT_EQ(zc.plus[0].dim(), 1);
  EXPECT_EQ(zc.zero[0].dim(), 0);
  const double phi = (1 + std::sqrt(5.0)) / 2;
  EXPECT_LE(distance_to_subspace((Vec(2) << 1, phi - 1).finished(), zc.plus[0]), 1e-10);
  EXPECT_LE(distance_to_subspace((Vec(2) << 1, -phi).finished(), zc.minus[0]), 1e-10);

  const auto d = constant(diag({2, 1, 0.5, 1}), 40);
  const auto zd = zipped_splitting(finite_lyapunov_spectrum(d, SpectrumMethod::SVD), oseledets_splitting(d, 1));
  EXPECT_EQ(zd.plus[0].dim(), 1);
  EXPECT_EQ(zd.zero[0].dim(), 2);
  EXPECT_EQ(zd.minus[0].dim(), 1);
}

TEST(ZippedSplitting, RecomputesWhenIndexDiffers) {
  const auto d = constant(diag({2, 3, 0.5, 1.0 / 3}), 40);
  const auto seg = oseledets_splitting(d, 1);
  const auto z = zipped_splitting(finite_lyapunov_spectrum(d, SpectrumMethod::SVD), seg);
  EXPECT_EQ(z.plus[0].dim(), 2);
  EXPECT_EQ(z.zero[0].dim(), 0);
  EXPECT_EQ(z.plus[0].dim(), z.minus[0].dim());
}

TEST(CheckSplitInvariance, DetectsRotatedStep) {
  const auto mats = constant(diag({2, 0.5}), 4);
  SplitSeq seq{mats, std::vector<Subspace>(5, coordinate_subspace(2, {0})), std::vector<Subspace>(5, coordinate_subspace(2, {1})), 1};
  EXPECT_EQ(check_split_invariance(seq).max, 0.0);
  Vec r(2);
  r << std::cos(0.1), std::sin(0.1);
  seq.E1[2] = make_subspace(r);
  const auto rep = check_split_invariance(seq);
  EXPECT_FALSE(rep.passed);
  // Step 1 maps p1 onto p1 while E1_2 sits 0.1 rad away; step 2 carries the rotated line
  // to angle atan(tan(0.1)/4) away from p1.
  EXPECT_NEAR(rep.residuals[1], std::sin(0.1), 1e-12);
  EXPECT_NEAR(rep.residuals[2], std::sin(std::atan(std::tan(0.1) / 4)), 1e-12);
  EXPECT_EQ(rep.residuals[0], 0.0);
  seq.E1[3] = trivial_subspace(2);
  EXPECT_THROW(check_split_invariance(seq), Error);
}

TEST(CocycleFile, SaveLoadIsLossless) {
  std::mt19937_64 rng(8);
  const Mat C = random_symplectic(2, rng, 0.7);
  const Mat A = C * diag({2, 1, 0.5, 1}) * symplectic_inverse(C);
  CocycleFile f;
  f.dim = 4;
  f.matrices = constant(A, 6);
  for (const auto& [key, idx] : std::vector<std::pair<std::string, std::vector<int>>>{{"Eu", {0}}, {"Ec", {1, 3}}, {"Es", {2}}})
    f.splittings[key] = std::vector<Subspace>(7, image(C, coordinate_subspace(4, idx)));
  f.metadata["family"] = "test";
  const std::string text = serialize_cocycle(f);
  const CocycleFile g = parse_cocycle_json(text);
  EXPECT_EQ(serialize_cocycle(g), text);
  for (std::size_t i = 0; i < f.matrices.size(); ++i) EXPECT_EQ(g.matrices[i], f.matrices[i]);
  for (const auto& [key, E] : f.splittings)
    for (std::size_t i = 0; i < E.size(); ++i) EXPECT_EQ(g.splittings.at(key)[i].basis, E[i].basis);
  EXPECT_EQ(g.metadata.at("family"), "test");
}

TEST(CocycleFile, MalformedInputIsAFormatError) {
  try {
    parse_cocycle_json("{\"dim\": 2,\n \"matrices\": [[1, 0, 0]");
    FAIL() << "accepted truncated JSON";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
  }
  EXPECT_THROW(parse_cocycle_json("{\"dim\": 2, \"matrices\": [[1, 0, 0]]}"), Error);
  EXPECT_THROW(parse_cocycle_json("{\"dim\": 2, \"matrices\": [[2, 0, 0, 1]]}"), Error);
}
