#pragma once

// Symplectic linear algebra on R^{2N} with coordinates (p_1..p_N, q_1..q_N)
// and the form omega(v, w) = <J0 v, w>, J0 = [[0, -I], [I, 0]].

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"

namespace symc {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;

/// Half of an even dimension; throws on odd or zero sizes.
inline int half_dim(Eigen::Index n) {
  if (n < 2 || n % 2 != 0) fail(ErrorKind::InvalidDimension, "dimension must be even and >= 2, got " + std::to_string(n));
  return static_cast<int>(n / 2);
}

inline Mat standard_form_matrix(int N) {
  if (N < 1) fail(ErrorKind::InvalidDimension, "N must be >= 1");
  Mat J = Mat::Zero(2 * N, 2 * N);
  J.topRightCorner(N, N) = -Mat::Identity(N, N);
  J.bottomLeftCorner(N, N) = Mat::Identity(N, N);
  return J;
}

inline double omega(const Vec& v, const Vec& w) {
  const int N = half_dim(v.size());
  return v.head(N).dot(w.tail(N)) - v.tail(N).dot(w.head(N));
}

/// max-entry norm of A^T J0 A - J0.
inline double symplectic_defect(const Mat& A) {
  if (A.rows() != A.cols()) fail(ErrorKind::InvalidDimension, "matrix must be square");
  const Mat J = standard_form_matrix(half_dim(A.rows()));
  return (A.transpose() * J * A - J).cwiseAbs().maxCoeff();
}

inline bool is_symplectic(const Mat& A, double tol) { return symplectic_defect(A) <= tol; }

/// Exact inverse of a symplectic matrix: -J0 A^T J0.
inline Mat symplectic_inverse(const Mat& A) {
  const Mat J = standard_form_matrix(half_dim(A.rows()));
  return -J * A.transpose() * J;
}

/// Singular values in descending order.
inline Vec singular_values(const Mat& A) {
  if (A.size() == 0) return Vec();
  return Eigen::JacobiSVD<Mat>(A).singularValues();
}

inline double spectral_norm(const Mat& A) { return A.size() == 0 ? 0.0 : singular_values(A)(0); }

struct OperatorStats {
  double norm;
  double conorm;
  double wedge_p_norm;
};

inline OperatorStats operator_stats(const Mat& A, int p) {
  const int N = half_dim(A.rows());
  if (A.cols() != A.rows()) fail(ErrorKind::InvalidDimension, "matrix must be square");
  if (p < 1 || p > N) fail(ErrorKind::InvalidDimension, "p must lie in [1, N]");
  const Vec s = singular_values(A);
  if (!(s(s.size() - 1) > s(0) * 1e-15)) fail(ErrorKind::SingularMatrix, "matrix is numerically singular");
  double w = 1.0;
  for (int i = 0; i < p; ++i) w *= s(i);
  return {s(0), s(s.size() - 1), w};
}

/// Lexicographically ordered q-subsets of {0..n-1}.
inline std::vector<std::vector<int>> index_combinations(int n, int q) {
  std::vector<std::vector<int>> out;
  std::vector<int> c(q);
  for (int i = 0; i < q; ++i) c[i] = i;
  if (q == 0 || q > n) return out;
  while (true) {
    out.push_back(c);
    int i = q - 1;
    while (i >= 0 && c[i] == n - q + i) --i;
    if (i < 0) break;
    ++c[i];
    for (int j = i + 1; j < q; ++j) c[j] = c[j - 1] + 1;
  }
  return out;
}

/// q-th exterior power in the basis of sorted coordinate q-subsets.
inline Mat wedge_power(const Mat& A, int q) {
  const auto combos = index_combinations(static_cast<int>(A.rows()), q);
  const auto m = static_cast<Eigen::Index>(combos.size());
  Mat W(m, m);
  Mat sub(q, q);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index c = 0; c < m; ++c) {
      for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) sub(i, j) = A(combos[r][i], combos[c][j]);
      W(r, c) = sub.determinant();
    }
  return W;
}

// ---------------------------------------------------------------- subspaces

/// Orthonormal column basis; dim 0 is allowed for trivial summands.
struct Subspace {
  Mat basis;
  int dim() const { return static_cast<int>(basis.cols()); }
  int ambient() const { return static_cast<int>(basis.rows()); }
};

inline Subspace trivial_subspace(int ambient) { return {Mat(ambient, 0)}; }

/// Orthonormalizes the columns; throws if they are not independent to rank_tol.
inline Subspace make_subspace(const Mat& spanning, double rank_tol = 1e-10) {
  if (spanning.cols() == 0) return trivial_subspace(static_cast<int>(spanning.rows()));
  if (spanning.cols() > spanning.rows()) fail(ErrorKind::InvalidDimension, "more spanning vectors than ambient dimension");
  const Vec s = singular_values(spanning);
  if (!(s(s.size() - 1) > rank_tol * s(0))) fail(ErrorKind::Precondition, "spanning vectors are linearly dependent");
  Eigen::HouseholderQR<Mat> qr(spanning);
  Mat Q = qr.householderQ() * Mat::Identity(spanning.rows(), spanning.cols());
  return {Q};
}

inline Subspace coordinate_subspace(int ambient, const std::vector<int>& idx) {
  Mat B = Mat::Zero(ambient, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) B(idx[k], static_cast<Eigen::Index>(k)) = 1.0;
  return {B};
}

inline Subspace direct_sum(const Subspace& E, const Subspace& F) {
  Mat B(E.ambient(), E.dim() + F.dim());
  B << E.basis, F.basis;
  return make_subspace(B);
}

inline Subspace image(const Mat& A, const Subspace& E) { return make_subspace(A * E.basis); }

/// Sine of the angle between v and E.
inline double distance_to_subspace(const Vec& v, const Subspace& E) {
  const double n = v.norm();
  if (n == 0.0) fail(ErrorKind::Precondition, "zero vector");
  if (E.dim() == 0) return 1.0;
  return (v - E.basis * (E.basis.transpose() * v)).norm() / n;
}

/// Smallest principal angle, accurate near 0 and near pi/2.
inline double subspace_angle(const Subspace& E, const Subspace& F) {
  if (E.ambient() != F.ambient()) fail(ErrorKind::InvalidDimension, "ambient dimensions differ");
  if (E.dim() < 1 || F.dim() < 1) fail(ErrorKind::InvalidDimension, "subspaces must be nontrivial");
  const Subspace& A = E.dim() >= F.dim() ? E : F;
  const Subspace& B = E.dim() >= F.dim() ? F : E;
  const double c = std::min(1.0, singular_values(A.basis.transpose() * B.basis)(0));
  if (c < std::numbers::sqrt2 / 2) return std::acos(c);
  const Vec s = singular_values(B.basis - A.basis * (A.basis.transpose() * B.basis));
  return std::asin(std::min(1.0, s(s.size() - 1)));
}

/// Sine of the largest principal angle between equal-dimensional subspaces.
inline double span_distance(const Subspace& E, const Subspace& F) {
  if (E.ambient() != F.ambient() || E.dim() != F.dim()) fail(ErrorKind::InvalidDimension, "span_distance needs equal dimensions");
  if (E.dim() == 0) return 0.0;
  return std::min(1.0, singular_values(F.basis - E.basis * (E.basis.transpose() * F.basis))(0));
}

/// E^omega = (J0 E)^perp.
inline Subspace symplectic_complement(const Subspace& E) {
  const int n = E.ambient();
  const int N = half_dim(n);
  if (E.dim() == 0) return {Mat::Identity(n, n)};
  if (E.dim() == n) return trivial_subspace(n);
  const Mat JE = standard_form_matrix(N) * E.basis;
  Eigen::HouseholderQR<Mat> qr(JE);
  const Mat Q = qr.householderQ();
  return {Q.rightCols(n - E.dim())};
}

/// Restricted norm ||A|_E|| and co-norm m(A|_E) on an orthonormal basis of E.
inline double restricted_norm(const Mat& A, const Subspace& E) { return spectral_norm(A * E.basis); }
inline double restricted_conorm(const Mat& A, const Subspace& E) {
  const Vec s = singular_values(A * E.basis);
  return s(s.size() - 1);
}

/// Unit vector of E that A expands least; ties resolved by SVD ordering and a sign fixed by the first nonzero coordinate.
inline Vec least_expanded_vector(const Mat& A, const Subspace& E) {
  Eigen::JacobiSVD<Mat> svd(A * E.basis, Eigen::ComputeFullV);
  Vec v = E.basis * svd.matrixV().col(E.dim() - 1);
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::abs(v(i)) > 1e-12) {
      if (v(i) < 0) v = -v;
      break;
    }
  return v.normalized();
}

// ------------------------------------------------------- symplectic bases

struct SymplecticExtension {
  Mat basis;          // columns e_1..e_N, f_1..f_N
  Mat chart;          // maps basis to the canonical basis
  double norm_bound;  // bounds ||chart|| and ||chart^{-1}||
};

inline SymplecticExtension orthosymplectic_extend(const std::vector<Vec>& e, const std::vector<Vec>& f, double K1,
                                                  int ambient = 0, double tol = 1e-10) {
  if (e.size() != f.size()) fail(ErrorKind::Precondition, "need equally many e and f vectors");
  const int n = e.empty() ? ambient : static_cast<int>(e.front().size());
  const int N = half_dim(n);
  const int nu = static_cast<int>(e.size());
  if (nu > N) fail(ErrorKind::InvalidDimension, "more pairs than N");
  const double scale = std::max(1.0, K1 * K1);
  for (int i = 0; i < nu; ++i) {
    if (e[i].norm() > K1 * (1 + 1e-12) || f[i].norm() > K1 * (1 + 1e-12))
      fail(ErrorKind::Precondition, "input vector exceeds the norm bound");
    for (int j = 0; j < nu; ++j) {
      const double dij = i == j ? 1.0 : 0.0;
      if (std::abs(omega(e[i], e[j])) > tol * scale || std::abs(omega(f[i], f[j])) > tol * scale ||
          std::abs(omega(e[i], f[j]) - dij) > tol * scale)
        fail(ErrorKind::Precondition, "input set is not orthosymplectic");
    }
  }
  std::vector<Vec> es = e, fs = f;
  double K = std::max(1.0, K1);
  const Mat J = standard_form_matrix(N);
  auto project = [&](const Vec& v) {
    Vec out = Vec::Zero(n);
    for (std::size_t i = 0; i < es.size(); ++i) out += omega(v, fs[i]) * es[i] - omega(v, es[i]) * fs[i];
    return out;
  };
  for (int step = nu; step < N; ++step) {
    Mat Y(n, 2 * step);
    for (int i = 0; i < step; ++i) {
      Y.col(i) = es[i];
      Y.col(step + i) = fs[i];
    }
    Mat Q = step > 0 ? make_subspace(Y, 1e-14).basis : Mat(n, 0);
    Vec best;
    double best_norm = -1.0;
    for (int k = 0; k < n; ++k) {
      Vec u = Vec::Unit(n, k);
      Vec r = u - Q * (Q.transpose() * u);
      if (r.norm() > best_norm + 1e-12) {
        best_norm = r.norm();
        best = r;
      }
    }
    const Vec e_hat = best / best_norm;
    const Vec en = e_hat - project(e_hat);
    const Vec Je = J * en;
    const Vec f_hat = Je / Je.squaredNorm();
    const Vec fn = f_hat - project(f_hat);
    K = std::max(K, 1.0 + 2.0 * step * K * K);
    es.push_back(en);
    fs.push_back(fn);
  }
  Mat B(n, n);
  for (int i = 0; i < N; ++i) {
    B.col(i) = es[i];
    B.col(N + i) = fs[i];
  }
  return {B, symplectic_inverse(B), std::sqrt(static_cast<double>(n)) * K};
}

struct DualPair {
  Vec v_star;
  double pairing;  // omega(v, v_star) > 0
  double B;        // pairing >= 1/B
};

/// Dual of v in F through the projection onto F along E^omega. When F is larger than E
/// the splitting is not direct and the orthogonal projection onto F is used instead.
inline DualPair dual_vector(const Vec& v, const Subspace& E, const Subspace& F) {
  if (E.dim() > F.dim() || E.ambient() != F.ambient() || v.size() != E.ambient())
    fail(ErrorKind::InvalidDimension, "dual_vector: dimensions disagree");
  if (distance_to_subspace(v, E) > 1e-8) fail(ErrorKind::Precondition, "dual_vector: v is not in E");
  const int n = E.ambient();
  const Vec u = v.normalized();
  const Vec Jv = standard_form_matrix(half_dim(n)) * u;
  if (E.dim() < F.dim()) {
    const Vec pv = F.basis * (F.basis.transpose() * Jv);
    if (pv.norm() < 1e-8) fail(ErrorKind::DegeneratePairing, "J0 v is orthogonal to F");
    const Vec vs = pv.normalized();
    const double w = omega(u, vs);
    return {vs, w, 1.0 / w};
  }
  const Subspace Ew = symplectic_complement(E);
  const double beta = subspace_angle(Ew, F);
  if (beta < 1e-8) fail(ErrorKind::DegeneratePairing, "E^omega meets F");
  Mat S(n, n);
  S << F.basis, Ew.basis;
  const Vec c = S.fullPivLu().solve(Jv);
  const Vec vs = (F.basis * c.head(F.dim())).normalized();
  return {vs, omega(u, vs), 1.0 / std::sin(beta)};
}

// ------------------------------------------------- four-dimensional maps

inline Mat rotation_Rt(double t) {
  const double c = std::cos(t), s = std::sin(t);
  Mat R = Mat::Zero(4, 4);
  R(0, 0) = c, R(0, 1) = -s, R(1, 0) = s, R(1, 1) = c;
  R(2, 2) = c, R(2, 3) = -s, R(3, 2) = s, R(3, 3) = c;
  return R;
}

/// Representative of t modulo pi in [0, pi).
inline double mod_pi(double t) {
  double r = std::fmod(t, kPi);
  if (r < 0) r += kPi;
  if (r >= kPi) r -= kPi;
  return r;
}

/// Representative of t modulo pi in [-pi/2, pi/2).
inline double centered_mod_pi(double t) {
  const double r = mod_pi(t);
  return r >= kPi / 2 ? r - kPi : r;
}

inline double circle_distance(double s, double t) {
  const double d = mod_pi(s - t);
  return std::min(d, kPi - d);
}

/// Angle of (p1, p2) modulo pi.
inline double direction_angle(const Vec& v) {
  if (v.size() != 4) fail(ErrorKind::InvalidDimension, "direction_angle needs a 4-vector");
  if (v(0) == 0.0 && v(1) == 0.0) fail(ErrorKind::UndefinedAngle, "p-projection is zero");
  return mod_pi(std::atan2(v(1), v(0)));
}

/// Membership in the open cone ||(q1,q2)|| < beta ||(p1,p2)||.
inline bool in_cone(const Vec& v, double beta) { return std::hypot(v(2), v(3)) < beta * std::hypot(v(0), v(1)); }

/// L_v = R_theta M with M = [[I, 0], [S, I]], S = [[a, b], [b, 0]].
inline Mat shear_map_Lv(const Vec& v) {
  if (v.size() != 4) fail(ErrorKind::InvalidDimension, "shear_map_Lv needs a 4-vector");
  if (!in_cone(v, 1.0)) fail(ErrorKind::ConeViolation, "v lies outside the cone C_1");
  const double theta = direction_angle(v);
  Vec u = rotation_Rt(-theta) * v;
  u /= u(0);
  Mat M = Mat::Identity(4, 4);
  M(2, 0) = u(2), M(2, 1) = u(3), M(3, 0) = u(3);
  return rotation_Rt(theta) * M;
}

/// Largest sampled ||L_v|| over the cone C_1.
template <class Rng>
double measure_KL(int samples, Rng& rng) {
  std::uniform_real_distribution<double> ang(0.0, 2 * kPi), rad(0.0, 1.0);
  double sup = 1.0;
  for (int k = 0; k < samples; ++k) {
    const double a = ang(rng), b = ang(rng), r = rad(rng) * (1 - 1e-12);
    Vec v(4);
    v << std::cos(a), std::sin(a), r * std::cos(b), r * std::sin(b);
    sup = std::max(sup, spectral_norm(shear_map_Lv(v)));
  }
  return sup;
}

// ------------------------------------------------------ random generators

template <class Rng>
Vec random_unit_vector(int n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = g(rng);
  return v.normalized();
}

/// Symplectic matrix built from shears, a diagonal stretch and an orthosymplectic rotation.
template <class Rng>
Mat random_symplectic(int N, Rng& rng, double strength = 0.5) {
  std::normal_distribution<double> g(0.0, strength);
  auto sym = [&]() {
    Mat S(N, N);
    for (int i = 0; i < N; ++i)
      for (int j = i; j < N; ++j) S(i, j) = S(j, i) = g(rng);
    return S;
  };
  Mat lower = Mat::Identity(2 * N, 2 * N), upper = Mat::Identity(2 * N, 2 * N), D = Mat::Zero(2 * N, 2 * N);
  lower.bottomLeftCorner(N, N) = sym();
  upper.topRightCorner(N, N) = sym();
  for (int i = 0; i < N; ++i) {
    const double d = std::exp(g(rng));
    D(i, i) = d;
    D(N + i, N + i) = 1.0 / d;
  }
  // Real form of a unitary matrix: [[X, -Y], [Y, X]].
  Eigen::MatrixXcd Z(N, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) Z(i, j) = {g(rng), g(rng)};
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(Z);
  Eigen::MatrixXcd U = qr.householderQ();
  Mat O(2 * N, 2 * N);
  O << U.real(), -U.imag(), U.imag(), U.real();
  return O * lower * D * upper;
}

/// Random symplectic C with ||C|| = ||C^{-1}|| <= bound.
template <class Rng>
Mat random_bounded_symplectic(int N, Rng& rng, double bound = 2.0) {
  double strength = 0.5;
  while (true) {
    Mat C = random_symplectic(N, rng, strength);
    if (spectral_norm(C) <= bound) return C;
    strength *= 0.7;
  }
}

}  // namespace symc
