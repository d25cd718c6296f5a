#pragma once

// Finite symplectic cocycles: generators, finite-time Lyapunov spectra,
// Oseledets-style splittings and the exterior-power rates Lambda_q.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "io.hpp"
#include "symplin.hpp"

namespace symc {

enum class SourceKind { CatMap, CoupledStandardMap, ConstantMatrix, File };

/// params: CoupledStandardMap uses (K1, K2, b), defaulting to (0.9, 0.9, 0.05).
struct OrbitSource {
  SourceKind kind = SourceKind::CatMap;
  std::vector<double> params;
  std::uint64_t seed = 0;
  Mat matrix;
  std::string path;
};

inline Mat cat_matrix() {
  Mat C(2, 2);
  C << 2, 1, 1, 1;
  return C;
}

/// A (on the first block of coordinates) and B (on the second) acting together.
inline Mat symplectic_direct_sum(const Mat& A, const Mat& B) {
  const int a = half_dim(A.rows()), b = half_dim(B.rows());
  const int N = a + b;
  Mat S = Mat::Zero(2 * N, 2 * N);
  auto place = [&](const Mat& X, int n, int off) {
    for (int i = 0; i < 2 * n; ++i)
      for (int j = 0; j < 2 * n; ++j) {
        const int r = i < n ? off + i : N + off + (i - n);
        const int c = j < n ? off + j : N + off + (j - n);
        S(r, c) = X(i, j);
      }
  };
  place(A, a, 0);
  place(B, b, a);
  return S;
}

/// Diagonal symplectic matrix diag(d, 1/d) in (p, q) blocks.
inline Mat diag_symplectic(const std::vector<double>& d) {
  const int N = static_cast<int>(d.size());
  Mat D = Mat::Zero(2 * N, 2 * N);
  for (int i = 0; i < N; ++i) D(i, i) = d[i], D(N + i, N + i) = 1.0 / d[i];
  return D;
}

/// Coupled standard map: p' = p + grad U(q), q' = q + p', with
/// U(q) = -K1 cos q1 - K2 cos q2 - b cos(q1 + q2).
struct CoupledStandardMap {
  double K1 = 0.9, K2 = 0.9, b = 0.05;

  void step(Vec& x) const {
    const double s = std::sin(x(2) + x(3));
    x(0) += K1 * std::sin(x(2)) + b * s;
    x(1) += K2 * std::sin(x(3)) + b * s;
    x(2) = std::fmod(x(2) + x(0), 2 * kPi);
    x(3) = std::fmod(x(3) + x(1), 2 * kPi);
  }

  Mat jacobian(const Vec& x) const {
    const double c = b * std::cos(x(2) + x(3));
    Mat G(2, 2);
    G << K1 * std::cos(x(2)) + c, c, c, K2 * std::cos(x(3)) + c;
    Mat D(4, 4);
    D << Mat::Identity(2, 2), G, Mat::Identity(2, 2), Mat::Identity(2, 2) + G;
    return D;
  }
};

inline std::vector<Mat> generate_cocycle(const OrbitSource& src, int n) {
  if (n < 1) fail(ErrorKind::Parameter, "n must be >= 1");
  std::vector<Mat> out;
  out.reserve(n);
  switch (src.kind) {
    case SourceKind::CatMap:
      out.assign(n, cat_matrix());
      break;
    case SourceKind::ConstantMatrix:
      if (src.matrix.size() == 0 || !is_symplectic(src.matrix, 1e-9))
        fail(ErrorKind::Format, "constant matrix 0 is not symplectic");
      out.assign(n, src.matrix);
      break;
    case SourceKind::CoupledStandardMap: {
      CoupledStandardMap f;
      if (!src.params.empty()) {
        if (src.params.size() != 3) fail(ErrorKind::Parameter, "coupled_standard_map takes (K1, K2, b)");
        f = {src.params[0], src.params[1], src.params[2]};
      }
      std::mt19937_64 rng(src.seed);
      std::uniform_real_distribution<double> u(0.0, 2 * kPi);
      Vec x(4);
      for (int i = 0; i < 4; ++i) x(i) = u(rng);
      for (int i = 0; i < n; ++i) {
        out.push_back(f.jacobian(x));
        f.step(x);
      }
      break;
    }
    case SourceKind::File: {
      const CocycleFile file = load_cocycle(src.path);
      for (int i = 0; i < n; ++i) out.push_back(file.matrices[static_cast<std::size_t>(i) % file.matrices.size()]);
      break;
    }
  }
  return out;
}

// ------------------------------------------------------------- spectra

namespace detail {

inline Mat orthonormal_columns(const Mat& X) {
  Eigen::HouseholderQR<Mat> qr(X);
  return qr.householderQ() * Mat::Identity(X.rows(), X.cols());
}

}  // namespace detail

enum class SpectrumMethod { QR, SVD, ExactEigen };

struct LyapSpectrum {
  std::vector<double> exponents;  // descending, nats per step
  int horizon = 0;
  SpectrumMethod method = SpectrumMethod::QR;
  double symmetry_defect = 0.0;
};

/// log ||wedge^q (A_{n-1} ... A_0)|| with scalar renormalization at every step.
inline double log_wedge_norm(const std::vector<Mat>& mats, int q, std::size_t n) {
  if (q == 0) return 0.0;
  Mat W;
  double log_scale = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const Mat Wk = wedge_power(mats[k], q);
    W = k == 0 ? Wk : Mat(Wk * W);
    const double s = W.cwiseAbs().maxCoeff();
    if (!(s > 0)) fail(ErrorKind::Numeric, "product collapsed to zero");
    W /= s;
    log_scale += std::log(s);
  }
  return log_scale + std::log(spectral_norm(W));
}

inline double symmetry_defect(const std::vector<double>& ex) {
  double d = 0.0;
  const std::size_t n = ex.size();
  for (std::size_t i = 0; i < n; ++i) d = std::max(d, std::abs(ex[i] + ex[n - 1 - i]));
  return d;
}

inline LyapSpectrum finite_lyapunov_spectrum(const std::vector<Mat>& mats, SpectrumMethod method) {
  if (mats.empty()) fail(ErrorKind::Parameter, "empty cocycle");
  const int dim = static_cast<int>(mats[0].rows());
  half_dim(dim);
  const std::size_t n = mats.size();
  std::vector<double> ex(dim, 0.0);
  switch (method) {
    case SpectrumMethod::QR: {
      // A backward pass with transposes seeds the frame with the right singular flag of the
      // product, which removes the O(1/n) transient of a frame started at the identity.
      // Column order p1..pN, qN..q1 makes the flag satisfy F_{2N-k} = F_k^omega, a property that
      // symplectic maps preserve. Since vol(A|F^omega) = vol(A|F), the exponents pair exactly.
      const int N = dim / 2;
      Mat Q = Mat::Zero(dim, dim);
      for (int i = 0; i < N; ++i) Q(i, i) = 1, Q(2 * N - 1 - i, N + i) = 1;
      for (auto it = mats.rbegin(); it != mats.rend(); ++it) Q = detail::orthonormal_columns(it->transpose() * Q);
      for (const auto& A : mats) {
        Eigen::HouseholderQR<Mat> qr(A * Q);
        const Mat& R = qr.matrixQR();
        for (int i = 0; i < dim; ++i) ex[i] += std::log(std::abs(R(i, i)));
        Q = qr.householderQ();
      }
      for (auto& e : ex) e /= static_cast<double>(n);
      break;
    }
    case SpectrumMethod::SVD: {
      double prev = 0.0;
      for (int q = 1; q <= dim; ++q) {
        const double Lq = log_wedge_norm(mats, q, n) / static_cast<double>(n);
        ex[q - 1] = Lq - prev;
        prev = Lq;
      }
      break;
    }
    case SpectrumMethod::ExactEigen: {
      for (const auto& A : mats)
        if ((A - mats[0]).cwiseAbs().maxCoeff() > 1e-14 * (1 + mats[0].cwiseAbs().maxCoeff()))
          fail(ErrorKind::Precondition, "exact-eigen needs a constant cocycle");
      Eigen::EigenSolver<Mat> es(mats[0], false);
      for (int i = 0; i < dim; ++i) ex[i] = std::log(std::abs(es.eigenvalues()(i)));
      break;
    }
  }
  std::sort(ex.begin(), ex.end(), std::greater<>());
  return {ex, static_cast<int>(n), method, symmetry_defect(ex)};
}

// ----------------------------------------------------------- splittings

/// Triple splitting E^u + E^c + E^s along a finite orbit; steps 0..n.
struct Segment {
  std::vector<Mat> mats;
  std::vector<Subspace> Eu, Ec, Es;
  int p = 1;

  int length() const { return static_cast<int>(mats.size()); }
  int ambient() const { return static_cast<int>(mats.at(0).rows()); }
  Subspace Ecs(int i) const { return Ec[i].dim() ? direct_sum(Ec[i], Es[i]) : Es[i]; }
  Subspace Euc(int i) const { return Ec[i].dim() ? direct_sum(Eu[i], Ec[i]) : Eu[i]; }
};

/// Two-bundle split sequence E1 + E2; steps 0..n.
struct SplitSeq {
  std::vector<Mat> mats;
  std::vector<Subspace> E1, E2;
  int p = 1;
};

/// Product A_{j-1} ... A_i.
inline Mat product(const std::vector<Mat>& mats, int i, int j) {
  Mat P = Mat::Identity(mats.at(0).rows(), mats.at(0).cols());
  for (int k = i; k < j; ++k) P = mats[k] * P;
  return P;
}

inline std::vector<Subspace> transport(const std::vector<Mat>& mats, const Subspace& E0) {
  std::vector<Subspace> out{E0};
  for (const auto& A : mats) out.push_back(E0.dim() ? image(A, out.back()) : out.back());
  return out;
}

/// Segment obtained by carrying the step-0 splitting along the cocycle.
inline Segment make_segment(const std::vector<Mat>& mats, const Subspace& Eu0, const Subspace& Ec0, const Subspace& Es0) {
  Segment s;
  s.mats = mats;
  s.p = Eu0.dim();
  s.Eu = transport(mats, Eu0);
  s.Ec = transport(mats, Ec0);
  s.Es = transport(mats, Es0);
  return s;
}

/// Conjugated segment C A_i C^{-1} with bundles C E.
inline Segment conjugate_segment(const Segment& s, const Mat& C) {
  const Mat Ci = symplectic_inverse(C);
  Segment t;
  t.p = s.p;
  for (const auto& A : s.mats) t.mats.push_back(C * A * Ci);
  auto move = [&](const std::vector<Subspace>& E) {
    std::vector<Subspace> out;
    for (const auto& e : E) out.push_back(e.dim() ? image(C, e) : e);
    return out;
  };
  t.Eu = move(s.Eu);
  t.Ec = move(s.Ec);
  t.Es = move(s.Es);
  return t;
}

inline SplitSeq split_u_cs(const Segment& s) {
  SplitSeq q{s.mats, s.Eu, {}, s.p};
  for (int i = 0; i <= s.length(); ++i) q.E2.push_back(s.Ecs(i));
  return q;
}

inline SplitSeq split_uc_s(const Segment& s) {
  SplitSeq q{s.mats, {}, s.Es, s.p};
  for (int i = 0; i <= s.length(); ++i) q.E1.push_back(s.Euc(i));
  return q;
}

/// max |omega(v, w)| over basis vectors of E and F.
inline double omega_pairing(const Subspace& E, const Subspace& F) {
  if (E.dim() == 0 || F.dim() == 0) return 0.0;
  const Mat J = standard_form_matrix(half_dim(E.ambient()));
  return (F.basis.transpose() * J * E.basis).cwiseAbs().maxCoeff();
}

struct SplittingResiduals {
  double invariance = 0.0;
  double omega = 0.0;
};

inline SplittingResiduals segment_residuals(const Segment& s) {
  SplittingResiduals r;
  for (const auto* E : {&s.Eu, &s.Ec, &s.Es}) r.invariance = std::max(r.invariance, transport_residual(s.mats, *E).first);
  for (int i = 0; i <= s.length(); ++i) {
    r.omega = std::max({r.omega, omega_pairing(s.Eu[i], s.Eu[i]), omega_pairing(s.Eu[i], s.Ec[i]),
                        omega_pairing(s.Ec[i], s.Es[i]), omega_pairing(s.Es[i], s.Es[i])});
  }
  return r;
}

namespace detail {

/// Top-p right singular subspace of A_{n-1} ... A_0, refined by subspace iteration.
inline Mat top_right_singular(const std::vector<Mat>& mats, int p) {
  const int dim = static_cast<int>(mats[0].rows());
  Mat P = Mat::Identity(dim, dim);
  for (const auto& A : mats) {
    P = A * P;
    P /= P.cwiseAbs().maxCoeff();
  }
  Eigen::JacobiSVD<Mat> svd(P, Eigen::ComputeFullV);
  Mat W = svd.matrixV().leftCols(p);
  for (int sweep = 0; sweep < 2; ++sweep) {
    for (const auto& A : mats) W = orthonormal_columns(A * W);
    for (auto it = mats.rbegin(); it != mats.rend(); ++it) W = orthonormal_columns(it->transpose() * W);
  }
  return W;
}

}  // namespace detail

/// E^u from the forward product, E^s from the backward product, E^c = (E^u + E^s)^omega.
inline Segment oseledets_splitting(const std::vector<Mat>& mats, int p) {
  const int dim = static_cast<int>(mats.at(0).rows());
  const int N = half_dim(dim);
  if (p < 1 || p > N) fail(ErrorKind::InvalidDimension, "index p must lie in [1, N]");
  const LyapSpectrum spec = finite_lyapunov_spectrum(mats, SpectrumMethod::SVD);
  if (!(spec.exponents[p - 1] - spec.exponents[p] > 1e-6))
    fail(ErrorKind::NoGap, "no exponent gap between lambda_p and lambda_{p+1} at this horizon");
  const int n = static_cast<int>(mats.size());
  std::vector<Mat> inv;
  for (int k = n - 1; k >= 0; --k) inv.push_back(symplectic_inverse(mats[k]));

  Segment s;
  s.mats = mats;
  s.p = p;
  s.Eu = transport(mats, Subspace{detail::top_right_singular(mats, p)});
  std::vector<Subspace> es_rev = transport(inv, Subspace{detail::top_right_singular(inv, p)});
  s.Es.assign(es_rev.rbegin(), es_rev.rend());
  for (int i = 0; i <= n; ++i) s.Ec.push_back(symplectic_complement(direct_sum(s.Eu[i], s.Es[i])));
  return s;
}

struct Zipped {
  std::vector<Subspace> plus, zero, minus;
};

/// Groups the splitting by exponent sign; zero_tol <= 0 selects 10/n.
inline Zipped zipped_splitting(const LyapSpectrum& spec, const Segment& seg, double zero_tol = -1.0) {
  if (zero_tol <= 0) zero_tol = 10.0 / spec.horizon;
  const int dim = static_cast<int>(spec.exponents.size());
  const int N = dim / 2;
  int k = 0;
  for (int i = 0; i < N; ++i)
    if ((spec.exponents[i] - spec.exponents[dim - 1 - i]) / 2 > zero_tol) ++k;
  Zipped z;
  const int steps = seg.length() + 1;
  if (k == 0) {
    for (int i = 0; i < steps; ++i) {
      z.plus.push_back(trivial_subspace(dim));
      z.zero.push_back({Mat::Identity(dim, dim)});
      z.minus.push_back(trivial_subspace(dim));
    }
    return z;
  }
  const Segment s = k == seg.p ? seg : oseledets_splitting(seg.mats, k);
  z.plus = s.Eu;
  z.zero = s.Ec;
  z.minus = s.Es;
  return z;
}

struct LambdaPhi {
  double Lpm1, Lp, Lpp1, Phi;
};

/// Lambda_q = (1/n) log ||wedge^q product||, Lambda_0 = 0, Phi = (Lambda_{p-1} + Lambda_{p+1}) / 2.
inline LambdaPhi lambda_p_and_phi(const std::vector<Mat>& mats, int p, int n) {
  const int N = half_dim(mats.at(0).rows());
  if (p < 1 || p > N) fail(ErrorKind::InvalidDimension, "p must lie in [1, N]");
  if (n < 1 || n > static_cast<int>(mats.size())) fail(ErrorKind::Horizon, "horizon exceeds cocycle length");
  const auto L = [&](int q) { return log_wedge_norm(mats, q, static_cast<std::size_t>(n)) / n; };
  LambdaPhi r{L(p - 1), L(p), L(p + 1), 0.0};
  r.Phi = (r.Lpm1 + r.Lpp1) / 2;
  return r;
}

struct InvarianceReport {
  std::vector<double> residuals;
  double max = 0.0;
  bool passed = true;
};

inline InvarianceReport check_split_invariance(const SplitSeq& seq) {
  const std::size_t n = seq.mats.size();
  if (seq.E1.size() != n + 1 || seq.E2.size() != n + 1) fail(ErrorKind::InvalidDimension, "splitting needs n+1 steps");
  InvarianceReport r;
  for (std::size_t i = 0; i < n; ++i) {
    if (seq.E1[i].dim() != seq.E1[i + 1].dim() || seq.E2[i].dim() != seq.E2[i + 1].dim())
      fail(ErrorKind::InvalidDimension, "bundle dimension changes at step " + std::to_string(i));
    const double a = span_distance(image(seq.mats[i], seq.E1[i]), seq.E1[i + 1]);
    const double b = span_distance(image(seq.mats[i], seq.E2[i]), seq.E2[i + 1]);
    r.residuals.push_back(std::max(a, b));
    r.max = std::max(r.max, r.residuals.back());
  }
  r.passed = r.max <= 1e-8;
  return r;
}

}  // namespace symc
