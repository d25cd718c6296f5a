#pragma once

// Decision procedure for non-dominated segments: Type I (small angle), II (rate swap),
// III (neutral symplectic plane) or IV (conformal expanding plane), with the symplectic
// charts that put types III and IV in normal form.

#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "domination.hpp"

namespace symc {

enum class SegmentType { I, II, III, IV };

inline const char* type_name(SegmentType t) {
  switch (t) {
    case SegmentType::I: return "I";
    case SegmentType::II: return "II";
    case SegmentType::III: return "III";
    case SegmentType::IV: return "IV";
  }
  return "?";
}

struct Thresholds {
  double alpha = 0.1;  // angle threshold
  double K2 = 100.0;   // type-II constant
  int m0 = 5;          // type-III window, also the correction window
  double tau = 1.01;   // floor for the corrected type-IV rates

  void validate() const {
    if (!(alpha > 0 && alpha < kPi / 2)) fail(ErrorKind::Parameter, "alpha must lie in (0, pi/2)");
    if (!(K2 > 1)) fail(ErrorKind::Parameter, "K2 must exceed 1");
    if (m0 < 1) fail(ErrorKind::Parameter, "m0 must be >= 1");
    if (!(tau > 1)) fail(ErrorKind::Parameter, "tau must exceed 1");
  }
};

struct SegmentClass {
  SegmentType tag = SegmentType::I;
  std::vector<int> location;                // (i), (i, j), (k, k + m0) or (0, m)
  std::map<std::string, double> constants;  // realized values
  std::vector<Mat> witnesses;               // charts L_i, present for III and IV
  std::vector<double> rates;                // type IV: corrected c-hat_i
  std::vector<double> raw_rates;            // type IV: c_i before correction
  std::vector<double> shifts;               // type IV: b_i
};

// ------------------------------------------------------ exponent correction

struct Correction {
  std::vector<double> b;     // b_0..b_m
  std::vector<double> gaps;  // b_{i+1} + a_i - b_i
  double C2 = 0.0;           // (ell - 1) C1 / 2, bounds |b_i|
  double min_gap = 0.0;
};

/// b_i = (1/ell) sum_{j<ell} (ell-1-j) a_{i+j} with a padded by C1; each gap is a window
/// mean of the padded sequence, hence >= delta1/ell once every full window sums to >= delta1.
inline Correction correct_exponent_sequence(const std::vector<double>& a, int ell, double C1, double delta1) {
  const int m = static_cast<int>(a.size());
  if (ell < 1) fail(ErrorKind::Parameter, "window length must be >= 1");
  if (m < ell) fail(ErrorKind::Precondition, "sequence shorter than the window");
  for (int i = 0; i < m; ++i)
    if (std::abs(a[i]) > C1 * (1 + 1e-12)) fail(ErrorKind::Precondition, "|a_" + std::to_string(i) + "| exceeds C1");
  const double slack = 1e-12 * std::max(1.0, ell * C1);
  for (int i = 0; i + ell <= m; ++i) {
    double s = 0;
    for (int j = 0; j < ell; ++j) s += a[i + j];
    if (s < delta1 - slack) {
      std::ostringstream msg;
      msg << "window sum " << s << " starting at " << i << " is below delta1 = " << delta1;
      fail(ErrorKind::Precondition, msg.str());
    }
  }
  auto at = [&](int k) { return k < m ? a[k] : C1; };
  Correction c;
  for (int i = 0; i <= m; ++i) {
    double s = 0;
    for (int j = 0; j < ell; ++j) s += (ell - 1 - j) * at(i + j);
    c.b.push_back(s / ell);
  }
  c.min_gap = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) {
    c.gaps.push_back(c.b[i + 1] + a[i] - c.b[i]);
    c.min_gap = std::min(c.min_gap, c.gaps.back());
  }
  c.C2 = (ell - 1) * C1 / 2;
  return c;
}

// ------------------------------------------------------------- witnesses

namespace detail {

inline Segment truncate(const Segment& s, int from, int to) {
  Segment t;
  t.p = s.p;
  t.mats.assign(s.mats.begin() + from, s.mats.begin() + to);
  t.Eu.assign(s.Eu.begin() + from, s.Eu.begin() + to + 1);
  t.Ec.assign(s.Ec.begin() + from, s.Ec.begin() + to + 1);
  t.Es.assign(s.Es.begin() + from, s.Es.begin() + to + 1);
  return t;
}

/// x_{i+1} = P_{E_{i+1}} A_i x_i; stable for vectors that dominate inside the bundle.
inline std::vector<Vec> orbit_forward(const Segment& s, const std::vector<Subspace>& E, const Vec& x0, int from, int to) {
  std::vector<Vec> out{x0};
  for (int i = from; i < to; ++i) {
    const Mat& B = E[i + 1].basis;
    const Vec y = s.mats[i] * out.back();
    out.push_back(B * (B.transpose() * y));
  }
  return out;
}

/// x_i = P_{E_i} A_i^{-1} x_{i+1}, indexed from..to.
inline std::vector<Vec> orbit_backward(const Segment& s, const std::vector<Subspace>& E, const Vec& xend, int from, int to) {
  std::vector<Vec> out(to - from + 1);
  out.back() = xend;
  for (int i = to - 1; i >= from; --i) {
    const Mat& B = E[i].basis;
    const Vec y = symplectic_inverse(s.mats[i]) * out[i + 1 - from];
    out[i - from] = B * (B.transpose() * y);
  }
  return out;
}

/// Orbit Pi_i v, i = from..to, of the unit vector v in E_from least expanded by the window
/// product. Built backward from the end so that contracting iterates keep full relative accuracy.
inline std::vector<Vec> least_expanded_orbit(const Segment& s, const std::vector<Subspace>& E, int from, int to) {
  const Mat& B = E[to].basis;
  Mat W(B.rows(), B.cols());
  for (Eigen::Index c = 0; c < B.cols(); ++c) W.col(c) = orbit_backward(s, E, B.col(c), from, to).front();
  Eigen::JacobiSVD<Mat> svd(W, Eigen::ComputeFullV);
  std::vector<Vec> orb = orbit_backward(s, E, B * svd.matrixV().col(0), from, to);
  double scale = 1.0 / orb.front().norm();
  const Vec& v = orb.front();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::abs(v(i)) > 1e-12 * v.norm()) {
      if (v(i) < 0) scale = -scale;
      break;
    }
  for (auto& x : orb) x *= scale;
  return orb;
}

inline double max_chart_norm(const std::vector<Mat>& L) {
  double K = 1.0;
  for (const auto& A : L) K = std::max({K, spectral_norm(A), spectral_norm(symplectic_inverse(A))});
  return K;
}

}  // namespace detail

struct Type3Witness {
  std::vector<Mat> charts;  // L_0..L_{m0}
  double K3 = 0.0;          // max ||L_i^{+-1}||
  double bound = 0.0;       // worst norm bound from the extension
  double pairing = 0.0;     // omega(v, v*)
  double min_product = 0.0; // min_i ||Pi_i v|| ||Pi_i v*||
};

/// Charts L_i for the window [k, k + m0] sending Pi_i v to p1 and Pi_i v* / omega(v, v*) to q1.
inline Type3Witness build_type3_witness(const Segment& s, int k, int m0) {
  if (k < 0 || k + m0 > s.length()) fail(ErrorKind::Horizon, "type-III window leaves the segment");
  const std::vector<Vec> ev = detail::least_expanded_orbit(s, s.Eu, k, k + m0);
  const Vec& v = ev.front();
  const DualPair d = dual_vector(v, s.Eu[k], s.Es[k]);
  const double w = omega(v, d.v_star);
  if (std::abs(w) < 1e-10) fail(ErrorKind::DegeneratePairing, "omega(v, v*) vanishes");
  const std::vector<Vec> es = detail::orbit_forward(s, s.Es, d.v_star, k, k + m0);
  Type3Witness out;
  out.pairing = w;
  out.min_product = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= m0; ++i) {
    const Vec& e = ev[i];
    const Vec f = es[i] / w;
    out.min_product = std::min(out.min_product, ev[i].norm() * es[i].norm());
    const auto ext = orthosymplectic_extend({e}, {f}, std::max(e.norm(), f.norm()));
    out.charts.push_back(ext.chart);
    out.bound = std::max(out.bound, ext.norm_bound);
  }
  out.K3 = detail::max_chart_norm(out.charts);
  return out;
}

struct Type4Witness {
  std::vector<Mat> charts;  // L-hat_0..L-hat_m
  std::vector<double> c, c_hat, b;
  double K4 = 0.0, C1 = 0.0, delta1 = 0.0, tau = 0.0;
  int ell = 1;
};

/// Normal-form charts over the whole segment; rates are corrected with window ell.
inline Type4Witness build_type4_witness(const Segment& s, double tau_target, int ell) {
  const int N = half_dim(s.ambient());
  if (s.p >= N) fail(ErrorKind::Precondition, "type IV needs p < N (E^c is trivial when p = N)");
  const int m = s.length();
  if (ell > m) fail(ErrorKind::Horizon, "correction window longer than the segment");
  const std::vector<Vec> ou = detail::least_expanded_orbit(s, s.Eu, 0, m);
  const std::vector<Vec> ocs = detail::least_expanded_orbit(s, s.Ec, 0, m);
  const Vec& vu = ou.front();
  const Vec& vcs = ocs.front();
  const Vec vs = dual_vector(vu, s.Eu[0], s.Es[0]).v_star;
  // Orient v^cu so that omega(v^cu, v^cs) > 0; normal-form segments then get identity charts.
  const Vec vcu = -dual_vector(vcs, s.Ec[0], s.Ec[0]).v_star;
  const double w1 = omega(vu, vs), w2 = omega(vcu, vcs);
  if (std::abs(w1) < 1e-10 || std::abs(w2) < 1e-10) fail(ErrorKind::DegeneratePairing, "type-IV pairing vanishes");
  const std::vector<Vec> os = detail::orbit_forward(s, s.Es, vs, 0, m);
  const std::vector<Vec> ocu = detail::orbit_forward(s, s.Ec, vcu, 0, m);

  Type4Witness out;
  out.ell = ell;
  std::vector<Mat> charts;
  std::vector<double> norms;
  for (int i = 0; i <= m; ++i) {
    const double nu = ou[i].norm();
    norms.push_back(nu);
    const Vec e1 = ou[i] / nu, f1 = nu * os[i] / w1, e2 = ocu[i] / nu, f2 = nu * ocs[i] / w2;
    const double K1 = std::max({e1.norm(), f1.norm(), e2.norm(), f2.norm()});
    charts.push_back(orthosymplectic_extend({e1, e2}, {f1, f2}, K1, 0, 1e-9).chart);
  }
  std::vector<double> a;
  for (int i = 0; i < m; ++i) {
    out.c.push_back(norms[i + 1] / norms[i]);
    a.push_back(std::log(out.c.back()));
  }
  out.C1 = 0.0;
  for (double x : a) out.C1 = std::max(out.C1, std::abs(x));
  out.delta1 = std::numeric_limits<double>::infinity();
  for (int i = 0; i + ell <= m; ++i) {
    double sum = 0;
    for (int j = 0; j < ell; ++j) sum += a[i + j];
    out.delta1 = std::min(out.delta1, sum);
  }
  if (!(out.delta1 > 0)) {
    std::ostringstream msg;
    msg << "type IV fails: minimal window sum of log c_i is " << out.delta1 << " (window " << ell << ")";
    fail(ErrorKind::Numeric, msg.str());
  }
  // A constant shift of b leaves every c-hat unchanged; anchoring b_0 = 0 keeps segments
  // already in normal form on identity charts.
  const Correction corr = correct_exponent_sequence(a, ell, out.C1, out.delta1);
  for (double x : corr.b) out.b.push_back(x - corr.b.front());
  out.tau = std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) {
    out.c_hat.push_back(std::exp(out.b[i + 1] - out.b[i]) * out.c[i]);
    out.tau = std::min(out.tau, out.c_hat.back());
  }
  for (int i = 0; i <= m; ++i) {
    Mat D = Mat::Identity(2 * N, 2 * N);
    D.topLeftCorner(N, N) *= std::exp(out.b[i]);
    D.bottomRightCorner(N, N) *= std::exp(-out.b[i]);
    out.charts.push_back(D * charts[i]);
  }
  out.K4 = detail::max_chart_norm(out.charts);
  if (!(out.tau > tau_target)) {
    std::ostringstream msg;
    msg << "type IV fails: corrected rate " << out.tau << " <= tau " << tau_target;
    fail(ErrorKind::Numeric, msg.str());
  }
  return out;
}

// ------------------------------------------------------------- classifier

/// Clauses are tried in the order I, II, III, IV; the lowest index wins inside a clause.
inline SegmentClass classify_segment(const Segment& s, const Thresholds& th, int m) {
  th.validate();
  if (m < th.m0 || m > s.length()) fail(ErrorKind::Precondition, "need m0 <= m <= segment length");
  const Nondominance nd = nondominance_holds(s, m);
  if (!nd.holds) fail(ErrorKind::Precondition, "segment is dominated (ratio " + std::to_string(nd.ratio) + " < 1/2)");
  SegmentClass out;
  out.constants["nondominance_ratio"] = nd.ratio;
  out.constants["alpha"] = th.alpha;

  for (int i = 0; i <= m; ++i) {
    const double ang = subspace_angle(s.Eu[i], s.Ecs(i));
    if (ang < th.alpha) {
      out.tag = SegmentType::I;
      out.location = {i};
      out.constants["angle"] = ang;
      return out;
    }
  }
  for (int i = 0; i < m; ++i) {
    Mat P = Mat::Identity(s.ambient(), s.ambient());
    for (int j = i + 1; j <= m; ++j) {
      P = s.mats[j - 1] * P;
      const double q = domination_ratio(P, s.Eu[i], s.Ecs(i));
      if (q > th.K2) {
        out.tag = SegmentType::II;
        out.location = {i, j};
        out.constants["K2"] = th.K2;
        out.constants["ratio"] = q;
        return out;
      }
    }
  }
  for (int k = 0; k + th.m0 <= m; ++k) {
    const double q = domination_ratio(product(s.mats, k, k + th.m0), s.Eu[k], s.Es[k]);
    if (q >= 0.5) {
      const Type3Witness w = build_type3_witness(s, k, th.m0);
      out.tag = SegmentType::III;
      out.location = {k, k + th.m0};
      out.witnesses = w.charts;
      out.constants["ratio"] = q;
      out.constants["K3"] = w.K3;
      out.constants["K3_bound"] = w.bound;
      out.constants["pairing"] = w.pairing;
      out.constants["min_dual_product"] = w.min_product;
      return out;
    }
  }
  const Type4Witness w = build_type4_witness(detail::truncate(s, 0, m), th.tau, th.m0);
  out.tag = SegmentType::IV;
  out.location = {0, m};
  out.witnesses = w.charts;
  out.rates = w.c_hat;
  out.raw_rates = w.c;
  out.shifts = w.b;
  out.constants["K4"] = w.K4;
  out.constants["tau"] = w.tau;
  out.constants["tau_target"] = th.tau;
  out.constants["C1"] = w.C1;
  out.constants["delta1"] = w.delta1;
  out.constants["ell"] = w.ell;
  return out;
}

// ----------------------------------------------------------- verification

struct WitnessReport {
  std::vector<double> per_step;  // worst residual attributed to chart index i
  double norm_excess = 0.0;      // max(||L^{+-1}|| - K, 0)
  double symplectic = 0.0;       // chart symplecticity defect
  double placement = 0.0;        // sine distance of L^{-1} canonical vectors to their bundles
  double normal_form = 0.0;      // deviation of the conjugated maps from the normal form
  double complement = 0.0;       // leakage of the complementary coordinate plane
  double clause = 0.0;           // violation of the clause inequality (types I, II, IV rates)
  double max = 0.0;
  int worst_step = -1;
};

inline WitnessReport verify_type_witness(const SegmentClass& cls, const Segment& s) {
  WitnessReport r;
  auto bump = [&](double& slot, double v, int step) {
    slot = std::max(slot, v);
    if (step >= 0) r.per_step[step] = std::max(r.per_step[step], v);
  };
  if (cls.tag == SegmentType::I) {
    const int i = cls.location.at(0);
    r.clause = std::max(0.0, subspace_angle(s.Eu[i], s.Ecs(i)) - cls.constants.at("alpha"));
  } else if (cls.tag == SegmentType::II) {
    const int i = cls.location.at(0), j = cls.location.at(1);
    r.clause = std::max(0.0, cls.constants.at("K2") - domination_ratio(product(s.mats, i, j), s.Eu[i], s.Ecs(i)));
  } else {
    const int n = s.ambient(), N = n / 2;
    const int k = cls.location.at(0);
    const auto& L = cls.witnesses;
    r.per_step.assign(L.size(), 0.0);
    const double K = cls.tag == SegmentType::III ? cls.constants.at("K3") : cls.constants.at("K4");
    std::vector<Mat> Linv;
    for (std::size_t i = 0; i < L.size(); ++i) {
      Linv.push_back(L[i].fullPivLu().inverse());
      const int si = static_cast<int>(i);
      bump(r.norm_excess, std::max({0.0, spectral_norm(L[i]) - K * (1 + 1e-12), spectral_norm(Linv[i]) - K * (1 + 1e-12)}), si);
      bump(r.symplectic, symplectic_defect(L[i]) / std::max(1.0, spectral_norm(L[i]) * spectral_norm(L[i])), si);
      const int z = k + si;
      bump(r.placement, distance_to_subspace(Linv[i].col(0), s.Eu[z]), si);
      bump(r.placement, distance_to_subspace(Linv[i].col(N), s.Es[z]), si);
      if (cls.tag == SegmentType::IV) {
        bump(r.placement, distance_to_subspace(Linv[i].col(1), s.Ec[z]), si);
        bump(r.placement, distance_to_subspace(Linv[i].col(N + 1), s.Ec[z]), si);
      }
    }
    // Coordinates of the distinguished plane: {p1, q1} for III, {p1, p2, q1, q2} for IV.
    std::vector<int> plane = cls.tag == SegmentType::III ? std::vector<int>{0, N} : std::vector<int>{0, 1, N, N + 1};
    std::vector<int> rest;
    for (int c = 0; c < n; ++c)
      if (std::find(plane.begin(), plane.end(), c) == plane.end()) rest.push_back(c);
    for (std::size_t i = 0; i + 1 < L.size(); ++i) {
      const Mat A = L[i + 1] * s.mats[k + i] * Linv[i];
      const int si = static_cast<int>(i);
      const double scale = std::max(1.0, spectral_norm(A));
      Mat target = Mat::Zero(n, n);
      if (cls.tag == SegmentType::III) {
        target(0, 0) = target(N, N) = 1.0;
      } else {
        const double c = cls.rates.at(i);
        target(0, 0) = target(1, 1) = c;
        target(N, N) = target(N + 1, N + 1) = 1.0 / c;
        bump(r.clause, std::max(0.0, cls.constants.at("tau_target") - c), si);
      }
      double nf = 0.0;
      for (int col : plane)
        for (int row = 0; row < n; ++row) nf = std::max(nf, std::abs(A(row, col) - target(row, col)));
      bump(r.normal_form, nf / scale, si);
      double leak = 0.0;
      for (int col : rest)
        for (int row : plane) leak = std::max(leak, std::abs(A(row, col)));
      bump(r.complement, leak / scale, si);
    }
  }
  r.max = std::max({r.norm_excess, r.symplectic, r.placement, r.normal_form, r.complement, r.clause});
  for (std::size_t i = 0; i < r.per_step.size(); ++i)
    if (r.per_step[i] > 0 && (r.worst_step < 0 || r.per_step[i] > r.per_step[r.worst_step])) r.worst_step = static_cast<int>(i);
  return r;
}

// ------------------------------------------------------- segment families

/// Non-dominated N = 2, p = 1 segments for each type. All use E^u = p1, E^c = span(p2, q2),
/// E^s = q1 before any conjugation, and are meant for the thresholds in family_thresholds().
namespace family {

inline Thresholds thresholds() { return {0.1, 100.0, 3, 1.01}; }

inline Segment coordinate(const std::vector<Mat>& mats) {
  return make_segment(mats, coordinate_subspace(4, {0}), coordinate_subspace(4, {1, 3}), coordinate_subspace(4, {2}));
}

inline Mat center_rotation(double t, double r = 1.0) {
  Mat A = Mat::Identity(4, 4);
  A(0, 0) = r, A(2, 2) = 1.0 / r;
  A(1, 1) = A(3, 3) = std::cos(t);
  A(1, 3) = -std::sin(t), A(3, 1) = std::sin(t);
  return A;
}

/// Type I: E^u tilted toward q1 by alpha/10 through a shear, over an identity or conformal base.
template <class Rng>
Segment angle_pinch(Rng& rng, int m, double alpha) {
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Mat> base;
  const bool conformal = u(rng) < 0.5;
  for (int i = 0; i < m; ++i) base.push_back(conformal ? diag_symplectic({1.5, 1.5}) : Mat::Identity(4, 4));
  Mat G = Mat::Identity(4, 4);
  G(2, 0) = 1.0 / std::tan(alpha / 10);
  return conjugate_segment(coordinate(base), G);
}

/// Type II: diag(1, rho, 1, 1/rho) with rho in [2.2, 3]; rho^10 exceeds 16 K2.
template <class Rng>
Segment rate_swap(Rng& rng, int m) {
  std::uniform_real_distribution<double> u(2.2, 3.0);
  std::vector<Mat> mats;
  for (int i = 0; i < m; ++i) mats.push_back(diag_symplectic({1.0, u(rng)}));
  return coordinate(mats);
}

/// Type III: diag(r, 1/r) on p1q1 with r^m <= 2, and a rotation of the center plane.
template <class Rng>
Segment identity_plane(Rng& rng, int m, int m0) {
  std::uniform_real_distribution<double> u(0, 1);
  const double r = std::pow(2.0, u(rng) / (4.0 * m0));
  std::vector<Mat> mats;
  for (int i = 0; i < m; ++i) mats.push_back(center_rotation(2 * kPi * u(rng), r));
  return coordinate(mats);
}

/// Type IV: diag(c_i, c_i, 1/c_i, 1/c_i) with period-m0 rates whose window product is >= 1.5.
template <class Rng>
Segment conformal(Rng& rng, int m, int m0) {
  std::uniform_real_distribution<double> u(0.6, 2.0);
  std::vector<double> period(m0);
  double prod = 1.0;
  for (auto& c : period) prod *= (c = u(rng));
  if (prod < 1.5) period[0] *= 1.5 / prod;
  std::uniform_int_distribution<int> phase(0, m0 - 1);
  const int ph = phase(rng);
  std::vector<Mat> mats;
  for (int i = 0; i < m; ++i) {
    const double c = period[(i + ph) % m0];
    mats.push_back(diag_symplectic({c, c}));
  }
  return coordinate(mats);
}

}  // namespace family

}  // namespace symc
