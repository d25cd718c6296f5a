#pragma once

// m-domination, the non-dominance ratio and partial hyperbolicity on finite segments.
// The first bundle of a splitting is always the dominating one.

#include <limits>
#include <optional>

#include "cocycle.hpp"

namespace symc {

struct DominationReport {
  int m = 0;
  int index = 0;
  bool passed = false;
  double worst_ratio = 0.0;
  int worst_step = -1;
};

/// ||Pi|E2|| / m(Pi|E1) with Pi the m-step product from step i.
inline double domination_ratio(const Mat& Pi, const Subspace& E1, const Subspace& E2) {
  const double conorm = restricted_conorm(Pi, E1);
  if (!(conorm > 0)) fail(ErrorKind::SingularMatrix, "product collapses the first bundle");
  return restricted_norm(Pi, E2) / conorm;
}

/// Sup over admissible starts i in [0, n-m] of the domination ratio.
inline DominationReport is_m_dominated(const SplitSeq& seq, int m) {
  const int n = static_cast<int>(seq.mats.size());
  if (m < 1 || m > n) fail(ErrorKind::Horizon, "horizon m=" + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");
  DominationReport r{m, seq.E1.at(0).dim(), false, 0.0, -1};
  for (int i = 0; i + m <= n; ++i) {
    const double q = domination_ratio(product(seq.mats, i, i + m), seq.E1[i], seq.E2[i]);
    if (q > r.worst_ratio || r.worst_step < 0) r.worst_ratio = q, r.worst_step = i;
  }
  r.passed = r.worst_ratio <= 0.5;
  return r;
}

/// Smallest passing m <= m_max (capped by the sequence length).
inline std::optional<int> domination_horizon(const SplitSeq& seq, int m_max) {
  if (m_max < 1) fail(ErrorKind::Parameter, "m_max must be >= 1");
  const int cap = std::min<int>(m_max, static_cast<int>(seq.mats.size()));
  for (int m = 1; m <= cap; ++m)
    if (is_m_dominated(seq, m).passed) return m;
  return std::nullopt;
}

struct Nondominance {
  bool holds = false;
  double ratio = 0.0;
};

/// ||Pi_m|E^cs_0|| / m(Pi_m|E^u_0) >= 1/2 at the segment start.
inline Nondominance nondominance_holds(const Segment& s, int m) {
  if (m < 1 || m > s.length()) fail(ErrorKind::Horizon, "segment shorter than m");
  const double q = domination_ratio(product(s.mats, 0, m), s.Eu[0], s.Ecs(0));
  return {q >= 0.5, q};
}

struct PHReport {
  int m = 0;
  DominationReport u_over_cs, uc_over_s;
  double min_unstable_conorm = 0.0;  // inf over starts of m(Pi_m|E^u), must be >= 2
  double max_stable_norm = 0.0;      // sup over starts of ||Pi_m|E^s||, must be <= 1/2
  bool passed = false;
};

inline PHReport partial_hyperbolicity_check(const Segment& s, int m) {
  PHReport r;
  r.m = m;
  r.u_over_cs = is_m_dominated(split_u_cs(s), m);
  r.uc_over_s = is_m_dominated(split_uc_s(s), m);
  r.min_unstable_conorm = std::numeric_limits<double>::infinity();
  for (int i = 0; i + m <= s.length(); ++i) {
    const Mat Pi = product(s.mats, i, i + m);
    r.min_unstable_conorm = std::min(r.min_unstable_conorm, restricted_conorm(Pi, s.Eu[i]));
    r.max_stable_norm = std::max(r.max_stable_norm, restricted_norm(Pi, s.Es[i]));
  }
  r.passed = r.u_over_cs.passed && r.uc_over_s.passed && r.min_unstable_conorm >= 2.0 && r.max_stable_norm <= 0.5;
  return r;
}

struct DsPhReport {
  DominationReport domination;
  std::optional<int> ph_horizon;
  std::optional<PHReport> ph;
};

/// Checks that an m-dominated E^u + E^cs refines to a partially hyperbolic splitting at some m' <= m_cap.
inline DsPhReport verify_ds_implies_ph(const Segment& s, int m, int m_cap = 64) {
  if (s.p > half_dim(s.ambient())) fail(ErrorKind::Precondition, "dim E^u exceeds N");
  DsPhReport r;
  r.domination = is_m_dominated(split_u_cs(s), m);
  if (!r.domination.passed)
    fail(ErrorKind::Precondition, "E^u + E^cs is not " + std::to_string(m) + "-dominated (ratio " + std::to_string(r.domination.worst_ratio) + ")");
  const int cap = std::min(m_cap, s.length());
  for (int k = 1; k <= cap; ++k) {
    PHReport ph = partial_hyperbolicity_check(s, k);
    if (ph.passed) {
      r.ph_horizon = k;
      r.ph = ph;
      break;
    }
  }
  return r;
}

}  // namespace symc
