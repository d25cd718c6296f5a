#pragma once

// Random walks on R/piZ with an absorbing window around pi/2, the horizon m1, and the
// itinerary simulation of the type-IV kick cascade in R^4.

#include <array>
#include <optional>
#include <random>

#include "kick.hpp"

namespace symc {

// ------------------------------------------------------------- substreams

/// Generator for unit `index` of stream `domain`; results never depend on evaluation order.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index, std::uint32_t domain = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32), domain};
  return std::mt19937_64(seq);
}

// ------------------------------------------------------------------ walks

struct StepSource {
  enum class Kind { PointMass, Uniform, Empirical };
  Kind kind = Kind::Uniform;
  double theta0 = 0.0;        // point mass location
  double radius = 0.0;        // uniform on (-radius, radius)
  std::vector<double> table;  // empirical law, drawn uniformly

  static StepSource point_mass(double t) {
    if (!std::isfinite(t)) fail(ErrorKind::Parameter, "point mass location must be finite");
    StepSource s;
    s.kind = Kind::PointMass;
    s.theta0 = centered_mod_pi(t);
    return s;
  }
  static StepSource uniform(double r) {
    if (!(r >= 0 && r < kPi / 2)) fail(ErrorKind::Parameter, "uniform radius must lie in [0, pi/2)");
    StepSource s;
    s.kind = Kind::Uniform;
    s.radius = r;
    return s;
  }
  static StepSource empirical(std::vector<double> t) {
    if (t.empty()) fail(ErrorKind::Parameter, "empirical step table is empty");
    StepSource s;
    s.kind = Kind::Empirical;
    for (double& x : t) x = centered_mod_pi(x);
    s.table = std::move(t);
    return s;
  }
  /// True when every step is 0 mod pi, so S_n never leaves 0.
  bool degenerate() const {
    switch (kind) {
      case Kind::PointMass: return theta0 == 0.0;
      case Kind::Uniform: return radius == 0.0;
      case Kind::Empirical:
        for (double x : table)
          if (x != 0.0) return false;
        return true;
    }
    return true;
  }
};

struct WalkConfig {
  StepSource steps;
  double alpha = 0.4;
  double kappa = 0.5;
  long m_max = 1000;
  long paths = 1000;
  std::uint64_t seed = 0;
  bool grow = true;         // find_m1 may double m_max
  long m_cap = 1L << 24;    // growth budget

  void validate() const {
    if (paths < 1) fail(ErrorKind::Parameter, "paths must be >= 1");
    if (!(alpha > 0 && alpha < kPi / 2)) fail(ErrorKind::Parameter, "alpha must lie in (0, pi/2)");
    if (!(kappa > 0 && kappa < 1)) fail(ErrorKind::Parameter, "kappa must lie in (0, 1)");
    if (m_max < 1) fail(ErrorKind::Parameter, "m_max must be >= 1");
  }
};

struct WalkResult {
  long m_max = 0, paths = 0;
  std::vector<double> failure_prob;  // index m = 0..m_max
  std::vector<double> std_error;     // binomial standard errors
  std::vector<long> absorption;      // per path: absorption step, -1 if censored at m_max
  std::optional<long> m1;
  std::string diagnostic;

  double ci_halfwidth(long m) const { return 1.96 * std_error.at(m); }
};

namespace detail {

/// Uniform double in [0, 1) from the top 53 bits. libstdc++'s generate_canonical evaluates
/// long double logarithms per call, which dominates the cost of a walk step.
inline double unit_double(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// A path in flight: S in [0, pi) after n steps, with its own substream.
struct PathState {
  std::mt19937_64 rng;
  double S = 0.0;
  long n = 0;
};

/// Continues the path up to step `limit`; the first n with ||S_n - pi/2|| <= window, or -1.
/// On [0, pi) the circle distance to pi/2 is |S - pi/2|.
template <class Draw>
long advance(PathState& p, Draw&& draw, double window, long limit) {
  const double lo = kPi / 2 - window, hi = kPi / 2 + window;
  double S = p.S;
  for (long n = p.n + 1; n <= limit; ++n) {
    S += draw(p.rng);
    if (S >= kPi) S -= kPi;
    else if (S < 0) S += kPi;
    if (S >= lo && S <= hi) {
      p.S = S, p.n = n;
      return n;
    }
  }
  p.S = S, p.n = std::max(p.n, limit);
  return -1;
}

inline long advance(PathState& p, const WalkConfig& cfg, long limit) {
  const double window = cfg.alpha / 20;
  const StepSource& s = cfg.steps;
  switch (s.kind) {
    case StepSource::Kind::PointMass: return advance(p, [&](std::mt19937_64&) { return s.theta0; }, window, limit);
    case StepSource::Kind::Uniform: {
      const double r = s.radius;
      return advance(p, [&](std::mt19937_64& g) { return r * (2 * unit_double(g) - 1); }, window, limit);
    }
    case StepSource::Kind::Empirical: {
      std::uniform_int_distribution<std::size_t> pick(0, s.table.size() - 1);
      return advance(p, [&](std::mt19937_64& g) { return s.table[pick(g)]; }, window, limit);
    }
  }
  return -1;
}

inline PathState start_path(const WalkConfig& cfg, long index) {
  return {substream(cfg.seed, static_cast<std::uint64_t>(index)), 0.0, 0};
}

inline long absorption_time(const WalkConfig& cfg, long index, long limit) {
  PathState p = start_path(cfg, index);
  return advance(p, cfg, limit);
}

inline void tabulate(const WalkConfig& cfg, WalkResult& r) {
  std::vector<long> hits(r.m_max + 1, 0);
  for (long t : r.absorption)
    if (t > 0) ++hits[t];
  r.failure_prob.assign(r.m_max + 1, 0.0);
  r.std_error.assign(r.m_max + 1, 0.0);
  long alive = r.paths;
  const double n = static_cast<double>(r.paths);
  r.m1.reset();
  for (long m = 0; m <= r.m_max; ++m) {
    alive -= hits[m];
    const double p = alive / n;
    r.failure_prob[m] = p;
    r.std_error[m] = std::sqrt(p * (1 - p) / n);
    if (m > 0 && r.failure_prob[m] > r.failure_prob[m - 1]) fail(ErrorKind::Numeric, "failure probability increased");
    if (!r.m1 && m > 0 && p + 2 * r.std_error[m] < cfg.kappa / 20) r.m1 = m;
  }
}

}  // namespace detail

/// Monte Carlo estimate of P[||S_n - pi/2|| > alpha/20 for all n <= m], m = 0..m_max.
inline WalkResult simulate_walk(const WalkConfig& cfg) {
  cfg.validate();
  WalkResult r;
  r.m_max = cfg.m_max;
  r.paths = cfg.paths;
  r.absorption.resize(cfg.paths);
  if (cfg.steps.degenerate()) {
    std::fill(r.absorption.begin(), r.absorption.end(), -1L);
    r.diagnostic = "steps vanish mod pi; the walk never moves";
  } else {
    for (long i = 0; i < cfg.paths; ++i) r.absorption[i] = detail::absorption_time(cfg, i, cfg.m_max);
  }
  detail::tabulate(cfg, r);
  return r;
}

/// simulate_walk, doubling m_max (up to m_cap) while m1 is absent. Censored paths resume from
/// their saved state, so the result equals a single run at the final m_max.
inline WalkResult find_m1(const WalkConfig& cfg) {
  if (!cfg.grow || cfg.steps.degenerate()) {
    WalkResult r = simulate_walk(cfg);
    if (!r.m1 && r.diagnostic.empty()) r.diagnostic = "m1 not reached within m_max";
    return r;
  }
  cfg.validate();
  WalkResult r;
  r.m_max = cfg.m_max;
  r.paths = cfg.paths;
  r.absorption.resize(cfg.paths);
  std::vector<std::pair<long, detail::PathState>> censored;
  for (long i = 0; i < cfg.paths; ++i) {
    detail::PathState p = detail::start_path(cfg, i);
    r.absorption[i] = detail::advance(p, cfg, cfg.m_max);
    if (r.absorption[i] < 0) censored.emplace_back(i, std::move(p));
  }
  detail::tabulate(cfg, r);
  WalkConfig c = cfg;
  while (!r.m1 && c.m_max < c.m_cap) {
    c.m_max = std::min(2 * c.m_max, c.m_cap);
    std::vector<std::pair<long, detail::PathState>> still;
    for (auto& [i, p] : censored) {
      r.absorption[i] = detail::advance(p, c, c.m_max);
      if (r.absorption[i] < 0) still.emplace_back(i, std::move(p));
    }
    censored = std::move(still);
    r.m_max = c.m_max;
    detail::tabulate(c, r);
  }
  if (!r.m1) r.diagnostic = "growth budget exhausted at m_max = " + std::to_string(r.m_max);
  return r;
}

// ---------------------------------------------------------- fixed-size R^4

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

namespace detail {

inline double theta4(const Vec4& v) {
  if (v(0) == 0.0 && v(1) == 0.0) fail(ErrorKind::UndefinedAngle, "p-projection is zero");
  return mod_pi(std::atan2(v(1), v(0)));
}

inline bool in_cone4(const Vec4& v) { return std::hypot(v(2), v(3)) < std::hypot(v(0), v(1)); }

inline Mat4 rotation4(double t) {
  const double c = std::cos(t), s = std::sin(t);
  Mat4 R = Mat4::Zero();
  R(0, 0) = R(1, 1) = R(2, 2) = R(3, 3) = c;
  R(0, 1) = R(2, 3) = -s;
  R(1, 0) = R(3, 2) = s;
  return R;
}

/// L_v and its inverse, as shear_map_Lv.
inline std::pair<Mat4, Mat4> shear4(const Vec4& v) {
  if (!in_cone4(v)) fail(ErrorKind::ConeViolation, "tracked direction left the cone C_1");
  const double theta = theta4(v);
  Vec4 u = rotation4(-theta) * v;
  u /= u(0);
  Mat4 M = Mat4::Identity(), Mi = Mat4::Identity();
  M(2, 0) = u(2), M(2, 1) = u(3), M(3, 0) = u(3);
  Mi(2, 0) = -u(2), Mi(2, 1) = -u(3), Mi(3, 0) = -u(3);
  return {rotation4(theta) * M, Mi * rotation4(-theta)};
}

inline Mat4 diag4(double a, double b, double c, double d) { return Vec4(a, b, c, d).asDiagonal(); }

/// The kick s zeta(|x - c|^2 / r^2) (p2 - c_p2) with fixed-size RK4 for the time-1 map.
struct Kick4 {
  double s = 0.0, r = 1.0;
  Vec4 c = Vec4::Zero();
  BumpProfile z{BumpKind::Zeta, 0.2};

  bool inert(const Vec4& x) const { return s == 0.0 || (x - c).squaredNorm() >= r * r; }

  // f = J grad H, A = J D^2 H.
  void field(const Vec4& x, Vec4& f, Mat4& A) const {
    const Vec4 y = x - c;
    const double r2 = r * r, t = y.squaredNorm() / r2;
    const double d1 = z.d1(t), d2 = z.d2(t);
    Vec4 g = s * y(1) * 2 * d1 / r2 * y;
    g(1) += s * z.value(t);
    Mat4 S = s * y(1) * (4 * d2 / (r2 * r2)) * y * y.transpose();
    S.diagonal().array() += s * y(1) * 2 * d1 / r2;
    const Vec4 gz = 2 * d1 / r2 * y;
    S.row(1) += s * gz.transpose();
    S.col(1) += s * gz;
    f << -g(2), -g(3), g(0), g(1);
    A.topRows<2>() = -S.bottomRows<2>();
    A.bottomRows<2>() = S.topRows<2>();
  }
};

struct Flow4 {
  Vec4 end;
  Mat4 tangent;
};

inline Flow4 flow4(const Kick4& k, const Vec4& x0, int steps) {
  Flow4 out{x0, Mat4::Identity()};
  if (k.inert(x0)) return out;
  const double h = 1.0 / steps;
  Vec4 f[4], xs;
  Mat4 A[4], K[4], Ys;
  Vec4& x = out.end;
  Mat4& Y = out.tangent;
  for (int n = 0; n < steps; ++n) {
    k.field(x, f[0], A[0]);
    K[0].noalias() = A[0] * Y;
    xs = x + 0.5 * h * f[0], Ys = Y + 0.5 * h * K[0];
    k.field(xs, f[1], A[1]);
    K[1].noalias() = A[1] * Ys;
    xs = x + 0.5 * h * f[1], Ys = Y + 0.5 * h * K[1];
    k.field(xs, f[2], A[2]);
    K[2].noalias() = A[2] * Ys;
    xs = x + h * f[2], Ys = Y + h * K[2];
    k.field(xs, f[3], A[3]);
    K[3].noalias() = A[3] * Ys;
    x += h / 6 * (f[0] + 2 * f[1] + 2 * f[2] + f[3]);
    Y += h / 6 * (K[0] + 2 * K[1] + 2 * K[2] + K[3]);
  }
  return out;
}

inline Hamiltonian to_hamiltonian(const Kick4& k) {
  if (k.s == 0.0) return zero_hamiltonian(4);
  return kick_family(k.s, Vec(k.c), k.r, k.z.sigma);
}

/// Smallest doubling step count whose RK4 map matches the midpoint reference to tol on samples.
inline std::pair<int, double> calibrate_steps(const Kick4& k, double tol, int samples, std::uint64_t seed) {
  if (k.s == 0.0) return {1, 0.0};
  const Hamiltonian H = to_hamiltonian(k);
  std::mt19937_64 rng(seed);
  std::vector<Vec4> pts;
  std::vector<FlowResult> ref;
  for (int i = 0; i < samples; ++i) {
    pts.push_back(k.c + k.r * Vec4(uniform_in_ball(4, rng)));
    ref.push_back(flow(H, 1.0, Vec(pts.back()), {1e-13, Integrator::Midpoint, 0, false}));
  }
  for (int steps = 1; steps <= 256; steps *= 2) {
    double err = 0.0;
    for (int i = 0; i < samples; ++i) {
      const Flow4 f = flow4(k, pts[i], steps);
      err = std::max({err, (f.end - Vec4(ref[i].endpoint)).norm(), (f.tangent - Mat4(ref[i].tangent)).norm()});
    }
    if (err <= tol) return {steps, err};
  }
  fail(ErrorKind::Numeric, "fixed-step kick integrator cannot reach the calibration tolerance");
}

}  // namespace detail

// --------------------------------------------------------------- cascade

struct CascadeConfig {
  std::vector<double> rates{2.0};  // c_n, cycled when shorter than the depth
  double delta = 1.0;              // Hessian budget of the kick; 0 disables it
  double alpha = 1.5;
  double kappa = 0.5;
  long depth = 0;                  // 0: the estimated m1 of the step law on the box
  int grid = 2;                    // cells per axis in each subdivision
  double eta = 0.0;                // 0: min(alpha / (100 K^2 m), kappa / (20 m))
  std::uint64_t seed = 0;
  int itineraries = 1000;
  int traced = 3;                  // itineraries with per-level records
  long trace_levels = 2000;        // record cap per traced itinerary
  int nu_samples = 20000;          // step-law table behind the m1 estimate
  long walk_paths = 10000;
  double unstable_rate = 2.0;      // c_u of the post-arrival map diag(c_u, 1, 1/c_u, 1)
  int post_steps = 10;
  std::uint64_t kick_seed = 0;
  int hist_bins = 36;

  void validate() const {
    if (rates.empty()) fail(ErrorKind::Parameter, "rates must be non-empty");
    for (double c : rates)
      if (!(c > 1)) fail(ErrorKind::Parameter, "every rate c_i must exceed 1");
    if (!(delta >= 0)) fail(ErrorKind::Parameter, "delta must be >= 0");
    if (!(alpha > 0 && alpha < kPi / 2)) fail(ErrorKind::Parameter, "alpha must lie in (0, pi/2)");
    if (!(kappa > 0 && kappa < 1)) fail(ErrorKind::Parameter, "kappa must lie in (0, 1)");
    if (depth < 0) fail(ErrorKind::Parameter, "depth must be >= 0");
    if (grid < 2) fail(ErrorKind::Parameter, "grid must be >= 2");
    if (!(eta >= 0)) fail(ErrorKind::Parameter, "eta must be >= 0");
    if (itineraries < 1) fail(ErrorKind::Parameter, "itineraries must be >= 1");
    if (nu_samples < 1 || walk_paths < 1) fail(ErrorKind::Parameter, "sample counts must be >= 1");
    if (!(unstable_rate > 1) || post_steps < 1) fail(ErrorKind::Parameter, "need unstable_rate > 1 and post_steps >= 1");
    if (hist_bins < 1) fail(ErrorKind::Parameter, "hist_bins must be >= 1");
  }
};

/// Realized constants of the construction.
struct CascadeConstants {
  double K_theta = 0.0;         // Lipschitz constant of Theta on unit vectors of C_1
  double K_map = 0.0;           // Lipschitz constant of v -> N(Dg v) on unit vectors of C_1
  double K = 0.0;               // max of the two, at least 1
  double dh_lipschitz = 0.0;    // sup ||D(Dh)||, sampled with a 2x safety factor
  double kick_deviation = 0.0;  // sup ||L Dh L^{-1} - Id|| over sampled points and charts of C_1
  double eps_prime = 0.0;       // ||M - Id|| < eps' implies M(C_1) in C_{tau^2}
  double tau = 0.0;             // min c_i
  int kick_steps = 1;           // RK4 steps of the fast kick map
  double kick_calibration = 0.0;
};

struct CascadeSetup {
  detail::Kick4 kick;
  double kick_scale = 0.0;
  StepLaw nu_box;                    // X(u) for u uniform in the box [-1, 1]^4
  std::optional<WalkResult> walk;    // m1 estimate, when the depth was not given
  long depth = 0;
  double eta = 0.0;
  CascadeConstants constants;
};

struct ItinerarySummary {
  long index = 0;
  bool arrived = false;
  long arrival_level = -1;
  double weight = 1.0;                 // mass kept after fringe losses
  double final_theta = 0.0;            // Theta of the tracked direction at level m
  double max_residual = 0.0;           // max ||Delta Theta - X_n|| on not-yet levels
  double max_arrived_increment = 0.0;  // max ||Delta Theta|| on arrived levels
  double log_measure = 0.0;            // log of the final box measure, -4 log(grid) sum k
  double measure_residual = 0.0;       // |log P(W) - log_measure|
  double log_norm = 0.0;               // log ||D(g_{m-1} ... g_0) dp1||
  double min_cone_margin = 1.0;        // min of 1 - ||q|| / ||p|| along the orbit
  double max_kick_deviation = 0.0;     // max ||L Dh L^{-1} - Id||_F over not-yet levels
  std::array<double, 4> final_direction{};

  bool operator==(const ItinerarySummary&) const = default;
};

struct LevelRecord {
  long itinerary = 0, level = 0;
  std::array<double, 4> u{};  // normalized position in the level box
  double theta = 0.0;         // Theta of the tracked direction entering the level
  double step_angle = 0.0;    // X_n(omega)
  double increment = 0.0;     // Theta out minus Theta in, centered
  double residual = 0.0;
  int k_block = 0, k_box = 0;
  double fringe = 0.0;
  double weight = 1.0;
  bool arrived = false;
};

struct NormDrop {
  bool empty = true;               // G has no mass
  int horizon = 0;
  double unstable_rate = 0.0;      // c_u
  double unperturbed_rate = 0.0;   // log c_u, the rate of dp1
  double perturbed_rate = 0.0;     // mean (1/n) log ||U^n v|| over G
  double gap = 0.0;
  double unperturbed_orbit_rate = 0.0;  // over the cascade and the post-arrival steps
  double perturbed_orbit_rate = 0.0;
  std::array<double, 4> component_mass{};   // mean squared components of v on G
  std::array<double, 4> component_rates{};  // log c_u, 0, -log c_u, 0
};

struct CascadeResult {
  CascadeConfig config;
  CascadeSetup setup;
  double arrived_fraction = 0.0;
  double not_arrived = 0.0;
  double measure_loss = 0.0;
  std::vector<double> theta_histogram;  // mass of final Theta per bin of [0, pi)
  std::vector<double> arrived_by_level; // mass arriving at each level
  std::vector<double> loss_by_level;    // mass lost to fringes at each level
  NormDrop wedge_drop;
  std::vector<ItinerarySummary> itineraries;
  std::vector<LevelRecord> trace;
};

namespace detail {

inline Vec4 uniform_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec4 x;
  for (int k = 0; k < 4; ++k) x(k) = u(rng);
  return x;
}

inline Vec4 cone_unit_vector(std::mt19937_64& rng) {
  for (;;) {
    const Vec4 v = Vec4(random_unit_vector(4, rng));
    if (in_cone4(v) && std::hypot(v(2), v(3)) < 0.999 * std::hypot(v(0), v(1))) return v;
  }
}

/// Largest eps with (Id + E)(C_1) in C_{tau^2} whenever ||E|| < eps. The worst unit v lies on the
/// boundary, ||p|| = ||q|| = 1/sqrt2, and E v = (-b p/||p||, a q/||q||) maximizes a + tau^2 b.
inline double cone_threshold(double tau) {
  const double t2 = tau * tau;
  return (t2 - 1) / std::sqrt(2 * (1 + t2 * t2));
}

inline double rate_at(const CascadeConfig& cfg, long n) { return cfg.rates[static_cast<std::size_t>(n) % cfg.rates.size()]; }

inline double step_angle(const Flow4& f) { return centered_mod_pi(theta4(f.tangent.col(0))); }

inline CascadeConstants measure_constants(const CascadeConfig& cfg, const Kick4& k, int steps, std::uint64_t seed) {
  CascadeConstants c;
  c.kick_steps = steps;
  c.tau = *std::min_element(cfg.rates.begin(), cfg.rates.end());
  c.eps_prime = cone_threshold(c.tau);
  std::mt19937_64 rng = substream(seed, 0, 3);
  const int samples = 2000;
  const double cmax = *std::max_element(cfg.rates.begin(), cfg.rates.end());
  for (int i = 0; i < samples; ++i) {
    const Vec4 u = k.c + k.r * Vec4(uniform_in_ball(4, rng));
    const Flow4 f = flow4(k, u, steps);
    const auto [L, Li] = shear4(cone_unit_vector(rng));
    const Mat4 P = L * f.tangent * Li;
    c.kick_deviation = std::max(c.kick_deviation, spectral_norm(P - Mat4::Identity()));
    // Derivative of v -> N(G v) is (I - n n^T) G / ||G v||.
    const Mat4 G = diag4(cmax, cmax, 1 / cmax, 1 / cmax) * P;
    const Vec4 v = cone_unit_vector(rng);
    const Vec4 Gv = G * v;
    const Vec4 n = Gv.normalized();
    c.K_map = std::max(c.K_map, spectral_norm((Mat4::Identity() - n * n.transpose()) * G) / Gv.norm());
    // Theta: |d Theta| = |p x dp| / |p|^2, sup over unit directions is 1 / |p|.
    c.K_theta = std::max(c.K_theta, 1.0 / std::hypot(v(0), v(1)));
    if (k.s != 0.0) {
      const Vec4 e = Vec4(random_unit_vector(4, rng));
      const double h = 1e-5;
      const Flow4 a = flow4(k, u + h * e, steps), b = flow4(k, u - h * e, steps);
      c.dh_lipschitz = std::max(c.dh_lipschitz, 2.0 * spectral_norm(a.tangent - b.tangent) / (2 * h));
    }
  }
  c.K = std::max({c.K_theta, c.K_map, 1.0});
  return c;
}

}  // namespace detail

/// Kick, step law on the box, horizon and eta. Deterministic in the config.
inline CascadeSetup prepare_cascade(const CascadeConfig& cfg) {
  cfg.validate();
  CascadeSetup s;
  if (cfg.delta > 0) {
    const KickHamiltonian kh = make_kick_hamiltonian({cfg.delta, cfg.alpha, cfg.kick_seed, 0.2, 2000});
    s.kick.s = kh.scale;
    s.kick.c = Vec4(kh.H.support_center);
    s.kick.r = kh.H.support_radius;
    s.kick.z = make_bump(BumpKind::Zeta, kh.sigma);
    s.kick_scale = kh.scale;
  }
  const auto [steps, err] = detail::calibrate_steps(s.kick, 1e-10, 40, cfg.seed ^ 0x2545f4914f6cdd1dULL);
  std::mt19937_64 rng = substream(cfg.seed, 0, 2);
  s.nu_box.samples.reserve(cfg.nu_samples);
  for (int i = 0; i < cfg.nu_samples; ++i) s.nu_box.samples.push_back(detail::step_angle(detail::flow4(s.kick, detail::uniform_box(rng), steps)));
  summarize(s.nu_box);
  s.depth = cfg.depth;
  if (s.depth == 0) {
    // diag(1, -1, -1, 1) about the kick center commutes with h, preserves the ball and negates
    // X, so the law is symmetric; mirroring the table removes the drift of its sample mean.
    std::vector<double> table = s.nu_box.samples;
    for (double x : s.nu_box.samples) table.push_back(-x);
    WalkConfig w;
    w.steps = StepSource::empirical(std::move(table));
    w.alpha = cfg.alpha;
    w.kappa = cfg.kappa;
    w.m_max = 1024;
    w.paths = cfg.walk_paths;
    w.seed = cfg.seed ^ 0x5851f42d4c957f2dULL;
    s.walk = find_m1(w);
    if (!s.walk->m1) fail(ErrorKind::Parameter, "cannot estimate m1 for the step law (" + s.walk->diagnostic + "); give --depth");
    s.depth = *s.walk->m1;
  }
  s.constants = detail::measure_constants(cfg, s.kick, steps, cfg.seed);
  s.constants.kick_calibration = err;
  const double K2 = s.constants.K * s.constants.K;
  const double m = static_cast<double>(s.depth);
  const double eta_max = std::min(cfg.alpha / (100 * K2 * m), cfg.kappa / (20 * m));
  if (cfg.eta > eta_max * (1 + 1e-12)) fail(ErrorKind::Parameter, "eta exceeds min(alpha / (100 K^2 m), kappa / (20 m))");
  s.eta = cfg.eta > 0 ? cfg.eta : eta_max;
  return s;
}

namespace detail {

struct LevelTotals {
  std::vector<double> arrived, loss;
};

/// One itinerary: omega_n drawn from the product measure, boxes tracked in normalized coordinates.
inline ItinerarySummary run_itinerary(const CascadeConfig& cfg, const CascadeSetup& s, long j, LevelTotals* totals,
                                      std::vector<LevelRecord>* trace) {
  const CascadeConstants& K = s.constants;
  const int steps = K.kick_steps;
  const double eta = s.eta, g = cfg.grid, lg = std::log(g);
  const int kGuard = 200;
  std::mt19937_64 rng = substream(cfg.seed, static_cast<std::uint64_t>(j), 1);
  ItinerarySummary out;
  out.index = j;
  Vec4 u = uniform_box(rng);
  Mat4 L = Mat4::Identity(), Li = Mat4::Identity();  // chart of the current box
  Vec4 vp = Vec4::UnitX();                             // tracked direction, unit
  double theta = 0.0;
  double lip = 0.0;  // Lipschitz constant of the direction field in box coordinates
  for (long n = 0; n < s.depth; ++n) {
    const double c = rate_at(cfg, n);
    const Mat4 B = diag4(c, c, 1 / c, 1 / c);
    if (out.arrived) {
      // The box is carried by B alone, which preserves Theta and the box shape.
      const Vec4 w = B * vp;
      out.log_norm += std::log(w.norm());
      vp = w.normalized();
      const double t = theta4(vp);
      out.max_arrived_increment = std::max(out.max_arrived_increment, circle_distance(t, theta));
      theta = t;
      continue;
    }
    const Flow4 f = flow4(s.kick, u, steps);
    const double X = step_angle(f);
    const Mat4 BL = B * L;
    const Mat4 P = L * f.tangent * Li;
    // The Frobenius norm bounds the operator norm, so this certifies P(C_1) in C_{tau^2}.
    const double dev = (P - Mat4::Identity()).norm();
    if (!(dev < K.eps_prime))
      fail(ErrorKind::ConeViolation, "kick deviation " + std::to_string(dev) + " at level " + std::to_string(n) + " reaches eps' = " +
                                         std::to_string(K.eps_prime) + "; use a smaller delta");
    out.max_kick_deviation = std::max(out.max_kick_deviation, dev);
    const Mat4 G = B * P;
    const Vec4 w = G * vp;
    const double wn = w.norm();
    const Vec4 vnew = w / wn;
    const double tnew = theta4(vnew);
    const double residual = circle_distance(tnew, theta + X);

    // Blocks: sub-cubes of half-width R in h-image coordinates; the field varies by at most
    // lipz * 4R over one of them.
    const double lh = 1.0 + K.kick_deviation;
    const double lipz = 2 * lh * (BL.norm() * Li.norm() * K.dh_lipschitz + G.norm() * lip) / wn;
    int k1 = 0;
    double R = 1.0;
    while (lipz * 4 * R > eta / 2) {
      if (++k1 > kGuard) fail(ErrorKind::Parameter, "grid refinement exceeds the guard; use a smaller depth");
      R /= g;
    }
    const Vec4& z = f.end;
    Vec4 zeta;
    const double cells = std::pow(g, k1);
    for (int a = 0; a < 4; ++a) {
      const double idx = std::clamp(std::floor((z(a) + 1) / (2 * R)), 0.0, cells - 1);
      zeta(a) = -1 + (2 * idx + 1) * R;
    }
    const Mat4 Dhi = f.tangent.inverse();
    const Vec4 yb = u + Dhi * (zeta - z);
    const Flow4 fb = flow4(s.kick, yb, steps);
    const Vec4 vblock = (BL * fb.tangent * Li * vp).normalized();
    const auto [F, Fi] = shear4(vblock);

    // Boxes of half-width r = R g^{-k2} in the block, sheared by F; straddling boxes are dropped.
    const Mat4 Bi = diag4(1 / c, 1 / c, c, c);
    const Mat4 back = Li * Bi * F;  // box coordinates -> h-image coordinates, per unit of r
    // A box image reaches r ||row_a(back)||_1 along axis a, so straddling centers fill at most
    // that over R per axis; the factor 2 covers the tiling offset.
    double rows = 0.0;
    for (int a = 0; a < 4; ++a) rows += back.row(a).lpNorm<1>();
    int k2 = 0;
    double ratio = 1.0;
    while (2 * rows * ratio > eta) {
      if (++k2 > kGuard) fail(ErrorKind::Parameter, "grid refinement exceeds the guard; use a smaller depth");
      ratio /= g;
    }
    const double r = R * ratio;
    const double frac = 2 * rows * ratio;
    if (totals) totals->loss[n + 1] += out.weight * frac;
    out.weight *= 1 - frac;

    // Product-measure step: the point is uniform in its box.
    const Vec4 unew = uniform_box(rng);
    const Vec4 ybox = u - Dhi * (back * (r * unew));
    Vec4 vcenter = vnew;
    if (ybox != u) vcenter = (BL * flow4(s.kick, ybox, steps).tangent * Li * vp).normalized();

    // P(W) picks up |det(new chart)| r^4 / |det(B L)| per level; the final box measure is prod r^4.
    out.measure_residual += std::log(std::abs(F.determinant())) - std::log(std::abs(BL.determinant()));
    out.log_measure -= 4 * (k1 + k2) * lg;

    if (trace && n < cfg.trace_levels) {
      LevelRecord rec;
      rec.itinerary = j;
      rec.level = n;
      for (int a = 0; a < 4; ++a) rec.u[a] = u(a);
      rec.theta = theta;
      rec.step_angle = X;
      rec.increment = centered_mod_pi(tnew - theta);
      rec.residual = residual;
      rec.k_block = k1;
      rec.k_box = k2;
      rec.fringe = frac;
      rec.weight = out.weight;
      trace->push_back(rec);
    }

    out.log_norm += std::log(wn);
    out.max_residual = std::max(out.max_residual, residual);
    lip = lipz * r * (BL.inverse() * F).norm();
    L = F, Li = Fi;
    vp = vnew, theta = tnew, u = unew;
    if (!in_cone4(vp)) fail(ErrorKind::ConeViolation, "tracked direction left C_1 at level " + std::to_string(n + 1));
    out.min_cone_margin = std::min(out.min_cone_margin, 1 - std::hypot(vp(2), vp(3)) / std::hypot(vp(0), vp(1)));
    if (circle_distance(theta4(vcenter), kPi / 2) < cfg.alpha / 10) {
      out.arrived = true;
      out.arrival_level = n + 1;
      if (totals) totals->arrived[n + 1] += out.weight;
      if (trace && !trace->empty() && trace->back().itinerary == j) trace->back().arrived = true;
    }
  }
  out.measure_residual = std::abs(out.measure_residual);
  out.final_theta = theta;
  for (int a = 0; a < 4; ++a) out.final_direction[a] = vp(a);
  return out;
}

}  // namespace detail

/// Rate of the tracked directions on G under n further steps of U = diag(c_u, 1, 1/c_u, 1),
/// against the rate log c_u of dp1.
inline NormDrop norm_drop_report(const CascadeResult& res, int n, double c_u) {
  if (n < 1 || !(c_u > 1)) fail(ErrorKind::Parameter, "need n >= 1 and c_u > 1");
  NormDrop d;
  d.horizon = n;
  d.unstable_rate = c_u;
  const double lc = std::log(c_u);
  d.unperturbed_rate = lc;
  d.component_rates = {lc, 0.0, -lc, 0.0};
  double base = 0.0;
  for (long k = 0; k < res.setup.depth; ++k) base += std::log(detail::rate_at(res.config, k));
  const double m = static_cast<double>(res.setup.depth);
  d.unperturbed_orbit_rate = (base + n * lc) / (m + n);
  double mass = 0.0, rate = 0.0, orbit = 0.0;
  for (const auto& it : res.itineraries) {
    if (!it.arrived) continue;
    const auto& v = it.final_direction;
    const double a = std::pow(c_u, n);
    const double post = std::log(std::sqrt(a * a * v[0] * v[0] + v[1] * v[1] + v[2] * v[2] / (a * a) + v[3] * v[3]));
    mass += it.weight;
    rate += it.weight * post / n;
    orbit += it.weight * (it.log_norm + post) / (m + n);
    for (int k = 0; k < 4; ++k) d.component_mass[k] += it.weight * v[k] * v[k];
  }
  if (mass > 0) {
    d.empty = false;
    d.perturbed_rate = rate / mass;
    d.perturbed_orbit_rate = orbit / mass;
    for (double& x : d.component_mass) x /= mass;
  } else {
    d.perturbed_rate = d.unperturbed_rate;
    d.perturbed_orbit_rate = d.unperturbed_orbit_rate;
  }
  d.gap = d.unperturbed_rate - d.perturbed_rate;
  return d;
}

/// Runs cfg.itineraries itineraries; fractions are normalized by the itinerary count.
inline CascadeResult cascade_run(const CascadeConfig& cfg) {
  CascadeResult res;
  res.config = cfg;
  res.setup = prepare_cascade(cfg);
  const long m = res.setup.depth;
  detail::LevelTotals totals{std::vector<double>(m + 1, 0.0), std::vector<double>(m + 1, 0.0)};
  res.theta_histogram.assign(cfg.hist_bins, 0.0);
  for (long j = 0; j < cfg.itineraries; ++j) {
    std::vector<LevelRecord>* tr = j < cfg.traced ? &res.trace : nullptr;
    res.itineraries.push_back(detail::run_itinerary(cfg, res.setup, j, &totals, tr));
  }
  const double N = cfg.itineraries;
  for (const auto& it : res.itineraries) {
    (it.arrived ? res.arrived_fraction : res.not_arrived) += it.weight / N;
    res.measure_loss += (1 - it.weight) / N;
    const int bin = std::min(cfg.hist_bins - 1, static_cast<int>(it.final_theta / kPi * cfg.hist_bins));
    res.theta_histogram[bin] += it.weight / N;
  }
  for (double& x : totals.arrived) x /= N;
  for (double& x : totals.loss) x /= N;
  res.arrived_by_level = std::move(totals.arrived);
  res.loss_by_level = std::move(totals.loss);
  res.wedge_drop = norm_drop_report(res, cfg.post_steps, cfg.unstable_rate);
  return res;
}

struct CascadeVerification {
  double max_residual = 0.0, residual_bound = 0.0;              // (a) 2 K^2 eta
  double max_arrived_increment = 0.0, arrived_bound = 0.0;      // (b) K eta
  double max_measure_residual = 0.0;                            // (c)
  double total_loss = 0.0, loss_bound = 0.0;                    // (d) m eta
  double conservation = 0.0;                                    // |arrived + not + loss - 1|
  double max_final_offset = 0.0;                                // max ||Theta - pi/2|| on arrived
  double trace_angle_error = 0.0;                               // X_n against the midpoint integrator
  double max_kick_deviation = 0.0, eps_prime = 0.0;             // realized conjugated kicks against eps'
  long reruns = 0;
  bool deterministic = true;
  bool passed = false;
};

/// Checks the recorded itineraries and re-runs `reruns` of them from their substreams.
inline CascadeVerification cascade_verify(const CascadeResult& res, int reruns = 5, int trace_checks = 200) {
  CascadeVerification v;
  const double K = res.setup.constants.K, eta = res.setup.eta;
  v.residual_bound = 2 * K * K * eta;
  v.arrived_bound = K * eta;
  v.loss_bound = res.setup.depth * eta;
  v.eps_prime = res.setup.constants.eps_prime;
  for (const auto& it : res.itineraries) {
    v.max_residual = std::max(v.max_residual, it.max_residual);
    v.max_arrived_increment = std::max(v.max_arrived_increment, it.max_arrived_increment);
    v.max_measure_residual = std::max(v.max_measure_residual, it.measure_residual);
    v.max_kick_deviation = std::max(v.max_kick_deviation, it.max_kick_deviation);
    if (it.arrived) v.max_final_offset = std::max(v.max_final_offset, circle_distance(it.final_theta, kPi / 2));
  }
  v.total_loss = res.measure_loss;
  v.conservation = std::abs(res.arrived_fraction + res.not_arrived + res.measure_loss - 1);
  const long n = static_cast<long>(res.itineraries.size());
  for (int k = 0; k < reruns && n > 0; ++k) {
    const long j = (k * n) / std::max(1, reruns);
    const ItinerarySummary again = detail::run_itinerary(res.config, res.setup, j, nullptr, nullptr);
    v.deterministic = v.deterministic && again == res.itineraries[j];
    ++v.reruns;
  }
  const Hamiltonian H = detail::to_hamiltonian(res.setup.kick);
  const long stride = std::max<long>(1, static_cast<long>(res.trace.size()) / std::max(1, trace_checks));
  for (std::size_t i = 0; i < res.trace.size(); i += stride) {
    const LevelRecord& r = res.trace[i];
    const Vec x = Vec4(r.u[0], r.u[1], r.u[2], r.u[3]);
    double X = 0.0;
    if (!res.setup.kick.inert(x)) X = centered_mod_pi(direction_angle(flow(H, 1.0, x, {1e-12, Integrator::Midpoint, 0, false}).tangent.col(0)));
    v.trace_angle_error = std::max(v.trace_angle_error, circle_distance(X, r.step_angle));
  }
  v.passed = v.max_residual <= v.residual_bound && v.max_arrived_increment <= v.arrived_bound && v.max_measure_residual <= 1e-9 &&
             v.total_loss <= v.loss_bound && v.conservation <= 1e-9 && v.deterministic && v.trace_angle_error <= 1e-8 &&
             v.max_kick_deviation < v.eps_prime;
  return v;
}

}  // namespace symc
