#pragma once

// Compactly supported Hamiltonians, their time-t flows with tangent maps, and the
// cylinder construction that lifts planar perturbations to higher dimension.

#include <functional>
#include <random>

#include "symplin.hpp"

namespace symc {

// ---------------------------------------------------------------- bumps

namespace detail {

// S' = c s^6 (1 - s)^6 with c = 13! / (6! 6!), so S(0) = 0, S(1) = 1 and S is C^6 at both ends.
// The flows integrate D^2 H, which must stay C^4 for fourth-order convergence across the shells.
inline constexpr double kSmoothstepC = 12012.0;
inline constexpr double kSmoothstepBinom[7] = {1, 6, 15, 20, 15, 6, 1};

// Power series about 0, used on [0, 1/2] only.
inline double smoothstep_low(double s) {
  double acc = 0.0;
  for (int i = 6; i >= 0; --i) acc = acc * s + (i % 2 ? -1 : 1) * kSmoothstepBinom[i] / (7 + i);
  return kSmoothstepC * std::pow(s, 7) * acc;
}
inline double smoothstep_int_low(double s) {
  double acc = 0.0;
  for (int i = 6; i >= 0; --i) acc = acc * s + (i % 2 ? -1 : 1) * kSmoothstepBinom[i] / ((7 + i) * (8 + i));
  return kSmoothstepC * std::pow(s, 8) * acc;
}

// S(s) = 1 - S(1 - s) keeps the series away from cancellation near 1.
inline double smoothstep(double s) { return s <= 0.5 ? smoothstep_low(s) : 1.0 - smoothstep_low(1.0 - s); }
inline double smoothstep_d1(double s) { return kSmoothstepC * std::pow(s * (1 - s), 6); }
inline double smoothstep_d2(double s) { return 6 * kSmoothstepC * std::pow(s * (1 - s), 5) * (1 - 2 * s); }
// Antiderivative of S vanishing at 0; the integral over [0, 1] is 1/2.
inline double smoothstep_int(double s) { return s <= 0.5 ? smoothstep_int_low(s) : s - 0.5 + smoothstep_int_low(1.0 - s); }

inline constexpr double kSmoothstepD1Max = kSmoothstepC / 4096;  // S'(1/2)
// |S''| peaks where (1 - 2s)^2 = 1/11.
inline const double kSmoothstepD2Max = 6 * kSmoothstepC * std::pow(10.0 / 11.0 / 4.0, 5) / std::sqrt(11.0);

}  // namespace detail

enum class BumpKind { Zeta, Rho };

/// zeta: 1 on (-inf, sigma], 0 on [1, inf). rho: t on [0, sigma], constant (1 + sigma) / 2 on [1, inf),
/// with 0 <= rho' <= 1. Both are C^6 and polynomial on [sigma, 1].
struct BumpProfile {
  BumpKind kind = BumpKind::Zeta;
  double sigma = 0.5;

  double width() const { return 1.0 - sigma; }
  double s(double t) const { return std::clamp((t - sigma) / width(), 0.0, 1.0); }

  double value(double t) const {
    if (kind == BumpKind::Zeta) return 1.0 - detail::smoothstep(s(t));
    if (t <= sigma) return t;
    const double u = s(t);
    return sigma + width() * (u - detail::smoothstep_int(u));
  }
  double d1(double t) const {
    if (kind == BumpKind::Zeta) return t <= sigma || t >= 1 ? 0.0 : -detail::smoothstep_d1(s(t)) / width();
    return t <= sigma ? 1.0 : 1.0 - detail::smoothstep(s(t));
  }
  double d2(double t) const {
    if (t <= sigma || t >= 1) return 0.0;
    const double w = width();
    if (kind == BumpKind::Zeta) return -detail::smoothstep_d2(s(t)) / (w * w);
    return -detail::smoothstep_d1(s(t)) / w;
  }
  /// Analytic sup |first derivative| and sup |second derivative|.
  double d1_bound() const { return kind == BumpKind::Zeta ? detail::kSmoothstepD1Max / width() : 1.0; }
  double d2_bound() const {
    const double w = width();
    return kind == BumpKind::Zeta ? detail::kSmoothstepD2Max / (w * w) : detail::kSmoothstepD1Max / w;
  }
};

/// Builds the profile and checks the stated derivative bounds on a dense grid.
inline BumpProfile make_bump(BumpKind kind, double sigma) {
  if (!(sigma > 0 && sigma < 1)) fail(ErrorKind::Parameter, "bump sigma must lie in (0, 1)");
  BumpProfile b{kind, sigma};
  const double lim1 = (kind == BumpKind::Zeta ? b.d1_bound() : 1.0) * (1 + 1e-12);
  const double lim2 = b.d2_bound() * (1 + 1e-12);
  for (int k = 0; k <= 20000; ++k) {
    const double t = -0.5 + 2.0 * k / 20000;
    const double v = b.value(t), a1 = b.d1(t), a2 = b.d2(t);
    const bool ok = kind == BumpKind::Zeta ? (v >= -1e-15 && v <= 1 + 1e-15 && std::abs(a1) <= lim1 && std::abs(a2) <= lim2)
                                           : (a1 >= -1e-15 && a1 <= 1 + 1e-15 && std::abs(a2) <= lim2);
    if (!ok) fail(ErrorKind::Numeric, "bump profile violates its derivative bounds at t = " + std::to_string(t));
  }
  return b;
}

// ---------------------------------------------------------- Hamiltonians

/// Smooth H on R^{2N}, equal to outside_value off the ball B(support_center, support_radius).
/// The bounds are certified suprema: |H - outside_value|, ||DH|| and ||D^2 H||.
struct Hamiltonian {
  int dim = 0;
  std::function<double(const Vec&)> value;
  std::function<void(const Vec&, Vec&)> gradient;
  std::function<void(const Vec&, Mat&)> hessian;
  Vec support_center;
  double support_radius = 0.0;
  double outside_value = 0.0;
  double value_bound = 0.0;
  double gradient_bound = 0.0;
  double hessian_bound = 0.0;

  Vec grad(const Vec& x) const {
    Vec g(dim);
    gradient(x, g);
    return g;
  }
  Mat hess(const Vec& x) const {
    Mat S(dim, dim);
    hessian(x, S);
    return S;
  }
};

inline Hamiltonian zero_hamiltonian(int dim) {
  Hamiltonian H;
  H.dim = dim;
  H.value = [](const Vec&) { return 0.0; };
  H.gradient = [](const Vec&, Vec& g) { g.setZero(); };
  H.hessian = [](const Vec&, Mat& S) { S.setZero(); };
  H.support_center = Vec::Zero(dim);
  return H;
}

/// H(p, q) = (alpha / 2) rho(p^2 + q^2) on R^2; rotation by t alpha on the disk p^2 + q^2 <= sigma.
inline Hamiltonian make_rot_hamiltonian(double alpha, double sigma) {
  if (!(alpha > 0)) fail(ErrorKind::Parameter, "alpha must be positive");
  const BumpProfile rho = make_bump(BumpKind::Rho, sigma);
  Hamiltonian H;
  H.dim = 2;
  H.value = [=](const Vec& x) { return 0.5 * alpha * rho.value(x.squaredNorm()); };
  H.gradient = [=](const Vec& x, Vec& g) { g = alpha * rho.d1(x.squaredNorm()) * x; };
  H.hessian = [=](const Vec& x, Mat& S) {
    const double t = x.squaredNorm();
    S = 2 * alpha * rho.d2(t) * x * x.transpose();
    S.diagonal().array() += alpha * rho.d1(t);
  };
  H.support_center = Vec::Zero(2);
  H.support_radius = 1.0;
  H.outside_value = 0.5 * alpha * rho.value(1.0);
  H.value_bound = H.outside_value;
  H.gradient_bound = alpha;
  // ||D^2 H|| <= alpha (rho' + 2 |rho''| t) with t <= 1 wherever rho'' is nonzero.
  H.hessian_bound = alpha * (1 + 2 * rho.d2_bound());
  return H;
}

// ----------------------------------------------------------------- flows

enum class Integrator { Midpoint, RK4 };

struct FlowOptions {
  double tol = 1e-10;
  Integrator method = Integrator::Midpoint;
  int steps = 0;              // 0: step doubling until the Richardson estimate is below tol
  bool check_bounds = true;   // enforce the displacement and tangent bounds
};

struct FlowResult {
  Vec endpoint;
  Mat tangent;
  int steps = 0;
  double symp_defect = 0.0;
  double displacement = 0.0;        // ||phi(x) - x||
  double displacement_bound = 0.0;  // |t| sup ||DH||
  double tangent_deviation = 0.0;   // ||D phi - Id||
  double tangent_bound = 0.0;       // exp(|t| sup ||D^2 H||) - 1
};

namespace detail {

inline void apply_J(const Vec& v, Vec& out) {
  const Eigen::Index N = v.size() / 2;
  out.resize(v.size());
  out.head(N) = -v.tail(N);
  out.tail(N) = v.head(N);
}

inline void apply_J(const Mat& A, Mat& out) {
  const Eigen::Index N = A.rows() / 2;
  out.resize(A.rows(), A.cols());
  out.topRows(N) = -A.bottomRows(N);
  out.bottomRows(N) = A.topRows(N);
}

/// Implicit midpoint step x -> 2z - x with z = x + (h/2) J grad H(z); its derivative is the
/// Cayley transform of (h/2) J D^2 H(z), hence exactly symplectic.
inline void midpoint_step(const Hamiltonian& H, double h, Vec& x, Mat& Y) {
  const int n = H.dim;
  Vec g(n), Jg(n), z(n), F(n);
  Mat S(n, n), JS(n, n);
  H.gradient(x, g);
  apply_J(g, Jg);
  z = x + 0.5 * h * Jg;
  const Mat I = Mat::Identity(n, n);
  bool converged = false;
  for (int it = 0; it < 50; ++it) {
    H.gradient(z, g);
    apply_J(g, Jg);
    F = z - x - 0.5 * h * Jg;
    H.hessian(z, S);
    apply_J(S, JS);
    if (F.norm() <= 1e-15 * (1 + z.norm())) {
      converged = true;
      break;
    }
    z -= (I - 0.5 * h * JS).partialPivLu().solve(F);
  }
  if (!converged) fail(ErrorKind::Numeric, "implicit midpoint iteration did not converge; reduce the step");
  const Mat A = 0.5 * h * JS;
  Y = (I - A).partialPivLu().solve((I + A) * Y);
  x = 2 * z - x;
}

inline void rk4_step(const Hamiltonian& H, double h, Vec& x, Mat& Y) {
  const int n = H.dim;
  Vec g(n), k[4], xs(n);
  Mat S(n, n), JS(n, n), K[4], Ys(n, n);
  auto eval = [&](const Vec& xx, const Mat& YY, Vec& kx, Mat& kY) {
    H.gradient(xx, g);
    apply_J(g, kx);
    H.hessian(xx, S);
    apply_J(S, JS);
    kY.noalias() = JS * YY;
  };
  eval(x, Y, k[0], K[0]);
  xs = x + 0.5 * h * k[0], Ys = Y + 0.5 * h * K[0];
  eval(xs, Ys, k[1], K[1]);
  xs = x + 0.5 * h * k[1], Ys = Y + 0.5 * h * K[1];
  eval(xs, Ys, k[2], K[2]);
  xs = x + h * k[2], Ys = Y + h * K[2];
  eval(xs, Ys, k[3], K[3]);
  x += h / 6 * (k[0] + 2 * k[1] + 2 * k[2] + k[3]);
  Y += h / 6 * (K[0] + 2 * K[1] + 2 * K[2] + K[3]);
}

// Yoshida triple-jump weights: three midpoint substeps give a symmetric fourth-order map.
inline const double kYoshida1 = 1.0 / (2.0 - std::cbrt(2.0));
inline const double kYoshida0 = -std::cbrt(2.0) / (2.0 - std::cbrt(2.0));

inline void integrate_fixed(const Hamiltonian& H, double t, int steps, Integrator method, Vec& x, Mat& Y) {
  const double h = t / steps;
  for (int k = 0; k < steps; ++k) {
    if (method == Integrator::RK4) {
      rk4_step(H, h, x, Y);
    } else {
      midpoint_step(H, kYoshida1 * h, x, Y);
      midpoint_step(H, kYoshida0 * h, x, Y);
      midpoint_step(H, kYoshida1 * h, x, Y);
    }
  }
}

}  // namespace detail

/// Time-t map of x' = J0 grad H(x) together with its tangent map.
inline FlowResult flow(const Hamiltonian& H, double t, const Vec& x, const FlowOptions& opt = {}) {
  if (x.size() != H.dim) fail(ErrorKind::InvalidDimension, "point dimension does not match the Hamiltonian");
  if (!(opt.tol > 0)) fail(ErrorKind::Parameter, "flow tolerance must be positive");
  FlowResult r;
  r.endpoint = x;
  r.tangent = Mat::Identity(H.dim, H.dim);
  if (t != 0.0) {
    if (opt.steps > 0) {
      r.steps = opt.steps;
      detail::integrate_fixed(H, t, opt.steps, opt.method, r.endpoint, r.tangent);
    } else {
      int n = std::max(1, static_cast<int>(std::ceil(std::abs(t) * H.hessian_bound)));
      Vec x1 = x;
      Mat Y1 = Mat::Identity(H.dim, H.dim);
      detail::integrate_fixed(H, t, n, opt.method, x1, Y1);
      for (;;) {
        Vec x2 = x;
        Mat Y2 = Mat::Identity(H.dim, H.dim);
        detail::integrate_fixed(H, t, 2 * n, opt.method, x2, Y2);
        // Fourth order: the finer run is off by about a fifteenth of the difference.
        const double err = std::max((x2 - x1).norm(), (Y2 - Y1).norm()) / 15.0;
        n *= 2;
        x1 = std::move(x2), Y1 = std::move(Y2);
        if (err <= opt.tol) break;
        if (n > (1 << 22)) fail(ErrorKind::Numeric, "flow step size underflow");
      }
      r.steps = n;
      r.endpoint = std::move(x1);
      r.tangent = std::move(Y1);
    }
  }
  r.symp_defect = symplectic_defect(r.tangent);
  r.displacement = (r.endpoint - x).norm();
  r.displacement_bound = std::abs(t) * H.gradient_bound;
  if (opt.check_bounds) {
    r.tangent_deviation = spectral_norm(r.tangent - Mat::Identity(H.dim, H.dim));
    r.tangent_bound = std::expm1(std::abs(t) * H.hessian_bound);
    const double slack = 10 * opt.tol;
    if (r.displacement > r.displacement_bound + slack)
      fail(ErrorKind::Numeric, "flow displacement exceeds |t| sup ||DH||");
    if (r.tangent_deviation > r.tangent_bound + slack)
      fail(ErrorKind::Numeric, "flow tangent deviation exceeds exp(|t| sup ||D^2 H||) - 1");
  }
  return r;
}

// ---------------------------------------------------- coordinate changes

/// H1(x) = a^{-2} H(a x); its flow is a^{-1} phi_H(a x) and its Hessian bound is unchanged.
inline Hamiltonian rescale_hamiltonian(const Hamiltonian& H, double a) {
  if (!(a > 0)) fail(ErrorKind::Parameter, "rescale factor must be positive");
  Hamiltonian R = H;
  R.value = [H, a](const Vec& x) { return H.value(a * x) / (a * a); };
  R.gradient = [H, a](const Vec& x, Vec& g) {
    H.gradient(a * x, g);
    g /= a;
  };
  R.hessian = [H, a](const Vec& x, Mat& S) { H.hessian(a * x, S); };
  R.support_center = H.support_center / a;
  R.support_radius = H.support_radius / a;
  R.outside_value = H.outside_value / (a * a);
  R.value_bound = H.value_bound / (a * a);
  R.gradient_bound = H.gradient_bound / a;
  return R;
}

/// H2(x) = H(M x) for symplectic M; its flow is M^{-1} phi_H M.
inline Hamiltonian conjugate_hamiltonian(const Hamiltonian& H, const Mat& M) {
  if (M.rows() != H.dim || M.cols() != H.dim) fail(ErrorKind::InvalidDimension, "conjugating map has the wrong size");
  if (!is_symplectic(M, 1e-10 * std::max(1.0, M.squaredNorm()))) fail(ErrorKind::Precondition, "conjugating map is not symplectic");
  const Mat Mi = symplectic_inverse(M);
  const double nM = spectral_norm(M);
  Hamiltonian C = H;
  C.value = [H, M](const Vec& x) { return H.value(M * x); };
  C.gradient = [H, M](const Vec& x, Vec& g) {
    Vec gm(H.dim);
    H.gradient(M * x, gm);
    g.noalias() = M.transpose() * gm;
  };
  C.hessian = [H, M](const Vec& x, Mat& S) {
    Mat Sm(H.dim, H.dim);
    H.hessian(M * x, Sm);
    S.noalias() = M.transpose() * Sm * M;
  };
  C.support_center = Mi * H.support_center;
  C.support_radius = H.support_radius * spectral_norm(Mi);
  C.gradient_bound = H.gradient_bound * nM;
  C.hessian_bound = H.hessian_bound * nM * nM;
  return C;
}

// ------------------------------------------------------------ kick family

struct KickSpec {
  double delta = 0.5;    // Hessian budget
  double alpha = 1.5;    // the induced step law must live in (-alpha/20, alpha/20)
  std::uint64_t seed = 0;
  double sigma = 0.2;    // inner radius of the bump profile
  int samples = 2000;    // points used to certify the step law
};

template <class Rng>
Vec uniform_in_ball(int dim, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return random_unit_vector(dim, rng) * std::pow(u(rng), 1.0 / dim);
}

namespace detail {

/// s zeta(|x - c|^2 / r^2) (p2 - c_p2) on R^4, with B(c, r) inside the unit ball.
inline Hamiltonian kick_family(double s, const Vec& c, double r, double sigma) {
  const BumpProfile z = make_bump(BumpKind::Zeta, sigma);
  Hamiltonian H;
  H.dim = 4;
  const double r2 = r * r;
  H.value = [=](const Vec& x) {
    const Vec y = x - c;
    return s * z.value(y.squaredNorm() / r2) * y(1);
  };
  H.gradient = [=](const Vec& x, Vec& g) {
    const Vec y = x - c;
    const double t = y.squaredNorm() / r2;
    g = s * y(1) * 2 * z.d1(t) / r2 * y;
    g(1) += s * z.value(t);
  };
  H.hessian = [=](const Vec& x, Mat& S) {
    const Vec y = x - c;
    const double t = y.squaredNorm() / r2;
    const double d1 = z.d1(t), d2 = z.d2(t);
    S = s * y(1) * (4 * d2 / (r2 * r2)) * y * y.transpose();
    S.diagonal().array() += s * y(1) * 2 * d1 / r2;
    const Vec gz = 2 * d1 / r2 * y;
    S.row(1) += s * gz.transpose();
    S.col(1) += s * gz;
  };
  H.support_center = c;
  H.support_radius = r;
  H.value_bound = s * r;
  // On the support |y| <= r and |p2 - c_p2| <= r.
  H.gradient_bound = s * (2 * z.d1_bound() + 1);
  H.hessian_bound = s * (4 * z.d2_bound() + 6 * z.d1_bound()) / r;
  return H;
}

}  // namespace detail

struct StepLaw {
  std::vector<double> samples;  // centered angles in [-pi/2, pi/2)
  double mean = 0.0, variance = 0.0, support_radius = 0.0;
};

inline void summarize(StepLaw& law) {
  const double n = static_cast<double>(law.samples.size());
  double m = 0, v = 0, r = 0;
  for (double x : law.samples) m += x, r = std::max(r, std::abs(x));
  m /= n;
  for (double x : law.samples) v += (x - m) * (x - m);
  law.mean = m, law.variance = v / n, law.support_radius = r;
}

/// Theta(Dh(x) dp1) as a centered angle, h the time-1 map of H.
inline double kick_angle(const Hamiltonian& H, const Vec& x, const FlowOptions& opt) {
  if ((x - H.support_center).norm() >= H.support_radius) return 0.0;
  const FlowResult f = flow(H, 1.0, x, opt);
  Vec v = f.tangent.col(0);
  return centered_mod_pi(direction_angle(v));
}

/// Step law of the kick: x uniform in the unit ball of R^4, angle of Dh(x) dp1.
inline StepLaw sample_nu(const Hamiltonian& H, int n, std::uint64_t seed, const FlowOptions& opt = {1e-10, Integrator::Midpoint, 0, false}) {
  if (n < 1) fail(ErrorKind::Parameter, "sample count must be >= 1");
  if (H.dim != 4) fail(ErrorKind::InvalidDimension, "step law needs a Hamiltonian on R^4");
  std::mt19937_64 rng(seed);
  StepLaw law;
  law.samples.reserve(n);
  for (int k = 0; k < n; ++k) law.samples.push_back(kick_angle(H, uniform_in_ball(4, rng), opt));
  summarize(law);
  return law;
}

struct KickHamiltonian {
  Hamiltonian H;
  double scale = 0.0;  // the factor s
  double sigma = 0.2;  // bump inner radius
  StepLaw nu;          // certification sample
};

/// Fixed-form kick with ||D^2 H|| < delta, rescaled until the sampled step law sits inside alpha/20.
inline KickHamiltonian make_kick_hamiltonian(const KickSpec& spec) {
  if (!(spec.delta > 0)) fail(ErrorKind::Parameter, "delta must be positive");
  if (!(spec.alpha > 0 && spec.alpha < kPi / 2)) fail(ErrorKind::Parameter, "alpha must lie in (0, pi/2)");
  std::mt19937_64 rng(spec.seed);
  Vec c = Vec::Zero(4);
  double r = 1.0;
  if (spec.seed != 0) {
    c = uniform_in_ball(4, rng) * 0.3;
    r = 1.0 - c.norm();
  }
  const double target = spec.alpha / 20;
  const double unit = detail::kick_family(1.0, c, r, spec.sigma).hessian_bound;
  double s = 0.9 * spec.delta / unit;
  for (int attempt = 0; attempt < 20; ++attempt) {
    KickHamiltonian k{detail::kick_family(s, c, r, spec.sigma), s, spec.sigma, {}};
    k.nu = sample_nu(k.H, spec.samples, spec.seed ^ 0x9e3779b97f4a7c15ULL);
    if (!(k.nu.variance > 0)) break;
    if (k.nu.support_radius < 0.9 * target) return k;
    s *= 0.8 * target / k.nu.support_radius;
  }
  fail(ErrorKind::Parameter, "kick step law cannot be confined to alpha/20 with positive variance; use a larger alpha or delta");
}

// ------------------------------------------------------ dimension reduction

/// Indices of the first nu symplectic pairs of R^{2N} and of the remaining pairs.
inline std::pair<std::vector<int>, std::vector<int>> split_indices(int N, int nu) {
  std::vector<int> xi, yi;
  for (int k = 0; k < N; ++k) (k < nu ? xi : yi).push_back(k);
  for (int k = 0; k < N; ++k) (k < nu ? xi : yi).push_back(N + k);
  return {xi, yi};
}

inline Mat sub_block(const Mat& A, const std::vector<int>& r, const std::vector<int>& c) {
  Mat B(r.size(), c.size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) B(i, j) = A(r[i], c[j]);
  return B;
}

struct DimensionReduction {
  int N = 0, nu = 0;
  double a = 0.0;       // cylinder height
  double sigma = 0.0;   // G-hat = {|x| < 1, |y| < sigma a}
  double delta = 0.0;   // max Hessian bound of the planar Hamiltonians
  double measure_ratio = 0.0;     // mu(G-hat) / mu(U-hat) = sigma^{2(N - nu)}
  double sampled_hessian = 0.0;   // largest ||D^2 H-hat_i|| seen on the verification sample
  std::vector<Hamiltonian> H_hats;
  std::vector<Mat> B, C;          // blocks of the A_i
};

namespace detail {

/// H-hat(x, y) = (H(x) - H_inf) zeta(|P y| / a), P = (C_{i-1} ... C_0)^{-1}.
inline Hamiltonian lift_hamiltonian(const Hamiltonian& Hx, const Mat& P, double a, const BumpProfile& z, int N, int nu) {
  const auto [xi, yi] = split_indices(N, nu);
  Hamiltonian L;
  L.dim = 2 * N;
  auto split = [xi, yi](const Vec& w, Vec& x, Vec& y) {
    x.resize(xi.size()), y.resize(yi.size());
    for (std::size_t k = 0; k < xi.size(); ++k) x(k) = w(xi[k]);
    for (std::size_t k = 0; k < yi.size(); ++k) y(k) = w(yi[k]);
  };
  const double Hinf = Hx.outside_value;
  L.value = [=](const Vec& w) {
    Vec x, y;
    split(w, x, y);
    return (Hx.value(x) - Hinf) * z.value((P * y).norm() / a);
  };
  L.gradient = [=](const Vec& w, Vec& g) {
    Vec x, y;
    split(w, x, y);
    const Vec u = P * y;
    const double nu_ = u.norm(), s = nu_ / a;
    const double psi = z.value(s);
    Vec gy = Vec::Zero(y.size());
    if (z.d1(s) != 0.0) gy = z.d1(s) / (a * nu_) * (P.transpose() * u);
    Vec gx(x.size());
    Hx.gradient(x, gx);
    g.setZero(2 * N);
    const double h = Hx.value(x) - Hinf;
    for (std::size_t k = 0; k < xi.size(); ++k) g(xi[k]) = psi * gx(k);
    for (std::size_t k = 0; k < yi.size(); ++k) g(yi[k]) = h * gy(k);
  };
  L.hessian = [=](const Vec& w, Mat& S) {
    Vec x, y;
    split(w, x, y);
    const Vec u = P * y;
    const double n = u.norm(), s = n / a;
    const double psi = z.value(s), d1 = z.d1(s), d2 = z.d2(s);
    Vec gy = Vec::Zero(y.size());
    Mat Sy = Mat::Zero(y.size(), y.size());
    if (d1 != 0.0 || d2 != 0.0) {
      const Vec uh = u / n;
      const Vec Pu = P.transpose() * uh;
      gy = d1 / a * Pu;
      const Mat proj = Mat::Identity(u.size(), u.size()) - uh * uh.transpose();
      Sy = d2 / (a * a) * Pu * Pu.transpose() + d1 / (a * n) * P.transpose() * proj * P;
    }
    Vec gx(x.size());
    Mat Sx(x.size(), x.size());
    Hx.gradient(x, gx);
    Hx.hessian(x, Sx);
    const double h = Hx.value(x) - Hinf;
    S.setZero(2 * N, 2 * N);
    for (std::size_t i = 0; i < xi.size(); ++i)
      for (std::size_t j = 0; j < xi.size(); ++j) S(xi[i], xi[j]) = psi * Sx(i, j);
    for (std::size_t i = 0; i < yi.size(); ++i)
      for (std::size_t j = 0; j < yi.size(); ++j) S(yi[i], yi[j]) = h * Sy(i, j);
    for (std::size_t i = 0; i < xi.size(); ++i)
      for (std::size_t j = 0; j < yi.size(); ++j) S(xi[i], yi[j]) = S(yi[j], xi[i]) = gx(i) * gy(j);
  };
  L.support_center = Vec::Zero(2 * N);
  L.support_radius = std::numeric_limits<double>::infinity();
  L.value_bound = Hx.value_bound;
  const double nP = spectral_norm(P);
  L.gradient_bound = Hx.gradient_bound + Hx.value_bound * z.d1_bound() * nP / a;
  // ||D^2 zeta(|P y| / a)|| <= (|zeta''| + |zeta'| / sigma) ||P||^2 / a^2 on the support of zeta'.
  const double c2 = (z.d2_bound() + z.d1_bound() / z.sigma) * nP * nP / (a * a);
  L.hessian_bound = Hx.hessian_bound + 2 * Hx.gradient_bound * z.d1_bound() * nP / a + Hx.value_bound * c2;
  return L;
}

}  // namespace detail

/// Lifts planar Hamiltonians H_i on R^{2 nu} to R^{2N} so that on G-hat the perturbed
/// composition acts as the planar one times the unperturbed C-chain.
template <class Rng>
DimensionReduction dimension_reduction(const std::vector<Hamiltonian>& Hs, const std::vector<Mat>& As, double kappa, Rng& rng,
                                       int samples = 200) {
  if (Hs.empty() || Hs.size() != As.size()) fail(ErrorKind::Parameter, "need one Hamiltonian per map");
  if (!(kappa > 0 && kappa < 1)) fail(ErrorKind::Parameter, "kappa must lie in (0, 1)");
  const int n = static_cast<int>(As[0].rows()), N = half_dim(n), nu = half_dim(Hs[0].dim);
  if (nu < 1 || nu >= N) fail(ErrorKind::InvalidDimension, "need 1 <= nu < N");
  const auto [xi, yi] = split_indices(N, nu);
  DimensionReduction R;
  R.N = N, R.nu = nu;
  for (std::size_t i = 0; i < As.size(); ++i) {
    if (As[i].rows() != n || Hs[i].dim != 2 * nu) fail(ErrorKind::InvalidDimension, "inconsistent dimensions in the stack");
    if (sub_block(As[i], xi, yi).cwiseAbs().maxCoeff() > 1e-10 || sub_block(As[i], yi, xi).cwiseAbs().maxCoeff() > 1e-10)
      fail(ErrorKind::Precondition, "A_" + std::to_string(i) + " does not preserve R^{2 nu}");
    R.B.push_back(sub_block(As[i], xi, xi));
    R.C.push_back(sub_block(As[i], yi, yi));
    R.delta = std::max(R.delta, Hs[i].hessian_bound);
  }
  // Strictly above the borderline value so that sigma^{2(N - nu)} > 1 - kappa.
  const double s0 = std::pow(1 - kappa, 1.0 / (2 * (N - nu)));
  R.sigma = 0.5 * (s0 + 1);
  R.measure_ratio = std::pow(R.sigma, 2 * (N - nu));
  const BumpProfile z = make_bump(BumpKind::Zeta, R.sigma);

  std::vector<Mat> P(As.size());
  Mat chain = Mat::Identity(yi.size(), yi.size());
  double nP = 0.0, G = 0.0, V = 0.0;
  for (std::size_t i = 0; i < As.size(); ++i) {
    P[i] = symplectic_inverse(chain);
    nP = std::max(nP, spectral_norm(P[i]));
    G = std::max(G, Hs[i].gradient_bound);
    V = std::max(V, Hs[i].value_bound);
    chain = R.C[i] * chain;
  }
  // Analytic start: the cross and y-y terms together stay below 0.9 delta.
  const double c1 = z.d1_bound(), c2 = z.d2_bound() + z.d1_bound() / z.sigma;
  const double budget = 0.9 * std::max(R.delta, 1e-300);
  R.a = std::max({1.0, 4 * G * c1 * nP / budget, std::sqrt(2 * V * c2 / budget) * nP});
  const double cap = 1e150;
  for (;;) {
    R.H_hats.clear();
    for (std::size_t i = 0; i < As.size(); ++i) R.H_hats.push_back(detail::lift_hamiltonian(Hs[i], P[i], R.a, z, N, nu));
    // Sample where zeta' is active: x in the pushed ball, |P_i y| in [sigma a, a].
    R.sampled_hessian = 0.0;
    std::uniform_real_distribution<double> u(R.sigma, 1.0);
    Mat Bchain = Mat::Identity(xi.size(), xi.size()), Cchain = Mat::Identity(yi.size(), yi.size());
    for (std::size_t i = 0; i < As.size(); ++i) {
      for (int k = 0; k < samples; ++k) {
        const Vec x = Bchain * uniform_in_ball(2 * nu, rng);
        const Vec y = Cchain * (random_unit_vector(static_cast<int>(yi.size()), rng) * R.a * u(rng));
        Vec w(n);
        for (std::size_t j = 0; j < xi.size(); ++j) w(xi[j]) = x(j);
        for (std::size_t j = 0; j < yi.size(); ++j) w(yi[j]) = y(j);
        R.sampled_hessian = std::max(R.sampled_hessian, spectral_norm(R.H_hats[i].hess(w)));
      }
      Bchain = R.B[i] * Bchain;
      Cchain = R.C[i] * Cchain;
    }
    if (R.sampled_hessian < 2 * R.delta) break;
    R.a *= 2;
    if (R.a > cap) fail(ErrorKind::Numeric, "cylinder height overflow; the C-blocks expand too fast");
  }
  return R;
}

/// Largest residual of the skew-product identity at points sampled uniformly in G-hat.
template <class Rng>
double skew_product_residual(const DimensionReduction& R, const std::vector<Hamiltonian>& Hs, const std::vector<Mat>& As,
                             int samples, Rng& rng, const FlowOptions& opt = {1e-11, Integrator::Midpoint, 0, false}) {
  const int n = 2 * R.N;
  const auto [xi, yi] = split_indices(R.N, R.nu);
  double worst = 0.0;
  for (int k = 0; k < samples; ++k) {
    Vec x = uniform_in_ball(2 * R.nu, rng);
    Vec y = uniform_in_ball(static_cast<int>(yi.size()), rng) * (R.sigma * R.a);
    Vec w(n);
    for (std::size_t j = 0; j < xi.size(); ++j) w(xi[j]) = x(j);
    for (std::size_t j = 0; j < yi.size(); ++j) w(yi[j]) = y(j);
    for (std::size_t i = 0; i < As.size(); ++i) {
      w = As[i] * flow(R.H_hats[i], 1.0, w, opt).endpoint;
      x = R.B[i] * flow(Hs[i], 1.0, x, opt).endpoint;
      y = R.C[i] * y;
    }
    Vec rhs(n);
    for (std::size_t j = 0; j < xi.size(); ++j) rhs(xi[j]) = x(j);
    for (std::size_t j = 0; j < yi.size(); ++j) rhs(yi[j]) = y(j);
    worst = std::max(worst, (w - rhs).norm() / (1 + rhs.norm()));
  }
  return worst;
}

}  // namespace symc
