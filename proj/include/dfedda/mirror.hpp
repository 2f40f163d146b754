// (p,q)-norm primal/dual geometry: mirror maps, the ball-restricted proximal
// map and the hard-thresholding sparsifier used by the dual-averaging solvers.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace dfedda {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Conjugate exponent pair (p, q), 1/p + 1/q = 1, p >= 2.
// The primal space carries ||.||_q, the dual space ||.||_p.
struct MirrorPair {
  double p;
  double q;

  explicit MirrorPair(double dual_exponent) : p(dual_exponent), q(dual_exponent / (dual_exponent - 1.0)) {
    if (!(p >= 2.0)) throw std::invalid_argument("MirrorPair: p must be >= 2");
  }
};

// Default dual exponent 2*ln(d). Rejected below d = 3 where it would fall
// under the p >= 2 floor.
inline double default_p(int d) {
  if (d < 3) throw std::invalid_argument("default_p: dimension must be >= 3");
  return 2.0 * std::log(static_cast<double>(d));
}

// ||x||_p with the max magnitude factored out first, so exponents up to ~30
// do not overflow even for entries near DBL_MAX.
inline double p_norm(const Vector& x, double p) {
  if (!(p >= 1.0)) throw std::invalid_argument("p_norm: p must be >= 1 or infinity");
  const double m = x.cwiseAbs().maxCoeff();
  if (m == 0.0) return 0.0;
  if (std::isinf(p)) return m;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) acc += std::pow(std::abs(x[i]) / m, p);
  return m * std::pow(acc, 1.0 / p);
}

namespace detail {

// sign(v) * |v|^alpha applied coordinatewise to a pre-normalized vector
// (entries in [-1, 1]).
inline Vector signed_pow(const Vector& u, double alpha) {
  Vector out(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double a = std::abs(u[i]);
    out[i] = (a == 0.0) ? 0.0 : std::copysign(std::pow(a, alpha), u[i]);
  }
  return out;
}

}  // namespace detail

// h(w) = ||w||_q^2 / (2(q-1)).
inline double h_value(const Vector& w, const MirrorPair& mp) {
  const double n = p_norm(w, mp.q);
  return n * n / (2.0 * (mp.q - 1.0));
}

// h*(z) = ||z||_p^2 / (2(p-1)).
inline double h_conjugate_value(const Vector& z, const MirrorPair& mp) {
  const double n = p_norm(z, mp.p);
  return n * n / (2.0 * (mp.p - 1.0));
}

// grad h(w) = ||w||_q^{2-q} w^{q-1} / (q-1), with grad h(0) = 0 (limit value;
// the formula is 0/0 there). Positively homogeneous of degree 1.
inline Vector mirror_forward(const Vector& w, const MirrorPair& mp) {
  const double m = w.cwiseAbs().maxCoeff();
  if (m == 0.0) return Vector::Zero(w.size());
  const Vector u = w / m;
  const double nq = p_norm(u, mp.q);  // >= 1 since max|u| = 1
  return (m / (mp.q - 1.0)) * std::pow(nq, 2.0 - mp.q) * detail::signed_pow(u, mp.q - 1.0);
}

// grad^{-1} h(z) = ||z||_p^{2-p} z^{p-1} / (p-1); exact functional inverse of
// mirror_forward. Same scaling trick: after u = z/max|z|, ||u||_p >= 1 and
// |u_i| <= 1, so neither factor can overflow for large p.
inline Vector mirror_inverse(const Vector& z, const MirrorPair& mp) {
  const double m = z.cwiseAbs().maxCoeff();
  if (m == 0.0) return Vector::Zero(z.size());
  const Vector u = z / m;
  const double np = p_norm(u, mp.p);
  return (m / (mp.p - 1.0)) * std::pow(np, 2.0 - mp.p) * detail::signed_pow(u, mp.p - 1.0);
}

// q-norm ball of squared radius Q around a center point. radius_sq may be
// +infinity (unconstrained retrieval).
struct BallConstraint {
  Vector center;
  double radius_sq;

  BallConstraint(Vector c, double q_radius_sq) : center(std::move(c)), radius_sq(q_radius_sq) {
    if (!(radius_sq >= 0.0)) throw std::invalid_argument("BallConstraint: radius_sq must be >= 0");
  }
};

// argmin_{||w - w0||_q^2 <= Q} <w - w0, -z_shift> + h(w - w0).
//
// By 2-homogeneity of h the KKT stationarity condition forces the constrained
// minimizer onto the ray through the unconstrained one, so the closed form is
// v = grad^{-1}h(z_shift) followed by a radial clip to the sphere when
// ||v||_q^2 > Q. z_shift is the dual displacement z - z0.
inline Vector prox_restricted(const Vector& z_shift, const BallConstraint& ball, const MirrorPair& mp) {
  const Vector v = mirror_inverse(z_shift, mp);
  if (std::isinf(ball.radius_sq)) return ball.center + v;
  const double nq = p_norm(v, mp.q);
  if (nq * nq <= ball.radius_sq) return ball.center + v;
  return ball.center + (std::sqrt(ball.radius_sq) / nq) * v;
}

// Keep the s largest-magnitude entries, zero the rest. Ties broken by lowest
// index; idempotent.
inline Vector sparse_top_s(const Vector& x, int s) {
  const int d = static_cast<int>(x.size());
  if (s < 0 || s > d) throw std::invalid_argument("sparse_top_s: need 0 <= s <= d");
  if (s == d) return x;
  std::vector<int> idx(d);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + s, idx.end(), [&x](int a, int b) {
    const double fa = std::abs(x[a]), fb = std::abs(x[b]);
    return fa != fb ? fa > fb : a < b;
  });
  Vector out = Vector::Zero(d);
  for (int i = 0; i < s; ++i) out[idx[i]] = x[idx[i]];
  return out;
}

}  // namespace dfedda
