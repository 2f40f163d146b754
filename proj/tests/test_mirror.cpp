#include <doctest.h>

#include <cmath>
#include <random>

#include "dfedda/mirror.hpp"
#include "dfedda/rng.hpp"

using namespace dfedda;

namespace {

// --- independent oracles -----------------------------------------------------

// p-norm in log space: ||x||_p = exp((1/p) * logsumexp_i(p * log|x_i|)).
double p_norm_logspace(const Vector& x, double p) {
  double lmax = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x[i] != 0.0) lmax = std::max(lmax, std::log(std::abs(x[i])));
  if (std::isinf(lmax)) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x[i] != 0.0) acc += std::exp(p * (std::log(std::abs(x[i])) - lmax));
  return std::exp(lmax + std::log(acc) / p);
}

// Objective of the restricted prox: <w - w0, -z> + h(w - w0).
double prox_objective(const Vector& w, const Vector& w0, const Vector& z, const MirrorPair& mp) {
  const Vector v = w - w0;
  return -v.dot(z) + h_value(v, mp);
}

Vector random_vector(std::mt19937_64& rng, int d, double lo = -10.0, double hi = 10.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = u(rng);
  return v;
}

// Random point with ||v||_q <= radius: random direction scaled to a random
// fraction of the radius.
Vector random_in_q_ball(std::mt19937_64& rng, int d, double q, double radius) {
  Vector v = random_vector(rng, d);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return v * (radius * u(rng) / p_norm(v, q));
}

}  // namespace

TEST_CASE("MirrorPair derives the conjugate exponent") {
  const MirrorPair mp(4.0);
  CHECK(mp.q == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(1.0 / mp.p + 1.0 / mp.q == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(MirrorPair(2.0).q == doctest::Approx(2.0));
  CHECK_THROWS_AS(MirrorPair(1.9), std::invalid_argument);
}

TEST_CASE("default_p is 2 ln d and rejects tiny dimensions") {
  CHECK(default_p(20) == doctest::Approx(5.9914645).epsilon(1e-6));
  CHECK(default_p(1024) == doctest::Approx(13.8629436).epsilon(1e-6));
  CHECK_THROWS_AS(default_p(2), std::invalid_argument);
}

TEST_CASE("p_norm matches hand values and the log-space oracle") {
  Vector x(2);
  x << 3.0, 4.0;
  CHECK(p_norm(x, 2.0) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(p_norm(x, std::numeric_limits<double>::infinity()) == doctest::Approx(4.0));

  const Vector ones = Vector::Ones(1024);
  CHECK(p_norm(ones, default_p(1024)) == doctest::Approx(std::sqrt(std::exp(1.0))).epsilon(1e-12));

  // huge entries: would overflow without the max-factoring
  Vector big(2);
  big << 1e300, 1e300;
  CHECK(std::isfinite(p_norm(big, 14.0)));
  CHECK(p_norm(big, 14.0) == doctest::Approx(p_norm_logspace(big, 14.0)).epsilon(1e-12));
  CHECK(p_norm(big, 14.0) == doctest::Approx(1e300 * std::pow(2.0, 1.0 / 14.0)).epsilon(1e-12));

  auto rng = derive_rng(7, 0, 0, 0);
  for (int it = 0; it < 50; ++it) {
    const Vector v = random_vector(rng, 64);
    for (double p : {1.0, 2.0, 4.0, 12.0})
      CHECK(p_norm(v, p) == doctest::Approx(p_norm_logspace(v, p)).epsilon(1e-11));
  }
  CHECK(p_norm(Vector::Zero(5), 3.0) == 0.0);
}

TEST_CASE("mirror_forward hand values") {
  auto rng = derive_rng(8, 0, 0, 0);
  const MirrorPair euclid(2.0);
  const Vector w = random_vector(rng, 16);
  CHECK((mirror_forward(w, euclid) - w).cwiseAbs().maxCoeff() < 1e-12);

  const MirrorPair mp(6.0);
  CHECK(mirror_forward(Vector::Zero(8), mp).cwiseAbs().maxCoeff() == 0.0);

  // basis vector: ||e_i||_q = 1, signed power keeps e_i, so the image is e_i/(q-1)
  Vector e = Vector::Zero(8);
  e[3] = 1.0;
  const Vector img = mirror_forward(e, mp);
  CHECK(img[3] == doctest::Approx(1.0 / (mp.q - 1.0)).epsilon(1e-12));
  CHECK(img.cwiseAbs().sum() == doctest::Approx(std::abs(img[3])).epsilon(1e-12));

  // degree-1 positive homogeneity
  const Vector w2 = random_vector(rng, 8);
  CHECK((mirror_forward(3.7 * w2, mp) - 3.7 * mirror_forward(w2, mp)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("mirror_inverse is the functional inverse") {
  auto rng = derive_rng(9, 0, 0, 0);
  for (int d : {4, 1024}) {
    for (double p : {2.0, 4.0, 12.0, default_p(d)}) {
      if (p < 2.0) continue;
      const MirrorPair mp(p);
      for (int it = 0; it < 20; ++it) {
        const Vector w = random_vector(rng, d);
        const Vector back = mirror_inverse(mirror_forward(w, mp), mp);
        CHECK((back - w).norm() / w.norm() < 1e-9);
      }
    }
  }
  const MirrorPair mp(12.0);
  CHECK(mirror_inverse(Vector::Zero(6), mp).cwiseAbs().maxCoeff() == 0.0);
  const Vector z = random_vector(rng, 6);
  CHECK((mirror_inverse(3.7 * z, mp) - 3.7 * mirror_inverse(z, mp)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("h satisfies the Euler identity <w, grad h(w)> = 2 h(w)") {
  auto rng = derive_rng(10, 0, 0, 0);
  const MirrorPair mp(12.0);
  for (int it = 0; it < 100; ++it) {
    const Vector w = random_vector(rng, 32);
    const double lhs = w.dot(mirror_forward(w, mp));
    const double rhs = 2.0 * h_value(w, mp);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
  CHECK(h_value(Vector::Zero(4), mp) == 0.0);
  const Vector w = random_vector(rng, 32);
  CHECK(h_value(w, MirrorPair(2.0)) == doctest::Approx(0.5 * w.squaredNorm()).epsilon(1e-12));
}

TEST_CASE("strong convexity / smooth conjugate / dual Lipschitz / Hoelder") {
  auto rng = derive_rng(11, 0, 0, 0);
  for (int d : {4, 256}) {
    for (double p : {2.0, 4.0, 12.0}) {
      const MirrorPair mp(p);
      for (int it = 0; it < 100; ++it) {
        const Vector w = random_vector(rng, d), v = random_vector(rng, d);
        const double gap =
            h_value(v, mp) - h_value(w, mp) - mirror_forward(w, mp).dot(v - w) - 0.5 * std::pow(p_norm(v - w, mp.q), 2);
        CHECK(gap >= -1e-10);

        const Vector z1 = random_vector(rng, d), z2 = random_vector(rng, d);
        const double smooth = h_conjugate_value(z1, mp) + mirror_inverse(z1, mp).dot(z2 - z1) +
                              0.5 * std::pow(p_norm(z2 - z1, mp.p), 2) - h_conjugate_value(z2, mp);
        CHECK(smooth >= -1e-10);

        CHECK(p_norm(mirror_inverse(z1, mp) - mirror_inverse(z2, mp), mp.q) <= p_norm(z1 - z2, mp.p) * (1 + 1e-10));

        const Vector x = random_vector(rng, d);
        const double dp = std::pow(static_cast<double>(d), 2.0 / p);
        CHECK(std::pow(p_norm(x, mp.p), 2) <= dp * std::pow(x.cwiseAbs().maxCoeff(), 2) * (1 + 1e-10));
        CHECK(std::pow(x.cwiseAbs().sum(), 2) <= dp * std::pow(p_norm(x, mp.q), 2) * (1 + 1e-10));
      }
    }
  }
}

TEST_CASE("prox_restricted closed form, feasibility and optimality") {
  auto rng = derive_rng(12, 0, 0, 0);
  const int d = 16;
  const MirrorPair mp(default_p(256));
  const Vector w0 = random_vector(rng, d);

  SUBCASE("unconstrained and trivial cases") {
    const Vector z = random_vector(rng, d);
    const BallConstraint free(w0, std::numeric_limits<double>::infinity());
    CHECK((prox_restricted(z, free, mp) - (w0 + mirror_inverse(z, mp))).cwiseAbs().maxCoeff() < 1e-12);
    const BallConstraint tight(w0, 0.25);
    CHECK((prox_restricted(Vector::Zero(d), tight, mp) - w0).cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(BallConstraint(w0, -1.0), std::invalid_argument);
  }

  SUBCASE("slack constraint matches the unconstrained form") {
    const Vector z = 0.01 * random_vector(rng, d);
    const BallConstraint ball(w0, 100.0);
    CHECK((prox_restricted(z, ball, mp) - (w0 + mirror_inverse(z, mp))).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("binding constraint: on the sphere and beats sampled feasible points") {
    for (int it = 0; it < 20; ++it) {
      const Vector z = random_vector(rng, d);  // large enough to force clipping at Q = 0.01
      const double Q = 0.01;
      const BallConstraint ball(w0, Q);
      const Vector w = prox_restricted(z, ball, mp);
      const double nq = p_norm(w - w0, mp.q);
      CHECK(nq * nq <= Q * (1 + 1e-12));
      if (std::pow(p_norm(mirror_inverse(z, mp), mp.q), 2) > Q) CHECK(nq == doctest::Approx(std::sqrt(Q)).epsilon(1e-10));
      const double opt = prox_objective(w, w0, z, mp);
      for (int j = 0; j < 100; ++j) {
        const Vector cand = w0 + random_in_q_ball(rng, d, mp.q, std::sqrt(Q));
        CHECK(opt <= prox_objective(cand, w0, z, mp) + 1e-9);
      }
    }
  }
}

TEST_CASE("sparse_top_s hand cases and properties") {
  Vector x(4);
  x << 5.0, -7.0, 1.0, 0.0;
  Vector expect(4);
  expect << 5.0, -7.0, 0.0, 0.0;
  CHECK((sparse_top_s(x, 2) - expect).cwiseAbs().maxCoeff() == 0.0);

  // ties broken toward the lowest index
  Vector t(3);
  t << 1.0, -1.0, 1.0;
  const Vector ts = sparse_top_s(t, 2);
  CHECK(ts[0] == 1.0);
  CHECK(ts[1] == -1.0);
  CHECK(ts[2] == 0.0);

  auto rng = derive_rng(13, 0, 0, 0);
  const Vector r = random_vector(rng, 32);
  const Vector once = sparse_top_s(r, 5);
  CHECK((sparse_top_s(once, 5) - once).cwiseAbs().maxCoeff() == 0.0);  // idempotent
  CHECK((once.array() != 0.0).count() <= 5);
  CHECK((sparse_top_s(r, 32) - r).cwiseAbs().maxCoeff() == 0.0);

  // permutation equivariance
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(32);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 32, rng);
  // permuted input with distinct magnitudes -> permuted output
  Vector distinct(32);
  for (int i = 0; i < 32; ++i) distinct[i] = (i + 1) * ((i % 2) ? 1.0 : -1.0);
  CHECK(((perm * sparse_top_s(distinct, 7)) - sparse_top_s(perm * distinct, 7)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sparsification error chain against an s-sparse target") {
  auto rng = derive_rng(14, 0, 0, 0);
  const int d = 64, s = 6;
  for (int it = 0; it < 1000; ++it) {
    Vector w_star = Vector::Zero(d);
    for (int i = 0; i < s; ++i) w_star[i] = random_vector(rng, 1)[0];
    const Vector x = w_star + 0.3 * random_vector(rng, d, -1.0, 1.0);
    const Vector xs = sparse_top_s(x, s);
    const double l1 = (xs - w_star).lpNorm<1>();
    CHECK(l1 * l1 <= 2.0 * s * (xs - w_star).squaredNorm() * (1 + 1e-12));
    CHECK(2.0 * s * (xs - w_star).squaredNorm() <= 8.0 * s * (x - w_star).squaredNorm() * (1 + 1e-12));
  }
}
