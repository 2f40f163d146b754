// Synthetic decentralized benchmark problems: sparse linear regression and
// paired sparse logistic regression with heterogeneous local optima, a
// stochastic gradient oracle, ground truth and the smoothness / strong
// convexity / noise constants.
#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <algorithm>
#include <vector>

#include <json.hpp>

#include "dfedda/mirror.hpp"
#include "dfedda/rng.hpp"

namespace dfedda {

using json = nlohmann::json;

struct ProblemConstants {
  double L;                             // l1-smoothness
  std::function<double(double)> mu_of_Q;  // local strong convexity, nonincreasing in Q
  double sigma_noise;                   // per-coordinate sub-Gaussian parameter
  int d;
  int s;
};

class Problem {
 public:
  virtual ~Problem() = default;

  virtual int dim() const = 0;
  virtual int sparsity() const = 0;
  virtual int clients() const = 0;
  virtual const Vector& optimum() const = 0;

  virtual Vector population_grad(int client, const Vector& w) const = 0;
  virtual double global_loss(const Vector& w) const = 0;
  virtual Vector sample_grad(int client, const Vector& w, int batch, std::mt19937_64& rng) const = 0;
  virtual ProblemConstants constants() const = 0;
  virtual json to_json() const = 0;

  // E*_M = (1/M) sum_m ||grad f_m(w*)||_p^2
  double heterogeneity(double p) const {
    double acc = 0.0;
    for (int m = 0; m < clients(); ++m) {
      const double n = p_norm(population_grad(m, optimum()), p);
      acc += n * n;
    }
    return acc / clients();
  }

  double optimality_gap(const Vector& w) const { return global_loss(w) - global_loss(optimum()); }
};

namespace detail {

// Nearest multiple of 2^-26. Values on this grid with magnitude up to ~2^13
// add exactly in double precision, which the problem generators use to make
// client means match their targets bitwise.
inline double snap_dyadic(double x) { return std::ldexp(std::nearbyint(std::ldexp(x, 26)), -26); }

inline double std_normal(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

// Gaussian truncated to |x| <= bound by rejection.
inline double truncated_normal(std::mt19937_64& rng, double stddev, double bound) {
  for (;;) {
    const double v = stddev * std_normal(rng);
    if (std::abs(v) <= bound) return v;
  }
}

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// log(sigmoid(z)) without catastrophic cancellation
inline double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

inline double softplus(double z) { return z >= 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// E[f(s Z)], Z ~ N(0,1): trapezoid over [-10, 10], which is spectrally
// accurate for smooth Gaussian-damped integrands.
template <class F>
double gauss_expect(F&& f, double s) {
  if (s == 0.0) return f(0.0);
  constexpr int n = 800;
  constexpr double lo = -10.0, hi = 10.0;
  const double dz = (hi - lo) / n;
  const double inv_sqrt2pi = 0.3989422804014327;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = lo + i * dz;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * f(s * z) * inv_sqrt2pi * std::exp(-0.5 * z * z);
  }
  return acc * dz;
}

// E[sigmoid'(s Z)] = E[sigmoid(sZ)(1 - sigmoid(sZ))]
inline double expected_sigmoid_prime(double s) {
  return gauss_expect([](double t) { const double v = sigmoid(t); return v * (1.0 - v); }, s);
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Sparse linear regression. Covariates have an intercept coordinate fixed to 1
// and independent N(0, sigma1^2) remaining coordinates (optionally truncated at
// |x| <= C); labels y = <x, w_m> + N(0, sigma2^2). Client optima are dense but
// their average is exactly s-sparse, so w* = mean(w_m) is the sparse ground
// truth and both the global loss and its gradient have closed forms.
// ----------------------------------------------------------------------------
class LinearProblem : public Problem {
 public:
  struct Params {
    int d;
    int s;
    int M;
    double sigma1;
    double sigma2;
    double C;
    std::uint64_t seed;
    bool truncate = false;
    double het_scale = 1.0;   // stddev of the dense client-specific offsets
    double w_bound = 1.0;     // bound on ||w - w_m||_1 used for the noise constant
  };

  static LinearProblem generate(const Params& prm) {
    if (prm.d <= prm.s || prm.s < 1 || prm.M < 2) throw std::invalid_argument("invalid-config: need d > s >= 1, M >= 2");
    if (prm.truncate && prm.C <= 0.0) throw std::invalid_argument("invalid-config: truncation requires C > 0");
    LinearProblem p;
    p.prm_ = prm;

    // s-sparse target on the first s coordinates, entries bounded away from 0.
    // All optima live on the dyadic grid 2^-26 Z, so every row sum below is
    // exact in double arithmetic (~40 significand bits used) and the client
    // mean equals the target bitwise: the sum is exactly M * target and the
    // division returns the exactly representable quotient.
    auto rng = derive_rng(prm.seed, 0, 0, 0, /*role=*/100);
    Vector target = Vector::Zero(prm.d);
    std::uniform_real_distribution<double> mag(0.5, 1.5);
    std::bernoulli_distribution sign(0.5);
    for (int i = 0; i < prm.s; ++i)
      target[i] = (sign(rng) ? 1.0 : -1.0) * std::max(0.5, detail::snap_dyadic(mag(rng)));

    // M-1 dense clients; the last client balances the sum so the mean is
    // exactly the sparse target.
    p.local_optima_ = Matrix(prm.d, prm.M);
    for (int m = 0; m + 1 < prm.M; ++m) {
      auto crng = derive_rng(prm.seed, static_cast<std::uint64_t>(m), 0, 0, /*role=*/101);
      for (int i = 0; i < prm.d; ++i)
        p.local_optima_(i, m) = detail::snap_dyadic(target[i] + prm.het_scale * detail::std_normal(crng));
    }
    p.local_optima_.col(prm.M - 1) =
        static_cast<double>(prm.M) * target - p.local_optima_.leftCols(prm.M - 1).rowwise().sum();
    p.w_star_ = target;
    return p;
  }

  int dim() const override { return prm_.d; }
  int sparsity() const override { return prm_.s; }
  int clients() const override { return prm_.M; }
  const Vector& optimum() const override { return w_star_; }
  const Matrix& local_optima() const { return local_optima_; }
  const Params& params() const { return prm_; }

  // grad f_m(w) = E[x x^T](w - w_m) = diag(1, sigma1^2 I)(w - w_m)
  Vector population_grad(int client, const Vector& w) const override {
    Vector g = prm_.sigma1 * prm_.sigma1 * (w - local_optima_.col(client));
    g[0] = w[0] - local_optima_(0, client);
    return g;
  }

  // f(w) = (1/2){sigma2^2 + (1/M) sum_m [(w_m1 - w1)^2 + sigma1^2 ||w_m,-1 - w_-1||_2^2]}
  double global_loss(const Vector& w) const override {
    double acc = prm_.sigma2 * prm_.sigma2;
    for (int m = 0; m < prm_.M; ++m) {
      const Vector diff = local_optima_.col(m) - w;
      const double tail = diff.tail(prm_.d - 1).squaredNorm();
      acc += (diff[0] * diff[0] + prm_.sigma1 * prm_.sigma1 * tail) / prm_.M;
    }
    return 0.5 * acc;
  }

  Vector sample_grad(int client, const Vector& w, int batch, std::mt19937_64& rng) const override {
    Vector g = Vector::Zero(prm_.d);
    Vector x(prm_.d);
    std::normal_distribution<double> noise(0.0, prm_.sigma2);
    for (int b = 0; b < batch; ++b) {
      x[0] = 1.0;
      for (int i = 1; i < prm_.d; ++i)
        x[i] = prm_.truncate ? detail::truncated_normal(rng, prm_.sigma1, prm_.C)
                             : prm_.sigma1 * detail::std_normal(rng);
      const double y = x.dot(local_optima_.col(client)) + (prm_.sigma2 > 0.0 ? noise(rng) : 0.0);
      g.noalias() += (x.dot(w) - y) * x;
    }
    return g / batch;
  }

  ProblemConstants constants() const override {
    const double s1t = std::max(prm_.sigma1, 1.0);
    const double s1b = std::min(prm_.sigma1, 1.0);
    const double mu = s1b * s1b;
    // |zeta_i| <= w_bound (C^2 + s1t^2) + C |e|, e ~ N(0, sigma2^2)
    const double sigma = prm_.w_bound * (prm_.C * prm_.C + s1t * s1t) + prm_.C * prm_.sigma2;
    return ProblemConstants{s1t * s1t, [mu](double) { return mu; }, sigma, prm_.d, prm_.s};
  }

  json to_json() const override {
    return json{{"kind", "linear"},   {"d", prm_.d},           {"s", prm_.s},
                {"M", prm_.M},        {"sigma1", prm_.sigma1}, {"sigma2", prm_.sigma2},
                {"C", prm_.C},        {"seed", prm_.seed},     {"truncate", prm_.truncate},
                {"het_scale", prm_.het_scale}, {"w_bound", prm_.w_bound}};
  }

 private:
  Params prm_;
  Matrix local_optima_;  // d x M
  Vector w_star_;
};

// Full-batch gradient descent with backtracking on the global objective.
// Deterministic; throws (with the residual) instead of returning a
// non-converged point silently.
inline Vector reference_solve(const Problem& problem, int max_iters, double tol,
                              std::optional<Vector> w_init = std::nullopt) {
  Vector w = w_init.value_or(Vector::Zero(problem.dim()));
  if (std::isinf(tol)) return w;
  const int M = problem.clients();
  auto mean_grad = [&](const Vector& v) {
    Vector g = Vector::Zero(problem.dim());
    for (int m = 0; m < M; ++m) g += problem.population_grad(m, v);
    return Vector(g / M);
  };
  double step = 1.0;
  double loss = problem.global_loss(w);
  for (int it = 0; it < max_iters; ++it) {
    const Vector g = mean_grad(w);
    const double gnorm = g.norm();
    if (gnorm <= tol) return w;
    // backtracking on the Armijo condition, with a machine-precision slack:
    // near the optimum the required decrease 0.5 step ||g||^2 drops below the
    // rounding granularity of the loss, and exact Armijo would stall there
    // The trial step is monotone nonincreasing: regrowing it each iteration
    // would let the slack accept the non-contracting step 2/L indefinitely.
    const double slack = 1e-12 * (1.0 + std::abs(loss));
    for (;;) {
      const Vector cand = w - step * g;
      const double cand_loss = problem.global_loss(cand);
      if (cand_loss <= loss - 0.5 * step * gnorm * gnorm + slack || step < 1e-16) {
        w = cand;
        loss = cand_loss;
        break;
      }
      step *= 0.5;
    }
  }
  throw std::runtime_error("reference_solve: no convergence in " + std::to_string(max_iters) +
                           " iterations, residual ||grad||_2 = " + std::to_string(mean_grad(w).norm()));
}

// ----------------------------------------------------------------------------
// Paired sparse logistic regression. M = 2I clients: client i has local
// optimum (alpha_i, beta_i), its pair (alpha_i, -beta_i), so the global
// optimum is supported on the first s coordinates. Covariates are isotropic
// N(0, sigma1^2) per coordinate (optionally truncated at C); labels are
// Bernoulli(sigmoid(<x, w_m>)).
//
// Population loss and gradient have exact one-dimensional Gaussian-integral
// forms. With t = <x, w> and u = <x, w_m> jointly Gaussian, Stein's identity
// gives
//   grad f_m(w) = sigma1^2 (A(sigma1 ||w||_2) w - A(sigma1 ||w_m||_2) w_m),
//   f_m(w)      = E[softplus(t)] - sigma1^2 <w_m, w> A(sigma1 ||w_m||_2),
// where A(s) = E[sigmoid'(s Z)]. Both are evaluated by deterministic
// quadrature, so the reference optimum inherits the lemma's support structure
// exactly (it lies on the ray through sum_m A_m w_m, whose off-support blocks
// cancel pairwise).
// ----------------------------------------------------------------------------
class LogisticProblem : public Problem {
 public:
  struct Params {
    int d;
    int s;
    int I;
    double sigma1;
    double C;
    std::uint64_t seed;
    bool truncate = false;
    double alpha_scale = 1.0;
    double beta_scale = 1.0;
  };

  static LogisticProblem generate(const Params& prm) {
    if (prm.d <= prm.s || prm.s < 1 || prm.I < 1) throw std::invalid_argument("invalid-config: need d > s >= 1, I >= 1");
    if (prm.truncate && prm.C <= 0.0) throw std::invalid_argument("invalid-config: truncation requires C > 0");
    LogisticProblem p;
    p.prm_ = prm;
    const int M = 2 * prm.I;
    p.local_optima_ = Matrix(prm.d, M);
    for (int i = 0; i < prm.I; ++i) {
      auto rng = derive_rng(prm.seed, static_cast<std::uint64_t>(i), 0, 0, /*role=*/110);
      Vector alpha(prm.s), beta(prm.d - prm.s);
      for (int j = 0; j < prm.s; ++j) alpha[j] = prm.alpha_scale * detail::std_normal(rng);
      for (int j = 0; j < prm.d - prm.s; ++j) beta[j] = prm.beta_scale * detail::std_normal(rng);
      p.local_optima_.col(2 * i).head(prm.s) = alpha;
      p.local_optima_.col(2 * i).tail(prm.d - prm.s) = beta;
      p.local_optima_.col(2 * i + 1).head(prm.s) = alpha;
      p.local_optima_.col(2 * i + 1).tail(prm.d - prm.s) = -beta;
    }
    // cache A(sigma1 ||w_m||_2) per client
    p.a_local_ = Vector(M);
    for (int m = 0; m < M; ++m)
      p.a_local_[m] = detail::expected_sigmoid_prime(prm.sigma1 * p.local_optima_.col(m).norm());
    return p;
  }

  int dim() const override { return prm_.d; }
  int sparsity() const override { return prm_.s; }
  int clients() const override { return 2 * prm_.I; }
  const Matrix& local_optima() const { return local_optima_; }
  const Params& params() const { return prm_; }

  // The first-order condition A(sigma1 ||w||) w = (1/M) sum_m A_m w_m =: u
  // pins the optimum to the ray through u; t -> t A(sigma1 t) is strictly
  // increasing (it equals E[Z sigmoid(sigma1 t Z)] / sigma1, with derivative
  // E[Z^2 sigmoid'(.)] > 0) and saturates at 1/(sigma1 sqrt(2 pi)), so the
  // scalar equation t A(sigma1 t) = ||u|| has a unique root whenever the
  // minimum exists, found here by bisection. Because the same quadrature A
  // defines both the gradient and this solve, the optimum satisfies the
  // first-order condition to machine precision, and its off-support block is
  // exactly zero (the +/-beta pairs share ||w_m||, so their A_m terms cancel).
  const Vector& optimum() const override {
    if (!w_star_) {
      const int M = clients();
      Vector u = Vector::Zero(prm_.d);
      for (int m = 0; m < M; ++m) u += a_local_[m] * local_optima_.col(m);
      u /= static_cast<double>(M);
      const double r = u.norm();
      if (r == 0.0 || prm_.sigma1 == 0.0) {
        w_star_ = Vector::Zero(prm_.d);
        return *w_star_;
      }
      const double cap = 1.0 / (prm_.sigma1 * std::sqrt(2.0 * std::acos(-1.0)));
      if (r >= 0.9 * cap)
        throw std::runtime_error(
            "assumption-violated: logistic population minimum does not exist "
            "(mean pulled-back optimum too large; reduce alpha/beta scales)");
      auto phi = [&](double t) { return t * detail::expected_sigmoid_prime(prm_.sigma1 * t); };
      double lo = 0.0, hi = 1.0;
      while (phi(hi) < r) hi *= 2.0;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (phi(mid) < r ? lo : hi) = mid;
      }
      w_star_ = Vector((0.5 * (lo + hi) / r) * u);
    }
    return *w_star_;
  }

  // Exact population gradient via Stein's identity (see the class comment).
  Vector population_grad(int client, const Vector& w) const override {
    const double s1sq = prm_.sigma1 * prm_.sigma1;
    const double a_w = detail::expected_sigmoid_prime(prm_.sigma1 * w.norm());
    return s1sq * (a_w * w - a_local_[client] * local_optima_.col(client));
  }

  // f_m(w) = E[softplus(<x,w>)] - sigma1^2 <w_m, w> A_m, averaged over m.
  double global_loss(const Vector& w) const override {
    const int M = clients();
    const double s1sq = prm_.sigma1 * prm_.sigma1;
    double acc = detail::gauss_expect([](double t) { return detail::softplus(t); }, prm_.sigma1 * w.norm());
    for (int m = 0; m < M; ++m) acc -= s1sq * local_optima_.col(m).dot(w) * a_local_[m] / M;
    return acc;
  }

  Vector sample_grad(int client, const Vector& w, int batch, std::mt19937_64& rng) const override {
    Vector g = Vector::Zero(prm_.d);
    Vector x(prm_.d);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int b = 0; b < batch; ++b) {
      for (int i = 0; i < prm_.d; ++i)
        x[i] = prm_.truncate ? detail::truncated_normal(rng, prm_.sigma1, prm_.C)
                             : prm_.sigma1 * detail::std_normal(rng);
      const double py = detail::sigmoid(x.dot(local_optima_.col(client)));
      const double y = unif(rng) < py ? 1.0 : 0.0;
      const Vector gi = (detail::sigmoid(x.dot(w)) - y) * x;
      assert(!prm_.truncate || gi.cwiseAbs().maxCoeff() <= prm_.C + 1e-12);
      g += gi;
    }
    return g / batch;
  }

  ProblemConstants constants() const override {
    const double s1 = prm_.sigma1, C = prm_.C;
    return ProblemConstants{C * C / 4.0,
                            [s1, C](double Q) {
                              const double z = C * std::sqrt(Q);
                              return s1 * s1 * detail::sigmoid(z) * detail::sigmoid(-z);
                            },
                            C, prm_.d, prm_.s};
  }

  json to_json() const override {
    return json{{"kind", "logistic"},  {"d", prm_.d},       {"s", prm_.s},
                {"I", prm_.I},         {"sigma1", prm_.sigma1}, {"C", prm_.C},
                {"seed", prm_.seed},   {"truncate", prm_.truncate},
                {"alpha_scale", prm_.alpha_scale}, {"beta_scale", prm_.beta_scale}};
  }

 private:
  Params prm_;
  Matrix local_optima_;  // d x 2I
  Vector a_local_;       // A(sigma1 ||w_m||_2) per client
  mutable std::optional<Vector> w_star_;
};

inline std::unique_ptr<Problem> problem_from_json(const json& j) {
  if (!j.contains("kind")) throw std::invalid_argument("config error: missing key 'kind' in problem");
  const std::string kind = j.at("kind").get<std::string>();
  static const std::vector<std::string> linear_keys{"kind", "d", "s", "M", "sigma1", "sigma2",
                                                    "C",    "seed", "truncate", "het_scale", "w_bound"};
  static const std::vector<std::string> logistic_keys{"kind", "d",    "s",        "I",           "sigma1",
                                                      "C",    "seed", "truncate", "alpha_scale", "beta_scale"};
  const auto& allowed = kind == "linear" ? linear_keys : logistic_keys;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw std::invalid_argument("config error: unknown key '" + it.key() + "' in problem");
  if (kind == "linear") {
    LinearProblem::Params p{};
    p.d = j.at("d").get<int>();
    p.s = j.at("s").get<int>();
    p.M = j.at("M").get<int>();
    p.sigma1 = j.at("sigma1").get<double>();
    p.sigma2 = j.at("sigma2").get<double>();
    p.C = j.value("C", 0.0);
    p.seed = j.at("seed").get<std::uint64_t>();
    p.truncate = j.value("truncate", false);
    p.het_scale = j.value("het_scale", 1.0);
    p.w_bound = j.value("w_bound", 1.0);
    return std::make_unique<LinearProblem>(LinearProblem::generate(p));
  }
  if (kind == "logistic") {
    LogisticProblem::Params p{};
    p.d = j.at("d").get<int>();
    p.s = j.at("s").get<int>();
    p.I = j.at("I").get<int>();
    p.sigma1 = j.at("sigma1").get<double>();
    p.C = j.at("C").get<double>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.truncate = j.value("truncate", false);
    p.alpha_scale = j.value("alpha_scale", 1.0);
    p.beta_scale = j.value("beta_scale", 1.0);
    return std::make_unique<LogisticProblem>(LogisticProblem::generate(p));
  }
  throw std::invalid_argument("problem_from_json: unknown kind '" + kind + "'");
}

}  // namespace dfedda
