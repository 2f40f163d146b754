// The dual-averaging family: decentralized DFedDA / DFedDA-GT, the
// ball-restricted centralized ReFedDA-GT, the multistep restart wrapper, and
// the theorem-prescribed hyperparameter helpers.
#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dfedda/gossip.hpp"
#include "dfedda/mirror.hpp"
#include "dfedda/problems.hpp"
#include "dfedda/rng.hpp"

namespace dfedda {

// Gradient oracle handed to the optimizers. round = -1, step = 0 is the
// tracker-initialization query at w0; local steps use (round, step) with
// round in [0, R) and step in [0, K).
struct GradOracle {
  std::function<Vector(int client, const Vector& w, int round, int step)> eval;
  int batch_size = 1;
};

inline GradOracle stochastic_oracle(const Problem& problem, std::uint64_t seed, int batch) {
  return GradOracle{[&problem, seed, batch](int client, const Vector& w, int round, int step) {
                      auto rng = derive_rng(seed, static_cast<std::uint64_t>(client),
                                            static_cast<std::uint64_t>(round + 1),
                                            static_cast<std::uint64_t>(step), /*role=*/1);
                      return problem.sample_grad(client, w, batch, rng);
                    },
                    batch};
}

// Noiseless full-batch oracle (population gradients).
inline GradOracle exact_oracle(const Problem& problem) {
  return GradOracle{[&problem](int client, const Vector& w, int, int) { return problem.population_grad(client, w); },
                    1};
}

struct Snapshot {
  int round;             // rounds completed when the snapshot was taken
  long long samples;     // cumulative gradient samples across all clients
  double wall_ms;
  Matrix avg_primal;     // d x M running averages w_hat^m (d x 1 when centralized)
};

struct Trajectory {
  std::vector<Snapshot> snapshots;
  // Decentralized runs: max over rounds of ||sum_m c_r^m||_inf and of ||c||_inf.
  // Centralized runs: max over rounds of ||c_r - mean_m c_r^m||_inf (the
  // conserved quantity) and of ||c||_inf.
  double tracker_drift_max = 0.0;
  double tracker_inf_max = 0.0;
  long long total_samples = 0;
};

namespace detail {

inline void check_finite(const Vector& z, int round, int client, int step) {
  if (!z.allFinite())
    throw std::runtime_error("non-finite dual iterate at round " + std::to_string(round) + ", client " +
                             std::to_string(client) + ", step " + std::to_string(step));
}

// Runs fn(m) for m in [0, M), optionally across threads. Clients are
// independent; output slots are preallocated so results are bit-identical to
// the serial order.
inline void for_each_client(int M, bool parallel, const std::function<void(int)>& fn) {
  if (!parallel || M < 2) {
    for (int m = 0; m < M; ++m) fn(m);
    return;
  }
  const unsigned n_threads = std::min<unsigned>(std::thread::hardware_concurrency(), static_cast<unsigned>(M));
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (unsigned t = 0; t < n_threads; ++t)
    pool.emplace_back([&, t] {
      for (int m = static_cast<int>(t); m < M; m += static_cast<int>(n_threads)) fn(m);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// K dual steps z <- z - eta_c (grad(w, k) + tracking_term), with the primal
// re-retrieved before every step. `retrieve` is the dual-to-primal map (plain
// inverse mirror map or the ball-restricted prox), `grad` the per-step
// gradient query. Returns z_{r,K}; optionally logs the visited primals.
template <class Retrieve, class Grad>
Vector client_local_round(Vector z, Retrieve&& retrieve, Grad&& grad, double eta_c, int K,
                          const Vector* tracking_term, int round, int client,
                          std::vector<Vector>* primal_log = nullptr) {
  for (int k = 0; k < K; ++k) {
    const Vector w = retrieve(z);
    if (primal_log) primal_log->push_back(w);
    Vector g = grad(w, k);
    if (tracking_term) g += *tracking_term;
    z -= eta_c * g;
    detail::check_finite(z, round, client, k);
  }
  return z;
}

// c_{r+1}^m = c_r^m + Delta_r^m - sum_j u_{jm} Delta_r^j. Preserves the
// column sum of C exactly (columns of Delta (I - U) sum to zero).
inline Matrix tracker_update_decentralized(const Matrix& trackers, const Matrix& delta, const GossipMatrix& g) {
  return trackers + delta - delta * g.U;
}

struct CentralizedTrackerUpdate {
  Matrix client_trackers;  // c_{r+1}^m (only participants change)
  Vector server_tracker;   // c_{r+1}
  Vector delta;            // Delta_r = mean over S_r of (c_{r+1}^m - c_r^m)
};

// Participants' trackers become c_r^m - c_r - (z_{r,K}^m - z_{r,0}^m)/(K eta_c);
// the server tracker moves by the participant mean of the change. Conserved
// quantity under full participation: c_r - mean_m c_r^m.
inline CentralizedTrackerUpdate tracker_update_centralized(Matrix client_trackers, Vector server_tracker,
                                                           const Matrix& z_deltas, const std::vector<int>& S, int K,
                                                           double eta_c) {
  Vector delta = Vector::Zero(client_trackers.rows());
  for (size_t idx = 0; idx < S.size(); ++idx) {
    const int m = S[idx];
    const Vector c_new = client_trackers.col(m) - server_tracker - z_deltas.col(idx) / (K * eta_c);
    delta += c_new - client_trackers.col(m);
    client_trackers.col(m) = c_new;
  }
  delta /= static_cast<double>(S.size());
  server_tracker += delta;
  return CentralizedTrackerUpdate{std::move(client_trackers), std::move(server_tracker), std::move(delta)};
}

// ---------------------------------------------------------------------------
// Algorithm: decentralized FedDA with optional gradient tracking
// ---------------------------------------------------------------------------

struct DecentralizedConfig {
  double eta_c;
  double eta_s = 1.0;
  int K;
  int R;
  bool gradient_tracking = true;
  MirrorPair mirror;
  Vector w0;
  int eval_every = 1;
  bool parallel = false;
  bool record_local_primal = false;  // expose w_{r,k}^m to the observer

  DecentralizedConfig(double eta_client, int local_steps, int rounds, MirrorPair mp, Vector init)
      : eta_c(eta_client), K(local_steps), R(rounds), mirror(mp), w0(std::move(init)) {
    if (!(eta_c > 0.0) || K < 1 || R < 1) throw std::invalid_argument("invalid-config: eta_c > 0, K >= 1, R >= 1");
  }
};

// Per-round view handed to an observer (diagnostics and tests).
struct DecentralizedRoundView {
  int round;
  const Matrix& z_start;                    // z_{r,0}
  const Matrix& z_end;                      // z_{r,K}
  const Matrix& trackers_after;             // c_{r+1} (zero matrix when tracking is off)
  const std::vector<Matrix>* local_primal;  // K matrices d x M, null unless recorded
};
using DecentralizedObserver = std::function<void(const DecentralizedRoundView&)>;

inline Trajectory run_dfedda(const GradOracle& oracle, const GossipMatrix& gossip, const DecentralizedConfig& cfg,
                             const DecentralizedObserver& observer = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const int M = gossip.M;
  const int d = static_cast<int>(cfg.w0.size());

  Matrix Z(d, M);
  const Vector z0 = mirror_forward(cfg.w0, cfg.mirror);
  for (int m = 0; m < M; ++m) Z.col(m) = z0;

  Trajectory traj;
  Matrix trackers = Matrix::Zero(d, M);
  if (cfg.gradient_tracking) {
    Matrix g0(d, M);
    detail::for_each_client(M, cfg.parallel, [&](int m) { g0.col(m) = oracle.eval(m, cfg.w0, -1, 0); });
    trackers = -g0 + g0 * gossip.U;
    traj.total_samples += static_cast<long long>(M) * oracle.batch_size;
  }

  Matrix primal_sum = Matrix::Zero(d, M);
  std::vector<Matrix> local_primal;

  for (int r = 0; r < cfg.R; ++r) {
    // w_{r,0}^m enters the running average
    detail::for_each_client(M, cfg.parallel,
                            [&](int m) { primal_sum.col(m) += mirror_inverse(Z.col(m), cfg.mirror); });

    if (cfg.record_local_primal) local_primal.assign(cfg.K, Matrix::Zero(d, M));

    const Matrix z_start = Z;
    detail::for_each_client(M, cfg.parallel, [&](int m) {
      std::vector<Vector> log;
      const Vector tracking = cfg.gradient_tracking ? Vector(trackers.col(m)) : Vector();
      Z.col(m) = client_local_round(
          z_start.col(m), [&](const Vector& z) { return mirror_inverse(z, cfg.mirror); },
          [&](const Vector& w, int k) { return oracle.eval(m, w, r, k); }, cfg.eta_c, cfg.K,
          cfg.gradient_tracking ? &tracking : nullptr, r, m, cfg.record_local_primal ? &log : nullptr);
      if (cfg.record_local_primal)
        for (int k = 0; k < cfg.K; ++k) local_primal[k].col(m) = log[k];
    });
    traj.total_samples += static_cast<long long>(M) * cfg.K * oracle.batch_size;

    const Matrix delta = (Z - z_start) / (cfg.K * cfg.eta_c);
    if (cfg.gradient_tracking) {
      trackers = tracker_update_decentralized(trackers, delta, gossip);
      traj.tracker_drift_max = std::max(traj.tracker_drift_max, trackers.rowwise().sum().cwiseAbs().maxCoeff());
      traj.tracker_inf_max = std::max(traj.tracker_inf_max, trackers.cwiseAbs().maxCoeff());
    }
    const Matrix z_next = (z_start + (cfg.K * cfg.eta_s * cfg.eta_c) * delta) * gossip.U;

    if (observer) {
      DecentralizedRoundView view{r, z_start, Z, trackers, cfg.record_local_primal ? &local_primal : nullptr};
      observer(view);
    }
    Z = z_next;

    if ((r + 1) % cfg.eval_every == 0 || r + 1 == cfg.R) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      traj.snapshots.push_back(Snapshot{r + 1, traj.total_samples, ms, primal_sum / (r + 1)});
    }
  }
  return traj;
}

inline Trajectory run_dfedda(const Problem& problem, const GossipMatrix& gossip, const DecentralizedConfig& cfg,
                             std::uint64_t seed, int batch, const DecentralizedObserver& observer = nullptr) {
  return run_dfedda(stochastic_oracle(problem, seed, batch), gossip, cfg, observer);
}

// ---------------------------------------------------------------------------
// Algorithm: restricted centralized FedDA-GT with final sparsification
// ---------------------------------------------------------------------------

struct RestrictedConfig {
  Vector w0;
  double Q;  // squared q-norm radius, may be +infinity
  double eta_c;
  double eta_s = 1.0;
  int K;
  int R;
  MirrorPair mirror;
  int s;                     // sparsity of the final output
  Vector c0;                 // initial server tracker (empty -> zero)
  int participation = 0;     // clients sampled per round; 0 -> all
  std::uint64_t participation_seed = 0;
  int eval_every = 1;
  bool parallel = false;

  RestrictedConfig(Vector init, double radius_sq, double eta_client, int local_steps, int rounds, MirrorPair mp,
                   int sparsity)
      : w0(std::move(init)), Q(radius_sq), eta_c(eta_client), K(local_steps), R(rounds), mirror(mp), s(sparsity) {
    if (!(eta_c > 0.0) || K < 1 || R < 1) throw std::invalid_argument("invalid-config: eta_c > 0, K >= 1, R >= 1");
    if (!(Q >= 0.0)) throw std::invalid_argument("invalid-config: Q must be >= 0");
  }
};

struct RestrictedRoundView {
  int round;
  const Vector& server_z;          // z_{r+1,0}
  const Matrix& client_trackers;   // c_{r+1}^m
  const Vector& server_tracker;    // c_{r+1}
};
using RestrictedObserver = std::function<void(const RestrictedRoundView&)>;

struct RestrictedResult {
  Vector w_hat;  // Sparse(round-average; s)
  Vector w_avg;  // un-sparsified round average
  Trajectory trajectory;
};

inline RestrictedResult run_refedda_gt(const GradOracle& oracle, int M, const RestrictedConfig& cfg,
                                       const RestrictedObserver& observer = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  const int d = static_cast<int>(cfg.w0.size());
  const BallConstraint ball(cfg.w0, cfg.Q);

  Vector z = Vector::Zero(d);  // server dual initialization
  Matrix trackers = Matrix::Zero(d, M);
  Vector server_tracker = cfg.c0.size() == d ? cfg.c0 : Vector::Zero(d);

  const int n_part = (cfg.participation <= 0 || cfg.participation > M) ? M : cfg.participation;

  Trajectory traj;
  Vector primal_sum = Vector::Zero(d);

  std::vector<int> participants(M);
  for (int r = 0; r < cfg.R; ++r) {
    primal_sum += prox_restricted(z, ball, cfg.mirror);

    // choose S_r
    std::iota(participants.begin(), participants.end(), 0);
    if (n_part < M) {
      auto rng = derive_rng(cfg.participation_seed, 0, static_cast<std::uint64_t>(r), 0, /*role=*/3);
      for (int i = 0; i < n_part; ++i) {
        std::uniform_int_distribution<int> pick(i, M - 1);
        std::swap(participants[i], participants[pick(rng)]);
      }
    }

    Matrix z_end(d, n_part);
    detail::for_each_client(n_part, cfg.parallel, [&](int idx) {
      const int m = participants[idx];
      const Vector tracking = server_tracker - trackers.col(m);
      z_end.col(idx) = client_local_round(
          z, [&](const Vector& zv) { return prox_restricted(zv, ball, cfg.mirror); },
          [&](const Vector& w, int k) { return oracle.eval(m, w, r, k); }, cfg.eta_c, cfg.K, &tracking, r, m);
    });
    traj.total_samples += static_cast<long long>(n_part) * cfg.K * oracle.batch_size;

    const std::vector<int> S(participants.begin(), participants.begin() + n_part);
    CentralizedTrackerUpdate upd =
        tracker_update_centralized(std::move(trackers), std::move(server_tracker),
                                   z_end.colwise() - z, S, cfg.K, cfg.eta_c);
    trackers = std::move(upd.client_trackers);
    server_tracker = std::move(upd.server_tracker);
    // The server dual accumulates the updated server tracker (under full
    // participation this is exactly the round's average sampled gradient, so
    // z_{r,0} - z_{r+1,0} = eta_tilde * mean_{m,k} grad F). Subtracting only
    // the tracker increment instead would telescope to a bounded dual that
    // never accumulates gradient information.
    z -= cfg.K * cfg.eta_s * cfg.eta_c * server_tracker;

    traj.tracker_drift_max =
        std::max(traj.tracker_drift_max,
                 (server_tracker - trackers.rowwise().mean()).cwiseAbs().maxCoeff());
    traj.tracker_inf_max = std::max(traj.tracker_inf_max, trackers.cwiseAbs().maxCoeff());

    if (observer) observer(RestrictedRoundView{r, z, trackers, server_tracker});

    if ((r + 1) % cfg.eval_every == 0 || r + 1 == cfg.R) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      traj.snapshots.push_back(Snapshot{r + 1, traj.total_samples, ms, primal_sum / (r + 1)});
    }
  }

  const Vector avg = primal_sum / cfg.R;
  return RestrictedResult{sparse_top_s(avg, cfg.s), avg, std::move(traj)};
}

// ---------------------------------------------------------------------------
// Multistep restart wrapper
// ---------------------------------------------------------------------------

struct MultistepSchedule {
  int N;
  std::vector<long long> rounds;        // R_n, n = 1..N
  std::vector<long long> local_steps;   // K_n
  std::vector<double> radii_sq;         // Q_n entering stage n (Q_0 first)
};

// Theorem-prescribed schedule; all logs natural.
inline MultistepSchedule schedule_multistep(int s, double kappa, int d, double sigma, double mu_Q0, double Q0,
                                            double epsilon, double delta, int M) {
  if (!(Q0 > 0.0) || !(epsilon > 0.0)) throw std::invalid_argument("invalid-config: Q0, epsilon must be > 0");
  MultistepSchedule sch;
  sch.N = static_cast<int>(std::ceil(std::log2(Q0 / epsilon)));
  if (sch.N < 0) sch.N = 0;
  double Q = Q0;
  for (int n = 1; n <= sch.N; ++n) {
    const double R = std::ceil(64.0 * s * kappa * std::log(static_cast<double>(d)));
    const double logd = std::log(static_cast<double>(d));
    const double K = std::ceil(std::pow(2.0, n + 14) * s * s * sigma * sigma / (mu_Q0 * mu_Q0 * Q0 * R) *
                               (std::pow(logd, 4.0) + 2.0 * std::log(2.0 * n * d / delta) / (R * M)));
    sch.rounds.push_back(static_cast<long long>(R));
    sch.local_steps.push_back(std::max(1LL, static_cast<long long>(K)));
    sch.radii_sq.push_back(Q);
    Q /= 2.0;
  }
  return sch;
}

struct StageSpec {
  int R;
  int K;
  double eta_c;
  double eta_s = 1.0;
};

struct MultistepConfig {
  Vector w0;
  double Q0;
  MirrorPair mirror;
  int s;
  std::vector<StageSpec> stages;  // Q halves between consecutive stages
  int participation = 0;
  int eval_every = 1;
  bool parallel = false;

  MultistepConfig(Vector init, double radius_sq, MirrorPair mp, int sparsity)
      : w0(std::move(init)), Q0(radius_sq), mirror(mp), s(sparsity) {}
};

struct MultistepResult {
  Vector w_hat;                      // w_N, exactly s-sparse
  std::vector<Vector> stage_iterates;  // w_1 .. w_N
  std::vector<double> stage_radii;     // Q_1 .. Q_N (radius after each stage)
  Trajectory trajectory;               // concatenated, cumulative rounds/samples
};

inline MultistepResult run_multistep(const GradOracle& oracle, int M, const MultistepConfig& cfg) {
  MultistepResult result;
  Vector w = cfg.w0;
  double Q = cfg.Q0;
  int round_offset = 0;
  for (const StageSpec& stage : cfg.stages) {
    RestrictedConfig rcfg(w, Q, stage.eta_c, stage.K, stage.R, cfg.mirror, cfg.s);
    rcfg.eta_s = stage.eta_s;
    rcfg.participation = cfg.participation;
    rcfg.eval_every = cfg.eval_every;
    rcfg.parallel = cfg.parallel;
    RestrictedResult stage_result = run_refedda_gt(oracle, M, rcfg);

    for (Snapshot& snap : stage_result.trajectory.snapshots) {
      snap.round += round_offset;
      snap.samples += result.trajectory.total_samples;
      result.trajectory.snapshots.push_back(std::move(snap));
    }
    result.trajectory.total_samples += stage_result.trajectory.total_samples;
    result.trajectory.tracker_drift_max =
        std::max(result.trajectory.tracker_drift_max, stage_result.trajectory.tracker_drift_max);
    result.trajectory.tracker_inf_max =
        std::max(result.trajectory.tracker_inf_max, stage_result.trajectory.tracker_inf_max);
    round_offset += stage.R;

    w = stage_result.w_hat;
    Q /= 2.0;  // Q_{n+1} = Q_n / 2
    result.stage_iterates.push_back(w);
    result.stage_radii.push_back(Q);
  }
  result.w_hat = w;
  return result;
}

// ---------------------------------------------------------------------------
// Theorem step sizes
// ---------------------------------------------------------------------------

enum class Variant { dfedda, dfedda_gt, refedda_gt, multistep };

inline Variant variant_from_string(const std::string& name) {
  if (name == "dfedda") return Variant::dfedda;
  if (name == "dfedda_gt") return Variant::dfedda_gt;
  if (name == "refedda_gt") return Variant::refedda_gt;
  if (name == "multistep") return Variant::multistep;
  throw std::invalid_argument("unknown variant: " + name);
}

struct StepsizeParams {
  double L;
  int K;
  int R;
  int d;
  double sigma = 0.0;          // gradient-noise sub-Gaussian parameter
  double heterogeneity = 0.0;  // E*_M
  double tau = 1.0;            // mixing time (base-4 for dfedda, base-8 for dfedda_gt)
  double h_star = std::numeric_limits<double>::quiet_NaN();  // h(w*) bound; NaN -> derive from Q
  double Q = std::numeric_limits<double>::infinity();
  double q = 2.0;              // primal exponent, for the Q/(2(q-1)) fallback
  int M = 1;
  double delta = 0.1;
};

// Returns (eta_c, eta_s). Branches whose driving constant vanishes
// (sigma = 0, heterogeneity = 0) drop out of the min.
inline std::pair<double, double> recommend_stepsize(Variant variant, const StepsizeParams& prm) {
  const double inf = std::numeric_limits<double>::infinity();
  const double logd = std::log(static_cast<double>(prm.d));
  double h = prm.h_star;
  if (std::isnan(h)) h = prm.Q / (2.0 * (prm.q - 1.0));

  double eta = inf;
  switch (variant) {
    case Variant::dfedda: {
      eta = 1.0 / (prm.tau * prm.L * prm.K);
      if (prm.heterogeneity > 0.0)
        eta = std::min(eta, std::cbrt(h) / (std::cbrt(prm.tau * prm.tau * prm.L * prm.R * prm.heterogeneity) * prm.K));
      if (prm.sigma > 0.0)
        eta = std::min(eta, std::sqrt(h) / (std::sqrt(prm.tau * prm.R * prm.K) * logd * logd * prm.sigma));
      break;
    }
    case Variant::dfedda_gt: {
      eta = 1.0 / (prm.tau * prm.tau * prm.L * prm.K);
      if (prm.sigma > 0.0)
        eta = std::min(eta, std::sqrt(h) / (prm.tau * std::sqrt(static_cast<double>(prm.R) * prm.K) * logd * logd * prm.sigma));
      break;
    }
    case Variant::refedda_gt:
    case Variant::multistep: {
      eta = 1.0 / (48.0 * prm.L * prm.K);
      if (prm.sigma > 0.0) {
        eta = std::min(eta, std::sqrt(2.0 * prm.Q / (prm.R * prm.K * prm.sigma * prm.sigma * logd)));
        eta = std::min(eta, std::sqrt(2.0 * prm.Q * prm.M * logd /
                                      (prm.K * prm.sigma * prm.sigma * std::log(2.0 * prm.d / prm.delta))));
      }
      break;
    }
  }
  if (!std::isfinite(eta)) throw std::invalid_argument("recommend_stepsize: all branches degenerate");
  return {eta, 1.0};
}

}  // namespace dfedda
