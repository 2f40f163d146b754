// Gossip matrices: construction (complete / chain / ring / custom),
// validation, spectral analysis and one mixing step on stacked client columns.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfedda/mirror.hpp"

namespace dfedda {

enum class Topology { complete, chain, ring };

namespace detail {

inline void validate_gossip(const Matrix& U) {
  const Eigen::Index M = U.rows();
  if (U.cols() != M || M < 2) throw std::invalid_argument("invalid-gossip: matrix must be square, M >= 2");
  if ((U - U.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("invalid-gossip: symmetry violated");
  for (Eigen::Index i = 0; i < M; ++i)
    for (Eigen::Index j = 0; j < M; ++j)
      if (i != j && U(i, j) < 0.0) throw std::invalid_argument("invalid-gossip: negative off-diagonal entry");
  const Vector ones = Vector::Ones(M);
  if ((U * ones - ones).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("invalid-gossip: row sums are not 1 (doubly stochastic violated)");
  if ((U.transpose() * ones - ones).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument("invalid-gossip: column sums are not 1 (doubly stochastic violated)");
}

// Second-largest eigenvalue modulus via power iteration on (U - J_M)^2.
// Squaring makes the dominant eigenvalue sigma2^2 unique in sign, so the
// iteration converges even when +sigma2 and -sigma2 are both present (rings).
inline double sigma2_power_iteration(const Matrix& U, double tol = 1e-12, int max_iters = 100000) {
  const Eigen::Index M = U.rows();
  const Matrix D = U - Matrix::Constant(M, M, 1.0 / static_cast<double>(M));
  const Matrix B = D * D;
  Vector v = Vector::LinSpaced(M, 1.0, 2.0);
  v -= Vector::Constant(M, v.mean());
  if (v.norm() == 0.0) v[0] = 1.0;
  v.normalize();
  double lambda_sq = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vector w = B * v;
    const double n = w.norm();
    if (n < 1e-300) return 0.0;
    w /= n;
    const double next = w.dot(B * w);
    if (std::abs(next - lambda_sq) < tol) return std::sqrt(std::max(next, 0.0));
    lambda_sq = next;
    v = w;
  }
  return std::sqrt(std::max(lambda_sq, 0.0));
}

inline double sigma2_dense(const Matrix& U) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(U, Eigen::EigenvaluesOnly);
  const Vector ev = es.eigenvalues();  // ascending
  const Eigen::Index M = ev.size();
  // Top eigenvalue is 1 (Perron); sigma2 is the largest modulus among the rest.
  double s2 = std::abs(ev[0]);
  if (M >= 2) s2 = std::max(s2, std::abs(ev[M - 2]));
  return std::min(s2, 1.0);
}

inline double compute_sigma2(const Matrix& U) {
  return U.rows() <= 256 ? sigma2_dense(U) : sigma2_power_iteration(U);
}

}  // namespace detail

// Symmetric doubly-stochastic mixing matrix with cached sigma2.
struct GossipMatrix {
  int M;
  Matrix U;
  double sigma2;

  explicit GossipMatrix(Matrix entries) : M(static_cast<int>(entries.rows())), U(std::move(entries)) {
    detail::validate_gossip(U);
    sigma2 = detail::compute_sigma2(U);
  }
};

// complete -> J_M; chain/ring -> Metropolis-Hastings weights
// u_ij = 1/(1 + max(deg_i, deg_j)) on edges, diagonal fills the row to 1.
inline GossipMatrix make_gossip(Topology topology, int M) {
  if (M < 2) throw std::invalid_argument("make_gossip: M must be >= 2");
  Matrix U = Matrix::Zero(M, M);
  switch (topology) {
    case Topology::complete:
      U.setConstant(1.0 / static_cast<double>(M));
      break;
    case Topology::chain: {
      std::vector<int> deg(M, 2);
      deg[0] = deg[M - 1] = 1;
      for (int i = 0; i + 1 < M; ++i) {
        const double w = 1.0 / (1.0 + std::max(deg[i], deg[i + 1]));
        U(i, i + 1) = U(i + 1, i) = w;
      }
      for (int i = 0; i < M; ++i) U(i, i) = 1.0 - U.row(i).sum();
      break;
    }
    case Topology::ring: {
      if (M == 2) return make_gossip(Topology::chain, 2);
      for (int i = 0; i < M; ++i) {
        const int j = (i + 1) % M;
        U(i, j) = U(j, i) = 1.0 / 3.0;
      }
      for (int i = 0; i < M; ++i) U(i, i) = 1.0 - U.row(i).sum();
      break;
    }
  }
  return GossipMatrix(std::move(U));
}

inline GossipMatrix make_gossip_custom(Matrix U) { return GossipMatrix(std::move(U)); }

inline Topology topology_from_string(const std::string& name) {
  if (name == "complete") return Topology::complete;
  if (name == "chain") return Topology::chain;
  if (name == "ring") return Topology::ring;
  throw std::invalid_argument("unknown topology: " + name);
}

// M x M reals, one row per line, comma or whitespace separated.
inline GossipMatrix load_gossip_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_gossip_csv: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream ls(line);
    std::vector<double> row;
    double v;
    while (ls >> v) row.push_back(v);
    if (!row.empty()) rows.push_back(std::move(row));
  }
  const size_t M = rows.size();
  Matrix U(M, M);
  for (size_t i = 0; i < M; ++i) {
    if (rows[i].size() != M) throw std::invalid_argument("load_gossip_csv: matrix is not square");
    for (size_t j = 0; j < M; ++j) U(i, j) = rows[i][j];
  }
  return GossipMatrix(std::move(U));
}

// tau = log(cM) / (2 log(1/sigma2)) v 1, natural log, c in {4, 8}. Stored as a
// real; ceil only where a round count is consumed.
struct MixingInfo {
  double sigma2;
  double spectral_gap;
  double tau_base4;
  double tau_base8;
};

inline MixingInfo spectral_info(const GossipMatrix& g) {
  // sigma2 of a disconnected/periodic graph is exactly 1 mathematically but
  // may round to 1 - O(eps); treat anything within 1e-9 of 1 as degenerate.
  if (g.sigma2 >= 1.0 - 1e-9)
    throw std::runtime_error("assumption-violated: sigma2 >= 1 (disconnected or periodic graph)");
  auto tau = [&](double c) {
    if (g.sigma2 <= 0.0) return 1.0;
    return std::max(1.0, std::log(c * g.M) / (2.0 * std::log(1.0 / g.sigma2)));
  };
  return MixingInfo{g.sigma2, 1.0 - g.sigma2, tau(4.0), tau(8.0)};
}

// One gossip step on stacked client vectors: Z <- Z U. Preserves the column
// average exactly (double stochasticity).
inline Matrix mix_columns(const Matrix& Z, const GossipMatrix& g) {
  if (Z.cols() != g.M) throw std::invalid_argument("mix_columns: column count must equal M");
  return Z * g.U;
}

}  // namespace dfedda
