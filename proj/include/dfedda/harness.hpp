// Experiment driver: JSON run configs, metric evaluation, method comparison
// and deterministic CSV emission.
#pragma once

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfedda/gossip.hpp"
#include "dfedda/mirror.hpp"
#include "dfedda/optimizers.hpp"
#include "dfedda/problems.hpp"

namespace dfedda {

// Environment variable overriding the directory CSV files are written to.
inline constexpr const char* kOutputDirEnv = "DFEDDA_OUTPUT_DIR";

struct MetricsRow {
  std::string method;
  std::uint64_t seed;
  int round;
  long long samples;
  double gap;
  double l1;
  double l2;
  bool support;
  double wall_ms;
};

// One algorithm entry of a run config.
struct MethodSpec {
  std::string name;  // CSV label; defaults to the variant string
  Variant variant;
  int R = 200;
  int K = 10;
  int batch = 10;
  double eta_c = 0.0;  // 0 -> theorem recommendation
  double eta_s = 1.0;
  double eta_scale = 1.0;          // user factor on the recommended eta_c
  double Q = 1.0;                  // radius^2 bound (restricted ball / h(w*) bound)
  double epsilon = 0.0;            // multistep target; 0 -> stages must be explicit
  double delta = 0.1;
  std::vector<StageSpec> stages;   // explicit multistep schedule (overrides epsilon)
  int participation = 0;
  double round_scale = 1.0;        // x-axis scaling factor for reported rounds

  json to_json() const {
    json j{{"variant", variant == Variant::dfedda        ? "dfedda"
                       : variant == Variant::dfedda_gt   ? "dfedda_gt"
                       : variant == Variant::refedda_gt  ? "refedda_gt"
                                                         : "multistep"},
           {"name", name},
           {"R", R},
           {"K", K},
           {"batch", batch},
           {"eta_c", eta_c},
           {"eta_s", eta_s},
           {"eta_scale", eta_scale},
           {"Q", Q},
           {"epsilon", epsilon},
           {"delta", delta},
           {"participation", participation},
           {"round_scale", round_scale}};
    if (!stages.empty()) {
      json arr = json::array();
      for (const StageSpec& st : stages) arr.push_back({{"R", st.R}, {"K", st.K}, {"eta_c", st.eta_c}, {"eta_s", st.eta_s}});
      j["stages"] = arr;
    }
    return j;
  }
};

struct RunConfig {
  json problem;           // forwarded to problem_from_json
  std::string topology = "chain";
  std::string topology_path;  // custom matrix file when topology == "custom"
  int M = 0;                  // 0 -> take the problem's client count
  double p = 0.0;             // mirror exponent override; 0 -> 2 ln d
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds{0};
  int eval_every = 0;  // 0 -> max(1, R/200)
  std::string output = "results.csv";
  bool parallel_clients = false;
  bool parallel_cells = false;

  json to_json() const {
    json ms = json::array();
    for (const MethodSpec& m : methods) ms.push_back(m.to_json());
    json j{{"problem", problem},   {"topology", topology},     {"methods", ms},
           {"seeds", seeds},       {"eval_every", eval_every}, {"output", output},
           {"M", M},               {"p", p},
           {"parallel_clients", parallel_clients},
           {"parallel_cells", parallel_cells}};
    if (!topology_path.empty()) j["topology_path"] = topology_path;
    return j;
  }
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw std::invalid_argument("config error: unknown key '" + it.key() + "' in " + where);
}

inline MethodSpec parse_method(const json& j) {
  reject_unknown_keys(j,
                      {"variant", "name", "R", "K", "batch", "eta_c", "eta_s", "eta_scale", "Q", "epsilon", "delta",
                       "stages", "participation", "round_scale"},
                      "method");
  MethodSpec m;
  m.variant = variant_from_string(j.at("variant").get<std::string>());
  m.name = j.value("name", j.at("variant").get<std::string>());
  m.R = j.value("R", 200);
  m.K = j.value("K", 10);
  m.batch = j.value("batch", 10);
  m.eta_c = j.value("eta_c", 0.0);
  m.eta_s = j.value("eta_s", 1.0);
  m.eta_scale = j.value("eta_scale", 1.0);
  m.Q = j.value("Q", 1.0);
  m.epsilon = j.value("epsilon", 0.0);
  m.delta = j.value("delta", 0.1);
  m.participation = j.value("participation", 0);
  m.round_scale = j.value("round_scale", 1.0);
  if (j.contains("stages")) {
    for (const json& st : j.at("stages")) {
      reject_unknown_keys(st, {"R", "K", "eta_c", "eta_s"}, "method.stages entry");
      m.stages.push_back(StageSpec{st.at("R").get<int>(), st.at("K").get<int>(), st.value("eta_c", 0.0),
                                   st.value("eta_s", 1.0)});
    }
  }
  if (m.R < 1 || m.K < 1 || m.batch < 1) throw std::invalid_argument("config error: key 'R'/'K'/'batch' must be >= 1");
  return m;
}

}  // namespace detail

inline RunConfig config_from_json(const json& j) {
  detail::reject_unknown_keys(j,
                              {"problem", "topology", "topology_path", "M", "p", "methods", "seeds", "eval_every",
                               "output", "parallel_clients", "parallel_cells"},
                              "config root");
  RunConfig cfg;
  if (!j.contains("problem")) throw std::invalid_argument("config error: missing key 'problem'");
  cfg.problem = j.at("problem");
  cfg.topology = j.value("topology", std::string("chain"));
  cfg.topology_path = j.value("topology_path", std::string());
  cfg.M = j.value("M", 0);
  cfg.p = j.value("p", 0.0);
  if (cfg.p != 0.0 && cfg.p < 2.0) throw std::invalid_argument("config error: key 'p' must be >= 2");
  if (!j.contains("methods") || !j.at("methods").is_array() || j.at("methods").empty())
    throw std::invalid_argument("config error: key 'methods' must be a non-empty array");
  for (const json& m : j.at("methods")) cfg.methods.push_back(detail::parse_method(m));
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (cfg.seeds.empty()) throw std::invalid_argument("config error: key 'seeds' must be non-empty");
  cfg.eval_every = j.value("eval_every", 0);
  cfg.output = j.value("output", std::string("results.csv"));
  cfg.parallel_clients = j.value("parallel_clients", false);
  cfg.parallel_cells = j.value("parallel_cells", false);
  // validate the problem spec eagerly so errors surface at load time
  problem_from_json(cfg.problem);
  if (cfg.topology != "custom") topology_from_string(cfg.topology);
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config error: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config error: " + std::string(e.what()));
  }
  return config_from_json(j);
}

// Metrics per the experiment section: averages over the per-client estimates,
// support recovery on the client mean.
inline MetricsRow evaluate(const Problem& problem, const Matrix& w_hat_per_client) {
  const Vector& w_star = problem.optimum();
  const int cols = static_cast<int>(w_hat_per_client.cols());
  MetricsRow row{};
  const double f_star = problem.global_loss(w_star);
  for (int m = 0; m < cols; ++m) {
    const Vector diff = w_hat_per_client.col(m) - w_star;
    row.gap += problem.global_loss(w_hat_per_client.col(m)) - f_star;
    row.l1 += diff.lpNorm<1>();
    row.l2 += diff.norm();
  }
  row.gap /= cols;
  row.l1 /= cols;
  row.l2 /= cols;
  const Vector mean = w_hat_per_client.rowwise().mean();
  const Vector thresholded = sparse_top_s(mean, problem.sparsity());
  row.support = true;
  for (int i = 0; i < problem.dim(); ++i)
    if ((thresholded[i] != 0.0) != (w_star[i] != 0.0)) {
      row.support = false;
      break;
    }
  return row;
}

namespace detail {

inline GossipMatrix build_topology(const RunConfig& cfg, int M) {
  if (cfg.topology == "custom") {
    if (cfg.topology_path.empty()) throw std::invalid_argument("config error: key 'topology_path' required for custom topology");
    return load_gossip_csv(cfg.topology_path);
  }
  return make_gossip(topology_from_string(cfg.topology), M);
}

inline double auto_eta(const MethodSpec& m, const Problem& problem, const GossipMatrix& gossip,
                       const MirrorPair& mp) {
  const ProblemConstants pc = problem.constants();
  StepsizeParams prm;
  prm.L = pc.L;
  prm.K = m.K;
  prm.R = m.R;
  prm.d = pc.d;
  prm.sigma = pc.sigma_noise / std::sqrt(static_cast<double>(m.batch));
  prm.Q = m.Q;
  prm.q = mp.q;
  prm.M = problem.clients();
  prm.delta = m.delta;
  if (m.variant == Variant::dfedda || m.variant == Variant::dfedda_gt) {
    const MixingInfo mi = spectral_info(gossip);
    prm.tau = m.variant == Variant::dfedda ? std::ceil(mi.tau_base4) : std::ceil(mi.tau_base8);
    if (m.variant == Variant::dfedda) prm.heterogeneity = problem.heterogeneity(mp.p);
  }
  return recommend_stepsize(m.variant, prm).first * m.eta_scale;
}

// Multistep stage list: explicit from the config, otherwise the theorem
// schedule with per-stage recommended step sizes.
inline std::vector<StageSpec> resolve_stages(const MethodSpec& m, const Problem& problem, const MirrorPair& mp) {
  const ProblemConstants pc = problem.constants();
  std::vector<StageSpec> stages = m.stages;
  if (stages.empty()) {
    if (!(m.epsilon > 0.0))
      throw std::invalid_argument("config error: multistep needs key 'epsilon' > 0 or explicit 'stages'");
    const double mu = pc.mu_of_Q(m.Q);
    const MultistepSchedule sch = schedule_multistep(pc.s, pc.L / mu, pc.d, pc.sigma_noise / std::sqrt(m.batch), mu,
                                                     m.Q, m.epsilon, m.delta, problem.clients());
    for (int n = 0; n < sch.N; ++n)
      stages.push_back(StageSpec{static_cast<int>(sch.rounds[n]), static_cast<int>(sch.local_steps[n]), 0.0, 1.0});
  }
  // fill in recommended step sizes where eta_c was left at 0
  double Q = m.Q;
  for (StageSpec& st : stages) {
    if (st.eta_c == 0.0) {
      StepsizeParams prm;
      prm.L = pc.L;
      prm.K = st.K;
      prm.R = st.R;
      prm.d = pc.d;
      prm.sigma = pc.sigma_noise / std::sqrt(static_cast<double>(m.batch));
      prm.Q = Q;
      prm.q = mp.q;
      prm.M = problem.clients();
      prm.delta = m.delta;
      st.eta_c = recommend_stepsize(Variant::refedda_gt, prm).first * m.eta_scale;
    }
    Q /= 2.0;
  }
  return stages;
}

}  // namespace detail

// One (method, seed) cell: run the algorithm, evaluate at the configured
// cadence.
inline std::vector<MetricsRow> run_cell(const Problem& problem, const GossipMatrix& gossip, const RunConfig& cfg,
                                        const MethodSpec& m, std::uint64_t seed) {
  const MirrorPair mp(cfg.p > 0.0 ? cfg.p : default_p(problem.dim()));
  const GradOracle oracle = stochastic_oracle(problem, seed, m.batch);
  const Vector w0 = Vector::Zero(problem.dim());
  const int eval_every = cfg.eval_every > 0 ? cfg.eval_every : std::max(1, m.R / 200);

  Trajectory traj;
  std::optional<Vector> final_sparse;
  switch (m.variant) {
    case Variant::dfedda:
    case Variant::dfedda_gt: {
      const double eta = m.eta_c > 0.0 ? m.eta_c : detail::auto_eta(m, problem, gossip, mp);
      DecentralizedConfig dc(eta, m.K, m.R, mp, w0);
      dc.eta_s = m.eta_s;
      dc.gradient_tracking = m.variant == Variant::dfedda_gt;
      dc.eval_every = eval_every;
      dc.parallel = cfg.parallel_clients;
      traj = run_dfedda(oracle, gossip, dc);
      break;
    }
    case Variant::refedda_gt: {
      const double eta = m.eta_c > 0.0 ? m.eta_c : detail::auto_eta(m, problem, gossip, mp);
      RestrictedConfig rc(w0, m.Q, eta, m.K, m.R, mp, problem.sparsity());
      rc.eta_s = m.eta_s;
      rc.participation = m.participation;
      rc.participation_seed = seed;
      rc.eval_every = eval_every;
      rc.parallel = cfg.parallel_clients;
      RestrictedResult res = run_refedda_gt(oracle, problem.clients(), rc);
      traj = std::move(res.trajectory);
      final_sparse = std::move(res.w_hat);
      break;
    }
    case Variant::multistep: {
      MultistepConfig mc(w0, m.Q, mp, problem.sparsity());
      mc.stages = detail::resolve_stages(m, problem, mp);
      mc.participation = m.participation;
      mc.eval_every = eval_every;
      mc.parallel = cfg.parallel_clients;
      MultistepResult res = run_multistep(oracle, problem.clients(), mc);
      traj = std::move(res.trajectory);
      final_sparse = std::move(res.w_hat);
      break;
    }
  }

  std::vector<MetricsRow> rows;
  rows.reserve(traj.snapshots.size());
  for (size_t i = 0; i < traj.snapshots.size(); ++i) {
    const Snapshot& snap = traj.snapshots[i];
    // the restricted methods report the sparsified output at the final round
    const bool last = i + 1 == traj.snapshots.size();
    MetricsRow row = (last && final_sparse) ? evaluate(problem, *final_sparse) : evaluate(problem, snap.avg_primal);
    row.method = m.name;
    row.seed = seed;
    row.round = static_cast<int>(std::llround(snap.round * m.round_scale));
    row.samples = snap.samples;
    row.wall_ms = snap.wall_ms;
    rows.push_back(std::move(row));
  }
  return rows;
}

struct CellError {
  std::string method;
  std::uint64_t seed;
  std::string what;
};

struct ExperimentResult {
  std::vector<MetricsRow> rows;
  std::vector<CellError> errors;
};

// All (method x seed) cells; failures are isolated per cell.
inline ExperimentResult run_experiment(const RunConfig& cfg) {
  std::unique_ptr<Problem> problem = problem_from_json(cfg.problem);
  const int M = cfg.M > 0 ? cfg.M : problem->clients();
  if (M != problem->clients()) throw std::invalid_argument("config error: key 'M' disagrees with the problem's client count");
  const GossipMatrix gossip = detail::build_topology(cfg, M);
  problem->optimum();  // resolve the reference solution once, outside the cells

  const int n_cells = static_cast<int>(cfg.methods.size() * cfg.seeds.size());
  std::vector<std::vector<MetricsRow>> cell_rows(n_cells);
  std::vector<std::optional<CellError>> cell_errors(n_cells);
  detail::for_each_client(n_cells, cfg.parallel_cells, [&](int c) {
    const MethodSpec& m = cfg.methods[c / cfg.seeds.size()];
    const std::uint64_t seed = cfg.seeds[c % cfg.seeds.size()];
    try {
      cell_rows[c] = run_cell(*problem, gossip, cfg, m, seed);
    } catch (const std::exception& e) {
      cell_errors[c] = CellError{m.name, seed, e.what()};
    }
  });

  ExperimentResult result;
  for (int c = 0; c < n_cells; ++c) {
    for (MetricsRow& r : cell_rows[c]) result.rows.push_back(std::move(r));
    if (cell_errors[c]) result.errors.push_back(*cell_errors[c]);
  }
  return result;
}

namespace detail {

// Locale-independent shortest-round-trip decimal.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline std::string csv_string(const std::vector<MetricsRow>& rows) {
  std::string out = "method,seed,round,samples,gap,l1,l2,support,wall_ms\n";
  for (const MetricsRow& r : rows) {
    out += r.method;
    out += ',';
    out += std::to_string(r.seed);
    out += ',';
    out += std::to_string(r.round);
    out += ',';
    out += std::to_string(r.samples);
    out += ',';
    out += detail::format_double(r.gap);
    out += ',';
    out += detail::format_double(r.l1);
    out += ',';
    out += detail::format_double(r.l2);
    out += ',';
    out += r.support ? '1' : '0';
    out += ',';
    out += detail::format_double(r.wall_ms);
    out += '\n';
  }
  return out;
}

// Applies the output-directory environment override to relative paths.
inline std::filesystem::path resolve_output_path(const std::string& configured) {
  std::filesystem::path p(configured);
  if (const char* dir = std::getenv(kOutputDirEnv); dir != nullptr && *dir != '\0' && p.is_relative())
    p = std::filesystem::path(dir) / p;
  return p;
}

inline void emit_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  const std::filesystem::path out_path = resolve_output_path(path);
  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_csv: cannot open '" + out_path.string() + "'");
  out << csv_string(rows);
}

struct MethodSummary {
  std::string method;
  double median_final_l1;
  double median_final_gap;
  int seeds;
};

struct ComparisonSummary {
  std::vector<MethodSummary> methods;  // config order
  // (i, j) entries of methods with median_final_l1[i] < median_final_l1[j]
  std::vector<std::pair<std::string, std::string>> l1_orderings;
};

inline ComparisonSummary compare_methods(const ExperimentResult& result, const RunConfig& cfg) {
  if (cfg.methods.empty()) throw std::invalid_argument("config error: key 'methods' must be non-empty");
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  ComparisonSummary summary;
  for (const MethodSpec& m : cfg.methods) {
    std::map<std::uint64_t, const MetricsRow*> final_rows;  // last row per seed
    for (const MetricsRow& r : result.rows)
      if (r.method == m.name) {
        auto& slot = final_rows[r.seed];
        if (slot == nullptr || r.round >= slot->round) slot = &r;
      }
    std::vector<double> l1s, gaps;
    for (const auto& [seed, row] : final_rows) {
      l1s.push_back(row->l1);
      gaps.push_back(row->gap);
    }
    if (l1s.empty()) continue;  // every cell of this method failed
    summary.methods.push_back(MethodSummary{m.name, median(l1s), median(gaps), static_cast<int>(l1s.size())});
  }
  for (const MethodSummary& a : summary.methods)
    for (const MethodSummary& b : summary.methods)
      if (a.method != b.method && a.median_final_l1 < b.median_final_l1)
        summary.l1_orderings.emplace_back(a.method, b.method);
  return summary;
}

inline std::string summary_string(const ComparisonSummary& s) {
  std::ostringstream out;
  out << "method,seeds,median_final_l1,median_final_gap\n";
  for (const MethodSummary& m : s.methods)
    out << m.method << ',' << m.seeds << ',' << detail::format_double(m.median_final_l1) << ','
        << detail::format_double(m.median_final_gap) << '\n';
  for (const auto& [lo, hi] : s.l1_orderings) out << "# l1: " << lo << " < " << hi << '\n';
  return out.str();
}

}  // namespace dfedda
