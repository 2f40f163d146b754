// Command-line driver: experiment runs, method comparison, gossip spectra and
// multistep schedules. Exit codes: 0 success, 1 validation error, 2 runtime
// failure.
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dfedda/harness.hpp"

namespace {

int cmd_run(const std::string& config_path, bool print_summary) {
  const dfedda::RunConfig cfg = dfedda::load_config(config_path);
  const dfedda::ExperimentResult result = dfedda::run_experiment(cfg);
  dfedda::emit_csv(result.rows, cfg.output);
  std::cout << "wrote " << dfedda::resolve_output_path(cfg.output).string() << " (" << result.rows.size()
            << " rows)\n";
  for (const dfedda::CellError& e : result.errors)
    std::cerr << "cell failed: method=" << e.method << " seed=" << e.seed << ": " << e.what << '\n';
  if (print_summary) std::cout << dfedda::summary_string(dfedda::compare_methods(result, cfg));
  if (!result.errors.empty() && result.rows.empty()) throw std::runtime_error("all experiment cells failed");
  return 0;
}

int cmd_spectral(const std::string& topology, int M) {
  const dfedda::GossipMatrix g = dfedda::make_gossip(dfedda::topology_from_string(topology), M);
  const dfedda::MixingInfo info = dfedda::spectral_info(g);
  std::printf("topology=%s M=%d\n", topology.c_str(), M);
  std::printf("sigma2=%.12g\nspectral_gap=%.12g\ntau_base4=%.12g\ntau_base8=%.12g\n", info.sigma2,
              info.spectral_gap, info.tau_base4, info.tau_base8);
  return 0;
}

int cmd_schedule(int s, double kappa, int d, double sigma, double mu, double Q0, double epsilon, double delta,
                 int M) {
  const dfedda::MultistepSchedule sch = dfedda::schedule_multistep(s, kappa, d, sigma, mu, Q0, epsilon, delta, M);
  std::printf("N=%d\n", sch.N);
  std::printf("n,Q_n,R_n,K_n\n");
  for (int n = 0; n < sch.N; ++n)
    std::printf("%d,%.12g,%lld,%lld\n", n + 1, sch.radii_sq[n], sch.rounds[n], sch.local_steps[n]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized federated dual averaging experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment config and write the metrics CSV");
  run->add_option("config", config_path, "JSON config file")->required();

  std::string compare_config;
  auto* compare = app.add_subcommand("compare", "Run a multi-method config and print the comparison summary");
  compare->add_option("config", compare_config, "JSON config file")->required();

  std::string topology;
  int M = 0;
  auto* spectral = app.add_subcommand("spectral", "Print sigma2, spectral gap and mixing times of a topology");
  spectral->add_option("topology", topology, "complete | chain | ring")->required();
  spectral->add_option("M", M, "number of clients")->required()->check(CLI::PositiveNumber);

  int s = 0, d = 0, sM = 1;
  double kappa = 1.0, sigma = 0.0, mu = 1.0, Q0 = 1.0, epsilon = 0.0, delta = 0.1;
  auto* schedule = app.add_subcommand("schedule", "Print the multistep N/R_n/K_n table");
  schedule->add_option("--s", s, "sparsity")->required();
  schedule->add_option("--kappa", kappa, "condition number L/mu(Q0)")->required();
  schedule->add_option("--d", d, "dimension")->required();
  schedule->add_option("--sigma", sigma, "noise level")->required();
  schedule->add_option("--mu", mu, "strong convexity mu(Q0)")->required();
  schedule->add_option("--Q0", Q0, "initial squared radius")->required();
  schedule->add_option("--epsilon", epsilon, "target l1^2 accuracy")->required();
  schedule->add_option("--delta", delta, "failure probability")->capture_default_str();
  schedule->add_option("--M", sM, "number of clients")->capture_default_str();

  try {
    app.parse(argc, argv);
    if (*run) return cmd_run(config_path, false);
    if (*compare) return cmd_run(compare_config, true);
    if (*spectral) return cmd_spectral(topology, M);
    if (*schedule) return cmd_schedule(s, kappa, d, sigma, mu, Q0, epsilon, delta, sM);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
