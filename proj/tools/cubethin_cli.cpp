// Command-line surface: chain ingestion, thinning methods, quality metrics,
// weight diagnostics, and the truncated-normal experiment harness.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cubethin/cubethin.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void add_common_options(CLI::App* cmd, cubethin::RunConfig& cfg) {
  cmd->add_option("--seed", cfg.seed, "master 64-bit seed");
  cmd->add_option("--out", cfg.out_dir, "output directory");
  cmd->add_option("--threads", cfg.threads, "worker threads (0 = hardware)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cube thinning: compress MCMC output under control-variate constraints"};
  app.set_config("--config", "", "read options from a config file");
  app.require_subcommand(1);

  cubethin::RunConfig cfg;
  std::string metrics_csv = "ksd,ed,star";
  std::string methods_csv = "cube-full,thin";

  auto* weights = app.add_subcommand("weights", "control-variate weight of every chain state");
  weights->add_option("--input", cfg.input_path, "chain file (CSV or CBTH1)")->required();
  weights->add_option("--method", cfg.method, "cube-full | cube-diagonal | cube-gibbs");
  weights->add_option("--target", cfg.target_path, "mu/Sigma file for cube-gibbs");
  weights->add_option("--burnin", cfg.burn_in, "states to drop before weighting");
  add_common_options(weights, cfg);

  auto* thin = app.add_subcommand("thin", "compress a chain to M points");
  thin->add_option("--input", cfg.input_path, "chain file")->required();
  thin->add_option("--method", cfg.method,
                   "cube-full | cube-diagonal | cube-gibbs | thin | stein-greedy");
  thin->add_option("-M,--size", cfg.M, "subsample size");
  thin->add_option("--burnin", cfg.burn_in, "states to drop first");
  thin->add_option("--target", cfg.target_path, "mu/Sigma file for cube-gibbs");
  thin->add_option("--bandwidth", cfg.bandwidth, "Stein kernel bandwidth (0 = median)");
  add_common_options(thin, cfg);

  auto* metrics = app.add_subcommand("metrics", "evaluate subsample files against a chain");
  metrics->add_option("--input", cfg.input_path, "reference chain file")->required();
  metrics->add_option("--sub", cfg.subsample_paths, "subsample file (repeatable)")->required();
  metrics->add_option("--metrics", metrics_csv, "comma list of ksd,ed,star");
  metrics->add_option("--burnin", cfg.burn_in, "reference burn-in");
  metrics->add_option("--bandwidth", cfg.bandwidth, "Stein kernel bandwidth (0 = median)");
  metrics->add_option("--boxes", cfg.n_boxes, "random boxes for star discrepancy");
  metrics->add_option("--ref-cap", cfg.ref_cap, "reference support cap (0 = none)");
  add_common_options(metrics, cfg);

  auto* compare = app.add_subcommand("compare", "replicate thinning methods and report metrics");
  compare->add_option("--input", cfg.input_path, "chain file")->required();
  compare->add_option("--methods", methods_csv, "comma list of methods");
  compare->add_option("-M,--size", cfg.M, "subsample size");
  compare->add_option("--replicates", cfg.replicates, "replicates per method");
  compare->add_option("--burnin", cfg.burn_in, "states to drop first");
  compare->add_option("--metrics", metrics_csv, "comma list of ksd,ed,star");
  compare->add_option("--target", cfg.target_path, "mu/Sigma file for cube-gibbs");
  compare->add_option("--bandwidth", cfg.bandwidth, "Stein kernel bandwidth (0 = median)");
  compare->add_option("--boxes", cfg.n_boxes, "random boxes for star discrepancy");
  compare->add_option("--ref-cap", cfg.ref_cap, "reference support cap (0 = none)");
  add_common_options(compare, cfg);

  auto* experiment =
      app.add_subcommand("experiment-truncnorm", "truncated-normal estimator comparison");
  experiment->add_option("-d,--dim", cfg.dim, "target dimension");
  experiment->add_option("-N,--length", cfg.chain_length, "Gibbs chain length");
  experiment->add_option("-M,--size", cfg.M, "subsample size");
  experiment->add_option("--replicates", cfg.replicates, "independent replicates");
  experiment->add_option("--export-chain", cfg.export_chain_path,
                         "also write the first replicate's chain here");
  add_common_options(experiment, cfg);

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.metrics = split_csv(metrics_csv);
    cfg.methods = split_csv(methods_csv);
    std::string path;
    if (app.got_subcommand(weights)) path = cubethin::cmd_weights(cfg);
    if (app.got_subcommand(thin)) path = cubethin::cmd_thin(cfg);
    if (app.got_subcommand(metrics)) path = cubethin::cmd_metrics(cfg);
    if (app.got_subcommand(compare)) path = cubethin::cmd_compare(cfg);
    if (app.got_subcommand(experiment)) path = cubethin::cmd_experiment_truncnorm(cfg);
    std::cout << path << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
