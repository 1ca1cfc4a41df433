// pfl_sim: run experiment files and degradation probes.
//
//   pfl_sim run <config.json> [--out DIR] [--parallel K]
//   pfl_sim probe <config.json> [--norms 0,1,10,...] [--out probe.csv]
//
// Exit codes: 0 success, 1 config error, 2 runtime failure.
// PFL_LOG=quiet|info|debug controls stderr verbosity.

#include <charconv>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pfl/experiment.hpp"
#include "pfl/simulator.hpp"

namespace {

int cmd_run(const std::string& config, const std::string& out, std::size_t parallel) {
  pfl::ExperimentSet set;
  try {
    set = pfl::parse_config(config);
  } catch (const pfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  return pfl::run_experiments(set, out, parallel);
}

int cmd_probe(const std::string& config, const std::vector<double>& norms, const std::string& out) {
  pfl::ExperimentSet set;
  try {
    set = pfl::parse_config(config);
  } catch (const pfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }
  try {
    pfl::SimConfig cfg = set.points.front().config;
    cfg.attack.kind = pfl::AttackKind::kNone;
    cfg.defense.rule = pfl::RuleKind::kFedAvg;
    cfg.defense.tailored = pfl::TailoredDefense::kNone;
    cfg.eval_every = cfg.rounds;
    const pfl::Environment env = pfl::make_environment(cfg);
    const pfl::RunResult trained = pfl::run(cfg, env);
    const auto sweep = pfl::degradation_probe(env.spec, trained.final_model, env.s, norms, env.test, cfg.seed);

    std::ofstream file;
    if (!out.empty()) {
      file.open(out, std::ios::binary | std::ios::trunc);
      if (!file) throw std::runtime_error(out + ": cannot open for writing");
    }
    std::ostream& sink = out.empty() ? std::cout : file;
    sink << "noise_norm,testing_error\n";
    for (const auto& [norm, error] : sweep) sink << norm << ',' << error << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning poisoning simulator"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir = "out";
  std::size_t parallel = 1;
  auto* run = app.add_subcommand("run", "Run every point of an experiment file");
  run->add_option("config", config, "Experiment file (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--parallel", parallel, "Sweep points to run concurrently")->check(CLI::PositiveNumber);

  std::string probe_config;
  std::string probe_out;
  std::vector<double> norms{0, 1, 2, 5, 10, 20, 50, 100, 200, 500, 1000};
  auto* probe = app.add_subcommand("probe", "Train without attack, then sweep random-direction noise norms");
  probe->add_option("config", probe_config, "Experiment file (JSON)")->required();
  probe->add_option("--norms", norms, "Noise norms")->delimiter(',');
  probe->add_option("--out", probe_out, "CSV output file (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (*run) return cmd_run(config, out_dir, parallel);
  return cmd_probe(probe_config, norms, probe_out);
}
