// Command-line front end: one subcommand per experiment, JSON config in,
// csv/json result records out.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "xprob/harness.hpp"

namespace {

int default_workers() {
  if (const char* env = std::getenv("XPROB_WORKERS")) {
    const int w = std::atoi(env);
    if (w >= 1) return w;
  }
  return 1;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw xprob::harness::ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CommonOpts {
  std::string config_path;
  std::optional<long> seed;
  std::optional<int> trajectories;
  std::optional<std::string> out;
  std::optional<std::string> format;
  int workers = default_workers();
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "path to the JSON run config")
      ->required();
  cmd->add_option("--seed", opts.seed, "override seed_base");
  cmd->add_option("--trajectories", opts.trajectories, "override n_trajectories");
  cmd->add_option("--out", opts.out, "override output_path");
  cmd->add_option("--format", opts.format, "override output_format (csv|json)");
  cmd->add_option("--workers", opts.workers, "number of worker threads");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace xprob::harness;

  CLI::App app{"xprob: spin-system simulator with a stochastic energy-conserving jump channel"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    ExperimentKind kind;
  };
  const Sub subs[] = {
      {"echo", "time-reversal echo experiment", ExperimentKind::Echo},
      {"equilibrate", "equilibration toward the microcanonical shell",
       ExperimentKind::Equilibrate},
      {"boltzmann-check", "single-particle Boltzmann marginal check",
       ExperimentKind::BoltzmannCheck},
      {"correlate", "temporal correlation estimator", ExperimentKind::Correlate},
      {"ergodicity", "time average vs shell ensemble average",
       ExperimentKind::Ergodicity},
      {"ensemble", "pure ensemble computations (no dynamics)",
       ExperimentKind::Ensemble},
  };

  CommonOpts opts;
  std::optional<ExperimentKind> selected;
  bool validate_only = false;
  for (const auto& sub : subs) {
    CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
    add_common(cmd, opts);
    cmd->callback([&selected, kind = sub.kind] { selected = kind; });
  }
  CLI::App* vcmd = app.add_subcommand("validate", "parse and validate a config, run nothing");
  add_common(vcmd, opts);
  vcmd->callback([&validate_only] { validate_only = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig config = parse_config(read_file(opts.config_path));
    if (selected && config.kind != *selected)
      throw ConfigError("experiment.type is '" + to_string(config.kind) +
                        "' but the '" + to_string(*selected) +
                        "' subcommand was invoked");
    if (opts.seed) config.seed_base = (std::uint64_t)*opts.seed;
    if (opts.trajectories) {
      if (*opts.trajectories < 1)
        throw ConfigError("--trajectories: must be >= 1");
      config.n_trajectories = *opts.trajectories;
    }
    if (opts.out) config.output_path = *opts.out;
    if (opts.format) {
      if (*opts.format == "csv")
        config.output_format = OutputFormat::Csv;
      else if (*opts.format == "json")
        config.output_format = OutputFormat::Json;
      else
        throw ConfigError("--format: expected 'csv' or 'json'");
    }

    if (validate_only) {
      std::cout << "config ok: experiment=" << to_string(config.kind)
                << " fingerprint=" << config_fingerprint(config) << "\n";
      return 0;
    }

    const ResultRecord record = run(config, opts.workers);
    emit(record, config.output_format, config.output_path);

    std::cout << "experiment=" << record.experiment
              << " trajectories=" << record.rows.size()
              << " fingerprint=" << record.fingerprint << "\n";
    for (std::size_t c = 0; c < record.columns.size(); ++c)
      std::cout << "  " << record.columns[c]
                << ": mean=" << record.aggregates[c].mean
                << " stddev=" << record.aggregates[c].stddev
                << " count=" << record.aggregates[c].count << "\n";
    std::cout << "wrote " << config.output_path << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
}
