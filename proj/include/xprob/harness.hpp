#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xprob/experiments.hpp"

namespace xprob::harness {

inline constexpr const char* kToolVersion = "xprob 1.0.0";

/// Configuration rejection: carries the offending field path in the message.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind {
  Echo,
  Equilibrate,
  BoltzmannCheck,
  Correlate,
  Ergodicity,
  Ensemble
};

std::string to_string(ExperimentKind k);

enum class OutputFormat { Csv, Json };

/// How the per-trajectory initial state is prepared (in the eigenbasis).
struct InitialStateSpec {
  enum class Kind { Random, Shell } kind = Kind::Random;
  // shell placement: either an absolute energy or a fraction of the
  // spectral range above the ground state
  double center = 0.0;
  double center_fraction = 0.5;
  bool center_is_fraction = true;
  double half_width = 0.0;  // 0: reuse the jump channel's shell width
};

struct ObservableSpec {
  std::string type = "sz_total";  // sz_total | sz_site | sx_site | hamiltonian
  int site = 0;
};

struct EchoParams {
  double forward_time = 1.0;
  double reversal_epsilon = 0.0;
};

struct EquilibrateParams {
  double total_time = 10.0;
  int n_samples = 100;
};

struct BoltzmannParams {
  double e_target_above_ground = 0.0;
  double total_time = 10.0;
  int n_samples = 400;
};

struct CorrelateParams {
  ObservableSpec f, g;
  std::vector<double> t_grid;
  double trajectory_time = 0.0;
  double sample_dt = 0.0;  // 0: derived from the grid
  double burn_in = -1.0;   // <0: default burn-in
};

struct ErgodicityParams {
  ObservableSpec observable;
  double trajectory_time = 0.0;
  int n_samples = 400;
};

struct EnsembleParams {
  std::vector<double> level_energies;
  std::vector<int> degeneracies;  // empty: all 1
  long n_particles = 1;
  std::optional<double> beta;      // exactly one of beta / e_target
  std::optional<double> e_target;
};

struct RunConfig {
  SpinSystem system;
  XJumpConfig jumps;
  ExperimentKind kind = ExperimentKind::Echo;
  InitialStateSpec initial;
  EchoParams echo;
  EquilibrateParams equilibrate;
  BoltzmannParams boltzmann;
  CorrelateParams correlate;
  ErgodicityParams ergodicity;
  EnsembleParams ensemble;
  std::uint64_t seed_base = 1;
  int n_trajectories = 1;
  std::string output_path = "result.csv";
  OutputFormat output_format = OutputFormat::Csv;
  std::string canonical_document;  // defaults-filled, sorted-key form
};

/// Parse and fully validate a JSON configuration document. Unknown keys are
/// rejected with a nearest-key suggestion; invariant violations name the
/// field path.
RunConfig parse_config(const std::string& text);

/// Stable hash of the canonicalized configuration.
std::string config_fingerprint(const RunConfig& config);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  long count = 0;
};

struct ResultRecord {
  std::string fingerprint;
  std::string experiment;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;  // one per trajectory
  std::vector<Aggregate> aggregates;      // per column
  std::string tool_version;
  std::string wall_clock;  // not included in csv output

  void recompute_aggregates();
};

/// Execute the configured experiment over n_trajectories seeds
/// (seed_base + index). The record is independent of the worker count.
ResultRecord run(const RunConfig& config, int workers = 1);

void emit_csv(const ResultRecord& record, std::ostream& out);
void emit_json(const ResultRecord& record, std::ostream& out);
void emit(const ResultRecord& record, OutputFormat format,
          const std::string& path);
ResultRecord read_json(std::istream& in);

}  // namespace xprob::harness
