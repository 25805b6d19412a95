#pragma once

/**
 * Experiment configuration: paper-default knobs, flat key=value config files
 * with flag overrides, independent seed streams, and the resolved-config
 * echo that makes every run reproducible from its own output directory.
 */

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "purefed/federation.hpp"

namespace purefed::cli {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // federation
  int clients = 20;
  int rounds = 100;
  double fraction = 0.4;
  int local_epochs = 1;
  int batch_size = 32;
  double lr1 = 0.01;
  double lr2 = 0.01;
  int personal_rounds = 20;
  double lambda = 0.9;
  bool purify = true;
  bool residual = true;
  int workers = 1;

  // data
  int classes = 20;
  int dim = 32;
  long n1 = 200;
  double imbalance_factor = 100.0;
  double class_sep = 3.0;
  double nu = 0.75;  // prototype noise; default targets ~70% zero-shot accuracy
  double alpha_dir = 1.0;
  long test_per_class = 100;
  long local_test_size = 200;

  // divergence
  double sigma = 0.1;
  double tau_min = 1e-4;
  double tau_max = 1e4;
  double logit_scale = 10.0;

  // evaluation
  long tkl_eval_samples = 512;

  // mode: synthetic by default; all three paths required for ingestion
  std::string ingest_embeddings;
  std::string ingest_prototypes;
  std::string ingest_test;

  // output and seeding
  std::string out = "out";
  std::uint64_t seed = 42;
  std::optional<std::uint64_t> seed_data;
  std::optional<std::uint64_t> seed_partition;
  std::optional<std::uint64_t> seed_selection;
  std::optional<std::uint64_t> seed_shuffle;
  std::optional<std::uint64_t> seed_eval;

  bool ingest_mode() const { return !ingest_embeddings.empty(); }

  std::uint64_t resolved_seed_data() const;
  std::uint64_t resolved_seed_partition() const;
  std::uint64_t resolved_seed_selection() const;
  std::uint64_t resolved_seed_shuffle() const;
  std::uint64_t resolved_seed_eval() const;

  /// Cross-field checks; throws ConfigError naming the offending key.
  void validate() const;

  /// Arm name derived from the toggles (fedavg-baseline, purify-only,
  /// residual-only, full).
  std::string arm_name() const;

  federation::FedConfig fed_config() const;
  divergence::TemperatureBracket bracket() const;
};

/// Applies a named arm to the toggles; throws ConfigError on unknown names.
void apply_arm(ExperimentConfig& cfg, const std::string& arm);

struct CliResult {
  ExperimentConfig cfg;
  bool is_suite = false;
  std::vector<std::string> arms;
  std::vector<std::uint64_t> seeds;
  bool help_requested = false;
  std::string help_text;
};

/// Parses flags (and an optional --config file; flags win). Unknown keys,
/// out-of-range values and missing paths raise ConfigError naming the key.
CliResult parse_cli(const std::vector<std::string>& args);

/// Writes the fully-resolved key=value config; re-running with this file
/// reproduces the run byte-identically.
void write_resolved_config(const ExperimentConfig& cfg, const std::string& path);

}  // namespace purefed::cli
