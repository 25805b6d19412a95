#pragma once

/**
 * End-to-end experiment orchestration: data construction (synthetic or
 * ingested), phase-1 training with per-round evaluation, phase-2
 * personalization, metric/summary emission, and the arm x seed suite runner.
 */

#include <optional>
#include <string>
#include <vector>

#include "purefed/analysis.hpp"
#include "purefed/config.hpp"

namespace purefed::cli {

struct Summary {
  std::string arm;
  std::uint64_t seed = 0;

  analysis::GroupAccuracy zero_shot_gm;
  double zero_shot_balancedness = 0.0;

  analysis::GroupAccuracy final_gm;
  double final_gm_balancedness = 0.0;

  analysis::GroupAccuracy final_pm;  // empty when residual is off
  std::optional<double> final_pm_balancedness;

  /// Unweighted client means of overall local-test accuracy.
  std::optional<double> gm_local_mean_acc;
  std::optional<double> pm_local_mean_acc;

  double final_mean_tkl = 0.0;
  double final_mean_kl = 0.0;
  std::optional<double> mean_drift;  // mean of per-round mean drift
  std::optional<double> mean_fire_rate;

  std::optional<double> attribution_personal_many;
  std::optional<double> attribution_personal_medium;
  std::optional<double> attribution_personal_few;

  int aborted_clients_total = 0;
  std::vector<int> phase2_failed_clients;
};

struct ExperimentResult {
  Summary summary;
  std::vector<analysis::RoundRecord> records;
};

/// Runs one experiment and writes resolved_config.ini, metrics.jsonl,
/// metrics.csv, summary.json and params/ under cfg.out.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct SuiteRow {
  std::string arm;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  Summary summary;
};

/// Runs every (arm, seed) combination into subdirectories of base.out and
/// writes a wide comparison CSV at base.out/suite.csv. Failed runs become
/// failed rows; the suite continues.
std::vector<SuiteRow> run_suite(const ExperimentConfig& base,
                                const std::vector<std::string>& arms,
                                const std::vector<std::uint64_t>& seeds);

}  // namespace purefed::cli
