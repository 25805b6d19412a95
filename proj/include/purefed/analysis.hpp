#pragma once

/**
 * Diagnostics and metric emission: per-class and shot-group accuracies,
 * balancedness over accuracy vectors, client drift, gradient angles,
 * branch-contribution attribution, TKL/KL trajectories, and the JSONL/CSV
 * round-record streams.
 *
 * Missing values (undefined angle, empty group) serialize as nulls, never
 * as zeros.
 */

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "purefed/data.hpp"
#include "purefed/model.hpp"

namespace purefed::analysis {

struct GroupAccuracy {
  std::optional<double> all;
  std::optional<double> many;
  std::optional<double> medium;
  std::optional<double> few;
};

/// One per-round metric snapshot. PM fields stay empty until phase 2 ran.
struct RoundRecord {
  int round = 0;
  GroupAccuracy gm;
  GroupAccuracy pm;
  double gm_balancedness = 0.0;
  std::optional<double> pm_balancedness;
  double mean_tkl = 0.0;
  double mean_kl = 0.0;
  std::optional<double> mean_drift;
  std::optional<double> max_drift;
  std::optional<double> mean_grad_angle_deg;
  std::optional<double> purify_fire_rate;
};

using Predictor = std::function<int(const Vec&)>;

/// Fraction correct per class; classes absent from the test set score 0 and
/// are reported through `missing_classes` when provided.
Vec per_class_accuracy(const Predictor& predict, const data::LabeledFeatureSet& testset,
                       std::vector<int>* missing_classes = nullptr);

/// Sample-weighted accuracy per shot group; empty groups are absent.
GroupAccuracy grouped_accuracy(const Vec& per_class, const data::ShotGroups& groups,
                               const std::vector<long>& per_class_test_counts);

/// Frobenius distance between two deltas of equal shape.
double client_drift(const model::PeftDelta& phi_local, const model::PeftDelta& phi_global);

/// Angle between the pair's gradients in degrees; empty when either norm
/// vanishes (angle undefined).
std::optional<double> gradient_angle(const model::GradientPair& pair);

/// Per-class attribution counts over correctly fused-classified samples.
/// A correct prediction belongs to the global branch when its logit at the
/// true class strictly exceeds the personal branch's, else to the personal
/// branch. Profiles from different clients merge by summing counts.
struct AttributionProfile {
  std::vector<long> correct;              // per class
  std::vector<long> personal_attributed;  // per class

  void merge(const AttributionProfile& other);
  std::optional<double> personal_share(int c) const;
  std::optional<double> global_share(int c) const;
  /// Mean personal share over the classes in `group` with >= 1 correct hit.
  std::optional<double> group_personal_share(const std::vector<int>& group) const;
};

AttributionProfile branch_attribution(const model::ZeroShotHead& head,
                                      const model::PeftDelta& phi_g,
                                      const model::PeftDelta& phi_k,
                                      const data::LabeledFeatureSet& local_test);

struct TrajectoryStats {
  double mean_tkl = 0.0;
  double mean_kl = 0.0;  // standard KL at unit temperature
};

/// Mean TKL and mean standard KL between fine-tuned and zero-shot logits
/// over a fixed evaluation sample set.
TrajectoryStats tkl_trajectory(const model::ZeroShotHead& head, const model::PeftDelta& phi_g,
                               const data::LabeledFeatureSet& eval_set,
                               const divergence::TemperatureBracket& bracket = {});

/// JSONL stream (one record per line, fixed field order, floats at six
/// significant digits) plus a CSV mirror with identical values.
void emit_records(const std::vector<RoundRecord>& records, const std::string& jsonl_path,
                  const std::string& csv_path);

}  // namespace purefed::analysis
