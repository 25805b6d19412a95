#pragma once

/**
 * Dataset construction: exponential long-tail class counts, synthetic
 * Gaussian-cluster features, noisy prototype heads, Dirichlet label-skew
 * partitioning, shot-group categorization, distribution-matched local test
 * sets, and CSV ingestion of external embeddings/prototypes.
 *
 * Every generator is a pure function of (parameters, seed).
 */

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "purefed/model.hpp"
#include "purefed/types.hpp"

namespace purefed::data {

/// Raised on malformed ingest files; message carries path and line number.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LabeledFeatureSet {
  Mat features;                    // N x d
  std::vector<int> labels;         // N entries in [0, C)
  std::vector<long> class_counts;  // length C, consistent with labels

  long size() const { return static_cast<long>(labels.size()); }
  int dim() const { return static_cast<int>(features.cols()); }
  int classes() const { return static_cast<int>(class_counts.size()); }
};

struct PartitionPlan {
  std::vector<int> assignment;                        // length N, client ids
  std::vector<std::vector<long>> per_client_counts;   // K x C
  std::uint64_t seed = 0;

  int clients() const { return static_cast<int>(per_client_counts.size()); }
};

struct ShotGroups {
  static constexpr long kManyThreshold = 100;  // many: count > 100
  static constexpr long kFewThreshold = 20;    // few: count < 20

  std::vector<int> many;
  std::vector<int> medium;
  std::vector<int> few;
};

struct SynthDataset {
  LabeledFeatureSet train;
  LabeledFeatureSet balanced_test;
  Mat class_means;  // C x d
};

struct LocalTestSet {
  LabeledFeatureSet set;
  bool empty_shard = false;  // client had no training samples
};

struct IngestResult {
  LabeledFeatureSet set;
  std::vector<std::string> warnings;  // e.g. classes with zero samples
};

/// n_c = max(1, round(n1 * IF^{-(c-1)/(C-1)})), non-increasing.
std::vector<long> longtail_counts(long n1, int classes, double imbalance_factor);

/// Gaussian clusters: unit-norm random mean directions scaled by class_sep,
/// unit-variance isotropic noise. Balanced test has test_per_class per class.
SynthDataset synth_dataset(const std::vector<long>& counts, int dim, double class_sep,
                           std::uint64_t seed, long test_per_class = 100);

/// Prototypes = normalize(class_mean + nu * standard normal vector).
model::ZeroShotHead synth_zero_shot_head(const Mat& class_means, double nu,
                                         double logit_scale, std::uint64_t seed);

/// Per-class Dirichlet(alpha_dir) proportions, multinomial assignment.
/// Column sums of per_client_counts equal the global class counts exactly.
PartitionPlan dirichlet_partition(const LabeledFeatureSet& train, int clients,
                                  double alpha_dir, std::uint64_t seed);

ShotGroups shot_categories(const std::vector<long>& class_counts);

/// Local test sets matching each client's training class proportions
/// (largest-remainder rounding to local_test_size samples, sampled from the
/// balanced test pool, with replacement once a class pool is exhausted).
std::vector<LocalTestSet> make_local_test_sets(const LabeledFeatureSet& balanced_test,
                                               const PartitionPlan& plan,
                                               std::uint64_t seed,
                                               long local_test_size = 200);

/// CSV with header "label,f0,...,f{d-1}"; labels must lie in [0, num_classes).
IngestResult load_embeddings(const std::string& path, int num_classes);

/// CSV with header "class,f0,...,f{d-1}", row r carrying class id r.
model::ZeroShotHead load_prototypes(const std::string& path, double logit_scale);

void write_embeddings(const LabeledFeatureSet& set, const std::string& path);
void write_prototypes(const Mat& prototypes, const std::string& path);

/// Per-client sample indices (ascending) backed by the plan's assignment.
std::vector<std::vector<int>> shard_indices(const PartitionPlan& plan);

}  // namespace purefed::data
