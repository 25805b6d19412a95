#pragma once

/**
 * Two-phase federated orchestration.
 *
 * Phase 1: per round, a selected subset of clients trains the shared delta
 * with cross-entropy gradients, optionally purified against the zero-shot
 * alignment gradient, then the server aggregates by shard size.
 * Phase 2: every client trains a private residual delta against the frozen
 * global delta with the composite fusion/personal loss. No server exchange.
 *
 * Clients own parameter copies; results are reduced in ascending client-id
 * order so runs are bit-identical for any worker count.
 */

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "purefed/data.hpp"
#include "purefed/model.hpp"

namespace purefed::federation {

struct FedConfig {
  int clients = 20;
  int rounds = 100;          // T
  double fraction = 0.4;     // participating fraction per round
  int local_epochs = 1;
  int batch_size = 32;
  double lr_phase1 = 0.01;
  double lr_phase2 = 0.01;
  int personal_rounds = 20;  // T_p, local passes in phase 2
  double lambda = 0.9;       // personal-loss weight
  bool purify = true;
  bool residual = true;
  int workers = 1;
  std::uint64_t selection_seed = 0;
  std::uint64_t shuffle_seed = 0;
  divergence::TemperatureBracket bracket{};

  void validate() const;
  int participants_per_round() const;
};

struct RoundPlan {
  int round = 0;
  std::vector<int> selected;  // ascending client ids
};

/// One client's training-loop diagnostics for a single round.
struct StepDiagnostics {
  std::vector<double> inner_products;  // one per optimizer step
  std::vector<double> angles_deg;      // defined angles only
  int steps = 0;
  int purified_steps = 0;
  bool aborted = false;
};

/// A view of one client's training samples.
struct Shard {
  const data::LabeledFeatureSet* train = nullptr;
  std::vector<int> indices;  // rows of train->features, ascending

  long size() const { return static_cast<long>(indices.size()); }
};

std::vector<Shard> build_shards(const data::LabeledFeatureSet& train,
                                const data::PartitionPlan& plan);

/// Training-side aggregates for one round, fed to the evaluation hook.
struct RoundStats {
  std::optional<double> mean_drift;
  std::optional<double> max_drift;
  std::optional<double> mean_angle_deg;
  std::optional<double> purify_fire_rate;
  int aborted_clients = 0;
};

RoundPlan select_clients(const FedConfig& cfg, int t);

/// One client's phase-1 pass over its shard. Returns the updated delta;
/// a non-finite gradient marks the diagnostics aborted and returns the
/// received delta unchanged.
model::PeftDelta local_train_phase1(const Shard& shard, model::PeftDelta phi,
                                    const model::ZeroShotHead& head, const FedConfig& cfg,
                                    int client_id, int round, StepDiagnostics& diag);

/// Shard-size weighted average, reduced in ascending client-id order.
model::PeftDelta aggregate(const std::vector<std::pair<model::PeftDelta, long>>& updates);

/// Called with t = 0 before training (round-0 state) and after each round.
using RoundHook = std::function<void(int t, const model::PeftDelta& phi_g,
                                     const RoundStats& stats)>;

model::PeftDelta run_phase1(const FedConfig& cfg, const std::vector<Shard>& shards,
                            const model::ZeroShotHead& head, const RoundHook& hook = {});

struct Phase2Result {
  std::vector<model::PeftDelta> personal;  // indexed by client id
  std::vector<int> failed_clients;
};

/// Residual personalization on every client; phi_g is read-only throughout.
Phase2Result run_phase2(const FedConfig& cfg, const std::vector<Shard>& shards,
                        const model::ZeroShotHead& head, const model::PeftDelta& phi_g);

/// Argmax predictions; exact ties resolve to the lowest class id.
int predict_gm(const Vec& x, const model::ZeroShotHead& head, const model::PeftDelta& phi_g);
int predict_pm(const Vec& x, const model::ZeroShotHead& head, const model::PeftDelta& phi_g,
               const model::PeftDelta& phi_k);

}  // namespace purefed::federation
