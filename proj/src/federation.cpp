#include "purefed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "purefed/analysis.hpp"
#include "purefed/rng.hpp"

namespace purefed::federation {

namespace {

// stream tags for per-(client, round) batch shuffling
constexpr std::uint64_t kPhase1ShuffleTag = 1;
constexpr std::uint64_t kPhase2ShuffleTag = 2;

template <typename Fn>
void parallel_over(int n, int workers, Fn&& fn) {
  const int threads = std::max(1, std::min(workers, n));
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i; (i = next.fetch_add(1)) < n;) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<std::vector<int>> epoch_batches(rng::Engine& eng, long shard_size,
                                            int batch_size) {
  std::vector<int> perm(static_cast<std::size_t>(shard_size));
  std::iota(perm.begin(), perm.end(), 0);
  eng.shuffle(perm);
  std::vector<std::vector<int>> batches;
  for (long start = 0; start < shard_size; start += batch_size) {
    const long end = std::min(shard_size, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

}  // namespace

void FedConfig::validate() const {
  if (clients < 1) throw std::domain_error("config: clients must be >= 1");
  if (rounds < 0) throw std::domain_error("config: rounds must be >= 0");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::domain_error("config: fraction must lie in (0, 1]");
  }
  if (local_epochs < 0) throw std::domain_error("config: local_epochs must be >= 0");
  if (batch_size < 1) throw std::domain_error("config: batch_size must be >= 1");
  if (!(lr_phase1 > 0.0) || !(lr_phase2 > 0.0)) {
    throw std::domain_error("config: learning rates must be > 0");
  }
  if (personal_rounds < 0) throw std::domain_error("config: personal_rounds must be >= 0");
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::domain_error("config: lambda must lie in [0, 1]");
  }
  if (workers < 1) throw std::domain_error("config: workers must be >= 1");
}

int FedConfig::participants_per_round() const {
  const long m = std::lround(fraction * static_cast<double>(clients));
  return static_cast<int>(std::max<long>(1, std::min<long>(m, clients)));
}

std::vector<Shard> build_shards(const data::LabeledFeatureSet& train,
                                const data::PartitionPlan& plan) {
  auto idx = data::shard_indices(plan);
  std::vector<Shard> shards(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    shards[k].train = &train;
    shards[k].indices = std::move(idx[k]);
  }
  return shards;
}

RoundPlan select_clients(const FedConfig& cfg, int t) {
  if (t < 0 || t >= std::max(1, cfg.rounds)) {
    throw std::domain_error("select_clients: round index out of range");
  }
  RoundPlan plan;
  plan.round = t;
  std::vector<int> ids(static_cast<std::size_t>(cfg.clients));
  std::iota(ids.begin(), ids.end(), 0);
  rng::Engine eng(rng::derive(cfg.selection_seed, static_cast<std::uint64_t>(t)));
  eng.shuffle(ids);
  const int m = cfg.participants_per_round();
  plan.selected.assign(ids.begin(), ids.begin() + m);
  std::sort(plan.selected.begin(), plan.selected.end());
  return plan;
}

model::PeftDelta local_train_phase1(const Shard& shard, model::PeftDelta phi,
                                    const model::ZeroShotHead& head, const FedConfig& cfg,
                                    int client_id, int round, StepDiagnostics& diag) {
  diag = StepDiagnostics{};
  if (shard.size() == 0 || cfg.local_epochs == 0) return phi;

  rng::Engine eng(rng::derive(cfg.shuffle_seed, kPhase1ShuffleTag,
                              static_cast<std::uint64_t>(client_id),
                              static_cast<std::uint64_t>(round)));
  const int classes = head.classes();
  const int dim = head.dim();

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    for (const auto& batch : epoch_batches(eng, shard.size(), cfg.batch_size)) {
      Mat g_task = Mat::Zero(classes, dim);
      Mat g_align = Mat::Zero(classes, dim);
      for (const int pos : batch) {
        const int row = shard.indices[static_cast<std::size_t>(pos)];
        const Vec x = shard.train->features.row(row).transpose();
        const int y = shard.train->labels[static_cast<std::size_t>(row)];
        g_task += model::ce_loss_and_grad(x, y, head, phi).grad;
        g_align += model::tkl_loss_and_grad(x, head, phi, cfg.bracket).grad;
      }
      const double inv = 1.0 / static_cast<double>(batch.size());
      g_task *= inv;
      g_align *= inv;

      model::GradientPair pair(std::move(g_task), std::move(g_align));
      diag.inner_products.push_back(pair.inner_product);
      if (const auto angle = analysis::gradient_angle(pair)) {
        diag.angles_deg.push_back(*angle);
      }

      const Mat applied = cfg.purify ? model::purify(pair) : pair.g_task;
      ++diag.steps;
      if (pair.purified) ++diag.purified_steps;

      try {
        model::sgd_step(phi, applied, cfg.lr_phase1);
      } catch (const model::StepError&) {
        diag.aborted = true;
        return phi;
      }
    }
  }
  return phi;
}

model::PeftDelta aggregate(const std::vector<std::pair<model::PeftDelta, long>>& updates) {
  if (updates.empty()) throw std::runtime_error("aggregate: no client updates");
  long total = 0;
  for (const auto& [phi, n] : updates) {
    if (n < 0) throw std::domain_error("aggregate: negative sample count");
    if (phi.delta.rows() != updates.front().first.delta.rows() ||
        phi.delta.cols() != updates.front().first.delta.cols()) {
      throw std::domain_error("aggregate: inconsistent delta shapes");
    }
    total += n;
  }
  if (total == 0) throw std::runtime_error("aggregate: all sample counts are zero");

  model::PeftDelta out = model::PeftDelta::zeros(
      static_cast<int>(updates.front().first.delta.rows()),
      static_cast<int>(updates.front().first.delta.cols()), model::DeltaRole::Global);
  for (const auto& [phi, n] : updates) {
    const double w = static_cast<double>(n) / static_cast<double>(total);
    out.delta += w * phi.delta;
  }
  return out;
}

model::PeftDelta run_phase1(const FedConfig& cfg, const std::vector<Shard>& shards,
                            const model::ZeroShotHead& head, const RoundHook& hook) {
  cfg.validate();
  if (static_cast<int>(shards.size()) != cfg.clients) {
    throw std::domain_error("run_phase1: shard count does not match client count");
  }
  model::PeftDelta phi_g = model::PeftDelta::zeros(head.classes(), head.dim());
  if (hook) hook(0, phi_g, RoundStats{});

  for (int t = 0; t < cfg.rounds; ++t) {
    const RoundPlan plan = select_clients(cfg, t);
    const int m = static_cast<int>(plan.selected.size());

    struct Slot {
      model::PeftDelta phi{Mat(), model::DeltaRole::Global, -1};
      StepDiagnostics diag;
      double drift = 0.0;
    };
    std::vector<Slot> slots(static_cast<std::size_t>(m));
    parallel_over(m, cfg.workers, [&](int i) {
      const int k = plan.selected[static_cast<std::size_t>(i)];
      auto& slot = slots[static_cast<std::size_t>(i)];
      slot.phi = local_train_phase1(shards[static_cast<std::size_t>(k)], phi_g, head, cfg, k,
                                    t, slot.diag);
      slot.drift = analysis::client_drift(slot.phi, phi_g);
    });

    std::vector<std::pair<model::PeftDelta, long>> updates;
    RoundStats stats;
    double drift_sum = 0.0;
    double drift_max = 0.0;
    double angle_sum = 0.0;
    long angle_count = 0;
    long steps = 0;
    long fired = 0;
    int survivors = 0;
    for (int i = 0; i < m; ++i) {
      const auto& slot = slots[static_cast<std::size_t>(i)];
      const int k = plan.selected[static_cast<std::size_t>(i)];
      for (const double a : slot.diag.angles_deg) {
        angle_sum += a;
        ++angle_count;
      }
      steps += slot.diag.steps;
      fired += slot.diag.purified_steps;
      if (slot.diag.aborted) {
        ++stats.aborted_clients;
        continue;
      }
      drift_sum += slot.drift;
      drift_max = std::max(drift_max, slot.drift);
      ++survivors;
      updates.emplace_back(slot.phi, shards[static_cast<std::size_t>(k)].size());
    }
    if (survivors == 0) {
      throw std::runtime_error("run_phase1: every client aborted in round " +
                               std::to_string(t));
    }
    phi_g = aggregate(updates);

    stats.mean_drift = drift_sum / static_cast<double>(survivors);
    stats.max_drift = drift_max;
    if (angle_count > 0) stats.mean_angle_deg = angle_sum / static_cast<double>(angle_count);
    if (steps > 0) {
      stats.purify_fire_rate = static_cast<double>(fired) / static_cast<double>(steps);
    }
    if (hook) hook(t + 1, phi_g, stats);
  }
  return phi_g;
}

Phase2Result run_phase2(const FedConfig& cfg, const std::vector<Shard>& shards,
                        const model::ZeroShotHead& head, const model::PeftDelta& phi_g) {
  cfg.validate();
  if (static_cast<int>(shards.size()) != cfg.clients) {
    throw std::domain_error("run_phase2: shard count does not match client count");
  }
  const int classes = head.classes();
  const int dim = head.dim();

  Phase2Result result;
  result.personal.reserve(static_cast<std::size_t>(cfg.clients));
  for (int k = 0; k < cfg.clients; ++k) {
    result.personal.push_back(
        model::PeftDelta::zeros(classes, dim, model::DeltaRole::Personal, k));
  }
  std::vector<char> failed(static_cast<std::size_t>(cfg.clients), 0);

  parallel_over(cfg.clients, cfg.workers, [&](int k) {
    const Shard& shard = shards[static_cast<std::size_t>(k)];
    if (shard.size() == 0) return;
    model::PeftDelta phi_k =
        model::PeftDelta::zeros(classes, dim, model::DeltaRole::Personal, k);
    for (int pass = 0; pass < cfg.personal_rounds; ++pass) {
      rng::Engine eng(rng::derive(cfg.shuffle_seed, kPhase2ShuffleTag,
                                  static_cast<std::uint64_t>(k),
                                  static_cast<std::uint64_t>(pass)));
      for (const auto& batch : epoch_batches(eng, shard.size(), cfg.batch_size)) {
        Mat grad = Mat::Zero(classes, dim);
        for (const int pos : batch) {
          const int row = shard.indices[static_cast<std::size_t>(pos)];
          const Vec x = shard.train->features.row(row).transpose();
          const int y = shard.train->labels[static_cast<std::size_t>(row)];
          grad += model::personalization_loss_and_grad(x, y, head, phi_g, phi_k, cfg.lambda)
                      .grad;
        }
        grad *= 1.0 / static_cast<double>(batch.size());
        try {
          model::sgd_step(phi_k, grad, cfg.lr_phase2);
        } catch (const model::StepError&) {
          failed[static_cast<std::size_t>(k)] = 1;
          return;  // personal delta reverts to zeros below
        }
      }
    }
    result.personal[static_cast<std::size_t>(k)] = std::move(phi_k);
  });

  for (int k = 0; k < cfg.clients; ++k) {
    if (failed[static_cast<std::size_t>(k)]) result.failed_clients.push_back(k);
  }
  return result;
}

int predict_gm(const Vec& x, const model::ZeroShotHead& head, const model::PeftDelta& phi_g) {
  return model::argmax_lowest(model::finetuned_logits(x, head, phi_g));
}

int predict_pm(const Vec& x, const model::ZeroShotHead& head, const model::PeftDelta& phi_g,
               const model::PeftDelta& phi_k) {
  return model::argmax_lowest(model::fused_logits(x, head, phi_g, phi_k));
}

}  // namespace purefed::federation
