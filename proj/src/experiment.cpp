#include "purefed/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "purefed/federation.hpp"
#include "purefed/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace purefed::cli {

namespace {

struct BuiltData {
  data::LabeledFeatureSet train;
  data::LabeledFeatureSet balanced_test;
  model::ZeroShotHead head;
  std::vector<std::string> warnings;
};

BuiltData build_data(const ExperimentConfig& cfg) {
  BuiltData b;
  if (cfg.ingest_mode()) {
    b.head = data::load_prototypes(cfg.ingest_prototypes, cfg.logit_scale);
    const int classes = b.head.classes();
    auto train = data::load_embeddings(cfg.ingest_embeddings, classes);
    auto test = data::load_embeddings(cfg.ingest_test, classes);
    if (train.set.dim() != b.head.dim() || test.set.dim() != b.head.dim()) {
      throw ConfigError("ingest: feature dimensions differ across files");
    }
    for (auto& w : train.warnings) b.warnings.push_back("train: " + w);
    for (auto& w : test.warnings) b.warnings.push_back("test: " + w);
    b.train = std::move(train.set);
    b.balanced_test = std::move(test.set);
  } else {
    const auto counts = data::longtail_counts(cfg.n1, cfg.classes, cfg.imbalance_factor);
    auto ds = data::synth_dataset(counts, cfg.dim, cfg.class_sep, cfg.resolved_seed_data(),
                                  cfg.test_per_class);
    b.head = data::synth_zero_shot_head(ds.class_means, cfg.nu, cfg.logit_scale,
                                        rng::derive(cfg.resolved_seed_data(), 3));
    b.train = std::move(ds.train);
    b.balanced_test = std::move(ds.balanced_test);
  }
  return b;
}

data::LabeledFeatureSet pinned_eval_subset(const data::LabeledFeatureSet& test,
                                           long max_samples, std::uint64_t seed) {
  if (test.size() <= max_samples) return test;
  std::vector<int> rows(static_cast<std::size_t>(test.size()));
  std::iota(rows.begin(), rows.end(), 0);
  rng::Engine eng(seed);
  eng.shuffle(rows);
  rows.resize(static_cast<std::size_t>(max_samples));
  std::sort(rows.begin(), rows.end());

  data::LabeledFeatureSet subset;
  subset.features.resize(max_samples, test.dim());
  subset.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    subset.features.row(static_cast<long>(i)) = test.features.row(rows[i]);
    subset.labels.push_back(test.labels[static_cast<std::size_t>(rows[i])]);
  }
  subset.class_counts.assign(static_cast<std::size_t>(test.classes()), 0);
  for (const int y : subset.labels) ++subset.class_counts[static_cast<std::size_t>(y)];
  return subset;
}

std::optional<double> mean_of_present(const std::vector<std::optional<double>>& values) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Balancedness restricted to the classes present in the test set.
std::optional<double> present_class_balancedness(const Vec& per_class,
                                                 const std::vector<long>& counts,
                                                 double sigma) {
  std::vector<double> present;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] > 0) present.push_back(per_class[static_cast<Eigen::Index>(c)]);
  }
  if (present.empty()) return std::nullopt;
  Vec v = Eigen::Map<Vec>(present.data(), static_cast<Eigen::Index>(present.size()));
  return divergence::balancedness(v, divergence::BalancednessConfig{sigma});
}

ordered_json json_opt(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

ordered_json json_groups(const analysis::GroupAccuracy& g) {
  ordered_json j;
  j["all"] = json_opt(g.all);
  j["many"] = json_opt(g.many);
  j["medium"] = json_opt(g.medium);
  j["few"] = json_opt(g.few);
  return j;
}

std::string fmt6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string csv_opt(const std::optional<double>& v) { return v ? fmt6(*v) : ""; }

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(fs::path(cfg.out) / "params");

  BuiltData built = build_data(cfg);
  const data::LabeledFeatureSet& train = built.train;
  const data::LabeledFeatureSet& test = built.balanced_test;
  const model::ZeroShotHead& head = built.head;

  const data::PartitionPlan plan = data::dirichlet_partition(
      train, cfg.clients, cfg.alpha_dir, cfg.resolved_seed_partition());
  const std::vector<federation::Shard> shards = federation::build_shards(train, plan);
  const auto local_tests = data::make_local_test_sets(
      test, plan, rng::derive(cfg.resolved_seed_partition(), 1), cfg.local_test_size);
  const data::ShotGroups groups = data::shot_categories(train.class_counts);
  const data::LabeledFeatureSet eval_subset =
      pinned_eval_subset(test, cfg.tkl_eval_samples, cfg.resolved_seed_eval());

  for (std::size_t k = 0; k < local_tests.size(); ++k) {
    if (local_tests[k].empty_shard) {
      built.warnings.push_back("client " + std::to_string(k) +
                               " has an empty shard and an empty local test set");
    }
  }

  const federation::FedConfig fed = cfg.fed_config();
  const divergence::BalancednessConfig bal{cfg.sigma};

  ExperimentResult result;
  result.summary.arm = cfg.arm_name();
  result.summary.seed = cfg.seed;
  int aborted_total = 0;

  const federation::RoundHook hook = [&](int t, const model::PeftDelta& phi_g,
                                         const federation::RoundStats& stats) {
    analysis::RoundRecord rec;
    rec.round = t;
    const Vec acc = analysis::per_class_accuracy(
        [&](const Vec& x) { return federation::predict_gm(x, head, phi_g); }, test);
    rec.gm = analysis::grouped_accuracy(acc, groups, test.class_counts);
    rec.gm_balancedness = divergence::balancedness(acc, bal);
    const auto traj = analysis::tkl_trajectory(head, phi_g, eval_subset, fed.bracket);
    rec.mean_tkl = traj.mean_tkl;
    rec.mean_kl = traj.mean_kl;
    rec.mean_drift = stats.mean_drift;
    rec.max_drift = stats.max_drift;
    rec.mean_grad_angle_deg = stats.mean_angle_deg;
    rec.purify_fire_rate = stats.purify_fire_rate;
    aborted_total += stats.aborted_clients;
    result.records.push_back(std::move(rec));
  };

  const model::PeftDelta phi_g = federation::run_phase1(fed, shards, head, hook);
  result.summary.aborted_clients_total = aborted_total;

  // local-test GM accuracy (unweighted client mean) for the PM comparison
  {
    std::vector<std::optional<double>> gm_local;
    for (std::size_t k = 0; k < local_tests.size(); ++k) {
      if (local_tests[k].set.size() == 0) continue;
      const Vec acc = analysis::per_class_accuracy(
          [&](const Vec& x) { return federation::predict_gm(x, head, phi_g); },
          local_tests[k].set);
      gm_local.push_back(analysis::grouped_accuracy(acc, groups,
                                                    local_tests[k].set.class_counts)
                             .all);
    }
    result.summary.gm_local_mean_acc = mean_of_present(gm_local);
  }

  std::vector<model::PeftDelta> personal;
  if (cfg.residual) {
    auto phase2 = federation::run_phase2(fed, shards, head, phi_g);
    personal = std::move(phase2.personal);
    result.summary.phase2_failed_clients = phase2.failed_clients;
    for (const int k : phase2.failed_clients) {
      built.warnings.push_back("client " + std::to_string(k) +
                               " failed phase 2; personal delta reset to zeros");
    }

    std::vector<std::optional<double>> pm_all, pm_many, pm_medium, pm_few, pm_bal, pm_local;
    analysis::AttributionProfile attribution;
    for (std::size_t k = 0; k < local_tests.size(); ++k) {
      if (local_tests[k].set.size() == 0) continue;
      const auto& phi_k = personal[k];
      const Vec acc = analysis::per_class_accuracy(
          [&](const Vec& x) { return federation::predict_pm(x, head, phi_g, phi_k); },
          local_tests[k].set);
      const auto grouped =
          analysis::grouped_accuracy(acc, groups, local_tests[k].set.class_counts);
      pm_all.push_back(grouped.all);
      pm_many.push_back(grouped.many);
      pm_medium.push_back(grouped.medium);
      pm_few.push_back(grouped.few);
      pm_local.push_back(grouped.all);
      pm_bal.push_back(present_class_balancedness(acc, local_tests[k].set.class_counts,
                                                  cfg.sigma));
      attribution.merge(
          analysis::branch_attribution(head, phi_g, phi_k, local_tests[k].set));
    }

    analysis::GroupAccuracy pm;
    pm.all = mean_of_present(pm_all);
    pm.many = mean_of_present(pm_many);
    pm.medium = mean_of_present(pm_medium);
    pm.few = mean_of_present(pm_few);
    result.summary.final_pm = pm;
    result.summary.final_pm_balancedness = mean_of_present(pm_bal);
    result.summary.pm_local_mean_acc = mean_of_present(pm_local);
    if (!attribution.correct.empty()) {
      result.summary.attribution_personal_many = attribution.group_personal_share(groups.many);
      result.summary.attribution_personal_medium =
          attribution.group_personal_share(groups.medium);
      result.summary.attribution_personal_few = attribution.group_personal_share(groups.few);
    }

    // the final round record carries the personalized metrics
    result.records.back().pm = pm;
    result.records.back().pm_balancedness = result.summary.final_pm_balancedness;
  }

  const auto& first = result.records.front();
  const auto& last = result.records.back();
  result.summary.zero_shot_gm = first.gm;
  result.summary.zero_shot_balancedness = first.gm_balancedness;
  result.summary.final_gm = last.gm;
  result.summary.final_gm_balancedness = last.gm_balancedness;
  result.summary.final_mean_tkl = last.mean_tkl;
  result.summary.final_mean_kl = last.mean_kl;
  {
    std::vector<std::optional<double>> drifts, fires;
    for (const auto& r : result.records) {
      drifts.push_back(r.mean_drift);
      fires.push_back(r.purify_fire_rate);
    }
    result.summary.mean_drift = mean_of_present(drifts);
    result.summary.mean_fire_rate = mean_of_present(fires);
  }

  // artifacts
  write_resolved_config(cfg, (fs::path(cfg.out) / "resolved_config.ini").string());
  analysis::emit_records(result.records, (fs::path(cfg.out) / "metrics.jsonl").string(),
                         (fs::path(cfg.out) / "metrics.csv").string());
  data::write_prototypes(head.prototypes,
                         (fs::path(cfg.out) / "params" / "prototypes.csv").string());
  data::write_prototypes(phi_g.delta, (fs::path(cfg.out) / "params" / "phi_g.csv").string());
  for (std::size_t k = 0; k < personal.size(); ++k) {
    data::write_prototypes(
        personal[k].delta,
        (fs::path(cfg.out) / "params" / ("phi_k_" + std::to_string(k) + ".csv")).string());
  }

  ordered_json j;
  j["arm"] = result.summary.arm;
  j["seed"] = result.summary.seed;
  j["zero_shot"] = {{"gm", json_groups(result.summary.zero_shot_gm)},
                    {"balancedness", result.summary.zero_shot_balancedness}};
  j["final_gm"] = json_groups(result.summary.final_gm);
  j["final_gm_balancedness"] = result.summary.final_gm_balancedness;
  j["final_pm"] = cfg.residual ? json_groups(result.summary.final_pm) : ordered_json(nullptr);
  j["final_pm_balancedness"] = json_opt(result.summary.final_pm_balancedness);
  j["gm_local_mean_acc"] = json_opt(result.summary.gm_local_mean_acc);
  j["pm_local_mean_acc"] = json_opt(result.summary.pm_local_mean_acc);
  j["final_mean_tkl"] = result.summary.final_mean_tkl;
  j["final_mean_kl"] = result.summary.final_mean_kl;
  j["mean_drift"] = json_opt(result.summary.mean_drift);
  j["mean_purify_fire_rate"] = json_opt(result.summary.mean_fire_rate);
  j["attribution_personal_share"] = {
      {"many", json_opt(result.summary.attribution_personal_many)},
      {"medium", json_opt(result.summary.attribution_personal_medium)},
      {"few", json_opt(result.summary.attribution_personal_few)}};
  j["aborted_clients_total"] = result.summary.aborted_clients_total;
  j["phase2_failed_clients"] = result.summary.phase2_failed_clients;
  j["warnings"] = built.warnings;
  std::ofstream summary_out(fs::path(cfg.out) / "summary.json");
  if (!summary_out) throw std::runtime_error("experiment: cannot write summary.json");
  summary_out << j.dump(2) << "\n";

  return result;
}

std::vector<SuiteRow> run_suite(const ExperimentConfig& base,
                                const std::vector<std::string>& arms,
                                const std::vector<std::uint64_t>& seeds) {
  fs::create_directories(base.out);
  std::vector<SuiteRow> rows;
  for (const auto& arm : arms) {
    for (const auto seed : seeds) {
      ExperimentConfig cfg = base;
      apply_arm(cfg, arm);
      cfg.seed = seed;
      cfg.seed_data.reset();
      cfg.seed_partition.reset();
      cfg.seed_selection.reset();
      cfg.seed_shuffle.reset();
      cfg.seed_eval.reset();
      cfg.out = (fs::path(base.out) / (cfg.arm_name() + "-s" + std::to_string(seed))).string();

      SuiteRow row;
      row.arm = cfg.arm_name();
      row.seed = seed;
      try {
        row.summary = run_experiment(cfg).summary;
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
      rows.push_back(std::move(row));
    }
  }

  const std::string csv_path = (fs::path(base.out) / "suite.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("suite: cannot write " + csv_path);
  csv << "arm,seed,status,gm_all,gm_many,gm_medium,gm_few,pm_all,pm_many,pm_medium,pm_few,"
         "final_gm_balancedness,mean_drift\n";
  for (const auto& row : rows) {
    csv << row.arm << ',' << row.seed << ',' << (row.ok ? "ok" : "failed") << ',';
    if (row.ok) {
      const auto& s = row.summary;
      csv << csv_opt(s.final_gm.all) << ',' << csv_opt(s.final_gm.many) << ','
          << csv_opt(s.final_gm.medium) << ',' << csv_opt(s.final_gm.few) << ','
          << csv_opt(s.final_pm.all) << ',' << csv_opt(s.final_pm.many) << ','
          << csv_opt(s.final_pm.medium) << ',' << csv_opt(s.final_pm.few) << ','
          << fmt6(s.final_gm_balancedness) << ',' << csv_opt(s.mean_drift);
    } else {
      csv << ",,,,,,,,,";
    }
    csv << "\n";
  }
  if (!csv) throw std::runtime_error("suite: write failed for " + csv_path);
  return rows;
}

}  // namespace purefed::cli
