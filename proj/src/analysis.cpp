#include "purefed/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace purefed::analysis {

Vec per_class_accuracy(const Predictor& predict, const data::LabeledFeatureSet& testset,
                       std::vector<int>* missing_classes) {
  if (testset.size() == 0) throw std::domain_error("per_class_accuracy: empty test set");
  const int classes = testset.classes();
  std::vector<long> correct(static_cast<std::size_t>(classes), 0);
  for (long i = 0; i < testset.size(); ++i) {
    const int y = testset.labels[static_cast<std::size_t>(i)];
    if (predict(testset.features.row(i).transpose()) == y) {
      ++correct[static_cast<std::size_t>(y)];
    }
  }
  Vec acc = Vec::Zero(classes);
  for (int c = 0; c < classes; ++c) {
    const long n = testset.class_counts[static_cast<std::size_t>(c)];
    if (n == 0) {
      if (missing_classes) missing_classes->push_back(c);
      continue;  // accuracy 0 for classes without test samples
    }
    acc[c] = static_cast<double>(correct[static_cast<std::size_t>(c)]) /
             static_cast<double>(n);
  }
  return acc;
}

namespace {

std::optional<double> weighted_group_accuracy(const Vec& per_class,
                                              const std::vector<int>& group,
                                              const std::vector<long>& counts) {
  long total = 0;
  double hits = 0.0;
  for (const int c : group) {
    const long n = counts[static_cast<std::size_t>(c)];
    total += n;
    hits += per_class[c] * static_cast<double>(n);
  }
  if (total == 0) return std::nullopt;
  return hits / static_cast<double>(total);
}

}  // namespace

GroupAccuracy grouped_accuracy(const Vec& per_class, const data::ShotGroups& groups,
                               const std::vector<long>& per_class_test_counts) {
  if (per_class.size() != static_cast<Eigen::Index>(per_class_test_counts.size())) {
    throw std::domain_error("grouped_accuracy: size mismatch");
  }
  GroupAccuracy out;
  std::vector<int> all(static_cast<std::size_t>(per_class.size()));
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = static_cast<int>(c);
  out.all = weighted_group_accuracy(per_class, all, per_class_test_counts);
  out.many = weighted_group_accuracy(per_class, groups.many, per_class_test_counts);
  out.medium = weighted_group_accuracy(per_class, groups.medium, per_class_test_counts);
  out.few = weighted_group_accuracy(per_class, groups.few, per_class_test_counts);
  return out;
}

double client_drift(const model::PeftDelta& phi_local, const model::PeftDelta& phi_global) {
  if (phi_local.delta.rows() != phi_global.delta.rows() ||
      phi_local.delta.cols() != phi_global.delta.cols()) {
    throw std::domain_error("client_drift: shape mismatch");
  }
  return (phi_local.delta - phi_global.delta).norm();
}

std::optional<double> gradient_angle(const model::GradientPair& pair) {
  const double nt = pair.g_task.norm();
  const double na = pair.g_align.norm();
  if (nt <= 1e-12 || na <= 1e-12) return std::nullopt;
  const double cosine = std::clamp(pair.inner_product / (nt * na), -1.0, 1.0);
  return std::acos(cosine) * 180.0 / 3.14159265358979323846;
}

void AttributionProfile::merge(const AttributionProfile& other) {
  if (correct.empty()) {
    correct = other.correct;
    personal_attributed = other.personal_attributed;
    return;
  }
  if (correct.size() != other.correct.size()) {
    throw std::domain_error("attribution: class-count mismatch in merge");
  }
  for (std::size_t c = 0; c < correct.size(); ++c) {
    correct[c] += other.correct[c];
    personal_attributed[c] += other.personal_attributed[c];
  }
}

std::optional<double> AttributionProfile::personal_share(int c) const {
  const long n = correct[static_cast<std::size_t>(c)];
  if (n == 0) return std::nullopt;
  return static_cast<double>(personal_attributed[static_cast<std::size_t>(c)]) /
         static_cast<double>(n);
}

std::optional<double> AttributionProfile::global_share(int c) const {
  const auto p = personal_share(c);
  if (!p) return std::nullopt;
  return 1.0 - *p;
}

std::optional<double> AttributionProfile::group_personal_share(
    const std::vector<int>& group) const {
  double sum = 0.0;
  int with_hits = 0;
  for (const int c : group) {
    if (const auto share = personal_share(c)) {
      sum += *share;
      ++with_hits;
    }
  }
  if (with_hits == 0) return std::nullopt;
  return sum / static_cast<double>(with_hits);
}

AttributionProfile branch_attribution(const model::ZeroShotHead& head,
                                      const model::PeftDelta& phi_g,
                                      const model::PeftDelta& phi_k,
                                      const data::LabeledFeatureSet& local_test) {
  const int classes = head.classes();
  AttributionProfile profile;
  profile.correct.assign(static_cast<std::size_t>(classes), 0);
  profile.personal_attributed.assign(static_cast<std::size_t>(classes), 0);
  for (long i = 0; i < local_test.size(); ++i) {
    const Vec x = local_test.features.row(i).transpose();
    const int y = local_test.labels[static_cast<std::size_t>(i)];
    const Vec lg = model::finetuned_logits(x, head, phi_g);
    const Vec lp = model::finetuned_logits(x, head, phi_k);
    if (model::argmax_lowest(lg + lp) != y) continue;
    ++profile.correct[static_cast<std::size_t>(y)];
    if (!(lg[y] > lp[y])) {  // ties go to the personal branch
      ++profile.personal_attributed[static_cast<std::size_t>(y)];
    }
  }
  return profile;
}

TrajectoryStats tkl_trajectory(const model::ZeroShotHead& head, const model::PeftDelta& phi_g,
                               const data::LabeledFeatureSet& eval_set,
                               const divergence::TemperatureBracket& bracket) {
  if (eval_set.size() == 0) throw std::domain_error("tkl_trajectory: empty evaluation set");
  TrajectoryStats stats;
  for (long i = 0; i < eval_set.size(); ++i) {
    const Vec x = eval_set.features.row(i).transpose();
    const Vec f = model::finetuned_logits(x, head, phi_g);
    const Vec z = model::zero_shot_logits(x, head);
    stats.mean_tkl += divergence::tkl(f, z, bracket).value;
    stats.mean_kl += divergence::kl_divergence(divergence::temperature_softmax(f, 1.0),
                                               divergence::temperature_softmax(z, 1.0));
  }
  stats.mean_tkl /= static_cast<double>(eval_set.size());
  stats.mean_kl /= static_cast<double>(eval_set.size());
  return stats;
}

namespace {

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string json_value(const std::optional<double>& v) {
  return v ? fmt_double(*v) : "null";
}

std::string csv_value(const std::optional<double>& v) {
  return v ? fmt_double(*v) : "";
}

}  // namespace

void emit_records(const std::vector<RoundRecord>& records, const std::string& jsonl_path,
                  const std::string& csv_path) {
  std::ofstream jsonl(jsonl_path);
  if (!jsonl) throw std::runtime_error("emit_records: cannot write " + jsonl_path);
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("emit_records: cannot write " + csv_path);

  csv << "round,gm_all,gm_many,gm_medium,gm_few,pm_all,pm_many,pm_medium,pm_few,"
         "gm_balancedness,pm_balancedness,mean_tkl,mean_kl,mean_drift,max_drift,"
         "mean_grad_angle_deg,purify_fire_rate\n";

  for (const auto& r : records) {
    jsonl << "{\"round\":" << r.round
          << ",\"gm_all\":" << json_value(r.gm.all)
          << ",\"gm_many\":" << json_value(r.gm.many)
          << ",\"gm_medium\":" << json_value(r.gm.medium)
          << ",\"gm_few\":" << json_value(r.gm.few)
          << ",\"pm_all\":" << json_value(r.pm.all)
          << ",\"pm_many\":" << json_value(r.pm.many)
          << ",\"pm_medium\":" << json_value(r.pm.medium)
          << ",\"pm_few\":" << json_value(r.pm.few)
          << ",\"gm_balancedness\":" << fmt_double(r.gm_balancedness)
          << ",\"pm_balancedness\":" << json_value(r.pm_balancedness)
          << ",\"mean_tkl\":" << fmt_double(r.mean_tkl)
          << ",\"mean_kl\":" << fmt_double(r.mean_kl)
          << ",\"mean_drift\":" << json_value(r.mean_drift)
          << ",\"max_drift\":" << json_value(r.max_drift)
          << ",\"mean_grad_angle_deg\":" << json_value(r.mean_grad_angle_deg)
          << ",\"purify_fire_rate\":" << json_value(r.purify_fire_rate) << "}\n";

    csv << r.round << ',' << csv_value(r.gm.all) << ',' << csv_value(r.gm.many) << ','
        << csv_value(r.gm.medium) << ',' << csv_value(r.gm.few) << ','
        << csv_value(r.pm.all) << ',' << csv_value(r.pm.many) << ','
        << csv_value(r.pm.medium) << ',' << csv_value(r.pm.few) << ','
        << fmt_double(r.gm_balancedness) << ',' << csv_value(r.pm_balancedness) << ','
        << fmt_double(r.mean_tkl) << ',' << fmt_double(r.mean_kl) << ','
        << csv_value(r.mean_drift) << ',' << csv_value(r.max_drift) << ','
        << csv_value(r.mean_grad_angle_deg) << ',' << csv_value(r.purify_fire_rate)
        << "\n";
  }
  if (!jsonl) throw std::runtime_error("emit_records: write failed for " + jsonl_path);
  if (!csv) throw std::runtime_error("emit_records: write failed for " + csv_path);
}

}  // namespace purefed::analysis
