#include "purefed/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "purefed/rng.hpp"

namespace purefed::data {

namespace {

std::vector<long> counts_from_labels(const std::vector<int>& labels, int classes) {
  std::vector<long> counts(static_cast<std::size_t>(classes), 0);
  for (const int y : labels) {
    if (y < 0 || y >= classes) throw std::domain_error("data: label out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

Vec standard_normal_vector(rng::Engine& eng, int dim) {
  Vec v(dim);
  for (int j = 0; j < dim; ++j) v[j] = eng.normal();
  return v;
}

}  // namespace

std::vector<long> longtail_counts(long n1, int classes, double imbalance_factor) {
  if (n1 < 1) throw std::domain_error("longtail_counts: n1 must be >= 1");
  if (classes < 2) throw std::domain_error("longtail_counts: need at least 2 classes");
  if (!(imbalance_factor >= 1.0)) {
    throw std::domain_error("longtail_counts: imbalance factor must be >= 1");
  }
  std::vector<long> counts(static_cast<std::size_t>(classes));
  for (int c = 0; c < classes; ++c) {
    const double decay =
        std::pow(imbalance_factor, -static_cast<double>(c) / static_cast<double>(classes - 1));
    const long n = static_cast<long>(std::floor(static_cast<double>(n1) * decay + 0.5));
    counts[static_cast<std::size_t>(c)] = std::max<long>(1, n);
  }
  return counts;
}

SynthDataset synth_dataset(const std::vector<long>& counts, int dim, double class_sep,
                           std::uint64_t seed, long test_per_class) {
  if (dim < 2) throw std::domain_error("synth_dataset: dim must be >= 2");
  if (!(class_sep > 0.0)) throw std::domain_error("synth_dataset: class_sep must be > 0");
  if (counts.empty()) throw std::domain_error("synth_dataset: empty counts");
  if (test_per_class < 1) throw std::domain_error("synth_dataset: test_per_class must be >= 1");
  const int classes = static_cast<int>(counts.size());

  // independent streams so the test set is invariant to the train counts
  rng::Engine mean_eng(rng::derive(seed, 0));
  rng::Engine train_eng(rng::derive(seed, 1));
  rng::Engine test_eng(rng::derive(seed, 2));

  SynthDataset out;
  out.class_means.resize(classes, dim);
  for (int c = 0; c < classes; ++c) {
    Vec dir = standard_normal_vector(mean_eng, dim);
    const double norm = dir.norm();
    dir = norm > 0.0 ? Vec(dir / norm) : Vec(Vec::Unit(dim, 0));
    out.class_means.row(c) = (class_sep * dir).transpose();
  }

  const long train_total = std::accumulate(counts.begin(), counts.end(), 0L);
  out.train.features.resize(train_total, dim);
  out.train.labels.reserve(static_cast<std::size_t>(train_total));
  long row = 0;
  for (int c = 0; c < classes; ++c) {
    for (long i = 0; i < counts[static_cast<std::size_t>(c)]; ++i) {
      out.train.features.row(row) =
          out.class_means.row(c) + standard_normal_vector(train_eng, dim).transpose();
      out.train.labels.push_back(c);
      ++row;
    }
  }
  out.train.class_counts = counts;

  const long test_total = test_per_class * classes;
  out.balanced_test.features.resize(test_total, dim);
  out.balanced_test.labels.reserve(static_cast<std::size_t>(test_total));
  row = 0;
  for (int c = 0; c < classes; ++c) {
    for (long i = 0; i < test_per_class; ++i) {
      out.balanced_test.features.row(row) =
          out.class_means.row(c) + standard_normal_vector(test_eng, dim).transpose();
      out.balanced_test.labels.push_back(c);
      ++row;
    }
  }
  out.balanced_test.class_counts.assign(static_cast<std::size_t>(classes), test_per_class);
  return out;
}

model::ZeroShotHead synth_zero_shot_head(const Mat& class_means, double nu,
                                         double logit_scale, std::uint64_t seed) {
  if (nu < 0.0) throw std::domain_error("synth_zero_shot_head: nu must be >= 0");
  if (!(logit_scale > 0.0)) throw std::domain_error("synth_zero_shot_head: scale must be > 0");
  rng::Engine eng(seed);
  model::ZeroShotHead head;
  head.logit_scale = logit_scale;
  head.prototypes.resize(class_means.rows(), class_means.cols());
  for (Eigen::Index c = 0; c < class_means.rows(); ++c) {
    Vec p = class_means.row(c).transpose() +
            nu * standard_normal_vector(eng, static_cast<int>(class_means.cols()));
    const double norm = p.norm();
    if (norm > 0.0) p /= norm;
    head.prototypes.row(c) = p.transpose();
  }
  return head;
}

PartitionPlan dirichlet_partition(const LabeledFeatureSet& train, int clients,
                                  double alpha_dir, std::uint64_t seed) {
  if (clients < 1) throw std::domain_error("dirichlet_partition: need at least 1 client");
  if (!(alpha_dir > 0.0)) throw std::domain_error("dirichlet_partition: alpha must be > 0");
  const int classes = train.classes();

  PartitionPlan plan;
  plan.seed = seed;
  plan.assignment.assign(static_cast<std::size_t>(train.size()), 0);
  plan.per_client_counts.assign(static_cast<std::size_t>(clients),
                                std::vector<long>(static_cast<std::size_t>(classes), 0));

  rng::Engine eng(seed);
  // per-class label skew: one Dirichlet draw per class, then a categorical
  // assignment per sample of that class, in ascending sample order
  for (int c = 0; c < classes; ++c) {
    const std::vector<double> w =
        clients == 1 ? std::vector<double>{1.0} : eng.dirichlet(alpha_dir, clients);
    std::vector<double> cdf(w.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      acc += w[k];
      cdf[k] = acc;
    }
    cdf.back() = 1.0;
    for (long i = 0; i < train.size(); ++i) {
      if (train.labels[static_cast<std::size_t>(i)] != c) continue;
      const double u = eng.uniform01();
      const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
      const int k = static_cast<int>(std::min<std::size_t>(
          static_cast<std::size_t>(it - cdf.begin()), w.size() - 1));
      plan.assignment[static_cast<std::size_t>(i)] = k;
      ++plan.per_client_counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
    }
  }
  return plan;
}

ShotGroups shot_categories(const std::vector<long>& class_counts) {
  ShotGroups g;
  for (int c = 0; c < static_cast<int>(class_counts.size()); ++c) {
    const long n = class_counts[static_cast<std::size_t>(c)];
    if (n < 0) throw std::domain_error("shot_categories: negative class count");
    if (n > ShotGroups::kManyThreshold) {
      g.many.push_back(c);
    } else if (n < ShotGroups::kFewThreshold) {
      g.few.push_back(c);
    } else {
      g.medium.push_back(c);
    }
  }
  return g;
}

std::vector<LocalTestSet> make_local_test_sets(const LabeledFeatureSet& balanced_test,
                                               const PartitionPlan& plan,
                                               std::uint64_t seed,
                                               long local_test_size) {
  if (local_test_size < 1) throw std::domain_error("make_local_test_sets: size must be >= 1");
  const int classes = balanced_test.classes();
  const int clients = plan.clients();

  // per-class pools of balanced-test row indices
  std::vector<std::vector<int>> pools(static_cast<std::size_t>(classes));
  for (long i = 0; i < balanced_test.size(); ++i) {
    pools[static_cast<std::size_t>(balanced_test.labels[static_cast<std::size_t>(i)])]
        .push_back(static_cast<int>(i));
  }

  std::vector<LocalTestSet> out(static_cast<std::size_t>(clients));
  for (int k = 0; k < clients; ++k) {
    const auto& shard_counts = plan.per_client_counts[static_cast<std::size_t>(k)];
    const long n_k = std::accumulate(shard_counts.begin(), shard_counts.end(), 0L);
    auto& local = out[static_cast<std::size_t>(k)];
    if (n_k == 0) {
      local.empty_shard = true;
      local.set.features.resize(0, balanced_test.dim());
      local.set.class_counts.assign(static_cast<std::size_t>(classes), 0);
      continue;
    }

    // largest-remainder quotas matching the shard's class proportions
    std::vector<long> quota(static_cast<std::size_t>(classes), 0);
    std::vector<std::pair<double, int>> remainders;
    long assigned = 0;
    for (int c = 0; c < classes; ++c) {
      const double exact = static_cast<double>(local_test_size) *
                           static_cast<double>(shard_counts[static_cast<std::size_t>(c)]) /
                           static_cast<double>(n_k);
      const long base = static_cast<long>(std::floor(exact));
      quota[static_cast<std::size_t>(c)] = base;
      assigned += base;
      remainders.emplace_back(exact - static_cast<double>(base), c);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;  // ties to the lower class id
    });
    for (long r = 0; r < local_test_size - assigned; ++r) {
      ++quota[static_cast<std::size_t>(remainders[static_cast<std::size_t>(r)].second)];
    }

    rng::Engine eng(rng::derive(seed, static_cast<std::uint64_t>(k)));
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(local_test_size));
    for (int c = 0; c < classes; ++c) {
      const long m = quota[static_cast<std::size_t>(c)];
      if (m == 0) continue;
      const auto& pool = pools[static_cast<std::size_t>(c)];
      if (pool.empty()) {
        throw std::domain_error("make_local_test_sets: test set lacks a required class");
      }
      std::vector<int> shuffled = pool;
      eng.shuffle(shuffled);
      for (long i = 0; i < m; ++i) {
        if (i < static_cast<long>(shuffled.size())) {
          rows.push_back(shuffled[static_cast<std::size_t>(i)]);
        } else {
          // pool exhausted: resample with replacement
          rows.push_back(pool[static_cast<std::size_t>(eng.below(pool.size()))]);
        }
      }
    }

    local.set.features.resize(static_cast<long>(rows.size()), balanced_test.dim());
    local.set.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      local.set.features.row(static_cast<long>(i)) =
          balanced_test.features.row(rows[i]);
      local.set.labels.push_back(balanced_test.labels[static_cast<std::size_t>(rows[i])]);
    }
    local.set.class_counts = counts_from_labels(local.set.labels, classes);
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_double(const std::string& s, const std::string& path, long line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    if (!std::isfinite(v)) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": non-finite value '" + s + "'");
    }
    return v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + s + "'");
  }
}

long parse_int(const std::string& s, const std::string& path, long line_no) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError(path + ":" + std::to_string(line_no) + ": bad integer '" + s + "'");
  }
}

int validate_feature_header(const std::vector<std::string>& fields, const std::string& id_col,
                            const std::string& path) {
  if (fields.size() < 2 || fields[0] != id_col) {
    throw ParseError(path + ":1: expected header '" + id_col + ",f0,...'");
  }
  for (std::size_t j = 1; j < fields.size(); ++j) {
    if (fields[j] != "f" + std::to_string(j - 1)) {
      throw ParseError(path + ":1: bad feature column '" + fields[j] + "'");
    }
  }
  return static_cast<int>(fields.size() - 1);
}

}  // namespace

IngestResult load_embeddings(const std::string& path, int num_classes) {
  if (num_classes < 1) throw std::domain_error("load_embeddings: num_classes must be >= 1");
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: empty file");
  const int dim = validate_feature_header(split_csv_line(line), "label", path);

  std::vector<int> labels;
  std::vector<double> values;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != dim + 1) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(dim + 1) + " fields, got " +
                       std::to_string(fields.size()));
    }
    const long y = parse_int(fields[0], path, line_no);
    if (y < 0 || y >= num_classes) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": label " + std::to_string(y) +
                       " outside [0, " + std::to_string(num_classes) + ")");
    }
    labels.push_back(static_cast<int>(y));
    for (int j = 0; j < dim; ++j) {
      values.push_back(parse_double(fields[static_cast<std::size_t>(j + 1)], path, line_no));
    }
  }
  if (labels.empty()) throw ParseError(path + ": no data rows");

  IngestResult out;
  out.set.features.resize(static_cast<long>(labels.size()), dim);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (int j = 0; j < dim; ++j) {
      out.set.features(static_cast<long>(i), j) =
          values[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)];
    }
  }
  out.set.labels = labels;
  out.set.class_counts = counts_from_labels(labels, num_classes);
  for (int c = 0; c < num_classes; ++c) {
    if (out.set.class_counts[static_cast<std::size_t>(c)] == 0) {
      out.warnings.push_back("class " + std::to_string(c) + " has no samples");
    }
  }
  return out;
}

model::ZeroShotHead load_prototypes(const std::string& path, double logit_scale) {
  if (!(logit_scale > 0.0)) throw std::domain_error("load_prototypes: scale must be > 0");
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ":1: empty file");
  const int dim = validate_feature_header(split_csv_line(line), "class", path);

  std::vector<double> values;
  long line_no = 1;
  long rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != dim + 1) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(dim + 1) + " fields, got " +
                       std::to_string(fields.size()));
    }
    const long c = parse_int(fields[0], path, line_no);
    if (c != rows) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": class ids must be 0..C-1 in order");
    }
    for (int j = 0; j < dim; ++j) {
      values.push_back(parse_double(fields[static_cast<std::size_t>(j + 1)], path, line_no));
    }
    ++rows;
  }
  if (rows == 0) throw ParseError(path + ": no prototype rows");

  model::ZeroShotHead head;
  head.logit_scale = logit_scale;
  head.prototypes.resize(rows, dim);
  for (long c = 0; c < rows; ++c) {
    for (int j = 0; j < dim; ++j) {
      head.prototypes(c, j) =
          values[static_cast<std::size_t>(c) * static_cast<std::size_t>(dim) +
                 static_cast<std::size_t>(j)];
    }
  }
  return head;
}

namespace {

void write_matrix_csv(const Mat& m, const std::vector<int>* ids, const std::string& id_col,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("data: cannot write " + path);
  out << id_col;
  for (int j = 0; j < m.cols(); ++j) out << ",f" << j;
  out << "\n";
  char buf[64];
  for (long i = 0; i < m.rows(); ++i) {
    out << (ids ? (*ids)[static_cast<std::size_t>(i)] : static_cast<int>(i));
    for (int j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
      out << ',' << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("data: write failed for " + path);
}

}  // namespace

void write_embeddings(const LabeledFeatureSet& set, const std::string& path) {
  write_matrix_csv(set.features, &set.labels, "label", path);
}

void write_prototypes(const Mat& prototypes, const std::string& path) {
  write_matrix_csv(prototypes, nullptr, "class", path);
}

std::vector<std::vector<int>> shard_indices(const PartitionPlan& plan) {
  std::vector<std::vector<int>> shards(static_cast<std::size_t>(plan.clients()));
  for (std::size_t i = 0; i < plan.assignment.size(); ++i) {
    shards[static_cast<std::size_t>(plan.assignment[i])].push_back(static_cast<int>(i));
  }
  return shards;
}

}  // namespace purefed::data
