#pragma once

// Shared test-only oracles and helpers. Everything here is deliberately
// independent of the library's gradient/training path: central finite
// differences for gradient checks, a plain-SGD / plain-FedAvg reimplementation
// for trajectory cross-checks, and byte hashing for freeze contracts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <vector>

#include "purefed/model.hpp"
#include "purefed/rng.hpp"

namespace test_support {

using purefed::Mat;
using purefed::Vec;

/// Central finite-difference gradient of `loss` over every matrix entry.
inline Mat fd_gradient(const std::function<double(const Mat&)>& loss, const Mat& at,
                       double step = 1e-5) {
  Mat grad(at.rows(), at.cols());
  for (Eigen::Index c = 0; c < at.rows(); ++c) {
    for (Eigen::Index j = 0; j < at.cols(); ++j) {
      Mat hi = at;
      Mat lo = at;
      hi(c, j) += step;
      lo(c, j) -= step;
      grad(c, j) = (loss(hi) - loss(lo)) / (2.0 * step);
    }
  }
  return grad;
}

inline double relative_error(const Mat& a, const Mat& b) {
  const double denom = std::max(b.norm(), 1e-12);
  return (a - b).norm() / denom;
}

/// FNV-1a over the raw bytes of a matrix (row-major traversal).
inline std::uint64_t hash_matrix(const Mat& m) {
  std::uint64_t h = 1469598103934665603ULL;
  for (Eigen::Index c = 0; c < m.rows(); ++c) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(c, j);
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (const unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

inline bool bit_equal(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index c = 0; c < a.rows(); ++c) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      if (std::memcmp(&a(c, j), &b(c, j), sizeof(double)) != 0) return false;
    }
  }
  return true;
}

/// Random small problem instance for gradient checks.
struct RandomInstance {
  purefed::model::ZeroShotHead head;
  purefed::model::PeftDelta phi;
  Vec x;
  int y = 0;
};

inline RandomInstance random_instance(purefed::rng::Engine& eng, int max_classes = 8,
                                      int max_dim = 8) {
  RandomInstance inst;
  const int classes = 2 + static_cast<int>(eng.below(static_cast<std::uint64_t>(max_classes - 1)));
  const int dim = 1 + static_cast<int>(eng.below(static_cast<std::uint64_t>(max_dim)));
  inst.head.logit_scale = 0.5 + 4.0 * eng.uniform01();
  inst.head.prototypes.resize(classes, dim);
  inst.phi.delta.resize(classes, dim);
  inst.x.resize(dim);
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < dim; ++j) {
      inst.head.prototypes(c, j) = eng.normal();
      inst.phi.delta(c, j) = 0.3 * eng.normal();
    }
  }
  for (int j = 0; j < dim; ++j) inst.x[j] = eng.normal();
  inst.y = static_cast<int>(eng.below(static_cast<std::uint64_t>(classes)));
  return inst;
}

// ---------------------------------------------------------------------------
// Independent plain-SGD / plain-FedAvg oracle. Uses only rng primitives and
// its own forward/backward arithmetic; mirrors the documented batch contract
// (per-(client, round) derived shuffle seed, consecutive chunks).
// ---------------------------------------------------------------------------

struct OracleShard {
  const Mat* features = nullptr;           // N x d
  const std::vector<int>* labels = nullptr;
  std::vector<int> rows;
};

inline Vec oracle_logits(const Mat& prototypes, const Mat& delta, const Vec& x, double s) {
  Vec out(prototypes.rows());
  for (Eigen::Index c = 0; c < prototypes.rows(); ++c) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < prototypes.cols(); ++j) {
      acc += (prototypes(c, j) + delta(c, j)) * x(j);
    }
    out[c] = s * acc;
  }
  return out;
}

inline Vec oracle_softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec p(logits.size());
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] /= z;
  return p;
}

/// One client's plain-SGD pass (cross-entropy only, no purification).
inline Mat oracle_local_sgd(const OracleShard& shard, Mat delta, const Mat& prototypes,
                            double s, int epochs, int batch_size, double lr,
                            std::uint64_t shuffle_seed, int client_id, int round) {
  purefed::rng::Engine eng(
      purefed::rng::derive(shuffle_seed, 1, static_cast<std::uint64_t>(client_id),
                           static_cast<std::uint64_t>(round)));
  const long n = static_cast<long>(shard.rows.size());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = static_cast<int>(i);
    eng.shuffle(perm);
    for (long start = 0; start < n; start += batch_size) {
      const long end = std::min(n, start + batch_size);
      Mat grad = Mat::Zero(delta.rows(), delta.cols());
      for (long i = start; i < end; ++i) {
        const int row = shard.rows[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        const Vec x = shard.features->row(row).transpose();
        const int y = (*shard.labels)[static_cast<std::size_t>(row)];
        const Vec p = oracle_softmax(oracle_logits(prototypes, delta, x, s));
        for (Eigen::Index c = 0; c < delta.rows(); ++c) {
          const double diff = p[c] - (c == y ? 1.0 : 0.0);
          for (Eigen::Index j = 0; j < delta.cols(); ++j) {
            grad(c, j) += s * (diff * x[j]);
          }
        }
      }
      grad *= 1.0 / static_cast<double>(end - start);
      for (Eigen::Index c = 0; c < delta.rows(); ++c) {
        for (Eigen::Index j = 0; j < delta.cols(); ++j) {
          delta(c, j) -= lr * grad(c, j);
        }
      }
    }
  }
  return delta;
}

/// Full plain-FedAvg loop over T rounds with uniform-shuffle selection.
inline std::vector<Mat> oracle_fedavg(const std::vector<OracleShard>& shards,
                                      const Mat& prototypes, double s, int rounds,
                                      double fraction, int epochs, int batch_size, double lr,
                                      std::uint64_t selection_seed,
                                      std::uint64_t shuffle_seed) {
  const int clients = static_cast<int>(shards.size());
  Mat phi = Mat::Zero(prototypes.rows(), prototypes.cols());
  std::vector<Mat> trajectory;
  for (int t = 0; t < rounds; ++t) {
    std::vector<int> ids(static_cast<std::size_t>(clients));
    for (int k = 0; k < clients; ++k) ids[static_cast<std::size_t>(k)] = k;
    purefed::rng::Engine sel(
        purefed::rng::derive(selection_seed, static_cast<std::uint64_t>(t)));
    sel.shuffle(ids);
    long m = std::lround(fraction * static_cast<double>(clients));
    m = std::max<long>(1, std::min<long>(m, clients));
    std::vector<int> selected(ids.begin(), ids.begin() + m);
    std::sort(selected.begin(), selected.end());

    long total = 0;
    std::vector<Mat> updates;
    std::vector<long> weights;
    for (const int k : selected) {
      updates.push_back(oracle_local_sgd(shards[static_cast<std::size_t>(k)], phi, prototypes,
                                         s, epochs, batch_size, lr, shuffle_seed, k, t));
      weights.push_back(static_cast<long>(shards[static_cast<std::size_t>(k)].rows.size()));
      total += weights.back();
    }
    Mat next = Mat::Zero(phi.rows(), phi.cols());
    for (std::size_t i = 0; i < updates.size(); ++i) {
      const double w = static_cast<double>(weights[i]) / static_cast<double>(total);
      next += w * updates[i];
    }
    phi = next;
    trajectory.push_back(phi);
  }
  return trajectory;
}

}  // namespace test_support
