#include "purefed/divergence.hpp"

#include <cmath>
#include <stdexcept>

namespace purefed::divergence {

namespace {

void require_finite_logits(const Vec& logits) {
  if (logits.size() == 0) throw std::domain_error("divergence: empty logit vector");
  if (!logits.allFinite()) throw std::domain_error("divergence: non-finite logits");
}

}  // namespace

void validate_prob_vector(const Vec& p) {
  if (p.size() == 0) throw std::domain_error("divergence: empty probability vector");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double v = p[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw std::domain_error("divergence: probability entry outside [0, 1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kProbSumTol) {
    throw std::domain_error("divergence: probabilities do not sum to 1");
  }
}

Vec temperature_softmax(const Vec& logits, double tau) {
  require_finite_logits(logits);
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::domain_error("divergence: temperature must be positive");
  }
  const double max_logit = logits.maxCoeff();
  Vec p(logits.size());
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - max_logit) / tau);
    z += p[i];
  }
  p /= z;
  return p;
}

double entropy(const Vec& p) {
  validate_prob_vector(p);
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  }
  return h;
}

double tempered_entropy(const Vec& logits, double tau) {
  // H = ln Z - (1/Z) sum w_i a_i  with a_i = (l_i - max)/tau, w_i = exp(a_i)
  const double max_logit = logits.maxCoeff();
  double z = 0.0;
  double wa = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double a = (logits[i] - max_logit) / tau;
    const double w = std::exp(a);
    z += w;
    wa += w * a;
  }
  const double h = std::log(z) - wa / z;
  return h > 0.0 ? h : 0.0;
}

TemperatureSolution solve_aligned_temperature(const Vec& logits, double target_entropy,
                                              const TemperatureBracket& bracket) {
  require_finite_logits(logits);
  if (!std::isfinite(target_entropy)) {
    throw std::domain_error("divergence: non-finite target entropy");
  }

  TemperatureSolution sol;
  const double spread = logits.maxCoeff() - logits.minCoeff();
  if (spread <= kConstantLogitTol) {
    sol.tau = 1.0;  // entropy is ln C at every temperature
    return sol;
  }

  double lo = bracket.tau_min;
  double hi = bracket.tau_max;
  const double h_lo = tempered_entropy(logits, lo);
  const double h_hi = tempered_entropy(logits, hi);

  if (target_entropy <= h_lo) {
    sol.tau = lo;
    sol.clamped = std::abs(h_lo - target_entropy) > bracket.entropy_tol;
    return sol;
  }
  if (target_entropy >= h_hi) {
    sol.tau = hi;
    sol.clamped = std::abs(h_hi - target_entropy) > bracket.entropy_tol;
    return sol;
  }

  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < bracket.max_iterations; ++it) {
    mid = 0.5 * (lo + hi);
    const double h = tempered_entropy(logits, mid);
    sol.iterations = it + 1;
    if (std::abs(h - target_entropy) <= bracket.entropy_tol) {
      sol.tau = mid;
      return sol;
    }
    if (h < target_entropy) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  // interval exhausted without meeting the entropy tolerance
  sol.tau = mid;
  sol.clamped = true;
  return sol;
}

double kl_divergence(const Vec& p, const Vec& q) {
  validate_prob_vector(p);
  validate_prob_vector(q);
  if (p.size() != q.size()) throw std::domain_error("divergence: KL size mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= kProbFloor) continue;  // 0 * ln 0 convention
    const double qi = q[i] > kProbFloor ? q[i] : kProbFloor;
    kl += p[i] * std::log(p[i] / qi);
  }
  return kl;
}

TklResult tkl(const Vec& finetuned_logits, const Vec& zeroshot_logits,
              const TemperatureBracket& bracket) {
  require_finite_logits(finetuned_logits);
  require_finite_logits(zeroshot_logits);
  if (finetuned_logits.size() != zeroshot_logits.size() || finetuned_logits.size() < 2) {
    throw std::domain_error("divergence: tkl needs two equal-length logit vectors, C >= 2");
  }

  TklResult r;
  const double h_f = tempered_entropy(finetuned_logits, 1.0);
  const double h_z = tempered_entropy(zeroshot_logits, 1.0);
  r.state.target_entropy = 0.5 * (h_f + h_z);

  const TemperatureSolution sf =
      solve_aligned_temperature(finetuned_logits, r.state.target_entropy, bracket);
  const TemperatureSolution sz =
      solve_aligned_temperature(zeroshot_logits, r.state.target_entropy, bracket);
  r.state.tau_f = sf.tau;
  r.state.tau_z = sz.tau;
  r.state.clamped_f = sf.clamped;
  r.state.clamped_z = sz.clamped;

  const Vec p = temperature_softmax(finetuned_logits, r.state.tau_f);
  const Vec q = temperature_softmax(zeroshot_logits, r.state.tau_z);
  r.value = kl_divergence(p, q);
  return r;
}

double balancedness(const Vec& per_class_acc, const BalancednessConfig& cfg) {
  if (per_class_acc.size() < 1) throw std::domain_error("balancedness: empty accuracy vector");
  if (!(cfg.sigma > 0.0)) throw std::domain_error("balancedness: sigma must be > 0");
  const Eigen::Index c = per_class_acc.size();
  for (Eigen::Index i = 0; i < c; ++i) {
    const double a = per_class_acc[i];
    if (!std::isfinite(a) || a < 0.0 || a > 1.0) {
      throw std::domain_error("balancedness: accuracy outside [0, 1]");
    }
  }
  double sum = 0.0;
  for (Eigen::Index i = 0; i < c; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) {
      const double gap = per_class_acc[i] - per_class_acc[j];
      sum += std::exp(-(gap * gap) / cfg.sigma);
    }
  }
  return sum / (static_cast<double>(c) * static_cast<double>(c));
}

}  // namespace purefed::divergence
