#include "purefed/model.hpp"

#include <cmath>
#include <limits>

namespace purefed::model {

namespace {

void require_dim(const Vec& x, const ZeroShotHead& head) {
  if (x.size() != head.prototypes.cols()) {
    throw std::domain_error("model: feature dimension does not match prototypes");
  }
  if (!x.allFinite()) throw std::domain_error("model: non-finite feature vector");
}

void require_shape(const ZeroShotHead& head, const PeftDelta& phi) {
  if (phi.delta.rows() != head.prototypes.rows() ||
      phi.delta.cols() != head.prototypes.cols()) {
    throw std::domain_error("model: delta shape does not match prototypes");
  }
}

// logits[c] = s * sum_j w(c,j) * x(j), sequential over j
Vec scaled_matvec(const Mat& w, const Vec& x, double s) {
  Vec out(w.rows());
  for (Eigen::Index c = 0; c < w.rows(); ++c) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(c, j) * x(j);
    out[c] = s * acc;
  }
  return out;
}

// softmax at unit temperature, max-subtracted, sequential normalization
Vec softmax(const Vec& logits) {
  const double max_logit = logits.maxCoeff();
  Vec p(logits.size());
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - max_logit);
    z += p[i];
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] /= z;
  return p;
}

void require_label(int y, Eigen::Index classes) {
  if (y < 0 || y >= classes) throw std::domain_error("model: label out of range");
}

}  // namespace

GradientPair::GradientPair(Mat task, Mat align)
    : g_task(std::move(task)), g_align(std::move(align)) {
  if (g_task.rows() != g_align.rows() || g_task.cols() != g_align.cols()) {
    throw std::domain_error("model: gradient pair shape mismatch");
  }
  inner_product = g_task.cwiseProduct(g_align).sum();
}

Vec zero_shot_logits(const Vec& x, const ZeroShotHead& head) {
  require_dim(x, head);
  return scaled_matvec(head.prototypes, x, head.logit_scale);
}

Vec finetuned_logits(const Vec& x, const ZeroShotHead& head, const PeftDelta& phi) {
  require_dim(x, head);
  require_shape(head, phi);
  const Mat w = head.prototypes + phi.delta;
  return scaled_matvec(w, x, head.logit_scale);
}

LossGrad ce_loss_and_grad(const Vec& x, int y, const ZeroShotHead& head,
                          const PeftDelta& phi) {
  const Vec f = finetuned_logits(x, head, phi);
  require_label(y, f.size());
  const Vec p = softmax(f);
  LossGrad out;
  out.loss = -std::log(p[y] > 0.0 ? p[y] : std::numeric_limits<double>::min());
  out.grad.resize(f.size(), x.size());
  const double s = head.logit_scale;
  for (Eigen::Index c = 0; c < f.size(); ++c) {
    const double diff = p[c] - (c == y ? 1.0 : 0.0);
    for (Eigen::Index j = 0; j < x.size(); ++j) out.grad(c, j) = s * (diff * x[j]);
  }
  return out;
}

TklLossGrad tkl_loss_and_grad(const Vec& x, const ZeroShotHead& head, const PeftDelta& phi,
                              const divergence::TemperatureBracket& bracket) {
  const Vec z = zero_shot_logits(x, head);
  const Vec f = finetuned_logits(x, head, phi);

  TklLossGrad out;
  const double h_f = divergence::tempered_entropy(f, 1.0);
  const double h_z = divergence::tempered_entropy(z, 1.0);
  out.state.target_entropy = 0.5 * (h_f + h_z);

  const auto sf = divergence::solve_aligned_temperature(f, out.state.target_entropy, bracket);
  const auto sz = divergence::solve_aligned_temperature(z, out.state.target_entropy, bracket);
  out.state.tau_f = sf.tau;
  out.state.tau_z = sz.tau;
  out.state.clamped_f = sf.clamped;
  out.state.clamped_z = sz.clamped;

  const Vec p = divergence::temperature_softmax(f, out.state.tau_f);
  const Vec q = divergence::temperature_softmax(z, out.state.tau_z);
  out.loss = divergence::kl_divergence(q, p);

  const double coef = head.logit_scale / out.state.tau_f;
  out.grad.resize(f.size(), x.size());
  for (Eigen::Index c = 0; c < f.size(); ++c) {
    const double diff = p[c] - q[c];
    for (Eigen::Index j = 0; j < x.size(); ++j) out.grad(c, j) = coef * (diff * x[j]);
  }
  return out;
}

Mat purify(GradientPair& pair) {
  pair.purified = false;
  const double align_norm = pair.g_align.norm();
  if (align_norm < 1e-12) return pair.g_task;  // no alignment signal
  if (pair.inner_product >= 0.0) return pair.g_task;
  pair.purified = true;
  const double scale = pair.inner_product / (align_norm * align_norm);
  return pair.g_task - scale * pair.g_align;
}

void sgd_step(PeftDelta& phi, const Mat& grad, double lr) {
  if (!(lr > 0.0)) throw std::domain_error("model: learning rate must be > 0");
  if (grad.rows() != phi.delta.rows() || grad.cols() != phi.delta.cols()) {
    throw std::domain_error("model: gradient shape does not match delta");
  }
  if (!grad.allFinite()) throw StepError("model: non-finite gradient in sgd_step");
  for (Eigen::Index c = 0; c < phi.delta.rows(); ++c) {
    for (Eigen::Index j = 0; j < phi.delta.cols(); ++j) {
      phi.delta(c, j) -= lr * grad(c, j);
    }
  }
}

Vec fused_logits(const Vec& x, const ZeroShotHead& head, const PeftDelta& phi_g,
                 const PeftDelta& phi_k) {
  const Vec lg = finetuned_logits(x, head, phi_g);
  const Vec lp = finetuned_logits(x, head, phi_k);
  return lg + lp;
}

int argmax_lowest(const Vec& v) {
  if (v.size() == 0) throw std::domain_error("model: argmax of empty vector");
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

LossGrad personalization_loss_and_grad(const Vec& x, int y, const ZeroShotHead& head,
                                       const PeftDelta& phi_g, const PeftDelta& phi_k,
                                       double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::domain_error("model: lambda must lie in [0, 1]");
  }
  const Vec lg = finetuned_logits(x, head, phi_g);
  const Vec lp = finetuned_logits(x, head, phi_k);
  require_label(y, lg.size());

  const Vec fused = lg + lp;
  const Vec pf = softmax(fused);
  const Vec pp = softmax(lp);

  LossGrad out;
  const double fused_nll = -std::log(pf[y] > 0.0 ? pf[y] : std::numeric_limits<double>::min());
  const double personal_nll = -std::log(pp[y] > 0.0 ? pp[y] : std::numeric_limits<double>::min());
  out.loss = (1.0 - lambda) * fused_nll + lambda * personal_nll;

  const double s = head.logit_scale;
  out.grad.resize(lg.size(), x.size());
  for (Eigen::Index c = 0; c < lg.size(); ++c) {
    const double onehot = (c == y ? 1.0 : 0.0);
    const double diff = (1.0 - lambda) * (pf[c] - onehot) + lambda * (pp[c] - onehot);
    for (Eigen::Index j = 0; j < x.size(); ++j) out.grad(c, j) = s * (diff * x[j]);
  }
  return out;
}

}  // namespace purefed::model
