#pragma once

/**
 * Linear adaptation head over frozen features.
 *
 * The frozen backbone is represented by precomputed feature vectors; the
 * zero-shot classifier is a fixed prototype matrix P (C x d) with a logit
 * scale s, and all trainable state is an additive delta on P. Zero-shot
 * logits are s*(P*x); fine-tuned logits are s*((P+delta)*x).
 *
 * Reductions in the forward/gradient path are written as plain sequential
 * loops so that results are reproducible by any direct reimplementation.
 */

#include <stdexcept>

#include "purefed/divergence.hpp"
#include "purefed/types.hpp"

namespace purefed::model {

/// Raised when an optimizer step receives a non-finite gradient.
struct StepError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ZeroShotHead {
  Mat prototypes;           // C x d, immutable after construction
  double logit_scale = 1.0;  // s > 0

  int classes() const { return static_cast<int>(prototypes.rows()); }
  int dim() const { return static_cast<int>(prototypes.cols()); }
};

enum class DeltaRole { Global, Personal };

struct PeftDelta {
  Mat delta;  // C x d
  DeltaRole role = DeltaRole::Global;
  int client_id = -1;  // meaningful for Personal only

  static PeftDelta zeros(int classes, int dim, DeltaRole role = DeltaRole::Global,
                         int client_id = -1) {
    return PeftDelta{Mat::Zero(classes, dim), role, client_id};
  }
};

/// Task/alignment gradient pair for one optimizer step.
struct GradientPair {
  Mat g_task;
  Mat g_align;
  double inner_product = 0.0;  // Frobenius <g_task, g_align>
  bool purified = false;       // set by purify() when the projection fires

  GradientPair(Mat task, Mat align);
};

struct LossGrad {
  double loss = 0.0;
  Mat grad;
};

struct TklLossGrad {
  double loss = 0.0;
  Mat grad;
  divergence::AlignmentState state;
};

Vec zero_shot_logits(const Vec& x, const ZeroShotHead& head);
Vec finetuned_logits(const Vec& x, const ZeroShotHead& head, const PeftDelta& phi);

/// Cross-entropy of softmax(finetuned logits) against label y, with the
/// analytic gradient s*(softmax(f) - onehot(y)) * x^T over the delta.
LossGrad ce_loss_and_grad(const Vec& x, int y, const ZeroShotHead& head,
                          const PeftDelta& phi);

/// Alignment loss KL(aligned zero-shot || aligned fine-tuned) with both
/// temperatures solved to the common target entropy and then held fixed
/// (stop-gradient), giving the gradient (s/tau_f)*(p - q) * x^T.
TklLossGrad tkl_loss_and_grad(const Vec& x, const ZeroShotHead& head, const PeftDelta& phi,
                              const divergence::TemperatureBracket& bracket = {});

/**
 * Conflicting-gradient projection: when <g_task, g_align> < 0, removes the
 * component of g_task along g_align; otherwise g_task passes through.
 * A vanishing alignment gradient (norm < 1e-12) passes g_task through.
 * Sets pair.purified when the projection branch fires.
 */
Mat purify(GradientPair& pair);

/// delta <- delta - lr * grad. Throws StepError on non-finite gradients.
void sgd_step(PeftDelta& phi, const Mat& grad, double lr);

/// Dual-branch additive fusion; both branches run the full backbone pass.
Vec fused_logits(const Vec& x, const ZeroShotHead& head, const PeftDelta& phi_g,
                 const PeftDelta& phi_k);

/// Composite personalization loss (1-lambda)*CE(fused) + lambda*CE(personal);
/// gradient flows only through phi_k, phi_g is read-only.
LossGrad personalization_loss_and_grad(const Vec& x, int y, const ZeroShotHead& head,
                                       const PeftDelta& phi_g, const PeftDelta& phi_k,
                                       double lambda);

/// Index of the largest entry; exact ties resolve to the lowest index.
int argmax_lowest(const Vec& v);

}  // namespace purefed::model
