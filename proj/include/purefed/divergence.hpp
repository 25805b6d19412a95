#pragma once

/**
 * Divergence kernel: temperature softmax, entropy, entropy-matching
 * temperature inversion, KL, temperature-aligned KL (TKL), and the
 * balancedness metric.
 *
 * TKL re-tempers two logit vectors to a common target entropy before
 * comparing them, so confidence differences cancel and only structural
 * class bias remains. All entropies are in nats.
 */

#include "purefed/types.hpp"

namespace purefed::divergence {

// Probability vectors must sum to 1 within this tolerance.
inline constexpr double kProbSumTol = 1e-9;
// Floor applied inside KL to avoid log of zero.
inline constexpr double kProbFloor = 1e-12;
// Logit spread below this counts as constant (entropy ln C at every tau).
inline constexpr double kConstantLogitTol = 1e-12;

struct TemperatureBracket {
  double tau_min = 1e-4;
  double tau_max = 1e4;
  int max_iterations = 100;
  double entropy_tol = 1e-8;
};

struct TemperatureSolution {
  double tau = 1.0;
  bool clamped = false;  // target was unreachable inside the bracket
  int iterations = 0;
};

/// Temperatures and target entropy used for one aligned comparison.
struct AlignmentState {
  double target_entropy = 0.0;  // H*, nats
  double tau_f = 1.0;           // aligned temperature of the fine-tuned logits
  double tau_z = 1.0;           // aligned temperature of the zero-shot logits
  bool clamped_f = false;
  bool clamped_z = false;
  bool any_clamped() const { return clamped_f || clamped_z; }
};

struct BalancednessConfig {
  double sigma = 0.1;  // Gaussian-kernel scale on pairwise accuracy gaps
};

struct TklResult {
  double value = 0.0;
  AlignmentState state;
};

/// Throws std::domain_error unless p has entries in [0,1] summing to 1.
void validate_prob_vector(const Vec& p);

/// softmax(logits / tau) with max-subtraction. tau must be > 0.
Vec temperature_softmax(const Vec& logits, double tau);

/// Shannon entropy in nats, 0*ln 0 := 0. Validates the input.
double entropy(const Vec& p);

/// entropy(temperature_softmax(logits, tau)) without building the vector.
double tempered_entropy(const Vec& logits, double tau);

/**
 * Solves tau with entropy(softmax(logits/tau)) = target_entropy by bisection;
 * entropy is non-decreasing in tau, strictly increasing for non-constant
 * logits. Constant logits return tau = 1. Targets outside the bracket's
 * entropy range clamp to the nearest endpoint and set `clamped` instead of
 * throwing, so a degenerate sample cannot abort a training round.
 */
TemperatureSolution solve_aligned_temperature(const Vec& logits, double target_entropy,
                                              const TemperatureBracket& bracket = {});

/// KL(p || q) in nats with kProbFloor applied to q (and 0*ln 0 for p).
double kl_divergence(const Vec& p, const Vec& q);

/**
 * Temperature-aligned KL between fine-tuned and zero-shot logits.
 * H* is the mean of both unit-temperature entropies; each side is
 * re-tempered to H* and KL(aligned_finetuned || aligned_zeroshot)
 * is returned together with the alignment state.
 */
TklResult tkl(const Vec& finetuned_logits, const Vec& zeroshot_logits,
              const TemperatureBracket& bracket = {});

/// (1/C^2) sum_ij exp(-(a_i - a_j)^2 / sigma); 1 iff all accuracies equal.
double balancedness(const Vec& per_class_acc, const BalancednessConfig& cfg);

}  // namespace purefed::divergence
