#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "purefed/model.hpp"
#include "purefed/rng.hpp"
#include "test_support.hpp"

using namespace purefed;
using namespace purefed::model;
using test_support::fd_gradient;
using test_support::random_instance;
using test_support::relative_error;

namespace {

ZeroShotHead identity_head(int n, double s = 1.0) {
  ZeroShotHead head;
  head.prototypes = Mat::Identity(n, n);
  head.logit_scale = s;
  return head;
}

}  // namespace

TEST_CASE("zero_shot_logits unit cases") {
  const ZeroShotHead head = identity_head(2);
  Vec x(2);
  x << 3.0, 4.0;
  const Vec l = zero_shot_logits(x, head);
  CHECK(l[0] == doctest::Approx(3.0));
  CHECK(l[1] == doctest::Approx(4.0));

  ZeroShotHead doubled = head;
  doubled.logit_scale = 2.0;
  const Vec l2 = zero_shot_logits(x, doubled);
  CHECK(l2[0] == doctest::Approx(2.0 * l[0]));
  CHECK(l2[1] == doctest::Approx(2.0 * l[1]));

  Vec e1 = Vec::Zero(2);
  e1[0] = 1.0;
  const Vec le = zero_shot_logits(e1, head);
  CHECK(le[0] == doctest::Approx(1.0));
  CHECK(le[1] == doctest::Approx(0.0));

  Vec wrong(3);
  wrong << 1, 2, 3;
  CHECK_THROWS_AS(zero_shot_logits(wrong, head), std::domain_error);
}

TEST_CASE("finetuned_logits with zero delta is bit-identical to zero-shot") {
  rng::Engine eng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = random_instance(eng);
    const PeftDelta zero = PeftDelta::zeros(inst.head.classes(), inst.head.dim());
    const Vec a = zero_shot_logits(inst.x, inst.head);
    const Vec b = finetuned_logits(inst.x, inst.head, zero);
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  }
}

TEST_CASE("finetuned_logits additivity and cancellation") {
  rng::Engine eng(9);
  const auto inst = random_instance(eng);

  PeftDelta cancel = inst.phi;
  cancel.delta = -inst.head.prototypes;
  const Vec zeroed = finetuned_logits(inst.x, inst.head, cancel);
  CHECK(zeroed.cwiseAbs().maxCoeff() < 1e-12);

  // (P, delta) equals a head with prototypes P + delta and zero adaptation
  ZeroShotHead merged = inst.head;
  merged.prototypes = inst.head.prototypes + inst.phi.delta;
  const Vec via_delta = finetuned_logits(inst.x, inst.head, inst.phi);
  const Vec via_merged = zero_shot_logits(inst.x, merged);
  CHECK((via_delta - via_merged).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ce loss symmetric case") {
  ZeroShotHead head;
  head.prototypes = Mat::Zero(2, 1);
  head.logit_scale = 1.0;
  const PeftDelta phi = PeftDelta::zeros(2, 1);
  Vec x(1);
  x << 1.0;
  const auto lg = ce_loss_and_grad(x, 0, head, phi);
  CHECK(lg.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(lg.grad(0, 0) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(lg.grad(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(ce_loss_and_grad(x, 2, head, phi), std::domain_error);
}

TEST_CASE("ce gradient rows sum to zero") {
  rng::Engine eng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(eng);
    const auto lg = ce_loss_and_grad(inst.x, inst.y, inst.head, inst.phi);
    const Vec col_sums = lg.grad.colwise().sum().transpose();
    CHECK(col_sums.cwiseAbs().maxCoeff() < 1e-9 * (1.0 + inst.x.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("ce gradient matches finite differences") {
  rng::Engine eng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_instance(eng);
    const auto lg = ce_loss_and_grad(inst.x, inst.y, inst.head, inst.phi);
    const Mat fd = fd_gradient(
        [&](const Mat& d) {
          PeftDelta p = inst.phi;
          p.delta = d;
          return ce_loss_and_grad(inst.x, inst.y, inst.head, p).loss;
        },
        inst.phi.delta);
    CHECK(relative_error(lg.grad, fd) < 1e-5);
  }
}

TEST_CASE("tkl loss vanishes at zero adaptation") {
  rng::Engine eng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(eng);
    const PeftDelta zero = PeftDelta::zeros(inst.head.classes(), inst.head.dim());
    const auto lg = tkl_loss_and_grad(inst.x, inst.head, zero);
    CHECK(std::abs(lg.loss) <= 1e-9);
    CHECK(lg.grad.cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("tkl gradient matches finite differences with frozen temperatures") {
  rng::Engine eng(29);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_instance(eng);
    const auto lg = tkl_loss_and_grad(inst.x, inst.head, inst.phi);
    if (lg.state.any_clamped()) continue;  // keep the check on the smooth branch
    const Vec z = zero_shot_logits(inst.x, inst.head);
    const Vec q = divergence::temperature_softmax(z, lg.state.tau_z);
    const double tau_f = lg.state.tau_f;
    const Mat fd = fd_gradient(
        [&](const Mat& d) {
          PeftDelta p = inst.phi;
          p.delta = d;
          const Vec f = finetuned_logits(inst.x, inst.head, p);
          return divergence::kl_divergence(q, divergence::temperature_softmax(f, tau_f));
        },
        inst.phi.delta);
    if (fd.norm() < 1e-10) {
      CHECK(lg.grad.norm() < 1e-8);
    } else {
      CHECK(relative_error(lg.grad, fd) < 1e-5);
    }
    ++checked;
  }
  CHECK(checked >= 80);
}

TEST_CASE("tkl gradient rows sum to zero") {
  rng::Engine eng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = random_instance(eng);
    const auto lg = tkl_loss_and_grad(inst.x, inst.head, inst.phi);
    const Vec col_sums = lg.grad.colwise().sum().transpose();
    CHECK(col_sums.cwiseAbs().maxCoeff() < 1e-9 * (1.0 + inst.x.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("purify analytic cases") {
  Mat task(1, 2), align(1, 2);

  task << 1.0, 0.0;
  align << 0.0, 1.0;
  GradientPair orthogonal(task, align);
  const Mat unchanged = purify(orthogonal);
  CHECK_FALSE(orthogonal.purified);
  CHECK(unchanged(0, 0) == doctest::Approx(1.0));
  CHECK(unchanged(0, 1) == doctest::Approx(0.0));

  task << 1.0, -1.0;
  align << 0.0, 1.0;
  GradientPair conflicting(task, align);
  const Mat projected = purify(conflicting);
  CHECK(conflicting.purified);
  CHECK(projected(0, 0) == doctest::Approx(1.0));
  CHECK(projected(0, 1) == doctest::Approx(0.0).epsilon(1e-12));

  task << 0.4, -0.7;
  GradientPair annihilated(task, Mat(-task));
  const Mat zero = purify(annihilated);
  CHECK(annihilated.purified);
  CHECK(zero.cwiseAbs().maxCoeff() < 1e-12);

  GradientPair no_signal(task, Mat::Zero(1, 2));
  const Mat passthrough = purify(no_signal);
  CHECK_FALSE(no_signal.purified);
  CHECK(passthrough(0, 0) == doctest::Approx(0.4));
}

TEST_CASE("purify invariants on random pairs") {
  rng::Engine eng(37);
  int fired = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = 1 + static_cast<int>(eng.below(6));
    const int d = 1 + static_cast<int>(eng.below(6));
    Mat task(c, d), align(c, d);
    for (int i = 0; i < c; ++i) {
      for (int j = 0; j < d; ++j) {
        task(i, j) = eng.normal();
        align(i, j) = eng.normal();
      }
    }
    GradientPair pair(task, align);
    CHECK(pair.inner_product ==
          doctest::Approx(task.cwiseProduct(align).sum()).epsilon(1e-9));
    const Mat purified = purify(pair);
    const double post_inner = purified.cwiseProduct(align).sum();
    CHECK(post_inner >= -1e-9);
    if (pair.purified) {
      CHECK(std::abs(post_inner) <= 1e-9);
      ++fired;
    }
    CHECK(purified.norm() <= task.norm() + 1e-12);
  }
  CHECK(fired > 200);  // random pairs conflict about half the time
}

TEST_CASE("purified step does not increase the alignment loss to first order") {
  rng::Engine eng(41);
  int checked = 0;
  for (int trial = 0; trial < 60 && checked < 20; ++trial) {
    const auto inst = random_instance(eng);
    const auto task = ce_loss_and_grad(inst.x, inst.y, inst.head, inst.phi);
    const auto align = tkl_loss_and_grad(inst.x, inst.head, inst.phi);
    if (align.state.any_clamped()) continue;
    GradientPair pair(task.grad, align.grad);
    const Mat applied = purify(pair);
    if (!pair.purified) continue;

    const double eta = 1e-4;
    const Vec z = zero_shot_logits(inst.x, inst.head);
    const Vec q = divergence::temperature_softmax(z, align.state.tau_z);
    const auto align_loss = [&](const Mat& d) {
      PeftDelta p = inst.phi;
      p.delta = d;
      const Vec f = finetuned_logits(inst.x, inst.head, p);
      return divergence::kl_divergence(
          q, divergence::temperature_softmax(f, align.state.tau_f));
    };
    const double before = align_loss(inst.phi.delta);
    const double after = align_loss(inst.phi.delta - eta * applied);
    CHECK(after - before <= 1e-6);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("sgd_step arithmetic") {
  PeftDelta phi = PeftDelta::zeros(2, 2);
  Mat g(2, 2);
  g << 1.0, 2.0, 3.0, 4.0;

  sgd_step(phi, Mat::Zero(2, 2), 0.1);
  CHECK(phi.delta.cwiseAbs().maxCoeff() == 0.0);

  sgd_step(phi, g, 0.1);
  CHECK(phi.delta(0, 0) == doctest::Approx(-0.1));
  CHECK(phi.delta(1, 1) == doctest::Approx(-0.4));

  // two half steps equal one full step on a constant gradient
  PeftDelta a = PeftDelta::zeros(2, 2);
  PeftDelta b = PeftDelta::zeros(2, 2);
  sgd_step(a, g, 0.2);
  sgd_step(b, g, 0.1);
  sgd_step(b, g, 0.1);
  CHECK((a.delta - b.delta).cwiseAbs().maxCoeff() < 1e-15);

  Mat bad = g;
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(sgd_step(phi, bad, 0.1), StepError);
}

TEST_CASE("fused_logits definitions") {
  rng::Engine eng(43);
  const auto inst = random_instance(eng);
  const int c = inst.head.classes();
  const int d = inst.head.dim();
  const PeftDelta zero_g = PeftDelta::zeros(c, d);
  const PeftDelta zero_k = PeftDelta::zeros(c, d, DeltaRole::Personal, 0);

  const Vec z = zero_shot_logits(inst.x, inst.head);
  const Vec both_zero = fused_logits(inst.x, inst.head, zero_g, zero_k);
  CHECK((both_zero - 2.0 * z).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(argmax_lowest(both_zero) == argmax_lowest(z));

  const Vec with_g = fused_logits(inst.x, inst.head, inst.phi, zero_k);
  const Vec expected = z + finetuned_logits(inst.x, inst.head, inst.phi);
  CHECK((with_g - expected).cwiseAbs().maxCoeff() < 1e-12);

  PeftDelta phi_k = inst.phi;
  phi_k.delta *= -0.5;
  const Vec fused = fused_logits(inst.x, inst.head, inst.phi, phi_k);
  const Vec sum = finetuned_logits(inst.x, inst.head, inst.phi) +
                  finetuned_logits(inst.x, inst.head, phi_k);
  CHECK((fused - sum).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("personalization loss edge weights") {
  rng::Engine eng(47);
  const auto inst = random_instance(eng);
  PeftDelta phi_k = inst.phi;
  phi_k.delta *= 0.7;
  phi_k.role = DeltaRole::Personal;

  // lambda = 1 reduces to the personal branch alone
  const auto pure = personalization_loss_and_grad(inst.x, inst.y, inst.head, inst.phi,
                                                  phi_k, 1.0);
  const auto ce = ce_loss_and_grad(inst.x, inst.y, inst.head, phi_k);
  CHECK(pure.loss == doctest::Approx(ce.loss).epsilon(1e-12));
  CHECK((pure.grad - ce.grad).cwiseAbs().maxCoeff() < 1e-12);

  // lambda = 0 keeps only the fusion term
  const auto fusion = personalization_loss_and_grad(inst.x, inst.y, inst.head, inst.phi,
                                                    phi_k, 0.0);
  const Vec fused = fused_logits(inst.x, inst.head, inst.phi, phi_k);
  const Vec pf = divergence::temperature_softmax(fused, 1.0);
  CHECK(fusion.loss == doctest::Approx(-std::log(pf[inst.y])).epsilon(1e-9));

  CHECK_THROWS_AS(
      personalization_loss_and_grad(inst.x, inst.y, inst.head, inst.phi, phi_k, 1.5),
      std::domain_error);
}

TEST_CASE("personalization gradient matches finite differences over phi_k only") {
  rng::Engine eng(53);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_instance(eng);
    PeftDelta phi_k = inst.phi;
    phi_k.delta = 0.4 * inst.phi.delta;
    const double lambda = eng.uniform01();
    const Mat phi_g_before = inst.phi.delta;
    const auto lg = personalization_loss_and_grad(inst.x, inst.y, inst.head, inst.phi,
                                                  phi_k, lambda);
    CHECK(test_support::bit_equal(inst.phi.delta, phi_g_before));  // phi_g untouched

    const Mat fd = fd_gradient(
        [&](const Mat& d) {
          PeftDelta p = phi_k;
          p.delta = d;
          return personalization_loss_and_grad(inst.x, inst.y, inst.head, inst.phi, p,
                                               lambda)
              .loss;
        },
        phi_k.delta);
    CHECK(relative_error(lg.grad, fd) < 1e-5);
  }
}

TEST_CASE("argmax tie-break picks the lowest class id") {
  Vec v(4);
  v << 1.0, 3.0, 3.0, 2.0;
  CHECK(argmax_lowest(v) == 1);
  Vec all_equal = Vec::Constant(5, 2.5);
  CHECK(argmax_lowest(all_equal) == 0);
}
