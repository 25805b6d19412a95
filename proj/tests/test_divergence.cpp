#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "purefed/divergence.hpp"
#include "purefed/rng.hpp"

using namespace purefed;
using namespace purefed::divergence;

namespace {

Vec make_vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (const double x : v) out[i++] = x;
  return out;
}

Vec random_logits(rng::Engine& eng, int c, double scale = 2.0) {
  Vec l(c);
  for (int i = 0; i < c; ++i) l[i] = scale * eng.normal();
  return l;
}

// independent brute-force KL with the same 1e-12 floor convention
double kl_oracle(const Vec& p, const Vec& q) {
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 1e-12) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  }
  return kl;
}

}  // namespace

TEST_CASE("temperature_softmax basics") {
  const Vec p = temperature_softmax(make_vec({0.0, 0.0}), 1.0);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

  // direct evaluation e^2/(e^2+1)
  const Vec q = temperature_softmax(make_vec({2.0, 0.0}), 1.0);
  CHECK(q[0] == doctest::Approx(0.8807970779778823).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(0.1192029220221176).epsilon(1e-12));
}

TEST_CASE("temperature_softmax shift invariance") {
  rng::Engine eng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + static_cast<int>(eng.below(6));
    const Vec l = random_logits(eng, c);
    const double shift = 10.0 * eng.normal();
    const double tau = 0.2 + 3.0 * eng.uniform01();
    const Vec a = temperature_softmax(l, tau);
    const Vec b = temperature_softmax(l + Vec::Constant(c, shift), tau);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("temperature_softmax rejects bad input") {
  CHECK_THROWS_AS(temperature_softmax(make_vec({1.0, 0.0}), 0.0), std::domain_error);
  CHECK_THROWS_AS(temperature_softmax(make_vec({1.0, 0.0}), -1.0), std::domain_error);
  Vec bad = make_vec({1.0, 0.0});
  bad[0] = std::nan("");
  CHECK_THROWS_AS(temperature_softmax(bad, 1.0), std::domain_error);
}

TEST_CASE("entropy known values") {
  CHECK(entropy(make_vec({0.25, 0.25, 0.25, 0.25})) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(entropy(make_vec({1.0, 0.0})) == doctest::Approx(0.0).epsilon(1e-12));
  // direct evaluation of -sum p ln p at softmax([2,0])
  const Vec p = temperature_softmax(make_vec({2.0, 0.0}), 1.0);
  CHECK(entropy(p) == doctest::Approx(0.3653338550872076).epsilon(1e-10));
}

TEST_CASE("entropy validates its input") {
  CHECK_THROWS_AS(entropy(make_vec({0.5, 0.6})), std::domain_error);
  CHECK_THROWS_AS(entropy(make_vec({-0.1, 1.1})), std::domain_error);
}

TEST_CASE("tempered entropy is monotone in tau") {
  rng::Engine eng(11);
  const double taus[] = {1e-4, 1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 10.0, 100.0, 1e4};
  for (int trial = 0; trial < 40; ++trial) {
    const int c = 2 + static_cast<int>(eng.below(7));
    const Vec l = random_logits(eng, c, 3.0);
    double prev = -1.0;
    for (const double tau : taus) {
      const double h = tempered_entropy(l, tau);
      CHECK(h >= prev - 1e-12);
      prev = h;
    }
    // strict increase somewhere for non-constant logits
    CHECK(tempered_entropy(l, 10.0) > tempered_entropy(l, 0.1));
  }
}

TEST_CASE("solver: constant logits return tau 1") {
  const auto sol = solve_aligned_temperature(make_vec({5.0, 5.0, 5.0}), 0.3);
  CHECK(sol.tau == 1.0);
  CHECK_FALSE(sol.clamped);
  const Vec aligned = temperature_softmax(make_vec({5.0, 5.0, 5.0}), sol.tau);
  CHECK(aligned[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("solver: fixed point at tau 1") {
  const Vec l = make_vec({2.0, 0.0});
  const double target = tempered_entropy(l, 1.0);
  const auto sol = solve_aligned_temperature(l, target);
  CHECK_FALSE(sol.clamped);
  CHECK(std::abs(tempered_entropy(l, sol.tau) - target) <= 1e-8);
  CHECK(sol.tau == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("solver: reaches a mid-range target") {
  const Vec l = make_vec({2.0, 0.0});
  const auto sol = solve_aligned_temperature(l, 0.5);
  CHECK_FALSE(sol.clamped);
  CHECK(std::abs(tempered_entropy(l, sol.tau) - 0.5) <= 1e-8);
}

TEST_CASE("solver: random reachable targets hit tolerance") {
  rng::Engine eng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const int c = 2 + static_cast<int>(eng.below(7));
    const Vec l = random_logits(eng, c, 4.0);
    const double h_lo = tempered_entropy(l, 1e-4);
    const double h_hi = tempered_entropy(l, 1e4);
    const double target = h_lo + (h_hi - h_lo) * (0.05 + 0.9 * eng.uniform01());
    const auto sol = solve_aligned_temperature(l, target);
    CHECK_FALSE(sol.clamped);
    CHECK(std::abs(tempered_entropy(l, sol.tau) - target) <= 1e-8);
  }
}

TEST_CASE("solver: unreachable targets clamp instead of aborting") {
  const Vec l = make_vec({30.0, 0.0});
  const auto low = solve_aligned_temperature(l, 1e-12);
  CHECK(low.clamped);
  CHECK(low.tau == doctest::Approx(1e-4));
  TemperatureBracket narrow;
  narrow.tau_max = 0.5;  // ln 2 unreachable for spread-30 logits below tau 0.5
  const auto high = solve_aligned_temperature(l, std::log(2.0) - 1e-12, narrow);
  CHECK(high.clamped);
  CHECK(high.tau == doctest::Approx(0.5));
}

TEST_CASE("kl divergence known values") {
  const Vec p = make_vec({0.5, 0.5});
  CHECK(kl_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(kl_divergence(make_vec({1.0, 0.0}), p) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
  // direct evaluation against softmax([2,0])
  const Vec q = temperature_softmax(make_vec({2.0, 0.0}), 1.0);
  CHECK(kl_divergence(p, q) == doctest::Approx(0.4337808304830272).epsilon(1e-10));
}

TEST_CASE("kl divergence matches the brute-force oracle") {
  rng::Engine eng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(eng.below(7));
    const Vec p = temperature_softmax(random_logits(eng, c), 1.0);
    const Vec q = temperature_softmax(random_logits(eng, c), 1.0);
    const double kl = kl_divergence(p, q);
    CHECK(kl == doctest::Approx(kl_oracle(p, q)).epsilon(1e-12));
    CHECK(kl >= -1e-12);
  }
  CHECK_THROWS_AS(kl_divergence(make_vec({0.5, 0.6}), make_vec({0.5, 0.5})),
                  std::domain_error);
}

TEST_CASE("tkl identical logits vanish") {
  rng::Engine eng(37);
  for (int trial = 0; trial < 30; ++trial) {
    const int c = 2 + static_cast<int>(eng.below(7));
    const Vec l = random_logits(eng, c, 3.0);
    const auto r = tkl(l, l);
    CHECK(std::abs(r.value) <= 1e-9);
    CHECK_FALSE(r.state.any_clamped());
  }
}

TEST_CASE("tkl neutralizes scale and shift of the same logit family") {
  rng::Engine eng(41);
  const double scales[] = {0.5, 3.0};
  for (int trial = 0; trial < 30; ++trial) {
    const int c = 2 + static_cast<int>(eng.below(7));
    const Vec l = random_logits(eng, c, 3.0);
    for (const double s : scales) {
      CHECK(std::abs(tkl(s * l, l).value) <= 1e-6);
    }
    const double b1 = 5.0 * eng.normal();
    const double b2 = 5.0 * eng.normal();
    const double c1 = 0.3 + 3.0 * eng.uniform01();
    const double c2 = 0.3 + 3.0 * eng.uniform01();
    const Vec lhs = c1 * l + Vec::Constant(c, b1);
    const Vec rhs = c2 * l + Vec::Constant(c, b2);
    CHECK(std::abs(tkl(lhs, rhs).value) <= 1e-6);
  }
}

TEST_CASE("tkl is non-negative") {
  rng::Engine eng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const int c = 2 + static_cast<int>(eng.below(7));
    const auto r = tkl(random_logits(eng, c, 3.0), random_logits(eng, c, 3.0));
    CHECK(r.value >= -1e-12);
    CHECK(r.state.target_entropy >= 0.0);
    CHECK(r.state.target_entropy <= std::log(static_cast<double>(c)) + 1e-12);
  }
}

TEST_CASE("balancedness known values") {
  BalancednessConfig cfg;
  cfg.sigma = 1.0;
  // direct evaluation: (2 + 2 e^{-1}) / 4
  CHECK(balancedness(make_vec({1.0, 0.0}), cfg) ==
        doctest::Approx(0.6839397205857212).epsilon(1e-12));
  cfg.sigma = 0.37;
  CHECK(balancedness(make_vec({0.4, 0.4, 0.4}), cfg) == doctest::Approx(1.0));
  Vec single(1);
  single[0] = 0.3;
  CHECK(balancedness(single, cfg) == doctest::Approx(1.0));
}

TEST_CASE("balancedness properties") {
  rng::Engine eng(47);
  BalancednessConfig cfg;
  cfg.sigma = 0.1;
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 1 + static_cast<int>(eng.below(8));
    Vec a(c);
    for (int i = 0; i < c; ++i) a[i] = eng.uniform01();
    const double b = balancedness(a, cfg);
    CHECK(b > 0.0);
    CHECK(b <= 1.0 + 1e-12);

    // permutation invariance
    std::vector<int> perm(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) perm[static_cast<std::size_t>(i)] = i;
    eng.shuffle(perm);
    Vec shuffled(c);
    for (int i = 0; i < c; ++i) shuffled[i] = a[perm[static_cast<std::size_t>(i)]];
    CHECK(balancedness(shuffled, cfg) == doctest::Approx(b).epsilon(1e-12));
  }

  // raising a[0] widens its gap to both other entries: metric never rises
  Vec a = make_vec({0.5, 0.5, 0.2});
  double prev = balancedness(a, cfg);
  for (double step = 0.05; step <= 0.5; step += 0.05) {
    a[0] = 0.5 + step;
    const double b = balancedness(a, cfg);
    CHECK(b <= prev + 1e-12);
    prev = b;
  }

  CHECK_THROWS_AS(balancedness(make_vec({1.2, 0.0}), cfg), std::domain_error);
}
