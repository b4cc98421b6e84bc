#include <cmath>

#include "doctest.h"
#include "fuscore/losses.hpp"
#include "fuscore/rng.hpp"
#include "oracles.hpp"

using namespace fuscore;

namespace {

std::vector<BatchItem> fixture() {
  return {
      {"a", "g", {0.1, 0.3, -0.2, 0.5, 0.0}, make_soft_label(3.25, 0.4949)},
      {"b", "g", {1.0, 0.2, 0.0, -0.5, -1.0}, make_soft_label(2.5, 0.3)},
      {"c", "g", {-1, -0.5, 0, 0.7, 1.2}, make_soft_label(4.0, 0.8)},
  };
}

std::vector<BatchItem> random_batch(Rng& rng, std::size_t m, std::size_t n) {
  std::vector<BatchItem> b;
  for (std::size_t g = 0; g < m; ++g) {
    for (std::size_t k = 0; k < n; ++k) {
      BatchItem it;
      it.image_id = std::to_string(g) + "_" + std::to_string(k);
      it.group_id = std::to_string(g);
      for (auto& z : it.logits) z = rng.normal(0, 1.5);
      it.label = make_soft_label(rng.uniform(1, 5), rng.uniform(0.15, 1.2));
      b.push_back(it);
    }
  }
  return b;
}

double max_rel(const std::vector<LevelLogits>& a, const std::vector<LevelLogits>& f) {
  double r = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (int l = 0; l < 5; ++l) {
      const double d = std::abs(a[i][l] - f[i][l]);
      r = std::max(r, d / std::max({std::abs(a[i][l]), std::abs(f[i][l]), 1e-7}));
    }
  }
  return r;
}

}  // namespace

TEST_CASE("KL against a hand value") {
  const auto q = softmax_levels({0, 0, std::log(2.0), 0, 0});
  CHECK(kl_divergence(LevelDistribution::uniform(), q) == doctest::Approx(0.043692120681965735).epsilon(1e-14));
  CHECK(kl_divergence(q, q) == 0.0);
}

TEST_CASE("KL is non-negative and zero at equality") {
  Rng rng(5);
  for (int t = 0; t < 500; ++t) {
    LevelLogits a, b;
    for (auto& z : a) z = rng.normal(0, 2);
    for (auto& z : b) z = rng.normal(0, 2);
    CHECK(kl_divergence(softmax_levels(a), softmax_levels(b)) >= 0);
    CHECK(kl_divergence(softmax_levels(a), softmax_levels(a)) == doctest::Approx(0).epsilon(1e-15));
  }
}

TEST_CASE("softmax rejects non-finite logits") {
  CHECK_THROWS_AS(softmax_levels({0, NAN, 0, 0, 0}), DomainError);
  CHECK_THROWS_AS(softmax_levels({0, INFINITY, 0, 0, 0}), DomainError);
  const auto big = softmax_levels({1000, 0, 0, 0, 0});
  CHECK(big[0] == doctest::Approx(1.0));
}

TEST_CASE("pair terms") {
  CHECK(pair_margin(0.15, 1.2) == doctest::Approx(1.2093386622447824).epsilon(1e-15));
  CHECK(normal_cdf(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-15));
  CHECK(normal_cdf(-30.0) > 0.0);
  CHECK(normal_cdf(-30.0) < 1e-190);
  CHECK(fidelity_pair(0.8, 0.5) == doctest::Approx(0.051316701949486176).epsilon(1e-14));
  CHECK(fidelity_pair(0.3, 0.3) == doctest::Approx(0).epsilon(1e-15));
  CHECK(fidelity_pair(1.0, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("fidelity is bounded and vanishes only on the diagonal") {
  for (int i = 0; i <= 50; ++i) {
    for (int j = 0; j <= 50; ++j) {
      const double f = fidelity_pair(i / 50.0, j / 50.0);
      CHECK(f >= 0);
      CHECK(f <= 1);
      if (i != j) CHECK(f > 1e-12);
    }
  }
}

TEST_CASE("tripartite loss on a fixed batch") {
  const auto lb = tripartite_loss(fixture(), Hyperparams{});
  CHECK(lb.kl == doctest::Approx(0.7367221196382366).epsilon(1e-12));
  CHECK(lb.fid == doctest::Approx(0.0033928677259923066).epsilon(1e-10));
  CHECK(lb.xfid == 0.0);
  CHECK(lb.total == doctest::Approx(0.740114987364229).epsilon(1e-12));
  CHECK(lb.n_within_pairs == 3);
  CHECK(lb.n_cross_pairs == 0);
}

TEST_CASE("tripartite loss matches the pair-enumeration oracle") {
  Rng rng(17);
  const Hyperparams hp;
  for (int t = 0; t < 200; ++t) {
    const auto b = random_batch(rng, 1 + rng.index(3), 1 + rng.index(4));
    if (b.size() < 2) continue;
    CHECK(tripartite_loss(b, hp).total == doctest::Approx(oracle::tripartite_total(b, hp)).epsilon(1e-12));
  }
}

TEST_CASE("pair counts for the 2x4 layout") {
  Rng rng(1);
  const auto lb = tripartite_loss(random_batch(rng, 2, 4), Hyperparams{});
  CHECK(lb.n_within_pairs == 12);
  CHECK(lb.n_cross_pairs == 16);
}

TEST_CASE("analytic gradient matches finite differences") {
  Rng rng(23);
  const Hyperparams hp;
  for (int t = 0; t < 50; ++t) {
    const auto b = random_batch(rng, 2, 1 + rng.index(4));
    const auto a = tripartite_grad(b, hp);
    const auto f = oracle::finite_diff(b, [&](const auto& x) { return tripartite_loss(x, hp).total; }, 1e-5);
    CHECK(max_rel(a, f) < 1e-5);
  }
}

TEST_CASE("gradient with the listwise term") {
  Rng rng(29);
  for (auto variant : {PlVariant::kScalarReadout, PlVariant::kLevelDistribution}) {
    Hyperparams hp;
    hp.lambda_pl = 0.3;
    hp.pl_variant = variant;
    for (int t = 0; t < 20; ++t) {
      const auto b = random_batch(rng, 2, 3);
      const auto a = tripartite_grad(b, hp);
      const auto f = oracle::finite_diff(b, [&](const auto& x) { return tripartite_loss(x, hp).total; }, 1e-5);
      CHECK(max_rel(a, f) < 1e-5);
    }
  }
}

TEST_CASE("gradient vanishes at the global minimum") {
  // Predictions equal to the labels: KL is stationary and every fidelity pair is zero.
  auto b = fixture();
  for (auto& it : b) {
    for (int l = 0; l < 5; ++l) it.logits[l] = std::log(std::max(it.label.dist[l], 1e-300));
  }
  for (const auto& row : tripartite_grad(b, Hyperparams{})) {
    for (double g : row) CHECK(std::abs(g) < 1e-12);
  }
}

TEST_CASE("Plackett-Luce likelihood") {
  std::vector<RankedItem> items = {{3.0, 2.0, "a"}, {2.0, 1.0, "b"}, {1.0, 0.0, "c"}};
  CHECK(pl_listwise(items) == doctest::Approx(0.7208676519626029).epsilon(1e-14));
  // Order of the input does not matter, only GT.
  std::vector<RankedItem> shuffled = {items[2], items[0], items[1]};
  CHECK(pl_listwise(shuffled) == doctest::Approx(0.7208676519626029).epsilon(1e-14));
  CHECK_THROWS_AS(pl_listwise(std::span(items).first(1)), DomainError);
}

TEST_CASE("Plackett-Luce gradient") {
  Rng rng(31);
  for (int t = 0; t < 100; ++t) {
    std::vector<RankedItem> items;
    for (int i = 0; i < 6; ++i) items.push_back({rng.uniform(1, 5), rng.normal(0, 1), std::to_string(i)});
    const auto g = pl_listwise_grad(items);
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto up = items, down = items;
      up[i].score += 1e-6;
      down[i].score -= 1e-6;
      CHECK(g[i] == doctest::Approx((pl_listwise(up) - pl_listwise(down)) / 2e-6).epsilon(1e-6));
    }
  }
}

TEST_CASE("level utility") {
  const LevelLogits z{0.5, 0.1, 0.0, -0.2, 0.3};
  const auto q = softmax_levels(z);
  double u = 0;
  for (int l = 0; l < 5; ++l) u += (l - 2) * std::log(q[l]);
  CHECK(pl_level_utility(z) == doctest::Approx(u).epsilon(1e-14));
}
