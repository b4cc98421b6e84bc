#include <cmath>

#include "doctest.h"
#include "fuscore/metrics.hpp"
#include "fuscore/rng.hpp"
#include "oracles.hpp"

using namespace fuscore;

namespace {

std::vector<double> quantized(Rng& rng, std::size_t n, int levels) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(rng.index(static_cast<std::size_t>(levels)));
  return v;
}

}  // namespace

TEST_CASE("hand values") {
  const std::vector<double> a{1, 2, 2, 3.5, 0.5, 4}, b{2, 1, 3, 3, 0, 5};
  CHECK(srcc(a, b) == doctest::Approx(0.8676470588235294).epsilon(1e-14));
  const std::vector<double> x{1, 2, 2, 3, 5}, y{1, 1, 2, 4, 3};
  CHECK(krcc(x, y) == doctest::Approx(0.6666666666666666).epsilon(1e-14));
}

TEST_CASE("mid ranks") {
  const std::vector<double> x{10, 20, 20, 5};
  const auto r = mid_ranks(x);
  CHECK(r == std::vector<double>{2, 3.5, 3.5, 1});
}

TEST_CASE("correlations match brute force with heavy ties") {
  Rng rng(41);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 2 + rng.index(40);
    const auto x = quantized(rng, n, 2 + static_cast<int>(rng.index(6)));
    const auto y = quantized(rng, n, 2 + static_cast<int>(rng.index(6)));
    bool cx = true, cy = true;
    for (std::size_t i = 1; i < n; ++i) {
      cx &= x[i] == x[0];
      cy &= y[i] == y[0];
    }
    if (cx || cy) {
      CHECK_THROWS_AS(srcc(x, y), DomainError);
      continue;
    }
    CHECK(srcc(x, y) == doctest::Approx(oracle::spearman(x, y)).epsilon(1e-12));
    CHECK(plcc(x, y) == doctest::Approx(oracle::pearson(x, y)).epsilon(1e-12));
    CHECK(krcc(x, y) == doctest::Approx(oracle::kendall_b(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("krcc on large input") {
  Rng rng(2);
  std::vector<double> x(3000), y(3000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = std::round(rng.normal(0, 3));
    y[i] = std::round(x[i] + rng.normal(0, 2));
  }
  CHECK(krcc(x, y) == doctest::Approx(oracle::kendall_b(x, y)).epsilon(1e-12));
}

TEST_CASE("metric bounds and symmetry") {
  Rng rng(43);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(20), y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      x[i] = rng.normal(0, 1);
      y[i] = rng.normal(0, 1);
    }
    for (auto m : {Metric::kSrcc, Metric::kPlcc, Metric::kKrcc}) {
      const double v = compute_metric(m, x, y);
      CHECK(std::abs(v) <= 1 + 1e-12);
      CHECK(compute_metric(m, y, x) == doctest::Approx(v).epsilon(1e-12));
      CHECK(compute_metric(m, x, x) == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("pair accuracy and per-group tau") {
  Rng rng(47);
  for (int t = 0; t < 200; ++t) {
    std::vector<GroupedScore> items;
    std::vector<oracle::Scored> ref;
    const std::size_t n = 2 + rng.index(29);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string g = "g" + std::to_string(rng.index(4));
      const double mu = static_cast<double>(rng.index(5));
      const double y = static_cast<double>(rng.index(4));
      items.push_back({g, mu, y});
      ref.push_back({g, mu, y});
    }
    const double oracle_acc = oracle::pair_acc(ref);
    if (std::isnan(oracle_acc)) {
      CHECK_THROWS_AS(pair_accuracy(items), DomainError);
    } else {
      CHECK(pair_accuracy(items) == doctest::Approx(oracle_acc).epsilon(1e-12));
    }
    const double oracle_tau = oracle::group_tau(ref);
    if (std::isnan(oracle_tau)) {
      CHECK_THROWS_AS(per_group_tau(items), DomainError);
    } else {
      CHECK(per_group_tau(items).tau == doctest::Approx(oracle_tau).epsilon(1e-12));
    }
  }
}

TEST_CASE("pair accuracy ignores cross-group pairs") {
  const std::vector<GroupedScore> items{{"a", 1, 1}, {"a", 2, 2}, {"b", 0, 10}, {"b", 3, 0}};
  CHECK(pair_accuracy(items) == doctest::Approx(0.5));
}

TEST_CASE("eval_kl direction and matching") {
  PredictionRecord p = PredictionRecord::from_logits("x", {0, 0, 1, 0, 0});
  const SoftLabel label = make_soft_label(3.0, 0.5);
  const std::vector<PredictionRecord> preds{p};
  const std::vector<std::string> ids{"x"};
  const std::vector<SoftLabel> labels{label};
  CHECK(eval_kl(preds, ids, labels) == doctest::Approx(kl_divergence(prediction_distribution(p), label.dist)));
  const std::vector<std::string> other{"y"};
  CHECK_THROWS_AS(eval_kl(preds, other, labels), DataError);
}

TEST_CASE("bootstrap is seeded and one-sided symmetric") {
  Rng rng(53);
  std::vector<double> gt(200), a(200), b(200);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    gt[i] = rng.normal(0, 1);
    a[i] = gt[i] + rng.normal(0, 0.3);
    b[i] = gt[i] + rng.normal(0, 1.5);
  }
  const auto r1 = paired_bootstrap(a, b, gt, Metric::kSrcc, 500, 9);
  const auto r2 = paired_bootstrap(a, b, gt, Metric::kSrcc, 500, 9);
  CHECK(r1.delta == r2.delta);
  CHECK(r1.p_value == r2.p_value);
  CHECK(r1.delta > 0);
  CHECK(r1.p_value < 0.05);
  const auto same = paired_bootstrap(a, a, gt, Metric::kSrcc, 200, 9);
  CHECK(same.delta == 0.0);
  CHECK(same.p_value == 1.0);
}

TEST_CASE("evaluate reports the first missing id") {
  std::vector<AnnotatedImage> images{{"i1", "g", "m", {3, 3, 3, 3}, 3}, {"i2", "g", "m", {3, 3, 3, 4}, 3.25}};
  std::vector<PredictionRecord> preds{PredictionRecord::from_logits("i1", {0, 0, 0, 0, 0})};
  try {
    evaluate(images, preds, Hyperparams{});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("i2") != std::string::npos);
  }
}
