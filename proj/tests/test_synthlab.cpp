#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <set>

#include "doctest.h"
#include "fuscore/analysis.hpp"
#include "fuscore/labels.hpp"
#include "fuscore/metrics.hpp"
#include "fuscore/synthlab.hpp"

using namespace fuscore;

namespace {

// E[(1 + c)^2] under the planted conflict mixture.
double coupling_moment() {
  const auto part = [](double a, double b) { return (std::pow(1 + b, 3) - std::pow(1 + a, 3)) / (3 * (b - a)); };
  return 0.5 * part(0, 0.45) + 0.23 * part(0.45, 0.71) + 0.27 * part(0.71, 1.2);
}

double mechanism(const SynthCorpus& c) {
  std::vector<double> d, s;
  for (const auto& img : c.annotations) {
    d.push_back(dimensional_conflict(img.sub_scores));
    s.push_back(rater_disagreement(c, img.image_id));
  }
  return plcc(d, s);
}

std::vector<std::string> all_groups(const SynthCorpus& c) {
  std::set<std::string> g;
  for (const auto& img : c.annotations) g.insert(img.group_id);
  return {g.begin(), g.end()};
}

}  // namespace

TEST_CASE("corpus identities") {
  const auto c = generate(SynthConfig{});
  CHECK(c.annotations.size() == 200 * 11);
  for (const auto& img : c.annotations) {
    validate(img);
    const auto& r = c.rater_ratings.at(img.image_id);
    CHECK(std::accumulate(r.begin(), r.end(), 0.0) / r.size() == doctest::Approx(img.overall).epsilon(1e-12));
    const double mean = (img.sub_scores[0] + img.sub_scores[1] + img.sub_scores[2] + img.sub_scores[3]) / 4;
    CHECK(std::abs(mean - img.overall) < 1e-9);
  }
}

TEST_CASE("noiseless raters agree and conflict is as planted") {
  SynthConfig cfg;
  cfg.rater_noise = 0;
  cfg.consensus_coupling = 0;
  const auto c = generate(cfg);
  for (const auto& img : c.annotations) {
    CHECK(rater_disagreement(c, img.image_id) == 0.0);
    const double planted = c.planted_conflict.at(img.image_id);
    if (img.overall - planted >= 1 && img.overall + planted <= 5) {
      CHECK(dimensional_conflict(img.sub_scores) == doctest::Approx(planted).epsilon(1e-12));
    }
  }
}

TEST_CASE("variance components follow the generator") {
  SynthConfig cfg;
  cfg.n_groups = 5000;
  cfg.seed = 5;
  const auto c = generate(cfg);
  std::vector<GroupValue> gv;
  for (const auto& img : c.annotations) gv.push_back({img.group_id, img.overall});
  const auto d = variance_decomposition(gv);
  const double m = static_cast<double>(cfg.n_methods), r = static_cast<double>(cfg.n_raters);
  const double image_var =
      cfg.method_spread * cfg.method_spread +
      (cfg.rater_noise * cfg.rater_noise * coupling_moment() + 0.0625 / 12.0) / r;
  const double within = (1 - 1 / m) * image_var;
  const double cross = cfg.scene_spread * cfg.scene_spread + image_var / m;
  CHECK(d.within == doctest::Approx(within).epsilon(0.05));
  CHECK(d.cross == doctest::Approx(cross).epsilon(0.05));
}

TEST_CASE("no method spread leaves only rater noise within groups") {
  SynthConfig cfg;
  cfg.n_groups = 5000;
  cfg.method_spread = 0;
  const auto c = generate(cfg);
  std::vector<GroupValue> gv;
  for (const auto& img : c.annotations) gv.push_back({img.group_id, img.overall});
  const auto d = variance_decomposition(gv);
  const double noise = (cfg.rater_noise * cfg.rater_noise * coupling_moment() + 0.0625 / 12.0) / cfg.n_raters;
  CHECK(d.within == doctest::Approx((1 - 1.0 / cfg.n_methods) * noise).epsilon(0.05));
  CHECK(d.cross == doctest::Approx(cfg.scene_spread * cfg.scene_spread).epsilon(0.05));
}

TEST_CASE("coupling strengthens the conflict/disagreement link") {
  std::vector<double> avg;
  for (double coupling : {0.0, 0.5, 1.0}) {
    double sum = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
      SynthConfig cfg;
      cfg.consensus_coupling = coupling;
      cfg.seed = seed;
      sum += mechanism(generate(cfg));
    }
    avg.push_back(sum / 3);
  }
  CHECK(avg[0] <= avg[1]);
  CHECK(avg[1] <= avg[2]);
  CHECK(avg[2] > 0.3);
}

TEST_CASE("generation is deterministic") {
  const auto a = generate(SynthConfig{});
  const auto b = generate(SynthConfig{});
  CHECK(a.annotations == b.annotations);
  CHECK(a.features == b.features);
}

TEST_CASE("corpus round trip") {
  SynthConfig cfg;
  cfg.n_groups = 5;
  const auto a = generate(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "fuscore_test_corpus";
  save_corpus(a, dir.string());
  const auto b = load_corpus(dir.string());
  CHECK(a.annotations == b.annotations);
  CHECK(a.features == b.features);
  CHECK(a.rater_ratings == b.rater_ratings);
  CHECK(a.latent_quality == b.latent_quality);
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero scorer predicts the uniform distribution") {
  const auto c = generate(SynthConfig{});
  const std::vector<std::string> ids{c.annotations[0].image_id};
  const auto p = predict(ToyScorer::zeros(c.feature_dim), c, ids);
  CHECK(p[0].mu_hat == doctest::Approx(3.0));
  CHECK(p[0].sigma_hat == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("scorer JSON round trip") {
  ToyScorer s = ToyScorer::zeros(3);
  for (std::size_t i = 0; i < s.weights.size(); ++i) s.weights[i] = 0.1 * static_cast<double>(i) - 0.37;
  s.bias = {0.1, -0.2, 1.0 / 3.0, 0, 5};
  const auto back = scorer_from_json(scorer_to_json(s));
  CHECK(back.weights == s.weights);
  CHECK(back.bias == s.bias);
}

TEST_CASE("training") {
  SynthConfig cfg;
  cfg.n_groups = 60;
  const auto c = generate(cfg);
  const auto split = group_disjoint_split(all_groups(c), SplitFractions{}, 1);
  const auto train = split.groups_in(Bucket::kTrain);
  const auto test_groups = split.groups_in(Bucket::kTest);

  SUBCASE("lr = 0 is a no-op") {
    TrainConfig t;
    t.steps = 20;
    t.lr = 0;
    const auto r = train_toy(c, train, Hyperparams{}, t);
    CHECK(r.scorer.weights == ToyScorer::zeros(c.feature_dim).weights);
    CHECK(r.final_train_loss == r.initial_train_loss);
  }

  SUBCASE("loss halves and the scorer ranks well") {
    TrainConfig t;
    const auto r = train_toy(c, train, Hyperparams{}, t);
    CHECK(r.curve.size() == t.steps);
    CHECK(r.final_train_loss <= 0.5 * r.initial_train_loss);
    const auto test = select_groups(c.annotations, test_groups);
    std::vector<std::string> ids;
    for (const auto& img : test) ids.push_back(img.image_id);
    const auto e = evaluate(test, predict(r.scorer, c, ids), Hyperparams{});
    CHECK(e.srcc > 0.8);
  }

  SUBCASE("same seed, same curve") {
    TrainConfig t;
    t.steps = 50;
    const auto a = train_toy(c, train, Hyperparams{}, t);
    const auto b = train_toy(c, train, Hyperparams{}, t);
    REQUIRE(a.curve.size() == b.curve.size());
    for (std::size_t i = 0; i < a.curve.size(); ++i) CHECK(a.curve[i].total == b.curve[i].total);
    CHECK(a.scorer.weights == b.scorer.weights);
  }

  SUBCASE("divergence is detected") {
    TrainConfig t;
    t.steps = 200;
    t.lr = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(train_toy(c, train, Hyperparams{}, t), TrainingDiverged);
  }
}
