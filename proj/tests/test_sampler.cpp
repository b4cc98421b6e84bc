#include <map>
#include <set>

#include "doctest.h"
#include "fuscore/sampler.hpp"
#include "fuscore/rng.hpp"

using namespace fuscore;

namespace {

std::vector<AnnotatedImage> ragged(std::size_t groups, std::uint64_t seed, std::size_t min_size = 1) {
  Rng rng(seed);
  std::vector<AnnotatedImage> out;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t n = min_size + rng.index(12);
    for (std::size_t k = 0; k < n; ++k) {
      out.push_back({"g" + std::to_string(g) + "_" + std::to_string(k), "g" + std::to_string(g), "m", {3, 3, 3, 3}, 3});
    }
  }
  return out;
}

std::map<std::string, std::string> group_of(const std::vector<AnnotatedImage>& images) {
  std::map<std::string, std::string> m;
  for (const auto& img : images) m[img.image_id] = img.group_id;
  return m;
}

}  // namespace

TEST_CASE("pair counts per layout") {
  SamplerConfig c;
  CHECK(within_pairs_per_batch(c) == 12);
  CHECK(cross_pairs_per_batch(c) == 16);
  c.m = 3;
  c.n = 2;
  CHECK(within_pairs_per_batch(c) == 3);
  CHECK(cross_pairs_per_batch(c) == 12);
}

TEST_CASE("every batch has m distinct groups of n distinct images") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto images = ragged(15, seed);
    const auto groups = group_of(images);
    SamplerConfig c;
    c.seed = seed;
    const auto plan = make_epoch(images, c);
    CHECK_FALSE(plan.batches.empty());
    for (const auto& b : plan.batches) {
      REQUIRE(b.size() == c.m * c.n);
      std::set<std::string> ids(b.begin(), b.end());
      CHECK(ids.size() == b.size());
      std::map<std::string, int> per_group;
      for (const auto& id : b) ++per_group[groups.at(id)];
      CHECK(per_group.size() == c.m);
      for (const auto& [g, k] : per_group) CHECK(k == static_cast<int>(c.n));
    }
  }
}

TEST_CASE("every eligible image is visited") {
  const auto images = ragged(10, 5);
  SamplerConfig c;
  const auto plan = make_epoch(images, c);
  std::set<std::string> skipped(plan.skipped_groups.begin(), plan.skipped_groups.end());
  std::set<std::string> seen;
  for (const auto& b : plan.batches) seen.insert(b.begin(), b.end());
  for (const auto& img : images) {
    if (!skipped.count(img.group_id)) CHECK(seen.count(img.image_id) == 1);
  }
}

TEST_CASE("small groups are skipped") {
  auto images = ragged(6, 9, 4);
  images.push_back({"tiny_0", "tiny", "m", {3, 3, 3, 3}, 3});
  const auto plan = make_epoch(images, SamplerConfig{});
  CHECK(plan.skipped_groups == std::vector<std::string>{"tiny"});
}

TEST_CASE("plans are seeded") {
  const auto images = ragged(12, 3);
  SamplerConfig c;
  const auto a = make_epoch(images, c);
  const auto b = make_epoch(images, c);
  CHECK(a.batches == b.batches);
  c.seed = 43;
  CHECK(make_epoch(images, c).batches != a.batches);
}

TEST_CASE("invalid configurations") {
  SamplerConfig c;
  c.m = 1;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = {};
  c.n = 1;
  CHECK_THROWS_AS(c.validate(), DataError);
  const std::vector<AnnotatedImage> one_group{{"a", "g", "m", {3, 3, 3, 3}, 3}, {"b", "g", "m", {3, 3, 3, 3}, 3},
                                              {"c", "g", "m", {3, 3, 3, 3}, 3}, {"d", "g", "m", {3, 3, 3, 3}, 3}};
  CHECK_THROWS_AS(make_epoch(one_group, SamplerConfig{}), DataError);
}
