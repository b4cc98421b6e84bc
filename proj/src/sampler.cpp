#include "fuscore/sampler.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>

#include "fuscore/rng.hpp"

namespace fuscore {

void SamplerConfig::validate() const {
  if (m < 2) throw DataError("sampler: m must be >= 2");
  if (n < 2) throw DataError("sampler: n must be >= 2");
  if (accumulation < 1) throw DataError("sampler: accumulation must be >= 1");
}

std::size_t within_pairs_per_batch(const SamplerConfig& cfg) { return cfg.m * cfg.n * (cfg.n - 1) / 2; }

std::size_t cross_pairs_per_batch(const SamplerConfig& cfg) {
  return cfg.m * (cfg.m - 1) / 2 * cfg.n * cfg.n;
}

namespace {

std::vector<std::string> draw_without_replacement(std::vector<std::string> pool, std::size_t k, Rng& rng) {
  rng.shuffle(std::span<std::string>(pool));
  pool.resize(k);
  return pool;
}

}  // namespace

EpochPlan make_epoch(std::span<const AnnotatedImage> images, const SamplerConfig& cfg) {
  cfg.validate();
  std::map<std::string, std::vector<std::string>> by_group;
  for (const auto& img : images) by_group[img.group_id].push_back(img.image_id);

  EpochPlan plan;
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> members;
  for (auto& [g, ids] : by_group) {
    if (ids.size() < cfg.n) {
      plan.skipped_groups.push_back(g);
      continue;
    }
    names.push_back(g);
    members.push_back(ids);
  }
  if (names.size() < cfg.m) {
    throw DataError("sampler: need at least " + std::to_string(cfg.m) + " groups with >= " +
                    std::to_string(cfg.n) + " images, found " + std::to_string(names.size()));
  }

  Rng rng(cfg.seed);
  std::vector<std::deque<MicroBatch>> chunks(names.size());
  for (std::size_t g = 0; g < names.size(); ++g) {
    auto ids = members[g];
    rng.shuffle(std::span<std::string>(ids));
    for (std::size_t start = 0; start < ids.size(); start += cfg.n) {
      const std::size_t end = std::min(start + cfg.n, ids.size());
      MicroBatch chunk(ids.begin() + static_cast<std::ptrdiff_t>(start),
                       ids.begin() + static_cast<std::ptrdiff_t>(end));
      if (chunk.size() < cfg.n) {
        std::vector<std::string> rest(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(start));
        const auto pad = draw_without_replacement(rest, cfg.n - chunk.size(), rng);
        chunk.insert(chunk.end(), pad.begin(), pad.end());
      }
      chunks[g].push_back(std::move(chunk));
    }
  }

  // Combine the m groups with the most remaining chunks; random tie-break.
  std::vector<std::size_t> order(names.size());
  std::vector<std::uint64_t> key(names.size());
  while (true) {
    std::vector<std::size_t> live;
    for (std::size_t g = 0; g < names.size(); ++g) {
      if (!chunks[g].empty()) live.push_back(g);
    }
    if (live.size() < cfg.m) break;
    for (std::size_t g : live) key[g] = rng.next_u64();
    std::partial_sort(live.begin(), live.begin() + static_cast<std::ptrdiff_t>(cfg.m), live.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (chunks[a].size() != chunks[b].size()) return chunks[a].size() > chunks[b].size();
                        return key[a] < key[b];
                      });
    MicroBatch batch;
    for (std::size_t k = 0; k < cfg.m; ++k) {
      auto& q = chunks[live[k]];
      batch.insert(batch.end(), q.front().begin(), q.front().end());
      q.pop_front();
    }
    plan.batches.push_back(std::move(batch));
  }

  // Leftover chunks of fewer than m groups: partner them with fresh draws
  // from other groups.
  for (std::size_t g = 0; g < names.size(); ++g) {
    while (!chunks[g].empty()) {
      MicroBatch batch = chunks[g].front();
      chunks[g].pop_front();
      std::vector<std::size_t> others;
      for (std::size_t h = 0; h < names.size(); ++h) {
        if (h != g) others.push_back(h);
      }
      rng.shuffle(std::span<std::size_t>(others));
      for (std::size_t k = 0; k + 1 < cfg.m; ++k) {
        const auto pick = draw_without_replacement(members[others[k]], cfg.n, rng);
        batch.insert(batch.end(), pick.begin(), pick.end());
      }
      plan.batches.push_back(std::move(batch));
    }
  }

  rng.shuffle(std::span<MicroBatch>(plan.batches));
  return plan;
}

}  // namespace fuscore
