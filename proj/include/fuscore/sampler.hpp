#pragma once

// Group-stratified micro-batch planning: every micro-batch holds m distinct
// groups with n images each, so both within- and cross-group pair sets are
// non-empty.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fuscore/datamodel.hpp"

namespace fuscore {

struct SamplerConfig {
  std::size_t m = 2;  // groups per micro-batch
  std::size_t n = 4;  // images per group
  std::size_t accumulation = 2;
  std::uint64_t seed = 42;

  void validate() const;
};

using MicroBatch = std::vector<std::string>;  // image ids, group-major

struct EpochPlan {
  std::vector<MicroBatch> batches;
  std::vector<std::string> skipped_groups;  // fewer than n images
};

/// Plans one epoch. Each group is cut into ceil(size / n) chunks after a
/// seeded shuffle; a trailing partial chunk is padded with other images of
/// the same group. Chunks are then combined m distinct groups at a time.
EpochPlan make_epoch(std::span<const AnnotatedImage> images, const SamplerConfig& cfg);

/// Within-group pairs per micro-batch: m * C(n, 2).
std::size_t within_pairs_per_batch(const SamplerConfig& cfg);
/// Cross-group pairs per micro-batch: C(m, 2) * n^2.
std::size_t cross_pairs_per_batch(const SamplerConfig& cfg);

}  // namespace fuscore
