#pragma once

// Variance decomposition, conflict stratification, counterfactual SRCC
// ceiling and sigma/conflict correlation.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fuscore/datamodel.hpp"

namespace fuscore {

struct VarianceDecomposition {
  double within = 0.0;  // E_g[Var(y | g)]
  double cross = 0.0;   // Var_g[E(y | g)]
  double total = 0.0;   // population variance of y
};

struct GroupValue {
  std::string group_id;
  double y = 0.0;
};

/// Group-size-weighted, population variances.
VarianceDecomposition variance_decomposition(std::span<const GroupValue> items);

enum class Stratum { kLow = 0, kMid = 1, kHigh = 2 };

std::string_view to_string(Stratum s);

struct TertileBoundaries {
  double low_max = 0.45;
  double mid_max = 0.71;
};

/// delta <= low_max -> low; delta <= mid_max -> mid; else high.
Stratum assign_stratum(double delta, const TertileBoundaries& b);

struct TertileSplit {
  TertileBoundaries boundaries;
  std::map<std::string, Stratum> membership;
  std::array<std::size_t, 3> counts{};
};

TertileSplit split_by_delta(std::span<const AnnotatedImage> images, const TertileBoundaries& b);

struct StratumReport {
  Stratum stratum = Stratum::kLow;
  std::size_t n = 0;
  std::optional<double> srcc;      // empty when undefined
  std::string undefined_reason;    // set when srcc is empty
  std::optional<double> gt_std;    // population std of GT y, empty for n = 0
};

struct StratifiedReport {
  TertileBoundaries boundaries;
  std::array<StratumReport, 3> strata;
  double overall_srcc = 0.0;
  std::size_t n_images = 0;
};

StratifiedReport stratify_by_delta(std::span<const AnnotatedImage> images,
                                   std::span<const PredictionRecord> preds, const TertileBoundaries& b);

/// Number of images whose stratum changes when low_max moves by `shift`.
std::size_t boundary_migration(std::span<const AnnotatedImage> images, const TertileBoundaries& b,
                               double shift);

struct CeilingReport {
  double ceiling = 0.0;
  double actual_srcc = 0.0;          // pooled SRCC of the supplied predictions
  std::optional<double> high_srcc;   // achieved within-high-stratum SRCC
  std::size_t transpositions = 0;
  std::string repooling;             // description of the re-pooling map
};

/// Low/mid strata get oracle scores, the high stratum a GT-order
/// permutation corrupted by seeded transpositions until its SRCC is within
/// 0.02 of `floor_srcc`. Each stratum's synthetic scores are the stratum's
/// own sorted GT values placed by rank, then SRCC is re-pooled.
CeilingReport counterfactual_ceiling(std::span<const AnnotatedImage> images,
                                     std::span<const PredictionRecord> preds, const TertileBoundaries& b,
                                     double floor_srcc, std::uint64_t seed = 42);

/// Pearson correlation between predicted sigma and annotation conflict.
double sigma_delta_correlation(std::span<const PredictionRecord> preds,
                               std::span<const AnnotatedImage> images);

}  // namespace fuscore
