#pragma once

// Rank/correlation metrics and paired-bootstrap significance.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fuscore/datamodel.hpp"
#include "fuscore/labels.hpp"

namespace fuscore {

/// Average (mid) ranks, 1-based.
std::vector<double> mid_ranks(std::span<const double> x);

double plcc(std::span<const double> pred, std::span<const double> gt);
double srcc(std::span<const double> pred, std::span<const double> gt);
/// Kendall tau-b, O(n log n).
double krcc(std::span<const double> pred, std::span<const double> gt);

struct GroupedScore {
  std::string group_id;
  double mu = 0.0;     // ground truth
  double y_hat = 0.0;  // prediction
};

/// Same-group pairs with distinct GT; prediction ties earn 0.5.
double pair_accuracy(std::span<const GroupedScore> items);

struct GroupTauResult {
  double tau = 0.0;
  std::size_t n_groups = 0;   // groups averaged
  std::size_t n_skipped = 0;  // groups with < 2 items or constant GT
};

/// Unweighted mean of within-group tau-b.
GroupTauResult per_group_tau(std::span<const GroupedScore> items);

/// Prediction distribution used by the evaluation KL: softmax(logits) when
/// present, otherwise the Gaussian-binned (mu_hat, sigma_hat).
LevelDistribution prediction_distribution(const PredictionRecord& rec);

/// Mean over images of KL(pred || label); records matched by image_id.
double eval_kl(std::span<const PredictionRecord> preds, std::span<const std::string> label_ids,
               std::span<const SoftLabel> labels);

struct EvalReport {
  double srcc = 0.0;
  double plcc = 0.0;
  double krcc = 0.0;
  double pair_acc = 0.0;
  double per_group_tau = 0.0;
  std::size_t tau_groups_skipped = 0;
  double eval_kl = 0.0;
  std::size_t n_images = 0;
  std::size_t n_groups = 0;
};

/// Evaluates predictions against annotations. Labels are built from the
/// annotations with `hp` unless supplied (same order as `images`).
EvalReport evaluate(std::span<const AnnotatedImage> images, std::span<const PredictionRecord> preds,
                    const Hyperparams& hp, std::span<const SoftLabel> labels = {});

enum class Metric { kSrcc, kPlcc, kKrcc };

Metric parse_metric(std::string_view s);
std::string_view to_string(Metric m);
double compute_metric(Metric m, std::span<const double> pred, std::span<const double> gt);

struct BootstrapResult {
  double delta = 0.0;
  double p_value = 1.0;
  std::size_t n_used = 0;
  std::size_t n_skipped = 0;  // degenerate resamples
};

/// Paired bootstrap over image indices. Resample r draws from its own stream
/// derived from (seed, r), so results do not depend on evaluation order.
BootstrapResult paired_bootstrap(std::span<const double> pred_a, std::span<const double> pred_b,
                                 std::span<const double> gt, Metric metric, std::size_t n_boot,
                                 std::uint64_t seed);

}  // namespace fuscore
