#pragma once

// Training objective: per-image KL, within- and cross-group Thurstone
// fidelity, an optional Plackett-Luce diagnostic, and analytic gradients with
// respect to the five level logits of every batch item.

#include <span>
#include <string>
#include <vector>

#include "fuscore/datamodel.hpp"
#include "fuscore/labels.hpp"

namespace fuscore {

struct BatchItem {
  std::string image_id;
  std::string group_id;
  LevelLogits logits{};
  SoftLabel label;
};

struct LossBreakdown {
  double kl = 0.0;
  double fid = 0.0;
  double xfid = 0.0;
  double pl = 0.0;
  double total = 0.0;
  std::size_t n_within_pairs = 0;
  std::size_t n_cross_pairs = 0;
};

/// Max-subtracted softmax. Throws DomainError on non-finite logits.
LevelDistribution softmax_levels(const LevelLogits& logits);

double expectation_readout(const LevelDistribution& dist);

/// Sum_l p_l ln(p_l / q_l), 0 ln 0 = 0, zeros of q floored at 1e-300.
/// Argument order fixes the direction: training uses (label, pred), the
/// evaluation metric uses (pred, label).
double kl_divergence(const LevelDistribution& p, const LevelDistribution& q);

inline constexpr double kProbFloor = 1e-300;

double pair_margin(double sigma_i, double sigma_j);

/// Standard normal CDF through erfc.
double normal_cdf(double x);
double normal_pdf(double x);

/// Phi((mu_i - mu_j) / sigma_ij)
double thurstone_prob(double mu_i, double mu_j, double sigma_ij);

/// 1 - sqrt(P_gt P_pred) - sqrt((1 - P_gt)(1 - P_pred)), clamped to [0, 1].
double fidelity_pair(double p_gt, double p_pred);

struct RankedItem {
  double mu = 0.0;     // ground truth, defines the reference order
  double score = 0.0;  // utility under the model
  std::string tie_key;  // GT ties are ordered by ascending key
};

/// Negative log Plackett-Luce likelihood of the GT-descending order.
/// Throws DomainError for fewer than two items.
double pl_listwise(std::span<const RankedItem> items);

/// Convenience form over (mu, y_hat) pairs; ties keep input order.
double pl_listwise_scalar(std::span<const std::pair<double, double>> mu_and_score);

/// Gradient of pl_listwise with respect to each item's score.
std::vector<double> pl_listwise_grad(std::span<const RankedItem> items);

/// Utility used by the level-distribution PL variant: sum_l (l - 3) ln q_l.
double pl_level_utility(const LevelLogits& logits);

LossBreakdown tripartite_loss(std::span<const BatchItem> batch, const Hyperparams& hp);

/// d total / d logits, one 5-vector per batch item.
std::vector<LevelLogits> tripartite_grad(std::span<const BatchItem> batch, const Hyperparams& hp);

}  // namespace fuscore
