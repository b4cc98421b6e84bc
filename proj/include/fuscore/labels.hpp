#pragma once

// Sub-dimension-aware soft labels: conflict signal, width, Gaussian binning
// over the five levels, and exact first-moment adjustment.

#include "fuscore/datamodel.hpp"

namespace fuscore {

struct SoftLabel {
  LevelDistribution dist = LevelDistribution::uniform();
  double mu = 3.0;     // center, equal to the overall score
  double sigma = 0.3;  // label width
  double delta = 0.0;  // sub-dimension conflict
};

/// Population standard deviation (divide by 4) of the sub-scores.
double dimensional_conflict(const SubScores& sub_scores);

/// clamp(sigma0 + lambda_c * delta, sigma_min, sigma_max)
double label_width(double delta, const Hyperparams& hp);

/// p_l proportional to exp(-(l - mu)^2 / (2 sigma^2)), l = 1..5.
LevelDistribution gaussian_bin(double mu, double sigma);

/// Returns a distribution with expectation exactly `mu` (1e-9).
///
/// Mass eps = mu - E is moved between the two levels bracketing mu
/// (floor/ceil; mu and mu+1 when mu is integral, mu-1 and mu at the top).
/// When the source level holds less than |eps|, the input is first mixed with
/// the two-point distribution on those levels whose mean is mu, using the
/// smallest mixing weight that makes the shift feasible.
LevelDistribution enforce_first_moment(const LevelDistribution& dist, double mu);

SoftLabel build_soft_label(const AnnotatedImage& img, const Hyperparams& hp);

/// Label for a known center/width pair (delta carried through unchanged).
SoftLabel make_soft_label(double mu, double sigma, double delta = 0.0);

}  // namespace fuscore
