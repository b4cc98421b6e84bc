#include "fuscore/labels.hpp"

#include <algorithm>
#include <cmath>

namespace fuscore {

double dimensional_conflict(const SubScores& s) {
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= kNumSubScores;
  double ss = 0.0;
  for (double v : s) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / kNumSubScores);
}

double label_width(double delta, const Hyperparams& hp) {
  if (!(delta >= 0.0)) throw DomainError("label_width: delta must be >= 0");
  return std::clamp(hp.sigma0 + hp.lambda_c * delta, hp.sigma_min, hp.sigma_max);
}

LevelDistribution gaussian_bin(double mu, double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("gaussian_bin: sigma must be > 0");
  if (!std::isfinite(mu)) throw DomainError("gaussian_bin: mu must be finite");
  LevelProbs logw{};
  double max_logw = -INFINITY;
  for (int l = 0; l < kNumLevels; ++l) {
    const double d = (l + 1) - mu;
    logw[l] = -d * d / (2.0 * sigma * sigma);
    max_logw = std::max(max_logw, logw[l]);
  }
  LevelProbs w{};
  for (int l = 0; l < kNumLevels; ++l) w[l] = std::exp(logw[l] - max_logw);
  return LevelDistribution::normalized(w);
}

LevelDistribution enforce_first_moment(const LevelDistribution& dist, double mu) {
  if (!(mu >= kMinScore && mu <= kMaxScore)) {
    throw DomainError("enforce_first_moment: mu=" + format_double(mu) + " outside [1,5]");
  }
  const double eps = mu - dist.expectation();
  if (std::abs(eps) <= 1e-12) return dist;

  // Adjacent levels (1-based) bracketing mu.
  int lo = static_cast<int>(std::floor(mu));
  int hi = static_cast<int>(std::ceil(mu));
  if (lo == hi) {
    if (hi < kNumLevels) {
      ++hi;
    } else {
      --lo;
    }
  }
  // Two-point distribution on {lo, hi} with mean mu.
  LevelProbs target{};
  target[lo - 1] = static_cast<double>(hi) - mu;
  target[hi - 1] = mu - static_cast<double>(lo);

  // Moving mass t from lo to hi raises the mean by t.
  const int src = eps > 0.0 ? lo : hi;
  const int dst = eps > 0.0 ? hi : lo;
  const double need = std::abs(eps);
  const double have = dist[src - 1];
  const double t_src = target[src - 1];

  double alpha = 0.0;
  if (have < need) {
    // (1-a) have + a t_src >= (1-a) need
    const double denom = need - have + t_src;
    alpha = denom > 0.0 ? std::min(1.0, (need - have) / denom) : 1.0;
  }

  LevelProbs p{};
  for (int l = 0; l < kNumLevels; ++l) p[l] = (1.0 - alpha) * dist[l] + alpha * target[l];
  const double shift = (1.0 - alpha) * need;
  p[src - 1] = std::max(0.0, p[src - 1] - shift);
  p[dst - 1] += shift;

  // Final correction of rounding residue on the same two levels.
  double e = 0.0, sum = 0.0;
  for (int l = 0; l < kNumLevels; ++l) {
    e += (l + 1) * p[l];
    sum += p[l];
  }
  for (double& x : p) x /= sum;
  e /= sum;
  const double residue = mu - e;
  if (residue > 0.0 && p[lo - 1] >= residue) {
    p[lo - 1] -= residue;
    p[hi - 1] += residue;
  } else if (residue < 0.0 && p[hi - 1] >= -residue) {
    p[hi - 1] += residue;
    p[lo - 1] -= residue;
  }
  return LevelDistribution(p);
}

SoftLabel build_soft_label(const AnnotatedImage& img, const Hyperparams& hp) {
  validate(img);
  const double delta = dimensional_conflict(img.sub_scores);
  const double sigma = label_width(delta, hp);
  return SoftLabel{enforce_first_moment(gaussian_bin(img.overall, sigma), img.overall), img.overall,
                   sigma, delta};
}

SoftLabel make_soft_label(double mu, double sigma, double delta) {
  return SoftLabel{enforce_first_moment(gaussian_bin(mu, sigma), mu), mu, sigma, delta};
}

}  // namespace fuscore
