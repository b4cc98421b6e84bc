#include "fuscore/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <boost/math/distributions/normal.hpp>

#include "fuscore/datamodel.hpp"
#include "fuscore/optimize.hpp"
#include "fuscore/rng.hpp"

namespace fuscore {

std::vector<double> nominal_coverage_grid(std::size_t n_bins) {
  if (n_bins == 0) throw DomainError("coverage grid needs at least one bin");
  std::vector<double> grid(n_bins);
  for (std::size_t b = 0; b < n_bins; ++b) {
    grid[b] = static_cast<double>(2 * b + 1) / static_cast<double>(2 * n_bins);
  }
  return grid;
}

double coverage_ece(std::span<const double> residuals, std::span<const double> sigmas,
                    std::span<const double> grid) {
  if (residuals.empty()) throw DomainError("coverage_ece: empty input");
  if (residuals.size() != sigmas.size()) throw DomainError("coverage_ece: length mismatch");
  const boost::math::normal_distribution<double> std_normal;
  std::vector<double> z(grid.size());
  for (std::size_t b = 0; b < grid.size(); ++b) z[b] = boost::math::quantile(std_normal, 0.5 * (1.0 + grid[b]));

  std::vector<std::size_t> covered(grid.size(), 0);
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const double r = std::abs(residuals[i]);
    const double s = std::max(sigmas[i], kSigmaFloor);
    for (std::size_t b = 0; b < grid.size(); ++b) {
      if (r <= z[b] * s) ++covered[b];
    }
  }
  const double n = static_cast<double>(residuals.size());
  double ece = 0.0;
  for (std::size_t b = 0; b < grid.size(); ++b) ece += std::abs(static_cast<double>(covered[b]) / n - grid[b]);
  return ece / static_cast<double>(grid.size());
}

double coverage_ece(std::span<const double> residuals, std::span<const double> sigmas) {
  const auto grid = nominal_coverage_grid();
  return coverage_ece(residuals, sigmas, grid);
}

namespace {

double scaled_ece(std::span<const double> residuals, std::span<const double> sigmas,
                  std::span<const double> grid, double tau) {
  std::vector<double> s(sigmas.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = tau * sigmas[i];
  return coverage_ece(residuals, s, grid);
}

}  // namespace

double fit_tau_star(std::span<const double> residuals, std::span<const double> sigmas) {
  if (residuals.empty()) throw DomainError("fit_tau_star: empty calibration set");
  const auto grid = nominal_coverage_grid();
  const auto objective = [&](double tau) { return scaled_ece(residuals, sigmas, grid, tau); };

  // The objective is piecewise constant in tau; a log-spaced scan locates the
  // basin and Brent refines inside the neighbouring grid cells.
  constexpr std::size_t kGrid = 400;
  std::vector<double> taus(kGrid);
  const double log_lo = std::log(kTauLo), log_hi = std::log(kTauHi);
  std::size_t best = 0;
  double best_val = INFINITY;
  for (std::size_t k = 0; k < kGrid; ++k) {
    taus[k] = std::exp(log_lo + (log_hi - log_lo) * static_cast<double>(k) / (kGrid - 1));
    const double v = objective(taus[k]);
    if (v < best_val) {
      best_val = v;
      best = k;
    }
  }
  const double lo = taus[best == 0 ? 0 : best - 1];
  const double hi = taus[best + 1 == kGrid ? best : best + 1];

  double tau = taus[best];
  double tau_val = best_val;
  if (hi > lo) {
    const ScalarMinimum m = brent_minimize(objective, lo, hi, 1e-4);
    if (m.value < tau_val) {
      tau = m.x;
      tau_val = m.value;
    }
  }
  if (objective(1.0) < tau_val) tau = 1.0;
  return tau;
}

std::vector<double> smooth_sigmas(std::span<const double> sigmas, double a, double b) {
  std::vector<double> out(sigmas.size());
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    out[i] = std::max((a + b * sigmas[i]) * sigmas[i], kSigmaFloor);
  }
  return out;
}

SmoothFit fit_smooth(std::span<const double> residuals, std::span<const double> sigmas) {
  return fit_smooth(residuals, sigmas, fit_tau_star(residuals, sigmas));
}

SmoothFit fit_smooth(std::span<const double> residuals, std::span<const double> sigmas, double tau_star) {
  if (residuals.empty()) throw DomainError("fit_smooth: empty calibration set");
  const auto grid = nominal_coverage_grid();
  const auto objective = [&](const Point2& p) {
    return coverage_ece(residuals, smooth_sigmas(sigmas, p[0], p[1]), grid);
  };

  NelderMeadOptions opt;
  opt.max_iter = 500;
  opt.tol = 1e-6;
  opt.step = {0.1 * tau_star, 0.1};

  SmoothFit fit;
  Point2 x{tau_star, 0.0};
  fit.ece_init = objective(x);
  double val = fit.ece_init;
  // Restart from the incumbent: plateaus of the step objective stall a
  // single simplex.
  for (int run = 0; run < 3; ++run) {
    const NelderMeadResult r = nelder_mead(objective, x, opt);
    const bool improved = r.value < val - opt.tol;
    if (r.value <= val) {
      x = r.x;
      val = r.value;
    }
    if (!improved) break;
  }
  const auto s = smooth_sigmas(sigmas, x[0], x[1]);
  if (std::all_of(s.begin(), s.end(), [](double v) { return v <= kSigmaFloor; })) {
    throw DomainError("fit_smooth: every recalibrated sigma is degenerate");
  }
  fit.a = x[0];
  fit.b = x[1];
  fit.ece = val;
  return fit;
}

CalibrationSplit split_by_group(std::span<const CalibrationRecord> records, double cal_fraction,
                                std::uint64_t seed) {
  if (!(cal_fraction > 0.0 && cal_fraction < 1.0)) throw DomainError("cal_fraction must be in (0,1)");
  std::map<std::string, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < records.size(); ++i) by_group[records[i].group_id].push_back(i);
  if (by_group.size() < 2) throw DomainError("calibration split needs at least two groups");

  std::vector<std::string> groups;
  for (const auto& [g, idx] : by_group) groups.push_back(g);
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(groups));
  auto n_cal = static_cast<std::size_t>(std::llround(cal_fraction * static_cast<double>(groups.size())));
  n_cal = std::clamp<std::size_t>(n_cal, 1, groups.size() - 1);

  CalibrationSplit split;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    auto& dst = k < n_cal ? split.cal : split.test;
    const auto& idx = by_group[groups[k]];
    dst.insert(dst.end(), idx.begin(), idx.end());
  }
  std::sort(split.cal.begin(), split.cal.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

namespace {

void gather(std::span<const CalibrationRecord> records, const std::vector<std::size_t>& idx,
            std::vector<double>& residuals, std::vector<double>& sigmas) {
  residuals.clear();
  sigmas.clear();
  for (std::size_t i : idx) {
    residuals.push_back(records[i].y - records[i].mu_hat);
    sigmas.push_back(std::max(records[i].sigma_hat, kSigmaFloor));
  }
}

}  // namespace

CalibrationReport monte_carlo_calibration(std::span<const CalibrationRecord> records, std::size_t n_splits,
                                          double cal_fraction, std::uint64_t seed) {
  if (n_splits < 1) throw DomainError("monte_carlo_calibration: n_splits must be >= 1");
  const auto grid = nominal_coverage_grid();
  CalibrationReport rep;
  rep.n_splits = n_splits;

  std::vector<double> cal_r, cal_s, test_r, test_s;
  for (std::size_t s = 0; s < n_splits; ++s) {
    const auto split = split_by_group(records, cal_fraction, derive_seed(seed, s));
    gather(records, split.cal, cal_r, cal_s);
    gather(records, split.test, test_r, test_s);
    const double tau = fit_tau_star(cal_r, cal_s);
    if (s == 0) {
      rep.tau_star = tau;
      rep.ece_raw = coverage_ece(test_r, test_s, grid);
      rep.ece_tau = scaled_ece(test_r, test_s, grid, tau);
      rep.n_cal = split.cal.size();
      rep.n_test = split.test.size();
    }
    const SmoothFit fit = fit_smooth(cal_r, cal_s, tau);
    rep.ece_smooth_mean += coverage_ece(test_r, smooth_sigmas(test_s, fit.a, fit.b), grid);
    rep.a_star_mean += fit.a;
    rep.b_star_mean += fit.b;
    rep.b_star_abs_mean += std::abs(fit.b);
  }
  const double n = static_cast<double>(n_splits);
  rep.ece_smooth_mean /= n;
  rep.a_star_mean /= n;
  rep.b_star_mean /= n;
  rep.b_star_abs_mean /= n;
  return rep;
}

}  // namespace fuscore
