#pragma once

// Coverage-based ECE and post-hoc recalibration of predicted sigma.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fuscore {

/// Nominal coverage levels c_b = (2b - 1) / (2B), b = 1..B.
std::vector<double> nominal_coverage_grid(std::size_t n_bins = 10);

inline constexpr double kSigmaFloor = 1e-6;

/// ECE = mean_b |c_hat_b - c_b|, where c_hat_b is the fraction of
/// |residual| <= Phi^-1((1 + c_b) / 2) * sigma (sigma floored at 1e-6).
double coverage_ece(std::span<const double> residuals, std::span<const double> sigmas,
                    std::span<const double> grid);
double coverage_ece(std::span<const double> residuals, std::span<const double> sigmas);

inline constexpr double kTauLo = 0.05;
inline constexpr double kTauHi = 20.0;

/// argmin_tau coverage_ece(residuals, tau * sigma) on [0.05, 20].
double fit_tau_star(std::span<const double> residuals, std::span<const double> sigmas);

struct SmoothFit {
  double a = 1.0;
  double b = 0.0;
  double ece = 0.0;       // calibration-set objective at (a, b)
  double ece_init = 0.0;  // objective at the start point (tau*, 0)
};

/// sigma' = max((a + b sigma) sigma, 1e-6)
std::vector<double> smooth_sigmas(std::span<const double> sigmas, double a, double b);

/// Nelder-Mead fit of (a, b) from (tau*, 0).
SmoothFit fit_smooth(std::span<const double> residuals, std::span<const double> sigmas);
SmoothFit fit_smooth(std::span<const double> residuals, std::span<const double> sigmas, double tau_star);

struct CalibrationRecord {
  std::string group_id;
  double y = 0.0;
  double mu_hat = 0.0;
  double sigma_hat = 0.0;
};

struct CalibrationReport {
  double ece_raw = 0.0;  // test half of the single split, unscaled sigma
  double ece_tau = 0.0;
  double tau_star = 1.0;
  double ece_smooth_mean = 0.0;
  double a_star_mean = 0.0;
  double b_star_mean = 0.0;  // signed mean
  double b_star_abs_mean = 0.0;
  std::size_t n_splits = 0;
  std::size_t n_cal = 0;  // images on the calibration side of the single split
  std::size_t n_test = 0;
};

struct CalibrationSplit {
  std::vector<std::size_t> cal;
  std::vector<std::size_t> test;
};

/// Group-disjoint cal/test split of record indices.
CalibrationSplit split_by_group(std::span<const CalibrationRecord> records, double cal_fraction,
                                std::uint64_t seed);

CalibrationReport monte_carlo_calibration(std::span<const CalibrationRecord> records,
                                          std::size_t n_splits = 50, double cal_fraction = 0.5,
                                          std::uint64_t seed = 42);

}  // namespace fuscore
