#pragma once

#include <array>
#include <cstddef>
#include <functional>

namespace fuscore {

struct ScalarMinimum {
  double x = 0.0;
  double value = 0.0;
};

/// Brent's method on [lo, hi]; relative tolerance roughly `tol`.
ScalarMinimum brent_minimize(const std::function<double(double)>& f, double lo, double hi, double tol,
                             std::size_t max_iter = 200);

using Point2 = std::array<double, 2>;

struct NelderMeadOptions {
  std::size_t max_iter = 500;
  double tol = 1e-6;  // simplex diameter and spread of values
  Point2 step{0.1, 0.1};
};

struct NelderMeadResult {
  Point2 x{};
  double value = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
};

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 1/2,
/// shrink 1/2) in two dimensions. The start point is always evaluated and
/// the returned value never exceeds it.
NelderMeadResult nelder_mead(const std::function<double(const Point2&)>& f, const Point2& start,
                             const NelderMeadOptions& opt);

}  // namespace fuscore
