#include "fuscore/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include <boost/math/tools/minima.hpp>

namespace fuscore {

ScalarMinimum brent_minimize(const std::function<double(double)>& f, double lo, double hi, double tol,
                             std::size_t max_iter) {
  // Boost's tolerance is 2^(1 - bits), relative to |x|.
  const int bits = std::clamp(static_cast<int>(std::ceil(1.0 - std::log2(tol))), 4, 52);
  std::uintmax_t iters = max_iter;
  const auto [x, fx] = boost::math::tools::brent_find_minima(f, lo, hi, bits, iters);
  return {x, fx};
}

NelderMeadResult nelder_mead(const std::function<double(const Point2&)>& f, const Point2& start,
                             const NelderMeadOptions& opt) {
  std::array<Point2, 3> pts{start, start, start};
  pts[1][0] += opt.step[0];
  pts[2][1] += opt.step[1];
  std::array<double, 3> vals{};
  NelderMeadResult res;
  const auto eval = [&](const Point2& p) {
    ++res.evaluations;
    return f(p);
  };
  for (int i = 0; i < 3; ++i) vals[i] = eval(pts[i]);

  const auto combine = [](const Point2& a, const Point2& b, double t) {
    // a + t (b - a)
    return Point2{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])};
  };

  for (res.iterations = 0; res.iterations < opt.max_iter; ++res.iterations) {
    std::array<int, 3> idx{0, 1, 2};
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    std::array<Point2, 3> sp{pts[idx[0]], pts[idx[1]], pts[idx[2]]};
    std::array<double, 3> sv{vals[idx[0]], vals[idx[1]], vals[idx[2]]};
    pts = sp;
    vals = sv;

    double diameter = 0.0;
    for (int i = 1; i < 3; ++i) {
      diameter = std::max({diameter, std::abs(pts[i][0] - pts[0][0]), std::abs(pts[i][1] - pts[0][1])});
    }
    if (diameter <= opt.tol && vals[2] - vals[0] <= opt.tol) break;

    const Point2 centroid{0.5 * (pts[0][0] + pts[1][0]), 0.5 * (pts[0][1] + pts[1][1])};
    const Point2 reflected = combine(centroid, pts[2], -1.0);
    const double fr = eval(reflected);
    if (fr < vals[0]) {
      const Point2 expanded = combine(centroid, pts[2], -2.0);
      const double fe = eval(expanded);
      if (fe < fr) {
        pts[2] = expanded;
        vals[2] = fe;
      } else {
        pts[2] = reflected;
        vals[2] = fr;
      }
      continue;
    }
    if (fr < vals[1]) {
      pts[2] = reflected;
      vals[2] = fr;
      continue;
    }
    // Contraction: outside if the reflection beat the worst point.
    const bool outside = fr < vals[2];
    const Point2 contracted = outside ? combine(centroid, reflected, 0.5) : combine(centroid, pts[2], 0.5);
    const double fc = eval(contracted);
    if (fc < (outside ? fr : vals[2])) {
      pts[2] = contracted;
      vals[2] = fc;
      continue;
    }
    for (int i = 1; i < 3; ++i) {
      pts[i] = combine(pts[0], pts[i], 0.5);
      vals[i] = eval(pts[i]);
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(vals.begin(), vals.end()) - vals.begin());
  res.x = pts[best];
  res.value = vals[best];
  return res;
}

}  // namespace fuscore
