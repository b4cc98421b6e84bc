#include "fuscore/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fuscore/labels.hpp"
#include "fuscore/metrics.hpp"
#include "fuscore/rng.hpp"

namespace fuscore {

VarianceDecomposition variance_decomposition(std::span<const GroupValue> items) {
  if (items.empty()) throw DomainError("variance_decomposition: empty input");
  struct Acc {
    double sum = 0.0;
    std::size_t n = 0;
  };
  std::map<std::string, Acc> groups;
  double grand = 0.0;
  for (const auto& it : items) {
    auto& a = groups[it.group_id];
    a.sum += it.y;
    ++a.n;
    grand += it.y;
  }
  const double n = static_cast<double>(items.size());
  grand /= n;

  VarianceDecomposition d;
  for (const auto& it : items) {
    const auto& a = groups[it.group_id];
    const double gm = a.sum / static_cast<double>(a.n);
    d.within += (it.y - gm) * (it.y - gm);
    d.total += (it.y - grand) * (it.y - grand);
  }
  for (const auto& [g, a] : groups) {
    const double gm = a.sum / static_cast<double>(a.n);
    d.cross += static_cast<double>(a.n) * (gm - grand) * (gm - grand);
  }
  d.within /= n;
  d.cross /= n;
  d.total /= n;
  return d;
}

std::string_view to_string(Stratum s) {
  switch (s) {
    case Stratum::kLow: return "low";
    case Stratum::kMid: return "mid";
    case Stratum::kHigh: return "high";
  }
  return "?";
}

Stratum assign_stratum(double delta, const TertileBoundaries& b) {
  if (delta <= b.low_max) return Stratum::kLow;
  if (delta <= b.mid_max) return Stratum::kMid;
  return Stratum::kHigh;
}

TertileSplit split_by_delta(std::span<const AnnotatedImage> images, const TertileBoundaries& b) {
  if (!(b.low_max < b.mid_max)) throw DomainError("tertile boundaries must satisfy low_max < mid_max");
  TertileSplit split;
  split.boundaries = b;
  for (const auto& img : images) {
    const Stratum s = assign_stratum(dimensional_conflict(img.sub_scores), b);
    split.membership[img.image_id] = s;
    ++split.counts[static_cast<int>(s)];
  }
  return split;
}

namespace {

double population_std(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / n);
}

bool is_constant(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
}

}  // namespace

StratifiedReport stratify_by_delta(std::span<const AnnotatedImage> images,
                                   std::span<const PredictionRecord> preds, const TertileBoundaries& b) {
  const auto matched = match_by_id(images, preds);
  const auto split = split_by_delta(images, b);
  StratifiedReport rep;
  rep.boundaries = b;
  rep.n_images = images.size();

  std::array<std::vector<double>, 3> pred_by, gt_by;
  std::vector<double> pred_all, gt_all;
  for (const auto& [img, rec] : matched) {
    const int s = static_cast<int>(split.membership.at(img->image_id));
    pred_by[s].push_back(rec->mu_hat);
    gt_by[s].push_back(img->overall);
    pred_all.push_back(rec->mu_hat);
    gt_all.push_back(img->overall);
  }
  for (int s = 0; s < 3; ++s) {
    auto& r = rep.strata[s];
    r.stratum = static_cast<Stratum>(s);
    r.n = gt_by[s].size();
    if (r.n > 0) r.gt_std = population_std(gt_by[s]);
    if (r.n == 0) {
      r.undefined_reason = "empty stratum";
    } else if (r.n < 2) {
      r.undefined_reason = "fewer than 2 images";
    } else if (is_constant(gt_by[s])) {
      r.undefined_reason = "constant GT";
    } else if (is_constant(pred_by[s])) {
      r.undefined_reason = "constant predictions";
    } else {
      r.srcc = srcc(pred_by[s], gt_by[s]);
    }
  }
  rep.overall_srcc = srcc(pred_all, gt_all);
  return rep;
}

std::size_t boundary_migration(std::span<const AnnotatedImage> images, const TertileBoundaries& b,
                               double shift) {
  TertileBoundaries moved = b;
  moved.low_max += shift;
  std::size_t n = 0;
  for (const auto& img : images) {
    const double d = dimensional_conflict(img.sub_scores);
    if (assign_stratum(d, b) != assign_stratum(d, moved)) ++n;
  }
  return n;
}

CeilingReport counterfactual_ceiling(std::span<const AnnotatedImage> images,
                                     std::span<const PredictionRecord> preds, const TertileBoundaries& b,
                                     double floor_srcc, std::uint64_t seed) {
  if (!(floor_srcc >= -1.0 && floor_srcc <= 1.0)) throw DomainError("floor_srcc must lie in [-1, 1]");
  const auto matched = match_by_id(images, preds);
  const auto split = split_by_delta(images, b);

  CeilingReport rep;
  rep.repooling = "rank-to-value: each stratum's synthetic ranks take the stratum's sorted GT values";
  {
    std::vector<double> p, g;
    for (const auto& [img, rec] : matched) {
      p.push_back(rec->mu_hat);
      g.push_back(img->overall);
    }
    rep.actual_srcc = srcc(p, g);
  }

  std::vector<double> gt(images.size()), score(images.size());
  std::array<std::vector<std::size_t>, 3> members;
  for (std::size_t i = 0; i < images.size(); ++i) {
    gt[i] = images[i].overall;
    members[static_cast<int>(split.membership.at(images[i].image_id))].push_back(i);
  }

  for (int s = 0; s < 3; ++s) {
    auto idx = members[s];
    if (idx.empty()) continue;
    // Oracle placement: slot k holds the k-th smallest GT of the stratum.
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) {
      if (gt[a] != gt[c]) return gt[a] < gt[c];
      return images[a].image_id < images[c].image_id;
    });
    std::vector<double> values(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) values[k] = gt[idx[k]];
    std::vector<std::size_t> slot(idx.size());
    std::iota(slot.begin(), slot.end(), 0);

    if (static_cast<Stratum>(s) == Stratum::kHigh && idx.size() >= 2 && !is_constant(values)) {
      std::vector<double> local_gt(values), local_score(idx.size());
      const auto current = [&] {
        for (std::size_t k = 0; k < idx.size(); ++k) local_score[k] = values[slot[k]];
        return srcc(local_score, local_gt);
      };
      constexpr double kWindow = 0.02;
      double r = current();
      double best_gap = std::abs(r - floor_srcc);
      std::vector<std::size_t> best_slot = slot;
      double best_r = r;
      Rng rng(seed);
      const std::size_t max_attempts = 200 * idx.size() + 10000;
      for (std::size_t attempt = 0; attempt < max_attempts && std::abs(r - floor_srcc) > kWindow; ++attempt) {
        const std::size_t u = rng.index(idx.size());
        const std::size_t v = rng.index(idx.size());
        if (u == v || values[slot[u]] == values[slot[v]]) continue;
        std::swap(slot[u], slot[v]);
        const double next = current();
        if (next < floor_srcc - kWindow) {
          std::swap(slot[u], slot[v]);
          continue;
        }
        r = next;
        ++rep.transpositions;
        if (std::abs(r - floor_srcc) < best_gap) {
          best_gap = std::abs(r - floor_srcc);
          best_slot = slot;
          best_r = r;
        }
      }
      slot = best_slot;
      rep.high_srcc = best_r;
    }
    for (std::size_t k = 0; k < idx.size(); ++k) score[idx[k]] = values[slot[k]];
  }
  rep.ceiling = srcc(score, gt);
  return rep;
}

double sigma_delta_correlation(std::span<const PredictionRecord> preds,
                               std::span<const AnnotatedImage> images) {
  const auto matched = match_by_id(images, preds);
  std::vector<double> sig, del;
  for (const auto& [img, rec] : matched) {
    sig.push_back(rec->sigma_hat);
    del.push_back(dimensional_conflict(img->sub_scores));
  }
  return plcc(sig, del);
}

}  // namespace fuscore
