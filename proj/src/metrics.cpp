#include "fuscore/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "fuscore/losses.hpp"
#include "fuscore/rng.hpp"

namespace fuscore {
namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw DomainError(std::string(what) + ": length mismatch");
  if (a.size() < 2) throw DomainError(std::string(what) + ": need at least two values");
}

}  // namespace

std::vector<double> mid_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && x[order[j]] == x[order[i]]) ++j;
    // positions i..j-1 share rank (i+1 + j) / 2
    const double r = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = r;
    i = j;
  }
  return ranks;
}

double plcc(std::span<const double> pred, std::span<const double> gt) {
  check_pair(pred, gt, "plcc");
  const double n = static_cast<double>(pred.size());
  const double mx = std::accumulate(pred.begin(), pred.end(), 0.0) / n;
  const double my = std::accumulate(gt.begin(), gt.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i] - mx, dy = gt[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) throw DomainError("correlation undefined for a constant vector");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double srcc(std::span<const double> pred, std::span<const double> gt) {
  check_pair(pred, gt, "srcc");
  const auto rp = mid_ranks(pred);
  const auto rg = mid_ranks(gt);
  return plcc(rp, rg);
}

namespace {

std::int64_t tie_pairs_sorted(std::span<const double> sorted) {
  std::int64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= sorted.size(); ++i) {
    if (i < sorted.size() && sorted[i] == sorted[i - 1]) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Merge sort on y, returning the number of inversions (swaps).
std::int64_t count_swaps(std::vector<double>& y, std::vector<double>& buf, std::size_t lo,
                         std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = count_swaps(y, buf, lo, mid) + count_swaps(y, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (y[j] < y[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = y[j++];
    } else {
      buf[k++] = y[i++];
    }
  }
  while (i < mid) buf[k++] = y[i++];
  while (j < hi) buf[k++] = y[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            y.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace

double krcc(std::span<const double> pred, std::span<const double> gt) {
  check_pair(pred, gt, "krcc");
  const std::size_t n = pred.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pred[a] != pred[b]) return pred[a] < pred[b];
    return gt[a] < gt[b];
  });
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = pred[order[i]];
    y[i] = gt[order[i]];
  }
  const auto nn = static_cast<std::int64_t>(n);
  const std::int64_t n0 = nn * (nn - 1) / 2;
  const std::int64_t n1 = tie_pairs_sorted(x);
  std::int64_t n3 = 0;  // pairs tied in both
  {
    std::int64_t run = 1;
    for (std::size_t i = 1; i <= n; ++i) {
      if (i < n && x[i] == x[i - 1] && y[i] == y[i - 1]) {
        ++run;
      } else {
        n3 += run * (run - 1) / 2;
        run = 1;
      }
    }
  }
  std::vector<double> buf(n);
  const std::int64_t swaps = count_swaps(y, buf, 0, n);
  const std::int64_t n2 = tie_pairs_sorted(y);
  if (n0 == n1 || n0 == n2) throw DomainError("correlation undefined for a constant vector");
  const double numer = static_cast<double>(n0 - n1 - n2 + n3 - 2 * swaps);
  const double denom = std::sqrt(static_cast<double>(n0 - n1)) * std::sqrt(static_cast<double>(n0 - n2));
  return std::clamp(numer / denom, -1.0, 1.0);
}

double pair_accuracy(std::span<const GroupedScore> items) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) groups[items[i].group_id].push_back(i);
  double credit = 0.0;
  std::size_t pairs = 0;
  for (const auto& [g, idx] : groups) {
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        const auto& u = items[idx[a]];
        const auto& v = items[idx[b]];
        if (u.mu == v.mu) continue;
        ++pairs;
        const double dp = u.y_hat - v.y_hat;
        if (dp == 0.0) {
          credit += 0.5;
        } else if ((dp > 0.0) == (u.mu > v.mu)) {
          credit += 1.0;
        }
      }
    }
  }
  if (pairs == 0) throw DomainError("pair_accuracy: no same-group pairs with distinct GT");
  return credit / static_cast<double>(pairs);
}

GroupTauResult per_group_tau(std::span<const GroupedScore> items) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < items.size(); ++i) groups[items[i].group_id].push_back(i);
  GroupTauResult out;
  double sum = 0.0;
  for (const auto& [g, idx] : groups) {
    std::vector<double> pred, gt;
    for (std::size_t i : idx) {
      pred.push_back(items[i].y_hat);
      gt.push_back(items[i].mu);
    }
    const bool constant_gt =
        gt.size() < 2 || std::all_of(gt.begin(), gt.end(), [&](double v) { return v == gt[0]; });
    if (constant_gt) {
      ++out.n_skipped;
      continue;
    }
    const bool constant_pred = std::all_of(pred.begin(), pred.end(), [&](double v) { return v == pred[0]; });
    // A constant prediction has no concordant or discordant pairs.
    sum += constant_pred ? 0.0 : krcc(pred, gt);
    ++out.n_groups;
  }
  if (out.n_groups == 0) throw DomainError("per_group_tau: no group with >= 2 items and varying GT");
  out.tau = sum / static_cast<double>(out.n_groups);
  return out;
}

LevelDistribution prediction_distribution(const PredictionRecord& rec) {
  if (rec.logits) return softmax_levels(*rec.logits);
  return gaussian_bin(std::clamp(rec.mu_hat, kMinScore, kMaxScore), std::max(rec.sigma_hat, 1e-6));
}

double eval_kl(std::span<const PredictionRecord> preds, std::span<const std::string> label_ids,
               std::span<const SoftLabel> labels) {
  if (label_ids.size() != labels.size()) throw DomainError("eval_kl: ids/labels length mismatch");
  if (labels.empty()) throw DomainError("eval_kl: no labels");
  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : preds) by_id.emplace(p.image_id, &p);
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto it = by_id.find(label_ids[i]);
    if (it == by_id.end()) throw DataError("no prediction for image_id '" + label_ids[i] + "'");
    sum += kl_divergence(prediction_distribution(*it->second), labels[i].dist);
  }
  return sum / static_cast<double>(labels.size());
}

EvalReport evaluate(std::span<const AnnotatedImage> images, std::span<const PredictionRecord> preds,
                    const Hyperparams& hp, std::span<const SoftLabel> labels) {
  const auto matched = match_by_id(images, preds);
  std::vector<SoftLabel> built;
  if (labels.empty()) {
    built.reserve(images.size());
    for (const auto& img : images) built.push_back(build_soft_label(img, hp));
    labels = built;
  }
  if (labels.size() != images.size()) throw DataError("labels and annotations differ in length");

  std::vector<double> pred, gt;
  std::vector<GroupedScore> grouped;
  std::vector<std::string> ids;
  for (const auto& [img, rec] : matched) {
    pred.push_back(rec->mu_hat);
    gt.push_back(img->overall);
    grouped.push_back({img->group_id, img->overall, rec->mu_hat});
    ids.push_back(img->image_id);
  }
  EvalReport r;
  r.n_images = images.size();
  r.srcc = srcc(pred, gt);
  r.plcc = plcc(pred, gt);
  r.krcc = krcc(pred, gt);
  r.pair_acc = pair_accuracy(grouped);
  const auto tau = per_group_tau(grouped);
  r.per_group_tau = tau.tau;
  r.tau_groups_skipped = tau.n_skipped;
  r.eval_kl = eval_kl(preds, ids, labels);
  std::map<std::string, int> groups;
  for (const auto& img : images) groups[img.group_id] = 1;
  r.n_groups = groups.size();
  return r;
}

Metric parse_metric(std::string_view s) {
  if (s == "srcc") return Metric::kSrcc;
  if (s == "plcc") return Metric::kPlcc;
  if (s == "krcc") return Metric::kKrcc;
  throw DataError("unknown metric '" + std::string(s) + "' (expected srcc|plcc|krcc)");
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::kSrcc: return "srcc";
    case Metric::kPlcc: return "plcc";
    case Metric::kKrcc: return "krcc";
  }
  return "?";
}

double compute_metric(Metric m, std::span<const double> pred, std::span<const double> gt) {
  switch (m) {
    case Metric::kSrcc: return srcc(pred, gt);
    case Metric::kPlcc: return plcc(pred, gt);
    case Metric::kKrcc: return krcc(pred, gt);
  }
  throw DomainError("unknown metric");
}

BootstrapResult paired_bootstrap(std::span<const double> pred_a, std::span<const double> pred_b,
                                 std::span<const double> gt, Metric metric, std::size_t n_boot,
                                 std::uint64_t seed) {
  if (pred_a.size() != gt.size() || pred_b.size() != gt.size()) {
    throw DomainError("paired_bootstrap: vectors must be aligned");
  }
  if (n_boot < 1) throw DomainError("paired_bootstrap: n_boot must be >= 1");
  BootstrapResult out;
  out.delta = compute_metric(metric, pred_a, gt) - compute_metric(metric, pred_b, gt);

  const std::size_t n = gt.size();
  std::vector<double> a(n), b(n), y(n);
  std::size_t le = 0, ge = 0;
  for (std::size_t r = 0; r < n_boot; ++r) {
    Rng rng(derive_seed(seed, r));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t k = rng.index(n);
      a[i] = pred_a[k];
      b[i] = pred_b[k];
      y[i] = gt[k];
    }
    double d;
    try {
      d = compute_metric(metric, a, y) - compute_metric(metric, b, y);
    } catch (const DomainError&) {
      ++out.n_skipped;
      continue;
    }
    ++out.n_used;
    if (d <= 0.0) ++le;
    if (d >= 0.0) ++ge;
  }
  if (out.n_used == 0) throw DomainError("paired_bootstrap: every resample was degenerate");
  const double used = static_cast<double>(out.n_used);
  out.p_value = std::min(1.0, 2.0 * std::min(static_cast<double>(le) / used, static_cast<double>(ge) / used));
  return out;
}

}  // namespace fuscore
