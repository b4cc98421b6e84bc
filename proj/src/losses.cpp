#include "fuscore/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace fuscore {

LevelDistribution softmax_levels(const LevelLogits& logits) {
  double max_z = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z)) throw DomainError("softmax_levels: non-finite logit");
    max_z = std::max(max_z, z);
  }
  LevelProbs e{};
  double sum = 0.0;
  for (int l = 0; l < kNumLevels; ++l) {
    e[l] = std::exp(logits[l] - max_z);
    sum += e[l];
  }
  for (double& x : e) x /= sum;
  return LevelDistribution(e);
}

double expectation_readout(const LevelDistribution& dist) { return dist.expectation(); }

double kl_divergence(const LevelDistribution& p, const LevelDistribution& q) {
  double kl = 0.0;
  for (int l = 0; l < kNumLevels; ++l) {
    if (p[l] > 0.0) kl += p[l] * (std::log(p[l]) - std::log(std::max(q[l], kProbFloor)));
  }
  return std::max(kl, 0.0);
}

double pair_margin(double sigma_i, double sigma_j) {
  if (!(sigma_i > 0.0) || !(sigma_j > 0.0)) throw DomainError("pair_margin: widths must be > 0");
  return std::hypot(sigma_i, sigma_j);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double thurstone_prob(double mu_i, double mu_j, double sigma_ij) {
  if (!(sigma_ij > 0.0)) throw DomainError("thurstone_prob: margin must be > 0");
  return normal_cdf((mu_i - mu_j) / sigma_ij);
}

namespace {

double fidelity_from_tails(double p_gt, double q_gt, double p_pred, double q_pred) {
  return std::clamp(1.0 - std::sqrt(p_gt * p_pred) - std::sqrt(q_gt * q_pred), 0.0, 1.0);
}

}  // namespace

double fidelity_pair(double p_gt, double p_pred) {
  return fidelity_from_tails(p_gt, 1.0 - p_gt, p_pred, 1.0 - p_pred);
}

// ---- Plackett-Luce -------------------------------------------------------------

namespace {

std::vector<std::size_t> reference_order(std::span<const RankedItem> items) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (items[a].mu != items[b].mu) return items[a].mu > items[b].mu;
    return items[a].tie_key < items[b].tie_key;
  });
  return order;
}

/// suffix[k] = log sum_{j >= k} exp(u_(j))
std::vector<double> suffix_logsumexp(std::span<const RankedItem> items,
                                     const std::vector<std::size_t>& order) {
  const std::size_t n = order.size();
  std::vector<double> suffix(n);
  double acc = -INFINITY;
  for (std::size_t k = n; k-- > 0;) {
    const double u = items[order[k]].score;
    const double hi = std::max(acc, u);
    acc = hi + std::log(std::exp(acc - hi) + std::exp(u - hi));
    suffix[k] = acc;
  }
  return suffix;
}

}  // namespace

double pl_listwise(std::span<const RankedItem> items) {
  if (items.size() < 2) throw DomainError("pl_listwise: need at least two items");
  const auto order = reference_order(items);
  const auto suffix = suffix_logsumexp(items, order);
  double nll = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) nll += suffix[k] - items[order[k]].score;
  return std::max(nll, 0.0);
}

double pl_listwise_scalar(std::span<const std::pair<double, double>> mu_and_score) {
  std::vector<RankedItem> items;
  items.reserve(mu_and_score.size());
  for (const auto& [mu, score] : mu_and_score) items.push_back({mu, score, {}});
  return pl_listwise(items);
}

std::vector<double> pl_listwise_grad(std::span<const RankedItem> items) {
  if (items.size() < 2) throw DomainError("pl_listwise: need at least two items");
  const auto order = reference_order(items);
  const auto suffix = suffix_logsumexp(items, order);
  std::vector<double> grad(items.size(), 0.0);
  for (std::size_t m = 0; m < order.size(); ++m) {
    const double u = items[order[m]].score;
    double g = -1.0;
    for (std::size_t k = 0; k <= m; ++k) g += std::exp(u - suffix[k]);
    grad[order[m]] = g;
  }
  return grad;
}

double pl_level_utility(const LevelLogits& logits) {
  const LevelDistribution q = softmax_levels(logits);
  double u = 0.0;
  for (int l = 0; l < kNumLevels; ++l) u += (l - 2) * std::log(std::max(q[l], kProbFloor));
  return u;
}

// ---- tripartite objective --------------------------------------------------------

namespace {

struct ItemState {
  LevelDistribution q = LevelDistribution::uniform();
  double y_hat = 0.0;
};

std::vector<ItemState> forward(std::span<const BatchItem> batch) {
  std::vector<ItemState> st;
  st.reserve(batch.size());
  for (const auto& item : batch) {
    ItemState s;
    s.q = softmax_levels(item.logits);
    s.y_hat = s.q.expectation();
    st.push_back(s);
  }
  return st;
}

struct PairTerm {
  double value = 0.0;
  double d_dx = 0.0;  // derivative with respect to (y_i - y_j) / sigma_ij
  double sigma = 1.0;
};

PairTerm pair_term(const BatchItem& a, const BatchItem& b, double ya, double yb, bool want_grad) {
  PairTerm t;
  t.sigma = pair_margin(a.label.sigma, b.label.sigma);
  const double x_gt = (a.label.mu - b.label.mu) / t.sigma;
  const double x = (ya - yb) / t.sigma;
  const double p_gt = normal_cdf(x_gt), q_gt = normal_cdf(-x_gt);
  const double p = normal_cdf(x), q = normal_cdf(-x);
  t.value = fidelity_from_tails(p_gt, q_gt, p, q);
  if (want_grad) {
    const double phi = normal_pdf(x);
    if (phi > 0.0) {
      const double up = p > 0.0 ? std::sqrt(p_gt / p) : 0.0;
      const double down = q > 0.0 ? std::sqrt(q_gt / q) : 0.0;
      t.d_dx = 0.5 * phi * (down - up);
    }
  }
  return t;
}

std::vector<RankedItem> pl_items(std::span<const BatchItem> batch, const std::vector<ItemState>& st,
                                 PlVariant variant) {
  std::vector<RankedItem> items;
  items.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double score =
        variant == PlVariant::kScalarReadout ? st[i].y_hat : pl_level_utility(batch[i].logits);
    items.push_back({batch[i].label.mu, score, batch[i].image_id});
  }
  return items;
}

bool pl_enabled(std::span<const BatchItem> batch, const Hyperparams& hp) {
  return hp.lambda_pl > 0.0 && batch.size() >= 2;
}

}  // namespace

LossBreakdown tripartite_loss(std::span<const BatchItem> batch, const Hyperparams& hp) {
  if (batch.empty()) throw DomainError("tripartite_loss: empty batch");
  const auto st = forward(batch);
  LossBreakdown out;
  for (std::size_t i = 0; i < batch.size(); ++i) out.kl += kl_divergence(batch[i].label.dist, st[i].q);
  out.kl /= static_cast<double>(batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = i + 1; j < batch.size(); ++j) {
      const double f = pair_term(batch[i], batch[j], st[i].y_hat, st[j].y_hat, false).value;
      if (batch[i].group_id == batch[j].group_id) {
        out.fid += f;
        ++out.n_within_pairs;
      } else {
        out.xfid += f;
        ++out.n_cross_pairs;
      }
    }
  }
  if (out.n_within_pairs > 0) out.fid /= static_cast<double>(out.n_within_pairs);
  if (out.n_cross_pairs > 0) out.xfid /= static_cast<double>(out.n_cross_pairs);

  if (pl_enabled(batch, hp)) out.pl = pl_listwise(pl_items(batch, st, hp.pl_variant));

  out.total = out.kl + hp.lambda_fid * out.fid + hp.lambda_xfid * out.xfid;
  if (hp.lambda_pl > 0.0) out.total += hp.lambda_pl * out.pl;
  return out;
}

std::vector<LevelLogits> tripartite_grad(std::span<const BatchItem> batch, const Hyperparams& hp) {
  if (batch.empty()) throw DomainError("tripartite_grad: empty batch");
  const std::size_t n = batch.size();
  const auto st = forward(batch);

  std::size_t n_within = 0, n_cross = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      (batch[i].group_id == batch[j].group_id ? n_within : n_cross) += 1;
    }
  }

  // Gradient with respect to the readout y_hat of each item.
  std::vector<double> d_yhat(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool within = batch[i].group_id == batch[j].group_id;
      const double weight = within ? hp.lambda_fid / static_cast<double>(n_within)
                                   : hp.lambda_xfid / static_cast<double>(n_cross);
      if (weight == 0.0) continue;
      const PairTerm t = pair_term(batch[i], batch[j], st[i].y_hat, st[j].y_hat, true);
      const double g = weight * t.d_dx / t.sigma;
      d_yhat[i] += g;
      d_yhat[j] -= g;
    }
  }

  std::vector<LevelLogits> grad(n);
  if (pl_enabled(batch, hp)) {
    const auto items = pl_items(batch, st, hp.pl_variant);
    const auto d_u = pl_listwise_grad(items);
    for (std::size_t i = 0; i < n; ++i) {
      if (hp.pl_variant == PlVariant::kScalarReadout) {
        d_yhat[i] += hp.lambda_pl * d_u[i];
      } else {
        // u = sum_l (l - 3) z_l since sum_l (l - 3) = 0.
        for (int l = 0; l < kNumLevels; ++l) grad[i][l] += hp.lambda_pl * d_u[i] * (l - 2);
      }
    }
  }

  const double inv_b = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& q = st[i].q;
    const auto& p = batch[i].label.dist;
    for (int l = 0; l < kNumLevels; ++l) {
      grad[i][l] += inv_b * (q[l] - p[l]) + d_yhat[i] * q[l] * ((l + 1) - st[i].y_hat);
    }
  }
  return grad;
}

}  // namespace fuscore
