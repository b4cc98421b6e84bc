#include "fuscore/synthlab.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>
#include <unordered_map>

#include "fuscore/json_io.hpp"
#include "fuscore/labels.hpp"
#include "fuscore/rng.hpp"

namespace fuscore {

void SynthConfig::validate() const {
  const auto fail = [](const std::string& m) { throw DataError("synth config: " + m); };
  if (n_groups < 1 || n_methods < 1 || n_raters < 1 || feature_dim < 1) fail("counts must be >= 1");
  if (!(scene_spread >= 0.0) || !(method_spread >= 0.0) || !(rater_noise >= 0.0) || !(feature_noise >= 0.0)) {
    fail("spreads and noise must be >= 0");
  }
  if (!(consensus_coupling >= 0.0 && consensus_coupling <= 1.0)) fail("consensus_coupling must be in [0,1]");
}

namespace {

std::string padded(const char* prefix, std::size_t k, std::size_t total) {
  const int width = std::max(2, static_cast<int>(std::to_string(total).size()));
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, k);
  return buf;
}

// Three-component mixture matching a low/mid/high conflict structure.
double draw_conflict(Rng& rng) {
  const double u = rng.uniform();
  if (u < 0.50) return rng.uniform(0.0, 0.45);
  if (u < 0.73) return rng.uniform(0.45, 0.71);
  return rng.uniform(0.71, 1.2);
}

constexpr std::array<std::array<double, 4>, 6> kSignPatterns{{
    {1, 1, -1, -1}, {1, -1, 1, -1}, {1, -1, -1, 1}, {-1, 1, 1, -1}, {-1, 1, -1, 1}, {-1, -1, 1, 1}}};

}  // namespace

SynthCorpus generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SynthCorpus corpus;
  corpus.feature_dim = cfg.feature_dim;

  // Feature embedding of (latent - 3, conflict); columns normalized.
  std::vector<std::array<double, 2>> embed(cfg.feature_dim);
  for (int c = 0; c < 2; ++c) {
    double norm = 0.0;
    for (auto& row : embed) {
      row[c] = rng.normal();
      norm += row[c] * row[c];
    }
    for (auto& row : embed) row[c] /= std::sqrt(norm);
  }

  for (std::size_t g = 0; g < cfg.n_groups; ++g) {
    const std::string group = padded("g", g, cfg.n_groups);
    const double scene = rng.normal(0.0, cfg.scene_spread);
    for (std::size_t k = 0; k < cfg.n_methods; ++k) {
      AnnotatedImage img;
      img.group_id = group;
      img.method_id = padded("m", k, cfg.n_methods);
      img.image_id = group + "_" + img.method_id;
      const double latent = 3.0 + scene + rng.normal(0.0, cfg.method_spread);
      const double conflict = draw_conflict(rng);

      const double noise_sd = cfg.rater_noise * (1.0 + cfg.consensus_coupling * conflict);
      std::vector<double> ratings(cfg.n_raters);
      for (auto& r : ratings) {
        const double x = latent + noise_sd * rng.normal();
        r = std::clamp(std::round(4.0 * x) / 4.0, kMinScore, kMaxScore);
      }
      img.overall = std::accumulate(ratings.begin(), ratings.end(), 0.0) / static_cast<double>(cfg.n_raters);

      const double spread = std::min({conflict, img.overall - kMinScore, kMaxScore - img.overall});
      const auto& pattern = kSignPatterns[rng.index(kSignPatterns.size())];
      for (int s = 0; s < kNumSubScores; ++s) {
        img.sub_scores[s] = std::clamp(img.overall + spread * pattern[s], kMinScore, kMaxScore);
      }

      std::vector<double> f(cfg.feature_dim);
      for (std::size_t d = 0; d < cfg.feature_dim; ++d) {
        f[d] = embed[d][0] * (latent - 3.0) + embed[d][1] * conflict + cfg.feature_noise * rng.normal();
      }

      corpus.latent_quality[img.image_id] = latent;
      corpus.planted_conflict[img.image_id] = conflict;
      corpus.rater_ratings[img.image_id] = std::move(ratings);
      corpus.features[img.image_id] = std::move(f);
      corpus.annotations.push_back(std::move(img));
    }
  }
  return corpus;
}

double rater_disagreement(const SynthCorpus& corpus, const std::string& image_id) {
  const auto& r = corpus.rater_ratings.at(image_id);
  const double n = static_cast<double>(r.size());
  const double m = std::accumulate(r.begin(), r.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : r) ss += (x - m) * (x - m);
  return std::sqrt(ss / n);
}

void save_corpus(const SynthCorpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_annotations(fs::path(dir) / "annotations.csv", corpus.annotations);

  std::string raters;
  for (const auto& img : corpus.annotations) {
    Json j;
    j["image_id"] = img.image_id;
    j["latent"] = corpus.latent_quality.at(img.image_id);
    j["planted_conflict"] = corpus.planted_conflict.at(img.image_id);
    j["ratings"] = corpus.rater_ratings.at(img.image_id);
    raters += dump_json(j) + '\n';
  }
  write_file(fs::path(dir) / "raters.jsonl", raters);

  std::string features = "image_id";
  for (std::size_t d = 0; d < corpus.feature_dim; ++d) features += ",f" + std::to_string(d);
  features += '\n';
  for (const auto& img : corpus.annotations) {
    features += img.image_id;
    for (double v : corpus.features.at(img.image_id)) features += ',' + format_double(v);
    features += '\n';
  }
  write_file(fs::path(dir) / "features.csv", features);
}

SynthCorpus load_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  SynthCorpus corpus;
  corpus.annotations = load_annotations(fs::path(dir) / "annotations.csv");

  const std::string raters = read_file(fs::path(dir) / "raters.jsonl");
  std::size_t pos = 0, line_no = 0;
  while (pos < raters.size()) {
    std::size_t end = raters.find('\n', pos);
    if (end == std::string::npos) end = raters.size();
    ++line_no;
    const std::string line = raters.substr(pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      const auto id = j.at("image_id").get<std::string>();
      corpus.latent_quality[id] = j.at("latent").get<double>();
      corpus.planted_conflict[id] = j.at("planted_conflict").get<double>();
      corpus.rater_ratings[id] = j.at("ratings").get<std::vector<double>>();
    } catch (const Json::exception& e) {
      throw DataError("raters.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }

  const std::string features = read_file(fs::path(dir) / "features.csv");
  pos = 0;
  line_no = 0;
  while (pos < features.size()) {
    std::size_t end = features.find('\n', pos);
    if (end == std::string::npos) end = features.size();
    ++line_no;
    std::string_view line(features.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty() || line_no == 1) {
      if (line_no == 1) corpus.feature_dim = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
      continue;
    }
    const std::size_t comma = line.find(',');
    const std::string id(line.substr(0, comma));
    std::vector<double> f;
    std::size_t start = comma + 1;
    while (start <= line.size()) {
      std::size_t next = line.find(',', start);
      if (next == std::string_view::npos) next = line.size();
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(line.data() + start, line.data() + next, v);
      if (ec != std::errc() || ptr != line.data() + next) {
        throw DataError("features.csv line " + std::to_string(line_no) + ": bad number");
      }
      f.push_back(v);
      start = next + 1;
    }
    if (f.size() != corpus.feature_dim) {
      throw DataError("features.csv line " + std::to_string(line_no) + ": wrong number of features");
    }
    corpus.features[id] = std::move(f);
  }
  for (const auto& img : corpus.annotations) {
    if (!corpus.features.count(img.image_id) || !corpus.rater_ratings.count(img.image_id)) {
      throw DataError("corpus: image '" + img.image_id + "' lacks features or ratings");
    }
  }
  return corpus;
}

// ---- scorer ----------------------------------------------------------------------

ToyScorer ToyScorer::zeros(std::size_t feature_dim) {
  ToyScorer s;
  s.feature_dim = feature_dim;
  s.weights.assign(feature_dim * kNumLevels, 0.0);
  return s;
}

LevelLogits ToyScorer::logits(std::span<const double> features) const {
  if (features.size() != feature_dim) throw DataError("scorer: feature dimension mismatch");
  LevelLogits z = bias;
  for (std::size_t d = 0; d < feature_dim; ++d) {
    for (int l = 0; l < kNumLevels; ++l) z[l] += features[d] * weights[d * kNumLevels + l];
  }
  return z;
}

std::string scorer_to_json(const ToyScorer& scorer) {
  Json j;
  j["feature_dim"] = scorer.feature_dim;
  Json rows = Json::array();
  for (std::size_t d = 0; d < scorer.feature_dim; ++d) {
    rows.push_back(std::vector<double>(scorer.weights.begin() + static_cast<std::ptrdiff_t>(d * kNumLevels),
                                       scorer.weights.begin() + static_cast<std::ptrdiff_t>((d + 1) * kNumLevels)));
  }
  j["weights"] = rows;
  j["bias"] = scorer.bias;
  return dump_json(j, 2);
}

ToyScorer scorer_from_json(const std::string& text) {
  try {
    const Json j = Json::parse(text);
    ToyScorer s = ToyScorer::zeros(j.at("feature_dim").get<std::size_t>());
    const auto& rows = j.at("weights");
    if (rows.size() != s.feature_dim) throw DataError("scorer: weights rows != feature_dim");
    for (std::size_t d = 0; d < s.feature_dim; ++d) {
      const auto row = rows[d].get<std::vector<double>>();
      if (row.size() != kNumLevels) throw DataError("scorer: weight row must have 5 entries");
      std::copy(row.begin(), row.end(), s.weights.begin() + static_cast<std::ptrdiff_t>(d * kNumLevels));
    }
    const auto b = j.at("bias").get<std::vector<double>>();
    if (b.size() != kNumLevels) throw DataError("scorer: bias must have 5 entries");
    std::copy(b.begin(), b.end(), s.bias.begin());
    return s;
  } catch (const Json::exception& e) {
    throw DataError(std::string("scorer: ") + e.what());
  }
}

// ---- training ------------------------------------------------------------------------

std::vector<AnnotatedImage> select_groups(std::span<const AnnotatedImage> images,
                                          std::span<const std::string> groups) {
  const std::set<std::string> keep(groups.begin(), groups.end());
  std::vector<AnnotatedImage> out;
  for (const auto& img : images) {
    if (keep.count(img.group_id)) out.push_back(img);
  }
  return out;
}

namespace {

struct Example {
  const AnnotatedImage* image;
  const std::vector<double>* features;
  SoftLabel label;
};

using ExampleIndex = std::unordered_map<std::string, Example>;

ExampleIndex index_examples(const SynthCorpus& corpus, std::span<const AnnotatedImage> images,
                            const Hyperparams& hp) {
  ExampleIndex idx;
  for (const auto& img : images) {
    const auto f = corpus.features.find(img.image_id);
    if (f == corpus.features.end()) throw DataError("no features for image '" + img.image_id + "'");
    idx.emplace(img.image_id, Example{&img, &f->second, build_soft_label(img, hp)});
  }
  return idx;
}

std::vector<BatchItem> make_batch(const ToyScorer& scorer, const ExampleIndex& idx, const MicroBatch& ids,
                                  std::vector<const Example*>& examples) {
  std::vector<BatchItem> batch;
  examples.clear();
  for (const auto& id : ids) {
    const Example& ex = idx.at(id);
    examples.push_back(&ex);
    batch.push_back({id, ex.image->group_id, scorer.logits(*ex.features), ex.label});
  }
  return batch;
}

double plan_loss(const ToyScorer& scorer, const ExampleIndex& idx, const EpochPlan& plan, const Hyperparams& hp) {
  std::vector<const Example*> ex;
  double sum = 0.0;
  for (const auto& mb : plan.batches) sum += tripartite_loss(make_batch(scorer, idx, mb, ex), hp).total;
  return sum / static_cast<double>(plan.batches.size());
}

constexpr std::uint64_t kEvalPlanStream = 0xE7A1;

}  // namespace

double epoch_loss(const ToyScorer& scorer, const SynthCorpus& corpus, std::span<const AnnotatedImage> images,
                  const Hyperparams& hp, const SamplerConfig& cfg) {
  const auto idx = index_examples(corpus, images, hp);
  return plan_loss(scorer, idx, make_epoch(images, cfg), hp);
}

TrainResult train_toy(const SynthCorpus& corpus, std::span<const std::string> train_groups,
                      const Hyperparams& hp, const TrainConfig& cfg) {
  hp.validate();
  cfg.sampler.validate();
  const auto images = select_groups(corpus.annotations, train_groups);
  const auto idx = index_examples(corpus, images, hp);

  TrainResult res;
  res.scorer = ToyScorer::zeros(corpus.feature_dim);
  ToyScorer& s = res.scorer;

  SamplerConfig eval_cfg = cfg.sampler;
  eval_cfg.seed = derive_seed(cfg.seed, kEvalPlanStream);
  const EpochPlan eval_plan = make_epoch(images, eval_cfg);
  res.initial_train_loss = plan_loss(s, idx, eval_plan, hp);

  std::vector<double> vel_w(s.weights.size(), 0.0), grad_w(s.weights.size());
  LevelLogits vel_b{}, grad_b{};
  std::size_t epoch = 0, cursor = 0;
  SamplerConfig epoch_cfg = cfg.sampler;
  epoch_cfg.seed = derive_seed(cfg.seed, epoch);
  EpochPlan plan = make_epoch(images, epoch_cfg);
  std::vector<const Example*> ex;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    grad_b.fill(0.0);
    LossBreakdown mean;
    for (std::size_t a = 0; a < cfg.sampler.accumulation; ++a) {
      if (cursor == plan.batches.size()) {
        ++epoch;
        epoch_cfg.seed = derive_seed(cfg.seed, epoch);
        plan = make_epoch(images, epoch_cfg);
        cursor = 0;
      }
      const auto batch = make_batch(s, idx, plan.batches[cursor++], ex);
      const LossBreakdown lb = tripartite_loss(batch, hp);
      if (!std::isfinite(lb.total)) {
        throw TrainingDiverged(step, "training diverged at step " + std::to_string(step));
      }
      mean.kl += lb.kl;
      mean.fid += lb.fid;
      mean.xfid += lb.xfid;
      mean.pl += lb.pl;
      mean.total += lb.total;
      mean.n_within_pairs += lb.n_within_pairs;
      mean.n_cross_pairs += lb.n_cross_pairs;
      const auto g = tripartite_grad(batch, hp);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& f = *ex[i]->features;
        for (std::size_t d = 0; d < s.feature_dim; ++d) {
          for (int l = 0; l < kNumLevels; ++l) grad_w[d * kNumLevels + l] += f[d] * g[i][l];
        }
        for (int l = 0; l < kNumLevels; ++l) grad_b[l] += g[i][l];
      }
    }
    const double inv = 1.0 / static_cast<double>(cfg.sampler.accumulation);
    mean.kl *= inv;
    mean.fid *= inv;
    mean.xfid *= inv;
    mean.pl *= inv;
    mean.total *= inv;
    res.curve.push_back(mean);

    for (std::size_t k = 0; k < s.weights.size(); ++k) {
      vel_w[k] = cfg.momentum * vel_w[k] + grad_w[k] * inv;
      s.weights[k] -= cfg.lr * vel_w[k];
    }
    for (int l = 0; l < kNumLevels; ++l) {
      vel_b[l] = cfg.momentum * vel_b[l] + grad_b[l] * inv;
      s.bias[l] -= cfg.lr * vel_b[l];
    }
    const bool finite = std::all_of(s.weights.begin(), s.weights.end(), [](double w) { return std::isfinite(w); }) &&
                        std::all_of(s.bias.begin(), s.bias.end(), [](double b) { return std::isfinite(b); });
    if (!finite) throw TrainingDiverged(step, "non-finite parameters at step " + std::to_string(step));
  }
  res.final_train_loss = plan_loss(s, idx, eval_plan, hp);
  return res;
}

std::vector<PredictionRecord> predict(const ToyScorer& scorer, const SynthCorpus& corpus,
                                      std::span<const std::string> ids) {
  std::vector<PredictionRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto f = corpus.features.find(id);
    if (f == corpus.features.end()) throw DataError("no features for image '" + id + "'");
    out.push_back(PredictionRecord::from_logits(id, scorer.logits(f->second)));
  }
  return out;
}

}  // namespace fuscore
