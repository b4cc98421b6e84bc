#pragma once

// Synthetic rater laboratory: a Thurstone-style multi-rater corpus with known
// latent quality, plus a linear scorer trained with the tripartite objective.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fuscore/datamodel.hpp"
#include "fuscore/losses.hpp"
#include "fuscore/sampler.hpp"

namespace fuscore {

struct SynthConfig {
  std::size_t n_groups = 200;
  std::size_t n_methods = 11;
  std::size_t n_raters = 5;
  double scene_spread = 0.6;   // std of the per-group latent offset
  double method_spread = 0.4;  // std of the per-image offset within a group
  double rater_noise = 0.3;
  double consensus_coupling = 1.0;  // in [0, 1]
  double feature_noise = 0.1;
  std::size_t feature_dim = 8;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SynthCorpus {
  std::vector<AnnotatedImage> annotations;
  std::map<std::string, double> latent_quality;
  std::map<std::string, double> planted_conflict;
  std::map<std::string, std::vector<double>> rater_ratings;  // per-rater overall
  std::map<std::string, std::vector<double>> features;
  std::size_t feature_dim = 0;
};

/// Latent = 3 + scene + method. Rater r reports
/// clamp(round_to_quarter(latent + noise_r), 1, 5) with noise std
/// rater_noise * (1 + coupling * planted_conflict); the overall is the rater
/// mean and the four sub-scores are overall + conflict * (+-1 pattern).
SynthCorpus generate(const SynthConfig& cfg);

/// Population std of the raters' overall scores for one image.
double rater_disagreement(const SynthCorpus& corpus, const std::string& image_id);

void save_corpus(const SynthCorpus& corpus, const std::string& dir);
SynthCorpus load_corpus(const std::string& dir);

struct ToyScorer {
  std::size_t feature_dim = 0;
  std::vector<double> weights;  // feature_dim x 5, row-major
  LevelLogits bias{};

  static ToyScorer zeros(std::size_t feature_dim);
  LevelLogits logits(std::span<const double> features) const;
};

std::string scorer_to_json(const ToyScorer& scorer);
ToyScorer scorer_from_json(const std::string& text);

struct TrainConfig {
  std::size_t steps = 2000;
  double lr = 0.05;
  double momentum = 0.0;
  SamplerConfig sampler;
  std::uint64_t seed = 42;  // epoch plans use streams derived from this
};

struct TrainResult {
  ToyScorer scorer;
  std::vector<LossBreakdown> curve;  // one entry per optimizer step (mean over micro-batches)
  double initial_train_loss = 0.0;  // fixed evaluation epoch, before training
  double final_train_loss = 0.0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Labels are built from annotations with `hp`. The scorer starts at zero.
TrainResult train_toy(const SynthCorpus& corpus, std::span<const std::string> train_groups,
                      const Hyperparams& hp, const TrainConfig& cfg);

/// Mean tripartite total over one fixed epoch plan of `images`.
double epoch_loss(const ToyScorer& scorer, const SynthCorpus& corpus,
                  std::span<const AnnotatedImage> images, const Hyperparams& hp, const SamplerConfig& cfg);

std::vector<PredictionRecord> predict(const ToyScorer& scorer, const SynthCorpus& corpus,
                                      std::span<const std::string> ids);

/// Annotations whose group is in `groups`.
std::vector<AnnotatedImage> select_groups(std::span<const AnnotatedImage> images,
                                          std::span<const std::string> groups);

}  // namespace fuscore
