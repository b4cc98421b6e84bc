#pragma once

// Domain types and file formats shared by every module.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fuscore {

inline constexpr int kNumLevels = 5;
inline constexpr int kNumSubScores = 4;
inline constexpr double kMinScore = 1.0;
inline constexpr double kMaxScore = 5.0;

using LevelProbs = std::array<double, kNumLevels>;
using LevelLogits = std::array<double, kNumLevels>;
using SubScores = std::array<double, kNumSubScores>;

/// Raised for malformed input data: bad rows, out-of-range scores, ids.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for numerically undefined results (constant vectors, empty sets).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One of the five discrete quality levels.
class QualityLevel {
 public:
  explicit QualityLevel(int value);
  int value() const { return value_; }
  std::size_t index() const { return static_cast<std::size_t>(value_ - 1); }

 private:
  int value_;
};

/// Probability vector over levels 1..5.
class LevelDistribution {
 public:
  /// Validates non-negativity and unit sum (1e-9).
  explicit LevelDistribution(const LevelProbs& probs);

  /// Divides by the sum; input must be non-negative with positive sum.
  static LevelDistribution normalized(const LevelProbs& weights);
  static LevelDistribution uniform();
  static LevelDistribution one_hot(QualityLevel level);

  const LevelProbs& probs() const { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }

  /// Sum of l * p_l, in [1, 5].
  double expectation() const;
  /// Standard deviation of the level under this distribution.
  double stddev() const;
  double entropy() const;

  bool operator==(const LevelDistribution&) const = default;

 private:
  LevelProbs probs_;
};

struct AnnotatedImage {
  std::string image_id;
  std::string group_id;
  std::string method_id;
  SubScores sub_scores{};  // thermal, texture, artifacts, sharpness
  double overall = 0.0;

  bool operator==(const AnnotatedImage&) const = default;
};

/// Throws DataError naming the offending field.
void validate(const AnnotatedImage& img);

struct PredictionRecord {
  std::string image_id;
  std::optional<LevelLogits> logits;
  double mu_hat = 0.0;
  double sigma_hat = 0.0;

  /// Builds a record whose (mu_hat, sigma_hat) are read off softmax(logits).
  static PredictionRecord from_logits(std::string image_id, const LevelLogits& logits);

  bool operator==(const PredictionRecord&) const = default;
};

/// Checks sigma_hat >= 0 and, when logits are present, that the stored
/// summary matches the logits within 1e-9.
void validate(const PredictionRecord& rec);

enum class Bucket { kTrain, kVal, kTest, kCal };

std::string_view to_string(Bucket b);
Bucket parse_bucket(std::string_view s);

struct SplitAssignment {
  std::map<std::string, Bucket> buckets;

  std::vector<std::string> groups_in(Bucket b) const;
  std::size_t count(Bucket b) const;
};

enum class PlVariant { kScalarReadout, kLevelDistribution };

struct Hyperparams {
  double sigma0 = 0.3;
  double lambda_c = 0.45;
  double sigma_min = 0.15;
  double sigma_max = 1.2;
  double lambda_fid = 1.0;
  double lambda_xfid = 0.5;
  double lambda_pl = 0.0;  // diagnostic listwise term, off by default
  PlVariant pl_variant = PlVariant::kScalarReadout;

  void validate() const;
};

std::string_view to_string(PlVariant v);
PlVariant parse_pl_variant(std::string_view s);

// ---- file formats ----------------------------------------------------------

enum class AnnotationFormat { kCsv, kJsonl };

/// Annotation CSV header: image_id,group_id,method_id,s1,s2,s3,s4,overall
std::vector<AnnotatedImage> load_annotations(const std::filesystem::path& path,
                                             AnnotationFormat format = AnnotationFormat::kCsv);
std::vector<AnnotatedImage> parse_annotations_csv(std::string_view text);
std::vector<AnnotatedImage> parse_annotations_jsonl(std::string_view text);
void save_annotations(const std::filesystem::path& path, std::span<const AnnotatedImage> images,
                      AnnotationFormat format = AnnotationFormat::kCsv);
std::string format_annotations_csv(std::span<const AnnotatedImage> images);

/// Prediction JSONL: image_id, optional logits[5], mu_hat, sigma_hat.
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);
std::vector<PredictionRecord> parse_predictions_jsonl(std::string_view text);
void save_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> preds);
std::string format_predictions_jsonl(std::span<const PredictionRecord> preds);

/// Split CSV: group_id,bucket
SplitAssignment load_split(const std::filesystem::path& path);
void save_split(const std::filesystem::path& path, const SplitAssignment& split);

// ---- splitting ---------------------------------------------------------------

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Largest-remainder bucket sizes for n items.
std::array<std::size_t, 3> largest_remainder_sizes(std::size_t n, const SplitFractions& f);

/// Seeded, group-disjoint train/val/test assignment. Duplicate group names
/// are collapsed before assignment.
SplitAssignment group_disjoint_split(std::span<const std::string> groups, const SplitFractions& f,
                                     std::uint64_t seed);

// ---- helpers -------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view text);

/// %.17g formatting; round-trips every finite double.
std::string format_double(double x);

/// Joins annotations and predictions by image_id, in annotation order.
/// Throws DataError naming the first annotation id with no prediction.
std::vector<std::pair<const AnnotatedImage*, const PredictionRecord*>> match_by_id(
    std::span<const AnnotatedImage> images, std::span<const PredictionRecord> preds);

}  // namespace fuscore
