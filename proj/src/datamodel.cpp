#include "fuscore/datamodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "fuscore/json_io.hpp"
#include "fuscore/losses.hpp"
#include "fuscore/rng.hpp"

namespace fuscore {

// ---- QualityLevel / LevelDistribution -----------------------------------------

QualityLevel::QualityLevel(int value) : value_(value) {
  if (value < 1 || value > kNumLevels) {
    throw DataError("quality level " + std::to_string(value) + " outside 1..5");
  }
}

LevelDistribution::LevelDistribution(const LevelProbs& probs) : probs_(probs) {
  double sum = 0.0;
  for (double p : probs_) {
    if (!std::isfinite(p) || p < 0.0) throw DomainError("level probability negative or non-finite");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DomainError("level probabilities sum to " + format_double(sum) + ", expected 1");
  }
}

LevelDistribution LevelDistribution::normalized(const LevelProbs& weights) {
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw DomainError("level weight negative or non-finite");
    sum += w;
  }
  if (!(sum > 0.0)) throw DomainError("level weights sum to zero");
  LevelProbs p{};
  for (int l = 0; l < kNumLevels; ++l) p[l] = weights[l] / sum;
  return LevelDistribution(p);
}

LevelDistribution LevelDistribution::uniform() {
  LevelProbs p;
  p.fill(1.0 / kNumLevels);
  return LevelDistribution(p);
}

LevelDistribution LevelDistribution::one_hot(QualityLevel level) {
  LevelProbs p{};
  p[level.index()] = 1.0;
  return LevelDistribution(p);
}

double LevelDistribution::expectation() const {
  double e = 0.0;
  for (int l = 0; l < kNumLevels; ++l) e += (l + 1) * probs_[l];
  return e;
}

double LevelDistribution::stddev() const {
  const double mean = expectation();
  double var = 0.0;
  for (int l = 0; l < kNumLevels; ++l) {
    const double d = (l + 1) - mean;
    var += d * d * probs_[l];
  }
  return std::sqrt(std::max(var, 0.0));
}

double LevelDistribution::entropy() const {
  double h = 0.0;
  for (double p : probs_) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

// ---- validation ----------------------------------------------------------------

namespace {

void check_score(double v, const std::string& field, const std::string& id) {
  if (!std::isfinite(v) || v < kMinScore || v > kMaxScore) {
    throw DataError("image '" + id + "': field " + field + "=" + format_double(v) +
                    " outside [1,5]");
  }
}

void check_identifier(const std::string& s, const std::string& field) {
  if (s.empty()) throw DataError("empty " + field);
  if (s.find_first_of(",\n\r\"") != std::string::npos) {
    throw DataError(field + " '" + s + "' contains a reserved character");
  }
}

}  // namespace

void validate(const AnnotatedImage& img) {
  check_identifier(img.image_id, "image_id");
  check_identifier(img.group_id, "group_id");
  check_identifier(img.method_id, "method_id");
  for (int k = 0; k < kNumSubScores; ++k) {
    check_score(img.sub_scores[k], "s" + std::to_string(k + 1), img.image_id);
  }
  check_score(img.overall, "overall", img.image_id);
}

PredictionRecord PredictionRecord::from_logits(std::string image_id, const LevelLogits& logits) {
  const LevelDistribution q = softmax_levels(logits);
  return PredictionRecord{std::move(image_id), logits, q.expectation(), q.stddev()};
}

void validate(const PredictionRecord& rec) {
  if (rec.image_id.empty()) throw DataError("prediction with empty image_id");
  if (!std::isfinite(rec.mu_hat) || rec.mu_hat < kMinScore - 1e-9 || rec.mu_hat > kMaxScore + 1e-9) {
    throw DataError("prediction '" + rec.image_id + "': mu_hat outside [1,5]");
  }
  if (!std::isfinite(rec.sigma_hat) || rec.sigma_hat < 0.0) {
    throw DataError("prediction '" + rec.image_id + "': sigma_hat negative or non-finite");
  }
  if (rec.logits) {
    const LevelDistribution q = softmax_levels(*rec.logits);
    if (std::abs(q.expectation() - rec.mu_hat) > 1e-9) {
      throw DataError("prediction '" + rec.image_id + "': mu_hat disagrees with logits");
    }
    if (std::abs(q.stddev() - rec.sigma_hat) > 1e-9) {
      throw DataError("prediction '" + rec.image_id + "': sigma_hat disagrees with logits");
    }
  }
}

std::string_view to_string(Bucket b) {
  switch (b) {
    case Bucket::kTrain: return "train";
    case Bucket::kVal: return "val";
    case Bucket::kTest: return "test";
    case Bucket::kCal: return "cal";
  }
  return "?";
}

Bucket parse_bucket(std::string_view s) {
  if (s == "train") return Bucket::kTrain;
  if (s == "val") return Bucket::kVal;
  if (s == "test") return Bucket::kTest;
  if (s == "cal") return Bucket::kCal;
  throw DataError("unknown split bucket '" + std::string(s) + "'");
}

std::vector<std::string> SplitAssignment::groups_in(Bucket b) const {
  std::vector<std::string> out;
  for (const auto& [g, bucket] : buckets) {
    if (bucket == b) out.push_back(g);
  }
  return out;
}

std::size_t SplitAssignment::count(Bucket b) const {
  return static_cast<std::size_t>(std::count_if(
      buckets.begin(), buckets.end(), [b](const auto& kv) { return kv.second == b; }));
}

void Hyperparams::validate() const {
  const auto fail = [](const std::string& msg) { throw DataError("hyperparameters: " + msg); };
  if (!(sigma_min > 0.0)) fail("sigma_min must be > 0");
  if (!(sigma_min <= sigma_max)) fail("sigma_min must be <= sigma_max");
  if (!(sigma0 >= 0.0)) fail("sigma0 must be >= 0");
  if (!(lambda_c >= 0.0)) fail("lambda_c must be >= 0");
  if (!(lambda_fid >= 0.0) || !(lambda_xfid >= 0.0) || !(lambda_pl >= 0.0)) {
    fail("loss weights must be >= 0");
  }
}

std::string_view to_string(PlVariant v) {
  return v == PlVariant::kScalarReadout ? "scalar" : "level";
}

PlVariant parse_pl_variant(std::string_view s) {
  if (s == "scalar") return PlVariant::kScalarReadout;
  if (s == "level") return PlVariant::kLevelDistribution;
  throw DataError("unknown pl_variant '" + std::string(s) + "' (expected scalar|level)");
}

// ---- helpers ----------------------------------------------------------------------

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

namespace {

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.remove_suffix(1);
  }
  return out;
}

double parse_number(std::string_view s, std::size_t line_no, std::string_view field) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("line " + std::to_string(line_no) + ": field " + std::string(field) +
                    " is not a number ('" + std::string(s) + "')");
  }
  return v;
}

void check_unique(std::unordered_set<std::string>& seen, const std::string& id, std::size_t line_no) {
  if (!seen.insert(id).second) {
    throw DataError("line " + std::to_string(line_no) + ": duplicate image_id '" + id + "'");
  }
}

void validate_at_line(const AnnotatedImage& img, std::size_t line_no) {
  try {
    validate(img);
  } catch (const DataError& e) {
    throw DataError("line " + std::to_string(line_no) + ": " + e.what());
  }
}

constexpr std::string_view kAnnotationHeader = "image_id,group_id,method_id,s1,s2,s3,s4,overall";

}  // namespace

std::vector<AnnotatedImage> parse_annotations_csv(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != kAnnotationHeader) {
    throw DataError("line 1: expected header '" + std::string(kAnnotationHeader) + "'");
  }
  std::vector<AnnotatedImage> out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (lines[i].empty()) continue;
    const auto f = split_fields(lines[i]);
    if (f.size() != 8) {
      throw DataError("line " + std::to_string(line_no) + ": expected 8 fields, got " +
                      std::to_string(f.size()));
    }
    AnnotatedImage img;
    img.image_id = std::string(f[0]);
    img.group_id = std::string(f[1]);
    img.method_id = std::string(f[2]);
    for (int k = 0; k < kNumSubScores; ++k) {
      img.sub_scores[k] = parse_number(f[3 + k], line_no, "s" + std::to_string(k + 1));
    }
    img.overall = parse_number(f[7], line_no, "overall");
    validate_at_line(img, line_no);
    check_unique(seen, img.image_id, line_no);
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<AnnotatedImage> parse_annotations_jsonl(std::string_view text) {
  const auto lines = split_lines(text);
  std::vector<AnnotatedImage> out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (lines[i].empty()) continue;
    AnnotatedImage img;
    try {
      const Json j = Json::parse(lines[i]);
      img.image_id = j.at("image_id").get<std::string>();
      img.group_id = j.at("group_id").get<std::string>();
      img.method_id = j.at("method_id").get<std::string>();
      const auto subs = j.at("sub_scores").get<std::vector<double>>();
      if (subs.size() != kNumSubScores) throw DataError("sub_scores must have 4 entries");
      std::copy(subs.begin(), subs.end(), img.sub_scores.begin());
      img.overall = j.at("overall").get<double>();
    } catch (const Json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    validate_at_line(img, line_no);
    check_unique(seen, img.image_id, line_no);
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<AnnotatedImage> load_annotations(const std::filesystem::path& path,
                                             AnnotationFormat format) {
  const std::string text = read_file(path);
  return format == AnnotationFormat::kCsv ? parse_annotations_csv(text)
                                          : parse_annotations_jsonl(text);
}

std::string format_annotations_csv(std::span<const AnnotatedImage> images) {
  std::string out(kAnnotationHeader);
  out += '\n';
  for (const auto& img : images) {
    validate(img);
    out += img.image_id + ',' + img.group_id + ',' + img.method_id;
    for (double s : img.sub_scores) out += ',' + format_double(s);
    out += ',' + format_double(img.overall) + '\n';
  }
  return out;
}

void save_annotations(const std::filesystem::path& path, std::span<const AnnotatedImage> images,
                      AnnotationFormat format) {
  if (format == AnnotationFormat::kCsv) {
    write_file(path, format_annotations_csv(images));
    return;
  }
  std::string out;
  for (const auto& img : images) {
    validate(img);
    Json j;
    j["image_id"] = img.image_id;
    j["group_id"] = img.group_id;
    j["method_id"] = img.method_id;
    j["sub_scores"] = img.sub_scores;
    j["overall"] = img.overall;
    out += dump_json(j) + '\n';
  }
  write_file(path, out);
}

std::vector<PredictionRecord> parse_predictions_jsonl(std::string_view text) {
  const auto lines = split_lines(text);
  std::vector<PredictionRecord> out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (lines[i].empty()) continue;
    PredictionRecord rec;
    try {
      const Json j = Json::parse(lines[i]);
      rec.image_id = j.at("image_id").get<std::string>();
      if (j.contains("logits") && !j["logits"].is_null()) {
        const auto z = j["logits"].get<std::vector<double>>();
        if (z.size() != kNumLevels) throw DataError("logits must have 5 entries");
        LevelLogits logits{};
        std::copy(z.begin(), z.end(), logits.begin());
        rec.logits = logits;
      }
      if (j.contains("mu_hat")) {
        rec.mu_hat = j["mu_hat"].get<double>();
        rec.sigma_hat = j.at("sigma_hat").get<double>();
      } else if (rec.logits) {
        rec = PredictionRecord::from_logits(rec.image_id, *rec.logits);
      } else {
        throw DataError("record needs logits or mu_hat/sigma_hat");
      }
      validate(rec);
    } catch (const Json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::runtime_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    check_unique(seen, rec.image_id, line_no);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  return parse_predictions_jsonl(read_file(path));
}

std::string format_predictions_jsonl(std::span<const PredictionRecord> preds) {
  std::string out;
  for (const auto& rec : preds) {
    Json j;
    j["image_id"] = rec.image_id;
    if (rec.logits) j["logits"] = *rec.logits;
    j["mu_hat"] = rec.mu_hat;
    j["sigma_hat"] = rec.sigma_hat;
    out += dump_json(j) + '\n';
  }
  return out;
}

void save_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> preds) {
  write_file(path, format_predictions_jsonl(preds));
}

SplitAssignment load_split(const std::filesystem::path& path) {
  const auto text = read_file(path);
  const auto lines = split_lines(text);
  if (lines.empty() || lines[0] != "group_id,bucket") {
    throw DataError("line 1: expected header 'group_id,bucket'");
  }
  SplitAssignment split;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto f = split_fields(lines[i]);
    if (f.size() != 2) throw DataError("line " + std::to_string(i + 1) + ": expected 2 fields");
    if (!split.buckets.emplace(std::string(f[0]), parse_bucket(f[1])).second) {
      throw DataError("line " + std::to_string(i + 1) + ": group '" + std::string(f[0]) +
                      "' assigned twice");
    }
  }
  return split;
}

void save_split(const std::filesystem::path& path, const SplitAssignment& split) {
  std::string out = "group_id,bucket\n";
  for (const auto& [g, b] : split.buckets) out += g + ',' + std::string(to_string(b)) + '\n';
  write_file(path, out);
}

// ---- splitting -------------------------------------------------------------------------

std::array<std::size_t, 3> largest_remainder_sizes(std::size_t n, const SplitFractions& f) {
  const std::array<double, 3> fr{f.train, f.val, f.test};
  double sum = 0.0;
  for (double x : fr) {
    if (!(x > 0.0)) throw DataError("split fractions must be positive");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DataError("split fractions must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = fr[k] * static_cast<double>(n);
    // 1e-9 absorbs representation error such as 0.7 * 10 = 6.9999999999999991.
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  return sizes;
}

SplitAssignment group_disjoint_split(std::span<const std::string> groups, const SplitFractions& f,
                                     std::uint64_t seed) {
  if (groups.empty()) throw DataError("group_disjoint_split: empty group list");
  std::vector<std::string> unique(groups.begin(), groups.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

  const auto sizes = largest_remainder_sizes(unique.size(), f);
  Rng rng(seed);
  rng.shuffle(std::span<std::string>(unique));

  SplitAssignment split;
  std::size_t pos = 0;
  const std::array<Bucket, 3> buckets{Bucket::kTrain, Bucket::kVal, Bucket::kTest};
  for (int k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < sizes[k]; ++i) split.buckets.emplace(unique[pos++], buckets[k]);
  }
  return split;
}

std::vector<std::pair<const AnnotatedImage*, const PredictionRecord*>> match_by_id(
    std::span<const AnnotatedImage> images, std::span<const PredictionRecord> preds) {
  std::unordered_map<std::string, const PredictionRecord*> by_id;
  for (const auto& p : preds) by_id.emplace(p.image_id, &p);
  std::vector<std::pair<const AnnotatedImage*, const PredictionRecord*>> out;
  out.reserve(images.size());
  for (const auto& img : images) {
    const auto it = by_id.find(img.image_id);
    if (it == by_id.end()) {
      throw DataError("no prediction for image_id '" + img.image_id + "'");
    }
    out.emplace_back(&img, it->second);
  }
  return out;
}

}  // namespace fuscore
