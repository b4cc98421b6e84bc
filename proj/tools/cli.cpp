#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "fuscore/analysis.hpp"
#include "fuscore/calibration.hpp"
#include "fuscore/config.hpp"
#include "fuscore/datamodel.hpp"
#include "fuscore/json_io.hpp"
#include "fuscore/labels.hpp"
#include "fuscore/losses.hpp"
#include "fuscore/metrics.hpp"
#include "fuscore/rng.hpp"
#include "fuscore/sampler.hpp"
#include "fuscore/synthlab.hpp"

namespace fuscore::cli {
namespace {

class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- resolved configuration ---------------------------------------------------

struct CalibrationOptions {
  std::size_t splits = 50;
  double cal_fraction = 0.5;
};

struct StrataOptions {
  TertileBoundaries boundaries;
  double floor = 0.21;
  double shift = 0.02;
};

struct BootstrapOptions {
  std::size_t n = 2000;
  std::string metric = "srcc";
};

struct GradcheckOptions {
  std::size_t trials = 100;
  double tol = 1e-5;
  double h = 1e-5;
};

struct RunConfig {
  std::uint64_t seed = 42;
  Hyperparams hp;
  SamplerConfig sampler;
  SynthConfig synth;
  TrainConfig train;
  SplitFractions split;
  CalibrationOptions calibration;
  StrataOptions strata;
  BootstrapOptions bootstrap;
  GradcheckOptions gradcheck;
};

const std::set<std::string> kTables = {"",        "hyperparams", "sampler",   "synth",     "train",
                                       "split",   "calibration", "strata",    "bootstrap", "gradcheck"};

void read_hp(ConfigTable& t, Hyperparams& hp) {
  hp.sigma0 = t.get_double("sigma0", hp.sigma0);
  hp.lambda_c = t.get_double("lambda_c", hp.lambda_c);
  hp.sigma_min = t.get_double("sigma_min", hp.sigma_min);
  hp.sigma_max = t.get_double("sigma_max", hp.sigma_max);
  hp.lambda_fid = t.get_double("lambda_fid", hp.lambda_fid);
  hp.lambda_xfid = t.get_double("lambda_xfid", hp.lambda_xfid);
  hp.lambda_pl = t.get_double("lambda_pl", hp.lambda_pl);
  hp.pl_variant = parse_pl_variant(t.get_string("pl_variant", std::string(to_string(hp.pl_variant))));
}

void read_config(Config& cfg, RunConfig& rc) {
  for (const auto& name : cfg.table_names()) {
    if (!kTables.count(name)) throw DataError("config: unknown table [" + name + "]");
  }
  rc.seed = cfg.table("").get_uint("seed", rc.seed);
  read_hp(cfg.table("hyperparams"), rc.hp);

  auto& s = cfg.table("sampler");
  rc.sampler.m = s.get_uint("m", rc.sampler.m);
  rc.sampler.n = s.get_uint("n", rc.sampler.n);
  rc.sampler.accumulation = s.get_uint("accumulation", rc.sampler.accumulation);

  auto& y = cfg.table("synth");
  rc.synth.n_groups = y.get_uint("n_groups", rc.synth.n_groups);
  rc.synth.n_methods = y.get_uint("n_methods", rc.synth.n_methods);
  rc.synth.n_raters = y.get_uint("n_raters", rc.synth.n_raters);
  rc.synth.scene_spread = y.get_double("scene_spread", rc.synth.scene_spread);
  rc.synth.method_spread = y.get_double("method_spread", rc.synth.method_spread);
  rc.synth.rater_noise = y.get_double("rater_noise", rc.synth.rater_noise);
  rc.synth.consensus_coupling = y.get_double("consensus_coupling", rc.synth.consensus_coupling);
  rc.synth.feature_noise = y.get_double("feature_noise", rc.synth.feature_noise);
  rc.synth.feature_dim = y.get_uint("feature_dim", rc.synth.feature_dim);

  auto& tr = cfg.table("train");
  rc.train.steps = tr.get_uint("steps", rc.train.steps);
  rc.train.lr = tr.get_double("lr", rc.train.lr);
  rc.train.momentum = tr.get_double("momentum", rc.train.momentum);

  auto& sp = cfg.table("split");
  rc.split.train = sp.get_double("train", rc.split.train);
  rc.split.val = sp.get_double("val", rc.split.val);
  rc.split.test = sp.get_double("test", rc.split.test);

  auto& c = cfg.table("calibration");
  rc.calibration.splits = c.get_uint("splits", rc.calibration.splits);
  rc.calibration.cal_fraction = c.get_double("cal_fraction", rc.calibration.cal_fraction);

  auto& st = cfg.table("strata");
  rc.strata.boundaries.low_max = st.get_double("low_max", rc.strata.boundaries.low_max);
  rc.strata.boundaries.mid_max = st.get_double("mid_max", rc.strata.boundaries.mid_max);
  rc.strata.floor = st.get_double("floor", rc.strata.floor);
  rc.strata.shift = st.get_double("shift", rc.strata.shift);

  auto& b = cfg.table("bootstrap");
  rc.bootstrap.n = b.get_uint("n", rc.bootstrap.n);
  rc.bootstrap.metric = b.get_string("metric", rc.bootstrap.metric);

  auto& g = cfg.table("gradcheck");
  rc.gradcheck.trials = g.get_uint("trials", rc.gradcheck.trials);
  rc.gradcheck.tol = g.get_double("tol", rc.gradcheck.tol);
  rc.gradcheck.h = g.get_double("h", rc.gradcheck.h);

  for (const auto& name : kTables) {
    if (cfg.has_table(name)) cfg.table(name).reject_unknown(name);
  }
}

/// A standalone hyperparameter file: keys at top level or under [hyperparams].
Hyperparams load_hp_file(const std::string& path, Hyperparams hp) {
  Config cfg = Config::load(path);
  for (const auto& name : cfg.table_names()) {
    if (!name.empty() && name != "hyperparams") throw DataError(path + ": unexpected table [" + name + "]");
  }
  read_hp(cfg.table(""), hp);
  read_hp(cfg.table("hyperparams"), hp);
  cfg.table("").reject_unknown("");
  cfg.table("hyperparams").reject_unknown("hyperparams");
  return hp;
}

// ---- JSON views --------------------------------------------------------------

Json to_json(const Hyperparams& hp) {
  return Json{{"sigma0", hp.sigma0},         {"lambda_c", hp.lambda_c},
              {"sigma_min", hp.sigma_min},   {"sigma_max", hp.sigma_max},
              {"lambda_fid", hp.lambda_fid}, {"lambda_xfid", hp.lambda_xfid},
              {"lambda_pl", hp.lambda_pl},   {"pl_variant", std::string(to_string(hp.pl_variant))}};
}

Json to_json(const SamplerConfig& s) {
  return Json{{"m", s.m}, {"n", s.n}, {"accumulation", s.accumulation}, {"seed", s.seed}};
}

Json to_json(const SynthConfig& s) {
  return Json{{"n_groups", s.n_groups},
              {"n_methods", s.n_methods},
              {"n_raters", s.n_raters},
              {"scene_spread", s.scene_spread},
              {"method_spread", s.method_spread},
              {"rater_noise", s.rater_noise},
              {"consensus_coupling", s.consensus_coupling},
              {"feature_noise", s.feature_noise},
              {"feature_dim", s.feature_dim},
              {"seed", s.seed}};
}

Json to_json(const TertileBoundaries& b) { return Json{{"low_max", b.low_max}, {"mid_max", b.mid_max}}; }

Json to_json(const LossBreakdown& lb) {
  return Json{{"kl", lb.kl},
              {"fid", lb.fid},
              {"xfid", lb.xfid},
              {"pl", lb.pl},
              {"total", lb.total},
              {"n_within_pairs", lb.n_within_pairs},
              {"n_cross_pairs", lb.n_cross_pairs}};
}

Json to_json(const VarianceDecomposition& v) {
  Json j{{"within", v.within}, {"cross", v.cross}, {"total", v.total}};
  j["cross_fraction"] = v.total > 0 ? Json(v.cross / v.total) : Json(nullptr);
  return j;
}

Json optional_json(const std::optional<double>& x) { return x ? Json(*x) : Json(nullptr); }

// ---- pretty renderer ------------------------------------------------------------

std::string scalar_text(const Json& v) {
  if (v.is_number_float()) {
    std::ostringstream s;
    s << std::setprecision(6) << v.get<double>();
    return s.str();
  }
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

void render(std::ostream& out, const Json& v, const std::string& title, int depth) {
  const std::string pad(static_cast<std::size_t>(2 * depth), ' ');
  if (!title.empty()) out << pad << title << '\n';
  std::size_t width = 0;
  for (const auto& [k, item] : v.items()) {
    if (!item.is_object()) width = std::max(width, k.size());
  }
  for (const auto& [k, item] : v.items()) {
    if (item.is_object()) continue;
    std::string text;
    if (item.is_array()) {
      text = "[";
      for (std::size_t i = 0; i < item.size(); ++i) text += (i ? ", " : "") + scalar_text(item[i]);
      text += "]";
    } else {
      text = scalar_text(item);
    }
    out << pad << "  " << std::left << std::setw(static_cast<int>(width)) << k << "  " << text << '\n';
  }
  for (const auto& [k, item] : v.items()) {
    if (item.is_object()) render(out, item, "[" + k + "]", depth + 1);
  }
}

// ---- shared IO -----------------------------------------------------------------

std::vector<std::string> ids_of(std::span<const AnnotatedImage> images) {
  std::vector<std::string> out;
  for (const auto& img : images) out.push_back(img.image_id);
  return out;
}

AnnotationFormat parse_format(const std::string& s) {
  if (s == "csv") return AnnotationFormat::kCsv;
  if (s == "jsonl") return AnnotationFormat::kJsonl;
  throw DataError("unknown annotation format '" + s + "'");
}

std::string label_line(const std::string& id, const SoftLabel& l) {
  Json j;
  j["image_id"] = id;
  j["mu"] = l.mu;
  j["sigma"] = l.sigma;
  j["delta"] = l.delta;
  j["probs"] = l.dist.probs();
  return dump_json(j);
}

template <class F>
void for_each_jsonl(const std::string& path, F&& f) {
  const std::string text = read_file(path);
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      f(Json::parse(line));
    } catch (const Json::exception& e) {
      throw DataError(path + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::map<std::string, SoftLabel> load_labels(const std::string& path) {
  std::map<std::string, SoftLabel> out;
  for_each_jsonl(path, [&](const Json& j) {
    SoftLabel l;
    l.mu = j.at("mu").get<double>();
    l.sigma = j.at("sigma").get<double>();
    l.delta = j.value("delta", 0.0);
    l.dist = LevelDistribution(j.at("probs").get<LevelProbs>());
    const auto id = j.at("image_id").get<std::string>();
    if (!out.emplace(id, l).second) throw DataError("duplicate image_id '" + id + "'");
  });
  return out;
}

std::vector<BatchItem> load_batch(const std::string& path, const Hyperparams& hp) {
  std::vector<BatchItem> out;
  for_each_jsonl(path, [&](const Json& j) {
    BatchItem it;
    it.image_id = j.at("image_id").get<std::string>();
    it.group_id = j.at("group_id").get<std::string>();
    it.logits = j.at("logits").get<LevelLogits>();
    if (j.contains("sub_scores")) {
      AnnotatedImage img{it.image_id, it.group_id, j.value("method_id", std::string("m")), j.at("sub_scores").get<SubScores>(),
                         j.at("overall").get<double>()};
      validate(img);
      it.label = build_soft_label(img, hp);
    } else {
      it.label = make_soft_label(j.at("mu").get<double>(), j.at("sigma").get<double>(), j.value("delta", 0.0));
    }
    out.push_back(std::move(it));
  });
  return out;
}

std::vector<double> column(std::span<const AnnotatedImage> images, std::span<const PredictionRecord> preds,
                           bool predicted) {
  std::vector<double> out;
  for (const auto& [img, pred] : match_by_id(images, preds)) out.push_back(predicted ? pred->mu_hat : img->overall);
  return out;
}

// ---- gradcheck -------------------------------------------------------------------

std::vector<BatchItem> random_batch(Rng& rng, const Hyperparams& hp) {
  const std::size_t m = 1 + rng.index(3), n = 1 + rng.index(4);
  std::vector<BatchItem> batch;
  for (std::size_t g = 0; g < m; ++g) {
    for (std::size_t k = 0; k < n; ++k) {
      AnnotatedImage img;
      img.image_id = "g" + std::to_string(g) + "_" + std::to_string(k);
      img.group_id = "g" + std::to_string(g);
      img.method_id = "m" + std::to_string(k);
      for (auto& s : img.sub_scores) s = 1.0 + 0.25 * static_cast<double>(rng.index(17));
      img.overall = 1.0 + 0.25 * static_cast<double>(rng.index(17));
      BatchItem it{img.image_id, img.group_id, {}, build_soft_label(img, hp)};
      for (auto& z : it.logits) z = rng.normal(0.0, 1.5);
      batch.push_back(std::move(it));
    }
  }
  if (batch.size() < 2) return random_batch(rng, hp);
  return batch;
}

}  // namespace

GradcheckSummary gradcheck(std::size_t trials, double h, double tol, std::uint64_t seed) {
  const Hyperparams hp;
  GradcheckSummary s;
  s.trials = trials;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, t));
    auto batch = random_batch(rng, hp);
    const auto g = tripartite_grad(batch, hp);
    double scale = 0.0;
    for (const auto& row : g) {
      for (double v : row) scale = std::max(scale, std::abs(v));
    }
    bool failed = false;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (int l = 0; l < kNumLevels; ++l) {
        const double z0 = batch[i].logits[l];
        batch[i].logits[l] = z0 + h;
        const double up = tripartite_loss(batch, hp).total;
        batch[i].logits[l] = z0 - h;
        const double down = tripartite_loss(batch, hp).total;
        batch[i].logits[l] = z0;
        const double fd = (up - down) / (2 * h);
        const double abs_err = std::abs(g[i][l] - fd);
        const double rel = abs_err / std::max({std::abs(g[i][l]), std::abs(fd), 1e-8 * (1.0 + scale)});
        s.max_abs_error = std::max(s.max_abs_error, abs_err);
        s.max_rel_error = std::max(s.max_rel_error, rel);
        failed |= !(rel < tol);
      }
    }
    if (failed) ++s.failures;
  }
  return s;
}

namespace {

// ---- subcommand context ------------------------------------------------------------

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string report;
  bool pretty = false;
};

struct HpFlags {
  std::optional<double> sigma0, lambda_c, sigma_min, sigma_max, lambda_fid, lambda_xfid, lambda_pl;
  std::optional<std::string> pl_variant;

  void add(CLI::App* app, bool with_loss_weights) {
    app->add_option("--sigma0", sigma0,
                    "Base label width; sigma = clamp(sigma0 + lambda_c * delta, sigma_min, sigma_max). Default 0.3");
    app->add_option("--lambda-c", lambda_c, "Conflict gain on the label width (width formula). Default 0.45");
    app->add_option("--sigma-min", sigma_min, "Lower clamp of the label width (width formula). Default 0.15");
    app->add_option("--sigma-max", sigma_max, "Upper clamp of the label width (width formula). Default 1.2");
    if (!with_loss_weights) return;
    app->add_option("--lambda-fid", lambda_fid,
                    "Weight of within-group Thurstone fidelity in the tripartite objective. Default 1.0");
    app->add_option("--lambda-xfid", lambda_xfid,
                    "Weight of cross-group Thurstone fidelity in the tripartite objective. Default 0.5");
    app->add_option("--lambda-pl", lambda_pl, "Weight of the Plackett-Luce listwise diagnostic. Default 0");
    app->add_option("--pl-variant", pl_variant, "PL utility: 'scalar' (expectation readout) or 'level'")
        ->check(CLI::IsMember({"scalar", "level"}));
  }

  void apply(Hyperparams& hp) const {
    if (sigma0) hp.sigma0 = *sigma0;
    if (lambda_c) hp.lambda_c = *lambda_c;
    if (sigma_min) hp.sigma_min = *sigma_min;
    if (sigma_max) hp.sigma_max = *sigma_max;
    if (lambda_fid) hp.lambda_fid = *lambda_fid;
    if (lambda_xfid) hp.lambda_xfid = *lambda_xfid;
    if (lambda_pl) hp.lambda_pl = *lambda_pl;
    if (pl_variant) hp.pl_variant = parse_pl_variant(*pl_variant);
  }
};

struct Report {
  std::string command;
  Json config = Json::object();
  Json result = Json::object();
};

struct Context {
  Globals globals;
  RunConfig rc;
  std::ostream* out = nullptr;

  void emit(const Report& r) const {
    Json j;
    j["command"] = r.command;
    j["seed"] = rc.seed;
    j["config"] = r.config;
    j["result"] = r.result;
    if (!globals.report.empty()) write_file(globals.report, dump_json(j, 2) + '\n');
    if (globals.pretty) {
      *out << r.command << " (seed " << rc.seed << ")\n";
      render(*out, r.result, "", 0);
    } else if (globals.report.empty()) {
      *out << dump_json(j, 2) << '\n';
    }
  }
};

std::optional<double> parse_boundary_list(const std::optional<std::string>& s, TertileBoundaries& b) {
  if (!s) return std::nullopt;
  const auto comma = s->find(',');
  if (comma == std::string::npos) throw DataError("--boundaries expects two comma-separated values");
  try {
    b.low_max = std::stod(s->substr(0, comma));
    b.mid_max = std::stod(s->substr(comma + 1));
  } catch (const std::exception&) {
    throw DataError("--boundaries: bad number in '" + *s + "'");
  }
  if (!(b.low_max < b.mid_max)) throw DataError("--boundaries must be increasing");
  return b.low_max;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fuscore: conflict-aware soft-label supervision and evaluation toolkit", "fuscore"};
  app.require_subcommand(1);
  app.fallthrough();
  Context ctx;
  ctx.out = &out;
  app.add_option("--seed", ctx.globals.seed, "Master seed for every random stream (default 42)");
  app.add_option("--config", ctx.globals.config, "TOML config with [hyperparams], [sampler], [synth], ... tables");
  app.add_option("--report", ctx.globals.report, "Write the JSON report to this path instead of stdout");
  app.add_flag("--pretty", ctx.globals.pretty, "Print a human-readable table to stdout");

  std::function<void()> action;

  // labels build
  auto* labels = app.add_subcommand("labels", "Soft-label construction");
  labels->require_subcommand(1);
  auto* labels_build = labels->add_subcommand("build", "Build per-image soft labels from annotations");
  std::string lb_annotations, lb_out, lb_format = "csv";
  HpFlags lb_hp;
  labels_build->add_option("--annotations", lb_annotations, "Annotation file")->required();
  labels_build->add_option("--format", lb_format, "Annotation format: csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  labels_build->add_option("--out", lb_out, "Output JSONL: image_id, mu, sigma, delta, probs")->required();
  lb_hp.add(labels_build, false);
  labels_build->callback([&] {
    action = [&] {
      lb_hp.apply(ctx.rc.hp);
      ctx.rc.hp.validate();
      const auto images = load_annotations(lb_annotations, parse_format(lb_format));
      std::string text;
      double max_err = 0.0, sum_sigma = 0.0, sum_delta = 0.0;
      for (const auto& img : images) {
        const SoftLabel l = build_soft_label(img, ctx.rc.hp);
        max_err = std::max(max_err, std::abs(l.dist.expectation() - img.overall));
        sum_sigma += l.sigma;
        sum_delta += l.delta;
        text += label_line(img.image_id, l) + '\n';
      }
      write_file(lb_out, text);
      const double n = static_cast<double>(std::max<std::size_t>(images.size(), 1));
      Report r{"labels build"};
      r.config = {{"annotations", lb_annotations}, {"format", lb_format}, {"out", lb_out},
                  {"hyperparams", to_json(ctx.rc.hp)}};
      r.result = {{"n_labels", images.size()},
                  {"max_first_moment_error", max_err},
                  {"mean_sigma", sum_sigma / n},
                  {"mean_delta", sum_delta / n}};
      ctx.emit(r);
    };
  });

  // loss eval / gradcheck
  auto* loss = app.add_subcommand("loss", "Tripartite objective");
  loss->require_subcommand(1);
  auto* loss_eval = loss->add_subcommand("eval", "Evaluate the objective on one batch");
  std::string le_batch, le_hp_file;
  bool le_grad = false;
  HpFlags le_hp;
  loss_eval->add_option("--batch", le_batch,
                        "Batch JSONL: image_id, group_id, logits[5], and mu+sigma or sub_scores+overall")
      ->required();
  loss_eval->add_option("--hp", le_hp_file, "Hyperparameter TOML (keys at top level or under [hyperparams])");
  loss_eval->add_flag("--grad", le_grad, "Also report d total / d logits per item");
  le_hp.add(loss_eval, true);
  loss_eval->callback([&] {
    action = [&] {
      if (!le_hp_file.empty()) ctx.rc.hp = load_hp_file(le_hp_file, ctx.rc.hp);
      le_hp.apply(ctx.rc.hp);
      ctx.rc.hp.validate();
      const auto batch = load_batch(le_batch, ctx.rc.hp);
      Report r{"loss eval"};
      r.config = {{"batch", le_batch}, {"hp", le_hp_file}, {"hyperparams", to_json(ctx.rc.hp)}};
      r.result = to_json(tripartite_loss(batch, ctx.rc.hp));
      if (le_grad) {
        const auto g = tripartite_grad(batch, ctx.rc.hp);
        Json grads = Json::object();
        for (std::size_t i = 0; i < batch.size(); ++i) grads[batch[i].image_id] = g[i];
        r.result["grad"] = grads;
      }
      ctx.emit(r);
    };
  });

  auto* loss_gc = loss->add_subcommand("gradcheck", "Analytic gradients vs central finite differences");
  std::optional<std::size_t> gc_trials;
  std::optional<double> gc_tol, gc_h;
  loss_gc->add_option("--trials", gc_trials, "Number of random batches (default 100)");
  loss_gc->add_option("--tol", gc_tol, "Maximum relative error (default 1e-5)");
  loss_gc->add_option("--step", gc_h, "Central-difference step (default 1e-5)");
  auto gradcheck_action = [&] {
    if (gc_trials) ctx.rc.gradcheck.trials = *gc_trials;
    if (gc_tol) ctx.rc.gradcheck.tol = *gc_tol;
    if (gc_h) ctx.rc.gradcheck.h = *gc_h;
    const auto& o = ctx.rc.gradcheck;
    const auto s = gradcheck(o.trials, o.h, o.tol, ctx.rc.seed);
    Report r{"loss gradcheck"};
    r.config = {{"trials", o.trials}, {"tol", o.tol}, {"h", o.h}, {"hyperparams", to_json(Hyperparams{})}};
    r.result = {{"trials", s.trials},
                {"failures", s.failures},
                {"max_rel_error", s.max_rel_error},
                {"max_abs_error", s.max_abs_error},
                {"passed", s.failures == 0}};
    ctx.emit(r);
    if (s.failures) throw CheckFailed("gradient check failed on " + std::to_string(s.failures) + " batches");
  };
  loss_gc->callback([&] { action = gradcheck_action; });

  // top-level alias
  auto* gc_alias = app.add_subcommand("gradcheck", "Alias of 'loss gradcheck'");
  gc_alias->add_option("--trials", gc_trials, "Number of random batches (default 100)");
  gc_alias->add_option("--tol", gc_tol, "Maximum relative error (default 1e-5)");
  gc_alias->add_option("--step", gc_h, "Central-difference step (default 1e-5)");
  gc_alias->callback([&] { action = gradcheck_action; });

  // eval
  auto* eval = app.add_subcommand("eval", "SRCC, PLCC, KRCC, PairAcc, per-group tau and KL");
  std::string ev_annotations, ev_predictions, ev_labels;
  HpFlags ev_hp;
  eval->add_option("--annotations", ev_annotations, "Annotation CSV")->required();
  eval->add_option("--predictions", ev_predictions, "Prediction JSONL")->required();
  eval->add_option("--labels", ev_labels, "Soft labels from 'labels build' (otherwise rebuilt)");
  ev_hp.add(eval, false);
  eval->callback([&] {
    action = [&] {
      ev_hp.apply(ctx.rc.hp);
      ctx.rc.hp.validate();
      const auto images = load_annotations(ev_annotations);
      const auto preds = load_predictions(ev_predictions);
      std::vector<SoftLabel> labels;
      if (!ev_labels.empty()) {
        const auto by_id = load_labels(ev_labels);
        for (const auto& img : images) {
          const auto it = by_id.find(img.image_id);
          if (it == by_id.end()) throw DataError("no label for image_id '" + img.image_id + "'");
          labels.push_back(it->second);
        }
      }
      const EvalReport e = evaluate(images, preds, ctx.rc.hp, labels);
      Report r{"eval"};
      r.config = {{"annotations", ev_annotations}, {"predictions", ev_predictions}, {"labels", ev_labels},
                  {"hyperparams", to_json(ctx.rc.hp)}};
      r.result = {{"srcc", e.srcc},
                  {"plcc", e.plcc},
                  {"krcc", e.krcc},
                  {"pair_acc", e.pair_acc},
                  {"per_group_tau", e.per_group_tau},
                  {"tau_groups_skipped", e.tau_groups_skipped},
                  {"eval_kl", e.eval_kl},
                  {"n_images", e.n_images},
                  {"n_groups", e.n_groups}};
      ctx.emit(r);
    };
  });

  // bootstrap
  auto* boot = app.add_subcommand("bootstrap", "Paired bootstrap test between two prediction sets");
  std::string bs_annotations, bs_a, bs_b;
  std::optional<std::string> bs_metric;
  std::optional<std::size_t> bs_n;
  boot->add_option("--annotations", bs_annotations, "Annotation CSV supplying ground truth")->required();
  boot->add_option("--a", bs_a, "Prediction JSONL of system A")->required();
  boot->add_option("--b", bs_b, "Prediction JSONL of system B")->required();
  boot->add_option("--metric", bs_metric, "srcc, plcc or krcc (default srcc)")
      ->check(CLI::IsMember({"srcc", "plcc", "krcc"}));
  boot->add_option("--n", bs_n, "Number of resamples (default 2000); significance threshold p < 0.05");
  boot->callback([&] {
    action = [&] {
      if (bs_metric) ctx.rc.bootstrap.metric = *bs_metric;
      if (bs_n) ctx.rc.bootstrap.n = *bs_n;
      const Metric metric = parse_metric(ctx.rc.bootstrap.metric);
      const auto images = load_annotations(bs_annotations);
      const auto a = load_predictions(bs_a);
      const auto b = load_predictions(bs_b);
      const auto gt = column(images, a, false);
      const auto pa = column(images, a, true);
      const auto pb = column(images, b, true);
      const auto res = paired_bootstrap(pa, pb, gt, metric, ctx.rc.bootstrap.n, ctx.rc.seed);
      Report r{"bootstrap"};
      r.config = {{"annotations", bs_annotations}, {"a", bs_a}, {"b", bs_b},
                  {"metric", ctx.rc.bootstrap.metric}, {"n", ctx.rc.bootstrap.n}};
      r.result = {{"metric_a", compute_metric(metric, pa, gt)},
                  {"metric_b", compute_metric(metric, pb, gt)},
                  {"delta", res.delta},
                  {"p_value", res.p_value},
                  {"significant", res.p_value < 0.05},
                  {"n_used", res.n_used},
                  {"n_skipped", res.n_skipped}};
      ctx.emit(r);
    };
  });

  // calibrate
  auto* calib = app.add_subcommand("calibrate", "Coverage ECE with single-scale and smooth recalibration");
  std::string ca_annotations, ca_predictions;
  std::optional<std::size_t> ca_splits;
  std::optional<double> ca_fraction;
  calib->add_option("--annotations", ca_annotations, "Annotation CSV")->required();
  calib->add_option("--predictions", ca_predictions, "Prediction JSONL with mu_hat, sigma_hat")->required();
  calib->add_option("--splits", ca_splits, "Monte-Carlo cal/test splits for the smooth fit (default 50)");
  calib->add_option("--cal-fraction", ca_fraction, "Fraction of groups on the calibration side (default 0.5)");
  calib->callback([&] {
    action = [&] {
      if (ca_splits) ctx.rc.calibration.splits = *ca_splits;
      if (ca_fraction) ctx.rc.calibration.cal_fraction = *ca_fraction;
      const auto images = load_annotations(ca_annotations);
      const auto preds = load_predictions(ca_predictions);
      std::vector<CalibrationRecord> recs;
      for (const auto& [img, pred] : match_by_id(images, preds)) {
        recs.push_back({img->group_id, img->overall, pred->mu_hat, pred->sigma_hat});
      }
      const auto c = monte_carlo_calibration(recs, ctx.rc.calibration.splits, ctx.rc.calibration.cal_fraction,
                                             ctx.rc.seed);
      Report r{"calibrate"};
      r.config = {{"annotations", ca_annotations},
                  {"predictions", ca_predictions},
                  {"splits", ctx.rc.calibration.splits},
                  {"cal_fraction", ctx.rc.calibration.cal_fraction}};
      r.result = {{"n_cal", c.n_cal}, {"n_test", c.n_test}, {"n_splits", c.n_splits}};
      r.result["single_scale"] = {{"ece_raw", c.ece_raw}, {"tau_star", c.tau_star}, {"ece_tau", c.ece_tau}};
      r.result["smooth"] = {{"ece_smooth_mean", c.ece_smooth_mean},
                            {"a_star_mean", c.a_star_mean},
                            {"b_star_mean", c.b_star_mean},
                            {"b_star_abs_mean", c.b_star_abs_mean}};
      ctx.emit(r);
    };
  });

  // stratify
  auto* strat = app.add_subcommand("stratify", "SRCC within conflict tertiles");
  std::string st_annotations, st_predictions;
  std::optional<std::string> st_boundaries;
  std::optional<double> st_shift;
  strat->add_option("--annotations", st_annotations, "Annotation CSV")->required();
  strat->add_option("--predictions", st_predictions, "Prediction JSONL")->required();
  strat->add_option("--boundaries", st_boundaries, "Tertile upper bounds on delta, 'low,mid' (default 0.45,0.71)");
  strat->add_option("--shift", st_shift, "Boundary perturbation for the migration count (default 0.02)");
  strat->callback([&] {
    action = [&] {
      parse_boundary_list(st_boundaries, ctx.rc.strata.boundaries);
      if (st_shift) ctx.rc.strata.shift = *st_shift;
      const auto& b = ctx.rc.strata.boundaries;
      const auto images = load_annotations(st_annotations);
      const auto preds = load_predictions(st_predictions);
      const auto rep = stratify_by_delta(images, preds, b);
      Report r{"stratify"};
      r.config = {{"annotations", st_annotations}, {"predictions", st_predictions}, {"boundaries", to_json(b)},
                  {"shift", ctx.rc.strata.shift}};
      r.result = {{"overall_srcc", rep.overall_srcc}, {"n_images", rep.n_images}};
      for (const auto& s : rep.strata) {
        Json j{{"n", s.n}, {"srcc", optional_json(s.srcc)}, {"gt_std", optional_json(s.gt_std)}};
        if (!s.srcc) j["undefined_reason"] = s.undefined_reason;
        r.result[std::string(to_string(s.stratum))] = j;
      }
      r.result["migration"] = {{"low_max_minus_shift", boundary_migration(images, b, -ctx.rc.strata.shift)},
                               {"low_max_plus_shift", boundary_migration(images, b, ctx.rc.strata.shift)}};
      ctx.emit(r);
    };
  });

  // ceiling
  auto* ceil_cmd = app.add_subcommand("ceiling", "Counterfactual pooled-SRCC ceiling");
  std::string ce_annotations, ce_predictions;
  std::optional<std::string> ce_boundaries;
  std::optional<double> ce_floor;
  ceil_cmd->add_option("--annotations", ce_annotations, "Annotation CSV")->required();
  ceil_cmd->add_option("--predictions", ce_predictions, "Prediction JSONL")->required();
  ceil_cmd->add_option("--boundaries", ce_boundaries, "Tertile upper bounds on delta (default 0.45,0.71)");
  ceil_cmd->add_option("--floor", ce_floor, "SRCC pinned in the high-conflict stratum (default 0.21)");
  ceil_cmd->callback([&] {
    action = [&] {
      parse_boundary_list(ce_boundaries, ctx.rc.strata.boundaries);
      if (ce_floor) ctx.rc.strata.floor = *ce_floor;
      const auto images = load_annotations(ce_annotations);
      const auto preds = load_predictions(ce_predictions);
      const auto c = counterfactual_ceiling(images, preds, ctx.rc.strata.boundaries, ctx.rc.strata.floor, ctx.rc.seed);
      Report r{"ceiling"};
      r.config = {{"annotations", ce_annotations}, {"predictions", ce_predictions},
                  {"boundaries", to_json(ctx.rc.strata.boundaries)}, {"floor", ctx.rc.strata.floor}};
      r.result = {{"ceiling", c.ceiling},
                  {"actual_srcc", c.actual_srcc},
                  {"high_srcc", optional_json(c.high_srcc)},
                  {"transpositions", c.transpositions},
                  {"repooling", c.repooling}};
      ctx.emit(r);
    };
  });

  // vardecomp
  auto* vd = app.add_subcommand("vardecomp", "Within/cross-group variance decomposition");
  std::string vd_annotations, vd_predictions;
  vd->add_option("--annotations", vd_annotations, "Annotation CSV")->required();
  vd->add_option("--predictions", vd_predictions, "Optional prediction JSONL, decomposed the same way");
  vd->callback([&] {
    action = [&] {
      const auto images = load_annotations(vd_annotations);
      std::vector<GroupValue> gv;
      std::set<std::string> groups;
      for (const auto& img : images) {
        gv.push_back({img.group_id, img.overall});
        groups.insert(img.group_id);
      }
      Report r{"vardecomp"};
      r.config = {{"annotations", vd_annotations}, {"predictions", vd_predictions}};
      r.result = {{"n_images", images.size()}, {"n_groups", groups.size()}};
      r.result["ground_truth"] = to_json(variance_decomposition(gv));
      if (!vd_predictions.empty()) {
        const auto preds = load_predictions(vd_predictions);
        std::vector<GroupValue> pv;
        for (const auto& [img, pred] : match_by_id(images, preds)) pv.push_back({img->group_id, pred->mu_hat});
        r.result["predictions"] = to_json(variance_decomposition(pv));
      }
      ctx.emit(r);
    };
  });

  // sample
  auto* sample = app.add_subcommand("sample", "Group-stratified micro-batch plan for one epoch");
  std::string sa_annotations, sa_out;
  std::optional<std::size_t> sa_m, sa_n, sa_acc;
  sample->add_option("--annotations", sa_annotations, "Annotation CSV")->required();
  sample->add_option("--m", sa_m, "Groups per micro-batch (default 2)");
  sample->add_option("--n", sa_n, "Images per group (default 4)");
  sample->add_option("--accumulation", sa_acc, "Micro-batches per optimizer step (default 2)");
  sample->add_option("--out", sa_out, "Output JSONL, one micro-batch per line")->required();
  sample->callback([&] {
    action = [&] {
      auto& s = ctx.rc.sampler;
      if (sa_m) s.m = *sa_m;
      if (sa_n) s.n = *sa_n;
      if (sa_acc) s.accumulation = *sa_acc;
      s.seed = ctx.rc.seed;
      s.validate();
      const auto images = load_annotations(sa_annotations);
      const auto plan = make_epoch(images, s);
      std::string text;
      for (std::size_t i = 0; i < plan.batches.size(); ++i) {
        Json j{{"batch", i}, {"step", i / s.accumulation}, {"image_ids", plan.batches[i]}};
        text += dump_json(j) + '\n';
      }
      write_file(sa_out, text);
      Report r{"sample"};
      r.config = {{"annotations", sa_annotations}, {"out", sa_out}, {"sampler", to_json(s)}};
      r.result = {{"n_batches", plan.batches.size()},
                  {"n_steps", (plan.batches.size() + s.accumulation - 1) / s.accumulation},
                  {"within_pairs_per_batch", within_pairs_per_batch(s)},
                  {"cross_pairs_per_batch", cross_pairs_per_batch(s)},
                  {"skipped_groups", plan.skipped_groups}};
      ctx.emit(r);
    };
  });

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-rater corpus");
  std::string sy_out;
  std::optional<std::size_t> sy_groups, sy_methods, sy_raters;
  std::optional<double> sy_coupling;
  synth->add_option("--out-dir", sy_out, "Directory for annotations.csv, raters.jsonl, features.csv")->required();
  synth->add_option("--groups", sy_groups, "Number of source pairs (default 200)");
  synth->add_option("--methods", sy_methods, "Fused images per source pair (default 11)");
  synth->add_option("--raters", sy_raters, "Raters per image (default 5)");
  synth->add_option("--coupling", sy_coupling,
                    "Coupling of rater noise to sub-dimension conflict, in [0, 1] (default 1)");
  synth->callback([&] {
    action = [&] {
      auto& c = ctx.rc.synth;
      if (sy_groups) c.n_groups = *sy_groups;
      if (sy_methods) c.n_methods = *sy_methods;
      if (sy_raters) c.n_raters = *sy_raters;
      if (sy_coupling) c.consensus_coupling = *sy_coupling;
      c.seed = ctx.rc.seed;
      const auto corpus = generate(c);
      save_corpus(corpus, sy_out);
      std::vector<double> delta, spread;
      std::vector<GroupValue> gv;
      for (const auto& img : corpus.annotations) {
        delta.push_back(dimensional_conflict(img.sub_scores));
        spread.push_back(rater_disagreement(corpus, img.image_id));
        gv.push_back({img.group_id, img.overall});
      }
      Report r{"synth"};
      r.config = {{"out_dir", sy_out}, {"synth", to_json(c)}};
      r.result = {{"n_images", corpus.annotations.size()},
                  {"n_groups", c.n_groups},
                  {"pearson_delta_rater_std", plcc(delta, spread)}};
      r.result["variance"] = to_json(variance_decomposition(gv));
      ctx.emit(r);
    };
  });

  // train-toy
  auto* train = app.add_subcommand("train-toy", "Train the linear toy scorer on a synthetic corpus");
  std::string tt_corpus, tt_hp_file, tt_out;
  std::optional<std::size_t> tt_steps;
  std::optional<double> tt_lr, tt_momentum;
  HpFlags tt_hp;
  train->add_option("--corpus", tt_corpus, "Corpus directory written by 'synth'")->required();
  train->add_option("--hp", tt_hp_file, "Hyperparameter TOML (keys at top level or under [hyperparams])");
  train->add_option("--steps", tt_steps, "Optimizer steps (default 2000)");
  train->add_option("--lr", tt_lr, "Learning rate (default 0.05)");
  train->add_option("--momentum", tt_momentum, "SGD momentum (default 0)");
  train->add_option("--out", tt_out, "Scorer JSON")->required();
  tt_hp.add(train, true);
  train->callback([&] {
    action = [&] {
      if (!tt_hp_file.empty()) ctx.rc.hp = load_hp_file(tt_hp_file, ctx.rc.hp);
      tt_hp.apply(ctx.rc.hp);
      ctx.rc.hp.validate();
      auto& t = ctx.rc.train;
      if (tt_steps) t.steps = *tt_steps;
      if (tt_lr) t.lr = *tt_lr;
      if (tt_momentum) t.momentum = *tt_momentum;
      t.seed = ctx.rc.seed;
      t.sampler = ctx.rc.sampler;
      t.sampler.seed = ctx.rc.seed;
      const auto corpus = load_corpus(tt_corpus);
      std::vector<std::string> groups;
      for (const auto& img : corpus.annotations) groups.push_back(img.group_id);
      const auto split = group_disjoint_split(groups, ctx.rc.split, ctx.rc.seed);
      const auto train_groups = split.groups_in(Bucket::kTrain);
      const auto res = train_toy(corpus, train_groups, ctx.rc.hp, t);
      write_file(tt_out, scorer_to_json(res.scorer));

      const auto test_groups = split.groups_in(Bucket::kTest);
      const auto test = select_groups(corpus.annotations, test_groups);
      Report r{"train-toy"};
      r.config = {{"corpus", tt_corpus},
                  {"hp", tt_hp_file},
                  {"out", tt_out},
                  {"hyperparams", to_json(ctx.rc.hp)},
                  {"sampler", to_json(t.sampler)},
                  {"steps", t.steps},
                  {"lr", t.lr},
                  {"momentum", t.momentum},
                  {"split", {{"train", ctx.rc.split.train}, {"val", ctx.rc.split.val}, {"test", ctx.rc.split.test}}}};
      r.result = {{"n_train_groups", train_groups.size()},
                  {"n_test_groups", test_groups.size()},
                  {"initial_train_loss", res.initial_train_loss},
                  {"final_train_loss", res.final_train_loss}};
      if (!res.curve.empty()) r.result["last_step"] = to_json(res.curve.back());
      if (test.size() >= 2) {
        const auto preds = predict(res.scorer, corpus, ids_of(test));
        const auto e = evaluate(test, preds, ctx.rc.hp);
        r.result["test"] = {{"srcc", e.srcc}, {"plcc", e.plcc}, {"pair_acc", e.pair_acc}, {"n_images", e.n_images}};
      }
      ctx.emit(r);
    };
  });

  // split
  auto* split_cmd = app.add_subcommand("split", "Seeded group-disjoint train/val/test split");
  std::string sp_annotations, sp_out;
  std::optional<double> sp_train, sp_val, sp_test;
  split_cmd->add_option("--annotations", sp_annotations, "Annotation CSV")->required();
  split_cmd->add_option("--train", sp_train, "Train fraction of groups (default 0.8)");
  split_cmd->add_option("--val", sp_val, "Validation fraction of groups (default 0.1)");
  split_cmd->add_option("--test", sp_test, "Test fraction of groups (default 0.1)");
  split_cmd->add_option("--out", sp_out, "Split CSV: group_id,bucket")->required();
  split_cmd->callback([&] {
    action = [&] {
      auto& f = ctx.rc.split;
      if (sp_train) f.train = *sp_train;
      if (sp_val) f.val = *sp_val;
      if (sp_test) f.test = *sp_test;
      const auto images = load_annotations(sp_annotations);
      std::vector<std::string> groups;
      for (const auto& img : images) groups.push_back(img.group_id);
      const auto s = group_disjoint_split(groups, f, ctx.rc.seed);
      save_split(sp_out, s);
      Report r{"split"};
      r.config = {{"annotations", sp_annotations}, {"out", sp_out},
                  {"fractions", {{"train", f.train}, {"val", f.val}, {"test", f.test}}}};
      r.result = {{"train", s.count(Bucket::kTrain)}, {"val", s.count(Bucket::kVal)}, {"test", s.count(Bucket::kTest)}};
      ctx.emit(r);
    };
  });

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "Score a corpus with a trained toy scorer");
  std::string pr_corpus, pr_scorer, pr_out;
  pred_cmd->add_option("--corpus", pr_corpus, "Corpus directory written by 'synth'")->required();
  pred_cmd->add_option("--scorer", pr_scorer, "Scorer JSON from 'train-toy'")->required();
  pred_cmd->add_option("--out", pr_out, "Prediction JSONL")->required();
  pred_cmd->callback([&] {
    action = [&] {
      const auto corpus = load_corpus(pr_corpus);
      const auto scorer = scorer_from_json(read_file(pr_scorer));
      const auto preds = predict(scorer, corpus, ids_of(corpus.annotations));
      save_predictions(pr_out, preds);
      Report r{"predict"};
      r.config = {{"corpus", pr_corpus}, {"scorer", pr_scorer}, {"out", pr_out}};
      r.result = {{"n_predictions", preds.size()}};
      ctx.emit(r);
    };
  });

  const auto fail = [&](const char* kind, const std::string& msg, int code) {
    err << dump_json(Json{{"error", {{"kind", kind}, {"message", msg}}}}) << '\n';
    return code;
  };

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (!ctx.globals.config.empty()) {
      Config cfg = Config::load(ctx.globals.config);
      read_config(cfg, ctx.rc);
    }
    if (ctx.globals.seed) ctx.rc.seed = *ctx.globals.seed;
    if (!action) return fail("usage", "no subcommand given", 2);
    action();
  } catch (const CheckFailed& e) {
    return fail("check", e.what(), 1);
  } catch (const DataError& e) {
    return fail("data", e.what(), 3);
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", e.what(), 3);
  } catch (const DomainError& e) {
    return fail("numerical", e.what(), 4);
  } catch (const TrainingDiverged& e) {
    return fail("numerical", e.what(), 4);
  } catch (const std::invalid_argument& e) {
    return fail("data", e.what(), 3);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 4);
  }
  return 0;
}

}  // namespace fuscore::cli
