#include <algorithm>
#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "fuscore/datamodel.hpp"
#include "fuscore/json_io.hpp"
#include "fuscore/synthlab.hpp"

using namespace fuscore;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

struct Workspace {
  fs::path dir;
  Workspace() : dir(fs::temp_directory_path() / "fuscore_cli_test") {
    fs::remove_all(dir);
    fs::create_directories(dir);
    SynthConfig cfg;
    cfg.n_groups = 12;
    cfg.n_methods = 6;
    const auto corpus = generate(cfg);
    save_corpus(corpus, (dir / "corpus").string());
    std::vector<PredictionRecord> preds;
    for (const auto& img : corpus.annotations) {
      preds.push_back({img.image_id, std::nullopt, std::clamp(corpus.latent_quality.at(img.image_id), 1.0, 5.0), 0.4});
    }
    save_predictions(dir / "preds.jsonl", preds);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string p(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("help and usage errors") {
  const auto h = call({"--help"});
  CHECK(h.code == 0);
  CHECK(h.out.find("labels") != std::string::npos);
  const auto lh = call({"labels", "build", "--help"});
  CHECK(lh.code == 0);
  CHECK(lh.out.find("clamp(sigma0 + lambda_c * delta") != std::string::npos);
  CHECK(call({"nosuch"}).code == 2);
  CHECK(call({}).code == 2);
  CHECK(call({"eval", "--annotations"}).code == 2);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = call({"loss", "gradcheck", "--trials", "10"});
  CHECK(r.code == 0);
  const auto j = Json::parse(r.out);
  CHECK(j["result"]["passed"] == true);
  CHECK(j["seed"] == 42);
  CHECK(call({"gradcheck", "--trials", "3", "--tol", "1e-30"}).code == 1);
}

TEST_CASE("pipeline") {
  Workspace w;
  const auto ann = w.p("corpus/annotations.csv");

  SUBCASE("labels then eval with labels") {
    REQUIRE(call({"labels", "build", "--annotations", ann, "--out", w.p("labels.jsonl")}).code == 0);
    const auto r = call({"eval", "--annotations", ann, "--predictions", w.p("preds.jsonl"), "--labels",
                         w.p("labels.jsonl"), "--report", w.p("eval.json")});
    CHECK(r.code == 0);
    const auto j = Json::parse(read_file(w.p("eval.json")));
    CHECK(j["command"] == "eval");
    CHECK(j["result"]["eval_kl"].get<double>() > 0);
    CHECK(j["result"]["srcc"].get<double>() > 0.5);
    CHECK(j["config"]["hyperparams"]["sigma0"] == 0.3);
  }

  SUBCASE("mismatched ids") {
    std::vector<PredictionRecord> few{{"g00_m00", std::nullopt, 3.0, 0.5}};
    save_predictions(w.p("few.jsonl"), few);
    const auto r = call({"eval", "--annotations", ann, "--predictions", w.p("few.jsonl")});
    CHECK(r.code == 3);
    CHECK(r.err.find("g00_m01") != std::string::npos);
  }

  SUBCASE("missing file") {
    const auto r = call({"vardecomp", "--annotations", w.p("nope.csv")});
    CHECK(r.code == 3);
    CHECK(Json::parse(r.err)["error"]["kind"] == "data");
  }

  SUBCASE("config overrides and unknown keys") {
    write_file(w.p("cfg.toml"), "seed = 7\n[sampler]\nm = 3\nn = 2\n");
    const auto r = call({"--config", w.p("cfg.toml"), "sample", "--annotations", ann, "--out", w.p("plan.jsonl")});
    REQUIRE(r.code == 0);
    const auto j = Json::parse(r.out);
    CHECK(j["seed"] == 7);
    CHECK(j["config"]["sampler"]["m"] == 3);
    CHECK(j["result"]["within_pairs_per_batch"] == 3);
    const auto flag = call({"--config", w.p("cfg.toml"), "sample", "--annotations", ann, "--out", w.p("plan.jsonl"),
                            "--m", "2", "--seed", "9"});
    CHECK(Json::parse(flag.out)["config"]["sampler"]["m"] == 2);
    CHECK(Json::parse(flag.out)["seed"] == 9);

    write_file(w.p("bad.toml"), "[sampler]\nmm = 3\n");
    const auto bad = call({"--config", w.p("bad.toml"), "vardecomp", "--annotations", ann});
    CHECK(bad.code == 3);
    CHECK(bad.err.find("mm") != std::string::npos);
    write_file(w.p("bad2.toml"), "[nosuch]\nx = 1\n");
    CHECK(call({"--config", w.p("bad2.toml"), "vardecomp", "--annotations", ann}).code == 3);
  }

  SUBCASE("loss eval on a batch file") {
    write_file(w.p("batch.jsonl"),
               R"({"image_id":"a","group_id":"g","logits":[0.1,0.3,-0.2,0.5,0.0],"mu":3.25,"sigma":0.4949})"
               "\n"
               R"({"image_id":"b","group_id":"g","logits":[1.0,0.2,0.0,-0.5,-1.0],"mu":2.5,"sigma":0.3})"
               "\n"
               R"({"image_id":"c","group_id":"g","logits":[-1,-0.5,0,0.7,1.2],"mu":4.0,"sigma":0.8})"
               "\n");
    write_file(w.p("hp.toml"), "lambda_fid = 1.0\nlambda_xfid = 0.5\n");
    const auto r = call({"loss", "eval", "--batch", w.p("batch.jsonl"), "--hp", w.p("hp.toml"), "--grad"});
    REQUIRE(r.code == 0);
    const auto j = Json::parse(r.out);
    CHECK(j["result"]["total"].get<double>() == doctest::Approx(0.740114987364229).epsilon(1e-12));
    CHECK(j["result"]["grad"].size() == 3);
  }

  SUBCASE("pretty output") {
    const auto r = call({"--pretty", "calibrate", "--annotations", ann, "--predictions", w.p("preds.jsonl"),
                         "--splits", "3"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("[single_scale]") != std::string::npos);
    CHECK(r.out.find("[smooth]") != std::string::npos);
  }

  SUBCASE("synth, train, predict") {
    REQUIRE(call({"synth", "--out-dir", w.p("s"), "--groups", "20", "--methods", "5"}).code == 0);
    REQUIRE(call({"train-toy", "--corpus", w.p("s"), "--steps", "50", "--out", w.p("scorer.json")}).code == 0);
    REQUIRE(call({"predict", "--corpus", w.p("s"), "--scorer", w.p("scorer.json"), "--out", w.p("p.jsonl")}).code == 0);
    CHECK(load_predictions(w.p("p.jsonl")).size() == 100);
  }
}
