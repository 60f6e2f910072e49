#include <chrono>
#include <filesystem>
#include <set>
#include <sstream>

#include "bcrec/diagnostics.hpp"
#include "bcrec/encoders.hpp"
#include "bcrec/evaluator.hpp"
#include "bcrec/split_io.hpp"
#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace bcrec;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "bcrec");
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json read_json(const fs::path& p) { return json::parse(testutil::read_file(p)); }

const std::string kData = BCREC_DATA_DIR "/synth50/interactions.tsv";

// A small split + quick BC run shared by several cases.
struct Pipeline {
  testutil::TempDir dir{"cli"};
  fs::path split = dir / "split", model = dir / "model";
  Pipeline() {
    REQUIRE(run_cli({"split", "--input", kData, "--seed", "3", "--out", split.string()}).code == 0);
    REQUIRE(run_cli({"train", "--split", split.string(), "--out", model.string(), "--dim", "8",
                 "--lr", "0.01", "--batch-size", "128", "--negatives", "16", "--max-epochs", "4"})
                .code == 0);
  }
};

}  // namespace

TEST_CASE("full pipeline writes every listed artifact") {
  Pipeline p;
  for (const auto& w : {"angles", "geometry", "bias-corr", "subgroup-matrix"}) {
    auto r = run_cli({"diagnose", w, "--split", p.split.string(), "--checkpoint",
                  (p.model / "model.ckpt").string(), "--extractor", (p.model / "extractor.bin").string(),
                  "--out", (p.dir / w).string()});
    CHECK_MESSAGE(r.code == 0, r.err);
  }
  REQUIRE(run_cli({"eval", "--checkpoint", (p.model / "model.ckpt").string(), "--split",
               p.split.string(), "--out", (p.dir / "eval").string()})
              .code == 0);
  for (const auto& sub : {"split", "model", "eval", "angles", "geometry", "bias-corr", "subgroup-matrix"}) {
    const auto d = p.dir / sub;
    auto run = read_json(d / "run.json");
    CHECK(run["version"] == BCREC_VERSION);
    std::set<std::string> listed, present;
    for (const auto& o : run["outputs"]) listed.insert(o.get<std::string>());
    for (const auto& e : fs::directory_iterator(d)) present.insert(e.path().filename().string());
    CHECK(listed == present);
  }
}

TEST_CASE("same seed twice gives byte-identical outputs") {
  testutil::TempDir dir("cli-det");
  for (const char* tag : {"a", "b"}) {
    const auto d = dir / tag;
    REQUIRE(run_cli({"synth", "--users", "40", "--items", "60", "--seed", "5", "--out", (d / "syn").string()}).code == 0);
    REQUIRE(run_cli({"split", "--input", (d / "syn" / "interactions.tsv").string(), "--seed", "5",
                 "--out", (d / "split").string()})
                .code == 0);
    REQUIRE(run_cli({"train", "--split", (d / "split").string(), "--out", (d / "model").string(),
                 "--dim", "8", "--max-epochs", "3", "--batch-size", "64", "--negatives", "8"})
                .code == 0);
  }
  for (const char* sub : {"syn", "split"}) {
    for (const auto& e : fs::directory_iterator(dir / "a" / sub)) {
      if (e.path().filename() == "run.json") continue;
      CHECK(testutil::read_file(e.path()) ==
            testutil::read_file(dir / "b" / sub / e.path().filename()));
    }
  }
  for (const char* f : {"model.ckpt", "extractor.bin", "metrics.csv", "report.json"}) {
    CHECK(testutil::read_file(dir / "a" / "model" / f) == testutil::read_file(dir / "b" / "model" / f));
  }
}

TEST_CASE("temporal split without timestamps exits 2 naming the strategy") {
  testutil::TempDir dir("cli-temporal");
  testutil::write_file(dir / "x.tsv", "u1\ti1\nu2\ti2\nu1\ti2\n");
  auto r = run_cli({"split", "--input", (dir / "x.tsv").string(), "--strategy", "temporal", "--out",
                (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("temporal") != std::string::npos);
}

TEST_CASE("usage errors exit 2 with usage text") {
  auto r = run_cli({"train", "--split", "nowhere", "--loss", "focal"});
  CHECK(r.code == 2);
  CHECK(r.err.find("--loss") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
}

TEST_CASE("runtime failures exit 1") {
  testutil::TempDir dir("cli-rt");
  auto r = run_cli({"train", "--split", (dir / "missing").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 1);
  testutil::write_file(dir / "bad.tsv", "u1\n");
  CHECK(run_cli({"split", "--input", (dir / "bad.tsv").string(), "--out", (dir / "o").string()}).code == 1);
}

TEST_CASE("--help lists every flag of every command") {
  const std::map<std::string, std::vector<std::string>> flags{
      {"synth", {"--users", "--items", "--latent-dim", "--zipf", "--bias", "--sharpness"}},
      {"split", {"--input", "--strategy", "--fractions", "--k-core", "--sep"}},
      {"train", {"--split", "--encoder", "--layers", "--loss", "--lr", "--tau1", "--tau2",
                 "--margin-strength", "--schedule", "--patience"}},
      {"eval", {"--checkpoint", "--split", "--k", "--members", "--no-subgroups"}},
      {"diagnose", {"--checkpoint", "--extractor", "--split", "--total", "--log-pop"}}};
  for (const auto& [cmd, names] : flags) {
    auto r = run_cli({cmd, "--help"});
    CHECK(r.code == 0);
    for (const auto& n : names) CHECK_MESSAGE(r.out.find(n) != std::string::npos, cmd << " " << n);
    for (const auto& g : {"--seed", "--out", "--config", "--threads", "--log-level"})
      CHECK(r.out.find(g) != std::string::npos);
  }
}

TEST_CASE("config precedence: flags over file over defaults") {
  Pipeline p;
  testutil::write_file(p.dir / "cfg.json",
                       R"({"train": {"tau1": 0.2, "lr": 0.05, "dim": 8, "max_epochs": 2}})");
  auto r = run_cli({"train", "--config", (p.dir / "cfg.json").string(), "--split", p.split.string(),
                "--lr", "0.02", "--out", (p.dir / "m2").string(), "--batch-size", "128"});
  REQUIRE(r.code == 0);
  auto cfg = read_json(p.dir / "m2" / "run.json")["config"];
  CHECK(cfg["tau1"] == 0.2);
  CHECK(cfg["lr"] == 0.02);
  CHECK(cfg["tau2"] == 0.1);
  CHECK(cfg["loss"] == "bc");
  CHECK(r.out.find("\"tau1\":0.2") != std::string::npos);

  testutil::write_file(p.dir / "bad.json", R"({"train": {"learning_rate": 1}})");
  CHECK(run_cli({"train", "--config", (p.dir / "bad.json").string(), "--split", p.split.string(),
             "--out", (p.dir / "m3").string()})
            .code == 2);
  testutil::write_file(p.dir / "bad2.json", R"({"training": {}})");
  CHECK(run_cli({"train", "--config", (p.dir / "bad2.json").string(), "--split", p.split.string(),
             "--out", (p.dir / "m3").string()})
            .code == 2);
}

TEST_CASE("eval and diagnose outputs equal the library's") {
  Pipeline p;
  const auto ckpt_path = p.model / "model.ckpt";
  REQUIRE(run_cli({"eval", "--checkpoint", ckpt_path.string(), "--split", p.split.string(), "--k", "10",
               "--out", (p.dir / "eval").string()})
              .code == 0);
  auto split = read_split(p.split);
  auto ckpt = load_checkpoint(ckpt_path);
  ScoringModel model(ckpt.kind, ckpt.table, nullptr);
  auto labels = subgroup_partition(split.train.item_pop());
  auto got = read_json(p.dir / "eval" / "eval.json")["reports"];
  REQUIRE(got.size() == 2);
  for (const auto& j : got) {
    const auto& member = j["member"] == "test_balanced" ? *split.test_balanced : *split.test_imbalanced;
    auto want = evaluate(model, member, split.train, labels, 10, j["member"]).to_json();
    want.erase("timestamp");
    auto g = j;
    g.erase("timestamp");
    CHECK(g == want);
  }

  REQUIRE(run_cli({"diagnose", "geometry", "--split", p.split.string(), "--checkpoint", ckpt_path.string(),
               "--seed", "11", "--out", (p.dir / "geo").string()})
              .code == 0);
  CHECK(read_json(p.dir / "geo" / "geometry.json") ==
        geometry_report(ckpt.table, split.train, {128, 11, false}).to_json());

  REQUIRE(run_cli({"diagnose", "subgroup-matrix", "--split", p.split.string(), "--extractor",
               (p.model / "extractor.bin").string(), "--out", (p.dir / "sub").string()})
              .code == 0);
  auto pe = load_extractor(p.model / "extractor.bin");
  CHECK(read_json(p.dir / "sub" / "subgroup_matrix.json") ==
        subgroup_angle_matrix(pe, split.train).to_json());

  REQUIRE(run_cli({"eval", "--checkpoint", ckpt_path.string(), "--split", p.split.string(),
               "--no-subgroups", "--members", "test_balanced", "--out", (p.dir / "e2").string()})
              .code == 0);
  auto csv = testutil::read_file(p.dir / "e2" / "eval.csv");
  CHECK(csv.find(",head,") == std::string::npos);
  CHECK(csv.find("test_balanced,overall,recall") != std::string::npos);
}

TEST_CASE("diagnose bias-corr without an extractor exits 2") {
  Pipeline p;
  CHECK(run_cli({"diagnose", "bias-corr", "--split", p.split.string(), "--out", (p.dir / "d").string()})
            .code == 2);
  CHECK(run_cli({"diagnose", "bias-corr", "--split", p.split.string(), "--extractor",
             (p.dir / "nope.bin").string(), "--out", (p.dir / "d").string()})
            .code == 2);
}

TEST_CASE("softmax run has no extractor; bc run defaults tau2") {
  Pipeline p;
  CHECK(read_json(p.model / "run.json")["config"]["tau2"] == 0.1);
  REQUIRE(run_cli({"train", "--split", p.split.string(), "--loss", "softmax", "--max-epochs", "2",
               "--dim", "8", "--out", (p.dir / "sm").string()})
              .code == 0);
  CHECK_FALSE(fs::exists(p.dir / "sm" / "extractor.bin"));
  REQUIRE(run_cli({"train", "--split", p.split.string(), "--encoder", "lightgcn", "--layers", "1",
               "--loss", "softmax", "--max-epochs", "2", "--dim", "8", "--out", (p.dir / "lg").string()})
              .code == 0);
  CHECK(run_cli({"eval", "--checkpoint", (p.dir / "lg" / "model.ckpt").string(), "--split",
             p.split.string(), "--out", (p.dir / "lge").string()})
            .code == 0);
}

TEST_CASE("smoke run on the bundled 50-user data with default settings") {
  testutil::TempDir dir("cli-smoke");
  const auto t0 = std::chrono::steady_clock::now();
  REQUIRE(run_cli({"split", "--input", kData, "--out", (dir / "s").string()}).code == 0);
  auto r = run_cli({"train", "--split", (dir / "s").string(), "--out", (dir / "m").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 30.0);
}
