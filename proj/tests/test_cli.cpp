#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mmet/cli.hpp"
#include "temp_dir.hpp"

using namespace mmet;
using namespace mmet::testing;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const fs::path& p) {
  auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// 6 identities x 4 images, written once per test.
struct Workspace {
  TempDir dir;
  fs::path data = dir.path() / "synth" / "dataset";

  Workspace() {
    auto r = run({"synth", "--out", (dir.path() / "synth").string(), "--ids", "6",
                  "--images-per-id", "4", "--cameras", "2"});
    REQUIRE(r.code == kExitOk);
  }
  std::string out(const std::string& name) const { return (dir.path() / name).string(); }
};

const std::vector<std::string> kSmallFinetune{"--steps", "6", "--set", "finetune.P=3", "--set",
                                              "finetune.K=2", "--warmup", "2"};

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("cli: synth writes every sample plus a manifest, deterministically") {
  TempDir dir;
  for (auto name : {"a", "b"})
    REQUIRE(run({"synth", "--out", (dir.path() / name).string(), "--ids", "5", "--images-per-id",
                 "4", "--seed", "3"})
                .code == kExitOk);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path() / "a" / "dataset")) {
    ++files;
    CHECK(slurp(e.path()) == slurp(dir.path() / "b" / "dataset" / e.path().filename()));
  }
  CHECK(files == 21);
  auto config = nlohmann::json::parse(slurp(dir.path() / "a" / "config.json"));
  CHECK(config["dataset"]["seed"] == 3);
  CHECK(config["dataset"]["num_identities"] == 5);
}

TEST_CASE("cli: pretrain logs one row per step and records the masking strategy") {
  Workspace ws;
  auto r = run({"pretrain", "--data", ws.data.string(), "--out", ws.out("pre"), "--steps", "5",
                "--set", "pretrain.batch_size=8", "--warmup", "1", "--mask-strategy", "random"});
  REQUIRE(r.code == kExitOk);
  CHECK(line_count(ws.out("pre") + "/log.csv") == 6);
  CHECK(fs::exists(ws.out("pre") + "/checkpoint.mmet"));
  CHECK(fs::exists(ws.out("pre") + "/final_report.json"));
  auto config = nlohmann::json::parse(slurp(ws.out("pre") + "/config.json"));
  CHECK(config["pretrain"]["mask_strategy"] == "random");
  CHECK(config["pretrain"]["total_steps"] == 5);
}

TEST_CASE("cli: a split run resumed from its checkpoint matches an uninterrupted one") {
  Workspace ws;
  for (std::string cmd : {"pretrain", "finetune"}) {
    CAPTURE(cmd);
    const auto base =
        std::vector<std::string>{cmd, "--data", ws.data.string()} +
        (cmd == "finetune" ? kSmallFinetune
                           : std::vector<std::string>{"--steps", "6", "--set",
                                                      "pretrain.batch_size=8", "--warmup", "1"});
    const auto whole = ws.out(cmd + "_whole"), split = ws.out(cmd + "_split");
    REQUIRE(run(base + std::vector<std::string>{"--out", whole}).code == kExitOk);
    REQUIRE(run(base + std::vector<std::string>{"--out", split, "--stop-at", "3"}).code == kExitOk);
    CHECK(line_count(split + "/log.csv") == 4);
    REQUIRE(run(base + std::vector<std::string>{"--out", split, "--resume",
                                                split + "/checkpoint.mmet"})
                .code == kExitOk);
    CHECK(slurp(split + "/log.csv") == slurp(whole + "/log.csv"));
    CHECK(slurp(split + "/checkpoint.mmet") == slurp(whole + "/checkpoint.mmet"));
  }
}

TEST_CASE("cli: resume and stop-at misuse") {
  Workspace ws;
  auto pre = ws.out("pre");
  REQUIRE(run({"pretrain", "--data", ws.data.string(), "--out", pre, "--steps", "2", "--set",
               "pretrain.batch_size=8", "--warmup", "1"})
              .code == kExitOk);
  auto r = run({"finetune", "--data", ws.data.string(), "--out", ws.out("ft"), "--resume",
                pre + "/checkpoint.mmet"});
  CHECK(r.code == kExitConfig);
  r = run({"pretrain", "--data", ws.data.string(), "--out", ws.out("x"), "--steps", "2",
           "--stop-at", "3"});
  CHECK(r.code == kExitConfig);
  CHECK_FALSE(fs::exists(ws.out("x")));
  r = run({"pretrain", "--data", ws.data.string(), "--out", ws.out("y"), "--resume",
           ws.out("missing.mmet")});
  CHECK(r.code == kExitData);
}

TEST_CASE("cli: finetune from a pretrained checkpoint differs from scratch") {
  Workspace ws;
  REQUIRE(run({"pretrain", "--data", ws.data.string(), "--out", ws.out("pre"), "--steps", "4",
               "--set", "pretrain.batch_size=8", "--warmup", "1"})
              .code == kExitOk);
  auto scratch = std::vector<std::string>{"finetune", "--data", ws.data.string(), "--out",
                                          ws.out("scratch")} + kSmallFinetune;
  auto init = std::vector<std::string>{"finetune", "--data", ws.data.string(), "--out",
                                       ws.out("init"), "--init", ws.out("pre") + "/checkpoint.mmet"} +
              kSmallFinetune;
  REQUIRE(run(scratch).code == kExitOk);
  REQUIRE(run(init).code == kExitOk);
  CHECK(line_count(ws.out("scratch") + "/log.csv") == 7);
  CHECK(slurp(ws.out("scratch") + "/log.csv") != slurp(ws.out("init") + "/log.csv"));
}

TEST_CASE("cli: eval-after, eval and gradcam on a finetuned checkpoint") {
  Workspace ws;
  const auto ft = ws.out("ft");
  auto r = run(std::vector<std::string>{"finetune", "--data", ws.data.string(), "--out", ft,
                                        "--eval-after"} + kSmallFinetune);
  CHECK(r.code == kExitConfig);  // no identities held out
  CHECK_FALSE(fs::exists(ft));

  r = run(std::vector<std::string>{"finetune", "--data", ws.data.string(), "--out", ft,
                                   "--eval-after", "--train-identities", "4"} + kSmallFinetune);
  REQUIRE(r.code == kExitOk);
  auto after = nlohmann::json::parse(slurp(ft + "/eval.json"));
  CHECK(after["mAP"].get<double>() >= 0.0);
  CHECK(after["mAP"].get<double>() <= 1.0);
  CHECK(fs::exists(ft + "/per_query.csv"));

  SUBCASE("eval of the same checkpoint and split reproduces eval-after") {
    for (auto name : {"e1", "e2"})
      REQUIRE(run({"eval", "--checkpoint", ft + "/checkpoint.mmet", "--data", ws.data.string(),
                   "--out", ws.out(name), "--train-identities", "4"})
                  .code == kExitOk);
    CHECK(nlohmann::json::parse(slurp(ws.out("e1") + "/eval.json")) == after);
    CHECK(slurp(ws.out("e1") + "/per_query.csv") == slurp(ft + "/per_query.csv"));
    CHECK(slurp(ws.out("e1") + "/eval.json") == slurp(ws.out("e2") + "/eval.json"));
  }
  SUBCASE("gradcam writes maps for every requested sample") {
    for (auto name : {"g1", "g2"})
      REQUIRE(run({"gradcam", "--checkpoint", ft + "/checkpoint.mmet", "--data", ws.data.string(),
                   "--out", ws.out(name), "--samples", "0", "5", "20"})
                  .code == kExitOk);
    for (auto i : {"0", "5", "20"}) {
      const auto stem = ws.out("g1") + "/sample_" + i;
      auto pgm = slurp(stem + ".pgm");
      CHECK(pgm.starts_with("P5\n32 64\n255\n"));
      CHECK(pgm.size() == std::string("P5\n32 64\n255\n").size() + 64 * 32);
      CHECK(fs::exists(stem + "_overlay.ppm"));
      CHECK(line_count(stem + ".csv") == 4);
      CHECK(slurp(stem + ".csv") == slurp(ws.out("g2") + "/sample_" + i + ".csv"));
    }
    auto summary = slurp(ws.out("g1") + "/summary.csv");
    CHECK(line_count(ws.out("g1") + "/summary.csv") == 4);
    // Identities 0..3 trained; sample 20 belongs to identity 5.
    CHECK(summary.find(",identity,") != std::string::npos);
    CHECK(summary.find("20,5,") != std::string::npos);
    CHECK(summary.find(",predicted,") != std::string::npos);
  }
  SUBCASE("gradcam input errors") {
    auto bad = [&](std::vector<std::string> extra) {
      return run(std::vector<std::string>{"gradcam", "--checkpoint", ft + "/checkpoint.mmet",
                                          "--data", ws.data.string(), "--out", ws.out("gx")} +
                 extra)
          .code;
    };
    CHECK(bad({"--samples", "24"}) == kExitConfig);
    CHECK(bad({"--samples", "0", "--class", "4"}) == kExitConfig);
    CHECK_FALSE(fs::exists(ws.out("gx")));
  }
}

TEST_CASE("cli: ablate writes one median row per variant") {
  TempDir dir;
  const auto config = dir.path() / "tiny.json";
  std::ofstream(config) << R"({"ablation": {
    "dataset": {"num_identities": 8, "images_per_identity": 4},
    "pretrain_dataset": {"num_identities": 6, "images_per_identity": 4},
    "train_identities": 5,
    "pretrain": {"total_steps": 2, "warmup_steps": 1, "batch_size": 8},
    "finetune": {"total_steps": 2, "warmup_steps": 1, "P": 4, "K": 2}}})";
  auto r = run({"ablate", "--config", config.string(), "--seeds", "0", "1", "--out",
                (dir.path() / "abl").string()});
  REQUIRE(r.code == kExitOk);
  auto csv = slurp(dir.path() / "abl" / "ablation.csv");
  CHECK(csv.starts_with("variant,mAP,rank1,rank5\nBaseline,"));
  CHECK(csv.find("\nRandom masking,") != std::string::npos);
  CHECK(csv.find("\nRegion MMM,") != std::string::npos);
  CHECK(line_count(dir.path() / "abl" / "ablation.csv") == 4);
  CHECK(line_count(dir.path() / "abl" / "ablation_seeds.csv") == 1 + 2 * 4);
  auto j = nlohmann::json::parse(slurp(dir.path() / "abl" / "ablation.json"));
  CHECK(j["rows"].size() == 3);
  CHECK(j["seeds"] == nlohmann::json::array({0, 1}));
}

TEST_CASE("cli: exit codes") {
  TempDir dir;
  const auto out = (dir.path() / "o").string();
  CHECK(run({}).code == kExitConfig);
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"bogus"}).code == kExitConfig);
  CHECK(run({"synth", "--out", out, "--set", "dataset.bogus=1"}).code == kExitConfig);
  CHECK(run({"synth", "--out", out, "--ids", "0"}).code == kExitConfig);
  CHECK(run({"synth", "--out", out, "--config", (dir.path() / "none.json").string()}).code ==
        kExitConfig);
  CHECK_FALSE(fs::exists(out));
  CHECK(run({"pretrain", "--out", out, "--data", (dir.path() / "none").string()}).code == kExitData);
  CHECK(run({"eval", "--out", out, "--data", (dir.path() / "none").string(), "--checkpoint",
             (dir.path() / "none.mmet").string()})
            .code == kExitData);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("cli: run directory defaults to $MMET_OUTPUT_ROOT/<command>") {
  TempDir dir;
  const char* old = std::getenv("MMET_OUTPUT_ROOT");
  std::string saved = old ? old : "";
  setenv("MMET_OUTPUT_ROOT", dir.path().c_str(), 1);
  auto r = run({"synth", "--ids", "2", "--images-per-id", "2"});
  if (old)
    setenv("MMET_OUTPUT_ROOT", saved.c_str(), 1);
  else
    unsetenv("MMET_OUTPUT_ROOT");
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(dir.path() / "synth" / "dataset"));
  CHECK(fs::exists(dir.path() / "synth" / "config.json"));
}
