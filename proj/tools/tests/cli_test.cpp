#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgnli/cli/cli.hpp"
#include "mgnli/cli/run_config.hpp"
#include "mgnli/error.hpp"
#include "support/test_support.hpp"

using namespace mgnli;
using mgnli::testing::TempDir;
using json = nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Small encoder overrides so training runs take well under a second.
std::vector<std::string> quick(std::vector<std::string> args) {
  for (const char* a : {"--epochs", "2", "--layers", "1", "--hidden", "8", "--heads", "2", "--ffn", "16"}) {
    args.emplace_back(a);
  }
  return args;
}

}  // namespace

TEST_CASE("help and bad input map to exit codes") {
  CHECK(run({"--help"}).code == cli::kExitOk);
  CHECK(run({"train", "--help"}).code == cli::kExitOk);
  const auto none = run({});
  CHECK(none.code == cli::kExitUsage);
  const auto bogus = run({"frobnicate"});
  CHECK(bogus.code == cli::kExitUsage);
  CHECK(bogus.err.find("usage error") != std::string::npos);
  const auto bad_model = run({"train", "--model", "M-000", "--dry-run"});
  CHECK(bad_model.code == cli::kExitUsage);
  CHECK(bad_model.err.find("M-000") != std::string::npos);
  const auto bad_preset = run({"train", "--preset", "nope", "--dry-run"});
  CHECK(bad_preset.code == cli::kExitUsage);
  CHECK(bad_preset.err.find("toy-taskA") != std::string::npos);
  CHECK(run({"train", "--model", "M-512-Bi-Max", "--task", "A", "--dry-run"}).code == cli::kExitUsage);
  CHECK(run({"train", "--folds", "1", "--dry-run"}).code == cli::kExitUsage);
  CHECK(run({"predict", "--checkpoint", "/nonexistent", "--data", "/nonexistent", "--out", "x.json"}).code !=
        cli::kExitOk);
}

TEST_CASE("presets carry the full-size hyperparameters") {
  const auto names = cli::preset_names();
  for (const char* n : {"paper-taskA", "paper-taskB", "paper-joint", "paper-generative", "toy-taskA", "toy-taskB",
                        "toy-joint", "toy-generative"}) {
    CHECK(std::find(names.begin(), names.end(), n) != names.end());
  }
  const auto a = cli::preset("paper-taskA");
  CHECK(a.train.encoder_lr == 2e-5);
  CHECK(a.train.head_lr == 1e-4);
  CHECK(a.train.batch_size == 32);
  CHECK(a.train.epochs == 100);
  CHECK(a.train.warmup_fraction == 0.3);
  CHECK(a.train.loss.lambda == 0.01);
  CHECK(a.train.loss.gamma == 0.5);
  CHECK(a.train.loss.tau == 0.3);
  CHECK(a.train.thresholds.eta_a == 0.57);
  CHECK(a.train.thresholds.eta_b == 0.53);
  const auto b = cli::preset("paper-taskB");
  CHECK(b.train.encoder_lr == 5e-6);
  CHECK(b.train.batch_size == 1);
  CHECK(b.train.epochs == 50);
  CHECK(b.train.warmup_fraction == 0.05);
  const auto g = cli::preset("paper-generative");
  CHECK(g.train.encoder_lr == 3e-5);
  CHECK(g.train.warmup_steps == 500);
  CHECK_THROWS_AS(cli::preset("missing"), UsageError);
}

TEST_CASE("dry runs plan the full-size ensembles") {
  const auto a = run({"train", "--preset", "paper-taskA", "--dry-run"});
  CHECK(a.code == cli::kExitOk);
  CHECK(a.out.find("total checkpoints: 40") != std::string::npos);
  const auto b = run({"train", "--preset", "paper-taskB", "--dry-run"});
  CHECK(b.code == cli::kExitOk);
  CHECK(b.out.find("total checkpoints: 63") != std::string::npos);
}

TEST_CASE("flags override presets and config files, and the resolved config is persisted") {
  TempDir dir;
  {
    std::ofstream cfg(dir / "run.json");
    cfg << R"({"preset": "toy-taskA", "train": {"epochs": 7, "seed": 11}})";
  }
  REQUIRE(run({"synth", "--seed", "1", "--n", "12", "--out", (dir / "data.json").string()}).code == 0);
  const auto r = run(quick({"train", "--preset", "toy-taskA", "--config", (dir / "run.json").string(), "--data",
                            (dir / "data.json").string(), "--out", (dir / "run").string(), "--seed", "5"}));
  REQUIRE(r.code == cli::kExitOk);
  const json saved = read_json(dir / "run" / "run_config.json");
  CHECK(saved["train"]["epochs"] == 2);
  CHECK(saved["train"]["seed"] == 5);
  CHECK(saved["train"]["hidden"] == 8);
  CHECK(saved["model"] == "M-512-Bi-Bi-mul");

  const auto replay = cli::load_run_config(dir / "run" / "run_config.json");
  CHECK(replay.train.seed == 5);
  CHECK(replay.model == "M-512-Bi-Bi-mul");
  CHECK(std::filesystem::exists(dir / "run" / "train_log.jsonl"));
  CHECK(std::filesystem::exists(dir / "run" / "checkpoints.json"));
}

TEST_CASE("identical runs produce identical predictions") {
  TempDir dir;
  REQUIRE(run({"synth", "--seed", "2", "--n", "16", "--out", (dir / "data.json").string()}).code == 0);
  std::vector<std::string> preds;
  for (const char* tag : {"a", "b"}) {
    const auto out = dir / tag;
    REQUIRE(run(quick({"train", "--preset", "toy-taskA", "--data", (dir / "data.json").string(), "--out",
                       out.string()}))
                .code == 0);
    const auto p = run({"predict", "--checkpoints", (out / "checkpoints.json").string(), "--data",
                        (dir / "data.json").string(), "--out", (out / "pred.json").string()});
    REQUIRE(p.code == 0);
    json j = read_json(out / "pred.json");
    preds.push_back(j["taskA"].dump());
  }
  CHECK(preds[0] == preds[1]);
}

TEST_CASE("the full command chain writes reports") {
  TempDir dir;
  const auto data = (dir / "data.json").string();
  REQUIRE(run({"synth", "--seed", "3", "--n", "20", "--out", data}).code == 0);
  CHECK(std::filesystem::exists(data + ".config.json"));
  REQUIRE(run(quick({"train", "--preset", "toy-taskA", "--data", data, "--out", (dir / "a").string()})).code == 0);
  REQUIRE(run(quick({"train", "--preset", "toy-taskB", "--data", data, "--out", (dir / "b").string()})).code == 0);
  const auto pairgen = run({"pairgen", "--data", data, "--out", (dir / "pairs.json").string()});
  REQUIRE(pairgen.code == 0);
  CHECK(pairgen.out.find("contradicting pairs: 10, sequences: 40") != std::string::npos);
  REQUIRE(run(quick({"train", "--preset", "toy-joint", "--pairs", (dir / "pairs.json").string(), "--out",
                     (dir / "j").string()}))
              .code == 0);

  const auto pred = (dir / "pred.json").string();
  const auto p = run({"predict", "--checkpoints", (dir / "a" / "checkpoints.json").string(), "--checkpoints",
                      (dir / "b" / "checkpoints.json").string(), "--data", data, "--out", pred, "--joint",
                      (dir / "j" / "pairwise").string()});
  REQUIRE(p.code == 0);
  const json pj = read_json(pred);
  CHECK(pj["meta"]["joint"] == true);
  CHECK(pj["taskA"].size() == 20);
  CHECK(pj["taskB"].size() == 20);

  const auto e = run({"evaluate", "--predictions", pred, "--gold", data, "--out", (dir / "eval").string()});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("Task A") != std::string::npos);
  CHECK(e.out.find("Task B") != std::string::npos);
  const json report = read_json(dir / "eval" / "report.json");
  CHECK(report["taskA"]["f1"].get<double>() >= 0.0);
  CHECK(std::filesystem::exists(dir / "eval" / "report.txt"));

  const auto ab = run({"ablate", "--family", "A=" + (dir / "a" / "checkpoints.json").string(), "--family",
                       "B=" + (dir / "b" / "checkpoints.json").string(), "--data", data, "--out",
                       (dir / "abl").string()});
  REQUIRE(ab.code == 0);
  CHECK(ab.out.find("delta f1") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "abl" / "ablation.json"));
}

TEST_CASE("evaluation and ablation reject degenerate inputs") {
  TempDir dir;
  const auto data = (dir / "data.json").string();
  REQUIRE(run({"synth", "--seed", "4", "--n", "4", "--out", data}).code == 0);
  {
    std::ofstream(dir / "empty.json") << R"({"taskA": {}, "taskB": {}, "meta": {}})";
  }
  const auto e = run({"evaluate", "--predictions", (dir / "empty.json").string(), "--gold", data});
  CHECK(e.code == cli::kExitFailure);
  CHECK(e.err.find("no decisions") != std::string::npos);
  const auto ab = run({"ablate", "--family", "A=" + (dir / "x").string(), "--data", data, "--out",
                       (dir / "abl").string()});
  CHECK(ab.code == cli::kExitUsage);
}
