#include "mgnli/cli/run_config.hpp"

#include <fstream>
#include <map>

#include "mgnli/error.hpp"

namespace mgnli::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json optional_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

void read_optional_path(const json& j, const char* key, std::optional<fs::path>& out) {
  if (!j.contains(key)) return;
  if (j[key].is_string()) {
    out = j[key].get<std::string>();
  } else if (j[key].is_null()) {
    out.reset();
  } else {
    throw UsageError(std::string("config key \"") + key + "\" must be a path or null");
  }
}

// Large encoder shape for the pretrained-size presets.
void large_encoder(TrainConfig& t) {
  t.layers = 24;
  t.hidden = 1024;
  t.heads = 16;
  t.ffn = 4096;
  t.dropout = 0.1;
}

void toy_encoder(TrainConfig& t) {
  t.layers = 2;
  t.hidden = 32;
  t.heads = 2;
  t.ffn = 64;
  t.dropout = 0.1;
  t.match_features = true;
  t.encoder_lr = 1e-3;
  t.head_lr = 1e-3;
  t.batch_size = 8;
  t.warmup_fraction = 0.1;
  t.seed = 3;
}

const std::map<std::string, RunConfig>& preset_table() {
  static const std::map<std::string, RunConfig> table = [] {
    std::map<std::string, RunConfig> m;

    RunConfig a;
    a.model = "all-taskA";
    a.folds = 10;
    large_encoder(a.train);
    a.train.encoder_lr = 2e-5;
    a.train.head_lr = 1e-4;
    a.train.batch_size = 32;
    a.train.epochs = 100;
    a.train.warmup_fraction = 0.3;
    m["paper-taskA"] = a;

    RunConfig b;
    b.model = "all-taskB";
    b.folds = 10;
    large_encoder(b.train);
    b.train.encoder_lr = 5e-6;
    b.train.head_lr = 5e-6;
    b.train.batch_size = 1;
    b.train.epochs = 50;
    b.train.warmup_fraction = 0.05;
    b.train.sentence_layers = 2;
    b.train.holdout = true;
    m["paper-taskB"] = b;

    RunConfig j;
    j.model = "pairwise";
    large_encoder(j.train);
    j.train.encoder_lr = 2e-5;
    j.train.head_lr = 1e-4;
    j.train.batch_size = 32;
    j.train.epochs = 100;
    j.train.warmup_fraction = 0.3;
    m["paper-joint"] = j;

    RunConfig g;
    g.model = "generative";
    g.folds = 10;
    large_encoder(g.train);
    g.train.encoder_lr = 3e-5;
    g.train.head_lr = 3e-5;
    g.train.batch_size = 32;
    g.train.epochs = 100;
    g.train.warmup_steps = 500;
    m["paper-generative"] = g;

    RunConfig ta;
    ta.model = "M-512-Bi-Bi-mul";
    toy_encoder(ta.train);
    ta.train.epochs = 15;
    m["toy-taskA"] = ta;

    RunConfig tb;
    tb.model = "M-512-Bi-Bi";
    toy_encoder(tb.train);
    tb.train.epochs = 10;
    m["toy-taskB"] = tb;

    RunConfig tj;
    tj.model = "pairwise";
    toy_encoder(tj.train);
    tj.train.epochs = 10;
    m["toy-joint"] = tj;

    RunConfig tg;
    tg.model = "generative";
    toy_encoder(tg.train);
    tg.train.match_features = false;
    tg.train.epochs = 3;
    tg.train.warmup_steps = 10;
    m["toy-generative"] = tg;

    for (auto& [name, cfg] : m) cfg.preset = name;
    return m;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  try {
    (void)specs();
  } catch (const ConfigurationError& e) {
    throw UsageError(e.what());
  }
  if (folds < 0 || folds == 1) throw UsageError("folds must be 0 (single split) or at least 2");
  if (max_len != 512 && max_len != 1024) throw UsageError("max_len must be 512 or 1024");
  if (paraphraser != "rule" && paraphraser != "identity") {
    throw UsageError("unknown paraphraser \"" + paraphraser + "\" (expected rule or identity)");
  }
  if (train.batch_size <= 0 || train.epochs < 0 || train.threads <= 0) {
    throw UsageError("batch_size and threads must be positive and epochs non-negative");
  }
  try {
    train.loss.validate();
    train.thresholds.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::vector<ModelSpec> RunConfig::specs() const {
  std::vector<ModelSpec> out;
  for (const auto& name : resolve_model_names(model)) {
    ModelSpec spec = find_model_spec(name);
    if (task && spec.task && *spec.task != *task) {
      throw UsageError("model " + spec.name + " is a Task " + (*spec.task == Task::A ? "A" : "B") +
                       " model but Task " + (*task == Task::A ? "A" : "B") + " was requested");
    }
    if (without_token) {
      if (spec.family != ModelFamily::MGNet) throw UsageError("--no-token applies only to MGNet models");
      spec = without_token_encoder(spec);
    }
    out.push_back(spec);
  }
  return out;
}

PairTrainConfig RunConfig::pair_config() const {
  PairTrainConfig p;
  p.encoder_lr = train.encoder_lr;
  p.head_lr = train.head_lr;
  p.batch_size = train.batch_size;
  p.epochs = train.epochs;
  p.warmup_fraction = train.warmup_fraction;
  p.grad_clip = train.grad_clip;
  p.max_len = max_len;
  p.seed = train.seed;
  return p;
}

json to_json(const RunConfig& c) {
  json j{{"preset", c.preset},
         {"model", c.model},
         {"data", optional_path(c.data)},
         {"dev", optional_path(c.dev)},
         {"pairs", optional_path(c.pairs)},
         {"output", c.output.string()},
         {"folds", c.folds},
         {"max_len", c.max_len},
         {"without_token", c.without_token},
         {"paraphraser", c.paraphraser},
         {"train", to_json(c.train)}};
  j["task"] = c.task ? json(*c.task == Task::A ? "A" : "B") : json(nullptr);
  return j;
}

RunConfig run_config_from_json(const json& j, RunConfig c) {
  if (!j.is_object()) throw UsageError("run configuration must be a JSON object");
  try {
    c.preset = j.value("preset", c.preset);
    c.model = j.value("model", c.model);
    read_optional_path(j, "data", c.data);
    read_optional_path(j, "dev", c.dev);
    read_optional_path(j, "pairs", c.pairs);
    if (j.contains("output")) c.output = j["output"].get<std::string>();
    c.folds = j.value("folds", c.folds);
    c.max_len = j.value("max_len", c.max_len);
    c.without_token = j.value("without_token", c.without_token);
    c.paraphraser = j.value("paraphraser", c.paraphraser);
    if (j.contains("task")) {
      const auto& t = j["task"];
      if (t.is_null()) {
        c.task.reset();
      } else if (t == "A" || t == "B") {
        c.task = t == "A" ? Task::A : Task::B;
      } else {
        throw UsageError("task must be \"A\", \"B\" or null");
      }
    }
    if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed run configuration: ") + e.what());
  } catch (const ConfigurationError& e) {
    throw UsageError(e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& [name, cfg] : preset_table()) names.push_back(name);
  return names;
}

RunConfig preset(std::string_view name) {
  const auto& table = preset_table();
  const auto it = table.find(std::string(name));
  if (it == table.end()) {
    std::string known;
    for (const auto& [n, cfg] : table) known += (known.empty() ? "" : ", ") + n;
    throw UsageError("unknown preset \"" + std::string(name) + "\" (known: " + known + ")");
  }
  return it->second;
}

}  // namespace mgnli::cli
