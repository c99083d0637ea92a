#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mgnli/cli/cli.hpp"
#include "mgnli/cli/run_config.hpp"
#include "mgnli/error.hpp"
#include "mgnli/evaluation.hpp"
#include "mgnli/training.hpp"

namespace mgnli::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Flags shared by commands that take a run configuration. Unset flags leave
// the preset / file value alone.
struct ConfigFlags {
  std::optional<std::string> preset;
  std::optional<std::string> config;
  std::optional<std::string> model;
  std::optional<std::string> task;
  std::optional<std::string> data;
  std::optional<std::string> dev;
  std::optional<std::string> pairs;
  std::optional<std::string> output;
  std::optional<int> folds;
  std::optional<int> max_len;
  std::optional<std::string> paraphraser;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> encoder_lr;
  std::optional<double> head_lr;
  std::optional<double> warmup;
  std::optional<int> warmup_steps;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> layers;
  std::optional<int> hidden;
  std::optional<int> heads;
  std::optional<int> ffn;
  std::optional<double> dropout;
  std::optional<int> sentence_layers;
  std::optional<double> lambda;
  std::optional<double> gamma;
  std::optional<double> tau;
  std::optional<double> eta_a;
  std::optional<double> eta_b;
  std::optional<int> keep;
  std::optional<bool> holdout;
  std::optional<bool> match_features;
  std::optional<std::string> encoder_init;
  bool no_token = false;
};

void add_config_flags(CLI::App& app, ConfigFlags& f) {
  app.add_option("--preset", f.preset, "Start from a named preset");
  app.add_option("--config", f.config, "JSON run configuration (flags override it)");
  app.add_option("--model", f.model, "Model name or all-taskA / all-taskB");
  app.add_option("--task", f.task, "Expected task of the model (A or B)")->check(CLI::IsMember({"A", "B"}));
  app.add_option("--data", f.data, "Training dataset");
  app.add_option("--dev", f.dev, "Selection dataset for single-split runs");
  app.add_option("--pairs", f.pairs, "Pre-generated consistency pairs");
  app.add_option("--out", f.output, "Output directory");
  app.add_option("--cv,--folds", f.folds, "Cross-validation folds (0 for a single split)");
  app.add_option("--max-len", f.max_len, "Consistency network input length (512 or 1024)");
  app.add_option("--paraphraser", f.paraphraser, "Pair generator paraphraser (rule or identity)");
  app.add_option("--epochs", f.epochs);
  app.add_option("--batch-size", f.batch_size);
  app.add_option("--encoder-lr", f.encoder_lr);
  app.add_option("--head-lr", f.head_lr);
  app.add_option("--warmup", f.warmup, "Warmup fraction of all steps");
  app.add_option("--warmup-steps", f.warmup_steps, "Warmup steps (overrides the fraction)");
  app.add_option("--seed", f.seed);
  app.add_option("--threads", f.threads);
  app.add_option("--layers", f.layers);
  app.add_option("--hidden", f.hidden);
  app.add_option("--heads", f.heads);
  app.add_option("--ffn", f.ffn);
  app.add_option("--dropout", f.dropout);
  app.add_option("--sentence-layers", f.sentence_layers);
  app.add_option("--lambda", f.lambda);
  app.add_option("--gamma", f.gamma);
  app.add_option("--tau", f.tau);
  app.add_option("--eta-a", f.eta_a);
  app.add_option("--eta-b", f.eta_b);
  app.add_option("--keep", f.keep, "Checkpoints kept per fold (-1 for the task default)");
  app.add_option("--holdout", f.holdout, "Extra Task B checkpoint on a 90/10 split");
  app.add_option("--match-features", f.match_features, "Exact-match input embedding");
  app.add_option("--encoder-init", f.encoder_init, "Pretrained encoder directory");
  app.add_flag("--no-token", f.no_token, "Remove the token-level encoder");
}

RunConfig resolve(const ConfigFlags& f) {
  RunConfig c;
  if (f.preset) c = preset(*f.preset);
  if (f.config) {
    std::ifstream in(*f.config);
    if (!in) throw UsageError("cannot read config file " + *f.config);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw UsageError("config file " + *f.config + " is not valid JSON: " + e.what());
    }
    if (!f.preset && j.is_object() && j.contains("preset") && j["preset"].is_string() &&
        !j["preset"].get<std::string>().empty()) {
      c = preset(j["preset"].get<std::string>());
    }
    c = run_config_from_json(j, c);
  }
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(c.model, f.model);
  if (f.task) c.task = *f.task == "A" ? Task::A : Task::B;
  if (f.data) c.data = *f.data;
  if (f.dev) c.dev = *f.dev;
  if (f.pairs) c.pairs = *f.pairs;
  if (f.output) c.output = *f.output;
  set(c.folds, f.folds);
  set(c.max_len, f.max_len);
  set(c.paraphraser, f.paraphraser);
  set(c.train.epochs, f.epochs);
  set(c.train.batch_size, f.batch_size);
  set(c.train.encoder_lr, f.encoder_lr);
  set(c.train.head_lr, f.head_lr);
  set(c.train.warmup_fraction, f.warmup);
  set(c.train.warmup_steps, f.warmup_steps);
  set(c.train.seed, f.seed);
  set(c.train.threads, f.threads);
  set(c.train.layers, f.layers);
  set(c.train.hidden, f.hidden);
  set(c.train.heads, f.heads);
  set(c.train.ffn, f.ffn);
  set(c.train.dropout, f.dropout);
  set(c.train.sentence_layers, f.sentence_layers);
  set(c.train.loss.lambda, f.lambda);
  set(c.train.loss.gamma, f.gamma);
  set(c.train.loss.tau, f.tau);
  set(c.train.thresholds.eta_a, f.eta_a);
  set(c.train.thresholds.eta_b, f.eta_b);
  set(c.train.keep_per_fold, f.keep);
  set(c.train.holdout, f.holdout);
  set(c.train.match_features, f.match_features);
  if (f.encoder_init) c.train.encoder_init = fs::path(*f.encoder_init);
  if (f.no_token) c.without_token = true;
  c.validate();
  return c;
}

void require_file(const std::optional<fs::path>& p, const char* flag) {
  if (!p) throw UsageError(std::string(flag) + " is required");
  if (!fs::exists(*p)) throw UsageError(std::string(flag) + " path does not exist: " + p->string());
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// A checkpoint argument names either one checkpoint directory or an index file.
std::vector<fs::path> expand_checkpoints(const std::vector<std::string>& args) {
  std::vector<fs::path> out;
  for (const auto& a : args) {
    const fs::path p(a);
    if (fs::is_directory(p)) {
      out.push_back(p);
    } else if (fs::is_regular_file(p)) {
      for (const auto& m : read_checkpoint_index(p)) out.push_back(m.path);
    } else {
      throw Error("checkpoint not found: " + p.string());
    }
  }
  return out;
}

std::vector<PredictionSet> predict_all(const std::vector<fs::path>& paths, const Dataset& data, int threads,
                                       std::ostream& out) {
  std::vector<PredictionSet> sets;
  for (const auto& p : paths) {
    const LoadedCheckpoint ck = load_checkpoint(p);
    out << "predicting with " << ck.spec.name << " (" << p.string() << ")\n";
    sets.push_back(predict_checkpoint(ck, data, threads));
  }
  return sets;
}

struct JointNet {
  LoadedCheckpoint ck;

  std::map<std::string, EntailmentProbabilities> apply(const std::map<std::string, EntailmentProbabilities>& p,
                                                       const Dataset& data) const {
    return apply_joint_inference(p, data, *ck.tokenizer, *ck.pairnet, ck.max_len);
  }
};

std::optional<JointNet> load_joint(const std::optional<std::string>& path) {
  if (!path) return std::nullopt;
  JointNet j{load_checkpoint(*path)};
  if (!j.ck.pairnet) throw Error("checkpoint " + *path + " is not a consistency network");
  return j;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

// --- train ------------------------------------------------------------------------

int cmd_train(const ConfigFlags& flags, bool dry_run, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve(flags);
  const std::vector<ModelSpec> specs = cfg.specs();

  if (dry_run) {
    std::vector<CheckpointMeta> plan;
    if (cfg.folds >= 2) {
      plan = plan_checkpoints(resolve_model_names(cfg.model), cfg.folds, cfg.train);
      if (cfg.without_token) {
        for (auto& m : plan) m.model = without_token_encoder(find_model_spec(m.model)).name;
      }
    } else {
      for (const auto& s : specs) {
        const int keep = s.task ? cfg.train.keep_for(*s.task) : 1;
        for (int r = 0; r < keep; ++r) {
          CheckpointMeta m;
          m.model = s.name;
          m.rank = r;
          m.task = s.task;
          plan.push_back(m);
        }
      }
    }
    std::map<std::string, int> per_model;
    for (const auto& m : plan) ++per_model[m.model];
    for (const auto& s : specs) {
      const auto it = per_model.find(s.name);
      out << s.name << ": " << (it == per_model.end() ? 0 : it->second) << " checkpoints\n";
    }
    out << "total checkpoints: " << plan.size() << '\n';
    return kExitOk;
  }

  const bool pairwise_only = std::all_of(specs.begin(), specs.end(),
                                         [](const ModelSpec& s) { return s.family == ModelFamily::Pairwise; });
  if (!(pairwise_only && cfg.pairs)) require_file(cfg.data, "--data");
  if (cfg.dev && !fs::exists(*cfg.dev)) throw UsageError("--dev path does not exist: " + cfg.dev->string());
  if (cfg.pairs && !fs::exists(*cfg.pairs)) throw UsageError("--pairs path does not exist: " + cfg.pairs->string());

  fs::create_directories(cfg.output);
  write_json(cfg.output / "run_config.json", to_json(cfg));
  std::optional<Dataset> data;
  if (cfg.data) data = load_dataset(*cfg.data);
  std::optional<Dataset> dev;
  if (cfg.dev) dev = load_dataset(*cfg.dev);

  std::ofstream log(cfg.output / "train_log.jsonl");
  log << json{{"event", "config"}, {"config", to_json(cfg)}}.dump() << '\n';
  std::vector<CheckpointMeta> index;
  bool failed = false;

  for (const auto& spec : specs) {
    if (spec.family == ModelFamily::Pairwise) {
      PairDataset pairs;
      if (cfg.pairs) {
        pairs = load_pairs(*cfg.pairs);
      } else {
        const RuleParaphraser rule;
        const IdentityParaphraser identity;
        const Paraphraser& para = cfg.paraphraser == "identity" ? static_cast<const Paraphraser&>(identity) : rule;
        PairGeneration gen = generate_pair_training_data(data->instances, para);
        for (const auto& w : gen.warnings) err << "warning: " << w << '\n';
        pairs.trials = data->trials;
        pairs.pairs = std::move(gen.pairs);
      }
      out << "training pairwise on " << pairs.pairs.size() << " pairs\n";
      const PairwiseRun run = train_pairwise(pairs, cfg.train, cfg.max_len, cfg.output / "pairwise");
      for (std::size_t e = 0; e < run.losses.size(); ++e) {
        log << json{{"event", "epoch"}, {"model", spec.name}, {"fold", -1}, {"epoch", e}, {"loss", run.losses[e]},
                    {"dev_f1", nullptr}}
                   .dump()
            << '\n';
        out << spec.name << " epoch " << e << " loss " << fmt(run.losses[e]) << '\n';
      }
      index.push_back(run.meta);
      continue;
    }

    CvResult result;
    if (cfg.folds >= 2) {
      out << "training " << spec.name << " with " << cfg.folds << "-fold cross-validation\n";
      result = train_cv(spec, *data, split_folds(data->instances, cfg.folds, cfg.train.seed), cfg.train, cfg.output);
    } else {
      out << "training " << spec.name << " on a single split\n";
      result = train_split(spec, *data, dev, cfg.train, cfg.output);
    }
    for (const auto& fold : result.folds) {
      for (const auto& rec : fold.history) {
        const json dev_f1 = rec.dev_f1 ? json(*rec.dev_f1) : json(nullptr);
        log << json{{"event", "epoch"}, {"model", spec.name}, {"fold", fold.fold}, {"epoch", rec.epoch},
                    {"loss", rec.loss}, {"dev_f1", dev_f1}}
                   .dump()
            << '\n';
        out << spec.name << " fold " << fold.fold << " epoch " << rec.epoch << " loss " << fmt(rec.loss);
        if (rec.dev_f1) out << " dev f1 " << fmt(*rec.dev_f1);
        out << '\n';
      }
      if (fold.failed) {
        failed = true;
        log << json{{"event", "failure"}, {"model", spec.name}, {"fold", fold.fold}, {"error", fold.failure}}.dump()
            << '\n';
        err << "error: " << spec.name << " fold " << fold.fold << " aborted: " << fold.failure << '\n';
      }
    }
    index.insert(index.end(), result.checkpoints.begin(), result.checkpoints.end());
  }

  write_checkpoint_index(cfg.output / "checkpoints.json", index);
  out << "wrote " << index.size() << " checkpoints to " << (cfg.output / "checkpoints.json").string() << '\n';
  return failed ? kExitFailure : kExitOk;
}

// --- predict ----------------------------------------------------------------------

struct PredictFlags {
  std::vector<std::string> checkpoints;
  std::string data;
  std::string output;
  std::optional<std::string> joint;
  DecisionThresholds thresholds;
  int threads = 1;
};

int cmd_predict(const PredictFlags& f, std::ostream& out) {
  try {
    f.thresholds.validate();
  } catch (const ConfigurationError& e) {
    throw UsageError(e.what());
  }
  if (!fs::exists(f.data)) throw UsageError("--data path does not exist: " + f.data);
  const Dataset data = load_dataset(f.data);
  const std::vector<fs::path> paths = expand_checkpoints(f.checkpoints);
  if (paths.empty()) throw UsageError("no checkpoints given");
  const std::optional<JointNet> joint = load_joint(f.joint);

  const std::vector<PredictionSet> sets = predict_all(paths, data, f.threads, out);
  const EnsemblePrediction ens = soft_ensemble(sets);
  const auto final_a = joint ? joint->apply(ens.mean.task_a, data) : ens.mean.task_a;

  json checkpoints = json::array();
  for (const auto& p : paths) checkpoints.push_back(p.string());
  const json thresholds{{"eta_a", f.thresholds.eta_a}, {"eta_b", f.thresholds.eta_b}};
  json meta{{"checkpoints", checkpoints},
            {"joint", joint.has_value()},
            {"joint_checkpoint", f.joint ? json(*f.joint) : json(nullptr)},
            {"thresholds", thresholds},
            {"task_a_contributors", ens.task_a_contributors},
            {"task_b_contributors", ens.task_b_contributors}};
  const fs::path output(f.output);
  write_json(output, prediction_file(ens, final_a, f.thresholds, meta));
  write_json(fs::path(output.string() + ".config.json"), {{"command", "predict"},
                                                          {"data", f.data},
                                                          {"checkpoints", checkpoints},
                                                          {"joint", f.joint ? json(*f.joint) : json(nullptr)},
                                                          {"thresholds", thresholds},
                                                          {"threads", f.threads}});
  out << "wrote predictions for " << final_a.size() << " Task A and " << ens.mean.task_b.size()
      << " Task B instances to " << output.string() << '\n';
  return kExitOk;
}

// --- evaluate ---------------------------------------------------------------------

json report_json(const std::optional<MetricReport>& a, const std::optional<MetricReport>& b) {
  return {{"taskA", a ? to_json(*a) : json(nullptr)}, {"taskB", b ? to_json(*b) : json(nullptr)}};
}

int cmd_evaluate(const std::string& predictions, const std::string& gold_path, const std::optional<std::string>& out_dir,
                 std::ostream& out) {
  if (!fs::exists(predictions)) throw UsageError("--predictions path does not exist: " + predictions);
  if (!fs::exists(gold_path)) throw UsageError("--gold path does not exist: " + gold_path);
  const Dataset gold = load_dataset(gold_path);
  const FileDecisions d = read_prediction_file(read_json(predictions));
  if (d.task_a.empty() && d.task_b.empty()) throw AlignmentError("prediction file " + predictions + " holds no decisions");

  std::optional<MetricReport> a;
  std::optional<MetricReport> b;
  if (!d.task_a.empty()) {
    std::vector<Instance> labeled;
    for (const auto& inst : gold.instances) {
      if (inst.label) labeled.push_back(inst);
    }
    a = per_section_report_taskA(d.task_a, labeled);
    out << "Task A\n" << format_table({{"system", *a}});
  }
  if (!d.task_b.empty()) {
    b = per_section_report_taskB(d.task_b, gold.instances, gold.trials);
    out << "Task B\n" << format_table({{"system", *b}});
  }
  if (out_dir) {
    const fs::path dir(*out_dir);
    fs::create_directories(dir);
    write_json(dir / "report.json", report_json(a, b));
    std::ofstream table(dir / "report.txt");
    if (a) table << "Task A\n" << format_table({{"system", *a}});
    if (b) table << "Task B\n" << format_table({{"system", *b}});
    write_json(dir / "evaluate.config.json", {{"command", "evaluate"}, {"predictions", predictions}, {"gold", gold_path}});
  }
  return kExitOk;
}

// --- ablate -----------------------------------------------------------------------

struct AblateFlags {
  std::vector<std::string> families;  // NAME=PATH
  std::string data;
  std::optional<std::string> output;
  std::optional<std::string> joint;
  std::string mode = "leave-one-out";
  DecisionThresholds thresholds;
  int threads = 1;
};

std::optional<MetricReport> ensemble_report_a(const std::vector<PredictionSet>& sets, const Dataset& gold,
                                              const DecisionThresholds& t, const std::optional<JointNet>& joint) {
  const EnsemblePrediction ens = soft_ensemble(sets);
  if (ens.task_a_contributors == 0) return std::nullopt;
  const auto p = joint ? joint->apply(ens.mean.task_a, gold) : ens.mean.task_a;
  std::vector<Instance> labeled;
  for (const auto& inst : gold.instances) {
    if (inst.label) labeled.push_back(inst);
  }
  return per_section_report_taskA(decide_taskA(p, t), labeled);
}

std::optional<MetricReport> ensemble_report_b(const std::vector<PredictionSet>& sets, const Dataset& gold,
                                              const DecisionThresholds& t) {
  const EnsemblePrediction ens = soft_ensemble(sets);
  if (ens.task_b_contributors == 0) return std::nullopt;
  return per_section_report_taskB(decide_taskB(ens.mean.task_b, t), gold.instances, gold.trials);
}

void print_rows(const std::vector<AblationRow>& rows, std::ostream& out) {
  for (const bool task_a : {true, false}) {
    std::vector<std::pair<std::string, MetricReport>> table;
    for (const auto& r : rows) {
      const auto& rep = task_a ? r.task_a : r.task_b;
      if (rep) table.emplace_back(r.name, *rep);
    }
    if (table.empty()) continue;
    out << (task_a ? "Task A\n" : "Task B\n") << format_table(table);
    for (std::size_t i = 1; i < table.size(); ++i) {
      out << "  " << table[i].first << ": delta f1 "
          << fmt(table[i].second.overall.f1 - table[0].second.overall.f1) << '\n';
    }
  }
}

int cmd_ablate(const AblateFlags& f, std::ostream& out) {
  try {
    f.thresholds.validate();
  } catch (const ConfigurationError& e) {
    throw UsageError(e.what());
  }
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
  for (const auto& spec : f.families) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
      throw UsageError("--family expects NAME=PATH, got \"" + spec + "\"");
    }
    const std::string name = spec.substr(0, eq);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == name; });
    if (it == groups.end()) {
      groups.push_back({name, {}});
      it = std::prev(groups.end());
    }
    it->second.push_back(spec.substr(eq + 1));
  }
  if (groups.size() < 2) throw UsageError("ablation needs at least 2 contributors, got " + std::to_string(groups.size()));
  if (f.mode != "leave-one-out" && f.mode != "compare") throw UsageError("--mode must be leave-one-out or compare");
  if (!fs::exists(f.data)) throw UsageError("--data path does not exist: " + f.data);

  const Dataset gold = load_dataset(f.data);
  const std::optional<JointNet> joint = load_joint(f.joint);
  std::vector<std::pair<std::string, std::vector<PredictionSet>>> families;
  for (const auto& [name, paths] : groups) {
    families.emplace_back(name, predict_all(expand_checkpoints(paths), gold, f.threads, out));
  }

  std::vector<AblationRow> rows;
  if (f.mode == "leave-one-out") {
    Rectifier rectifier;
    if (joint) {
      rectifier = [&](const std::map<std::string, EntailmentProbabilities>& p) { return joint->apply(p, gold); };
    }
    rows = leave_one_out(families, gold, f.thresholds, rectifier);
  } else {
    for (const auto& [name, sets] : families) {
      rows.push_back({name, ensemble_report_a(sets, gold, f.thresholds, joint), ensemble_report_b(sets, gold, f.thresholds)});
    }
  }
  print_rows(rows, out);

  if (f.output) {
    const fs::path dir(*f.output);
    json j = json::array();
    for (const auto& r : rows) {
      json row = report_json(r.task_a, r.task_b);
      row["name"] = r.name;
      j.push_back(row);
    }
    write_json(dir / "ablation.json", {{"mode", f.mode}, {"rows", j}});
    std::ofstream table(dir / "ablation.txt");
    print_rows(rows, table);
    json fam = json::object();
    for (const auto& [name, paths] : groups) fam[name] = paths;
    write_json(dir / "ablate.config.json",
               {{"command", "ablate"},
                {"mode", f.mode},
                {"data", f.data},
                {"families", fam},
                {"joint", f.joint ? json(*f.joint) : json(nullptr)},
                {"thresholds", {{"eta_a", f.thresholds.eta_a}, {"eta_b", f.thresholds.eta_b}}}});
  }
  return kExitOk;
}

// --- synth / pairgen --------------------------------------------------------------

struct SynthFlags {
  std::uint64_t seed = 0;
  int n = 500;
  std::string output;
  SyntheticConfig cfg;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  if (f.n <= 0) throw UsageError("--n must be positive");
  if (!(f.cfg.comparison_fraction >= 0 && f.cfg.comparison_fraction <= 1) ||
      !(f.cfg.arithmetic_fraction >= 0 && f.cfg.arithmetic_fraction <= 1)) {
    throw UsageError("template fractions must lie in [0, 1]");
  }
  const Dataset ds = generate_synthetic(f.seed, f.n, f.cfg);
  const fs::path output(f.output);
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  save_dataset(output, ds);
  write_json(fs::path(f.output + ".config.json"), {{"command", "synth"},
                                                   {"seed", f.seed},
                                                   {"n", f.n},
                                                   {"pool_cap", f.cfg.pool_cap},
                                                   {"comparison_fraction", f.cfg.comparison_fraction},
                                                   {"arithmetic_fraction", f.cfg.arithmetic_fraction},
                                                   {"id_prefix", f.cfg.id_prefix}});
  out << "wrote " << ds.instances.size() << " instances and " << ds.trials.size() << " trials to " << f.output << '\n';
  return kExitOk;
}

int cmd_pairgen(const std::string& data_path, const std::string& output, const std::string& paraphraser,
                std::ostream& out, std::ostream& err) {
  if (paraphraser != "rule" && paraphraser != "identity") throw UsageError("--paraphraser must be rule or identity");
  if (!fs::exists(data_path)) throw UsageError("--data path does not exist: " + data_path);
  const Dataset data = load_dataset(data_path);
  const RuleParaphraser rule;
  const IdentityParaphraser identity;
  const Paraphraser& para = paraphraser == "identity" ? static_cast<const Paraphraser&>(identity) : rule;
  PairGeneration gen = generate_pair_training_data(data.instances, para);
  for (const auto& w : gen.warnings) err << "warning: " << w << '\n';
  const PairDataset ds{data.trials, std::move(gen.pairs)};
  const fs::path path(output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_pairs(path, ds);
  write_json(fs::path(output + ".config.json"), {{"command", "pairgen"}, {"data", data_path}, {"paraphraser", paraphraser}});
  out << "contradicting pairs: " << gen.contradicting_pairs << ", sequences: " << ds.pairs.size()
      << ", skipped: " << gen.skipped << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Clinical-trial entailment and evidence retrieval", "mgnli"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  bool dry_run = false;
  auto* train = app.add_subcommand("train", "Train a model (single split or cross-validation)");
  add_config_flags(*train, train_flags);
  train->add_flag("--dry-run", dry_run, "Print the checkpoint plan without training");

  PredictFlags pf;
  auto* predict = app.add_subcommand("predict", "Ensemble checkpoints and write decisions");
  predict->add_option("--checkpoint,--checkpoints", pf.checkpoints, "Checkpoint directory or index file")
      ->required()
      ->expected(1, -1);
  predict->add_option("--data", pf.data)->required();
  predict->add_option("--out", pf.output, "Prediction file")->required();
  predict->add_option("--joint", pf.joint, "Consistency network checkpoint");
  predict->add_option("--eta-a", pf.thresholds.eta_a);
  predict->add_option("--eta-b", pf.thresholds.eta_b);
  predict->add_option("--threads", pf.threads)->check(CLI::PositiveNumber);

  std::string predictions;
  std::string gold;
  std::optional<std::string> eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "Score a prediction file against gold");
  evaluate->add_option("--predictions", predictions)->required();
  evaluate->add_option("--gold", gold)->required();
  evaluate->add_option("--out", eval_out, "Report directory");

  AblateFlags af;
  auto* ablate = app.add_subcommand("ablate", "Leave-one-out or side-by-side ensemble comparison");
  ablate->add_option("--family", af.families, "NAME=PATH (repeat; PATH is a checkpoint or index)")->required();
  ablate->add_option("--data", af.data)->required();
  ablate->add_option("--out", af.output, "Report directory");
  ablate->add_option("--joint", af.joint, "Consistency network checkpoint");
  ablate->add_option("--mode", af.mode)->check(CLI::IsMember({"leave-one-out", "compare"}));
  ablate->add_option("--eta-a", af.thresholds.eta_a);
  ablate->add_option("--eta-b", af.thresholds.eta_b);
  ablate->add_option("--threads", af.threads)->check(CLI::PositiveNumber);

  SynthFlags sf;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth->add_option("--seed", sf.seed);
  synth->add_option("--n", sf.n, "Number of hypotheses");
  synth->add_option("--out", sf.output)->required();
  synth->add_option("--pool-cap", sf.cfg.pool_cap);
  synth->add_option("--comparison-fraction", sf.cfg.comparison_fraction);
  synth->add_option("--arithmetic-fraction", sf.cfg.arithmetic_fraction);
  synth->add_option("--id-prefix", sf.cfg.id_prefix);

  std::string pg_data;
  std::string pg_out;
  std::string pg_para = "rule";
  auto* pairgen = app.add_subcommand("pairgen", "Generate consistency-network training pairs");
  pairgen->add_option("--data", pg_data)->required();
  pairgen->add_option("--out", pg_out)->required();
  pairgen->add_option("--paraphraser", pg_para);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    for (auto* sub : app.get_subcommands()) err << sub->help();
    if (app.get_subcommands().empty()) err << app.help();
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(train_flags, dry_run, out, err);
    if (predict->parsed()) return cmd_predict(pf, out);
    if (evaluate->parsed()) return cmd_evaluate(predictions, gold, eval_out, out);
    if (ablate->parsed()) return cmd_ablate(af, out);
    if (synth->parsed()) return cmd_synth(sf, out);
    if (pairgen->parsed()) return cmd_pairgen(pg_data, pg_out, pg_para, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mgnli::cli
