#include "mgnli/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "mgnli/error.hpp"
#include "mgnli/evaluation.hpp"
#include "mgnli/optim.hpp"

namespace mgnli {

using namespace ag;
using nlohmann::json;
namespace fs = std::filesystem;

// --- specs -------------------------------------------------------------------------

const std::vector<ModelSpec>& model_specs() {
  using SE = SentenceEncoderKind;
  using TE = TokenEncoderKind;
  static const std::vector<ModelSpec> specs{
      {"M-512-Bi-Bi-mul", ModelFamily::MGNet, Task::A, Objective::Multitask, 512, SE::BiLSTM, TE::BiLSTM},
      {"M-512-Tf-Bi-cl", ModelFamily::MGNet, Task::A, Objective::Contrastive, 512, SE::Transformer, TE::BiLSTM},
      {"M-1024-Tf-Bi-mul", ModelFamily::MGNet, Task::A, Objective::Multitask, 1024, SE::Transformer, TE::BiLSTM},
      {"generative", ModelFamily::Generative, Task::A, Objective::Sequence, 512, SE::None, TE::None},
      {"M-512-Tf-Bi", ModelFamily::MGNet, Task::B, Objective::Retrieval, 512, SE::Transformer, TE::BiLSTM},
      {"M-512-Bi-Bi", ModelFamily::MGNet, Task::B, Objective::Retrieval, 512, SE::BiLSTM, TE::BiLSTM},
      {"M-512-Bi-Max", ModelFamily::MGNet, Task::B, Objective::Retrieval, 512, SE::BiLSTM, TE::MaxPool},
      {"pairwise", ModelFamily::Pairwise, std::nullopt, Objective::PairCrossEntropy, 512, SE::None, TE::None},
  };
  return specs;
}

const ModelSpec& find_model_spec(std::string_view name) {
  for (const auto& s : model_specs()) {
    if (s.name == name) return s;
  }
  throw ConfigurationError("unknown model spec \"" + std::string(name) + "\"");
}

std::vector<std::string> resolve_model_names(std::string_view name) {
  if (name == "all-taskA" || name == "all-taskB") {
    const Task task = name == "all-taskA" ? Task::A : Task::B;
    std::vector<std::string> out;
    for (const auto& s : model_specs()) {
      if (s.task == task) out.push_back(s.name);
    }
    return out;
  }
  return {find_model_spec(name).name};
}

ModelSpec without_token_encoder(const ModelSpec& spec) {
  ModelSpec out = spec;
  out.name += "-no-token";
  out.token = TokenEncoderKind::None;
  return out;
}

namespace {

std::string_view objective_name(Objective o) {
  switch (o) {
    case Objective::Multitask:
      return "multitask";
    case Objective::Contrastive:
      return "contrastive";
    case Objective::Retrieval:
      return "retrieval";
    case Objective::Sequence:
      return "sequence";
    case Objective::PairCrossEntropy:
      return "pair";
  }
  return "";
}

Objective parse_objective(std::string_view s) {
  for (Objective o : {Objective::Multitask, Objective::Contrastive, Objective::Retrieval, Objective::Sequence,
                      Objective::PairCrossEntropy}) {
    if (objective_name(o) == s) return o;
  }
  throw ImportError("unknown objective \"" + std::string(s) + "\"");
}

std::string_view family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::MGNet:
      return "mgnet";
    case ModelFamily::Generative:
      return "generative";
    case ModelFamily::Pairwise:
      return "pairwise";
  }
  return "";
}

ModelFamily parse_family(std::string_view s) {
  if (s == "mgnet") return ModelFamily::MGNet;
  if (s == "generative") return ModelFamily::Generative;
  if (s == "pairwise") return ModelFamily::Pairwise;
  throw ImportError("unknown model family \"" + std::string(s) + "\"");
}

json task_json(const std::optional<Task>& t) {
  if (!t) return nullptr;
  return *t == Task::A ? "A" : "B";
}

std::optional<Task> task_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  const auto s = j.get<std::string>();
  if (s == "A") return Task::A;
  if (s == "B") return Task::B;
  throw ImportError("unknown task \"" + s + "\"");
}

json spec_json(const ModelSpec& s) {
  return {{"name", s.name},
          {"family", family_name(s.family)},
          {"task", task_json(s.task)},
          {"objective", objective_name(s.objective)},
          {"max_len", s.max_len},
          {"sentence_encoder", to_string(s.sentence)},
          {"token_encoder", to_string(s.token)}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.name = j.at("name").get<std::string>();
  s.family = parse_family(j.at("family").get<std::string>());
  s.task = task_from_json(j.at("task"));
  s.objective = parse_objective(j.at("objective").get<std::string>());
  s.max_len = j.at("max_len").get<int>();
  s.sentence = parse_sentence_encoder(j.at("sentence_encoder").get<std::string>());
  s.token = parse_token_encoder(j.at("token_encoder").get<std::string>());
  return s;
}

json mgnet_config_json(const MGNetConfig& c) {
  return {{"sentence_encoder", to_string(c.sentence_encoder)},
          {"token_encoder", to_string(c.token_encoder)},
          {"pooling", c.pooling == PoolingKind::Max ? "max" : "mean"},
          {"hidden", c.hidden},
          {"sentence_layers", c.sentence_layers},
          {"sentence_heads", c.sentence_heads},
          {"sentence_ffn", c.sentence_ffn},
          {"max_sentences", c.max_sentences},
          {"dropout", c.dropout}};
}

MGNetConfig mgnet_config_from_json(const json& j) {
  MGNetConfig c;
  c.sentence_encoder = parse_sentence_encoder(j.at("sentence_encoder").get<std::string>());
  c.token_encoder = parse_token_encoder(j.at("token_encoder").get<std::string>());
  c.pooling = j.value("pooling", "max") == "mean" ? PoolingKind::Mean : PoolingKind::Max;
  c.hidden = j.at("hidden").get<int>();
  c.sentence_layers = j.value("sentence_layers", c.sentence_layers);
  c.sentence_heads = j.value("sentence_heads", c.sentence_heads);
  c.sentence_ffn = j.value("sentence_ffn", c.sentence_ffn);
  c.max_sentences = j.value("max_sentences", c.max_sentences);
  c.dropout = j.value("dropout", c.dropout);
  return c;
}

}  // namespace

// --- config ------------------------------------------------------------------------

json to_json(const TrainConfig& c) {
  json j{{"layers", c.layers},
         {"hidden", c.hidden},
         {"heads", c.heads},
         {"ffn", c.ffn},
         {"dropout", c.dropout},
         {"sentence_layers", c.sentence_layers},
         {"vocab_min_count", c.vocab_min_count},
         {"encoder_lr", c.encoder_lr},
         {"head_lr", c.head_lr},
         {"batch_size", c.batch_size},
         {"match_features", c.match_features},
         {"epochs", c.epochs},
         {"warmup_fraction", c.warmup_fraction},
         {"warmup_steps", c.warmup_steps},
         {"grad_clip", c.grad_clip},
         {"loss", {{"lambda", c.loss.lambda}, {"gamma", c.loss.gamma}, {"tau", c.loss.tau}}},
         {"thresholds", {{"eta_a", c.thresholds.eta_a}, {"eta_b", c.thresholds.eta_b}}},
         {"seed", c.seed},
         {"keep_per_fold", c.keep_per_fold},
         {"holdout", c.holdout},
         {"threads", c.threads}};
  j["encoder_init"] = c.encoder_init ? json(c.encoder_init->string()) : json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigurationError("training configuration must be a JSON object");
  c.layers = j.value("layers", c.layers);
  c.hidden = j.value("hidden", c.hidden);
  c.heads = j.value("heads", c.heads);
  c.ffn = j.value("ffn", c.ffn);
  c.dropout = j.value("dropout", c.dropout);
  c.sentence_layers = j.value("sentence_layers", c.sentence_layers);
  c.vocab_min_count = j.value("vocab_min_count", c.vocab_min_count);
  c.encoder_lr = j.value("encoder_lr", c.encoder_lr);
  c.head_lr = j.value("head_lr", c.head_lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.match_features = j.value("match_features", c.match_features);
  c.epochs = j.value("epochs", c.epochs);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    c.loss.lambda = l.value("lambda", c.loss.lambda);
    c.loss.gamma = l.value("gamma", c.loss.gamma);
    c.loss.tau = l.value("tau", c.loss.tau);
  }
  if (j.contains("thresholds")) {
    const auto& t = j["thresholds"];
    c.thresholds.eta_a = t.value("eta_a", c.thresholds.eta_a);
    c.thresholds.eta_b = t.value("eta_b", c.thresholds.eta_b);
  }
  c.seed = j.value("seed", c.seed);
  c.keep_per_fold = j.value("keep_per_fold", c.keep_per_fold);
  c.holdout = j.value("holdout", c.holdout);
  c.threads = j.value("threads", c.threads);
  if (j.contains("encoder_init")) {
    if (j["encoder_init"].is_string()) {
      c.encoder_init = j["encoder_init"].get<std::string>();
    } else {
      c.encoder_init.reset();
    }
  }
  c.loss.validate();
  c.thresholds.validate();
  if (c.batch_size <= 0 || c.epochs < 0 || c.threads <= 0) {
    throw ConfigurationError("batch_size and threads must be positive and epochs non-negative");
  }
  return c;
}

// --- models ------------------------------------------------------------------------

Tokenizer build_tokenizer(const Dataset& data, int min_count) {
  std::vector<std::string> texts;
  for (const auto& inst : data.instances) texts.push_back(inst.hypothesis);
  for (const auto& [_, trial] : data.trials) {
    for (const auto& [__, sentences] : trial.sections) texts.insert(texts.end(), sentences.begin(), sentences.end());
  }
  return Tokenizer::build(texts, min_count);
}

MGNetModel init_mgnet_model(const ModelSpec& spec, int vocab_size, const TrainConfig& cfg, std::uint64_t seed) {
  if (spec.family != ModelFamily::MGNet) throw ArgumentError("init_mgnet_model: " + spec.name + " is not an MGNet");
  MGNetModel m;
  constexpr int kBasePositions = 512;
  if (cfg.encoder_init) {
    m.encoder = import_parameters(*cfg.encoder_init / "encoder.mgnli");
  } else {
    EncoderConfig ec;
    ec.layers = cfg.layers;
    ec.hidden = cfg.hidden;
    ec.heads = cfg.heads;
    ec.ffn = cfg.ffn;
    ec.vocab_size = vocab_size;
    ec.max_positions = std::min(spec.max_len, kBasePositions);
    ec.dropout = cfg.dropout;
    ec.match_features = cfg.match_features;
    m.encoder = EncoderParams::init(ec, seed);
  }
  if (spec.max_len > m.encoder.config.max_positions) {
    m.encoder = extend_positions(m.encoder, spec.max_len, seed + 17);
  }
  MGNetConfig mc;
  mc.sentence_encoder = spec.sentence;
  mc.token_encoder = spec.token;
  mc.hidden = m.encoder.config.hidden;
  mc.sentence_layers = cfg.sentence_layers;
  mc.sentence_heads = m.encoder.config.heads;
  mc.sentence_ffn = m.encoder.config.ffn;
  mc.dropout = cfg.dropout;
  m.mgnet = MGNetParams::init(mc, seed + 1);
  return m;
}

namespace {

struct TrainExample {
  TokenSequence seq;
  int y = -1;
  std::vector<int> r;
  bool has_evidence = false;
};

std::vector<TrainExample> build_examples(const ModelSpec& spec, const std::vector<Instance>& instances,
                                         const TrialMap& trials, const Tokenizer& tok) {
  std::vector<TrainExample> out;
  for (const auto& inst : instances) {
    if (*spec.task == Task::A) {
      if (!inst.label) continue;
      const auto view = build_premise(inst, trials, Task::A).front();
      TrainExample ex{encode_pair(inst.hypothesis, view, tok, spec.max_len), *inst.label == Label::Entailment ? 1 : 0,
                      {}, inst.primary_evidence.has_value()};
      if (ex.has_evidence) ex.r = evidence_labels(inst, view);
      out.push_back(std::move(ex));
    } else {
      if (!inst.primary_evidence) continue;
      for (const auto& view : build_premise(inst, trials, Task::B)) {
        TrainExample ex{encode_pair(inst.hypothesis, view, tok, spec.max_len),
                        inst.label ? (*inst.label == Label::Entailment ? 1 : 0) : -1, evidence_labels(inst, view),
                        true};
        out.push_back(std::move(ex));
      }
    }
  }
  return out;
}

// L_B over the sentences the network scored; empty when none carry a label.
std::optional<Var> retrieval_term(const MGNetTrace& trace, const TrainExample& ex) {
  if (!ex.has_evidence) return std::nullopt;
  std::vector<Var> p;
  std::vector<int> r;
  for (std::size_t i = 0; i < trace.evidence.size(); ++i) {
    if (!trace.evidence[i]) continue;
    p.push_back(*trace.evidence[i]);
    r.push_back(ex.r[i]);
  }
  if (p.empty()) return std::nullopt;
  return ag_loss::retrieval(p, r);
}

void check_finite(const Var& loss, int epoch, std::int64_t step) {
  if (!std::isfinite(loss->value(0, 0))) {
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
  }
}

template <typename Model>
void keep_snapshot(std::vector<Snapshot<Model>>& kept, int keep, int epoch, double metric, const Model& model) {
  if (keep <= 0) return;
  auto better = [](const Snapshot<Model>& a, double metric_b, int epoch_b) {
    return a.metric > metric_b || (a.metric == metric_b && a.epoch < epoch_b);
  };
  std::size_t pos = 0;
  while (pos < kept.size() && better(kept[pos], metric, epoch)) ++pos;
  if (pos >= static_cast<std::size_t>(keep)) return;
  kept.insert(kept.begin() + static_cast<std::ptrdiff_t>(pos), Snapshot<Model>{epoch, metric, model.clone()});
  if (kept.size() > static_cast<std::size_t>(keep)) kept.pop_back();
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

double selection_metric(Task task, const PredictionSet& p, const std::vector<Instance>& dev, const TrialMap& trials,
                        const DecisionThresholds& t) {
  if (task == Task::A) return per_section_report_taskA(decide_taskA(p.task_a, t), dev).overall.f1;
  return micro_prf_taskB(decide_taskB(p.task_b, t), dev, trials).f1;
}

MGNetTrainResult train_mgnet(const ModelSpec& spec, MGNetModel& model, const std::vector<Instance>& train,
                             const std::vector<Instance>& dev, const TrialMap& trials, const Tokenizer& tok,
                             const TrainConfig& cfg, int keep, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (spec.family != ModelFamily::MGNet || !spec.task) throw ArgumentError(spec.name + " is not an MGNet spec");
  cfg.loss.validate();
  if (cfg.batch_size <= 0 || cfg.epochs < 0) throw ConfigurationError("train_mgnet: invalid batch size or epochs");
  const auto examples = build_examples(spec, train, trials, tok);
  if (examples.empty()) throw DegenerateInputError("train_mgnet: no usable training examples for " + spec.name);

  std::mt19937_64 rng(cfg.seed);
  const std::int64_t per_epoch = (static_cast<std::int64_t>(examples.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total = per_epoch * cfg.epochs;
  const std::int64_t warmup = cfg.warmup_steps >= 0
                                  ? cfg.warmup_steps
                                  : static_cast<std::int64_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total)));
  const LinearSchedule enc_lr{cfg.encoder_lr, warmup, total};
  const LinearSchedule head_lr{cfg.head_lr, warmup, total};
  Adam enc_opt;
  Adam head_opt;
  std::array<ParameterStore*, 2> stores{&model.encoder.store, &model.mgnet.store};
  ForwardContext ctx{true, &rng};
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);

  MGNetTrainResult result;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t counted = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double weight = 1.0 / static_cast<double>(end - start);
      if (spec.objective == Objective::Contrastive && end - start >= 2) {
        std::vector<Var> globals;
        std::vector<Var> probs;
        std::vector<int> labels;
        for (std::size_t b = start; b < end; ++b) {
          const auto& ex = examples[order[b]];
          const MGNetTrace trace = mgnet_trace(ex.seq, model.encoder, model.mgnet, ctx);
          globals.push_back(trace.global);
          probs.push_back(trace.entailment);
          labels.push_back(ex.y);
        }
        Var loss = ag_loss::contrastive(globals, labels, probs, cfg.loss);
        check_finite(loss, epoch, step);
        epoch_loss += loss->value(0, 0) * static_cast<double>(end - start);
        counted += end - start;
        backward(loss);
      } else {
        for (std::size_t b = start; b < end; ++b) {
          const auto& ex = examples[order[b]];
          const MGNetTrace trace = mgnet_trace(ex.seq, model.encoder, model.mgnet, ctx);
          std::optional<Var> loss;
          switch (spec.objective) {
            case Objective::Multitask: {
              Var la = ag_loss::entailment(trace.entailment, ex.y);
              const auto lb = retrieval_term(trace, ex);
              loss = lb ? ag_loss::multitask(la, *lb, cfg.loss) : la;
              break;
            }
            case Objective::Contrastive:
              loss = ag_loss::entailment(trace.entailment, ex.y);
              break;
            case Objective::Retrieval:
              loss = retrieval_term(trace, ex);
              break;
            default:
              throw ArgumentError("objective not supported for MGNet");
          }
          if (!loss) continue;
          check_finite(*loss, epoch, step);
          epoch_loss += (*loss)->value(0, 0);
          ++counted;
          backward(*loss, weight);
        }
      }
      clip_grad_norm(stores, cfg.grad_clip);
      enc_opt.step(model.encoder.store, enc_lr.at(step));
      head_opt.step(model.mgnet.store, head_lr.at(step));
      ++step;
      model.encoder.store.zero_grad();
      model.mgnet.store.zero_grad();
    }
    if (!model.encoder.store.all_finite() || !model.mgnet.store.all_finite()) {
      throw TrainingError("non-finite parameters after epoch " + std::to_string(epoch));
    }
    EpochRecord rec{epoch, counted ? epoch_loss / static_cast<double>(counted) : 0.0, std::nullopt};
    double metric = 0.0;
    if (!dev.empty()) {
      const auto p = predict_mgnet(spec, model, dev, trials, tok);
      metric = selection_metric(*spec.task, p, dev, trials, cfg.thresholds);
      rec.dev_f1 = metric;
    } else {
      metric = static_cast<double>(epoch);  // latest epochs win
    }
    keep_snapshot(result.kept, keep, epoch, metric, model);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

PredictionSet predict_mgnet(const ModelSpec& spec, const MGNetModel& model, const std::vector<Instance>& instances,
                            const TrialMap& trials, const Tokenizer& tok, int threads) {
  if (!spec.task) throw ArgumentError(spec.name + " does not predict a task");
  std::vector<EntailmentProbabilities> task_a(instances.size());
  std::vector<InstanceEvidence> task_b(instances.size());
  auto evidence = [&](const Instance& inst, const PremiseView& view) {
    const auto out = mgnet_forward(encode_pair(inst.hypothesis, view, tok, spec.max_len), model.encoder, model.mgnet);
    return EvidencePrediction{out.evidence.scores, out.evidence.scored};
  };
  parallel_for(instances.size(), threads, [&](std::size_t i) {
    const Instance& inst = instances[i];
    if (*spec.task == Task::A) {
      const auto view = build_premise(inst, trials, Task::A).front();
      task_a[i] = mgnet_forward(encode_pair(inst.hypothesis, view, tok, spec.max_len), model.encoder, model.mgnet)
                      .entailment;
    } else {
      const auto views = build_premise(inst, trials, Task::B);
      task_b[i].primary = evidence(inst, views.front());
      if (views.size() > 1) task_b[i].secondary = evidence(inst, views[1]);
    }
  });
  PredictionSet out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (*spec.task == Task::A) {
      out.task_a[instances[i].uuid] = task_a[i];
    } else {
      out.task_b[instances[i].uuid] = std::move(task_b[i]);
    }
  }
  return out;
}

PredictionSet predict_generative(const SequenceScorer& scorer, const std::vector<Instance>& instances,
                                 const TrialMap& trials, int threads) {
  std::vector<EntailmentProbabilities> p(instances.size());
  parallel_for(instances.size(), scorer.thread_safe() ? threads : 1,
               [&](std::size_t i) { p[i] = score_instance(scorer, instances[i], trials); });
  PredictionSet out;
  for (std::size_t i = 0; i < instances.size(); ++i) out.task_a[instances[i].uuid] = p[i];
  return out;
}

// --- checkpoints -------------------------------------------------------------------

json to_json(const CheckpointMeta& m) {
  return {{"model", m.model}, {"fold", m.fold},     {"rank", m.rank},
          {"epoch", m.epoch}, {"metric", m.metric}, {"path", m.path.string()},
          {"task", task_json(m.task)}, {"holdout", m.holdout}};
}

CheckpointMeta checkpoint_meta_from_json(const json& j) {
  CheckpointMeta m;
  try {
    m.model = j.at("model").get<std::string>();
    m.fold = j.value("fold", -1);
    m.rank = j.value("rank", 0);
    m.epoch = j.value("epoch", 0);
    m.metric = j.value("metric", 0.0);
    m.path = j.value("path", std::string());
    m.task = task_from_json(j.value("task", json(nullptr)));
    m.holdout = j.value("holdout", false);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed checkpoint metadata: ") + e.what());
  }
  return m;
}

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace

void write_checkpoint_index(const fs::path& path, const std::vector<CheckpointMeta>& metas) {
  json arr = json::array();
  for (const auto& m : metas) arr.push_back(to_json(m));
  write_json_file(path, {{"checkpoints", arr}});
}

std::vector<CheckpointMeta> read_checkpoint_index(const fs::path& path) {
  const json j = read_json_file(path);
  if (!j.contains("checkpoints") || !j["checkpoints"].is_array()) {
    throw ParseError(path.string() + ": expected a \"checkpoints\" list");
  }
  std::vector<CheckpointMeta> out;
  for (const auto& c : j["checkpoints"]) out.push_back(checkpoint_meta_from_json(c));
  return out;
}

void save_mgnet_checkpoint(const fs::path& dir, const ModelSpec& spec, const MGNetModel& model, const Tokenizer& tok,
                           const CheckpointMeta& meta) {
  prepare_dir(dir);
  Archive archive;
  append_encoder(archive, model.encoder);
  append_mgnet(archive, model.mgnet);
  write_archive(dir / "model.mgnli", archive);
  tok.save(dir / "vocab.txt");
  write_json_file(dir / "config.json",
                  {{"spec", spec_json(spec)}, {"mgnet", mgnet_config_json(model.mgnet.config)}, {"meta", to_json(meta)}});
}

void save_generative_checkpoint(const fs::path& dir, const ByteSeq2Seq& model, const CheckpointMeta& meta) {
  prepare_dir(dir);
  model.save(dir / "model.mgnli");
  write_json_file(dir / "config.json", {{"spec", spec_json(find_model_spec("generative"))}, {"meta", to_json(meta)}});
}

void save_pairnet_checkpoint(const fs::path& dir, const PairNet& net, const Tokenizer& tok, int max_len,
                             const CheckpointMeta& meta) {
  prepare_dir(dir);
  Archive archive;
  append_pairnet(archive, net);
  write_archive(dir / "model.mgnli", archive);
  tok.save(dir / "vocab.txt");
  ModelSpec spec = find_model_spec("pairwise");
  spec.max_len = max_len;
  write_json_file(dir / "config.json", {{"spec", spec_json(spec)}, {"meta", to_json(meta)}});
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("checkpoint not found: " + dir.string());
  const json cfg = read_json_file(dir / "config.json");
  LoadedCheckpoint ck;
  try {
    ck.spec = spec_from_json(cfg.at("spec"));
    ck.meta = checkpoint_meta_from_json(cfg.at("meta"));
  } catch (const json::exception& e) {
    throw ImportError("malformed checkpoint config in " + dir.string() + ": " + e.what());
  }
  ck.max_len = ck.spec.max_len;
  ck.meta.path = dir;
  switch (ck.spec.family) {
    case ModelFamily::MGNet: {
      const Archive archive = read_archive(dir / "model.mgnli");
      MGNetModel m;
      m.encoder = encoder_from_archive(archive);
      m.mgnet = mgnet_from_archive(archive, mgnet_config_from_json(cfg.at("mgnet")));
      ck.mgnet = std::move(m);
      ck.tokenizer = Tokenizer::load(dir / "vocab.txt");
      break;
    }
    case ModelFamily::Generative:
      ck.generative = ByteSeq2Seq::load(dir / "model.mgnli");
      break;
    case ModelFamily::Pairwise:
      ck.pairnet = pairnet_from_archive(read_archive(dir / "model.mgnli"));
      ck.tokenizer = Tokenizer::load(dir / "vocab.txt");
      break;
  }
  return ck;
}

PredictionSet predict_checkpoint(const LoadedCheckpoint& ck, const Dataset& data, int threads) {
  switch (ck.spec.family) {
    case ModelFamily::MGNet:
      return predict_mgnet(ck.spec, *ck.mgnet, data.instances, data.trials, *ck.tokenizer, threads);
    case ModelFamily::Generative:
      return predict_generative(*ck.generative, data.instances, data.trials, threads);
    case ModelFamily::Pairwise:
      break;
  }
  throw ArgumentError("checkpoint " + ck.meta.path.string() + " is a consistency network, not a predictor");
}

// --- cross-validation --------------------------------------------------------------

namespace {

std::string fold_dir(int fold, int rank) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "fold-%02d/rank-%d", fold, rank);
  return buf;
}

struct FoldJob {
  int fold = -1;
  bool holdout = false;
  std::vector<Instance> train;
  std::vector<Instance> dev;
  std::uint64_t seed = 0;
  int keep = 1;
};

fs::path job_path(const fs::path& out_dir, const ModelSpec& spec, const FoldJob& job, int rank) {
  if (job.holdout) return out_dir / spec.name / "holdout";
  if (job.fold < 0) return out_dir / spec.name / ("rank-" + std::to_string(rank));
  return out_dir / spec.name / fold_dir(job.fold, rank);
}

Seq2SeqConfig seq2seq_config(const ModelSpec& spec, const TrainConfig& cfg) {
  Seq2SeqConfig s;
  s.hidden = cfg.hidden;
  s.layers = cfg.layers;
  s.heads = cfg.heads;
  s.ffn = cfg.ffn;
  s.max_input = spec.max_len;
  s.dropout = cfg.dropout;
  return s;
}

std::vector<CheckpointMeta> run_job(const ModelSpec& spec, const FoldJob& job, const TrialMap& trials,
                                    const Tokenizer& tok, const TrainConfig& base, const fs::path& out_dir,
                                    FoldReport& report) {
  TrainConfig cfg = base;
  cfg.seed = job.seed;
  std::vector<CheckpointMeta> metas;
  auto meta_for = [&](int rank, int epoch, double metric) {
    CheckpointMeta m;
    m.model = spec.name;
    m.fold = job.fold;
    m.rank = rank;
    m.epoch = epoch;
    m.metric = metric;
    m.task = spec.task;
    m.holdout = job.holdout;
    m.path = job_path(out_dir, spec, job, rank);
    return m;
  };
  if (spec.family == ModelFamily::MGNet) {
    MGNetModel model = init_mgnet_model(spec, tok.vocab_size(), cfg, job.seed);
    auto result = train_mgnet(spec, model, job.train, job.dev, trials, tok, cfg, job.keep);
    report.history = result.history;
    for (std::size_t r = 0; r < result.kept.size(); ++r) {
      const auto& snap = result.kept[r];
      auto meta = meta_for(static_cast<int>(r), snap.epoch, job.dev.empty() ? 0.0 : snap.metric);
      save_mgnet_checkpoint(meta.path, spec, snap.model, tok, meta);
      metas.push_back(meta);
    }
  } else if (spec.family == ModelFamily::Generative) {
    ByteSeq2Seq model = ByteSeq2Seq::init(seq2seq_config(spec, cfg), job.seed);
    GenerativeTrainConfig g{cfg.encoder_lr, cfg.batch_size, cfg.epochs, std::max(0, cfg.warmup_steps), cfg.grad_clip,
                            job.seed};
    std::vector<Snapshot<ByteSeq2Seq>> kept;
    train_generative(model, job.train, trials, g, [&](int epoch, double loss) {
      EpochRecord rec{epoch, loss, std::nullopt};
      double metric = static_cast<double>(epoch);
      if (!job.dev.empty()) {
        metric = selection_metric(Task::A, predict_generative(model, job.dev, trials), job.dev, trials, cfg.thresholds);
        rec.dev_f1 = metric;
      }
      keep_snapshot(kept, job.keep, epoch, metric, model);
      report.history.push_back(rec);
    });
    for (std::size_t r = 0; r < kept.size(); ++r) {
      auto meta = meta_for(static_cast<int>(r), kept[r].epoch, job.dev.empty() ? 0.0 : kept[r].metric);
      save_generative_checkpoint(meta.path, kept[r].model, meta);
      metas.push_back(meta);
    }
  } else {
    throw ArgumentError("train_cv: the consistency network is not cross-validated");
  }
  return metas;
}

}  // namespace

CvResult train_cv(const ModelSpec& spec, const Dataset& data, const FoldPlan& folds, const TrainConfig& cfg,
                  const fs::path& out_dir) {
  if (!spec.task) throw ArgumentError("train_cv: " + spec.name + " has no task");
  if (folds.k < 2) throw ArgumentError("train_cv: need at least two folds");
  const Tokenizer tok =
      cfg.encoder_init ? Tokenizer::load(*cfg.encoder_init / "vocab.txt") : build_tokenizer(data, cfg.vocab_min_count);

  std::vector<FoldJob> jobs;
  const int keep = cfg.keep_for(*spec.task);
  auto split = [&](const FoldPlan& plan, int f) {
    FoldJob job;
    for (const auto& inst : data.instances) {
      const auto it = plan.assignment.find(inst.uuid);
      if (it == plan.assignment.end()) throw AlignmentError("fold plan lacks instance " + inst.uuid);
      (it->second == f ? job.dev : job.train).push_back(inst);
    }
    return job;
  };
  for (int f = 0; f < folds.k; ++f) {
    FoldJob job = split(folds, f);
    job.fold = f;
    job.seed = cfg.seed + 1000003ULL * static_cast<std::uint64_t>(f + 1);
    job.keep = keep;
    jobs.push_back(std::move(job));
  }
  if (cfg.holdout && *spec.task == Task::B) {
    FoldJob job = split(split_folds(data.instances, 10, cfg.seed ^ 0x401dULL), 0);
    job.holdout = true;
    job.seed = cfg.seed + 7919ULL;
    job.keep = 1;
    jobs.push_back(std::move(job));
  }

  std::vector<std::vector<CheckpointMeta>> per_job(jobs.size());
  std::vector<FoldReport> reports(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t j) {
    reports[j].fold = jobs[j].fold;
    try {
      per_job[j] = run_job(spec, jobs[j], data.trials, tok, cfg, out_dir, reports[j]);
    } catch (const std::exception& e) {
      reports[j].failed = true;
      reports[j].failure = e.what();
    }
  });
  CvResult result;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    result.checkpoints.insert(result.checkpoints.end(), per_job[j].begin(), per_job[j].end());
  }
  result.folds = std::move(reports);
  return result;
}

CvResult train_split(const ModelSpec& spec, const Dataset& train, const std::optional<Dataset>& dev,
                     const TrainConfig& cfg, const fs::path& out_dir) {
  if (!spec.task) throw ArgumentError("train_split: " + spec.name + " has no task");
  Dataset merged = train;
  FoldJob job;
  job.train = train.instances;
  if (dev) {
    job.dev = dev->instances;
    for (const auto& [id, trial] : dev->trials) merged.trials.emplace(id, trial);
  }
  job.seed = cfg.seed;
  job.keep = cfg.keep_for(*spec.task);
  const Tokenizer tok =
      cfg.encoder_init ? Tokenizer::load(*cfg.encoder_init / "vocab.txt") : build_tokenizer(merged, cfg.vocab_min_count);
  CvResult result;
  FoldReport report;
  try {
    result.checkpoints = run_job(spec, job, merged.trials, tok, cfg, out_dir, report);
  } catch (const std::exception& e) {
    report.failed = true;
    report.failure = e.what();
  }
  result.folds.push_back(std::move(report));
  return result;
}

PairwiseRun train_pairwise(const PairDataset& pairs, const TrainConfig& cfg, int max_len, const fs::path& dir) {
  if (pairs.pairs.empty()) throw DegenerateInputError("train_pairwise: no training pairs");
  Tokenizer tok;
  PairNet net;
  if (cfg.encoder_init) {
    tok = Tokenizer::load(*cfg.encoder_init / "vocab.txt");
    EncoderParams encoder = import_parameters(*cfg.encoder_init / "encoder.mgnli");
    net = PairNet::init(encoder.config, cfg.seed);
    net.encoder = std::move(encoder);
  } else {
    std::vector<std::string> texts;
    for (const auto& p : pairs.pairs) {
      texts.push_back(p.first);
      texts.push_back(p.second);
    }
    for (const auto& [_, trial] : pairs.trials) {
      for (const auto& [__, sentences] : trial.sections) texts.insert(texts.end(), sentences.begin(), sentences.end());
    }
    tok = Tokenizer::build(texts, cfg.vocab_min_count);
    EncoderConfig ec;
    ec.layers = cfg.layers;
    ec.hidden = cfg.hidden;
    ec.heads = cfg.heads;
    ec.ffn = cfg.ffn;
    ec.vocab_size = tok.vocab_size();
    ec.max_positions = max_len;
    ec.dropout = cfg.dropout;
    ec.match_features = cfg.match_features;
    net = PairNet::init(ec, cfg.seed);
  }
  PairTrainConfig pc;
  pc.encoder_lr = cfg.encoder_lr;
  pc.head_lr = cfg.head_lr;
  pc.batch_size = cfg.batch_size;
  pc.epochs = cfg.epochs;
  pc.warmup_fraction = cfg.warmup_fraction;
  pc.grad_clip = cfg.grad_clip;
  pc.max_len = max_len;
  pc.seed = cfg.seed;
  PairwiseRun run;
  run.losses = train_pairnet(net, pairs.pairs, pairs.trials, tok, pc);
  run.meta.model = "pairwise";
  run.meta.epoch = cfg.epochs;
  run.meta.path = dir;
  save_pairnet_checkpoint(dir, net, tok, max_len, run.meta);
  return run;
}

std::vector<CheckpointMeta> plan_checkpoints(std::span<const std::string> model_names, int folds, const TrainConfig& cfg) {
  if (folds < 1) throw ArgumentError("plan_checkpoints: folds must be positive");
  std::vector<CheckpointMeta> out;
  for (const auto& name : model_names) {
    const ModelSpec& spec = find_model_spec(name);
    if (!spec.task) continue;
    const int keep = cfg.keep_for(*spec.task);
    for (int f = 0; f < folds; ++f) {
      for (int r = 0; r < keep; ++r) {
        CheckpointMeta m;
        m.model = spec.name;
        m.fold = f;
        m.rank = r;
        m.task = spec.task;
        m.path = fs::path(spec.name) / fold_dir(f, r);
        out.push_back(m);
      }
    }
    if (cfg.holdout && *spec.task == Task::B) {
      CheckpointMeta m;
      m.model = spec.name;
      m.task = spec.task;
      m.holdout = true;
      m.path = fs::path(spec.name) / "holdout";
      out.push_back(m);
    }
  }
  return out;
}

}  // namespace mgnli
