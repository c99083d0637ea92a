#include "mgnli/generative.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>

#include "mgnli/error.hpp"
#include "mgnli/optim.hpp"

namespace mgnli {

using namespace ag;

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

std::string format_input(std::string_view hypothesis, const PremiseView& premise) {
  if (blank(hypothesis)) throw ArgumentError("format_input: empty hypothesis");
  std::string out = "nli hypothesis: ";
  out += hypothesis;
  out += " premise:";
  for (const auto& s : premise.sentences) {
    out += ' ';
    out += s;
  }
  return out;
}

EntailmentProbabilities normalize_entailment(const LabelScores& scores) {
  if (!(scores.p_ent >= 0 && scores.p_con >= 0) || !std::isfinite(scores.p_ent) || !std::isfinite(scores.p_con)) {
    throw UndefinedScoreError("label scores must be finite and non-negative");
  }
  const double total = scores.p_ent + scores.p_con;
  if (!(total > 0)) throw UndefinedScoreError("both label scores are zero");
  EntailmentProbabilities p;
  p.p = {scores.p_con / total, scores.p_ent / total};
  return p;
}

LabelScores SequenceScorer::score_labels(std::string_view input) const {
  return {score(input, kEntailmentTarget), score(input, kContradictionTarget)};
}

double StubScorer::score(std::string_view, std::string_view target) const {
  const auto it = table_.find(target);
  return it == table_.end() ? fallback_ : it->second;
}

EntailmentProbabilities score_instance(const SequenceScorer& scorer, const Instance& inst, const TrialMap& trials) {
  const auto views = build_premise(inst, trials, Task::A);
  const std::string input = format_input(inst.hypothesis, views.front());
  try {
    return normalize_entailment(scorer.score_labels(input));
  } catch (const std::exception& e) {
    throw Error("instance " + inst.uuid + ": " + e.what());
  }
}

// --- ByteSeq2Seq --------------------------------------------------------------

namespace {

TokenSequence bytes_sequence(std::string_view text, int max_len) {
  TokenSequence seq;
  const auto n = std::min<std::size_t>(text.size(), static_cast<std::size_t>(max_len));
  seq.token_ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) seq.token_ids.push_back(3 + static_cast<unsigned char>(text[i]));
  if (seq.token_ids.empty()) seq.token_ids.push_back(ByteSeq2Seq::kPad);
  seq.segment_ids.assign(seq.token_ids.size(), 0);
  seq.spans = {Span{0, static_cast<int>(seq.token_ids.size())}};
  return seq;
}

EncoderConfig encoder_config(const Seq2SeqConfig& cfg) {
  EncoderConfig e;
  e.layers = cfg.layers;
  e.hidden = cfg.hidden;
  e.heads = cfg.heads;
  e.ffn = cfg.ffn;
  e.vocab_size = ByteSeq2Seq::kVocab;
  e.max_positions = cfg.max_input;
  e.type_vocab = 1;
  e.dropout = cfg.dropout;
  e.init_std = cfg.init_std;
  return e;
}

void add_decoder(ParameterStore& s, const Seq2SeqConfig& cfg, std::mt19937_64& rng) {
  const int d = cfg.hidden;
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  s.add("embedding", normal_init(ByteSeq2Seq::kVocab, d, cfg.init_std, rng));
  s.add("lstm.w_ih", uniform_init(d, 4 * d, bound, rng));
  s.add("lstm.w_hh", uniform_init(d, 4 * d, bound, rng));
  s.add("lstm.b", uniform_init(1, 4 * d, bound, rng));
  s.add("combine.weight", normal_init(2 * d, d, std::sqrt(1.0 / (2.0 * d)), rng));
  s.add("combine.bias", Mat::Zero(1, d));
  s.add("output.weight", normal_init(d, ByteSeq2Seq::kVocab, std::sqrt(1.0 / d), rng));
  s.add("output.bias", Mat::Zero(1, ByteSeq2Seq::kVocab));
}

}  // namespace

ByteSeq2Seq ByteSeq2Seq::init(const Seq2SeqConfig& cfg, std::uint64_t seed) {
  ByteSeq2Seq m;
  m.cfg_ = cfg;
  m.encoder_ = EncoderParams::init(encoder_config(cfg), seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  add_decoder(m.decoder_, cfg, rng);
  return m;
}

ByteSeq2Seq ByteSeq2Seq::clone() const {
  ByteSeq2Seq m;
  m.cfg_ = cfg_;
  m.encoder_ = encoder_.clone();
  m.decoder_ = decoder_.clone();
  return m;
}

void ByteSeq2Seq::save(const std::filesystem::path& path) const {
  Archive archive;
  append_encoder(archive, encoder_, "generative.encoder.");
  append_to_archive(archive, decoder_, "generative.decoder.");
  archive.meta["generative.config"] = {{"hidden", cfg_.hidden}, {"layers", cfg_.layers},   {"heads", cfg_.heads},
                                       {"ffn", cfg_.ffn},       {"max_input", cfg_.max_input}, {"dropout", cfg_.dropout}};
  write_archive(path, archive);
}

ByteSeq2Seq ByteSeq2Seq::load(const std::filesystem::path& path) {
  const Archive archive = read_archive(path);
  const auto it = archive.meta.find("generative.config");
  if (it == archive.meta.end()) throw ImportError("missing generative.config in " + path.string());
  Seq2SeqConfig cfg;
  cfg.hidden = it->value("hidden", cfg.hidden);
  cfg.layers = it->value("layers", cfg.layers);
  cfg.heads = it->value("heads", cfg.heads);
  cfg.ffn = it->value("ffn", cfg.ffn);
  cfg.max_input = it->value("max_input", cfg.max_input);
  cfg.dropout = it->value("dropout", cfg.dropout);
  ByteSeq2Seq m = init(cfg, 0);
  m.encoder_ = encoder_from_archive(archive, "generative.encoder.");
  load_from_archive(m.decoder_, archive, "generative.decoder.");
  return m;
}

Var ByteSeq2Seq::encode_input(std::string_view input, const ForwardContext& ctx) const {
  return encode(bytes_sequence(input, cfg_.max_input), encoder_, ctx);
}

Var ByteSeq2Seq::decode_nll(const Var& memory, std::string_view target, const ForwardContext& ctx) const {
  std::vector<int> inputs{kBegin};
  std::vector<int> outputs;
  for (unsigned char c : target) {
    inputs.push_back(3 + c);
    outputs.push_back(3 + c);
  }
  outputs.push_back(kEnd);
  const auto& s = decoder_;
  Var x = gather_rows(s.get("embedding"), inputs);
  if (ctx.training && cfg_.dropout > 0) x = ag::dropout(x, cfg_.dropout, *ctx.rng);
  Var h = lstm(x, s.get("lstm.w_ih"), s.get("lstm.w_hh"), s.get("lstm.b"), false);
  Var attn = softmax_rows(matmul_nt(h, memory));
  Var context = matmul(attn, memory);
  std::array<Var, 2> parts{h, context};
  Var combined = ag::tanh(linear(concat_cols(parts), s.get("combine.weight"), s.get("combine.bias")));
  Var logits = linear(combined, s.get("output.weight"), s.get("output.bias"));
  return cross_entropy_rows(logits, outputs);
}

Var ByteSeq2Seq::target_nll(std::string_view input, std::string_view target, const ForwardContext& ctx) const {
  return decode_nll(encode_input(input, ctx), target, ctx);
}

double ByteSeq2Seq::score(std::string_view input, std::string_view target) const {
  NoGradGuard guard;
  return std::exp(-target_nll(input, target, ForwardContext{})->value(0, 0));
}

LabelScores ByteSeq2Seq::score_labels(std::string_view input) const {
  NoGradGuard guard;
  const ForwardContext ctx;
  Var memory = encode_input(input, ctx);
  return {std::exp(-decode_nll(memory, kEntailmentTarget, ctx)->value(0, 0)),
          std::exp(-decode_nll(memory, kContradictionTarget, ctx)->value(0, 0))};
}

std::vector<double> train_generative(ByteSeq2Seq& model, const std::vector<Instance>& instances,
                                     const TrialMap& trials, const GenerativeTrainConfig& cfg,
                                     const std::function<void(int, double)>& on_epoch) {
  struct Example {
    std::string input;
    std::string_view target;
  };
  std::vector<Example> examples;
  for (const auto& inst : instances) {
    if (!inst.label) continue;
    const auto views = build_premise(inst, trials, Task::A);
    examples.push_back({format_input(inst.hypothesis, views.front()),
                        *inst.label == Label::Entailment ? kEntailmentTarget : kContradictionTarget});
  }
  if (examples.empty()) throw DegenerateInputError("train_generative: no labeled instances");
  if (cfg.batch_size <= 0 || cfg.epochs < 0) throw ConfigurationError("train_generative: invalid batch or epochs");

  std::mt19937_64 rng(cfg.seed);
  const std::int64_t per_epoch = (static_cast<std::int64_t>(examples.size()) + cfg.batch_size - 1) / cfg.batch_size;
  LinearSchedule schedule{cfg.lr, cfg.warmup_steps, per_epoch * cfg.epochs};
  Adafactor enc_opt;
  Adafactor dec_opt;
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history;
  std::int64_t step = 0;
  ForwardContext ctx{true, &rng};
  std::array<ParameterStore*, 2> stores{&model.encoder().store, &model.decoder()};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double weight = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = examples[order[b]];
        Var loss = model.target_nll(ex.input, ex.target, ctx);
        total += loss->value(0, 0);
        if (!std::isfinite(loss->value(0, 0))) throw TrainingError("generative training diverged");
        backward(loss, weight);
      }
      clip_grad_norm(stores, cfg.grad_clip);
      const double lr = schedule.at(step++);
      enc_opt.step(model.encoder().store, lr);
      dec_opt.step(model.decoder(), lr);
      model.encoder().store.zero_grad();
      model.decoder().zero_grad();
    }
    history.push_back(total / static_cast<double>(examples.size()));
    if (on_epoch) on_epoch(epoch, history.back());
  }
  return history;
}

// --- registry -----------------------------------------------------------------

namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, ScorerFactory> factories;

  Registry() {
    factories["stub"] = [](const nlohmann::json& o) -> std::unique_ptr<SequenceScorer> {
      std::map<std::string, double, std::less<>> table;
      if (o.is_object()) {
        for (const auto& [k, v] : o.items()) {
          if (v.is_number()) table[k] = v.get<double>();
        }
      }
      return std::make_unique<StubScorer>(std::move(table), 0.0);
    };
    factories["byte-seq2seq"] = [](const nlohmann::json& o) -> std::unique_ptr<SequenceScorer> {
      if (!o.is_object() || !o.contains("path")) throw ConfigurationError("byte-seq2seq scorer needs a \"path\"");
      return std::make_unique<ByteSeq2Seq>(ByteSeq2Seq::load(o["path"].get<std::string>()));
    };
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_scorer(const std::string& name, ScorerFactory factory) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
}

std::unique_ptr<SequenceScorer> make_scorer(const std::string& name, const nlohmann::json& options) {
  auto& r = registry();
  ScorerFactory f;
  {
    std::lock_guard lock(r.mutex);
    const auto it = r.factories.find(name);
    if (it == r.factories.end()) throw ConfigurationError("unknown scorer \"" + name + "\"");
    f = it->second;
  }
  return f(options);
}

std::vector<std::string> registered_scorers() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> out;
  for (const auto& [k, _] : r.factories) out.push_back(k);
  return out;
}

}  // namespace mgnli
