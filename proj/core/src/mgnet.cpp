#include "mgnli/mgnet.hpp"

#include <cmath>

#include "mgnli/error.hpp"

namespace mgnli {

using namespace ag;

namespace {

void add_lstm(ParameterStore& store, const std::string& prefix, int in, int hidden, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  store.add(prefix + "w_ih", uniform_init(in, 4 * hidden, bound, rng));
  store.add(prefix + "w_hh", uniform_init(hidden, 4 * hidden, bound, rng));
  store.add(prefix + "b", uniform_init(1, 4 * hidden, bound, rng));
}

Var run_lstm(const ParameterStore& store, const std::string& prefix, const Var& x, bool reverse) {
  return lstm(x, store.get(prefix + "w_ih"), store.get(prefix + "w_hh"), store.get(prefix + "b"), reverse);
}

void require_finite(const Var& v, const char* what) {
  if (!v->value.allFinite()) throw NumericError(std::string(what) + ": non-finite input");
}

}  // namespace

std::string_view to_string(SentenceEncoderKind k) {
  switch (k) {
    case SentenceEncoderKind::BiLSTM:
      return "bilstm";
    case SentenceEncoderKind::Transformer:
      return "transformer";
    case SentenceEncoderKind::None:
      return "none";
  }
  return "";
}

std::string_view to_string(TokenEncoderKind k) {
  switch (k) {
    case TokenEncoderKind::BiLSTM:
      return "bilstm";
    case TokenEncoderKind::MaxPool:
      return "maxpool";
    case TokenEncoderKind::None:
      return "none";
  }
  return "";
}

SentenceEncoderKind parse_sentence_encoder(std::string_view s) {
  if (s == "bilstm") return SentenceEncoderKind::BiLSTM;
  if (s == "transformer") return SentenceEncoderKind::Transformer;
  if (s == "none") return SentenceEncoderKind::None;
  throw ConfigurationError("unknown sentence encoder \"" + std::string(s) + "\"");
}

TokenEncoderKind parse_token_encoder(std::string_view s) {
  if (s == "bilstm") return TokenEncoderKind::BiLSTM;
  if (s == "maxpool") return TokenEncoderKind::MaxPool;
  if (s == "none") return TokenEncoderKind::None;
  throw ConfigurationError("unknown token encoder \"" + std::string(s) + "\"");
}

void MGNetConfig::validate() const {
  if (hidden <= 0 || sentence_layers < 0 || sentence_heads <= 0 || sentence_ffn <= 0 || max_sentences <= 0) {
    throw ConfigurationError("MGNet configuration has non-positive sizes");
  }
  if (sentence_encoder == SentenceEncoderKind::Transformer && hidden % sentence_heads != 0) {
    throw ConfigurationError("MGNet hidden width must be divisible by the sentence head count");
  }
}

MGNetParams MGNetParams::init(const MGNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg.hidden;
  MGNetParams p;
  p.config = cfg;
  auto& s = p.store;
  const double xavier_2d = std::sqrt(1.0 / (2.0 * d));
  const double xavier_d = std::sqrt(1.0 / d);
  switch (cfg.sentence_encoder) {
    case SentenceEncoderKind::BiLSTM:
      add_lstm(s, "sentence.lstm.forward.", d, d, rng);
      add_lstm(s, "sentence.lstm.backward.", d, d, rng);
      s.add("sentence.proj.weight", normal_init(2 * d, d, xavier_2d, rng));
      s.add("sentence.proj.bias", Mat::Zero(1, d));
      s.add("sentence.global.weight", normal_init(2 * d, d, xavier_2d, rng));
      s.add("sentence.global.bias", Mat::Zero(1, d));
      break;
    case SentenceEncoderKind::Transformer:
      s.add("sentence.position", normal_init(cfg.max_sentences, d, cfg.init_std, rng));
      for (int l = 0; l < cfg.sentence_layers; ++l) {
        add_transformer_layer(s, "sentence.layer." + std::to_string(l) + ".", d, cfg.sentence_ffn, cfg.init_std,
                              rng);
      }
      break;
    case SentenceEncoderKind::None:
      break;
  }
  if (cfg.token_encoder == TokenEncoderKind::BiLSTM) {
    add_lstm(s, "token.lstm.forward.", d, d, rng);
    add_lstm(s, "token.lstm.backward.", d, d, rng);
    s.add("token.proj.weight", normal_init(2 * d, d, xavier_2d, rng));
    s.add("token.proj.bias", Mat::Zero(1, d));
  }
  s.add("classifier_a.hidden.weight", normal_init(d, d, xavier_d, rng));
  s.add("classifier_a.hidden.bias", Mat::Zero(1, d));
  s.add("classifier_a.output.weight", normal_init(d, 2, xavier_d, rng));
  s.add("classifier_a.output.bias", Mat::Zero(1, 2));
  const int evidence_in = cfg.token_encoder == TokenEncoderKind::None ? d : 2 * d;
  s.add("classifier_b.weight", normal_init(evidence_in, 1, std::sqrt(1.0 / evidence_in), rng));
  s.add("classifier_b.bias", Mat::Zero(1, 1));
  return p;
}

Var pool_sentences(const Var& reps, std::span<const Span> spans, PoolingKind pooling) {
  if (spans.empty()) throw DegenerateInputError("pool_sentences: no spans");
  bool any = false;
  for (const auto& sp : spans) any = any || !sp.empty();
  if (!any) throw DegenerateInputError("pool_sentences: all spans are empty");
  std::vector<Var> rows;
  rows.reserve(spans.size());
  for (const auto& sp : spans) {
    if (sp.empty()) throw DegenerateInputError("pool_sentences: empty span must be filtered by the caller");
    Var block = slice_rows(reps, sp.begin, sp.length);
    rows.push_back(pooling == PoolingKind::Max ? max_rows(block) : mean_rows(block));
  }
  return concat_rows(rows);
}

SentenceEncoding sentence_encode_bilstm(const Var& pooled, const MGNetParams& params) {
  const auto& s = params.store;
  if (pooled->cols() != params.config.hidden) {
    throw ConfigurationError("sentence encoder: input width " + std::to_string(pooled->cols()) + " != d " +
                             std::to_string(params.config.hidden));
  }
  if (pooled->rows() < 1) throw DegenerateInputError("sentence encoder: no rows");
  Var fwd = run_lstm(s, "sentence.lstm.forward.", pooled, false);
  Var bwd = run_lstm(s, "sentence.lstm.backward.", pooled, true);
  std::array<Var, 2> both{fwd, bwd};
  Var contextual = linear(concat_cols(both), s.get("sentence.proj.weight"), s.get("sentence.proj.bias"));
  const Eigen::Index last = pooled->rows() - 1;
  std::array<Var, 2> ends{slice_rows(fwd, last, 1), slice_rows(bwd, 0, 1)};
  Var global = linear(concat_cols(ends), s.get("sentence.global.weight"), s.get("sentence.global.bias"));
  return {contextual, global};
}

SentenceEncoding sentence_encode_transformer(const Var& pooled, const MGNetParams& params, const ForwardContext& ctx) {
  const auto& cfg = params.config;
  if (pooled->cols() != cfg.hidden) {
    throw ConfigurationError("sentence encoder: input width " + std::to_string(pooled->cols()) + " != d " +
                             std::to_string(cfg.hidden));
  }
  const auto rows = pooled->rows();
  if (rows < 1) throw DegenerateInputError("sentence encoder: no rows");
  if (rows > cfg.max_sentences) {
    throw LengthError("sentence encoder: " + std::to_string(rows) + " sentences exceed max_sentences " +
                      std::to_string(cfg.max_sentences));
  }
  Var h = add(pooled, slice_rows(params.store.get("sentence.position"), 0, rows));
  for (int l = 0; l < cfg.sentence_layers; ++l) {
    h = transformer_layer(params.store, "sentence.layer." + std::to_string(l) + ".", h, cfg.sentence_heads, 1e-12,
                          cfg.dropout, ctx);
  }
  return {h, slice_rows(h, 0, 1)};
}

namespace {

Var hypothesis_and_sentence(const Var& reps, std::span<const Span> spans, int sentence) {
  if (sentence < 0 || static_cast<std::size_t>(sentence) + 1 >= spans.size()) {
    throw ArgumentError("token encoder: sentence index " + std::to_string(sentence) + " out of range");
  }
  const Span& hyp = spans[0];
  const Span& sent = spans[static_cast<std::size_t>(sentence) + 1];
  if (hyp.empty() || sent.empty()) {
    throw DegenerateInputError("token encoder: empty span for sentence " + std::to_string(sentence));
  }
  std::array<Var, 2> parts{slice_rows(reps, hyp.begin, hyp.length), slice_rows(reps, sent.begin, sent.length)};
  return concat_rows(parts);
}

}  // namespace

Var token_encode_bilstm(const Var& reps, std::span<const Span> spans, int sentence, const MGNetParams& params) {
  const auto& s = params.store;
  Var x = hypothesis_and_sentence(reps, spans, sentence);
  Var fwd = run_lstm(s, "token.lstm.forward.", x, false);
  Var bwd = run_lstm(s, "token.lstm.backward.", x, true);
  std::array<Var, 2> ends{slice_rows(fwd, x->rows() - 1, 1), slice_rows(bwd, 0, 1)};
  return linear(concat_cols(ends), s.get("token.proj.weight"), s.get("token.proj.bias"));
}

Var token_encode_maxpool(const Var& reps, std::span<const Span> spans, int sentence) {
  return max_rows(hypothesis_and_sentence(reps, spans, sentence));
}

Var classify_entailment(const Var& global, const MGNetParams& params) {
  require_finite(global, "classify_entailment");
  if (global->rows() != 1 || global->cols() != params.config.hidden) {
    throw ConfigurationError("classify_entailment: expected a 1x" + std::to_string(params.config.hidden) + " input");
  }
  const auto& s = params.store;
  Var hidden = gelu(linear(global, s.get("classifier_a.hidden.weight"), s.get("classifier_a.hidden.bias")));
  return softmax_rows(linear(hidden, s.get("classifier_a.output.weight"), s.get("classifier_a.output.bias")));
}

Var score_evidence(const Var& sentence_rep, const Var& token_rep, const MGNetParams& params) {
  require_finite(sentence_rep, "score_evidence");
  Var input = sentence_rep;
  if (token_rep) {
    require_finite(token_rep, "score_evidence");
    std::array<Var, 2> parts{sentence_rep, token_rep};
    input = concat_cols(parts);
  }
  const auto& s = params.store;
  if (input->cols() != s.get("classifier_b.weight")->rows()) {
    throw ConfigurationError("score_evidence: input width does not match W^B");
  }
  return sigmoid(linear(input, s.get("classifier_b.weight"), s.get("classifier_b.bias")));
}

MGNetTrace mgnet_trace(const TokenSequence& seq, const EncoderParams& enc, const MGNetParams& mg,
                       const ForwardContext& ctx) {
  const auto& cfg = mg.config;
  if (cfg.hidden != enc.config.hidden) {
    throw ConfigurationError("MGNet width " + std::to_string(cfg.hidden) + " does not match encoder width " +
                             std::to_string(enc.config.hidden));
  }
  if (seq.lead != 1) throw ArgumentError("MGNet expects a single-hypothesis token sequence");
  Var reps = encode(seq, enc, ctx);

  // Sentences cut entirely by truncation carry no tokens and are left out.
  std::vector<Span> active_spans{seq.spans[0]};
  std::vector<int> active;
  for (int i = 0; i < seq.m(); ++i) {
    if (!seq.premise_span(i).empty()) {
      active.push_back(i);
      active_spans.push_back(seq.premise_span(i));
    }
  }
  Var pooled = pool_sentences(reps, active_spans, cfg.pooling);
  if (ctx.training && cfg.dropout > 0) pooled = ag::dropout(pooled, cfg.dropout, *ctx.rng);

  SentenceEncoding sent;
  switch (cfg.sentence_encoder) {
    case SentenceEncoderKind::BiLSTM:
      sent = sentence_encode_bilstm(pooled, mg);
      break;
    case SentenceEncoderKind::Transformer:
      sent = sentence_encode_transformer(pooled, mg, ctx);
      break;
    case SentenceEncoderKind::None:
      sent = {pooled, slice_rows(pooled, 0, 1)};
      break;
  }

  MGNetTrace trace;
  trace.global = sent.global;
  trace.entailment = classify_entailment(sent.global, mg);
  trace.evidence.assign(static_cast<std::size_t>(seq.m()), std::nullopt);
  for (std::size_t a = 0; a < active.size(); ++a) {
    const int i = active[a];
    if (seq.marker[static_cast<std::size_t>(i)]) continue;
    Var token_rep;
    switch (cfg.token_encoder) {
      case TokenEncoderKind::BiLSTM:
        token_rep = token_encode_bilstm(reps, seq.spans, i, mg);
        break;
      case TokenEncoderKind::MaxPool:
        token_rep = token_encode_maxpool(reps, seq.spans, i);
        break;
      case TokenEncoderKind::None:
        break;
    }
    Var sentence_rep = slice_rows(sent.contextual, static_cast<Eigen::Index>(a) + 1, 1);
    trace.evidence[static_cast<std::size_t>(i)] = score_evidence(sentence_rep, token_rep, mg);
  }
  return trace;
}

MGNetOutput mgnet_forward(const TokenSequence& seq, const EncoderParams& enc, const MGNetParams& mg) {
  NoGradGuard guard;
  const MGNetTrace trace = mgnet_trace(seq, enc, mg, ForwardContext{});
  MGNetOutput out;
  out.entailment.p = {trace.entailment->value(0, 0), trace.entailment->value(0, 1)};
  out.evidence.scores.assign(trace.evidence.size(), 0.0);
  out.evidence.scored.assign(trace.evidence.size(), false);
  for (std::size_t i = 0; i < trace.evidence.size(); ++i) {
    if (trace.evidence[i]) {
      out.evidence.scores[i] = (*trace.evidence[i])->value(0, 0);
      out.evidence.scored[i] = true;
    }
  }
  return out;
}

void append_mgnet(Archive& archive, const MGNetParams& params, const std::string& prefix) {
  append_to_archive(archive, params.store, prefix);
}

MGNetParams mgnet_from_archive(const Archive& archive, const MGNetConfig& cfg, const std::string& prefix) {
  MGNetParams p = MGNetParams::init(cfg, 0);
  load_from_archive(p.store, archive, prefix);
  return p;
}

}  // namespace mgnli
