#pragma once

// Multi-granularity inference network: max-pooled sentence representations,
// a sentence-level contextual encoder, a per-sentence token-level encoder, and
// the entailment / evidence classifiers on top of one shared encoder pass.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgnli/encoder.hpp"

namespace mgnli {

enum class SentenceEncoderKind { BiLSTM, Transformer, None };
enum class TokenEncoderKind { BiLSTM, MaxPool, None };
enum class PoolingKind { Max, Mean };

std::string_view to_string(SentenceEncoderKind k);
std::string_view to_string(TokenEncoderKind k);
SentenceEncoderKind parse_sentence_encoder(std::string_view s);
TokenEncoderKind parse_token_encoder(std::string_view s);

struct MGNetConfig {
  SentenceEncoderKind sentence_encoder = SentenceEncoderKind::BiLSTM;
  TokenEncoderKind token_encoder = TokenEncoderKind::BiLSTM;
  PoolingKind pooling = PoolingKind::Max;
  int hidden = 32;
  int sentence_layers = 1;
  int sentence_heads = 2;
  int sentence_ffn = 64;
  int max_sentences = 128;
  double dropout = 0.1;
  double init_std = 0.02;

  void validate() const;
};

struct MGNetParams {
  MGNetConfig config;
  ParameterStore store;

  static MGNetParams init(const MGNetConfig& cfg, std::uint64_t seed);
  MGNetParams clone() const { return {config, store.clone()}; }
};

// p[0] = contradiction, p[1] = entailment.
struct EntailmentProbabilities {
  std::array<double, 2> p{0.5, 0.5};

  double contradiction() const { return p[0]; }
  double entailment() const { return p[1]; }
  bool operator==(const EntailmentProbabilities&) const = default;
};

struct EvidenceScores {
  std::vector<double> scores;
  std::vector<bool> scored;  // false for markers and dropped sentences (score 0)
};

// Ĥ^s row i = pooled rows of reps over spans[i]; every span must be non-empty.
ag::Var pool_sentences(const ag::Var& reps, std::span<const Span> spans, PoolingKind pooling = PoolingKind::Max);

struct SentenceEncoding {
  ag::Var contextual;  // H^s, (m+1) x d
  ag::Var global;      // h~^s, 1 x d
};

SentenceEncoding sentence_encode_bilstm(const ag::Var& pooled, const MGNetParams& params);
SentenceEncoding sentence_encode_transformer(const ag::Var& pooled, const MGNetParams& params,
                                             const ForwardContext& ctx = {});

// H^t for premise sentence `sentence` (0-based); spans[0] is the hypothesis
// and spans[sentence + 1] the sentence.
ag::Var token_encode_bilstm(const ag::Var& reps, std::span<const Span> spans, int sentence,
                            const MGNetParams& params);
ag::Var token_encode_maxpool(const ag::Var& reps, std::span<const Span> spans, int sentence);

ag::Var classify_entailment(const ag::Var& global, const MGNetParams& params);  // 1x2 softmax
ag::Var score_evidence(const ag::Var& sentence_rep, const ag::Var& token_rep,
                       const MGNetParams& params);  // 1x1 sigmoid

// Differentiable pass. evidence[i] is empty for unscored sentences.
struct MGNetTrace {
  ag::Var entailment;
  ag::Var global;
  std::vector<std::optional<ag::Var>> evidence;
};

MGNetTrace mgnet_trace(const TokenSequence& seq, const EncoderParams& enc, const MGNetParams& mg,
                       const ForwardContext& ctx);

struct MGNetOutput {
  EntailmentProbabilities entailment;
  EvidenceScores evidence;
};

// Eval-mode forward.
MGNetOutput mgnet_forward(const TokenSequence& seq, const EncoderParams& enc, const MGNetParams& mg);

void append_mgnet(Archive& archive, const MGNetParams& params, const std::string& prefix = "mgnet.");
MGNetParams mgnet_from_archive(const Archive& archive, const MGNetConfig& cfg, const std::string& prefix = "mgnet.");

}  // namespace mgnli
