#pragma once

// Joint semantics encoder: token/position/segment (and optionally exact-match)
// embeddings followed by a stack of post-layer-norm transformer blocks with
// GELU feed-forward layers.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "mgnli/corpus.hpp"
#include "mgnli/params.hpp"

namespace mgnli {

struct EncoderConfig {
  int layers = 2;
  int hidden = 32;
  int heads = 2;
  int ffn = 64;
  int vocab_size = 0;
  int max_positions = 512;
  int type_vocab = 2;
  // Adds a two-row exact-match embedding driven by TokenSequence::match_ids.
  bool match_features = false;
  double layer_norm_eps = 1e-12;
  double dropout = 0.1;
  double init_std = 0.02;

  void validate() const;
};

// Training-mode switch plus the RNG that drives dropout masks. Eval mode
// (training == false) is deterministic.
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;

  double dropout(double p) const { return training ? p : 0.0; }
};

struct EncoderParams {
  EncoderConfig config;
  ParameterStore store;

  static EncoderParams init(const EncoderConfig& cfg, std::uint64_t seed);
  EncoderParams clone() const { return {config, store.clone()}; }
};

// Names of the arrays making up one transformer block under `prefix`.
void add_transformer_layer(ParameterStore& store, const std::string& prefix, int hidden, int ffn, double init_std,
                           std::mt19937_64& rng);

// One post-LN block: x = LN(x + MHA(x)); x = LN(x + W2 GELU(W1 x)).
ag::Var transformer_layer(const ParameterStore& store, const std::string& prefix, const ag::Var& x, int heads,
                          double eps, double dropout, const ForwardContext& ctx);

// H^0 = LN(word + position + segment [+ match]).
ag::Var embed(const TokenSequence& seq, const EncoderParams& params, const ForwardContext& ctx);

// Differentiable forward pass returning the N x d final-layer representations.
ag::Var encode(const TokenSequence& seq, const EncoderParams& params, const ForwardContext& ctx);

// Eval-mode convenience wrapper.
Mat embed_and_encode(const TokenSequence& seq, const EncoderParams& params);

// Grows the position table. Existing rows are copied bit-for-bit; new rows
// are drawn from normal(0, stddev) with the given seed.
EncoderParams extend_positions(const EncoderParams& params, int new_max, std::uint64_t seed, double stddev = 0.02);

// Archive round trip. Arrays live under "encoder."; the configuration is kept
// in the manifest meta block.
void export_parameters(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams import_parameters(const std::filesystem::path& path);
void append_encoder(Archive& archive, const EncoderParams& params, const std::string& prefix = "encoder.");
EncoderParams encoder_from_archive(const Archive& archive, const std::string& prefix = "encoder.");

}  // namespace mgnli
