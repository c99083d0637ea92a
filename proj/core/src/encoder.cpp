#include "mgnli/encoder.hpp"

#include <cmath>
#include <vector>

#include "mgnli/error.hpp"

namespace mgnli {

using namespace ag;

void EncoderConfig::validate() const {
  if (layers < 0 || hidden <= 0 || heads <= 0 || ffn <= 0 || vocab_size <= 0 || max_positions <= 0 ||
      type_vocab <= 0) {
    throw ConfigurationError("encoder configuration has non-positive sizes");
  }
  if (hidden % heads != 0) throw ConfigurationError("encoder hidden width must be divisible by head count");
}

void add_transformer_layer(ParameterStore& store, const std::string& prefix, int hidden, int ffn, double init_std,
                           std::mt19937_64& rng) {
  for (const char* proj : {"query", "key", "value", "output"}) {
    store.add(prefix + "attention." + proj + ".weight", normal_init(hidden, hidden, init_std, rng));
    store.add(prefix + "attention." + proj + ".bias", Mat::Zero(1, hidden));
  }
  store.add(prefix + "attention.norm.gamma", Mat::Ones(1, hidden));
  store.add(prefix + "attention.norm.beta", Mat::Zero(1, hidden));
  store.add(prefix + "ffn.in.weight", normal_init(hidden, ffn, init_std, rng));
  store.add(prefix + "ffn.in.bias", Mat::Zero(1, ffn));
  store.add(prefix + "ffn.out.weight", normal_init(ffn, hidden, init_std, rng));
  store.add(prefix + "ffn.out.bias", Mat::Zero(1, hidden));
  store.add(prefix + "ffn.norm.gamma", Mat::Ones(1, hidden));
  store.add(prefix + "ffn.norm.beta", Mat::Zero(1, hidden));
}

EncoderParams EncoderParams::init(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  EncoderParams p;
  p.config = cfg;
  p.store.add("embeddings.word", normal_init(cfg.vocab_size, cfg.hidden, cfg.init_std, rng));
  p.store.add("embeddings.position", normal_init(cfg.max_positions, cfg.hidden, cfg.init_std, rng));
  p.store.add("embeddings.token_type", normal_init(cfg.type_vocab, cfg.hidden, cfg.init_std, rng));
  if (cfg.match_features) p.store.add("embeddings.match", normal_init(2, cfg.hidden, cfg.init_std, rng));
  p.store.add("embeddings.norm.gamma", Mat::Ones(1, cfg.hidden));
  p.store.add("embeddings.norm.beta", Mat::Zero(1, cfg.hidden));
  for (int l = 0; l < cfg.layers; ++l) {
    add_transformer_layer(p.store, "layer." + std::to_string(l) + ".", cfg.hidden, cfg.ffn, cfg.init_std, rng);
  }
  return p;
}

Var transformer_layer(const ParameterStore& store, const std::string& prefix, const Var& x, int heads, double eps,
                      double dropout_p, const ForwardContext& ctx) {
  const auto& w = [&](const std::string& name) -> const Var& { return store.get(prefix + name); };
  const Eigen::Index hidden = x->cols();
  const Eigen::Index head_dim = hidden / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var q = linear(x, w("attention.query.weight"), w("attention.query.bias"));
  Var k = linear(x, w("attention.key.weight"), w("attention.key.bias"));
  Var v = linear(x, w("attention.value.weight"), w("attention.value.bias"));
  std::vector<Var> head_out;
  head_out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * head_dim, head_dim);
    Var kh = slice_cols(k, h * head_dim, head_dim);
    Var vh = slice_cols(v, h * head_dim, head_dim);
    Var attn = softmax_rows(scale(matmul_nt(qh, kh), inv_scale));
    if (ctx.training && dropout_p > 0) attn = ag::dropout(attn, dropout_p, *ctx.rng);
    head_out.push_back(matmul(attn, vh));
  }
  Var context = heads == 1 ? head_out.front() : concat_cols(head_out);
  Var attn_out = linear(context, w("attention.output.weight"), w("attention.output.bias"));
  if (ctx.training && dropout_p > 0) attn_out = ag::dropout(attn_out, dropout_p, *ctx.rng);
  Var h1 = layer_norm(add(x, attn_out), w("attention.norm.gamma"), w("attention.norm.beta"), eps);

  Var ff = linear(gelu(linear(h1, w("ffn.in.weight"), w("ffn.in.bias"))), w("ffn.out.weight"), w("ffn.out.bias"));
  if (ctx.training && dropout_p > 0) ff = ag::dropout(ff, dropout_p, *ctx.rng);
  return layer_norm(add(h1, ff), w("ffn.norm.gamma"), w("ffn.norm.beta"), eps);
}

Var embed(const TokenSequence& seq, const EncoderParams& params, const ForwardContext& ctx) {
  const auto& cfg = params.config;
  const int n = seq.n();
  if (n > cfg.max_positions) {
    throw LengthError("sequence of " + std::to_string(n) + " tokens exceeds max_positions " +
                      std::to_string(cfg.max_positions));
  }
  for (int id : seq.token_ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw EncodingError("token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(cfg.vocab_size));
    }
  }
  std::vector<int> positions(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;
  std::vector<int> segments = seq.segment_ids;
  if (segments.size() != seq.token_ids.size()) segments.assign(seq.token_ids.size(), 0);
  for (int& s : segments) s = std::min(s, cfg.type_vocab - 1);

  const auto& st = params.store;
  Var h = add(add(gather_rows(st.get("embeddings.word"), seq.token_ids),
                  gather_rows(st.get("embeddings.position"), positions)),
              gather_rows(st.get("embeddings.token_type"), segments));
  if (cfg.match_features) {
    std::vector<int> match = seq.match_ids;
    if (match.size() != seq.token_ids.size()) match.assign(seq.token_ids.size(), 0);
    for (int& m : match) m = m != 0 ? 1 : 0;
    h = add(h, gather_rows(st.get("embeddings.match"), match));
  }
  h = layer_norm(h, st.get("embeddings.norm.gamma"), st.get("embeddings.norm.beta"), cfg.layer_norm_eps);
  if (ctx.training && cfg.dropout > 0) h = ag::dropout(h, cfg.dropout, *ctx.rng);
  return h;
}

Var encode(const TokenSequence& seq, const EncoderParams& params, const ForwardContext& ctx) {
  Var h = embed(seq, params, ctx);
  for (int l = 0; l < params.config.layers; ++l) {
    h = transformer_layer(params.store, "layer." + std::to_string(l) + ".", h, params.config.heads,
                          params.config.layer_norm_eps, params.config.dropout, ctx);
  }
  return h;
}

Mat embed_and_encode(const TokenSequence& seq, const EncoderParams& params) {
  NoGradGuard guard;
  return encode(seq, params, ForwardContext{})->value;
}

EncoderParams extend_positions(const EncoderParams& params, int new_max, std::uint64_t seed, double stddev) {
  if (new_max <= params.config.max_positions) {
    throw ArgumentError("extend_positions: new maximum " + std::to_string(new_max) + " must exceed " +
                        std::to_string(params.config.max_positions));
  }
  EncoderParams out = params.clone();
  const Mat& old_table = params.store.get("embeddings.position")->value;
  std::mt19937_64 rng(seed);
  Mat table(new_max, old_table.cols());
  table.topRows(old_table.rows()) = old_table;
  table.bottomRows(new_max - old_table.rows()) =
      normal_init(new_max - old_table.rows(), old_table.cols(), stddev, rng);
  out.store.get("embeddings.position")->value = std::move(table);
  out.config.max_positions = new_max;
  return out;
}

void append_encoder(Archive& archive, const EncoderParams& params, const std::string& prefix) {
  const auto& c = params.config;
  archive.meta[prefix + "config"] = {{"layers", c.layers},
                                     {"hidden", c.hidden},
                                     {"heads", c.heads},
                                     {"ffn", c.ffn},
                                     {"vocab_size", c.vocab_size},
                                     {"max_positions", c.max_positions},
                                     {"type_vocab", c.type_vocab},
                                     {"match_features", c.match_features},
                                     {"layer_norm_eps", c.layer_norm_eps},
                                     {"dropout", c.dropout}};
  append_to_archive(archive, params.store, prefix);
}

EncoderParams encoder_from_archive(const Archive& archive, const std::string& prefix) {
  const auto word = archive.find(prefix + "embeddings.word");
  if (word == nullptr) throw ImportError("missing array: " + prefix + "embeddings.word");
  const auto pos = archive.find(prefix + "embeddings.position");
  if (pos == nullptr) throw ImportError("missing array: " + prefix + "embeddings.position");

  EncoderConfig cfg;
  cfg.vocab_size = static_cast<int>(word->value.rows());
  cfg.hidden = static_cast<int>(word->value.cols());
  cfg.max_positions = static_cast<int>(pos->value.rows());
  const auto meta = archive.meta.find(prefix + "config");
  if (meta != archive.meta.end()) {
    cfg.layers = meta->value("layers", 0);
    cfg.heads = meta->value("heads", 1);
    cfg.ffn = meta->value("ffn", 4 * cfg.hidden);
    cfg.type_vocab = meta->value("type_vocab", 2);
    cfg.layer_norm_eps = meta->value("layer_norm_eps", 1e-12);
    cfg.dropout = meta->value("dropout", 0.1);
  } else {
    // No manifest config: infer depth from the array names.
    int layers = 0;
    while (archive.find(prefix + "layer." + std::to_string(layers) + ".ffn.in.weight") != nullptr) ++layers;
    cfg.layers = layers;
    cfg.heads = 1;
    const auto ffn_in = archive.find(prefix + "layer.0.ffn.in.weight");
    cfg.ffn = ffn_in ? static_cast<int>(ffn_in->value.cols()) : 4 * cfg.hidden;
    const auto types = archive.find(prefix + "embeddings.token_type");
    cfg.type_vocab = types ? static_cast<int>(types->value.rows()) : 2;
  }
  cfg.match_features = archive.find(prefix + "embeddings.match") != nullptr;
  cfg.validate();

  EncoderParams p;
  p.config = cfg;
  // Shapes come from the config; values from the archive.
  std::mt19937_64 scratch(0);
  p.store.add("embeddings.word", Mat::Zero(cfg.vocab_size, cfg.hidden));
  p.store.add("embeddings.position", Mat::Zero(cfg.max_positions, cfg.hidden));
  p.store.add("embeddings.token_type", Mat::Zero(cfg.type_vocab, cfg.hidden));
  if (cfg.match_features) p.store.add("embeddings.match", Mat::Zero(2, cfg.hidden));
  p.store.add("embeddings.norm.gamma", Mat::Zero(1, cfg.hidden));
  p.store.add("embeddings.norm.beta", Mat::Zero(1, cfg.hidden));
  for (int l = 0; l < cfg.layers; ++l) {
    add_transformer_layer(p.store, "layer." + std::to_string(l) + ".", cfg.hidden, cfg.ffn, 0.0, scratch);
  }
  load_from_archive(p.store, archive, prefix);
  return p;
}

void export_parameters(const EncoderParams& params, const std::filesystem::path& path) {
  Archive archive;
  append_encoder(archive, params);
  write_archive(path, archive);
}

EncoderParams import_parameters(const std::filesystem::path& path) { return encoder_from_archive(read_archive(path)); }

}  // namespace mgnli
