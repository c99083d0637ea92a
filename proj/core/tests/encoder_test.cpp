#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "mgnli/encoder.hpp"
#include "mgnli/error.hpp"
#include "mgnli/optim.hpp"
#include "support/test_support.hpp"

using namespace mgnli;
using mgnli::testing::check_gradients;
using mgnli::testing::random_matrix;
using mgnli::testing::TempDir;

namespace {

// Projects an op's output onto fixed random weights so every output entry
// contributes to the scalar being differentiated.
ag::Var project(const ag::Var& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ag::sum(ag::mul(y, ag::constant(random_matrix(y->rows(), y->cols(), rng))));
}

void expect_op_gradient(const std::string& what, ParameterStore& store, const std::function<ag::Var()>& op) {
  const auto report = check_gradients({&store}, [&] { return project(op(), 17); });
  INFO(what << " worst " << report.worst_name);
  CHECK(report.checked > 0);
  CHECK(report.worst_relative < 1e-6);
  CHECK(report.worst_absolute < 1e-8);
}

EncoderConfig small_config(int vocab) {
  EncoderConfig c;
  c.layers = 2;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 16;
  c.vocab_size = vocab;
  c.max_positions = 32;
  c.dropout = 0.0;
  return c;
}

TokenSequence sequence(int n, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(4, vocab - 1);
  TokenSequence s;
  for (int i = 0; i < n; ++i) {
    s.token_ids.push_back(i == 0 ? Tokenizer::kCls : pick(rng));
    s.segment_ids.push_back(i < n / 2 ? 0 : 1);
    s.match_ids.push_back(i % 3 == 1 ? 1 : 0);
  }
  return s;
}

}  // namespace

TEST_CASE("autograd elementwise and linear ops match finite differences") {
  std::mt19937_64 rng(1);
  ParameterStore s;
  auto& a = s.add("a", random_matrix(3, 4, rng));
  auto& b = s.add("b", random_matrix(3, 4, rng));
  auto& w = s.add("w", random_matrix(4, 5, rng));
  auto& bias = s.add("bias", random_matrix(1, 4, rng));

  expect_op_gradient("matmul", s, [&] { return ag::matmul(a, w); });
  expect_op_gradient("matmul_nt", s, [&] { return ag::matmul_nt(a, b); });
  expect_op_gradient("transpose", s, [&] { return ag::transpose(a); });
  expect_op_gradient("add/sub", s, [&] { return ag::sub(ag::add(a, b), ag::scale(b, 3.0)); });
  expect_op_gradient("add_bias", s, [&] { return ag::add_bias(a, bias); });
  expect_op_gradient("mul", s, [&] { return ag::mul(a, b); });
  expect_op_gradient("one_minus", s, [&] { return ag::one_minus(a); });
  expect_op_gradient("gelu", s, [&] { return ag::gelu(a); });
  expect_op_gradient("tanh", s, [&] { return ag::tanh(a); });
  expect_op_gradient("sigmoid", s, [&] { return ag::sigmoid(a); });
  expect_op_gradient("log_clamped", s, [&] { return ag::log_clamped(ag::sigmoid(a), 1e-12, 1.0); });
}

TEST_CASE("autograd reductions and normalizations match finite differences") {
  std::mt19937_64 rng(2);
  ParameterStore s;
  auto& a = s.add("a", random_matrix(4, 6, rng));
  auto& gamma = s.add("gamma", random_matrix(1, 6, rng));
  auto& beta = s.add("beta", random_matrix(1, 6, rng));

  expect_op_gradient("softmax_rows", s, [&] { return ag::softmax_rows(a); });
  expect_op_gradient("layer_norm", s, [&] { return ag::layer_norm(a, gamma, beta, 1e-12); });
  expect_op_gradient("normalize_rows", s, [&] { return ag::normalize_rows(a); });
  expect_op_gradient("max_rows", s, [&] { return ag::max_rows(a); });
  expect_op_gradient("mean_rows", s, [&] { return ag::mean_rows(a); });
  expect_op_gradient("mean", s, [&] { return ag::mean(a); });
}

TEST_CASE("autograd structural ops match finite differences") {
  std::mt19937_64 rng(3);
  ParameterStore s;
  auto& table = s.add("table", random_matrix(5, 3, rng));
  auto& a = s.add("a", random_matrix(2, 3, rng));
  auto& row = s.add("row", random_matrix(1, 3, rng));
  const std::vector<int> ids{4, 0, 4, 2};

  expect_op_gradient("gather_rows", s, [&] { return ag::gather_rows(table, ids); });
  expect_op_gradient("concat_rows", s, [&] {
    const std::vector<ag::Var> parts{a, table};
    return ag::concat_rows(parts);
  });
  expect_op_gradient("concat_cols", s, [&] {
    const std::vector<ag::Var> parts{a, ag::slice_rows(table, 1, 2)};
    return ag::concat_cols(parts);
  });
  expect_op_gradient("slice_cols", s, [&] { return ag::slice_cols(table, 1, 2); });
  expect_op_gradient("broadcast_rows", s, [&] { return ag::broadcast_rows(row, 4); });
}

TEST_CASE("autograd fused layers match finite differences") {
  std::mt19937_64 rng(4);
  ParameterStore s;
  auto& x = s.add("x", random_matrix(5, 3, rng, 0.5));
  auto& wih = s.add("wih", random_matrix(3, 8, rng, 0.5));
  auto& whh = s.add("whh", random_matrix(2, 8, rng, 0.5));
  auto& b = s.add("b", random_matrix(1, 8, rng, 0.5));
  expect_op_gradient("lstm forward", s, [&] { return ag::lstm(x, wih, whh, b, false); });
  expect_op_gradient("lstm reverse", s, [&] { return ag::lstm(x, wih, whh, b, true); });

  ParameterStore t;
  auto& logits = t.add("logits", random_matrix(4, 3, rng));
  const std::vector<int> targets{0, 2, 1, 2};
  const auto ce = check_gradients({&t}, [&] { return ag::cross_entropy_rows(logits, targets); });
  CHECK(ce.worst_relative < 1e-6);

  ParameterStore u;
  auto& z = u.add("z", random_matrix(4, 5, rng));
  const std::vector<int> labels{1, 0, 1, 0};
  const auto scl = check_gradients({&u}, [&] {
    const auto n = ag::normalize_rows(z);
    return ag::supervised_contrastive(ag::scale(ag::matmul_nt(n, n), 1.0 / 0.3), labels);
  });
  CHECK(scl.worst_relative < 1e-6);
}

TEST_CASE("cross entropy and softmax agree with closed forms") {
  const Mat logits = (Mat(1, 2) << 0.0, std::log(3.0)).finished();
  const auto p = ag::softmax_rows(ag::constant(logits));
  CHECK(p->value(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p->value(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
  const std::vector<int> target{1};
  CHECK(ag::cross_entropy_rows(ag::constant(logits), target)->value(0, 0) ==
        doctest::Approx(-std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("gradients accumulate until zero_grad and NoGradGuard builds no graph") {
  auto p = ag::parameter((Mat(1, 1) << 2.0).finished());
  ag::backward(ag::sum(ag::mul(p, p)));
  ag::backward(ag::sum(ag::mul(p, p)));
  CHECK(p->grad(0, 0) == doctest::Approx(8.0));
  p->zero_grad();
  CHECK_FALSE(p->has_grad());
  {
    ag::NoGradGuard guard;
    CHECK_FALSE(ag::grad_enabled());
    const auto y = ag::mul(p, p);
    CHECK(y->inputs.empty());
    CHECK_FALSE(y->requires_grad);
  }
  CHECK(ag::grad_enabled());
}

TEST_CASE("dropout is the identity at p = 0 and rescales kept entries") {
  std::mt19937_64 rng(5);
  const Mat x = Mat::Ones(20, 20);
  CHECK(ag::dropout(ag::constant(x), 0.0, rng)->value == x);
  const Mat y = ag::dropout(ag::constant(x), 0.5, rng)->value;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y.data()[i];
    CHECK((v == 0.0 || v == doctest::Approx(2.0)));
  }
}

TEST_CASE("archive round trip preserves names, shapes, values and meta") {
  TempDir dir;
  std::mt19937_64 rng(6);
  Archive a;
  a.arrays.push_back({"w", random_matrix(3, 2, rng)});
  a.arrays.push_back({"b", random_matrix(1, 7, rng)});
  a.meta["note"] = "x";
  write_archive(dir / "a.bin", a);
  const Archive back = read_archive(dir / "a.bin");
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.find("w")->value == a.arrays[0].value);
  CHECK(back.find("b")->value == a.arrays[1].value);
  CHECK(back.find("missing") == nullptr);
  CHECK(back.meta["note"] == "x");

  std::ofstream(dir / "junk.bin") << "not an archive";
  CHECK_THROWS_AS(read_archive(dir / "junk.bin"), ImportError);
}

TEST_CASE("encoder import reports the missing array by name") {
  TempDir dir;
  const auto params = EncoderParams::init(small_config(20), 1);
  Archive a;
  append_encoder(a, params);
  std::erase_if(a.arrays, [](const NamedArray& x) { return x.name == "encoder.layer.1.ffn.in.weight"; });
  write_archive(dir / "enc.bin", a);
  try {
    (void)import_parameters(dir / "enc.bin");
    FAIL("expected ImportError");
  } catch (const ImportError& e) {
    CHECK(std::string(e.what()).find("layer.1.ffn.in.weight") != std::string::npos);
  }
}

TEST_CASE("encoder export/import round trip reproduces the forward pass") {
  TempDir dir;
  auto cfg = small_config(20);
  cfg.match_features = true;
  const auto params = EncoderParams::init(cfg, 2);
  export_parameters(params, dir / "enc.bin");
  const auto back = import_parameters(dir / "enc.bin");
  CHECK(back.config.layers == cfg.layers);
  CHECK(back.config.match_features);
  const auto seq = sequence(9, 20, 3);
  CHECK(embed_and_encode(seq, back) == embed_and_encode(seq, params));
}

TEST_CASE("encoder output has one d-dimensional row per token and is deterministic in eval mode") {
  const auto params = EncoderParams::init(small_config(30), 7);
  for (int n : {1, 5, 17}) {
    const auto seq = sequence(n, 30, static_cast<std::uint64_t>(n));
    const Mat h = embed_and_encode(seq, params);
    CHECK(h.rows() == n);
    CHECK(h.cols() == 8);
    CHECK(h.allFinite());
    CHECK(embed_and_encode(seq, params) == h);
  }
  CHECK(EncoderParams::init(small_config(30), 7).store.get("layer.0.ffn.in.weight")->value ==
        params.store.get("layer.0.ffn.in.weight")->value);
}

TEST_CASE("a block with zero attention and feed-forward outputs returns its normalized input") {
  auto cfg = small_config(25);
  cfg.layers = 1;
  auto params = EncoderParams::init(cfg, 8);
  for (const char* name : {"layer.0.attention.value.weight", "layer.0.attention.output.weight",
                           "layer.0.ffn.out.weight"}) {
    params.store.get(name)->value.setZero();
  }
  const auto seq = sequence(11, 25, 9);
  const Mat h0 = embed(seq, params, {})->value;
  const Mat h = embed_and_encode(seq, params);
  CHECK((h - h0).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("encoder gradients match finite differences") {
  auto cfg = small_config(12);
  cfg.layers = 1;
  cfg.max_positions = 8;
  cfg.match_features = true;
  auto params = EncoderParams::init(cfg, 10);
  for (const auto& [name, v] : params.store.items()) {
    if (name.find("norm") == std::string::npos) {
      std::mt19937_64 rng(std::hash<std::string>{}(name));
      v->value = random_matrix(v->rows(), v->cols(), rng, 0.3);
    }
  }
  const auto seq = sequence(6, 12, 11);
  const auto report = check_gradients({&params.store}, [&] { return project(encode(seq, params, {}), 12); });
  INFO("worst " << report.worst_name);
  CHECK(report.worst_relative < 1e-5);
  CHECK(report.worst_absolute < 1e-8);
}

TEST_CASE("extend_positions keeps old rows bitwise and draws new rows deterministically") {
  auto cfg = small_config(20);
  cfg.max_positions = 512;
  const auto p512 = EncoderParams::init(cfg, 4);
  const auto p1024 = extend_positions(p512, 1024, 99);
  const auto p2048 = extend_positions(p1024, 2048, 100);
  const Mat& t512 = p512.store.get("embeddings.position")->value;
  const Mat& t1024 = p1024.store.get("embeddings.position")->value;
  const Mat& t2048 = p2048.store.get("embeddings.position")->value;
  CHECK(t1024.rows() == 1024);
  CHECK(t2048.rows() == 2048);
  CHECK(p2048.config.max_positions == 2048);
  CHECK(std::memcmp(t1024.data(), t512.data(), sizeof(double) * static_cast<std::size_t>(t512.size())) == 0);
  CHECK(std::memcmp(t2048.data(), t1024.data(), sizeof(double) * static_cast<std::size_t>(t1024.size())) == 0);
  CHECK(extend_positions(p512, 1024, 99).store.get("embeddings.position")->value == t1024);
  CHECK(extend_positions(p512, 1024, 98).store.get("embeddings.position")->value.bottomRows(512) !=
        t1024.bottomRows(512));
  CHECK(t1024.bottomRows(512).cwiseAbs().maxCoeff() < 0.2);
  CHECK(p1024.store.get("layer.1.ffn.in.weight")->value == p512.store.get("layer.1.ffn.in.weight")->value);
  CHECK_THROWS_AS(extend_positions(p512, 512, 1), ArgumentError);

  // Sequences that fit the old table encode identically after extension.
  const auto seq = sequence(40, 20, 5);
  CHECK(embed_and_encode(seq, p2048) == embed_and_encode(seq, p512));
}

TEST_CASE("linear schedule warms up then decays to zero") {
  const LinearSchedule s{1.0, 4, 12};
  CHECK(s.at(0) == doctest::Approx(0.25));
  CHECK(s.at(3) == doctest::Approx(1.0));
  CHECK(s.at(4) == doctest::Approx(1.0));
  CHECK(s.at(8) == doctest::Approx(0.5));
  CHECK(s.at(12) == doctest::Approx(0.0));
  CHECK(s.at(20) == doctest::Approx(0.0));
  const LinearSchedule flat{2.0, 0, 10};
  CHECK(flat.at(0) == doctest::Approx(2.0));
}

TEST_CASE("Adam first step moves each coordinate by lr against the gradient sign") {
  ParameterStore s;
  auto& p = s.add("p", (Mat(1, 3) << 1.0, -2.0, 0.5).finished());
  ag::backward(ag::sum(ag::mul(p, ag::constant((Mat(1, 3) << 3.0, -0.01, 0.0).finished()))));
  Adam adam;
  adam.step(s, 0.1);
  CHECK(p->value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p->value(0, 1) == doctest::Approx(-1.9).epsilon(1e-5));
  CHECK(p->value(0, 2) == doctest::Approx(0.5));
}

TEST_CASE("Adafactor decreases a quadratic") {
  std::mt19937_64 rng(7);
  ParameterStore s;
  auto& p = s.add("p", random_matrix(3, 4, rng));
  Adafactor opt;
  auto loss = [&] { return ag::sum(ag::mul(p, p)); };
  const double start = loss()->value(0, 0);
  for (int i = 0; i < 50; ++i) {
    s.zero_grad();
    ag::backward(loss());
    opt.step(s, 0.05);
  }
  CHECK(loss()->value(0, 0) < 0.5 * start);
}

TEST_CASE("clip_grad_norm rescales to the bound and reports the prior norm") {
  ParameterStore s;
  auto& p = s.add("p", Mat::Zero(1, 2));
  p->accumulate((Mat(1, 2) << 3.0, 4.0).finished());
  std::vector<ParameterStore*> stores{&s};
  CHECK(clip_grad_norm(stores, 1.0) == doctest::Approx(5.0));
  CHECK(p->grad.norm() == doctest::Approx(1.0));
  CHECK(clip_grad_norm(stores, 10.0) == doctest::Approx(1.0));
  CHECK(p->grad.norm() == doctest::Approx(1.0));
}
