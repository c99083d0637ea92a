#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "mgnli/consistency.hpp"
#include "mgnli/ensemble.hpp"
#include "mgnli/training.hpp"

namespace {

using namespace mgnli;

struct Fixture {
  Dataset data = generate_synthetic(7, 40);
  Tokenizer tok = build_tokenizer(data);
  TrainConfig cfg;
  ModelSpec spec = find_model_spec("M-512-Bi-Bi-mul");
  MGNetModel model = init_mgnet_model(spec, tok.vocab_size(), cfg, 1);
  TokenSequence seq;

  Fixture() {
    const auto views = build_premise(data.instances.front(), data.trials, Task::A);
    seq = encode_pair(data.instances.front().hypothesis, views.front(), tok, 512);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_TokenizerEncode(benchmark::State& state) {
  const auto& f = fixture();
  const auto& text = f.data.trials.begin()->second.sections.begin()->second.front();
  for (auto _ : state) benchmark::DoNotOptimize(f.tok.encode(text));
}
BENCHMARK(BM_TokenizerEncode);

void BM_EncodePair(benchmark::State& state) {
  const auto& f = fixture();
  const auto& inst = f.data.instances.front();
  const auto views = build_premise(inst, f.data.trials, Task::A);
  for (auto _ : state) benchmark::DoNotOptimize(encode_pair(inst.hypothesis, views.front(), f.tok, 512));
}
BENCHMARK(BM_EncodePair);

void BM_MGNetForward(benchmark::State& state) {
  const auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(mgnet_forward(f.seq, f.model.encoder, f.model.mgnet));
  state.SetLabel(std::to_string(f.seq.n()) + " tokens");
}
BENCHMARK(BM_MGNetForward);

void BM_LstmForwardBackward(benchmark::State& state) {
  const auto n = state.range(0);
  constexpr int d = 32;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 0.1);
  auto rnd = [&](Eigen::Index r, Eigen::Index c) { return Mat(Mat::NullaryExpr(r, c, [&] { return nd(rng); })); };
  const auto w_ih = ag::parameter(rnd(d, 4 * d));
  const auto w_hh = ag::parameter(rnd(d, 4 * d));
  const auto b = ag::parameter(rnd(1, 4 * d));
  const auto x = ag::parameter(rnd(n, d));
  for (auto _ : state) {
    const auto h = ag::lstm(x, w_ih, w_hh, b, false);
    ag::backward(ag::sum(h));
  }
}
BENCHMARK(BM_LstmForwardBackward)->Arg(16)->Arg(128);

void BM_Rectify(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<EntailmentProbabilities> p;
  for (int i = 0; i < n; ++i) {
    const double e = u(rng);
    p.push_back(EntailmentProbabilities{{1.0 - e, e}});
  }
  const AgreementMatrix m = build_agreement_matrix(n, [&](int i, int j) { return (i + j) % 2 == 0 ? 0.9 : 0.1; });
  for (auto _ : state) benchmark::DoNotOptimize(rectify(p, m));
}
BENCHMARK(BM_Rectify)->Arg(2)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
