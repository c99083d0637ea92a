#include <doctest.h>

#include <cmath>
#include <random>

#include "mgnli/error.hpp"
#include "mgnli/generative.hpp"
#include "support/test_support.hpp"

using namespace mgnli;
using mgnli::testing::TempDir;
using mgnli::testing::tiny_dataset;

namespace {

PremiseView view_of(std::vector<std::string> sentences) {
  PremiseView v;
  v.sentences = std::move(sentences);
  v.origins.resize(v.sentences.size());
  return v;
}

class FailingScorer : public SequenceScorer {
 public:
  double score(std::string_view, std::string_view) const override { throw NumericError("scorer exploded"); }
};

Seq2SeqConfig tiny_seq2seq() {
  Seq2SeqConfig c;
  c.hidden = 16;
  c.ffn = 32;
  c.max_input = 96;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("format_input assembles the template") {
  CHECK(format_input("A", view_of({"B.", "C."})) == "nli hypothesis: A premise: B. C.");
  CHECK_THROWS_AS(format_input("  \t", view_of({"B."})), ArgumentError);
  CHECK_THROWS_AS(format_input("", view_of({"B."})), ArgumentError);
}

TEST_CASE("comparison inputs carry both trial markers") {
  const Dataset ds = tiny_dataset();
  const auto views = build_premise(ds.instances[2], ds.trials, Task::A);
  const std::string text = format_input(ds.instances[2].hypothesis, views.front());
  const auto primary = text.find(kPrimaryMarker);
  const auto secondary = text.find(kSecondaryMarker);
  REQUIRE(primary != std::string::npos);
  REQUIRE(secondary != std::string::npos);
  CHECK(primary < secondary);
  CHECK(text.find("Placebo tablet.") < secondary);
  CHECK(text.find("Saline infusion.") > secondary);
}

TEST_CASE("format_input is injective across hypotheses for a fixed premise") {
  const auto view = view_of({"X.", "Y."});
  CHECK(format_input("a b", view) != format_input("a  b", view));
  CHECK(format_input("a", view) != format_input("b", view));
}

TEST_CASE("label scores normalize into a two-way distribution") {
  const auto even = normalize_entailment({0.4, 0.4});
  CHECK(even.p[0] == 0.5);
  CHECK(even.p[1] == 0.5);
  const auto p = normalize_entailment({0.03, 0.01});
  CHECK(p.contradiction() == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p.entailment() == doctest::Approx(0.75).epsilon(1e-12));
  CHECK_THROWS_AS(normalize_entailment({0.0, 0.0}), UndefinedScoreError);
  CHECK_THROWS(normalize_entailment({-0.1, 0.5}));
}

TEST_CASE("normalization sums to one and ignores a common positive scale") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(1e-6, 1.0);
  std::uniform_real_distribution<double> logk(-6.0, 0.0);
  for (int i = 0; i < 500; ++i) {
    const LabelScores s{u(rng), u(rng)};
    const double k = std::pow(10.0, logk(rng));
    const auto a = normalize_entailment(s);
    const auto b = normalize_entailment({s.p_ent * k, s.p_con * k});
    CHECK(a.p[0] + a.p[1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(a.p[0] == doctest::Approx(b.p[0]).epsilon(1e-12));
    CHECK(a.p[1] == doctest::Approx(b.p[1]).epsilon(1e-12));
  }
}

TEST_CASE("score_instance renormalizes stub scores") {
  const Dataset ds = tiny_dataset();
  const StubScorer stub({{"entailment", 0.2}, {"contradiction", 0.6}});
  const auto p = score_instance(stub, ds.instances[0], ds.trials);
  CHECK(p.contradiction() == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(p.entailment() == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(score_instance(stub, ds.instances[0], ds.trials) == p);
}

TEST_CASE("scorer failures name the instance") {
  const Dataset ds = tiny_dataset();
  try {
    (void)score_instance(FailingScorer{}, ds.instances[1], ds.trials);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("u2") != std::string::npos);
  }
  const StubScorer zero({}, 0.0);
  CHECK_THROWS_AS(score_instance(zero, ds.instances[0], ds.trials), Error);
}

TEST_CASE("byte seq2seq scores are probabilities and deterministic") {
  const auto model = ByteSeq2Seq::init(tiny_seq2seq(), 2);
  const std::string input = "nli hypothesis: A premise: B.";
  const double pe = model.score(input, kEntailmentTarget);
  const double pc = model.score(input, kContradictionTarget);
  CHECK(pe > 0.0);
  CHECK(pe <= 1.0);
  CHECK(pc > 0.0);
  CHECK(model.score(input, kEntailmentTarget) == pe);
  const auto both = model.score_labels(input);
  CHECK(both.p_ent == doctest::Approx(pe).epsilon(1e-12));
  CHECK(both.p_con == doctest::Approx(pc).epsilon(1e-12));
  const double nll = model.target_nll(input, kEntailmentTarget, {})->value(0, 0);
  CHECK(std::exp(-nll) == doctest::Approx(pe).epsilon(1e-10));
}

TEST_CASE("byte seq2seq save/load and clone preserve scores") {
  TempDir dir;
  const auto model = ByteSeq2Seq::init(tiny_seq2seq(), 3);
  model.save(dir / "gen.bin");
  const auto back = ByteSeq2Seq::load(dir / "gen.bin");
  const std::string input = "nli hypothesis: rash premise: Rash in 2 patients.";
  CHECK(back.score(input, "entailment") == model.score(input, "entailment"));
  CHECK(back.config().hidden == 16);
  auto copy = model.clone();
  for (const auto& [name, v] : copy.decoder().items()) v->value.array() += 0.5;
  CHECK(model.score(input, "entailment") != copy.score(input, "entailment"));
}

TEST_CASE("a short training run lowers the loss and yields normalized outputs") {
  const Dataset ds = generate_synthetic(5, 12);
  auto model = ByteSeq2Seq::init(tiny_seq2seq(), 4);
  GenerativeTrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.batch_size = 4;
  cfg.epochs = 4;
  cfg.warmup_steps = 2;
  cfg.seed = 1;
  int calls = 0;
  const auto losses = train_generative(model, ds.instances, ds.trials, cfg, [&](int, double) { ++calls; });
  REQUIRE(losses.size() == 4);
  CHECK(calls == 4);
  CHECK(losses.back() < losses.front());
  for (const auto& inst : ds.instances) {
    const auto p = score_instance(model, inst, ds.trials);
    CHECK(p.p[0] + p.p[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.p[0] >= 0.0);
    CHECK(p.p[1] >= 0.0);
  }
}

TEST_CASE("scorer registry builds built-ins and accepts new factories") {
  const auto names = registered_scorers();
  CHECK(std::find(names.begin(), names.end(), "stub") != names.end());
  CHECK(std::find(names.begin(), names.end(), "byte-seq2seq") != names.end());
  const auto stub = make_scorer("stub", {{"entailment", 0.3}, {"contradiction", 0.1}});
  CHECK(normalize_entailment(stub->score_labels("x")).entailment() == doctest::Approx(0.75));
  CHECK_THROWS(make_scorer("no-such-scorer"));

  register_scorer("constant-half", [](const nlohmann::json&) {
    return std::make_unique<StubScorer>(std::map<std::string, double, std::less<>>{}, 0.5);
  });
  CHECK(make_scorer("constant-half")->score("x", "anything") == 0.5);

  TempDir dir;
  ByteSeq2Seq::init(tiny_seq2seq(), 5).save(dir / "g.bin");
  const auto loaded = make_scorer("byte-seq2seq", {{"path", (dir / "g.bin").string()}});
  CHECK(loaded->score("x", "entailment") > 0.0);
}
