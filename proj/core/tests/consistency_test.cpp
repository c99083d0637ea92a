#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "mgnli/consistency.hpp"
#include "mgnli/error.hpp"
#include "support/test_support.hpp"

using namespace mgnli;
using mgnli::testing::TempDir;
using mgnli::testing::tiny_dataset;

namespace {

EntailmentProbabilities entail(double p) { return {{1.0 - p, p}}; }

// Term-by-term evaluation of the rectification average.
std::vector<EntailmentProbabilities> rectify_oracle(const std::vector<EntailmentProbabilities>& p,
                                                    const Eigen::MatrixXi& I) {
  const auto n = p.size();
  std::vector<EntailmentProbabilities> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const int a = I(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        acc += a * p[j].p[static_cast<std::size_t>(c)] + (1 - a) * (1.0 - p[j].p[static_cast<std::size_t>(c)]);
      }
      out[i].p[static_cast<std::size_t>(c)] = acc / static_cast<double>(n);
    }
  }
  return out;
}

AgreementMatrix random_agreement(int n, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  AgreementMatrix a;
  a.I = Eigen::MatrixXi::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) a.I(i, j) = a.I(j, i) = coin(rng);
  }
  return a;
}

Instance hypothesis(const std::string& uuid, const std::string& text, Label label, const std::string& trial,
                    Section section = Section::Results) {
  Instance inst;
  inst.uuid = uuid;
  inst.hypothesis = text;
  inst.primary_trial_id = trial;
  inst.section = section;
  inst.label = label;
  inst.primary_evidence = std::vector<int>{0};
  return inst;
}

EncoderConfig tiny_encoder(int vocab) {
  EncoderConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 16;
  c.vocab_size = vocab;
  c.max_positions = 96;
  c.dropout = 0.0;
  return c;
}

}  // namespace

TEST_CASE("agreement matrix thresholds the symmetrized same-label score") {
  const auto one = build_agreement_matrix(1, [](int, int) -> double { throw std::logic_error("never called"); });
  CHECK(one.n() == 1);
  CHECK(one.I(0, 0) == 1);

  const auto low = build_agreement_matrix(2, [](int, int) { return 0.3; });
  CHECK(low.I == Eigen::Matrix2i::Identity());

  const auto split = build_agreement_matrix(2, [](int i, int) { return i == 0 ? 0.9 : 0.2; });
  CHECK(split.I(0, 1) == 1);
  CHECK(split.I(1, 0) == 1);
  const auto at_cut = build_agreement_matrix(2, [](int, int) { return 0.5; });
  CHECK(at_cut.I(0, 1) == 0);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd c(6, 6);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = u(rng);
  const auto m = build_agreement_matrix(6, [&](int i, int j) { return c(i, j); });
  for (int i = 0; i < 6; ++i) {
    CHECK(m.I(i, i) == 1);
    for (int j = 0; j < 6; ++j) {
      CHECK(m.I(i, j) == m.I(j, i));
      if (i != j) CHECK(m.I(i, j) == ((c(i, j) + c(j, i)) / 2.0 > 0.5 ? 1 : 0));
    }
  }
}

TEST_CASE("rectify worked examples") {
  AgreementMatrix single;
  single.I = Eigen::MatrixXi::Identity(1, 1);
  const auto same = rectify({entail(0.8)}, single);
  CHECK(same[0].p[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(same[0].p[1] == doctest::Approx(0.8).epsilon(1e-15));

  AgreementMatrix apart;
  apart.I = Eigen::MatrixXi::Identity(2, 2);
  const auto r = rectify({entail(0.8), entail(0.7)}, apart);
  CHECK(r[0].p[0] == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(r[0].p[1] == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(r[1].p[0] == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(r[1].p[1] == doctest::Approx(0.45).epsilon(1e-12));

  AgreementMatrix together;
  together.I = Eigen::MatrixXi::Ones(3, 3);
  const auto t = rectify({entail(0.6), entail(0.6), entail(0.6)}, together);
  for (const auto& p : t) CHECK(p.p[1] == doctest::Approx(0.6).epsilon(1e-12));

  CHECK_THROWS_AS(rectify({entail(0.5)}, apart), ArgumentError);
}

TEST_CASE("rectify matches term-by-term evaluation and stays normalized") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> size(1, 6);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = size(rng);
    const auto a = random_agreement(n, rng);
    std::vector<EntailmentProbabilities> p;
    for (int i = 0; i < n; ++i) p.push_back(entail(u(rng)));
    const auto got = rectify(p, a);
    const auto want = rectify_oracle(p, a.I);
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      CHECK(got[k].p[0] + got[k].p[1] == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(got[k].p[0] == doctest::Approx(want[k].p[0]).epsilon(1e-12));
      CHECK(got[k].p[1] == doctest::Approx(want[k].p[1]).epsilon(1e-12));
    }
  }
}

TEST_CASE("rectify is equivariant under relabeling group members") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4;
    const auto a = random_agreement(n, rng);
    std::vector<EntailmentProbabilities> p;
    for (int i = 0; i < n; ++i) p.push_back(entail(u(rng)));
    std::vector<int> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    AgreementMatrix b;
    b.I.resize(n, n);
    std::vector<EntailmentProbabilities> q(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      q[static_cast<std::size_t>(i)] = p[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
      for (int j = 0; j < n; ++j) b.I(i, j) = a.I(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    const auto rp = rectify(p, a);
    const auto rq = rectify(q, b);
    for (int i = 0; i < n; ++i) {
      CHECK(rq[static_cast<std::size_t>(i)].p[1] ==
            doctest::Approx(rp[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].p[1]).epsilon(1e-12));
    }
  }
}

TEST_CASE("rectified exclusive pairs put exactly one side above one half") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AgreementMatrix apart;
  apart.I = Eigen::MatrixXi::Identity(2, 2);
  for (int trial = 0; trial < 500; ++trial) {
    const double a = u(rng);
    const double b = u(rng);
    if (a == b) continue;
    const auto r = rectify({entail(a), entail(b)}, apart);
    CHECK((r[0].p[1] > 0.5) == (a > b));
    CHECK((r[1].p[1] > 0.5) == (b > a));
  }
}

TEST_CASE("hypotheses group by trial pair and section in first-appearance order") {
  const std::vector<Instance> insts{
      hypothesis("a", "x", Label::Entailment, "T1"),
      hypothesis("b", "y", Label::Contradiction, "T2"),
      hypothesis("c", "z", Label::Contradiction, "T1"),
      hypothesis("d", "w", Label::Entailment, "T1", Section::Eligibility),
  };
  const auto groups = group_hypotheses(insts);
  REQUIRE(groups.size() == 3);
  CHECK(groups[0].uuids == std::vector<std::string>{"a", "c"});
  CHECK(groups[1].uuids == std::vector<std::string>{"b"});
  CHECK(groups[2].uuids == std::vector<std::string>{"d"});
}

TEST_CASE("pair generation emits four sequences per contradicting pair") {
  const std::vector<Instance> insts{
      hypothesis("a", "Rate was 10%.", Label::Entailment, "T1"),
      hypothesis("b", "Rate was 20%.", Label::Contradiction, "T1"),
      hypothesis("c", "Only adults.", Label::Entailment, "T2"),
  };
  const auto gen = generate_pair_training_data(insts, RuleParaphraser{});
  CHECK(gen.contradicting_pairs == 1);
  REQUIRE(gen.pairs.size() == 4);
  CHECK(gen.pairs[0].first == "Rate was 10%.");
  CHECK(gen.pairs[0].label == PairLabel::Same);
  CHECK(gen.pairs[0].second != gen.pairs[0].first);
  CHECK(gen.pairs[1].first == "Rate was 20%.");
  CHECK(gen.pairs[1].label == PairLabel::Same);
  CHECK(gen.pairs[2].first == "Rate was 10%.");
  CHECK(gen.pairs[2].second == "Rate was 20%.");
  CHECK(gen.pairs[2].label == PairLabel::Different);
  CHECK(gen.pairs[3].first == "Rate was 20%.");
  CHECK(gen.pairs[3].second == "Rate was 10%.");
  CHECK(gen.pairs[3].label == PairLabel::Different);

  const auto literal = generate_pair_training_data(insts, IdentityParaphraser{});
  REQUIRE(literal.pairs.size() == 4);
  CHECK(literal.pairs[0].first == literal.pairs[0].second);
  CHECK(literal.pairs[1].first == literal.pairs[1].second);
}

TEST_CASE("paraphrase failures are skipped and counted") {
  class Refuser : public Paraphraser {
   public:
    std::optional<std::string> paraphrase(std::string_view s) const override {
      if (s.find("20") != std::string_view::npos) return std::nullopt;
      return std::string(s);
    }
  };
  const std::vector<Instance> insts{
      hypothesis("a", "Rate was 10%.", Label::Entailment, "T1"),
      hypothesis("b", "Rate was 20%.", Label::Contradiction, "T1"),
      hypothesis("c", "Drug was oral.", Label::Entailment, "T2"),
      hypothesis("d", "Drug was topical.", Label::Contradiction, "T2"),
  };
  const auto gen = generate_pair_training_data(insts, Refuser{});
  CHECK(gen.skipped == 1);
  CHECK(gen.pairs.size() == 4);
  CHECK_FALSE(gen.warnings.empty());
}

TEST_CASE("synthetic pairs yield a two-to-two label split per contradicting pair") {
  const Dataset ds = generate_synthetic(21, 100, {0.0, 0.0, 0, "SYN"});
  const auto gen = generate_pair_training_data(ds.instances, RuleParaphraser{});
  CHECK(gen.contradicting_pairs == 50);
  REQUIRE(gen.pairs.size() == 200);
  for (std::size_t k = 0; k < gen.pairs.size(); k += 4) {
    int same = 0;
    for (std::size_t i = k; i < k + 4; ++i) same += gen.pairs[i].label == PairLabel::Same;
    CHECK(same == 2);
  }
}

TEST_CASE("pair datasets serialize and parse back") {
  TempDir dir;
  const Dataset ds = tiny_dataset();
  PairDataset pd;
  pd.trials = ds.trials;
  pd.pairs.push_back({"A", "B", {"NCT001", std::nullopt, Section::Results}, PairLabel::Different});
  pd.pairs.push_back({"C", "C'", {"NCT001", std::string("NCT002"), Section::Intervention}, PairLabel::Same});
  save_pairs(dir / "pairs.json", pd);
  const auto back = load_pairs(dir / "pairs.json");
  CHECK(back.pairs == pd.pairs);
  CHECK(back.trials.size() == 2);
  const auto text = serialize_pairs(pd);
  CHECK(text.find("\"different\"") != std::string::npos);
  CHECK(parse_pairs(text).pairs == pd.pairs);
  CHECK_THROWS(parse_pairs("{\"pairs\": [{\"first\": \"A\"}]}"));
}

TEST_CASE("pair scores are normalized and the network trains") {
  const Dataset ds = tiny_dataset();
  std::vector<std::string> texts;
  for (const auto& [id, trial] : ds.trials) {
    for (const auto& [s, sentences] : trial.sections) texts.insert(texts.end(), sentences.begin(), sentences.end());
  }
  std::vector<PairExample> pairs{
      {"Cohort 1 had 40 patients.", "Cohort 1 had 40 patients.", {"NCT001", std::nullopt, Section::Results},
       PairLabel::Same},
      {"Nausea in 3 patients.", "Placebo tablet.", {"NCT001", std::nullopt, Section::Results},
       PairLabel::Different},
  };
  for (const auto& p : pairs) texts.push_back(p.second);
  const Tokenizer tok = Tokenizer::build(texts);
  auto enc_cfg = tiny_encoder(tok.vocab_size());
  enc_cfg.hidden = 16;
  enc_cfg.ffn = 32;
  auto net = PairNet::init(enc_cfg, 5);
  const auto premise = group_premise(pairs[0].key, ds.trials);
  const auto c = score_pair(pairs[1].first, pairs[1].second, premise, tok, net, 96);
  CHECK(c.same + c.different == doctest::Approx(1.0).epsilon(1e-9));

  PairTrainConfig cfg;
  cfg.encoder_lr = 1e-2;
  cfg.head_lr = 1e-2;
  cfg.batch_size = 2;
  cfg.epochs = 30;
  cfg.warmup_fraction = 0.0;
  cfg.max_len = 96;
  const auto losses = train_pairnet(net, pairs, ds.trials, tok, cfg);
  REQUIRE(losses.size() == 30);
  CHECK(losses.back() < losses.front());
  CHECK(score_pair(pairs[0].first, pairs[0].second, premise, tok, net, 96).same > 0.5);
  CHECK(score_pair(pairs[1].first, pairs[1].second, premise, tok, net, 96).same < 0.5);

  Archive a;
  append_pairnet(a, net);
  const auto back = pairnet_from_archive(a);
  CHECK(score_pair(pairs[1].first, pairs[1].second, premise, tok, back, 96).same ==
        score_pair(pairs[1].first, pairs[1].second, premise, tok, net, 96).same);
}
