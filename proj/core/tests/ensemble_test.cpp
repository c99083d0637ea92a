#include <doctest.h>

#include <algorithm>
#include <random>

#include "mgnli/ensemble.hpp"
#include "mgnli/error.hpp"
#include "mgnli/training.hpp"
#include "support/test_support.hpp"

using namespace mgnli;
using mgnli::testing::TempDir;
using mgnli::testing::tiny_dataset;

namespace {

EntailmentProbabilities entail(double p) { return {{1.0 - p, p}}; }

PredictionSet taskA_set(std::map<std::string, double> p) {
  PredictionSet s;
  for (const auto& [k, v] : p) s.task_a[k] = entail(v);
  return s;
}

EvidencePrediction evidence(std::vector<double> scores) {
  EvidencePrediction e;
  e.scored.assign(scores.size(), true);
  e.scores = std::move(scores);
  return e;
}

// Predictions for tiny_dataset() with a given Task A entailment probability
// and evidence scores.
PredictionSet tiny_predictions(double pa, double pb) {
  const Dataset ds = tiny_dataset();
  PredictionSet s;
  for (const auto& inst : ds.instances) {
    s.task_a[inst.uuid] = entail(pa);
    const auto views = build_premise(inst, ds.trials, Task::B);
    InstanceEvidence ie;
    ie.primary = evidence(std::vector<double>(views[0].m(), pb));
    if (views.size() > 1) ie.secondary = evidence(std::vector<double>(views[1].m(), pb));
    s.task_b[inst.uuid] = ie;
  }
  return s;
}

TrainConfig toy_config() {
  TrainConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.dropout = 0.0;
  cfg.match_features = true;
  cfg.encoder_lr = 1e-3;
  cfg.head_lr = 1e-3;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.warmup_fraction = 0.1;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("soft ensemble averages per key") {
  const std::vector<PredictionSet> two{taskA_set({{"a", 0.8}}), taskA_set({{"a", 0.6}})};
  const auto e = soft_ensemble(two);
  CHECK(e.task_a_contributors == 2);
  CHECK(e.mean.task_a.at("a").p[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(e.mean.task_a.at("a").p[1] == doctest::Approx(0.7).epsilon(1e-12));

  const auto same = tiny_predictions(0.37, 0.61);
  const std::vector<PredictionSet> copies(5, same);
  const auto e2 = soft_ensemble(copies);
  for (const auto& [k, p] : same.task_a) CHECK(e2.mean.task_a.at(k).p[1] == doctest::Approx(p.p[1]).epsilon(1e-15));
  for (const auto& [k, ev] : same.task_b) CHECK(e2.mean.task_b.at(k).primary.scores == ev.primary.scores);
}

TEST_CASE("soft ensemble stays within contributor bounds and ignores order") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<PredictionSet> sets;
    for (int m = 0; m < 4; ++m) sets.push_back(tiny_predictions(u(rng), u(rng)));
    const auto e = soft_ensemble(sets);
    auto reversed = sets;
    std::reverse(reversed.begin(), reversed.end());
    const auto r = soft_ensemble(reversed);
    for (const auto& [k, p] : e.mean.task_a) {
      double lo = 1.0;
      double hi = 0.0;
      for (const auto& s : sets) {
        lo = std::min(lo, s.task_a.at(k).p[1]);
        hi = std::max(hi, s.task_a.at(k).p[1]);
      }
      CHECK(p.p[1] >= lo - 1e-15);
      CHECK(p.p[1] <= hi + 1e-15);
      CHECK(p.p[0] + p.p[1] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(r.mean.task_a.at(k).p[1] == doctest::Approx(p.p[1]).epsilon(1e-12));
    }
  }
}

TEST_CASE("soft ensemble reports the misaligned key") {
  const std::vector<PredictionSet> sets{taskA_set({{"a", 0.5}, {"b", 0.5}}), taskA_set({{"a", 0.5}, {"c", 0.5}})};
  try {
    (void)soft_ensemble(sets);
    FAIL("expected AlignmentError");
  } catch (const AlignmentError& e) {
    const std::string what = e.what();
    CHECK((what.find("key b ") != std::string::npos || what.find("key c ") != std::string::npos));
  }
  CHECK_THROWS_AS(soft_ensemble(std::vector<PredictionSet>{}), Error);
}

TEST_CASE("task-specific sets contribute only to their task") {
  PredictionSet a_only = taskA_set({{"u1", 0.9}});
  PredictionSet b_only;
  b_only.task_b["u1"].primary = evidence({0.2, 0.8});
  const std::vector<PredictionSet> sets{a_only, b_only};
  const auto e = soft_ensemble(sets);
  CHECK(e.task_a_contributors == 1);
  CHECK(e.task_b_contributors == 1);
  CHECK(e.mean.task_a.at("u1").p[1] == doctest::Approx(0.9));
  CHECK(e.mean.task_b.at("u1").primary.scores == std::vector<double>{0.2, 0.8});
}

TEST_CASE("Task A decisions use a strict threshold") {
  CHECK(decide_entailment(entail(0.57), 0.57) == Label::Contradiction);
  CHECK(decide_entailment(entail(0.5700001), 0.57) == Label::Entailment);
  CHECK(decide_entailment(entail(1.0), 0.57) == Label::Entailment);
  CHECK(decide_entailment(entail(1e-9), 0.0) == Label::Entailment);
  const DecisionThresholds t;
  CHECK(t.eta_a == 0.57);
  CHECK(t.eta_b == 0.53);
  const auto d = decide_taskA({{"x", entail(0.6)}, {"y", entail(0.2)}}, t);
  CHECK(d.at("x") == Label::Entailment);
  CHECK(d.at("y") == Label::Contradiction);
}

TEST_CASE("Task B decisions select strictly above the threshold among scored sentences") {
  CHECK(select_evidence(evidence({0.54, 0.53, 0.1}), 0.53) == std::vector<int>{0});
  CHECK(select_evidence(evidence({0.0, 0.0}), 0.53).empty());
  CHECK(select_evidence(evidence({1.0, 1.0, 1.0}), 0.53) == std::vector<int>{0, 1, 2});
  auto masked = evidence({0.9, 0.9});
  masked.scored[0] = false;
  CHECK(select_evidence(masked, 0.53) == std::vector<int>{1});

  InstanceEvidence ie;
  ie.primary = evidence({0.9, 0.1});
  ie.secondary = evidence({0.2, 0.6});
  const auto d = decide_taskB({{"c", ie}}, DecisionThresholds{});
  CHECK(d.at("c").primary == std::vector<int>{0});
  REQUIRE(d.at("c").secondary);
  CHECK(*d.at("c").secondary == std::vector<int>{1});
}

TEST_CASE("decisions are monotone in the scores") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const double p = u(rng);
    const double q = p + (1.0 - p) * u(rng);
    if (decide_entailment(entail(p), 0.57) == Label::Entailment) {
      CHECK(decide_entailment(entail(q), 0.57) == Label::Entailment);
    }
    auto e = evidence({u(rng), u(rng), u(rng)});
    const auto before = select_evidence(e, 0.53);
    e.scores[1] += (1.0 - e.scores[1]) * u(rng);
    const auto after = select_evidence(e, 0.53);
    for (int i : before) CHECK(std::find(after.begin(), after.end(), i) != after.end());
  }
}

TEST_CASE("joint inference passes singletons through and averages agreeing pairs") {
  const std::map<std::string, EntailmentProbabilities> p{{"a", entail(0.9)}, {"b", entail(0.3)}, {"c", entail(0.6)}};
  const std::vector<HypothesisGroup> singletons{{{"T1"}, {"a"}}, {{"T2"}, {"b"}}, {{"T3"}, {"c"}}};
  const auto never = [](const HypothesisGroup&) -> AgreementMatrix { throw std::logic_error("not called"); };
  const auto same = apply_joint_inference(p, singletons, never);
  for (const auto& [k, v] : p) CHECK(same.at(k) == v);

  const std::vector<HypothesisGroup> paired{{{"T1"}, {"a", "b"}}, {{"T3"}, {"c"}}};
  const auto agree = [](const HypothesisGroup& g) {
    AgreementMatrix m;
    m.I = Eigen::MatrixXi::Ones(static_cast<Eigen::Index>(g.uuids.size()), static_cast<Eigen::Index>(g.uuids.size()));
    return m;
  };
  const auto merged = apply_joint_inference(p, paired, agree);
  CHECK(merged.at("a").p[1] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(merged.at("b").p[1] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(merged.at("c") == p.at("c"));
}

TEST_CASE("joint inference separates a same-side exclusive pair at the cut") {
  const std::map<std::string, EntailmentProbabilities> p{{"a", entail(0.8)}, {"b", entail(0.7)}};
  const std::vector<HypothesisGroup> g{{{"T1"}, {"a", "b"}}};
  const auto apart = [](const HypothesisGroup&) {
    AgreementMatrix m;
    m.I = Eigen::MatrixXi::Identity(2, 2);
    return m;
  };
  const auto r = apply_joint_inference(p, g, apart);
  CHECK(r.at("a").p[1] > 0.5);
  CHECK(r.at("b").p[1] < 0.5);
  for (const auto& [k, v] : r) CHECK(v.p[0] + v.p[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("prediction files round trip decisions and sets") {
  const auto set = tiny_predictions(0.8, 0.6);
  const std::vector<PredictionSet> sets{set};
  const auto e = soft_ensemble(sets);
  const DecisionThresholds t;
  const auto j = prediction_file(e, e.mean.task_a, t, {{"joint", false}});
  CHECK(j["meta"]["joint"] == false);
  CHECK(j["taskA"]["u1"]["label"] == "Entailment");
  CHECK(j["taskA"]["u1"]["p"][1].get<double>() == doctest::Approx(0.8));
  const auto back = read_prediction_file(j);
  CHECK(back.task_a == decide_taskA(e.mean.task_a, t));
  const auto b = decide_taskB(e.mean.task_b, t);
  for (const auto& [k, sel] : b) {
    CHECK(back.task_b.at(k).primary == sel.primary);
    CHECK(back.task_b.at(k).secondary == sel.secondary);
  }
  const auto set_back = prediction_set_from_json(to_json(set));
  CHECK(set_back.task_a == set.task_a);
  CHECK(set_back.task_b.at("u3").secondary->scores == set.task_b.at("u3").secondary->scores);
}

TEST_CASE("threshold sweeps report one f1 per grid point") {
  const Dataset ds = tiny_dataset();
  const std::map<std::string, EntailmentProbabilities> p{{"u1", entail(0.9)}, {"u2", entail(0.1)}, {"u3", entail(0.4)}};
  const std::vector<double> grid{0.05, 0.5, 0.95};
  const auto s = sweep_eta_a(p, ds.instances, grid);
  REQUIRE(s.size() == 3);
  CHECK(s[1].second == doctest::Approx(1.0));
  CHECK(s[2].second == doctest::Approx(0.0));
}

TEST_CASE("checkpoint plans reproduce the ensemble sizes") {
  TrainConfig cfg;
  const auto a = resolve_model_names("all-taskA");
  CHECK(plan_checkpoints(a, 10, cfg).size() == 40);
  TrainConfig b = cfg;
  b.holdout = true;
  const auto bn = resolve_model_names("all-taskB");
  const auto plan_b = plan_checkpoints(bn, 10, b);
  CHECK(plan_b.size() == 63);
  CHECK(std::count_if(plan_b.begin(), plan_b.end(), [](const CheckpointMeta& m) { return m.holdout; }) == 3);
  CHECK(resolve_model_names("all-taskA").size() == 4);
  CHECK(resolve_model_names("all-taskB").size() == 3);
  CHECK_THROWS_AS(find_model_spec("M-999"), ConfigurationError);
}

TEST_CASE("two-fold training keeps one checkpoint per fold with a dev f1") {
  TempDir dir;
  const Dataset ds = generate_synthetic(31, 24);
  const auto folds = split_folds(ds.instances, 2, 7);
  const auto& spec = find_model_spec("M-512-Bi-Bi-mul");
  const auto result = train_cv(spec, ds, folds, toy_config(), dir.path());
  REQUIRE(result.checkpoints.size() == 2);
  for (const auto& m : result.checkpoints) {
    CHECK(m.metric >= 0.0);
    CHECK(m.metric <= 1.0);
    CHECK(m.task == Task::A);
    CHECK(std::filesystem::exists(m.path / "model.mgnli"));
  }
  CHECK(result.checkpoints[0].fold != result.checkpoints[1].fold);
  for (const auto& f : result.folds) {
    CHECK_FALSE(f.failed);
    CHECK(f.history.size() == 2);
    for (const auto& h : f.history) CHECK(h.dev_f1.has_value());
  }

  const auto loaded = load_checkpoint(result.checkpoints[0].path);
  CHECK(loaded.spec.name == spec.name);
  CHECK(loaded.meta.metric == result.checkpoints[0].metric);
  const auto p = predict_checkpoint(loaded, ds);
  CHECK(p.task_a.size() == ds.instances.size());
  CHECK(p.task_b.empty());

  write_checkpoint_index(dir / "index.json", result.checkpoints);
  const auto index = read_checkpoint_index(dir / "index.json");
  REQUIRE(index.size() == 2);
  CHECK(index[1].path == result.checkpoints[1].path);
}

TEST_CASE("fold training is identical across thread counts") {
  TempDir one;
  TempDir two;
  const Dataset ds = generate_synthetic(32, 16);
  const auto folds = split_folds(ds.instances, 2, 8);
  const auto& spec = find_model_spec("M-512-Bi-Bi");
  auto cfg = toy_config();
  cfg.epochs = 2;
  const auto a = train_cv(spec, ds, folds, cfg, one.path());
  cfg.threads = 2;
  const auto b = train_cv(spec, ds, folds, cfg, two.path());
  REQUIRE(a.checkpoints.size() == b.checkpoints.size());
  CHECK(a.checkpoints.size() == 4);
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
    CHECK(a.checkpoints[i].metric == b.checkpoints[i].metric);
    const auto pa = predict_checkpoint(load_checkpoint(a.checkpoints[i].path), ds);
    const auto pb = predict_checkpoint(load_checkpoint(b.checkpoints[i].path), ds);
    for (const auto& [k, e] : pa.task_b) CHECK(pb.task_b.at(k).primary.scores == e.primary.scores);
  }
}

TEST_CASE("leave-one-out rows drop one family each") {
  const Dataset ds = tiny_dataset();
  std::vector<std::pair<std::string, std::vector<PredictionSet>>> families;
  for (const char* name : {"f1", "f2", "f3", "f4"}) {
    families.push_back({name, {tiny_predictions(0.7, 0.6)}});
  }
  const auto rows = leave_one_out(families, ds, DecisionThresholds{});
  REQUIRE(rows.size() == 5);
  for (const auto& r : rows) {
    REQUIRE(r.task_a);
    REQUIRE(r.task_b);
    CHECK(r.task_a->overall.f1 == rows[0].task_a->overall.f1);
    CHECK(r.task_b->overall.f1 == rows[0].task_b->overall.f1);
  }
  CHECK(rows[1].name.find("f1") != std::string::npos);
  const decltype(families) one{families[0]};
  CHECK_THROWS_AS(leave_one_out(one, ds, DecisionThresholds{}), UsageError);
}
