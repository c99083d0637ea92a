#include <doctest.h>

#include <fstream>

#include "mgnli/consistency.hpp"
#include "mgnli/ensemble.hpp"
#include "mgnli/evaluation.hpp"
#include "mgnli/generative.hpp"
#include "mgnli/training.hpp"
#include "support/test_support.hpp"

using namespace mgnli;
using mgnli::testing::TempDir;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 16;
  c.match_features = true;
  c.epochs = 2;
  c.batch_size = 4;
  c.encoder_lr = 1e-3;
  c.head_lr = 1e-3;
  return c;
}

std::vector<PredictionSet> predict_all(const std::vector<CheckpointMeta>& metas, const Dataset& data) {
  std::vector<PredictionSet> out;
  for (const auto& m : metas) out.push_back(predict_checkpoint(load_checkpoint(m.path), data));
  return out;
}

}  // namespace

TEST_CASE("cross-validated training, ensembling, joint inference and evaluation compose") {
  TempDir dir;
  const Dataset data = generate_synthetic(31, 24);
  save_dataset(dir / "data.json", data);
  const Dataset loaded = load_dataset(dir / "data.json");
  REQUIRE(loaded == data);

  const FoldPlan folds = split_folds(loaded.instances, 2, 1);
  const TrainConfig cfg = small_config();
  const auto run_a = train_cv(find_model_spec("M-512-Bi-Bi-mul"), loaded, folds, cfg, dir / "a");
  const auto run_b = train_cv(find_model_spec("M-512-Bi-Bi"), loaded, folds, cfg, dir / "b");
  CHECK(run_a.checkpoints.size() == 2);
  CHECK(run_b.checkpoints.size() == 4);
  for (const auto& f : run_a.folds) CHECK_FALSE(f.failed);

  const auto preds_a = predict_all(run_a.checkpoints, loaded);
  const auto preds_b = predict_all(run_b.checkpoints, loaded);
  std::vector<PredictionSet> all = preds_a;
  all.insert(all.end(), preds_b.begin(), preds_b.end());
  const auto ens = soft_ensemble(all);
  CHECK(ens.task_a_contributors == 2);
  CHECK(ens.task_b_contributors == 4);
  CHECK(ens.mean.task_a.size() == loaded.instances.size());

  const auto gen = generate_pair_training_data(loaded.instances, RuleParaphraser{});
  CHECK(gen.pairs.size() == 4 * static_cast<std::size_t>(gen.contradicting_pairs));
  const PairDataset pairs{loaded.trials, gen.pairs};
  save_pairs(dir / "pairs.json", pairs);
  (void)train_pairwise(load_pairs(dir / "pairs.json"), cfg, 512, dir / "pairwise");
  const auto pair_ckpt = load_checkpoint(dir / "pairwise");
  REQUIRE(pair_ckpt.pairnet);
  REQUIRE(pair_ckpt.tokenizer);
  const auto joint = apply_joint_inference(ens.mean.task_a, loaded, *pair_ckpt.tokenizer, *pair_ckpt.pairnet,
                                           pair_ckpt.max_len);
  CHECK(joint.size() == ens.mean.task_a.size());
  for (const auto& [k, p] : joint) CHECK(p.p[0] + p.p[1] == doctest::Approx(1.0).epsilon(1e-12));

  const DecisionThresholds t;
  const auto file = prediction_file(ens, joint, t, {{"source", "integration"}});
  {
    std::ofstream(dir / "pred.json") << file.dump();
  }
  std::ifstream in(dir / "pred.json");
  const auto decisions = read_prediction_file(nlohmann::json::parse(in));
  CHECK(decisions.task_a == decide_taskA(joint, t));
  CHECK(decisions.task_b == decide_taskB(ens.mean.task_b, t));

  const auto ra = per_section_report_taskA(decisions.task_a, loaded.instances);
  const auto rb = per_section_report_taskB(decisions.task_b, loaded.instances, loaded.trials);
  CHECK(ra.overall.counts.total() == static_cast<std::int64_t>(loaded.instances.size()));
  CHECK(rb.overall.counts.total() > ra.overall.counts.total());
  CHECK(format_table({{"ensemble", ra}}).find("ensemble") != std::string::npos);

  const auto rows = leave_one_out({{"taskA", preds_a}, {"taskB", preds_b}}, loaded, t);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].task_a.has_value());
  CHECK(rows[0].task_b.has_value());
  CHECK(rows[1].task_a == std::nullopt);  // dropping the only Task A family
  CHECK(rows[2].task_b == std::nullopt);
}

TEST_CASE("generative and discriminative predictions ensemble on the same keys") {
  TempDir dir;
  const Dataset data = generate_synthetic(32, 10);
  Seq2SeqConfig sc;
  sc.hidden = 16;
  sc.ffn = 32;
  sc.max_input = 128;
  sc.dropout = 0.0;
  const auto gen_model = ByteSeq2Seq::init(sc, 1);
  const auto gen_pred = predict_generative(gen_model, data.instances, data.trials);
  CHECK(gen_pred.task_b.empty());

  const auto tok = build_tokenizer(data);
  const auto spec = find_model_spec("M-512-Bi-Bi-mul");
  const auto model = init_mgnet_model(spec, tok.vocab_size(), small_config(), 3);
  const auto mg_pred = predict_mgnet(spec, model, data.instances, data.trials, tok);

  const std::vector<PredictionSet> sets{gen_pred, mg_pred};
  const auto ens = soft_ensemble(sets);
  CHECK(ens.task_a_contributors == 2);
  CHECK(ens.task_b_contributors == 0);
  CHECK(ens.mean.task_b.empty());
  for (const auto& [k, p] : ens.mean.task_a) {
    CHECK(p.entailment() ==
          doctest::Approx((gen_pred.task_a.at(k).entailment() + mg_pred.task_a.at(k).entailment()) / 2.0));
  }
}
