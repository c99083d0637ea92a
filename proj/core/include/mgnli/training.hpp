#pragma once

// Model registry, MGNet training, checkpoint persistence, cross-validation
// orchestration and the checkpoint plan.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgnli/consistency.hpp"
#include "mgnli/corpus.hpp"
#include "mgnli/encoder.hpp"
#include "mgnli/ensemble.hpp"
#include "mgnli/generative.hpp"
#include "mgnli/mgnet.hpp"
#include "mgnli/objectives.hpp"

namespace mgnli {

enum class ModelFamily { MGNet, Generative, Pairwise };
enum class Objective { Multitask, Contrastive, Retrieval, Sequence, PairCrossEntropy };

struct ModelSpec {
  std::string name;
  ModelFamily family = ModelFamily::MGNet;
  std::optional<Task> task;  // empty for the pairwise network
  Objective objective = Objective::Multitask;
  int max_len = 512;
  SentenceEncoderKind sentence = SentenceEncoderKind::BiLSTM;
  TokenEncoderKind token = TokenEncoderKind::BiLSTM;
};

const std::vector<ModelSpec>& model_specs();
const ModelSpec& find_model_spec(std::string_view name);
// "all-taskA" / "all-taskB" expand to the Task A / Task B families; any other
// name must be a registered spec.
std::vector<std::string> resolve_model_names(std::string_view name_or_alias);
// The same architecture with the token-level encoder removed.
ModelSpec without_token_encoder(const ModelSpec& spec);

struct TrainConfig {
  // Encoder and heads.
  int layers = 2;
  int hidden = 32;
  int heads = 2;
  int ffn = 64;
  double dropout = 0.1;
  int sentence_layers = 1;
  int vocab_min_count = 1;
  // Exact-match input embedding for from-scratch encoders.
  bool match_features = false;
  // Optimization.
  double encoder_lr = 2e-5;
  double head_lr = 1e-4;
  int batch_size = 32;
  int epochs = 100;
  double warmup_fraction = 0.3;
  int warmup_steps = -1;  // overrides the fraction when >= 0
  double grad_clip = 1.0;
  LossConfig loss;
  DecisionThresholds thresholds;
  std::uint64_t seed = 0;
  // CV bookkeeping; -1 selects the task default (1 for Task A, 2 for Task B).
  int keep_per_fold = -1;
  bool holdout = false;
  int threads = 1;
  // Optional pretrained encoder: directory holding encoder.mgnli and vocab.txt.
  std::optional<std::filesystem::path> encoder_init;

  int keep_for(Task task) const { return keep_per_fold >= 0 ? keep_per_fold : (task == Task::A ? 1 : 2); }
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct MGNetModel {
  EncoderParams encoder;
  MGNetParams mgnet;

  MGNetModel clone() const { return {encoder.clone(), mgnet.clone()}; }
};

// Fresh model for a spec. Specs with max_len above 512 start from 512
// positions and are extended.
MGNetModel init_mgnet_model(const ModelSpec& spec, int vocab_size, const TrainConfig& cfg, std::uint64_t seed);

// Builds the vocabulary from every hypothesis and trial sentence.
Tokenizer build_tokenizer(const Dataset& data, int min_count = 1);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> dev_f1;
};

template <typename Model>
struct Snapshot {
  int epoch = 0;
  double metric = 0.0;
  Model model;
};

struct MGNetTrainResult {
  std::vector<EpochRecord> history;
  std::vector<Snapshot<MGNetModel>> kept;  // best first
};

// Trains in place. After each epoch the dev split (if any) is scored with the
// configured thresholds; the `keep` best epochs are retained (ties keep the
// earlier epoch). Without a dev split the last `keep` epochs are retained.
MGNetTrainResult train_mgnet(const ModelSpec& spec, MGNetModel& model, const std::vector<Instance>& train,
                             const std::vector<Instance>& dev, const TrialMap& trials, const Tokenizer& tok,
                             const TrainConfig& cfg, int keep,
                             const std::function<void(const EpochRecord&)>& on_epoch = {});

PredictionSet predict_mgnet(const ModelSpec& spec, const MGNetModel& model, const std::vector<Instance>& instances,
                            const TrialMap& trials, const Tokenizer& tok, int threads = 1);
PredictionSet predict_generative(const SequenceScorer& scorer, const std::vector<Instance>& instances,
                                 const TrialMap& trials, int threads = 1);

// Dev metric used for checkpoint selection.
double selection_metric(Task task, const PredictionSet& p, const std::vector<Instance>& dev, const TrialMap& trials,
                        const DecisionThresholds& t);

// --- checkpoints ----------------------------------------------------------------

struct CheckpointMeta {
  std::string model;
  int fold = -1;  // -1 for single-split and hold-out runs
  int rank = 0;
  int epoch = 0;
  double metric = 0.0;
  std::filesystem::path path;
  std::optional<Task> task;
  bool holdout = false;
};

nlohmann::json to_json(const CheckpointMeta& m);
CheckpointMeta checkpoint_meta_from_json(const nlohmann::json& j);
void write_checkpoint_index(const std::filesystem::path& path, const std::vector<CheckpointMeta>& metas);
std::vector<CheckpointMeta> read_checkpoint_index(const std::filesystem::path& path);

// A checkpoint directory holds model.mgnli, vocab.txt (except generative) and
// config.json.
void save_mgnet_checkpoint(const std::filesystem::path& dir, const ModelSpec& spec, const MGNetModel& model,
                           const Tokenizer& tok, const CheckpointMeta& meta);
void save_generative_checkpoint(const std::filesystem::path& dir, const ByteSeq2Seq& model, const CheckpointMeta& meta);
void save_pairnet_checkpoint(const std::filesystem::path& dir, const PairNet& net, const Tokenizer& tok, int max_len,
                             const CheckpointMeta& meta);

struct LoadedCheckpoint {
  ModelSpec spec;
  CheckpointMeta meta;
  std::optional<MGNetModel> mgnet;
  std::optional<ByteSeq2Seq> generative;
  std::optional<PairNet> pairnet;
  std::optional<Tokenizer> tokenizer;
  int max_len = 512;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);
PredictionSet predict_checkpoint(const LoadedCheckpoint& ckpt, const Dataset& data, int threads = 1);

// --- cross-validation -------------------------------------------------------------

struct FoldReport {
  int fold = -1;
  bool failed = false;
  std::string failure;
  std::vector<EpochRecord> history;
};

struct CvResult {
  std::vector<CheckpointMeta> checkpoints;
  std::vector<FoldReport> folds;
};

// Per fold: train on the other folds, select on the held-out fold. With
// cfg.holdout a Task B spec also trains one checkpoint on a fixed 90/10
// split. Folds run on up to cfg.threads threads with per-fold seeds, so
// results do not depend on the thread count. Checkpoints are written under
// out_dir.
CvResult train_cv(const ModelSpec& spec, const Dataset& data, const FoldPlan& folds, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir);

// Single split: train on `train`, select on `dev` when given (otherwise the
// last epochs are kept). Checkpoints go to out_dir/<model>/rank-<r>.
CvResult train_split(const ModelSpec& spec, const Dataset& train, const std::optional<Dataset>& dev,
                     const TrainConfig& cfg, const std::filesystem::path& out_dir);

struct PairwiseRun {
  CheckpointMeta meta;
  std::vector<double> losses;  // mean loss per epoch
};

// Trains the consistency network with the encoder shape and optimizer
// settings of cfg and writes its checkpoint to dir.
PairwiseRun train_pairwise(const PairDataset& pairs, const TrainConfig& cfg, int max_len,
                           const std::filesystem::path& dir);

// Dry run of the checkpoints train_cv would keep for the named models.
std::vector<CheckpointMeta> plan_checkpoints(std::span<const std::string> model_names, int folds, const TrainConfig& cfg);

}  // namespace mgnli
