#pragma once

// Entailment from a conditional sequence scorer: the probabilities of
// generating "entailment" and "contradiction" for the formatted input are
// renormalized into a two-way distribution.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgnli/corpus.hpp"
#include "mgnli/encoder.hpp"
#include "mgnli/mgnet.hpp"

namespace mgnli {

inline constexpr std::string_view kEntailmentTarget = "entailment";
inline constexpr std::string_view kContradictionTarget = "contradiction";

struct LabelScores {
  double p_ent = 0.0;
  double p_con = 0.0;
};

// "nli hypothesis: {S} premise: {P}" with P the space-joined premise.
std::string format_input(std::string_view hypothesis, const PremiseView& premise);

EntailmentProbabilities normalize_entailment(const LabelScores& scores);

class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  // Probability of `target` given `input`, in [0, 1].
  virtual double score(std::string_view input, std::string_view target) const = 0;
  // Scorers that share work across targets may override this.
  virtual LabelScores score_labels(std::string_view input) const;
  // True when concurrent score() calls on one instance are safe.
  virtual bool thread_safe() const { return true; }
};

// Fixed per-target probabilities; unknown targets get `fallback`.
class StubScorer : public SequenceScorer {
 public:
  StubScorer(std::map<std::string, double, std::less<>> table, double fallback = 0.0)
      : table_(std::move(table)), fallback_(fallback) {}
  double score(std::string_view input, std::string_view target) const override;

 private:
  std::map<std::string, double, std::less<>> table_;
  double fallback_;
};

// format_input on the Task A premise, two scorer calls, renormalization.
// Scorer failures are rethrown with the instance uuid.
EntailmentProbabilities score_instance(const SequenceScorer& scorer, const Instance& inst, const TrialMap& trials);

// --- byte-level encoder-decoder ---------------------------------------------

struct Seq2SeqConfig {
  int hidden = 32;
  int layers = 1;
  int heads = 2;
  int ffn = 64;
  int max_input = 512;  // bytes; longer inputs keep their head
  double dropout = 0.1;
  double init_std = 0.02;
};

// Byte vocabulary: 0 pad, 1 begin, 2 end, 3 + byte.
class ByteSeq2Seq : public SequenceScorer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBegin = 1;
  static constexpr int kEnd = 2;
  static constexpr int kVocab = 259;

  static ByteSeq2Seq init(const Seq2SeqConfig& cfg, std::uint64_t seed);
  static ByteSeq2Seq load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  double score(std::string_view input, std::string_view target) const override;
  LabelScores score_labels(std::string_view input) const override;

  // Sum of teacher-forced token negative log-likelihoods of target given input.
  ag::Var target_nll(std::string_view input, std::string_view target, const ForwardContext& ctx) const;

  // Deep copy sharing no parameter nodes.
  ByteSeq2Seq clone() const;

  const Seq2SeqConfig& config() const { return cfg_; }
  EncoderParams& encoder() { return encoder_; }
  ParameterStore& decoder() { return decoder_; }

 private:
  ag::Var encode_input(std::string_view input, const ForwardContext& ctx) const;
  ag::Var decode_nll(const ag::Var& memory, std::string_view target, const ForwardContext& ctx) const;

  Seq2SeqConfig cfg_;
  EncoderParams encoder_;
  ParameterStore decoder_;
};

struct GenerativeTrainConfig {
  double lr = 3e-5;
  int batch_size = 32;
  int epochs = 100;
  int warmup_steps = 500;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
};

// Teacher-forced training on the gold label word of every labeled instance,
// with Adafactor. Returns the mean loss per epoch; on_epoch sees each one.
std::vector<double> train_generative(ByteSeq2Seq& model, const std::vector<Instance>& instances,
                                     const TrialMap& trials, const GenerativeTrainConfig& cfg,
                                     const std::function<void(int epoch, double loss)>& on_epoch = {});

// --- scorer registry ----------------------------------------------------------

using ScorerFactory = std::function<std::unique_ptr<SequenceScorer>(const nlohmann::json& options)>;

// Built-in names: "stub" ({"entailment": p, "contradiction": q}) and
// "byte-seq2seq" ({"path": archive}).
void register_scorer(const std::string& name, ScorerFactory factory);
std::unique_ptr<SequenceScorer> make_scorer(const std::string& name, const nlohmann::json& options = {});
std::vector<std::string> registered_scorers();

}  // namespace mgnli
