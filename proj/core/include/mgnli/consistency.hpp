#pragma once

// Pairwise label-consistency network over hypotheses sharing a premise, the
// agreement matrix built from it, the group rectification rule, and the
// paraphrase-based generator of its training pairs.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mgnli/corpus.hpp"
#include "mgnli/encoder.hpp"
#include "mgnli/mgnet.hpp"

namespace mgnli {

struct ConsistencyScore {
  double same = 0.5;       // c_1
  double different = 0.5;  // c_2
};

struct PairNet {
  EncoderParams encoder;
  ParameterStore head;  // pair.hidden.{weight,bias}, pair.output.{weight,bias}

  static PairNet init(const EncoderConfig& cfg, std::uint64_t seed);
  PairNet clone() const { return {encoder.clone(), head.clone()}; }
};

// softmax(W2 tanh(W1 h_[CLS] + b1) + b2), 1x2 with column 0 = same label.
ag::Var pair_probabilities(const TokenSequence& seq, const PairNet& net, const ForwardContext& ctx);

ConsistencyScore score_pair(std::string_view first, std::string_view second, const PremiseView& premise,
                            const Tokenizer& tok, const PairNet& net, int max_len);

struct GroupKey {
  std::string primary_trial_id;
  std::optional<std::string> secondary_trial_id;
  Section section = Section::Intervention;

  auto operator<=>(const GroupKey&) const = default;
};

struct HypothesisGroup {
  GroupKey key;
  std::vector<std::string> uuids;
};

// Groups in order of first appearance; members keep dataset order.
std::vector<HypothesisGroup> group_hypotheses(const std::vector<Instance>& instances);

// Task A premise for a group key.
PremiseView group_premise(const GroupKey& key, const TrialMap& trials);

struct AgreementMatrix {
  Eigen::MatrixXi I;
  int n() const { return static_cast<int>(I.rows()); }
};

// same_prob(i, j) is c_1 for the ordered pair (i, j); it is only called for
// i != j. I_ij = 1 iff (c_1^{ij} + c_1^{ji}) / 2 > 0.5; I_ii = 1.
AgreementMatrix build_agreement_matrix(int n, const std::function<double(int, int)>& same_prob);
AgreementMatrix build_agreement_matrix(const HypothesisGroup& group, const std::map<std::string, const Instance*>& index,
                                       const TrialMap& trials, const Tokenizer& tok, const PairNet& net, int max_len);

// p_i <- (1/n) sum_j (I_ij p_j + (1 - I_ij)(1 - p_j)), componentwise.
std::vector<EntailmentProbabilities> rectify(const std::vector<EntailmentProbabilities>& predictions,
                                             const AgreementMatrix& agreement);

// --- training pairs ------------------------------------------------------------

class Paraphraser {
 public:
  virtual ~Paraphraser() = default;
  // nullopt signals failure for this sentence.
  virtual std::optional<std::string> paraphrase(std::string_view sentence) const = 0;
};

class IdentityParaphraser : public Paraphraser {
 public:
  std::optional<std::string> paraphrase(std::string_view sentence) const override { return std::string(sentence); }
};

// Word-level synonym substitution; sentences with no known word get a fixed
// lead-in so the output always differs from the input.
class RuleParaphraser : public Paraphraser {
 public:
  std::optional<std::string> paraphrase(std::string_view sentence) const override;
};

enum class PairLabel { Same, Different };

struct PairExample {
  std::string first;
  std::string second;
  GroupKey key;
  PairLabel label = PairLabel::Same;

  bool operator==(const PairExample&) const = default;
};

struct PairDataset {
  TrialMap trials;
  std::vector<PairExample> pairs;
};

struct PairGeneration {
  std::vector<PairExample> pairs;
  int contradicting_pairs = 0;
  int skipped = 0;
  std::vector<std::string> warnings;
};

// For each contradicting pair (S1, S2) within a group: (S1, S1') same,
// (S2, S2') same, (S1, S2) different, (S2, S1) different.
PairGeneration generate_pair_training_data(const std::vector<Instance>& instances, const Paraphraser& paraphraser);

std::string serialize_pairs(const PairDataset& ds);
PairDataset parse_pairs(std::string_view text);
void save_pairs(const std::filesystem::path& path, const PairDataset& ds);
PairDataset load_pairs(const std::filesystem::path& path);

struct PairTrainConfig {
  double encoder_lr = 2e-5;
  double head_lr = 1e-4;
  int batch_size = 32;
  int epochs = 100;
  double warmup_fraction = 0.3;
  double grad_clip = 1.0;
  int max_len = 512;
  std::uint64_t seed = 0;
};

// Cross-entropy on same/different labels with Adam. Returns mean loss per epoch.
std::vector<double> train_pairnet(PairNet& net, const std::vector<PairExample>& pairs, const TrialMap& trials,
                                  const Tokenizer& tok, const PairTrainConfig& cfg);

void append_pairnet(Archive& archive, const PairNet& net);
PairNet pairnet_from_archive(const Archive& archive);

}  // namespace mgnli
