#pragma once

// Prediction sets, soft ensembling, joint-inference rectification and the
// threshold decisions that produce system output.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgnli/consistency.hpp"
#include "mgnli/corpus.hpp"
#include "mgnli/evaluation.hpp"
#include "mgnli/mgnet.hpp"

namespace mgnli {

struct DecisionThresholds {
  double eta_a = 0.57;
  double eta_b = 0.53;

  void validate() const;
};

struct EvidencePrediction {
  std::vector<double> scores;
  std::vector<bool> scored;
};

struct InstanceEvidence {
  EvidencePrediction primary;
  std::optional<EvidencePrediction> secondary;
};

struct PredictionSet {
  std::map<std::string, EntailmentProbabilities> task_a;
  std::map<std::string, InstanceEvidence> task_b;
};

struct EnsemblePrediction {
  PredictionSet mean;
  int task_a_contributors = 0;
  int task_b_contributors = 0;
};

// Arithmetic mean per key. Sets with an empty task_a (task_b) map do not
// contribute to that task; contributors to one task must share keys and
// sentence counts. A sentence counts as scored if any contributor scored it.
EnsemblePrediction soft_ensemble(std::span<const PredictionSet> sets);

Label decide_entailment(const EntailmentProbabilities& p, double eta_a);
// Indices with score > eta_b among scored sentences.
std::vector<int> select_evidence(const EvidencePrediction& e, double eta_b);

std::map<std::string, Label> decide_taskA(const std::map<std::string, EntailmentProbabilities>& p,
                                          const DecisionThresholds& t);
std::map<std::string, EvidenceSelection> decide_taskB(const std::map<std::string, InstanceEvidence>& e,
                                                      const DecisionThresholds& t);

using AgreementFn = std::function<AgreementMatrix(const HypothesisGroup&)>;

// Rectifies every group of size > 1; other entries pass through unchanged.
std::map<std::string, EntailmentProbabilities> apply_joint_inference(
    const std::map<std::string, EntailmentProbabilities>& p, const std::vector<HypothesisGroup>& groups,
    const AgreementFn& agreement);

// Same, scoring pairs with a trained consistency network.
std::map<std::string, EntailmentProbabilities> apply_joint_inference(
    const std::map<std::string, EntailmentProbabilities>& p, const Dataset& data, const Tokenizer& tok,
    const PairNet& net, int max_len);

// Prediction file: {"taskA": {uuid: {"p": [p1, p2], "label"}},
//                   "taskB": {uuid: {"primary": {"scores", "selected"}, "secondary"?}},
//                   "meta": {...}}
nlohmann::json prediction_file(const EnsemblePrediction& e, const std::map<std::string, EntailmentProbabilities>& final_a,
                               const DecisionThresholds& t, const nlohmann::json& meta);
// Decisions recorded in a prediction file.
struct FileDecisions {
  std::map<std::string, Label> task_a;
  std::map<std::string, EvidenceSelection> task_b;
};
FileDecisions read_prediction_file(const nlohmann::json& j);

nlohmann::json to_json(const PredictionSet& s);
PredictionSet prediction_set_from_json(const nlohmann::json& j);

// Exploratory grid sweep over eta_A or eta_B. Not part of the decision rule.
std::vector<std::pair<double, double>> sweep_eta_a(const std::map<std::string, EntailmentProbabilities>& p,
                                                   const std::vector<Instance>& gold, std::span<const double> grid);
std::vector<std::pair<double, double>> sweep_eta_b(const std::map<std::string, InstanceEvidence>& e,
                                                   const std::vector<Instance>& gold, const TrialMap& trials,
                                                   std::span<const double> grid);

struct AblationRow {
  std::string name;
  std::optional<MetricReport> task_a;
  std::optional<MetricReport> task_b;
};

using Rectifier = std::function<std::map<std::string, EntailmentProbabilities>(
    const std::map<std::string, EntailmentProbabilities>&)>;

// First row ensembles every family; each further row drops one family.
// Requires at least two families.
std::vector<AblationRow> leave_one_out(const std::vector<std::pair<std::string, std::vector<PredictionSet>>>& families,
                                       const Dataset& gold, const DecisionThresholds& t,
                                       const Rectifier& rectifier = {});

}  // namespace mgnli
