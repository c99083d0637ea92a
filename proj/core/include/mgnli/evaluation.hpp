#pragma once

// Micro precision / recall / F1 for entailment and evidence decisions, with
// per-section breakdowns.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgnli/corpus.hpp"

namespace mgnli {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  void add(bool predicted, bool gold);
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  ConfusionCounts counts;
};

// Zero denominators give 0 for the affected quantity.
Metrics metrics_from_counts(const ConfusionCounts& c);

struct MetricReport {
  Metrics overall;
  std::map<Section, Metrics> sections;
};

ConfusionCounts count_decisions(std::span<const bool> predicted, std::span<const bool> gold);

// Task A: positive class is Entailment. Every gold key must be predicted and
// vice versa.
ConfusionCounts count_taskA(const std::map<std::string, Label>& predicted, const std::map<std::string, Label>& gold);

// Selected evidence indices per CTR for one instance.
struct EvidenceSelection {
  std::vector<int> primary;
  std::optional<std::vector<int>> secondary;

  bool operator==(const EvidenceSelection&) const = default;
};

// Task B counts pooled over every sentence of every scored premise (both CTRs
// for comparison instances). Instances without gold evidence are skipped.
ConfusionCounts count_taskB(const std::map<std::string, EvidenceSelection>& predicted,
                            const std::vector<Instance>& instances, const TrialMap& trials);

Metrics micro_prf_taskA(const std::map<std::string, Label>& predicted, const std::map<std::string, Label>& gold);
Metrics micro_prf_taskB(const std::map<std::string, EvidenceSelection>& predicted,
                        const std::vector<Instance>& instances, const TrialMap& trials);

MetricReport per_section_report_taskA(const std::map<std::string, Label>& predicted,
                                      const std::vector<Instance>& instances);
MetricReport per_section_report_taskB(const std::map<std::string, EvidenceSelection>& predicted,
                                      const std::vector<Instance>& instances, const TrialMap& trials);

// Gold Task A labels of labeled instances.
std::map<std::string, Label> gold_labels(const std::vector<Instance>& instances);

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const MetricReport& r);

// Rows of (name, report) rendered as P / R / F1 followed by the four section
// F1 columns.
std::string format_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace mgnli
