#include "mgnli/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "mgnli/error.hpp"

namespace mgnli {

void ConfusionCounts::add(bool predicted, bool gold) {
  if (predicted && gold) {
    ++tp;
  } else if (predicted) {
    ++fp;
  } else if (gold) {
    ++fn;
  } else {
    ++tn;
  }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

Metrics metrics_from_counts(const ConfusionCounts& c) {
  Metrics m;
  m.counts = c;
  m.precision = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  m.recall = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  m.f1 = m.precision + m.recall == 0.0 ? 0.0 : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

ConfusionCounts count_decisions(std::span<const bool> predicted, std::span<const bool> gold) {
  if (predicted.size() != gold.size()) throw AlignmentError("prediction and gold lengths differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) c.add(predicted[i], gold[i]);
  return c;
}

ConfusionCounts count_taskA(const std::map<std::string, Label>& predicted, const std::map<std::string, Label>& gold) {
  for (const auto& [uuid, _] : predicted) {
    if (!gold.count(uuid)) throw AlignmentError("prediction for unknown instance " + uuid);
  }
  ConfusionCounts c;
  for (const auto& [uuid, label] : gold) {
    const auto it = predicted.find(uuid);
    if (it == predicted.end()) throw AlignmentError("missing prediction for instance " + uuid);
    c.add(it->second == Label::Entailment, label == Label::Entailment);
  }
  return c;
}

namespace {

ConfusionCounts count_ctr(const std::string& uuid, const char* role, std::size_t m, const std::vector<int>& selected,
                          const std::vector<int>& gold) {
  std::vector<bool> pred(m, false);
  std::vector<bool> truth(m, false);
  for (int i : selected) {
    if (i < 0 || static_cast<std::size_t>(i) >= m) {
      throw AlignmentError("instance " + uuid + ": " + role + " selection index " + std::to_string(i) +
                           " outside premise of " + std::to_string(m) + " sentences");
    }
    pred[static_cast<std::size_t>(i)] = true;
  }
  for (int i : gold) truth[static_cast<std::size_t>(i)] = true;
  ConfusionCounts c;
  for (std::size_t i = 0; i < m; ++i) c.add(pred[i], truth[i]);
  return c;
}

ConfusionCounts count_instance_taskB(const Instance& inst, const EvidenceSelection& sel, const TrialMap& trials) {
  ConfusionCounts c;
  const auto& primary = trials.at(inst.primary_trial_id).section(inst.section);
  c += count_ctr(inst.uuid, "primary", primary.size(), sel.primary, *inst.primary_evidence);
  if (inst.kind == InstanceKind::Comparison && inst.secondary_trial_id) {
    const auto& secondary = trials.at(*inst.secondary_trial_id).section(inst.section);
    const std::vector<int> none;
    c += count_ctr(inst.uuid, "secondary", secondary.size(), sel.secondary ? *sel.secondary : none,
                   inst.secondary_evidence ? *inst.secondary_evidence : none);
  }
  return c;
}

bool has_gold_evidence(const Instance& inst) { return inst.primary_evidence.has_value(); }

}  // namespace

ConfusionCounts count_taskB(const std::map<std::string, EvidenceSelection>& predicted,
                            const std::vector<Instance>& instances, const TrialMap& trials) {
  std::set<std::string> known;
  ConfusionCounts c;
  for (const auto& inst : instances) {
    known.insert(inst.uuid);
    if (!has_gold_evidence(inst)) continue;
    const auto it = predicted.find(inst.uuid);
    if (it == predicted.end()) throw AlignmentError("missing evidence prediction for instance " + inst.uuid);
    c += count_instance_taskB(inst, it->second, trials);
  }
  for (const auto& [uuid, _] : predicted) {
    if (!known.count(uuid)) throw AlignmentError("evidence prediction for unknown instance " + uuid);
  }
  return c;
}

Metrics micro_prf_taskA(const std::map<std::string, Label>& predicted, const std::map<std::string, Label>& gold) {
  return metrics_from_counts(count_taskA(predicted, gold));
}

Metrics micro_prf_taskB(const std::map<std::string, EvidenceSelection>& predicted,
                        const std::vector<Instance>& instances, const TrialMap& trials) {
  return metrics_from_counts(count_taskB(predicted, instances, trials));
}

std::map<std::string, Label> gold_labels(const std::vector<Instance>& instances) {
  std::map<std::string, Label> out;
  for (const auto& inst : instances) {
    if (inst.label) out[inst.uuid] = *inst.label;
  }
  return out;
}

MetricReport per_section_report_taskA(const std::map<std::string, Label>& predicted,
                                      const std::vector<Instance>& instances) {
  // Predictions for known but unlabeled instances are not scored.
  std::map<std::string, const Instance*> index;
  for (const auto& inst : instances) index[inst.uuid] = &inst;
  std::map<std::string, Label> scored;
  for (const auto& [uuid, label] : predicted) {
    const auto it = index.find(uuid);
    if (it == index.end()) throw AlignmentError("prediction for unknown instance " + uuid);
    if (it->second->label) scored.emplace(uuid, label);
  }
  MetricReport report;
  report.overall = micro_prf_taskA(scored, gold_labels(instances));
  std::map<Section, ConfusionCounts> counts;
  for (const auto& inst : instances) {
    if (!inst.label) continue;
    counts[inst.section].add(predicted.at(inst.uuid) == Label::Entailment, *inst.label == Label::Entailment);
  }
  for (const auto& [s, c] : counts) report.sections[s] = metrics_from_counts(c);
  return report;
}

MetricReport per_section_report_taskB(const std::map<std::string, EvidenceSelection>& predicted,
                                      const std::vector<Instance>& instances, const TrialMap& trials) {
  MetricReport report;
  report.overall = micro_prf_taskB(predicted, instances, trials);
  std::map<Section, ConfusionCounts> counts;
  for (const auto& inst : instances) {
    if (!has_gold_evidence(inst)) continue;
    counts[inst.section] += count_instance_taskB(inst, predicted.at(inst.uuid), trials);
  }
  for (const auto& [s, c] : counts) report.sections[s] = metrics_from_counts(c);
  return report;
}

nlohmann::json to_json(const Metrics& m) {
  return {{"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"counts", {{"tp", m.counts.tp}, {"fp", m.counts.fp}, {"fn", m.counts.fn}, {"tn", m.counts.tn}}}};
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json j = to_json(r.overall);
  j["sections"] = nlohmann::json::object();
  for (const auto& [s, m] : r.sections) j["sections"][std::string(section_name(s))] = to_json(m);
  return j;
}

std::string format_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::size_t width = 5;
  for (const auto& [name, _] : rows) width = std::max(width, name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %7s %7s %7s %7s %7s %7s %7s\n", static_cast<int>(width), "model", "P", "R",
                "F1", "Int", "Elig", "Res", "AE");
  out += buf;
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %7.3f %7.3f %7.3f", static_cast<int>(width), name.c_str(),
                  r.overall.precision, r.overall.recall, r.overall.f1);
    out += buf;
    for (Section s : kSections) {
      const auto it = r.sections.find(s);
      if (it == r.sections.end()) {
        std::snprintf(buf, sizeof buf, " %7s", "-");
      } else {
        std::snprintf(buf, sizeof buf, " %7.3f", it->second.f1);
      }
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace mgnli
