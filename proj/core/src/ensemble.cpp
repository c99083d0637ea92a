#include "mgnli/ensemble.hpp"

#include <algorithm>
#include <set>

#include "mgnli/error.hpp"

namespace mgnli {

using nlohmann::json;

void DecisionThresholds::validate() const {
  if (!(eta_a > 0 && eta_a < 1) || !(eta_b > 0 && eta_b < 1)) {
    throw ConfigurationError("decision thresholds must lie in (0, 1)");
  }
}

namespace {

template <typename Map>
void require_same_keys(const Map& reference, const Map& other, const char* task) {
  for (const auto& [key, _] : reference) {
    if (!other.count(key)) throw AlignmentError(std::string(task) + " key " + key + " missing from a contributor");
  }
  for (const auto& [key, _] : other) {
    if (!reference.count(key)) throw AlignmentError(std::string(task) + " key " + key + " missing from a contributor");
  }
}

void accumulate(EvidencePrediction& acc, const EvidencePrediction& e, const std::string& key) {
  if (acc.scores.size() != e.scores.size()) {
    throw AlignmentError("taskB key " + key + ": contributors disagree on sentence count");
  }
  for (std::size_t i = 0; i < e.scores.size(); ++i) {
    acc.scores[i] += e.scores[i];
    if (i < e.scored.size() && e.scored[i]) acc.scored[i] = true;
  }
}

EvidencePrediction zero_like(const EvidencePrediction& e) {
  return {std::vector<double>(e.scores.size(), 0.0), std::vector<bool>(e.scores.size(), false)};
}

}  // namespace

EnsemblePrediction soft_ensemble(std::span<const PredictionSet> sets) {
  if (sets.empty()) throw ArgumentError("soft_ensemble: no prediction sets");
  EnsemblePrediction out;
  const PredictionSet* ref_a = nullptr;
  const PredictionSet* ref_b = nullptr;
  for (const auto& s : sets) {
    if (!s.task_a.empty()) {
      if (ref_a == nullptr) {
        ref_a = &s;
        for (const auto& [k, _] : s.task_a) out.mean.task_a[k].p = {0.0, 0.0};
      }
      require_same_keys(ref_a->task_a, s.task_a, "taskA");
      for (const auto& [k, p] : s.task_a) {
        out.mean.task_a[k].p[0] += p.p[0];
        out.mean.task_a[k].p[1] += p.p[1];
      }
      ++out.task_a_contributors;
    }
    if (!s.task_b.empty()) {
      if (ref_b == nullptr) {
        ref_b = &s;
        for (const auto& [k, e] : s.task_b) {
          InstanceEvidence z{zero_like(e.primary), std::nullopt};
          if (e.secondary) z.secondary = zero_like(*e.secondary);
          out.mean.task_b[k] = std::move(z);
        }
      }
      require_same_keys(ref_b->task_b, s.task_b, "taskB");
      for (const auto& [k, e] : s.task_b) {
        auto& acc = out.mean.task_b.at(k);
        accumulate(acc.primary, e.primary, k);
        if (acc.secondary.has_value() != e.secondary.has_value()) {
          throw AlignmentError("taskB key " + k + ": contributors disagree on secondary trial");
        }
        if (e.secondary) accumulate(*acc.secondary, *e.secondary, k);
      }
      ++out.task_b_contributors;
    }
  }
  if (out.task_a_contributors > 0) {
    for (auto& [_, p] : out.mean.task_a) {
      p.p[0] /= out.task_a_contributors;
      p.p[1] /= out.task_a_contributors;
    }
  }
  if (out.task_b_contributors > 0) {
    const double n = out.task_b_contributors;
    for (auto& [_, e] : out.mean.task_b) {
      for (double& v : e.primary.scores) v /= n;
      if (e.secondary) {
        for (double& v : e.secondary->scores) v /= n;
      }
    }
  }
  return out;
}

Label decide_entailment(const EntailmentProbabilities& p, double eta_a) {
  return p.entailment() > eta_a ? Label::Entailment : Label::Contradiction;
}

std::vector<int> select_evidence(const EvidencePrediction& e, double eta_b) {
  std::vector<int> out;
  for (std::size_t i = 0; i < e.scores.size(); ++i) {
    const bool scored = i < e.scored.size() && e.scored[i];
    if (scored && e.scores[i] > eta_b) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::map<std::string, Label> decide_taskA(const std::map<std::string, EntailmentProbabilities>& p,
                                          const DecisionThresholds& t) {
  std::map<std::string, Label> out;
  for (const auto& [k, v] : p) out[k] = decide_entailment(v, t.eta_a);
  return out;
}

std::map<std::string, EvidenceSelection> decide_taskB(const std::map<std::string, InstanceEvidence>& e,
                                                      const DecisionThresholds& t) {
  std::map<std::string, EvidenceSelection> out;
  for (const auto& [k, v] : e) {
    EvidenceSelection sel;
    sel.primary = select_evidence(v.primary, t.eta_b);
    if (v.secondary) sel.secondary = select_evidence(*v.secondary, t.eta_b);
    out[k] = std::move(sel);
  }
  return out;
}

std::map<std::string, EntailmentProbabilities> apply_joint_inference(
    const std::map<std::string, EntailmentProbabilities>& p, const std::vector<HypothesisGroup>& groups,
    const AgreementFn& agreement) {
  std::map<std::string, EntailmentProbabilities> out = p;
  for (const auto& g : groups) {
    if (g.uuids.size() < 2) continue;
    std::vector<EntailmentProbabilities> members;
    for (const auto& uuid : g.uuids) {
      const auto it = p.find(uuid);
      if (it == p.end()) throw AlignmentError("joint inference: no prediction for group member " + uuid);
      members.push_back(it->second);
    }
    const auto rectified = rectify(members, agreement(g));
    for (std::size_t i = 0; i < g.uuids.size(); ++i) out[g.uuids[i]] = rectified[i];
  }
  return out;
}

std::map<std::string, EntailmentProbabilities> apply_joint_inference(
    const std::map<std::string, EntailmentProbabilities>& p, const Dataset& data, const Tokenizer& tok,
    const PairNet& net, int max_len) {
  std::vector<Instance> predicted;
  for (const auto& inst : data.instances) {
    if (p.count(inst.uuid)) predicted.push_back(inst);
  }
  std::map<std::string, const Instance*> index;
  for (const auto& inst : predicted) index[inst.uuid] = &inst;
  return apply_joint_inference(p, group_hypotheses(predicted), [&](const HypothesisGroup& g) {
    return build_agreement_matrix(g, index, data.trials, tok, net, max_len);
  });
}

namespace {

json evidence_json(const EvidencePrediction& e, double eta_b) {
  return {{"scores", e.scores}, {"selected", select_evidence(e, eta_b)}, {"scored", e.scored}};
}

std::vector<int> int_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where + ": expected a list");
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw ParseError(where + ": expected integers");
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace

json prediction_file(const EnsemblePrediction& e, const std::map<std::string, EntailmentProbabilities>& final_a,
                     const DecisionThresholds& t, const json& meta) {
  json root;
  root["taskA"] = json::object();
  for (const auto& [k, p] : final_a) {
    root["taskA"][k] = {{"p", {p.p[0], p.p[1]}}, {"label", label_name(decide_entailment(p, t.eta_a))}};
  }
  root["taskB"] = json::object();
  for (const auto& [k, v] : e.mean.task_b) {
    json entry{{"primary", evidence_json(v.primary, t.eta_b)}};
    if (v.secondary) entry["secondary"] = evidence_json(*v.secondary, t.eta_b);
    root["taskB"][k] = std::move(entry);
  }
  root["meta"] = meta;
  root["meta"]["thresholds"] = {{"eta_a", t.eta_a}, {"eta_b", t.eta_b}};
  root["meta"]["task_a_contributors"] = e.task_a_contributors;
  root["meta"]["task_b_contributors"] = e.task_b_contributors;
  return root;
}

FileDecisions read_prediction_file(const json& j) {
  if (!j.is_object()) throw ParseError("prediction file must be a JSON object");
  FileDecisions d;
  if (j.contains("taskA")) {
    for (const auto& [k, v] : j["taskA"].items()) {
      if (!v.contains("label") || !v["label"].is_string()) throw ParseError("taskA entry " + k + " lacks a label");
      d.task_a[k] = parse_label(v["label"].get<std::string>());
    }
  }
  if (j.contains("taskB")) {
    for (const auto& [k, v] : j["taskB"].items()) {
      if (!v.contains("primary")) throw ParseError("taskB entry " + k + " lacks a primary selection");
      EvidenceSelection sel;
      sel.primary = int_list(v["primary"].value("selected", json::array()), "taskB " + k);
      if (v.contains("secondary")) sel.secondary = int_list(v["secondary"].value("selected", json::array()), "taskB " + k);
      d.task_b[k] = std::move(sel);
    }
  }
  return d;
}

json to_json(const PredictionSet& s) {
  json root{{"taskA", json::object()}, {"taskB", json::object()}};
  for (const auto& [k, p] : s.task_a) root["taskA"][k] = {p.p[0], p.p[1]};
  for (const auto& [k, e] : s.task_b) {
    json entry{{"primary", {{"scores", e.primary.scores}, {"scored", e.primary.scored}}}};
    if (e.secondary) entry["secondary"] = {{"scores", e.secondary->scores}, {"scored", e.secondary->scored}};
    root["taskB"][k] = std::move(entry);
  }
  return root;
}

PredictionSet prediction_set_from_json(const json& j) {
  PredictionSet s;
  auto evidence = [](const json& v) {
    EvidencePrediction e;
    e.scores = v.at("scores").get<std::vector<double>>();
    e.scored = v.at("scored").get<std::vector<bool>>();
    return e;
  };
  try {
    for (const auto& [k, v] : j.at("taskA").items()) s.task_a[k].p = {v.at(0).get<double>(), v.at(1).get<double>()};
    for (const auto& [k, v] : j.at("taskB").items()) {
      InstanceEvidence e{evidence(v.at("primary")), std::nullopt};
      if (v.contains("secondary")) e.secondary = evidence(v["secondary"]);
      s.task_b[k] = std::move(e);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed prediction set: ") + e.what());
  }
  return s;
}

std::vector<std::pair<double, double>> sweep_eta_a(const std::map<std::string, EntailmentProbabilities>& p,
                                                   const std::vector<Instance>& gold, std::span<const double> grid) {
  std::vector<std::pair<double, double>> out;
  for (double eta : grid) {
    out.emplace_back(eta, per_section_report_taskA(decide_taskA(p, {eta, 0.5}), gold).overall.f1);
  }
  return out;
}

std::vector<std::pair<double, double>> sweep_eta_b(const std::map<std::string, InstanceEvidence>& e,
                                                   const std::vector<Instance>& gold, const TrialMap& trials,
                                                   std::span<const double> grid) {
  std::vector<std::pair<double, double>> out;
  for (double eta : grid) {
    out.emplace_back(eta, micro_prf_taskB(decide_taskB(e, {0.5, eta}), gold, trials).f1);
  }
  return out;
}

std::vector<AblationRow> leave_one_out(const std::vector<std::pair<std::string, std::vector<PredictionSet>>>& families,
                                       const Dataset& gold, const DecisionThresholds& t,
                                       const Rectifier& rectifier) {
  if (families.size() < 2) throw UsageError("ablation needs at least two model families");
  auto evaluate = [&](const std::string& name, std::optional<std::size_t> skip) {
    std::vector<PredictionSet> sets;
    for (std::size_t f = 0; f < families.size(); ++f) {
      if (skip && *skip == f) continue;
      sets.insert(sets.end(), families[f].second.begin(), families[f].second.end());
    }
    AblationRow row{name, std::nullopt, std::nullopt};
    const auto ens = soft_ensemble(sets);
    if (ens.task_a_contributors > 0) {
      const auto p = rectifier ? rectifier(ens.mean.task_a) : ens.mean.task_a;
      row.task_a = per_section_report_taskA(decide_taskA(p, t), gold.instances);
    }
    if (ens.task_b_contributors > 0) {
      row.task_b = per_section_report_taskB(decide_taskB(ens.mean.task_b, t), gold.instances, gold.trials);
    }
    return row;
  };
  std::vector<AblationRow> rows{evaluate("original", std::nullopt)};
  for (std::size_t f = 0; f < families.size(); ++f) rows.push_back(evaluate("- " + families[f].first, f));
  return rows;
}

}  // namespace mgnli
