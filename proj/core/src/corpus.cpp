#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgnli/corpus.hpp"
#include "mgnli/error.hpp"

namespace mgnli {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string line_context(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n');
  const auto start = text.rfind('\n', byte == 0 ? 0 : byte - 1);
  const std::size_t line_start = start == std::string_view::npos ? 0 : start + 1;
  auto line_end = text.find('\n', line_start);
  if (line_end == std::string_view::npos) line_end = text.size();
  std::string snippet(text.substr(line_start, std::min<std::size_t>(line_end - line_start, 120)));
  return "line " + std::to_string(line) + ", column " + std::to_string(byte - line_start + 1) + ": " + snippet;
}

std::vector<int> read_indices(const json& j, const std::string& uuid, const char* field) {
  if (!j.is_array()) throw ValidationError("instance " + uuid + ": " + field + " must be an array");
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw ValidationError("instance " + uuid + ": " + field + " must hold integers");
    out.push_back(v.get<int>());
  }
  return out;
}

std::string require_string(const json& j, const char* field, const std::string& where) {
  if (!j.contains(field) || !j[field].is_string()) {
    throw ValidationError(where + ": missing string field \"" + field + "\"");
  }
  return j[field].get<std::string>();
}

void check_evidence(const Instance& inst, const TrialMap& trials, const std::optional<std::vector<int>>& ev,
                    const std::string& trial_id) {
  if (!ev) return;
  const auto& sentences = trials.at(trial_id).section(inst.section);
  for (int idx : *ev) {
    if (idx < 0 || idx >= static_cast<int>(sentences.size())) {
      throw ValidationError("instance " + inst.uuid + ": evidence index " + std::to_string(idx) +
                            " outside section of " + std::to_string(sentences.size()) + " sentences in " + trial_id);
    }
  }
}

}  // namespace

std::string_view section_name(Section s) {
  switch (s) {
    case Section::Intervention:
      return "Intervention";
    case Section::Eligibility:
      return "Eligibility";
    case Section::Results:
      return "Results";
    case Section::AdverseEvents:
      return "Adverse Events";
  }
  return "";
}

Section parse_section(std::string_view name) {
  for (Section s : kSections) {
    if (section_name(s) == name) return s;
  }
  throw ValidationError("unknown section name \"" + std::string(name) + "\"");
}

std::string_view label_name(Label l) { return l == Label::Entailment ? "Entailment" : "Contradiction"; }

Label parse_label(std::string_view name) {
  if (name == "Entailment") return Label::Entailment;
  if (name == "Contradiction") return Label::Contradiction;
  throw ValidationError("unknown label \"" + std::string(name) + "\"");
}

const std::vector<std::string>& TrialRecord::section(Section s) const {
  auto it = sections.find(s);
  if (it == sections.end()) {
    throw ValidationError("trial " + trial_id + " has no " + std::string(section_name(s)) + " section");
  }
  return it->second;
}

bool operator==(const TrialRecord& a, const TrialRecord& b) {
  return a.trial_id == b.trial_id && a.sections == b.sections;
}

bool operator==(const Dataset& a, const Dataset& b) { return a.instances == b.instances && a.trials == b.trials; }

void validate_dataset(const Dataset& ds) {
  for (const auto& [id, trial] : ds.trials) {
    if (id != trial.trial_id) throw ValidationError("trial key " + id + " does not match its trial_id");
    for (Section s : kSections) {
      auto it = trial.sections.find(s);
      if (it == trial.sections.end()) {
        throw ValidationError("trial " + id + ": missing section " + std::string(section_name(s)));
      }
      for (const auto& sentence : it->second) {
        if (trim(sentence).empty()) {
          throw ValidationError("trial " + id + ": empty sentence in " + std::string(section_name(s)));
        }
      }
    }
  }
  std::set<std::string> seen;
  for (const auto& inst : ds.instances) {
    if (inst.uuid.empty()) throw ValidationError("instance with empty uuid");
    if (!seen.insert(inst.uuid).second) throw ValidationError("duplicate instance uuid " + inst.uuid);
    if (trim(inst.hypothesis).empty()) throw ValidationError("instance " + inst.uuid + ": empty hypothesis");
    const bool comparison = inst.kind == InstanceKind::Comparison;
    if (comparison != inst.secondary_trial_id.has_value()) {
      throw ValidationError("instance " + inst.uuid +
                            ": secondary_trial_id must be present exactly for Comparison instances");
    }
    if (!comparison && inst.secondary_evidence) {
      throw ValidationError("instance " + inst.uuid + ": secondary_evidence on a Single instance");
    }
    if (!ds.trials.count(inst.primary_trial_id)) {
      throw ValidationError("instance " + inst.uuid + " references absent trial " + inst.primary_trial_id);
    }
    if (comparison && !ds.trials.count(*inst.secondary_trial_id)) {
      throw ValidationError("instance " + inst.uuid + " references absent trial " + *inst.secondary_trial_id);
    }
    check_evidence(inst, ds.trials, inst.primary_evidence, inst.primary_trial_id);
    if (comparison) check_evidence(inst, ds.trials, inst.secondary_evidence, *inst.secondary_trial_id);
  }
}

Dataset parse_dataset(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed dataset JSON at ") + line_context(text, e.byte) + " (" + e.what() + ")");
  }
  if (!root.is_object() || !root.contains("trials") || !root.contains("instances")) {
    throw ValidationError("dataset must be an object with \"trials\" and \"instances\"");
  }
  Dataset ds;
  for (const auto& [id, body] : root["trials"].items()) {
    TrialRecord trial;
    trial.trial_id = id;
    if (!body.is_object()) throw ValidationError("trial " + id + " must be an object");
    for (const auto& [name, sentences] : body.items()) {
      Section s;
      try {
        s = parse_section(name);
      } catch (const ValidationError&) {
        throw ValidationError("trial " + id + ": unknown section name \"" + name + "\"");
      }
      if (!sentences.is_array()) throw ValidationError("trial " + id + ": section " + name + " must be a list");
      auto& list = trial.sections[s];
      for (const auto& sentence : sentences) {
        if (!sentence.is_string()) throw ValidationError("trial " + id + ": sentences must be strings");
        list.push_back(sentence.get<std::string>());
      }
    }
    ds.trials.emplace(id, std::move(trial));
  }
  if (!root["instances"].is_array()) throw ValidationError("\"instances\" must be a list");
  std::size_t position = 0;
  for (const auto& j : root["instances"]) {
    const std::string where = "instance #" + std::to_string(position++);
    Instance inst;
    inst.uuid = require_string(j, "uuid", where);
    const std::string tag = "instance " + inst.uuid;
    const std::string kind = require_string(j, "kind", tag);
    if (kind == "Single") {
      inst.kind = InstanceKind::Single;
    } else if (kind == "Comparison") {
      inst.kind = InstanceKind::Comparison;
    } else {
      throw ValidationError(tag + ": unknown kind \"" + kind + "\"");
    }
    const std::string section = require_string(j, "section", tag);
    try {
      inst.section = parse_section(section);
    } catch (const ValidationError&) {
      throw ValidationError(tag + ": unknown section name \"" + section + "\"");
    }
    inst.hypothesis = require_string(j, "hypothesis", tag);
    inst.primary_trial_id = require_string(j, "primary_trial_id", tag);
    if (j.contains("secondary_trial_id") && !j["secondary_trial_id"].is_null()) {
      inst.secondary_trial_id = require_string(j, "secondary_trial_id", tag);
    }
    if (j.contains("label") && !j["label"].is_null()) {
      try {
        inst.label = parse_label(require_string(j, "label", tag));
      } catch (const ValidationError& e) {
        throw ValidationError(tag + ": " + e.what());
      }
    }
    if (j.contains("primary_evidence") && !j["primary_evidence"].is_null()) {
      inst.primary_evidence = read_indices(j["primary_evidence"], inst.uuid, "primary_evidence");
    }
    if (j.contains("secondary_evidence") && !j["secondary_evidence"].is_null()) {
      inst.secondary_evidence = read_indices(j["secondary_evidence"], inst.uuid, "secondary_evidence");
    }
    ds.instances.push_back(std::move(inst));
  }
  validate_dataset(ds);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read dataset: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

std::string serialize_dataset(const Dataset& ds) {
  json root;
  root["trials"] = json::object();
  for (const auto& [id, trial] : ds.trials) {
    json body = json::object();
    for (const auto& [s, sentences] : trial.sections) body[std::string(section_name(s))] = sentences;
    root["trials"][id] = body;
  }
  root["instances"] = json::array();
  for (const auto& inst : ds.instances) {
    json j;
    j["uuid"] = inst.uuid;
    j["kind"] = inst.kind == InstanceKind::Single ? "Single" : "Comparison";
    j["section"] = section_name(inst.section);
    j["hypothesis"] = inst.hypothesis;
    j["primary_trial_id"] = inst.primary_trial_id;
    if (inst.secondary_trial_id) j["secondary_trial_id"] = *inst.secondary_trial_id;
    if (inst.label) j["label"] = label_name(*inst.label);
    if (inst.primary_evidence) j["primary_evidence"] = *inst.primary_evidence;
    if (inst.secondary_evidence) j["secondary_evidence"] = *inst.secondary_evidence;
    root["instances"].push_back(std::move(j));
  }
  return root.dump(1);
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset: " + path.string());
  out << serialize_dataset(ds) << '\n';
}

// --- premise construction -------------------------------------------------

namespace {

void append_section(PremiseView& view, const TrialRecord& trial, Section section, TrialRole role) {
  const auto& sentences = trial.section(section);
  if (sentences.empty()) {
    throw ValidationError("trial " + trial.trial_id + " has an empty " + std::string(section_name(section)) +
                          " section");
  }
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    view.sentences.push_back(sentences[i]);
    view.origins.push_back({trial.trial_id, section, static_cast<int>(i), role, false});
  }
}

const TrialRecord& lookup(const TrialMap& trials, const std::string& id) {
  auto it = trials.find(id);
  if (it == trials.end()) throw ValidationError("unknown trial " + id);
  return it->second;
}

}  // namespace

std::vector<PremiseView> build_premise(const Instance& inst, const TrialMap& trials, Task task) {
  const auto& primary = lookup(trials, inst.primary_trial_id);
  if (inst.kind == InstanceKind::Single) {
    PremiseView v;
    append_section(v, primary, inst.section, TrialRole::Primary);
    return {v};
  }
  if (!inst.secondary_trial_id) throw ValidationError("instance " + inst.uuid + ": comparison without secondary");
  const auto& secondary = lookup(trials, *inst.secondary_trial_id);
  if (task == Task::B) {
    PremiseView a;
    PremiseView b;
    append_section(a, primary, inst.section, TrialRole::Primary);
    append_section(b, secondary, inst.section, TrialRole::Secondary);
    return {a, b};
  }
  PremiseView v;
  v.sentences.emplace_back(kPrimaryMarker);
  v.origins.push_back({primary.trial_id, inst.section, -1, TrialRole::Primary, true});
  append_section(v, primary, inst.section, TrialRole::Primary);
  v.sentences.emplace_back(kSecondaryMarker);
  v.origins.push_back({secondary.trial_id, inst.section, -1, TrialRole::Secondary, true});
  append_section(v, secondary, inst.section, TrialRole::Secondary);
  return {v};
}

std::vector<int> evidence_labels(const Instance& inst, const PremiseView& view) {
  std::vector<int> r(view.m(), 0);
  for (std::size_t i = 0; i < view.m(); ++i) {
    const auto& o = view.origins[i];
    if (o.marker) continue;
    const auto& ev = o.role == TrialRole::Primary ? inst.primary_evidence : inst.secondary_evidence;
    if (ev && std::find(ev->begin(), ev->end(), o.index) != ev->end()) r[i] = 1;
  }
  return r;
}

// --- folds ----------------------------------------------------------------

std::vector<std::vector<std::string>> FoldPlan::folds() const {
  std::vector<std::vector<std::string>> out(static_cast<std::size_t>(k));
  for (const auto& [uuid, f] : assignment) out[static_cast<std::size_t>(f)].push_back(uuid);
  return out;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(k), 0);
  for (const auto& [_, f] : assignment) ++out[static_cast<std::size_t>(f)];
  return out;
}

FoldPlan split_folds(const std::vector<Instance>& instances, int k, std::uint64_t seed) {
  if (k < 2) throw ArgumentError("split_folds: k must be at least 2");
  if (static_cast<std::size_t>(k) > instances.size()) {
    throw ArgumentError("split_folds: k=" + std::to_string(k) + " exceeds " + std::to_string(instances.size()) +
                        " instances");
  }
  // Strata: Contradiction, Entailment, unlabeled. Each stratum is shuffled and
  // the concatenation is dealt round-robin, which keeps both the fold sizes
  // and the per-fold label mix balanced.
  std::array<std::vector<std::string>, 3> strata;
  for (const auto& inst : instances) {
    const std::size_t s = inst.label ? static_cast<std::size_t>(*inst.label) : 2;
    strata[s].push_back(inst.uuid);
  }
  std::mt19937_64 rng(seed);
  FoldPlan plan;
  plan.k = k;
  std::size_t position = 0;
  for (auto& stratum : strata) {
    std::sort(stratum.begin(), stratum.end());
    std::shuffle(stratum.begin(), stratum.end(), rng);
    for (const auto& uuid : stratum) {
      if (!plan.assignment.emplace(uuid, static_cast<int>(position % static_cast<std::size_t>(k))).second) {
        throw ValidationError("split_folds: duplicate uuid " + uuid);
      }
      ++position;
    }
  }
  return plan;
}

}  // namespace mgnli
