#include <algorithm>
#include <cstdio>
#include <random>
#include <regex>
#include <set>

#include "mgnli/corpus.hpp"
#include "mgnli/error.hpp"

namespace mgnli {

namespace {

const std::vector<std::string> kDrugs{
    "letrozole",   "tamoxifen",   "anastrozole", "exemestane", "capecitabine", "docetaxel",
    "paclitaxel",  "trastuzumab", "lapatinib",   "fulvestrant", "everolimus",  "palbociclib",
    "bevacizumab", "carboplatin", "gemcitabine", "eribulin",    "olaparib",    "pertuzumab",
    "denosumab",   "zoledronate", "neratinib",   "abemaciclib", "ribociclib",  "vinorelbine"};
const std::vector<std::string> kRoutes{"orally", "intravenously", "subcutaneously", "intramuscularly"};
const std::vector<std::string> kFrequencies{"daily", "weekly", "biweekly", "monthly"};
const std::vector<int> kDoses{5, 10, 20, 25, 40, 50, 75, 100, 150, 200, 250, 400, 500};
const std::vector<int> kAges{18, 21, 30, 40, 45, 50, 55, 60, 65, 70};
const std::vector<std::string> kDiseases{"carcinoma", "lymphoma", "melanoma", "sarcoma",
                                         "myeloma",   "glioma",   "leukemia", "mesothelioma"};
const std::vector<std::string> kConditions{"pregnancy",    "hepatitis", "neuropathy", "cardiomyopathy",
                                           "diabetes",     "hypertension", "stroke",  "pneumonitis"};
const std::vector<std::string> kEvents{"nausea",   "fatigue",  "neutropenia", "anemia",   "diarrhoea", "alopecia",
                                       "rash",     "vomiting", "headache",    "insomnia", "arthralgia", "mucositis"};
const std::vector<std::string> kOutcomes{"survival", "response", "toxicity", "recurrence", "remission", "mortality"};

std::vector<int> range(int lo, int hi) {
  std::vector<int> out;
  for (int v = lo; v <= hi; ++v) out.push_back(v);
  return out;
}

// Keeps at most `cap` values (never fewer than `floor`), evenly spaced over
// the pool. A non-positive cap keeps everything.
template <typename T>
std::vector<T> capped(const std::vector<T>& pool, int cap, std::size_t floor) {
  const std::size_t keep = cap <= 0 ? pool.size() : std::min(pool.size(), std::max<std::size_t>(cap, floor));
  std::vector<T> out;
  for (std::size_t i = 0; i < keep; ++i) out.push_back(pool[i * pool.size() / keep]);
  return out;
}

struct Pools {
  std::vector<std::string> drugs, routes, frequencies, diseases, conditions, events, outcomes;
  std::vector<int> doses, ages, cohorts, event_counts;

  explicit Pools(int cap)
      : drugs(capped(kDrugs, cap, 3)),
        routes(capped(kRoutes, cap, 2)),
        frequencies(capped(kFrequencies, cap, 2)),
        diseases(capped(kDiseases, cap, 2)),
        conditions(capped(kConditions, cap, 2)),
        events(capped(kEvents, cap, 7)),
        outcomes(capped(kOutcomes, cap, 2)),
        doses(capped(kDoses, cap, 4)),
        ages(capped(kAges, cap, 2)),
        cohorts(capped(range(40, 400), cap, 4)),
        event_counts(capped(range(1, 20), cap, 5)) {}
};

using Rng = std::mt19937_64;

int uniform(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& pool) {
  return pool[static_cast<std::size_t>(uniform(rng, 0, static_cast<int>(pool.size()) - 1))];
}

template <typename T>
T pick_excluding(Rng& rng, const std::vector<T>& pool, const std::set<T>& exclude) {
  std::vector<T> options;
  for (const auto& v : pool) {
    if (!exclude.count(v)) options.push_back(v);
  }
  if (options.empty()) throw ConfigurationError("synthetic generator: exhausted value pool");
  return pick(rng, options);
}

// A number not present in `taken`, offset from `base`.
int shifted_number(Rng& rng, int base, const std::set<int>& taken) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    const int delta = uniform(rng, 2, 12) * (uniform(rng, 0, 1) == 0 ? -1 : 1);
    const int v = base + delta;
    if (v > 0 && !taken.count(v)) return v;
  }
  int v = base + 13;
  while (taken.count(v)) ++v;
  return v;
}

struct Facts {
  std::string drug;
  std::string route;
  std::string frequency;
  int dose = 0;
  int weeks = 0;
  int age = 0;
  std::string disease;
  std::string condition;
  std::string outcome;
  int months = 0;
  std::string arm_a_drug;
  std::string arm_b_drug;
  int n1 = 0;
  int n2 = 0;
  std::vector<std::string> events;
  std::vector<int> event_counts;
  int total_n = 0;
};

Facts random_facts(Rng& rng, const Pools& pools) {
  Facts f;
  f.drug = pick(rng, pools.drugs);
  f.route = pick(rng, pools.routes);
  f.frequency = pick(rng, pools.frequencies);
  f.dose = pick(rng, pools.doses);
  f.weeks = uniform(rng, 4, 52);
  while (f.weeks == f.dose) f.weeks = uniform(rng, 4, 52);
  f.age = pick(rng, pools.ages);
  f.disease = pick(rng, pools.diseases);
  f.condition = pick(rng, pools.conditions);
  f.outcome = pick(rng, pools.outcomes);
  f.months = uniform(rng, 6, 36);
  f.arm_a_drug = pick(rng, pools.drugs);
  f.arm_b_drug = pick_excluding(rng, pools.drugs, {f.arm_a_drug});
  f.n1 = pick(rng, pools.cohorts);
  f.n2 = pick_excluding(rng, pools.cohorts, {f.n1});
  std::vector<std::string> events = pools.events;
  std::shuffle(events.begin(), events.end(), rng);
  f.events.assign(events.begin(), events.begin() + 3);
  f.total_n = pick(rng, pools.cohorts);
  std::set<int> used{f.total_n};
  for (std::size_t i = 0; i < f.events.size(); ++i) {
    const int c = pick_excluding(rng, pools.event_counts, used);
    used.insert(c);
    f.event_counts.push_back(c);
  }
  return f;
}

std::string fmt(const char* pattern, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

TrialRecord render(const std::string& id, const Facts& f) {
  TrialRecord t;
  t.trial_id = id;
  t.sections[Section::Intervention] = {
      "intervention 1 :",
      "drug : " + f.drug,
      fmt("administered %s at a dose of %d mg", f.route.c_str(), f.dose),
      fmt("given %s for %d weeks", f.frequency.c_str(), f.weeks),
      "arm group label : experimental",
  };
  t.sections[Section::Eligibility] = {
      "inclusion criteria :",
      fmt("age %d years or older", f.age),
      "histologically confirmed " + f.disease,
      "ecog performance status 0 or 1",
      "exclusion criteria :",
      "history of " + f.condition,
  };
  t.sections[Section::Results] = {
      "outcome measurement : " + f.outcome,
      fmt("time frame : %d months", f.months),
      "arm a : " + f.arm_a_drug,
      fmt("participants analyzed : %d", f.n1),
      "arm b : " + f.arm_b_drug,
      fmt("participants analyzed : %d", f.n2),
  };
  int total = 0;
  for (int c : f.event_counts) total += c;
  auto& ae = t.sections[Section::AdverseEvents];
  ae = {"adverse events 1 :", fmt("total : %d / %d", std::min(total, f.total_n), f.total_n)};
  for (std::size_t i = 0; i < f.events.size(); ++i) {
    ae.push_back(fmt("%s %d / %d", f.events[i].c_str(), f.event_counts[i], f.total_n));
  }
  return t;
}

std::set<int> section_numbers(const TrialRecord& t, Section s) {
  static const std::regex number(R"(\d+)");
  std::set<int> out;
  for (const auto& sentence : t.section(s)) {
    for (auto it = std::sregex_iterator(sentence.begin(), sentence.end(), number); it != std::sregex_iterator();
         ++it) {
      out.insert(std::stoi(it->str()));
    }
  }
  return out;
}

struct Hypothesis {
  std::string text;
  Label label;
  std::vector<int> primary_evidence;
  std::vector<int> secondary_evidence;
};

struct Pair {
  Hypothesis entailed;
  Hypothesis contradicted;
};

constexpr int kTemplatesPerSection = 3;

// Single-trial exclusive pair from template `which` of `section`. The false
// variant always uses a value absent from the whole section.
Pair single_pair(Rng& rng, const Pools& pools, const Facts& f, const TrialRecord& t, Section section, int which) {
  auto pair = [](std::string yes, std::string no, std::vector<int> ev) {
    return Pair{{std::move(yes), Label::Entailment, ev, {}}, {std::move(no), Label::Contradiction, ev, {}}};
  };
  const auto numbers = section_numbers(t, section);
  switch (section) {
    case Section::Intervention:
      switch (which) {
        case 0: {
          const auto other = pick_excluding(rng, pools.drugs, {f.drug});
          return pair("the primary trial tests " + f.drug, "the primary trial tests " + other, {1});
        }
        case 1: {
          const auto other = pick_excluding(rng, pools.routes, {f.route});
          return pair(f.drug + " is administered " + f.route + " in the primary trial",
                      f.drug + " is administered " + other + " in the primary trial", {1, 2});
        }
        default: {
          if (uniform(rng, 0, 1) == 0) {
            const auto other = pick_excluding(rng, pools.frequencies, {f.frequency});
            return pair("patients in the primary trial receive " + f.drug + " " + f.frequency,
                        "patients in the primary trial receive " + f.drug + " " + other, {1, 3});
          }
          std::set<int> taken(numbers);
          const int other = pick_excluding(rng, pools.doses, taken);
          return pair(fmt("the primary trial uses a %d mg dose", f.dose),
                      fmt("the primary trial uses a %d mg dose", other), {2});
        }
      }
    case Section::Eligibility:
      switch (which) {
        case 0: {
          const int other = pick_excluding(rng, pools.ages, numbers);
          return pair(fmt("patients must be at least %d years old to enter the primary trial", f.age),
                      fmt("patients must be at least %d years old to enter the primary trial", other), {1});
        }
        case 1: {
          const auto other = pick_excluding(rng, pools.diseases, {f.disease});
          return pair("the primary trial enrolls patients with " + f.disease,
                      "the primary trial enrolls patients with " + other, {2});
        }
        default: {
          const auto other = pick_excluding(rng, pools.conditions, {f.condition});
          return pair("patients with a history of " + f.condition + " are excluded from the primary trial",
                      "patients with a history of " + other + " are excluded from the primary trial", {4, 5});
        }
      }
    case Section::Results:
      switch (which) {
        case 0: {
          const int other = pick_excluding(rng, pools.cohorts, numbers);
          return pair(fmt("%d participants were analyzed in arm a of the primary trial", f.n1),
                      fmt("%d participants were analyzed in arm a of the primary trial", other), {2, 3});
        }
        case 1: {
          const auto other = pick_excluding(rng, pools.outcomes, {f.outcome});
          return pair("the primary trial measured " + f.outcome, "the primary trial measured " + other, {0});
        }
        default: {
          const int other = pick_excluding(rng, pools.cohorts, numbers);
          return pair(fmt("%d participants were analyzed in arm b of the primary trial", f.n2),
                      fmt("%d participants were analyzed in arm b of the primary trial", other), {4, 5});
        }
      }
    case Section::AdverseEvents: {
      const int k = uniform(rng, 0, static_cast<int>(f.events.size()) - 1);
      const std::vector<int> ev{k + 2};
      if (which == 2) {
        const int other = pick_excluding(rng, pools.event_counts, numbers);
        return pair(fmt("%d patients experienced %s in the primary trial",
                        f.event_counts[static_cast<std::size_t>(k)], f.events[static_cast<std::size_t>(k)].c_str()),
                    fmt("%d patients experienced %s in the primary trial", other,
                        f.events[static_cast<std::size_t>(k)].c_str()),
                    ev);
      }
      const std::set<std::string> present(f.events.begin(), f.events.end());
      const auto other = pick_excluding(rng, pools.events, present);
      return pair(f.events[static_cast<std::size_t>(k)] + " was recorded in the primary trial",
                  other + " was recorded in the primary trial", ev);
    }
  }
  throw ConfigurationError("synthetic generator: unreachable section");
}

const char* kTotalPattern = "a total of %d participants were analyzed across both arms of the primary trial";

// The false total is itself a sum of two distinct cohort sizes, so the claim
// cannot be judged without the premise.
Pair arithmetic_pair(Rng& rng, const Pools& pools, const Facts& f, const TrialRecord& t) {
  const int sum = f.n1 + f.n2;
  const auto taken = section_numbers(t, Section::Results);
  std::vector<int> sums;
  for (std::size_t i = 0; i < pools.cohorts.size(); ++i) {
    for (std::size_t j = i + 1; j < pools.cohorts.size(); ++j) {
      const int v = pools.cohorts[i] + pools.cohorts[j];
      if (v != sum && !taken.count(v)) sums.push_back(v);
    }
  }
  const int other = sums.empty() ? shifted_number(rng, sum, taken) : pick(rng, sums);
  const std::vector<int> ev{3, 5};
  return Pair{{fmt(kTotalPattern, sum), Label::Entailment, ev, {}},
              {fmt(kTotalPattern, other), Label::Contradiction, ev, {}}};
}

}  // namespace

std::optional<Label> recompute_arithmetic_label(const Instance& inst, const TrialMap& trials) {
  static const std::regex total(R"(^a total of (\d+) participants were analyzed across both arms of the primary trial$)");
  static const std::regex analyzed(R"(^participants analyzed : (\d+)$)");
  std::smatch m;
  if (inst.section != Section::Results || !std::regex_match(inst.hypothesis, m, total)) return std::nullopt;
  const int claimed = std::stoi(m[1].str());
  int sum = 0;
  for (const auto& sentence : trials.at(inst.primary_trial_id).section(Section::Results)) {
    std::smatch s;
    if (std::regex_match(sentence, s, analyzed)) sum += std::stoi(s[1].str());
  }
  return claimed == sum ? Label::Entailment : Label::Contradiction;
}

Dataset generate_synthetic(std::uint64_t seed, int n, const SyntheticConfig& cfg) {
  if (n < 1) throw ArgumentError("generate_synthetic: n must be at least 1");
  Rng rng(seed);
  const Pools pools(cfg.pool_cap);
  Dataset ds;
  int trial_counter = 0;
  int instance_counter = 0;
  auto new_trial_id = [&] {
    return fmt("NCT%02d%06d", static_cast<int>(seed % 100), trial_counter++);
  };
  auto add_instance = [&](const Hypothesis& h, InstanceKind kind, Section section, const std::string& primary,
                          const std::optional<std::string>& secondary) {
    Instance inst;
    inst.uuid = fmt("%s-%llu-%05d", cfg.id_prefix.c_str(), static_cast<unsigned long long>(seed), instance_counter++);
    inst.kind = kind;
    inst.section = section;
    inst.hypothesis = h.text;
    inst.primary_trial_id = primary;
    inst.secondary_trial_id = secondary;
    inst.label = h.label;
    inst.primary_evidence = h.primary_evidence;
    if (kind == InstanceKind::Comparison) inst.secondary_evidence = h.secondary_evidence;
    ds.instances.push_back(std::move(inst));
  };

  // Group sizes: pairs, with a trailing triple for odd n (or a single for n=1).
  std::vector<int> groups;
  if (n == 1) {
    groups.push_back(1);
  } else {
    for (int i = 0; i < n / 2; ++i) groups.push_back(2);
    if (n % 2 == 1) groups.back() = 3;
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int size : groups) {
    const double draw = unit(rng);
    if (draw < cfg.comparison_fraction && size == 2) {
      // Exclusive comparison pair: "in both" vs "in the secondary but not the primary".
      Facts fp = random_facts(rng, pools);
      Facts fs = random_facts(rng, pools);
      const bool both = uniform(rng, 0, 1) == 0;
      const bool adverse = uniform(rng, 0, 1) == 0;
      Section section;
      std::string yes_both;
      std::string only_secondary;
      std::vector<int> ev_primary;
      std::vector<int> ev_secondary;
      if (adverse) {
        section = Section::AdverseEvents;
        const std::string event = fs.events[0];
        auto it = std::find(fp.events.begin(), fp.events.end(), event);
        if (both && it == fp.events.end()) fp.events[1] = event;
        if (!both && it != fp.events.end()) {
          std::set<std::string> used(fp.events.begin(), fp.events.end());
          used.insert(fs.events.begin(), fs.events.end());
          *it = pick_excluding(rng, pools.events, used);
        }
        for (std::size_t i = 0; i < fp.events.size(); ++i) {
          if (fp.events[i] == event) ev_primary.push_back(static_cast<int>(i) + 2);
        }
        ev_secondary.push_back(2);
        yes_both = event + " was recorded in both the primary trial and the secondary trial";
        only_secondary = event + " was recorded in the secondary trial but not in the primary trial";
      } else {
        section = Section::Intervention;
        if (both) {
          fp.route = fs.route;
        } else {
          fp.route = pick_excluding(rng, pools.routes, {fs.route});
        }
        ev_primary = {2};
        ev_secondary = {2};
        yes_both = "both the primary trial and the secondary trial give their drug " + fs.route;
        only_secondary = "the secondary trial gives its drug " + fs.route + " but the primary trial does not";
      }
      const auto pid = new_trial_id();
      const auto sid = new_trial_id();
      ds.trials.emplace(pid, render(pid, fp));
      ds.trials.emplace(sid, render(sid, fs));
      Hypothesis h_both{yes_both, both ? Label::Entailment : Label::Contradiction, ev_primary, ev_secondary};
      Hypothesis h_only{only_secondary, both ? Label::Contradiction : Label::Entailment, ev_primary, ev_secondary};
      if (uniform(rng, 0, 1) == 0) std::swap(h_both, h_only);
      add_instance(h_both, InstanceKind::Comparison, section, pid, sid);
      add_instance(h_only, InstanceKind::Comparison, section, pid, sid);
      continue;
    }

    const Facts f = random_facts(rng, pools);
    const auto id = new_trial_id();
    const TrialRecord trial = render(id, f);
    ds.trials.emplace(id, trial);
    Section section;
    Pair p;
    int used_template = -1;
    if (draw < cfg.comparison_fraction + cfg.arithmetic_fraction) {
      section = Section::Results;
      p = arithmetic_pair(rng, pools, f, trial);
    } else {
      section = kSections[static_cast<std::size_t>(uniform(rng, 0, 3))];
      used_template = uniform(rng, 0, kTemplatesPerSection - 1);
      p = single_pair(rng, pools, f, trial, section, used_template);
    }
    if (size == 1) {
      add_instance(p.entailed, InstanceKind::Single, section, id, std::nullopt);
      continue;
    }
    if (uniform(rng, 0, 1) == 0) {
      add_instance(p.entailed, InstanceKind::Single, section, id, std::nullopt);
      add_instance(p.contradicted, InstanceKind::Single, section, id, std::nullopt);
    } else {
      add_instance(p.contradicted, InstanceKind::Single, section, id, std::nullopt);
      add_instance(p.entailed, InstanceKind::Single, section, id, std::nullopt);
    }
    if (size == 3) {
      const int other = (used_template + 1 + kTemplatesPerSection) % kTemplatesPerSection;
      Pair extra = single_pair(rng, pools, f, trial, section, other);
      add_instance(uniform(rng, 0, 1) == 0 ? extra.entailed : extra.contradicted, InstanceKind::Single, section, id,
                   std::nullopt);
    }
  }
  validate_dataset(ds);
  return ds;
}

}  // namespace mgnli
