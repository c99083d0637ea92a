#include "mgnli/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgnli/error.hpp"
#include "mgnli/optim.hpp"

namespace mgnli {

using namespace ag;
using nlohmann::json;

PairNet PairNet::init(const EncoderConfig& cfg, std::uint64_t seed) {
  PairNet net;
  net.encoder = EncoderParams::init(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9a1eULL);
  const int d = cfg.hidden;
  net.head.add("hidden.weight", normal_init(d, d, std::sqrt(1.0 / d), rng));
  net.head.add("hidden.bias", Mat::Zero(1, d));
  net.head.add("output.weight", normal_init(d, 2, std::sqrt(1.0 / d), rng));
  net.head.add("output.bias", Mat::Zero(1, 2));
  return net;
}

Var pair_probabilities(const TokenSequence& seq, const PairNet& net, const ForwardContext& ctx) {
  Var reps = encode(seq, net.encoder, ctx);
  Var cls = slice_rows(reps, 0, 1);
  const auto& h = net.head;
  Var hidden = ag::tanh(linear(cls, h.get("hidden.weight"), h.get("hidden.bias")));
  return softmax_rows(linear(hidden, h.get("output.weight"), h.get("output.bias")));
}

ConsistencyScore score_pair(std::string_view first, std::string_view second, const PremiseView& premise,
                            const Tokenizer& tok, const PairNet& net, int max_len) {
  NoGradGuard guard;
  const TokenSequence seq = encode_pair_input(first, second, premise, tok, max_len);
  const Var p = pair_probabilities(seq, net, ForwardContext{});
  return {p->value(0, 0), p->value(0, 1)};
}

std::vector<HypothesisGroup> group_hypotheses(const std::vector<Instance>& instances) {
  std::vector<HypothesisGroup> groups;
  std::map<GroupKey, std::size_t> index;
  for (const auto& inst : instances) {
    GroupKey key{inst.primary_trial_id, inst.secondary_trial_id, inst.section};
    const auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) groups.push_back({key, {}});
    groups[it->second].uuids.push_back(inst.uuid);
  }
  return groups;
}

PremiseView group_premise(const GroupKey& key, const TrialMap& trials) {
  Instance probe;
  probe.uuid = "group";
  probe.kind = key.secondary_trial_id ? InstanceKind::Comparison : InstanceKind::Single;
  probe.section = key.section;
  probe.hypothesis = "-";
  probe.primary_trial_id = key.primary_trial_id;
  probe.secondary_trial_id = key.secondary_trial_id;
  return build_premise(probe, trials, Task::A).front();
}

AgreementMatrix build_agreement_matrix(int n, const std::function<double(int, int)>& same_prob) {
  if (n < 1) throw ArgumentError("build_agreement_matrix: empty group");
  AgreementMatrix a;
  a.I = Eigen::MatrixXi::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double c = 0.5 * (same_prob(i, j) + same_prob(j, i));
      const int agree = c > 0.5 ? 1 : 0;
      a.I(i, j) = agree;
      a.I(j, i) = agree;
    }
  }
  return a;
}

AgreementMatrix build_agreement_matrix(const HypothesisGroup& group, const std::map<std::string, const Instance*>& index,
                                       const TrialMap& trials, const Tokenizer& tok, const PairNet& net, int max_len) {
  const PremiseView premise = group_premise(group.key, trials);
  std::vector<const Instance*> members;
  for (const auto& uuid : group.uuids) {
    const auto it = index.find(uuid);
    if (it == index.end()) throw AlignmentError("group member " + uuid + " not found");
    members.push_back(it->second);
  }
  return build_agreement_matrix(static_cast<int>(members.size()), [&](int i, int j) {
    return score_pair(members[static_cast<std::size_t>(i)]->hypothesis, members[static_cast<std::size_t>(j)]->hypothesis,
                      premise, tok, net, max_len)
        .same;
  });
}

std::vector<EntailmentProbabilities> rectify(const std::vector<EntailmentProbabilities>& predictions,
                                             const AgreementMatrix& agreement) {
  const int n = agreement.n();
  if (static_cast<int>(predictions.size()) != n) {
    throw ArgumentError("rectify: " + std::to_string(predictions.size()) + " predictions for a group of " +
                        std::to_string(n));
  }
  std::vector<EntailmentProbabilities> out(predictions.size());
  for (int i = 0; i < n; ++i) {
    std::array<double, 2> acc{0.0, 0.0};
    for (int j = 0; j < n; ++j) {
      const auto& p = predictions[static_cast<std::size_t>(j)].p;
      const bool same = agreement.I(i, j) == 1;
      for (std::size_t c = 0; c < 2; ++c) acc[c] += same ? p[c] : 1.0 - p[c];
    }
    out[static_cast<std::size_t>(i)].p = {acc[0] / n, acc[1] / n};
  }
  return out;
}

// --- paraphrasing ---------------------------------------------------------------

std::optional<std::string> RuleParaphraser::paraphrase(std::string_view sentence) const {
  static const std::map<std::string, std::string, std::less<>> kSynonyms{
      {"tests", "evaluates"},     {"administered", "delivered"}, {"receive", "get"},
      {"uses", "employs"},        {"enrolls", "recruits"},       {"excluded", "barred"},
      {"measured", "assessed"},   {"analyzed", "evaluated"},     {"experienced", "suffered"},
      {"recorded", "reported"},   {"patients", "subjects"},      {"participants", "subjects"},
      {"enter", "join"},          {"history", "record"},         {"both", "each of"},
  };
  std::istringstream in{std::string(sentence)};
  std::string word;
  std::string out;
  bool changed = false;
  while (in >> word) {
    const auto it = kSynonyms.find(word);
    if (it != kSynonyms.end()) {
      word = it->second;
      changed = true;
    }
    if (!out.empty()) out += ' ';
    out += word;
  }
  if (out.empty()) return std::nullopt;
  if (!changed) out = "it is stated that " + out;
  return out;
}

PairGeneration generate_pair_training_data(const std::vector<Instance>& instances, const Paraphraser& paraphraser) {
  PairGeneration gen;
  std::map<std::string, const Instance*> index;
  for (const auto& inst : instances) index[inst.uuid] = &inst;
  for (const auto& group : group_hypotheses(instances)) {
    for (std::size_t a = 0; a < group.uuids.size(); ++a) {
      for (std::size_t b = a + 1; b < group.uuids.size(); ++b) {
        const Instance& s1 = *index.at(group.uuids[a]);
        const Instance& s2 = *index.at(group.uuids[b]);
        if (!s1.label || !s2.label || *s1.label == *s2.label) continue;
        ++gen.contradicting_pairs;
        std::optional<std::string> p1;
        std::optional<std::string> p2;
        try {
          p1 = paraphraser.paraphrase(s1.hypothesis);
          p2 = paraphraser.paraphrase(s2.hypothesis);
        } catch (const std::exception& e) {
          p1.reset();
          gen.warnings.push_back("paraphraser error on " + s1.uuid + "/" + s2.uuid + ": " + e.what());
        }
        if (!p1 || !p2) {
          ++gen.skipped;
          gen.warnings.push_back("skipped pair " + s1.uuid + "/" + s2.uuid + ": no paraphrase");
          continue;
        }
        gen.pairs.push_back({s1.hypothesis, *p1, group.key, PairLabel::Same});
        gen.pairs.push_back({s2.hypothesis, *p2, group.key, PairLabel::Same});
        gen.pairs.push_back({s1.hypothesis, s2.hypothesis, group.key, PairLabel::Different});
        gen.pairs.push_back({s2.hypothesis, s1.hypothesis, group.key, PairLabel::Different});
      }
    }
  }
  return gen;
}

std::string serialize_pairs(const PairDataset& ds) {
  Dataset carrier;
  carrier.trials = ds.trials;
  json root = json::parse(serialize_dataset(carrier));
  root.erase("instances");
  root["pairs"] = json::array();
  for (const auto& p : ds.pairs) {
    json j{{"first", p.first},
           {"second", p.second},
           {"primary_trial_id", p.key.primary_trial_id},
           {"section", section_name(p.key.section)},
           {"label", p.label == PairLabel::Same ? "same" : "different"}};
    if (p.key.secondary_trial_id) j["secondary_trial_id"] = *p.key.secondary_trial_id;
    root["pairs"].push_back(std::move(j));
  }
  return root.dump(1);
}

PairDataset parse_pairs(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed pair JSON: ") + e.what());
  }
  if (!root.is_object() || !root.contains("pairs") || !root["pairs"].is_array() || !root.contains("trials")) {
    throw ValidationError("pair file must be an object with \"trials\" and a \"pairs\" list");
  }
  json carrier{{"trials", root["trials"]}, {"instances", json::array()}};
  PairDataset ds;
  ds.trials = parse_dataset(carrier.dump()).trials;
  std::size_t position = 0;
  for (const auto& j : root["pairs"]) {
    const std::string where = "pair #" + std::to_string(position++);
    auto str = [&](const char* key) {
      if (!j.contains(key) || !j[key].is_string()) throw ValidationError(where + ": missing string field " + key);
      return j[key].get<std::string>();
    };
    PairExample p;
    p.first = str("first");
    p.second = str("second");
    p.key.primary_trial_id = str("primary_trial_id");
    if (j.contains("secondary_trial_id") && !j["secondary_trial_id"].is_null()) {
      p.key.secondary_trial_id = str("secondary_trial_id");
    }
    p.key.section = parse_section(str("section"));
    const std::string label = str("label");
    if (label == "same") {
      p.label = PairLabel::Same;
    } else if (label == "different") {
      p.label = PairLabel::Different;
    } else {
      throw ValidationError(where + ": label must be \"same\" or \"different\"");
    }
    if (!ds.trials.count(p.key.primary_trial_id) ||
        (p.key.secondary_trial_id && !ds.trials.count(*p.key.secondary_trial_id))) {
      throw ValidationError(where + ": references an absent trial");
    }
    ds.pairs.push_back(std::move(p));
  }
  return ds;
}

void save_pairs(const std::filesystem::path& path, const PairDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write pair file: " + path.string());
  out << serialize_pairs(ds) << '\n';
}

PairDataset load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read pair file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_pairs(buf.str());
}

// --- training -------------------------------------------------------------------

std::vector<double> train_pairnet(PairNet& net, const std::vector<PairExample>& pairs, const TrialMap& trials,
                                  const Tokenizer& tok, const PairTrainConfig& cfg) {
  if (pairs.empty()) throw DegenerateInputError("train_pairnet: no training pairs");
  if (cfg.batch_size <= 0 || cfg.epochs < 0) throw ConfigurationError("train_pairnet: invalid batch or epochs");
  std::map<GroupKey, PremiseView> premises;
  std::vector<TokenSequence> sequences;
  std::vector<int> targets;
  for (const auto& p : pairs) {
    auto it = premises.find(p.key);
    if (it == premises.end()) it = premises.emplace(p.key, group_premise(p.key, trials)).first;
    sequences.push_back(encode_pair_input(p.first, p.second, it->second, tok, cfg.max_len));
    targets.push_back(p.label == PairLabel::Same ? 0 : 1);
  }
  std::mt19937_64 rng(cfg.seed);
  const std::int64_t per_epoch = (static_cast<std::int64_t>(pairs.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total = per_epoch * cfg.epochs;
  const auto warmup = static_cast<std::int64_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total)));
  const LinearSchedule enc_lr{cfg.encoder_lr, warmup, total};
  const LinearSchedule head_lr{cfg.head_lr, warmup, total};
  Adam enc_opt;
  Adam head_opt;
  std::array<ParameterStore*, 2> stores{&net.encoder.store, &net.head};
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  ForwardContext ctx{true, &rng};
  std::vector<double> history;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const double weight = 1.0 / static_cast<double>(end - start);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t k = order[b];
        Var p = pair_probabilities(sequences[k], net, ctx);
        Var loss = scale(log_clamped(slice_cols(p, targets[k], 1), 1e-12, 1.0), -1.0);
        if (!std::isfinite(loss->value(0, 0))) throw TrainingError("pair network training diverged");
        sum += loss->value(0, 0);
        backward(loss, weight);
      }
      clip_grad_norm(stores, cfg.grad_clip);
      enc_opt.step(net.encoder.store, enc_lr.at(step));
      head_opt.step(net.head, head_lr.at(step));
      ++step;
      net.encoder.store.zero_grad();
      net.head.zero_grad();
    }
    history.push_back(sum / static_cast<double>(pairs.size()));
  }
  return history;
}

void append_pairnet(Archive& archive, const PairNet& net) {
  append_encoder(archive, net.encoder, "encoder.");
  append_to_archive(archive, net.head, "pair.");
}

PairNet pairnet_from_archive(const Archive& archive) {
  PairNet net;
  net.encoder = encoder_from_archive(archive, "encoder.");
  net.head = PairNet::init(net.encoder.config, 0).head;
  load_from_archive(net.head, archive, "pair.");
  return net;
}

}  // namespace mgnli
