#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mgnli {

enum class Section { Intervention, Eligibility, Results, AdverseEvents };

inline constexpr std::array<Section, 4> kSections{Section::Intervention, Section::Eligibility, Section::Results,
                                                  Section::AdverseEvents};

std::string_view section_name(Section s);
// Throws ValidationError for names outside the four CTR sections.
Section parse_section(std::string_view name);

enum class InstanceKind { Single, Comparison };
enum class Label { Contradiction = 0, Entailment = 1 };
enum class Task { A, B };

std::string_view label_name(Label l);
Label parse_label(std::string_view name);

struct TrialRecord {
  std::string trial_id;
  std::map<Section, std::vector<std::string>> sections;

  const std::vector<std::string>& section(Section s) const;
};

using TrialMap = std::map<std::string, TrialRecord>;

struct Instance {
  std::string uuid;
  InstanceKind kind = InstanceKind::Single;
  Section section = Section::Intervention;
  std::string hypothesis;
  std::string primary_trial_id;
  std::optional<std::string> secondary_trial_id;
  std::optional<Label> label;
  std::optional<std::vector<int>> primary_evidence;
  std::optional<std::vector<int>> secondary_evidence;

  bool operator==(const Instance&) const = default;
};

struct Dataset {
  std::vector<Instance> instances;
  TrialMap trials;
};

bool operator==(const TrialRecord& a, const TrialRecord& b);
bool operator==(const Dataset& a, const Dataset& b);

// Canonical JSON (see README for the schema). Parsing validates every
// instance and rejects dangling trial references.
Dataset parse_dataset(std::string_view text);
Dataset load_dataset(const std::filesystem::path& path);
std::string serialize_dataset(const Dataset& ds);
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
void validate_dataset(const Dataset& ds);

// --- premise construction -------------------------------------------------

enum class TrialRole { Primary, Secondary };

struct SentenceOrigin {
  std::string trial_id;
  Section section = Section::Intervention;
  int index = -1;  // -1 for marker sentences
  TrialRole role = TrialRole::Primary;
  bool marker = false;
};

struct PremiseView {
  std::vector<std::string> sentences;
  std::vector<SentenceOrigin> origins;

  std::size_t m() const { return sentences.size(); }
};

inline constexpr std::string_view kPrimaryMarker = "primary trial:";
inline constexpr std::string_view kSecondaryMarker = "secondary trial:";

// Single instances yield one view. Comparison instances yield one view with
// marker sentences for Task A, and one view per trial for Task B.
std::vector<PremiseView> build_premise(const Instance& inst, const TrialMap& trials, Task task);

// Gold Task B labels aligned with a view's sentences (markers are 0).
std::vector<int> evidence_labels(const Instance& inst, const PremiseView& view);

// --- tokenization -----------------------------------------------------------

// Lower-cased whitespace/punctuation splitting (every digit is its own
// token) followed by greedy longest-match word pieces ("##" continuation
// prefix).
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;

  Tokenizer();
  explicit Tokenizer(std::vector<std::string> vocab);

  // Vocabulary: specials, every word seen at least min_count times, and all
  // single characters (plain and continuation) so any word can be spelled.
  static Tokenizer build(const std::vector<std::string>& texts, int min_count = 1);
  static Tokenizer load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  static std::vector<std::string> basic_split(std::string_view text);
  std::vector<int> encode(std::string_view text) const;
  std::vector<std::string> pieces(std::string_view text) const;

  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  const std::string& token(int id) const { return vocab_.at(static_cast<std::size_t>(id)); }
  std::optional<int> id(std::string_view token) const;

 private:
  std::vector<std::string> vocab_;
  std::map<std::string, int, std::less<>> index_;
};

struct Span {
  int begin = 0;
  int length = 0;
  bool empty() const { return length == 0; }
};

// Encoded hypothesis/premise pair. spans[0] covers the hypothesis (or the
// leading hypotheses for pair inputs); spans[lead + i] covers premise
// sentence i. Sentences cut by the length budget are flagged truncated; a
// fully dropped sentence has an empty span.
struct TokenSequence {
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  // 1 where the token's word also occurs on the other side (hypotheses vs
  // premise), else 0; 0 for special tokens.
  std::vector<int> match_ids;
  std::vector<Span> spans;
  std::vector<bool> truncated;  // per premise sentence
  std::vector<bool> marker;     // per premise sentence
  int lead = 1;                 // number of leading hypothesis spans
  int special_count = 0;

  int n() const { return static_cast<int>(token_ids.size()); }
  int m() const { return static_cast<int>(truncated.size()); }
  const Span& premise_span(int i) const { return spans[static_cast<std::size_t>(lead + i)]; }
};

// [CLS] S [SEP] P [SEP]; the premise is cut tail-first when over max_len.
TokenSequence encode_pair(std::string_view hypothesis, const PremiseView& premise, const Tokenizer& tok,
                          int max_len);
// [CLS] S_i [SEP] S_j [SEP] P [SEP] for the consistency network.
TokenSequence encode_pair_input(std::string_view first, std::string_view second, const PremiseView& premise,
                                const Tokenizer& tok, int max_len);

// --- synthetic corpus -----------------------------------------------------

struct SyntheticConfig {
  double comparison_fraction = 0.15;
  double arithmetic_fraction = 0.08;
  // Upper bound on distinct values per slot (drugs, routes, cohort sizes, ...).
  // Non-positive keeps the full pools.
  int pool_cap = 0;
  std::string id_prefix = "SYN";
};

// Deterministic in seed. Hypotheses come in mutually exclusive pairs sharing
// a premise (one entailed, one contradicted); an odd n ends in a group of
// three.
Dataset generate_synthetic(std::uint64_t seed, int n, const SyntheticConfig& cfg = {});

// Recomputes the label of an arithmetic ("a total of N participants")
// hypothesis from the premise numbers. Returns nullopt for other templates.
std::optional<Label> recompute_arithmetic_label(const Instance& inst, const TrialMap& trials);

// --- folds ----------------------------------------------------------------

struct FoldPlan {
  int k = 0;
  std::map<std::string, int> assignment;

  std::vector<std::vector<std::string>> folds() const;
  std::vector<std::size_t> fold_sizes() const;
};

// Label-stratified, deterministic in seed; fold sizes differ by at most one.
FoldPlan split_folds(const std::vector<Instance>& instances, int k, std::uint64_t seed);

}  // namespace mgnli
