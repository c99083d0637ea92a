#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "mgnli/corpus.hpp"
#include "mgnli/error.hpp"

namespace mgnli {

namespace {

constexpr std::size_t kMaxWordChars = 100;

const std::vector<std::string>& specials() {
  static const std::vector<std::string> s{"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  return s;
}

}  // namespace

Tokenizer::Tokenizer() : Tokenizer(specials()) {}

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  if (vocab_.size() < 4) throw ConfigurationError("tokenizer vocabulary must start with the four special tokens");
  for (std::size_t i = 0; i < specials().size(); ++i) {
    if (vocab_[i] != specials()[i]) {
      throw ConfigurationError("tokenizer vocabulary entry " + std::to_string(i) + " must be " + specials()[i]);
    }
  }
  for (std::size_t i = 0; i < vocab_.size(); ++i) index_.emplace(vocab_[i], static_cast<int>(i));
}

std::vector<std::string> Tokenizer::basic_split(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::isdigit(c) || (c < 128 && std::ispunct(c))) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Tokenizer Tokenizer::build(const std::vector<std::string>& texts, int min_count) {
  std::map<std::string, int> counts;
  std::set<std::string> chars;
  for (const auto& t : texts) {
    for (auto& w : basic_split(t)) {
      for (char c : w) chars.insert(std::string(1, c));
      ++counts[w];
    }
  }
  std::vector<std::string> vocab = specials();
  std::set<std::string> taken(vocab.begin(), vocab.end());
  for (const auto& [w, n] : counts) {
    if (n >= min_count && taken.insert(w).second) vocab.push_back(w);
  }
  for (const auto& c : chars) {
    if (taken.insert(c).second) vocab.push_back(c);
    if (taken.insert("##" + c).second) vocab.push_back("##" + c);
  }
  return Tokenizer(std::move(vocab));
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ImportError("cannot read vocabulary: " + path.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    vocab.push_back(line);
  }
  return Tokenizer(std::move(vocab));
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write vocabulary: " + path.string());
  for (const auto& t : vocab_) out << t << '\n';
}

std::optional<int> Tokenizer::id(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Tokenizer::pieces(std::string_view text) const {
  std::vector<std::string> out;
  for (const auto& word : basic_split(text)) {
    if (word.size() > kMaxWordChars) {
      out.push_back("[UNK]");
      continue;
    }
    std::vector<std::string> word_pieces;
    std::size_t start = 0;
    bool bad = false;
    while (start < word.size()) {
      std::size_t end = word.size();
      std::string found;
      while (end > start) {
        std::string candidate = word.substr(start, end - start);
        if (start > 0) candidate = "##" + candidate;
        if (index_.count(candidate)) {
          found = std::move(candidate);
          break;
        }
        --end;
      }
      if (found.empty()) {
        bad = true;
        break;
      }
      word_pieces.push_back(std::move(found));
      start = end;
    }
    if (bad) {
      out.push_back("[UNK]");
    } else {
      out.insert(out.end(), word_pieces.begin(), word_pieces.end());
    }
  }
  return out;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& p : pieces(text)) ids.push_back(index_.find(p)->second);
  return ids;
}

// --- pair encoding --------------------------------------------------------

namespace {

struct EncodedText {
  std::vector<int> ids;
  std::vector<std::string> words;  // lower-cased whitespace/punctuation-delimited run of each id
};

EncodedText encode_words(std::string_view text, const Tokenizer& tok) {
  EncodedText out;
  std::string run;
  auto flush = [&] {
    if (run.empty()) return;
    for (int id : tok.encode(run)) {
      out.ids.push_back(id);
      out.words.push_back(run);
    }
    run.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || (c < 128 && std::ispunct(c))) {
      flush();
      if (!std::isspace(c)) {
        run.assign(1, ch);
        flush();
      }
    } else {
      run.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

TokenSequence encode_with_leads(const std::vector<std::string_view>& leads, const PremiseView& premise,
                                const Tokenizer& tok, int max_len) {
  std::vector<EncodedText> lead_text;
  std::vector<EncodedText> premise_text;
  std::set<std::string> lead_words;
  std::set<std::string> premise_words;
  for (auto text : leads) {
    lead_text.push_back(encode_words(text, tok));
    if (lead_text.back().ids.empty()) throw ArgumentError("hypothesis has no tokens");
    lead_words.insert(lead_text.back().words.begin(), lead_text.back().words.end());
  }
  for (const auto& sentence : premise.sentences) {
    premise_text.push_back(encode_words(sentence, tok));
    premise_words.insert(premise_text.back().words.begin(), premise_text.back().words.end());
  }

  TokenSequence seq;
  auto push = [&](int id, int segment, int match) {
    seq.token_ids.push_back(id);
    seq.segment_ids.push_back(segment);
    seq.match_ids.push_back(match);
  };
  seq.lead = static_cast<int>(leads.size());
  push(Tokenizer::kCls, 0, 0);
  for (std::size_t l = 0; l < lead_text.size(); ++l) {
    const auto& t = lead_text[l];
    const int segment = l == 0 ? 0 : 1;
    seq.spans.push_back({seq.n(), static_cast<int>(t.ids.size())});
    for (std::size_t k = 0; k < t.ids.size(); ++k) push(t.ids[k], segment, premise_words.count(t.words[k]) ? 1 : 0);
    push(Tokenizer::kSep, segment, 0);
  }
  seq.special_count = 2 + static_cast<int>(leads.size());
  int budget = max_len - seq.n() - 1;
  if (budget < 0) {
    throw UnencodableError("hypothesis needs " + std::to_string(seq.n() + 1) + " positions but max_len is " +
                           std::to_string(max_len));
  }
  for (std::size_t i = 0; i < premise.m(); ++i) {
    const auto& t = premise_text[i];
    const int take = std::min(budget, static_cast<int>(t.ids.size()));
    seq.spans.push_back({seq.n(), take});
    seq.truncated.push_back(take < static_cast<int>(t.ids.size()));
    seq.marker.push_back(i < premise.origins.size() && premise.origins[i].marker);
    for (int k = 0; k < take; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      push(t.ids[ku], 1, lead_words.count(t.words[ku]) ? 1 : 0);
    }
    budget -= take;
  }
  push(Tokenizer::kSep, 1, 0);
  return seq;
}

}  // namespace

TokenSequence encode_pair(std::string_view hypothesis, const PremiseView& premise, const Tokenizer& tok,
                          int max_len) {
  return encode_with_leads({hypothesis}, premise, tok, max_len);
}

TokenSequence encode_pair_input(std::string_view first, std::string_view second, const PremiseView& premise,
                                const Tokenizer& tok, int max_len) {
  return encode_with_leads({first, second}, premise, tok, max_len);
}

}  // namespace mgnli
