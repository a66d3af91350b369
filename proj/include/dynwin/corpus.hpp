#pragma once

#include <cctype>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dynwin/error.hpp"
#include "dynwin/numerics.hpp"

namespace dynwin {

// Lowercases ASCII letters and maps every ASCII digit to '9'.
inline std::string preprocess_token(std::string_view surface) {
  std::string out(surface);
  for (char& ch : out) {
    const auto u = static_cast<unsigned char>(ch);
    if (u >= '0' && u <= '9')
      ch = '9';
    else if (u >= 'A' && u <= 'Z')
      ch = static_cast<char>(std::tolower(u));
  }
  return out;
}

enum class CapClass : int {
  AllLower = 0,
  FirstUpper = 1,
  AllUpper = 2,
  Mixed = 3,
  NoAlpha = 4,
};
inline constexpr std::size_t kNumCapClasses = 5;

// Evaluated on the original surface form, before lowercasing. Only ASCII
// letters count as alphabetic.
inline CapClass capitalization_class(std::string_view surface) {
  std::size_t letters = 0, upper = 0;
  bool first_upper = false;
  bool first_letter = true;
  for (char ch : surface) {
    const auto u = static_cast<unsigned char>(ch);
    if (!std::isalpha(u) || u >= 0x80) continue;
    const bool up = std::isupper(u) != 0;
    if (first_letter) first_upper = up;
    first_letter = false;
    ++letters;
    upper += up ? 1 : 0;
  }
  if (letters == 0) return CapClass::NoAlpha;
  if (upper == 0) return CapClass::AllLower;
  if (upper == letters) return letters == 1 ? CapClass::FirstUpper : CapClass::AllUpper;
  if (first_upper && upper == 1) return CapClass::FirstUpper;
  return CapClass::Mixed;
}

// Splits a UTF-8 string into code points (as byte strings). Invalid leading
// bytes become single-byte units.
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const auto u = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (u >= 0xf0) len = 4;
    else if (u >= 0xe0) len = 3;
    else if (u >= 0xc0) len = 2;
    if (i + len > s.size()) len = 1;
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

struct Token {
  std::string surface;     // as read
  std::string normalized;  // preprocess_token(surface)
  std::string tag;         // supertag string
};

struct Sentence {
  std::vector<Token> tokens;
  std::size_t size() const { return tokens.size(); }
};

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

// Corpus format: one sentence per line, tokens separated by spaces, each token
// "surface|supertag" or "surface|POS|supertag" (POS is discarded). Blank lines
// are only allowed at the end of the file.
inline std::vector<Sentence> parse_corpus(std::istream& in, const std::string& source = "corpus") {
  std::vector<Sentence> out;
  std::string line;
  std::size_t lineno = 0;
  std::size_t blank_at = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto fields = split_ws(line);
    if (fields.empty()) {
      if (blank_at == 0) blank_at = lineno;
      continue;
    }
    if (blank_at != 0)
      throw DataError(source + ":" + std::to_string(blank_at) + ": empty line inside corpus");
    Sentence s;
    for (const auto& tok : fields) {
      std::vector<std::string_view> parts;
      std::string_view rest(tok);
      for (std::size_t p; (p = rest.find('|')) != std::string_view::npos;) {
        parts.push_back(rest.substr(0, p));
        rest.remove_prefix(p + 1);
      }
      parts.push_back(rest);
      if (parts.size() != 2 && parts.size() != 3)
        throw DataError(source + ":" + std::to_string(lineno) + ": malformed token '" + tok +
                        "' (expected surface|tag or surface|POS|tag)");
      for (auto part : parts)
        if (part.empty())
          throw DataError(source + ":" + std::to_string(lineno) + ": empty field in token '" +
                          tok + "'");
      Token t;
      t.surface = std::string(parts.front());
      t.normalized = preprocess_token(t.surface);
      t.tag = std::string(parts.back());
      s.tokens.push_back(std::move(t));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Sentence> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus file '" + path + "'");
  return parse_corpus(in, path);
}

inline void write_corpus(std::ostream& out, const std::vector<Sentence>& corpus) {
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (i) out << ' ';
      out << s.tokens[i].surface << '|' << s.tokens[i].tag;
    }
    out << '\n';
  }
}

// Dense string <-> id map with occurrence counts. Ids 0 and 1 are reserved
// for PAD and UNK.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab() {
    add("<pad>", 0);
    add("<unk>", 0);
  }

  int add(const std::string& token, std::size_t count = 1) {
    auto [it, inserted] = ids_.try_emplace(token, static_cast<int>(tokens_.size()));
    if (inserted) {
      tokens_.push_back(token);
      counts_.push_back(0);
    }
    counts_[static_cast<std::size_t>(it->second)] += count;
    return it->second;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t count(int id) const { return counts_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }

  // "id<TAB>token" per line.
  void save(std::ostream& out) const {
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\n';
  }

  static Vocab load(std::istream& in, std::size_t expected = static_cast<std::size_t>(-1)) {
    Vocab v;
    v.ids_.clear();
    v.tokens_.clear();
    v.counts_.clear();
    std::string line;
    while (v.tokens_.size() < expected && std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError("vocab: missing tab in line '" + line + "'");
      std::size_t id = 0;
      try {
        id = std::stoul(line.substr(0, tab));
      } catch (const std::exception&) {
        throw DataError("vocab: bad id in line '" + line + "'");
      }
      if (id != v.tokens_.size()) throw DataError("vocab: ids are not dense at '" + line + "'");
      const std::string token = line.substr(tab + 1);
      if (!v.ids_.try_emplace(token, static_cast<int>(id)).second)
        throw DataError("vocab: duplicate token '" + token + "'");
      v.tokens_.push_back(token);
      v.counts_.push_back(0);
    }
    if (expected != static_cast<std::size_t>(-1) && v.tokens_.size() != expected)
      throw DataError("vocab: truncated");
    if (v.tokens_.size() < 2 || v.tokens_[kPad] != "<pad>" || v.tokens_[kUnk] != "<unk>")
      throw DataError("vocab: reserved entries missing");
    return v;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
};

// Tag <-> id map. Id 0 is the RARE bucket shared by every tag not kept from
// training.
class TagSet {
 public:
  static constexpr int kRare = 0;

  TagSet() { tags_.push_back("<rare>"); }

  int add(const std::string& tag) {
    auto [it, inserted] = ids_.try_emplace(tag, static_cast<int>(tags_.size()));
    if (inserted) tags_.push_back(tag);
    return it->second;
  }
  int id(const std::string& tag) const {
    auto it = ids_.find(tag);
    return it == ids_.end() ? kRare : it->second;
  }
  bool contains(const std::string& tag) const { return ids_.count(tag) != 0; }
  const std::string& tag(int id) const { return tags_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tags_.size(); }
  // Training tags, excluding the RARE bucket.
  std::vector<std::string> tags() const { return {tags_.begin() + 1, tags_.end()}; }

  void save(std::ostream& out) const {
    for (std::size_t i = 0; i < tags_.size(); ++i) out << i << '\t' << tags_[i] << '\n';
  }

  static TagSet load(std::istream& in, std::size_t expected = static_cast<std::size_t>(-1)) {
    TagSet t;
    t.tags_.clear();
    std::string line;
    while (t.tags_.size() < expected && std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError("tagset: missing tab in line '" + line + "'");
      std::size_t id = 0;
      try {
        id = std::stoul(line.substr(0, tab));
      } catch (const std::exception&) {
        throw DataError("tagset: bad id in line '" + line + "'");
      }
      if (id != t.tags_.size()) throw DataError("tagset: ids are not dense at '" + line + "'");
      const std::string tag = line.substr(tab + 1);
      if (id != 0 && !t.ids_.try_emplace(tag, static_cast<int>(id)).second)
        throw DataError("tagset: duplicate tag '" + tag + "'");
      t.tags_.push_back(tag);
    }
    if (expected != static_cast<std::size_t>(-1) && t.tags_.size() != expected)
      throw DataError("tagset: truncated");
    if (t.tags_.empty() || t.tags_[0] != "<rare>") throw DataError("tagset: RARE entry missing");
    return t;
  }

  friend bool operator==(const TagSet& a, const TagSet& b) { return a.tags_ == b.tags_; }

 private:
  std::unordered_map<std::string, int> ids_;
  std::vector<std::string> tags_;
};

// Everything derived from the training split that a model needs to encode
// text: words, characters, tags.
struct Lexicon {
  Vocab words;
  Vocab chars;
  TagSet tags;
};

struct LexiconOptions {
  std::size_t min_word_count = 1;
  std::size_t min_tag_count = 1;  // 1 keeps every training tag
};

// Ids follow first occurrence in the training data. Words seen fewer than
// min_word_count times are left out (they encode as UNK).
inline Lexicon build_vocab_tagset(const std::vector<Sentence>& train,
                                  const LexiconOptions& options = {}) {
  if (train.empty()) throw DataError("build_vocab_tagset: empty training set");
  std::unordered_map<std::string, std::size_t> word_counts, tag_counts;
  std::vector<std::string> word_order, tag_order;
  for (const auto& s : train)
    for (const auto& t : s.tokens) {
      if (word_counts[t.normalized]++ == 0) word_order.push_back(t.normalized);
      if (tag_counts[t.tag]++ == 0) tag_order.push_back(t.tag);
    }
  Lexicon lex;
  for (const auto& w : word_order) {
    const std::size_t c = word_counts[w];
    if (c < options.min_word_count) continue;
    lex.words.add(w, c);
    for (const auto& ch : utf8_chars(w)) lex.chars.add(ch);
  }
  for (const auto& t : tag_order)
    if (tag_counts[t] >= options.min_tag_count) lex.tags.add(t);
  return lex;
}

struct EmbeddingTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::size_t> rows;
  Matrix vectors;
  std::vector<std::string> warnings;

  const double* find(const std::string& token) const {
    auto it = rows.find(token);
    return it == rows.end() ? nullptr : vectors.row(it->second).data();
  }
};

// Text format: "token v1 ... v_dim" per line. A repeated token keeps its last
// vector and records a warning.
inline EmbeddingTable parse_embeddings(std::istream& in, std::size_t expected_dim,
                                       const std::string& source = "embeddings") {
  EmbeddingTable table;
  table.dim = expected_dim;
  std::vector<std::vector<double>> data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto fields = split_ws(line);
    if (fields.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (fields.size() - 1 != expected_dim)
      throw DataError(where + ": expected " + std::to_string(expected_dim) + " values, found " +
                      std::to_string(fields.size() - 1));
    std::vector<double> v(expected_dim);
    for (std::size_t i = 0; i < expected_dim; ++i) {
      const std::string& f = fields[i + 1];
      std::size_t used = 0;
      try {
        v[i] = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != f.size() || !std::isfinite(v[i]))
        throw DataError(where + ": unreadable number '" + f + "'");
    }
    auto [it, inserted] = table.rows.try_emplace(fields[0], data.size());
    if (inserted) {
      data.push_back(std::move(v));
    } else {
      table.warnings.push_back(where + ": duplicate token '" + fields[0] +
                               "', keeping the last vector");
      data[it->second] = std::move(v);
    }
  }
  table.vectors = Matrix(data.size(), expected_dim);
  for (std::size_t r = 0; r < data.size(); ++r)
    std::copy(data[r].begin(), data[r].end(), table.vectors.row(r).begin());
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path, std::size_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read embedding file '" + path + "'");
  return parse_embeddings(in, expected_dim, path);
}

}  // namespace dynwin
