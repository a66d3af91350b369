#pragma once

// Seeded generator for a toy supertagging corpus. A small template grammar
// over a 12-category tag set:
//
//   sentence := clause ("," "and" clause)? "."
//   clause   := subject vp
//   subject  := pronoun | name | det adj* noun (noun_pp)?
//   vp       := (vi | vt object) adverb? verb_pp?
//
// Prepositions are tagged (NP\NP)/NP inside subjects and
// ((S\NP)\(S\NP))/NP after verb phrases, so their tag depends on context.
// Some words are both nouns and transitive verbs; the left neighbour decides.
//
// Optionally, distractor tokens (random strings over a fixed unusual alphabet,
// tagged S/S) are injected between words at a given rate.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dynwin/corpus.hpp"
#include "dynwin/numerics.hpp"

namespace dynwin {

struct SyntheticOptions {
  std::size_t sentences = 50;
  std::uint64_t seed = 2017;
  double distractor_rate = 0.0;
  std::size_t distractor_pool = 400;
  std::uint64_t pool_seed = 99;  // shared across splits so they draw from one pool
};

inline const std::vector<std::string>& synthetic_tagset() {
  static const std::vector<std::string> tags = {
      "NP", "N", "NP/N", "N/N", "(S\\NP)/NP", "S\\NP", "(S\\NP)\\(S\\NP)",
      "(NP\\NP)/NP", "((S\\NP)\\(S\\NP))/NP", "conj", ".", ","};
  return tags;
}

inline std::string distractor_tag() { return "S/S"; }

class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(const SyntheticOptions& opt) : opt_(opt), rng_(opt.seed) {
    Rng pool_rng(opt.pool_seed);
    static const char alphabet[] = "qxzjkv";
    for (std::size_t i = 0; i < opt.distractor_pool; ++i) {
      std::string w;
      const std::size_t len = 3 + pool_rng.index(4);
      for (std::size_t j = 0; j < len; ++j) w += alphabet[pool_rng.index(6)];
      pool_.push_back(std::move(w));
    }
  }

  std::vector<Sentence> generate() {
    std::vector<Sentence> out;
    for (std::size_t i = 0; i < opt_.sentences; ++i) out.push_back(sentence());
    return out;
  }

 private:
  using Words = std::vector<std::pair<std::string, std::string>>;

  const std::string& pick(const std::vector<std::string>& v) { return v[rng_.index(v.size())]; }

  void subject(Words& w) {
    static const std::vector<std::string> pronouns = {"he", "she", "it", "they", "we"};
    static const std::vector<std::string> names = {"John", "Mary", "Paris", "IBM", "Alice"};
    const std::size_t kind = rng_.index(4);
    if (kind == 0) return w.emplace_back(pick(pronouns), "NP"), void();
    if (kind == 1) return w.emplace_back(pick(names), "NP"), void();
    noun_phrase(w);
    if (rng_.bernoulli(0.35)) {
      w.emplace_back(pick(preps()), "(NP\\NP)/NP");
      object(w);
    }
  }

  void noun_phrase(Words& w) {
    static const std::vector<std::string> dets = {"the", "a", "every", "this"};
    static const std::vector<std::string> adjs = {"big", "small", "old", "red", "happy", "2nd"};
    w.emplace_back(pick(dets), "NP/N");
    const std::size_t n_adj = rng_.index(3);
    for (std::size_t i = 0; i < n_adj; ++i) w.emplace_back(pick(adjs), "N/N");
    w.emplace_back(pick(rng_.bernoulli(0.3) ? ambiguous() : nouns()), "N");
  }

  void object(Words& w) {
    static const std::vector<std::string> names = {"John", "Mary", "Paris", "IBM", "Alice"};
    if (rng_.bernoulli(0.3))
      w.emplace_back(pick(names), "NP");
    else
      noun_phrase(w);
  }

  void verb_phrase(Words& w) {
    static const std::vector<std::string> vi = {"sleeps", "runs", "walks", "laughs", "arrived"};
    static const std::vector<std::string> vt = {"sees", "likes", "reads", "takes", "bought"};
    static const std::vector<std::string> advs = {"quickly", "slowly", "today", "again"};
    if (rng_.bernoulli(0.35)) {
      w.emplace_back(pick(vi), "S\\NP");
    } else {
      w.emplace_back(pick(rng_.bernoulli(0.3) ? ambiguous() : vt), "(S\\NP)/NP");
      object(w);
    }
    if (rng_.bernoulli(0.3)) w.emplace_back(pick(advs), "(S\\NP)\\(S\\NP)");
    if (rng_.bernoulli(0.35)) {
      w.emplace_back(pick(preps()), "((S\\NP)\\(S\\NP))/NP");
      object(w);
    }
  }

  static const std::vector<std::string>& preps() {
    static const std::vector<std::string> p = {"in", "on", "with", "near"};
    return p;
  }
  static const std::vector<std::string>& nouns() {
    static const std::vector<std::string> n = {"dog", "cat", "man", "park", "telescope",
                                               "house", "1990s", "garden"};
    return n;
  }
  // Noun / transitive-verb homographs.
  static const std::vector<std::string>& ambiguous() {
    static const std::vector<std::string> a = {"book", "watch", "saw", "fish"};
    return a;
  }

  Sentence sentence() {
    Words w;
    subject(w);
    verb_phrase(w);
    if (rng_.bernoulli(0.25)) {
      w.emplace_back(",", ",");
      w.emplace_back("and", "conj");
      subject(w);
      verb_phrase(w);
    }
    w.emplace_back(".", ".");
    if (!w.front().first.empty() && w.front().first[0] >= 'a' && w.front().first[0] <= 'z')
      w.front().first[0] = static_cast<char>(w.front().first[0] - 'a' + 'A');

    Sentence s;
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (opt_.distractor_rate > 0.0 && !pool_.empty() && rng_.bernoulli(opt_.distractor_rate)) {
        const std::string& d = pool_[rng_.index(pool_.size())];
        s.tokens.push_back({d, preprocess_token(d), distractor_tag()});
      }
      s.tokens.push_back({w[i].first, preprocess_token(w[i].first), w[i].second});
    }
    return s;
  }

  SyntheticOptions opt_;
  Rng rng_;
  std::vector<std::string> pool_;
};

inline std::vector<Sentence> generate_synthetic_corpus(const SyntheticOptions& opt = {}) {
  return SyntheticGenerator(opt).generate();
}

}  // namespace dynwin
