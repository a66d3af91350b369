#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "dynwin/corpus.hpp"
#include "dynwin/error.hpp"
#include "dynwin/numerics.hpp"

namespace dynwin {

struct FeatureConfig {
  std::size_t word_dim = 200;
  std::size_t cap_dim = 5;
  std::size_t char_dim = 5;
  std::size_t chars_per_side = 5;
  std::size_t window_radius = 1;

  // Per-token feature size F = word + cap + both character windows.
  std::size_t token_dim() const { return word_dim + cap_dim + 2 * chars_per_side * char_dim; }
  std::size_t slots() const { return 2 * window_radius + 1; }
  // Window input size I = (2 * radius + 1) * F.
  std::size_t window_dim() const { return slots() * token_dim(); }

  void validate() const {
    if (word_dim == 0 || cap_dim == 0 || char_dim == 0 || chars_per_side == 0)
      throw ConfigError("feature dimensions must all be >= 1");
  }
};

// Row of the capitalization table reserved for the boundary PAD token.
inline constexpr int kCapPad = static_cast<int>(kNumCapClasses);

// Table rows feeding one token's feature vector. `chars` holds the leftmost
// chars_per_side characters followed by the rightmost chars_per_side; short
// words fill the remaining slots with the PAD character (left window padded
// on the right, right window padded on the left).
struct TokenIds {
  int word = Vocab::kPad;
  int cap = kCapPad;
  std::vector<int> chars;

  friend bool operator==(const TokenIds&, const TokenIds&) = default;
};

inline TokenIds encode_token(const Lexicon& lex, const FeatureConfig& cfg,
                             std::string_view surface) {
  TokenIds ids;
  const std::string norm = preprocess_token(surface);
  ids.word = lex.words.id(norm);
  ids.cap = static_cast<int>(capitalization_class(surface));
  const auto chars = utf8_chars(norm);
  const std::size_t n = chars.size();
  const std::size_t k = cfg.chars_per_side;
  ids.chars.assign(2 * k, Vocab::kPad);
  for (std::size_t i = 0; i < k && i < n; ++i) ids.chars[i] = lex.chars.id(chars[i]);
  for (std::size_t i = 0; i < k && i < n; ++i) ids.chars[2 * k - 1 - i] = lex.chars.id(chars[n - 1 - i]);
  return ids;
}

inline TokenIds pad_token_ids(const FeatureConfig& cfg) {
  TokenIds ids;
  ids.chars.assign(2 * cfg.chars_per_side, Vocab::kPad);
  return ids;
}

// Trainable word, capitalization and character tables.
template <typename T>
struct BasicLookupTables {
  BasicParam<T> word;
  BasicParam<T> cap;
  BasicParam<T> chars;

  BasicLookupTables() = default;
  BasicLookupTables(const Lexicon& lex, const FeatureConfig& cfg, Rng& rng, double init_scale)
      : word("word_table",
             init_gaussian(lex.words.size(), cfg.word_dim, 1, rng, init_scale).template cast<T>(),
             true),
        cap("cap_table",
            init_gaussian(kNumCapClasses + 1, cfg.cap_dim, 1, rng, init_scale).template cast<T>(),
            true),
        chars("char_table",
              init_gaussian(lex.chars.size(), cfg.char_dim, 1, rng, init_scale).template cast<T>(),
              true) {}

  // Copies pretrained vectors into rows of words the table knows. Returns
  // the number of rows copied.
  std::size_t load_pretrained(const Vocab& words, const EmbeddingTable& emb) {
    if (emb.dim != word.value.cols())
      throw ConfigError("embedding dimension " + std::to_string(emb.dim) +
                        " does not match word_dim " + std::to_string(word.value.cols()));
    std::size_t copied = 0;
    for (std::size_t id = 2; id < words.size(); ++id) {
      const double* v = emb.find(words.token(static_cast<int>(id)));
      if (!v) continue;
      std::transform(v, v + emb.dim, word.value.row(id).begin(),
                     [](double x) { return static_cast<T>(x); });
      ++copied;
    }
    return copied;
  }

  template <typename U>
  BasicLookupTables<U> cast() const {
    BasicLookupTables<U> out;
    out.word = word.template cast<U>();
    out.cap = cap.template cast<U>();
    out.chars = chars.template cast<U>();
    return out;
  }
};

using LookupTables = BasicLookupTables<double>;

// f = [L_w(word); L_a(cap); L_c(char_1); ...; L_c(char_2k)]
template <typename T>
std::vector<T> token_feature(const BasicLookupTables<T>& tables, const TokenIds& ids) {
  std::vector<T> f;
  f.reserve(tables.word.value.cols() + tables.cap.value.cols() +
            ids.chars.size() * tables.chars.value.cols());
  auto append = [&](std::span<const T> row) { f.insert(f.end(), row.begin(), row.end()); };
  append(tables.word.value.row(static_cast<std::size_t>(ids.word)));
  append(tables.cap.value.row(static_cast<std::size_t>(ids.cap)));
  for (int c : ids.chars) append(tables.chars.value.row(static_cast<std::size_t>(c)));
  return f;
}

template <typename T>
std::vector<T> token_feature(const BasicLookupTables<T>& tables, const Lexicon& lex,
                             const FeatureConfig& cfg, std::string_view surface) {
  return token_feature(tables, encode_token(lex, cfg, surface));
}

// Scatters dL/df back onto the rows that produced f.
template <typename T>
void token_feature_backward(BasicLookupTables<T>& tables, const TokenIds& ids,
                            std::type_identity_t<std::span<const T>> grad) {
  std::size_t off = 0;
  auto scatter = [&](BasicParam<T>& p, int row) {
    const auto r = static_cast<std::size_t>(row);
    const std::size_t n = p.value.cols();
    axpy(T(1), grad.subspan(off, n), p.grad.row(r));
    p.touch(r);
    off += n;
  };
  scatter(tables.word, ids.word);
  scatter(tables.cap, ids.cap);
  for (int c : ids.chars) scatter(tables.chars, c);
}

// x_t = [f_{t-radius}; ...; f_{t+radius}], PAD feature outside the sentence.
template <typename T>
std::vector<T> context_window(std::span<const std::vector<T>> features, std::size_t t,
                              std::size_t radius, std::span<const T> pad_feature) {
  std::vector<T> x;
  x.reserve((2 * radius + 1) * pad_feature.size());
  const auto n = static_cast<long>(features.size());
  for (long p = static_cast<long>(t) - static_cast<long>(radius);
       p <= static_cast<long>(t + radius); ++p) {
    if (p < 0 || p >= n)
      x.insert(x.end(), pad_feature.begin(), pad_feature.end());
    else
      x.insert(x.end(), features[static_cast<std::size_t>(p)].begin(),
               features[static_cast<std::size_t>(p)].end());
  }
  return x;
}

inline Vector context_window(std::span<const Vector> features, std::size_t t, std::size_t radius,
                             std::span<const double> pad_feature) {
  return context_window<double>(features, t, radius, pad_feature);
}

// Adjoint of context_window: slot k of dx lands on position t - radius + k,
// or on the PAD feature when out of range.
template <typename T>
void context_window_backward(std::span<const T> dx, std::size_t t, std::size_t radius,
                             std::span<std::vector<T>> feature_grads, std::span<T> pad_grad) {
  const std::size_t dim = pad_grad.size();
  const auto n = static_cast<long>(feature_grads.size());
  std::size_t slot = 0;
  for (long p = static_cast<long>(t) - static_cast<long>(radius);
       p <= static_cast<long>(t + radius); ++p, ++slot) {
    auto src = dx.subspan(slot * dim, dim);
    if (p < 0 || p >= n)
      axpy(T(1), src, pad_grad);
    else
      axpy(T(1), src, feature_grads[static_cast<std::size_t>(p)]);
  }
}

inline void context_window_backward(std::span<const double> dx, std::size_t t, std::size_t radius,
                                    std::span<Vector> feature_grads, std::span<double> pad_grad) {
  context_window_backward<double>(dx, t, radius, feature_grads, pad_grad);
}

}  // namespace dynwin
