#pragma once

// CCG lexical categories: atoms (N, NP, PP, S, plus any other identifier such
// as conj or punctuation) combined by forward (X/Y) and backward (X\Y)
// functors. Slash chains without parentheses associate to the left, so
// "S\NP/NP" reads as "(S\NP)/NP".

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dynwin/error.hpp"

namespace dynwin {

class CategoryParseError : public DataError {
 public:
  CategoryParseError(std::string message, std::size_t offset)
      : DataError(message + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class Category {
 public:
  enum class Kind { Atom, Forward, Backward };

  static Category atom(std::string name, std::string feature = {}) {
    Category c;
    c.kind_ = Kind::Atom;
    c.name_ = std::move(name);
    c.feature_ = std::move(feature);
    return c;
  }
  static Category forward(Category result, Category argument) {
    return functor(Kind::Forward, std::move(result), std::move(argument));
  }
  static Category backward(Category result, Category argument) {
    return functor(Kind::Backward, std::move(result), std::move(argument));
  }

  Kind kind() const { return kind_; }
  bool is_atom() const { return kind_ == Kind::Atom; }
  bool is_functor() const { return kind_ != Kind::Atom; }

  // Atom accessors.
  const std::string& name() const { return name_; }
  const std::string& feature() const { return feature_; }
  bool has_feature() const { return !feature_.empty(); }

  // Functor accessors; only valid when is_functor().
  const Category& result() const { return *result_; }
  const Category& argument() const { return *argument_; }

  friend bool operator==(const Category& a, const Category& b) {
    if (a.kind_ != b.kind_) return false;
    if (a.is_atom()) return a.name_ == b.name_ && a.feature_ == b.feature_;
    return (a.result_ == b.result_ || *a.result_ == *b.result_) &&
           (a.argument_ == b.argument_ || *a.argument_ == *b.argument_);
  }

 private:
  Category() = default;

  static Category functor(Kind kind, Category result, Category argument) {
    Category c;
    c.kind_ = kind;
    c.result_ = std::make_shared<const Category>(std::move(result));
    c.argument_ = std::make_shared<const Category>(std::move(argument));
    return c;
  }

  Kind kind_ = Kind::Atom;
  std::string name_;
  std::string feature_;
  std::shared_ptr<const Category> result_;
  std::shared_ptr<const Category> argument_;
};

namespace detail {

inline bool is_name_char(char ch) {
  const auto u = static_cast<unsigned char>(ch);
  if (u <= 0x20 || u >= 0x7f) return false;
  switch (ch) {
    case '(': case ')': case '[': case ']': case '/': case '\\':
      return false;
    default:
      return true;
  }
}

class CategoryParser {
 public:
  explicit CategoryParser(std::string_view text) : text_(text) {}

  Category parse() {
    if (text_.empty()) throw CategoryParseError("empty category", 0);
    check_characters();
    Category c = parse_chain();
    if (pos_ != text_.size()) {
      if (text_[pos_] == ')') throw CategoryParseError("unbalanced ')'", pos_);
      throw CategoryParseError("unexpected character '" + std::string(1, text_[pos_]) + "'",
                               pos_);
    }
    return c;
  }

 private:
  void check_characters() const {
    for (std::size_t i = 0; i < text_.size(); ++i) {
      const char ch = text_[i];
      if (!is_name_char(ch) && ch != '(' && ch != ')' && ch != '[' && ch != ']' && ch != '/' &&
          ch != '\\')
        throw CategoryParseError("illegal character", i);
    }
  }

  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  Category parse_chain() {
    Category left = parse_term();
    while (!at_end() && (peek() == '/' || peek() == '\\')) {
      const char slash = peek();
      const std::size_t slash_pos = pos_;
      ++pos_;
      if (at_end()) throw CategoryParseError("dangling slash", slash_pos);
      if (peek() == ')' || peek() == '/' || peek() == '\\')
        throw CategoryParseError("empty argument", pos_);
      Category right = parse_term();
      left = slash == '/' ? Category::forward(std::move(left), std::move(right))
                          : Category::backward(std::move(left), std::move(right));
    }
    return left;
  }

  Category parse_term() {
    if (at_end()) throw CategoryParseError("empty argument", pos_);
    if (peek() == '(') {
      const std::size_t open = pos_;
      ++pos_;
      if (!at_end() && peek() == ')') throw CategoryParseError("empty parentheses", pos_);
      Category inner = parse_chain();
      if (at_end() || peek() != ')') throw CategoryParseError("unbalanced '('", open);
      ++pos_;
      return inner;
    }
    return parse_atom();
  }

  Category parse_atom() {
    const std::size_t start = pos_;
    while (!at_end() && is_name_char(peek())) ++pos_;
    if (pos_ == start) {
      if (peek() == ')') throw CategoryParseError("unbalanced ')'", pos_);
      throw CategoryParseError("expected category name", pos_);
    }
    std::string name(text_.substr(start, pos_ - start));
    std::string feature;
    if (!at_end() && peek() == '[') {
      const std::size_t open = pos_;
      ++pos_;
      const std::size_t fstart = pos_;
      while (!at_end() && is_name_char(peek())) ++pos_;
      if (pos_ == fstart) throw CategoryParseError("empty feature", fstart);
      if (at_end() || peek() != ']') throw CategoryParseError("unbalanced '['", open);
      feature = std::string(text_.substr(fstart, pos_ - fstart));
      ++pos_;
    }
    return Category::atom(std::move(name), std::move(feature));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Category parse_category(std::string_view text) {
  return detail::CategoryParser(text).parse();
}

enum class CategoryStyle {
  Minimal,  // only arguments that are functors get parentheses
  Ccgbank,  // functor results are parenthesized too, as in CCGBank tag strings
};

inline void print_category(const Category& c, std::string& out, CategoryStyle style) {
  if (c.is_atom()) {
    out += c.name();
    if (c.has_feature()) {
      out += '[';
      out += c.feature();
      out += ']';
    }
    return;
  }
  auto emit = [&](const Category& part, bool parens) {
    if (parens) out += '(';
    print_category(part, out, style);
    if (parens) out += ')';
  };
  emit(c.result(), style == CategoryStyle::Ccgbank && c.result().is_functor());
  out += c.kind() == Category::Kind::Forward ? '/' : '\\';
  emit(c.argument(), c.argument().is_functor());
}

inline std::string print_category(const Category& c,
                                  CategoryStyle style = CategoryStyle::Minimal) {
  std::string out;
  print_category(c, out, style);
  return out;
}

// Number of arguments along the result spine: N -> 0, (S\NP)/NP -> 2.
inline std::size_t category_arity(const Category& c) {
  std::size_t n = 0;
  for (const Category* p = &c; p->is_functor(); p = &p->result()) ++n;
  return n;
}

struct TagsetValidation {
  std::size_t parsed = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // tag, message
  bool ok() const { return failures.empty(); }
};

inline TagsetValidation validate_tagset(const std::vector<std::string>& tags) {
  TagsetValidation v;
  for (const auto& tag : tags) {
    try {
      parse_category(tag);
      ++v.parsed;
    } catch (const CategoryParseError& e) {
      v.failures.emplace_back(tag, e.what());
    }
  }
  return v;
}

}  // namespace dynwin
