#pragma once

// Model file, version 1. Plain text:
//
//   dynwin-model<TAB>1
//   <key><TAB><value>          one line per configuration field and size
//   end
//   <id><TAB><token>           word vocabulary, then characters, then tags
//   param<TAB><name><TAB><rows><TAB><cols>
//   <row values>               one matrix row per line, shortest round-trip decimals
//
// Loading rejects unknown versions, unknown or missing keys, and any payload
// whose shape disagrees with the header.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>

#include "dynwin/corpus.hpp"
#include "dynwin/error.hpp"
#include "dynwin/networks.hpp"

namespace dynwin {

class ModelFormatError : public DataError {
 public:
  using DataError::DataError;
};

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, end);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size())
    throw ModelFormatError("model: unreadable number '" + std::string(s) + "'");
  return v;
}

inline std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string("none");
}

}  // namespace detail

inline void save_model(const Tagger& model, std::ostream& out) {
  const ModelConfig& c = model.config();
  const Lexicon& lex = model.lexicon();
  const auto params = model.params();
  using detail::format_double;
  out << "dynwin-model\t" << kModelFormatVersion << '\n';
  out << "arch\t" << to_string(c.arch) << '\n';
  out << "variant\t" << to_string(c.variant) << '\n';
  out << "word_dim\t" << c.features.word_dim << '\n';
  out << "cap_dim\t" << c.features.cap_dim << '\n';
  out << "char_dim\t" << c.features.char_dim << '\n';
  out << "chars_per_side\t" << c.features.chars_per_side << '\n';
  out << "window_radius\t" << c.features.window_radius << '\n';
  out << "hidden\t" << c.hidden << '\n';
  out << "depth\t" << c.depth << '\n';
  out << "gate_hidden\t" << c.gate_hidden << '\n';
  out << "drop_rate\t" << format_double(c.gate_drop_rate) << '\n';
  out << "hidden_drop_rate\t" << format_double(c.hidden_drop_rate) << '\n';
  out << "use_bias\t" << (c.use_bias ? 1 : 0) << '\n';
  out << "sigmoid_candidate\t" << (c.sigmoid_candidate ? 1 : 0) << '\n';
  out << "init_scale\t" << format_double(c.init_scale) << '\n';
  out << "seed\t" << c.seed << '\n';
  out << "forced_gate\t" << detail::format_optional(c.forced_gate) << '\n';
  out << "forced_reset\t" << detail::format_optional(c.forced_reset) << '\n';
  out << "detach_gate_path\t" << (c.detach_gate_path ? 1 : 0) << '\n';
  out << "words\t" << lex.words.size() << '\n';
  out << "chars\t" << lex.chars.size() << '\n';
  out << "tags\t" << lex.tags.size() << '\n';
  out << "params\t" << params.size() << '\n';
  out << "end\n";
  lex.words.save(out);
  lex.chars.save(out);
  lex.tags.save(out);
  for (const Param* p : params) {
    out << "param\t" << p->name << '\t' << p->value.rows() << '\t' << p->value.cols() << '\n';
    for (std::size_t r = 0; r < p->value.rows(); ++r) {
      const auto row = p->value.row(r);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (j) out << ' ';
        out << format_double(row[j]);
      }
      out << '\n';
    }
  }
}

inline void save_model(const Tagger& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file '" + path + "'");
  save_model(model, out);
  if (!out) throw DataError("error writing model file '" + path + "'");
}

inline Tagger load_model(std::istream& in, std::optional<Architecture> expected = std::nullopt) {
  std::string line;
  if (!std::getline(in, line)) throw ModelFormatError("model: empty file");
  {
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.substr(0, tab) != "dynwin-model")
      throw ModelFormatError("model: not a dynwin model file");
    if (line.substr(tab + 1) != std::to_string(kModelFormatVersion))
      throw ModelFormatError("model: unsupported format version '" + line.substr(tab + 1) + "'");
  }
  std::map<std::string, std::string> header;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ModelFormatError("model: bad header line '" + line + "'");
    header[line.substr(0, tab)] = line.substr(tab + 1);
  }
  if (!ended) throw ModelFormatError("model: truncated header");

  auto take = [&](const std::string& key) {
    auto it = header.find(key);
    if (it == header.end()) throw ModelFormatError("model: header key '" + key + "' missing");
    std::string v = it->second;
    header.erase(it);
    return v;
  };
  auto take_size = [&](const std::string& key) -> std::size_t {
    const std::string v = take(key);
    std::size_t out = 0;
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || end != v.data() + v.size())
      throw ModelFormatError("model: bad value for '" + key + "'");
    return out;
  };
  auto take_double = [&](const std::string& key) { return detail::parse_double(take(key)); };
  auto take_optional = [&](const std::string& key) -> std::optional<double> {
    const std::string v = take(key);
    if (v == "none") return std::nullopt;
    return detail::parse_double(v);
  };

  ModelConfig c;
  try {
    c.arch = parse_architecture(take("arch"));
    c.variant = parse_gate_variant(take("variant"));
  } catch (const ConfigError& e) {
    throw ModelFormatError(std::string("model: ") + e.what());
  }
  if (expected && *expected != c.arch)
    throw ModelFormatError("model: file holds a '" + std::string(to_string(c.arch)) +
                           "' model, expected '" + std::string(to_string(*expected)) + "'");
  c.features.word_dim = take_size("word_dim");
  c.features.cap_dim = take_size("cap_dim");
  c.features.char_dim = take_size("char_dim");
  c.features.chars_per_side = take_size("chars_per_side");
  c.features.window_radius = take_size("window_radius");
  c.hidden = take_size("hidden");
  c.depth = take_size("depth");
  c.gate_hidden = take_size("gate_hidden");
  c.gate_drop_rate = take_double("drop_rate");
  c.hidden_drop_rate = take_double("hidden_drop_rate");
  c.use_bias = take_size("use_bias") != 0;
  c.sigmoid_candidate = take_size("sigmoid_candidate") != 0;
  c.init_scale = take_double("init_scale");
  c.seed = take_size("seed");
  c.forced_gate = take_optional("forced_gate");
  c.forced_reset = take_optional("forced_reset");
  c.detach_gate_path = take_size("detach_gate_path") != 0;
  const std::size_t n_words = take_size("words");
  const std::size_t n_chars = take_size("chars");
  const std::size_t n_tags = take_size("tags");
  const std::size_t n_params = take_size("params");
  if (!header.empty())
    throw ModelFormatError("model: unknown header key '" + header.begin()->first + "'");

  Lexicon lex;
  lex.words = Vocab::load(in, n_words);
  lex.chars = Vocab::load(in, n_chars);
  lex.tags = TagSet::load(in, n_tags);

  std::optional<Tagger> model;
  try {
    model.emplace(c, std::move(lex), Rng(c.seed));
  } catch (const ConfigError& e) {
    throw ModelFormatError(std::string("model: inconsistent header: ") + e.what());
  }
  auto params = model->params();
  if (params.size() != n_params)
    throw ModelFormatError("model: header declares " + std::to_string(n_params) +
                           " parameter blocks, configuration implies " +
                           std::to_string(params.size()));
  for (Param* p : params) {
    if (!std::getline(in, line)) throw ModelFormatError("model: truncated before '" + p->name + "'");
    const std::string expect = "param\t" + p->name + '\t' + std::to_string(p->value.rows()) + '\t' +
                               std::to_string(p->value.cols());
    if (line != expect)
      throw ModelFormatError("model: expected block '" + expect + "', found '" + line + "'");
    for (std::size_t r = 0; r < p->value.rows(); ++r) {
      if (!std::getline(in, line)) throw ModelFormatError("model: truncated in '" + p->name + "'");
      const auto fields = split_ws(line);
      if (fields.size() != p->value.cols())
        throw ModelFormatError("model: row " + std::to_string(r) + " of '" + p->name +
                               "' has wrong length");
      for (std::size_t j = 0; j < fields.size(); ++j)
        p->value(r, j) = detail::parse_double(fields[j]);
    }
  }
  return std::move(*model);
}

inline Tagger load_model(const std::string& path,
                         std::optional<Architecture> expected = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read model file '" + path + "'");
  return load_model(in, expected);
}

}  // namespace dynwin
