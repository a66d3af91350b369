#pragma once

// Run configuration: a registry of known keys with documented defaults, a
// "key = value" file reader, and resolution into model/training settings.
// Values are layered: command-line flag over config file over default.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "dynwin/error.hpp"
#include "dynwin/networks.hpp"
#include "dynwin/training.hpp"

namespace dynwin {

struct ConfigKey {
  std::string name;
  std::string default_value;  // empty: unset
  std::string help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"train", "", "training corpus (pipe format)"},
      {"dev", "", "development corpus (pipe format)"},
      {"test", "", "test corpus, evaluated with the best model after training"},
      {"embeddings", "", "pretrained word vectors, 'token v1 ... vn' per line"},
      {"model", "dynwin.model", "model output path"},
      {"history", "", "per-epoch history CSV (default: <model>.history.csv)"},
      {"arch", "bilstm", "mlp, elman, jordan, lstm or bilstm"},
      {"variant", "scalar", "filter gates: none, scalar, elementwise, twolayer or average"},
      {"word_dim", "200", "word embedding size"},
      {"cap_dim", "5", "capitalization embedding size"},
      {"char_dim", "5", "character embedding size"},
      {"chars_per_side", "5", "characters taken from each end of a word"},
      {"window_radius", "", "context slots on each side (default: 4 for mlp, 1 otherwise)"},
      {"hidden", "512", "hidden units per layer"},
      {"depth", "", "LSTM layers per direction (default: 1 for lstm, 2 for bilstm)"},
      {"gate_hidden", "64", "hidden units of the two-layer gate network"},
      {"drop_rate", "0.5", "dropout probability on the filter gates"},
      {"hidden_drop_rate", "0.5", "dropout probability on hidden-layer outputs"},
      {"use_bias", "1", "bias terms in every affine map (0 or 1)"},
      {"sigmoid_candidate", "0", "LSTM candidate uses sigmoid instead of tanh (0 or 1)"},
      {"init_scale", "0.1", "Gaussian init: sigma = init_scale / sqrt(fan_in)"},
      {"forced_gate", "", "fix every filter gate to this value (ablation)"},
      {"forced_reset", "", "fix the recurrent reset gate to this value (ablation)"},
      {"detach_gate_path", "0", "no gradient into the window through the gates (0 or 1)"},
      {"learning_rate", "0.02", "SGD step size"},
      {"epochs", "40", "training epochs"},
      {"shuffle", "1", "shuffle sentence order every epoch (0 or 1)"},
      {"seed", "1", "random seed for initialization, shuffling and dropout"},
      {"min_word_count", "1", "training words seen fewer times map to UNK"},
      {"min_tag_count", "1", "training tags seen fewer times map to RARE"},
      {"workers", "0", "evaluation threads (0: hardware concurrency)"},
  };
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

// Key-value layers. `set` validates the key name.
class RunConfig {
 public:
  void set(const std::string& key, const std::string& value) {
    if (!find_config_key(key)) throw ConfigError("unknown configuration key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  // Explicit value, or the registry default (empty when none).
  std::string get(const std::string& key) const {
    auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    const ConfigKey* k = find_config_key(key);
    if (!k) throw ConfigError("unknown configuration key '" + key + "'");
    return k->default_value;
  }

  // Values of `other` take precedence.
  void overlay(const RunConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// "key = value" lines; '#' starts a comment. Unknown keys are errors.
inline RunConfig parse_config(std::istream& in, const std::string& source = "config") {
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!find_config_key(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    cfg.set(key, value);
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(in, path);
}

namespace detail {

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || end != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc{} || end != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw ConfigError("'" + key + "' expects 0 or 1, got '" + v + "'");
}

}  // namespace detail

struct ResolvedConfig {
  ModelConfig model;
  TrainConfig train;
  LexiconOptions lexicon;
  std::size_t workers = 1;
};

inline ResolvedConfig resolve_config(const RunConfig& rc) {
  using namespace detail;
  ResolvedConfig r;
  auto count = [&](const char* k) { return parse_count(k, rc.get(k)); };
  auto real = [&](const char* k) { return parse_real(k, rc.get(k)); };
  auto flag = [&](const char* k) { return parse_flag(k, rc.get(k)); };
  auto optional_real = [&](const char* k) -> std::optional<double> {
    const std::string v = rc.get(k);
    if (v.empty() || v == "none") return std::nullopt;
    return parse_real(k, v);
  };

  ModelConfig& m = r.model;
  m.arch = parse_architecture(rc.get("arch"));
  m.variant = parse_gate_variant(rc.get("variant"));
  m.features.word_dim = count("word_dim");
  m.features.cap_dim = count("cap_dim");
  m.features.char_dim = count("char_dim");
  m.features.chars_per_side = count("chars_per_side");
  m.features.window_radius =
      rc.get("window_radius").empty() ? (m.arch == Architecture::Mlp ? 4 : 1) : count("window_radius");
  m.hidden = count("hidden");
  m.depth = rc.get("depth").empty() ? (m.arch == Architecture::BiLstm ? 2 : 1) : count("depth");
  m.gate_hidden = count("gate_hidden");
  m.gate_drop_rate = real("drop_rate");
  m.hidden_drop_rate = real("hidden_drop_rate");
  m.use_bias = flag("use_bias");
  m.sigmoid_candidate = flag("sigmoid_candidate");
  m.init_scale = real("init_scale");
  m.forced_gate = optional_real("forced_gate");
  m.forced_reset = optional_real("forced_reset");
  m.detach_gate_path = flag("detach_gate_path");
  m.seed = count("seed");
  m.validate();

  r.train.learning_rate = real("learning_rate");
  r.train.epochs = count("epochs");
  r.train.shuffle = flag("shuffle");
  r.train.seed = m.seed;
  r.train.validate();

  r.lexicon.min_word_count = count("min_word_count");
  r.lexicon.min_tag_count = count("min_tag_count");

  r.workers = count("workers");
  if (r.workers == 0) r.workers = std::max(1u, std::thread::hardware_concurrency());
  return r;
}

}  // namespace dynwin
