#pragma once

// Taggers built on gated context windows.
//
//   mlp     h_t = tanh(W_xh x~_t + b_h)
//   elman   h_t = tanh(W_xh x~_t + s_t W_hh h_{t-1} + b_h)
//   jordan  h_t = tanh(W_xh x~_t + s_t W_yh y_{t-1} + b_h)
//   lstm    forward LSTM stack over x~_t
//   bilstm  stacked bidirectional LSTM, layer l > 1 reads [fwd_h; bwd_h] of l - 1
//
// with y_t = softmax(W_hy drop(h_t) + b_y) and the reset gate
// s_t = sigmoid(W_xs x_t + b_s) computed from the raw window. The Elman reset
// gate mirrors the Jordan form. Hidden dropout is applied to every layer
// output that feeds another layer, never to recurrent connections.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "dynwin/corpus.hpp"
#include "dynwin/error.hpp"
#include "dynwin/features.hpp"
#include "dynwin/gates.hpp"
#include "dynwin/numerics.hpp"

namespace dynwin {

enum class Architecture { Mlp, Elman, Jordan, Lstm, BiLstm };

inline std::string_view to_string(Architecture a) {
  switch (a) {
    case Architecture::Mlp: return "mlp";
    case Architecture::Elman: return "elman";
    case Architecture::Jordan: return "jordan";
    case Architecture::Lstm: return "lstm";
    case Architecture::BiLstm: return "bilstm";
  }
  return "?";
}

inline Architecture parse_architecture(std::string_view s) {
  for (auto a : {Architecture::Mlp, Architecture::Elman, Architecture::Jordan, Architecture::Lstm,
                 Architecture::BiLstm})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown architecture '" + std::string(s) +
                    "' (expected mlp, elman, jordan, lstm or bilstm)");
}

inline bool is_lstm(Architecture a) { return a == Architecture::Lstm || a == Architecture::BiLstm; }
inline bool is_vanilla_rnn(Architecture a) {
  return a == Architecture::Elman || a == Architecture::Jordan;
}

struct ModelConfig {
  Architecture arch = Architecture::BiLstm;
  GateVariant variant = GateVariant::ScalarConcat;
  FeatureConfig features;
  std::size_t hidden = 512;
  std::size_t depth = 2;  // LSTM layers per direction
  std::size_t gate_hidden = 64;
  double gate_drop_rate = 0.5;
  double hidden_drop_rate = 0.5;
  bool use_bias = true;
  bool sigmoid_candidate = false;  // LSTM candidate uses sigmoid instead of tanh
  double init_scale = 0.1;
  std::uint64_t seed = 1;

  // Ablations.
  std::optional<double> forced_gate;   // every filter gate fixed to this value
  std::optional<double> forced_reset;  // reset gate s_t fixed to this value
  bool detach_gate_path = false;

  GateShape gate_shape() const {
    return {variant, features.slots(), features.token_dim(), gate_hidden};
  }

  void validate() const {
    features.validate();
    if (hidden == 0) throw ConfigError("hidden must be >= 1");
    if (is_lstm(arch) && depth == 0) throw ConfigError("depth must be >= 1");
    if (!(gate_drop_rate >= 0.0 && gate_drop_rate < 1.0))
      throw ConfigError("drop_rate must be in [0, 1)");
    if (!(hidden_drop_rate >= 0.0 && hidden_drop_rate < 1.0))
      throw ConfigError("hidden_drop_rate must be in [0, 1)");
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be > 0");
    if (variant == GateVariant::TwoLayer && gate_hidden == 0)
      throw ConfigError("gate_hidden must be >= 1");
  }
};

// One sentence as table ids, with gold tag ids when known.
struct Example {
  std::vector<TokenIds> tokens;
  std::vector<int> gold;
  std::size_t size() const { return tokens.size(); }
};

// ---------------------------------------------------------------------------
// LSTM

template <typename T>
struct BasicLstmState {
  std::vector<T> h;
  std::vector<T> c;
};

using LstmState = BasicLstmState<double>;

// Weights stacked by gate: rows [input; forget; output; candidate].
template <typename T>
struct BasicLstmLayer {
  using Vec = std::vector<T>;

  std::size_t hidden = 0;
  BasicParam<T> w_x;  // 4H x In
  BasicParam<T> w_h;  // 4H x H
  BasicParam<T> b;    // 4H x 1, optional

  BasicLstmLayer() = default;
  BasicLstmLayer(const std::string& prefix, std::size_t in, std::size_t h, bool use_bias, Rng& rng,
                 double init_scale)
      : hidden(h),
        w_x(prefix + ".W_x", init_gaussian(4 * h, in, in, rng, init_scale).template cast<T>()),
        w_h(prefix + ".W_h", BasicMatrix<T>(4 * h, h)) {
    for (std::size_t g = 0; g < 4; ++g) {
      const Matrix q = init_orthogonal(h, h, rng);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < h; ++c) w_h.value(g * h + r, c) = static_cast<T>(q(r, c));
    }
    if (use_bias) {
      b = BasicParam<T>(prefix + ".b", BasicMatrix<T>(4 * h, 1));
      for (std::size_t r = h; r < 2 * h; ++r) b.value(r, 0) = T(1);  // forget gate
    }
  }

  std::size_t input_dim() const { return w_x.value.cols(); }

  struct Step {
    Vec h_prev, c_prev;
    Vec gates;  // activated i, f, o, candidate
    Vec c, tanh_c, h;
  };

  void step(std::type_identity_t<std::span<const T>> x, const Vec& h_prev, const Vec& c_prev,
            bool sigmoid_candidate, Step& s) const {
    const std::size_t H = hidden;
    s.h_prev = h_prev;
    s.c_prev = c_prev;
    s.gates.assign(4 * H, T(0));
    gemv_acc(w_x.value, x, s.gates);
    gemv_acc(w_h.value, h_prev, s.gates);
    if (!b.value.empty()) axpy(T(1), b.value.data(), s.gates);
    for (std::size_t i = 0; i < 3 * H; ++i) s.gates[i] = sigmoid(s.gates[i]);
    for (std::size_t i = 3 * H; i < 4 * H; ++i)
      s.gates[i] = sigmoid_candidate ? sigmoid(s.gates[i]) : std::tanh(s.gates[i]);
    s.c.resize(H);
    s.tanh_c.resize(H);
    s.h.resize(H);
    for (std::size_t j = 0; j < H; ++j) {
      s.c[j] = s.gates[H + j] * c_prev[j] + s.gates[j] * s.gates[3 * H + j];
      s.tanh_c[j] = std::tanh(s.c[j]);
      s.h[j] = s.gates[2 * H + j] * s.tanh_c[j];
    }
  }

  // Runs over the sequence left to right, or right to left when `reverse`.
  // steps[t] always refers to sentence position t.
  void forward(std::span<const Vec> inputs, bool reverse, bool sigmoid_candidate,
               std::vector<Step>& steps) const {
    const std::size_t n = inputs.size();
    steps.assign(n, Step{});
    Vec h(hidden, T(0)), c(hidden, T(0));
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t t = reverse ? n - 1 - k : k;
      step(inputs[t], h, c, sigmoid_candidate, steps[t]);
      h = steps[t].h;
      c = steps[t].c;
    }
  }

  // BPTT. `dh[t]` is the gradient arriving at h_t from above; input
  // gradients are added into `dinputs[t]`.
  void backward(std::span<const Vec> inputs, bool reverse, bool sigmoid_candidate,
                const std::vector<Step>& steps, std::span<const Vec> dh,
                std::span<Vec> dinputs) {
    const std::size_t n = inputs.size();
    const std::size_t H = hidden;
    Vec dh_next(H, T(0)), dc_next(H, T(0)), dpre(4 * H);
    for (std::size_t k = n; k-- > 0;) {
      const std::size_t t = reverse ? n - 1 - k : k;
      const Step& s = steps[t];
      for (std::size_t j = 0; j < H; ++j) {
        const T dht = dh[t][j] + dh_next[j];
        const T i = s.gates[j], f = s.gates[H + j], o = s.gates[2 * H + j], g = s.gates[3 * H + j];
        const T dc = dc_next[j] + dht * o * tanh_grad_from_output(s.tanh_c[j]);
        dpre[j] = dc * g * sigmoid_grad_from_output(i);
        dpre[H + j] = dc * s.c_prev[j] * sigmoid_grad_from_output(f);
        dpre[2 * H + j] = dht * s.tanh_c[j] * sigmoid_grad_from_output(o);
        dpre[3 * H + j] =
            dc * i * (sigmoid_candidate ? sigmoid_grad_from_output(g) : tanh_grad_from_output(g));
        dc_next[j] = dc * f;
      }
      outer_acc(dpre, inputs[t], w_x.grad);
      outer_acc(dpre, s.h_prev, w_h.grad);
      if (!b.value.empty()) axpy(T(1), dpre, b.grad.data());
      gemv_t_acc(w_x.value, dpre, dinputs[t]);
      std::fill(dh_next.begin(), dh_next.end(), T(0));
      gemv_t_acc(w_h.value, dpre, dh_next);
    }
  }

  template <typename U>
  BasicLstmLayer<U> cast() const {
    BasicLstmLayer<U> out;
    out.hidden = hidden;
    out.w_x = w_x.template cast<U>();
    out.w_h = w_h.template cast<U>();
    out.b = b.template cast<U>();
    return out;
  }
};

using LstmLayer = BasicLstmLayer<double>;

// One LSTM block update; returns (h_t, c_t).
template <typename T>
BasicLstmState<T> lstm_step(const BasicLstmLayer<T>& layer,
                            std::type_identity_t<std::span<const T>> x,
                            const BasicLstmState<T>& prev, bool sigmoid_candidate = false) {
  typename BasicLstmLayer<T>::Step s;
  layer.step(x, prev.h, prev.c, sigmoid_candidate, s);
  return {s.h, s.c};
}

// ---------------------------------------------------------------------------

// Dropout on a hidden-layer output vector: Bernoulli mask in train mode,
// keep-probability scaling in test mode.
template <typename T = double>
std::vector<T> hidden_dropout_scale(std::size_t n, double rate, Mode mode, Rng* rng) {
  if (mode == Mode::Test) return std::vector<T>(n, static_cast<T>(1.0 - rate));
  if (rate == 0.0) return std::vector<T>(n, T(1));
  if (!rng) throw std::invalid_argument("hidden dropout in train mode needs an Rng");
  const Vector mask = dropout_mask(n, rate, *rng);
  return std::vector<T>(mask.begin(), mask.end());
}

// Negative log-likelihood averaged over tokens, log clamped at 1e-300.
template <typename T>
T nll_loss(std::span<const std::vector<T>> predictions, std::span<const int> gold) {
  if (predictions.size() != gold.size() || predictions.empty())
    throw std::invalid_argument("nll_loss: prediction/gold length mismatch");
  T sum = 0;
  for (std::size_t t = 0; t < gold.size(); ++t) {
    const auto g = static_cast<std::size_t>(gold[t]);
    if (g >= predictions[t].size()) throw std::invalid_argument("nll_loss: gold id out of range");
    sum -= std::log(std::max(predictions[t][g], static_cast<T>(1e-300)));
  }
  return sum / static_cast<T>(gold.size());
}

inline double nll_loss(std::span<const Vector> predictions, std::span<const int> gold) {
  return nll_loss<double>(predictions, gold);
}

template <ScalarRange R>
std::size_t argmax(const R& v) {
  return static_cast<std::size_t>(std::max_element(std::begin(v), std::end(v)) - std::begin(v));
}

// Everything a forward pass leaves behind for the backward pass.
template <typename T>
struct BasicTape {
  using Vec = std::vector<T>;

  std::vector<Vec> feats;
  Vec pad_feat;
  std::vector<Vec> windows;  // raw x_t
  std::vector<BasicGateCache<T>> gates;
  std::vector<Vec> gated;  // x~_t

  // mlp / elman / jordan
  std::vector<Vec> h;
  std::vector<Vec> rec;  // W_hh h_{t-1} or W_yh y_{t-1}
  std::vector<T> reset;

  // lstm stacks: inputs of each layer, steps per direction, output dropout
  std::vector<std::vector<Vec>> layer_in;
  std::vector<std::array<std::vector<typename BasicLstmLayer<T>::Step>, 2>> steps;
  std::vector<std::vector<Vec>> layer_scale;

  std::vector<Vec> top_scale;  // dropout on the hidden output (vanilla)
  std::vector<Vec> top;        // input of W_hy
  std::vector<Vec> probs;
};

template <typename T>
class BasicTagger {
 public:
  using Vec = std::vector<T>;
  using P = BasicParam<T>;

  BasicTagger(ModelConfig cfg, Lexicon lex) : BasicTagger(cfg, std::move(lex), Rng(cfg.seed)) {}

  BasicTagger(ModelConfig cfg, Lexicon lex, Rng rng) : cfg_(std::move(cfg)), lex_(std::move(lex)) {
    cfg_.validate();
    if (lex_.tags.size() < 1) throw ConfigError("tag set is empty");
    initialize(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const Lexicon& lexicon() const { return lex_; }
  std::size_t num_tags() const { return lex_.tags.size(); }
  const BasicLookupTables<T>& tables() const { return tables_; }
  BasicLookupTables<T>& tables() { return tables_; }

  // Same model with every parameter converted to another scalar type.
  template <typename U>
  BasicTagger<U> cast() const {
    BasicTagger<U> out(typename BasicTagger<U>::Uninitialized{}, cfg_, lex_);
    out.tables_ = tables_.template cast<U>();
    out.gate_ = gate_.template cast<U>();
    out.w_xh_ = w_xh_.template cast<U>();
    out.b_h_ = b_h_.template cast<U>();
    out.w_rec_ = w_rec_.template cast<U>();
    out.w_xs_ = w_xs_.template cast<U>();
    out.b_s_ = b_s_.template cast<U>();
    for (const auto& layer : lstm_) {
      std::vector<BasicLstmLayer<U>> dirs;
      for (const auto& dir : layer) dirs.push_back(dir.template cast<U>());
      out.lstm_.push_back(std::move(dirs));
    }
    out.w_hy_ = w_hy_.template cast<U>();
    out.b_y_ = b_y_.template cast<U>();
    return out;
  }

  std::vector<TokenIds> encode(std::span<const std::string> surfaces) const {
    std::vector<TokenIds> out;
    out.reserve(surfaces.size());
    for (const auto& s : surfaces) out.push_back(encode_token(lex_, cfg_.features, s));
    return out;
  }

  Example encode(const Sentence& s) const {
    Example ex;
    for (const auto& t : s.tokens) {
      ex.tokens.push_back(encode_token(lex_, cfg_.features, t.surface));
      ex.gold.push_back(lex_.tags.id(t.tag));
    }
    return ex;
  }

  std::vector<Example> encode(const std::vector<Sentence>& corpus) const {
    std::vector<Example> out;
    out.reserve(corpus.size());
    for (const auto& s : corpus) out.push_back(encode(s));
    return out;
  }

  // Per-token tag distributions.
  std::vector<Vec> predict(std::span<const TokenIds> tokens, Mode mode = Mode::Test,
                           Rng* rng = nullptr) const {
    if (tokens.empty()) return {};
    BasicTape<T> tape;
    forward(tokens, mode, rng, tape);
    return std::move(tape.probs);
  }

  std::vector<int> tag(std::span<const TokenIds> tokens) const {
    std::vector<int> out;
    for (const auto& p : predict(tokens)) out.push_back(static_cast<int>(argmax(p)));
    return out;
  }

  T loss(const Example& ex, Mode mode, Rng* rng) const {
    BasicTape<T> tape;
    forward(ex.tokens, mode, rng, tape);
    return nll_loss<T>(tape.probs, ex.gold);
  }

  // Forward + backward; gradients are added to every parameter's accumulator.
  T loss_and_grad(const Example& ex, Mode mode, Rng* rng) {
    BasicTape<T> tape;
    forward(ex.tokens, mode, rng, tape);
    const T l = nll_loss<T>(tape.probs, ex.gold);
    backward(ex, tape);
    return l;
  }

  // Filter-gate activations r_t (before dropout or test-time scaling).
  std::vector<Vec> gate_activations(std::span<const TokenIds> tokens) const {
    if (cfg_.variant == GateVariant::None) throw ConfigError("model has no filter gates");
    BasicTape<T> tape;
    forward(tokens, Mode::Test, nullptr, tape);
    std::vector<Vec> out;
    for (auto& g : tape.gates) out.push_back(std::move(g.r));
    return out;
  }

  std::vector<P*> params() {
    std::vector<P*> out{&tables_.word, &tables_.cap, &tables_.chars};
    for (P* p : gate_.all()) out.push_back(p);
    for (P* p : {&w_xh_, &b_h_, &w_rec_, &w_xs_, &b_s_})
      if (!p->value.empty()) out.push_back(p);
    for (auto& layer : lstm_)
      for (auto& dir : layer)
        for (P* p : {&dir.w_x, &dir.w_h, &dir.b})
          if (!p->value.empty()) out.push_back(p);
    for (P* p : {&w_hy_, &b_y_})
      if (!p->value.empty()) out.push_back(p);
    return out;
  }

  std::vector<const P*> params() const {
    std::vector<const P*> out;
    for (P* p : const_cast<BasicTagger*>(this)->params()) out.push_back(p);
    return out;
  }

  P* find_param(std::string_view name) {
    for (P* p : params())
      if (p->name == name) return p;
    return nullptr;
  }

  void zero_grad() {
    for (P* p : params()) p->zero_grad();
  }

  void sgd_step(double lr) {
    for (P* p : params()) p->sgd_update(static_cast<T>(lr));
  }

 private:
  template <typename U>
  friend class BasicTagger;

  struct Uninitialized {};
  BasicTagger(Uninitialized, ModelConfig cfg, Lexicon lex)
      : cfg_(std::move(cfg)), lex_(std::move(lex)) {}

  bool bidirectional() const { return cfg_.arch == Architecture::BiLstm; }
  std::size_t directions() const { return bidirectional() ? 2 : 1; }

  GateOptions gate_options() const {
    return {cfg_.gate_drop_rate, cfg_.forced_gate, cfg_.detach_gate_path};
  }

  static P make(std::string name, const Matrix& m) { return P(std::move(name), m.cast<T>()); }

  // Gate weights are drawn last so that models differing only in the gate
  // variant share every other weight for a given seed.
  void initialize(Rng& rng) {
    const double sc = cfg_.init_scale;
    const GateShape shape = cfg_.gate_shape();
    const std::size_t in = shape.output_dim();
    const std::size_t window = shape.input_dim();
    const std::size_t H = cfg_.hidden;
    const std::size_t K = lex_.tags.size();
    tables_ = BasicLookupTables<T>(lex_, cfg_.features, rng, sc);

    std::size_t top_dim = H;
    if (is_lstm(cfg_.arch)) {
      lstm_.clear();
      std::size_t layer_in = in;
      for (std::size_t l = 0; l < cfg_.depth; ++l) {
        std::vector<BasicLstmLayer<T>> dirs;
        for (std::size_t d = 0; d < directions(); ++d)
          dirs.emplace_back("lstm.L" + std::to_string(l + 1) + (d == 0 ? ".fwd" : ".bwd"),
                            layer_in, H, cfg_.use_bias, rng, sc);
        lstm_.push_back(std::move(dirs));
        layer_in = H * directions();
      }
      top_dim = layer_in;
    } else {
      w_xh_ = make("W_xh", init_gaussian(H, in, in, rng, sc));
      if (cfg_.use_bias) b_h_ = make("b_h", Matrix(H, 1));
      if (cfg_.arch == Architecture::Elman) w_rec_ = make("W_hh", init_orthogonal(H, H, rng));
      if (cfg_.arch == Architecture::Jordan) w_rec_ = make("W_yh", init_orthogonal(H, K, rng));
      if (is_vanilla_rnn(cfg_.arch)) {
        w_xs_ = make("W_xs", init_gaussian(1, window, window, rng, sc));
        if (cfg_.use_bias) b_s_ = make("b_s", Matrix(1, 1));
      }
    }
    w_hy_ = make("W_hy", init_gaussian(K, top_dim, top_dim, rng, sc));
    if (cfg_.use_bias) b_y_ = make("b_y", Matrix(K, 1));
    gate_ = make_gate_params(shape, cfg_.use_bias, rng, sc).template cast<T>();
  }

  void output_layer(std::span<const T> top, Vec& probs) const {
    Vec z(num_tags(), T(0));
    gemv_acc(w_hy_.value, top, z);
    if (!b_y_.value.empty()) axpy(T(1), b_y_.value.data(), z);
    probs = softmax(z);
  }

  void forward(std::span<const TokenIds> tokens, Mode mode, Rng* rng, BasicTape<T>& tape) const {
    const std::size_t n = tokens.size();
    const std::size_t radius = cfg_.features.window_radius;
    const GateShape shape = cfg_.gate_shape();
    const GateOptions gopt = gate_options();

    tape.feats.clear();
    for (const auto& ids : tokens) tape.feats.push_back(token_feature(tables_, ids));
    tape.pad_feat = token_feature(tables_, pad_token_ids(cfg_.features));
    tape.windows.resize(n);
    tape.gates.assign(n, BasicGateCache<T>{});
    tape.gated.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      tape.windows[t] = context_window<T>(tape.feats, t, radius, tape.pad_feat);
      tape.gated[t] = gated_window(gate_, shape, gopt, tape.windows[t], mode, rng, tape.gates[t]);
    }

    tape.probs.resize(n);
    tape.top.resize(n);
    if (is_lstm(cfg_.arch))
      forward_lstm(mode, rng, tape);
    else
      forward_vanilla(mode, rng, tape);
  }

  void forward_vanilla(Mode mode, Rng* rng, BasicTape<T>& tape) const {
    const std::size_t n = tape.gated.size();
    const std::size_t H = cfg_.hidden;
    const bool recurrent = is_vanilla_rnn(cfg_.arch);
    tape.h.resize(n);
    tape.top_scale.resize(n);
    tape.rec.assign(recurrent ? n : 0, Vec{});
    tape.reset.assign(recurrent ? n : 0, T(0));
    for (std::size_t t = 0; t < n; ++t) {
      Vec a(H, T(0));
      gemv_acc(w_xh_.value, tape.gated[t], a);
      if (!b_h_.value.empty()) axpy(T(1), b_h_.value.data(), a);
      if (recurrent) {
        T s;
        if (cfg_.forced_reset) {
          s = static_cast<T>(*cfg_.forced_reset);
        } else {
          T as = dot(w_xs_.value.row(0), tape.windows[t]);
          if (!b_s_.value.empty()) as += b_s_.value(0, 0);
          s = sigmoid(as);
        }
        tape.reset[t] = s;
        Vec q(H, T(0));
        if (t > 0)
          gemv_acc(w_rec_.value,
                   cfg_.arch == Architecture::Elman ? tape.h[t - 1] : tape.probs[t - 1], q);
        for (std::size_t j = 0; j < H; ++j) a[j] += s * q[j];
        tape.rec[t] = std::move(q);
      }
      tape.h[t] = tanh(a);
      tape.top_scale[t] = hidden_dropout_scale<T>(H, cfg_.hidden_drop_rate, mode, rng);
      tape.top[t] = hadamard(tape.h[t], tape.top_scale[t]);
      output_layer(tape.top[t], tape.probs[t]);
    }
  }

  void forward_lstm(Mode mode, Rng* rng, BasicTape<T>& tape) const {
    const std::size_t n = tape.gated.size();
    const std::size_t L = lstm_.size();
    tape.layer_in.assign(L, {});
    tape.steps.assign(L, {});
    tape.layer_scale.assign(L, {});
    std::vector<Vec> in = tape.gated;
    for (std::size_t l = 0; l < L; ++l) {
      tape.layer_in[l] = std::move(in);
      for (std::size_t d = 0; d < lstm_[l].size(); ++d)
        lstm_[l][d].forward(tape.layer_in[l], d == 1, cfg_.sigmoid_candidate, tape.steps[l][d]);
      std::vector<Vec> out(n);
      tape.layer_scale[l].resize(n);
      for (std::size_t t = 0; t < n; ++t) {
        Vec h = tape.steps[l][0][t].h;
        if (lstm_[l].size() == 2) h = concat(h, tape.steps[l][1][t].h);
        tape.layer_scale[l][t] = hidden_dropout_scale<T>(h.size(), cfg_.hidden_drop_rate, mode, rng);
        out[t] = hadamard(h, tape.layer_scale[l][t]);
      }
      in = std::move(out);
    }
    tape.top = std::move(in);
    for (std::size_t t = 0; t < n; ++t) output_layer(tape.top[t], tape.probs[t]);
  }

  void backward(const Example& ex, BasicTape<T>& tape) {
    const std::size_t n = ex.size();
    const std::size_t K = num_tags();
    const T inv_n = T(1) / static_cast<T>(n);
    const GateShape shape = cfg_.gate_shape();
    const GateOptions gopt = gate_options();

    std::vector<Vec> dgated(n, Vec(shape.output_dim(), T(0)));
    std::vector<Vec> dwindow(n, Vec(shape.input_dim(), T(0)));

    auto output_backward = [&](std::size_t t, const Vec& dz) {
      outer_acc(dz, tape.top[t], w_hy_.grad);
      if (!b_y_.value.empty()) axpy(T(1), dz, b_y_.grad.data());
      Vec dtop(tape.top[t].size(), T(0));
      gemv_t_acc(w_hy_.value, dz, dtop);
      return dtop;
    };
    auto output_grad = [&](std::size_t t) {
      Vec dz = tape.probs[t];
      dz[static_cast<std::size_t>(ex.gold[t])] -= T(1);
      for (T& v : dz) v *= inv_n;
      return dz;
    };

    if (is_lstm(cfg_.arch)) {
      const std::size_t L = lstm_.size();
      const std::size_t H = cfg_.hidden;
      std::vector<Vec> dnext(n);
      for (std::size_t t = 0; t < n; ++t) dnext[t] = output_backward(t, output_grad(t));
      for (std::size_t l = L; l-- > 0;) {
        std::vector<Vec> dfwd(n), dbwd(n);
        for (std::size_t t = 0; t < n; ++t) {
          const Vec dout = hadamard(dnext[t], tape.layer_scale[l][t]);
          dfwd[t].assign(dout.begin(), dout.begin() + static_cast<long>(H));
          if (lstm_[l].size() == 2) dbwd[t].assign(dout.begin() + static_cast<long>(H), dout.end());
        }
        std::vector<Vec> din(n, Vec(lstm_[l][0].input_dim(), T(0)));
        lstm_[l][0].backward(tape.layer_in[l], false, cfg_.sigmoid_candidate, tape.steps[l][0],
                             dfwd, din);
        if (lstm_[l].size() == 2)
          lstm_[l][1].backward(tape.layer_in[l], true, cfg_.sigmoid_candidate, tape.steps[l][1],
                               dbwd, din);
        dnext = std::move(din);
      }
      dgated = std::move(dnext);
    } else {
      const std::size_t H = cfg_.hidden;
      const bool elman = cfg_.arch == Architecture::Elman;
      const bool jordan = cfg_.arch == Architecture::Jordan;
      Vec dh_carry(H, T(0));  // elman: into h_t from step t + 1
      Vec dy_carry(K, T(0));  // jordan: into y_t from step t + 1
      for (std::size_t t = n; t-- > 0;) {
        Vec dz = output_grad(t);
        if (jordan) {
          const Vec& y = tape.probs[t];
          const T yd = dot(y, dy_carry);
          for (std::size_t k = 0; k < K; ++k) dz[k] += y[k] * (dy_carry[k] - yd);
        }
        Vec dh = hadamard(output_backward(t, dz), tape.top_scale[t]);
        if (elman) axpy(T(1), dh_carry, dh);
        Vec da(H);
        for (std::size_t j = 0; j < H; ++j) da[j] = dh[j] * tanh_grad_from_output(tape.h[t][j]);
        outer_acc(da, tape.gated[t], w_xh_.grad);
        if (!b_h_.value.empty()) axpy(T(1), da, b_h_.grad.data());
        gemv_t_acc(w_xh_.value, da, dgated[t]);
        if (elman || jordan) {
          const T s = tape.reset[t];
          const T ds = dot(da, tape.rec[t]);
          Vec dq(H);
          for (std::size_t j = 0; j < H; ++j) dq[j] = s * da[j];
          if (t > 0) {
            const Vec& prev = elman ? tape.h[t - 1] : tape.probs[t - 1];
            outer_acc(dq, prev, w_rec_.grad);
            Vec& carry = elman ? dh_carry : dy_carry;
            std::fill(carry.begin(), carry.end(), T(0));
            gemv_t_acc(w_rec_.value, dq, carry);
          }
          if (!cfg_.forced_reset) {
            const T das = ds * sigmoid_grad_from_output(s);
            axpy(das, tape.windows[t], w_xs_.grad.row(0));
            if (!b_s_.value.empty()) b_s_.grad(0, 0) += das;
            axpy(das, w_xs_.value.row(0), dwindow[t]);
          }
        }
      }
    }

    // Gates, windows, lookup tables.
    std::vector<Vec> dfeat(n, Vec(shape.token_dim, T(0)));
    Vec dpad(shape.token_dim, T(0));
    for (std::size_t t = 0; t < n; ++t) {
      gate_backward(gate_, shape, gopt, tape.windows[t], tape.gates[t], dgated[t], dwindow[t]);
      context_window_backward<T>(dwindow[t], t, cfg_.features.window_radius, dfeat, dpad);
    }
    for (std::size_t t = 0; t < n; ++t) token_feature_backward(tables_, ex.tokens[t], dfeat[t]);
    token_feature_backward(tables_, pad_token_ids(cfg_.features), dpad);
  }

  ModelConfig cfg_;
  Lexicon lex_;
  BasicLookupTables<T> tables_;
  BasicGateParams<T> gate_;
  P w_xh_, b_h_, w_rec_, w_xs_, b_s_;
  std::vector<std::vector<BasicLstmLayer<T>>> lstm_;
  P w_hy_, b_y_;
};

using Tagger = BasicTagger<double>;

}  // namespace dynwin
