#pragma once

// Dynamic-window filter gates.
//
// A window x = [f_1; ...; f_d] (d = 2 * radius + 1 slots of F features) is
// filtered by logistic gates r computed from x itself:
//
//   ScalarConcat     r = sigmoid(W_xr x) in R^d,   x~ = [r_1 f_1; ...; r_d f_d]
//   Elementwise      r = sigmoid(W_xr x) in R^I,   x~ = r (.) x
//   TwoLayer         u = sigmoid(W_xu x), r = sigmoid(W_ur u) in R^d, concat as above
//   WeightedAverage  r = sigmoid(W_xr x) in R^d,   x~ = sum_k r_k f_k  (size F)
//
// Word-level dropout multiplies r by a Bernoulli keep mask at train time and
// by the keep probability (1 - drop_rate) at test time. `None` is the plain
// window without gates.

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "dynwin/error.hpp"
#include "dynwin/numerics.hpp"

namespace dynwin {

enum class Mode { Train, Test };

enum class GateVariant { None, ScalarConcat, Elementwise, TwoLayer, WeightedAverage };

inline std::string_view to_string(GateVariant v) {
  switch (v) {
    case GateVariant::None: return "none";
    case GateVariant::ScalarConcat: return "scalar";
    case GateVariant::Elementwise: return "elementwise";
    case GateVariant::TwoLayer: return "twolayer";
    case GateVariant::WeightedAverage: return "average";
  }
  return "?";
}

inline GateVariant parse_gate_variant(std::string_view s) {
  for (auto v : {GateVariant::None, GateVariant::ScalarConcat, GateVariant::Elementwise,
                 GateVariant::TwoLayer, GateVariant::WeightedAverage})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown gate variant '" + std::string(s) +
                    "' (expected none, scalar, elementwise, twolayer or average)");
}

// True when the variant emits one gate per window slot.
inline bool gates_per_slot(GateVariant v) {
  return v == GateVariant::ScalarConcat || v == GateVariant::TwoLayer ||
         v == GateVariant::WeightedAverage;
}

struct GateShape {
  GateVariant variant = GateVariant::ScalarConcat;
  std::size_t slots = 3;      // d
  std::size_t token_dim = 1;  // F
  std::size_t hidden = 64;    // u, TwoLayer only

  std::size_t input_dim() const { return slots * token_dim; }
  std::size_t gate_dim() const {
    switch (variant) {
      case GateVariant::None: return 0;
      case GateVariant::Elementwise: return input_dim();
      default: return slots;
    }
  }
  std::size_t output_dim() const {
    return variant == GateVariant::WeightedAverage ? token_dim : input_dim();
  }
};

template <typename T>
struct BasicGateParams {
  BasicParam<T> w_xr;  // gate_dim x I (TwoLayer: W_ur, gate_dim x u)
  BasicParam<T> b_r;   // gate_dim x 1, present when biases are enabled
  BasicParam<T> w_xu;  // TwoLayer only: u x I
  BasicParam<T> b_u;

  std::vector<BasicParam<T>*> all() {
    std::vector<BasicParam<T>*> out;
    for (BasicParam<T>* p : {&w_xu, &b_u, &w_xr, &b_r})
      if (!p->value.empty()) out.push_back(p);
    return out;
  }

  template <typename U>
  BasicGateParams<U> cast() const {
    return {w_xr.template cast<U>(), b_r.template cast<U>(), w_xu.template cast<U>(),
            b_u.template cast<U>()};
  }
};

using GateParams = BasicGateParams<double>;

inline GateParams make_gate_params(const GateShape& shape, bool use_bias, Rng& rng,
                                   double init_scale) {
  GateParams g;
  if (shape.variant == GateVariant::None) return g;
  const std::size_t in = shape.input_dim();
  if (shape.variant == GateVariant::TwoLayer) {
    if (shape.hidden == 0) throw ConfigError("gate_hidden must be >= 1");
    g.w_xu = Param("gate.W_xu", init_gaussian(shape.hidden, in, in, rng, init_scale));
    if (use_bias) g.b_u = Param("gate.b_u", Matrix(shape.hidden, 1));
    g.w_xr = Param("gate.W_ur", init_gaussian(shape.gate_dim(), shape.hidden, shape.hidden, rng,
                                              init_scale));
  } else {
    g.w_xr = Param("gate.W_xr", init_gaussian(shape.gate_dim(), in, in, rng, init_scale));
  }
  if (use_bias) g.b_r = Param("gate.b_r", Matrix(shape.gate_dim(), 1));
  return g;
}

// Activations kept from a forward pass for the backward pass.
template <typename T>
struct BasicGateCache {
  std::vector<T> u;      // TwoLayer hidden layer
  std::vector<T> r;      // gate activations
  std::vector<T> scale;  // dropout mask (train) or keep probability (test), per gate
  std::vector<T> gated;  // r (.) scale
};

using GateCache = BasicGateCache<double>;

// r = sigmoid(W_xr x), or sigmoid(W_ur sigmoid(W_xu x)) for TwoLayer.
template <typename T>
std::vector<T> gate_forward(const BasicGateParams<T>& p, const GateShape& shape,
                            std::type_identity_t<std::span<const T>> x,
                            std::vector<T>* hidden_out = nullptr) {
  if (x.size() != shape.input_dim())
    throw std::invalid_argument("gate_forward: window has wrong dimension");
  std::span<const T> src = x;
  std::vector<T> u;
  if (shape.variant == GateVariant::TwoLayer) {
    u.assign(shape.hidden, T(0));
    gemv_acc(p.w_xu.value, x, u);
    if (!p.b_u.value.empty()) axpy(T(1), p.b_u.value.data(), u);
    for (T& v : u) v = sigmoid(v);
    src = u;
  }
  std::vector<T> r(shape.gate_dim(), T(0));
  gemv_acc(p.w_xr.value, src, r);
  if (!p.b_r.value.empty()) axpy(T(1), p.b_r.value.data(), r);
  for (T& v : r) v = sigmoid(v);
  if (hidden_out) *hidden_out = std::move(u);
  return r;
}

// Multiplies gates into the window according to the variant.
template <ScalarRange X, ScalarRange R>
std::vector<range_scalar_t<X>> apply_gates(const X& window, const R& gates,
                                           const GateShape& shape) {
  using T = range_scalar_t<X>;
  const std::span<const T> x(window);
  const std::span<const T> r(gates);
  const std::size_t F = shape.token_dim;
  switch (shape.variant) {
    case GateVariant::None:
      return std::vector<T>(x.begin(), x.end());
    case GateVariant::Elementwise: {
      std::vector<T> out(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = r[i] * x[i];
      return out;
    }
    case GateVariant::WeightedAverage: {
      std::vector<T> out(F, T(0));
      for (std::size_t k = 0; k < shape.slots; ++k) axpy(r[k], x.subspan(k * F, F), out);
      return out;
    }
    default: {
      std::vector<T> out(x.size());
      for (std::size_t k = 0; k < shape.slots; ++k)
        for (std::size_t j = 0; j < F; ++j) out[k * F + j] = r[k] * x[k * F + j];
      return out;
    }
  }
}

// Train: r~ = mask (.) r with a fresh Bernoulli mask. Test: r~ = (1 - p) r.
// The multiplier actually used is written to `scale_out` when given.
template <ScalarRange R>
std::vector<range_scalar_t<R>> gate_dropout(const R& r, double drop_rate, Rng* rng, Mode mode,
                                            std::vector<range_scalar_t<R>>* scale_out = nullptr) {
  using T = range_scalar_t<R>;
  if (!(drop_rate >= 0.0 && drop_rate < 1.0))
    throw std::invalid_argument("gate_dropout: drop_rate must be in [0, 1)");
  const std::size_t n = std::size(r);
  std::vector<T> scale(n, T(1));
  if (mode == Mode::Train) {
    if (drop_rate > 0.0) {
      if (!rng) throw std::invalid_argument("gate_dropout: train mode needs an Rng");
      const Vector mask = dropout_mask(n, drop_rate, *rng);
      for (std::size_t i = 0; i < n; ++i) scale[i] = static_cast<T>(mask[i]);
    }
  } else {
    scale.assign(n, static_cast<T>(1.0 - drop_rate));
  }
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = scale[i] * r[i];
  if (scale_out) *scale_out = std::move(scale);
  return out;
}

struct GateOptions {
  double drop_rate = 0.5;
  std::optional<double> forced_value;  // replaces r by a constant (ablation)
  bool detach = false;                 // no gradient into x through the gate network
};

// Full forward: gates, dropout, application. Fills `cache` for backward.
template <typename T>
std::vector<T> gated_window(const BasicGateParams<T>& p, const GateShape& shape,
                            const GateOptions& opt, std::type_identity_t<std::span<const T>> x,
                            Mode mode, Rng* rng, BasicGateCache<T>& cache) {
  if (shape.variant == GateVariant::None) return std::vector<T>(x.begin(), x.end());
  if (opt.forced_value) {
    // Constant gates replace the whole mechanism, word dropout included.
    cache.r.assign(shape.gate_dim(), static_cast<T>(*opt.forced_value));
    cache.scale.assign(shape.gate_dim(), T(1));
    cache.gated = cache.r;
    return apply_gates(x, cache.gated, shape);
  }
  cache.r = gate_forward(p, shape, x, &cache.u);
  cache.gated = gate_dropout(cache.r, opt.drop_rate, rng, mode, &cache.scale);
  return apply_gates(x, cache.gated, shape);
}

// Backward of gated_window. Adds dL/dx (direct product path plus the path
// through the gate network unless detached) into `dx` and accumulates the
// gate parameter gradients. Masks are treated as constants.
template <typename T>
void gate_backward(BasicGateParams<T>& p, const GateShape& shape, const GateOptions& opt,
                   std::type_identity_t<std::span<const T>> x, const BasicGateCache<T>& cache,
                   std::type_identity_t<std::span<const T>> d_out,
                   std::type_identity_t<std::span<T>> dx) {
  const std::size_t F = shape.token_dim;
  const std::size_t d = shape.slots;
  if (shape.variant == GateVariant::None) {
    axpy(T(1), d_out, dx);
    return;
  }
  const std::vector<T>& g = cache.gated;
  std::vector<T> dgated(shape.gate_dim(), T(0));
  switch (shape.variant) {
    case GateVariant::Elementwise:
      for (std::size_t i = 0; i < x.size(); ++i) {
        dgated[i] = d_out[i] * x[i];
        dx[i] += g[i] * d_out[i];
      }
      break;
    case GateVariant::WeightedAverage:
      for (std::size_t k = 0; k < d; ++k) {
        dgated[k] = dot(d_out, x.subspan(k * F, F));
        axpy(g[k], d_out, dx.subspan(k * F, F));
      }
      break;
    default:
      for (std::size_t k = 0; k < d; ++k) {
        dgated[k] = dot(d_out.subspan(k * F, F), x.subspan(k * F, F));
        axpy(g[k], d_out.subspan(k * F, F), dx.subspan(k * F, F));
      }
      break;
  }
  if (opt.forced_value) return;

  // Through r = sigmoid(a).
  std::vector<T> da(dgated.size());
  for (std::size_t i = 0; i < da.size(); ++i)
    da[i] = dgated[i] * cache.scale[i] * sigmoid_grad_from_output(cache.r[i]);
  if (!p.b_r.value.empty()) axpy(T(1), da, p.b_r.grad.data());

  if (shape.variant == GateVariant::TwoLayer) {
    outer_acc(da, cache.u, p.w_xr.grad);
    std::vector<T> du(shape.hidden, T(0));
    gemv_t_acc(p.w_xr.value, da, du);
    for (std::size_t i = 0; i < du.size(); ++i) du[i] *= sigmoid_grad_from_output(cache.u[i]);
    outer_acc(du, x, p.w_xu.grad);
    if (!p.b_u.value.empty()) axpy(T(1), du, p.b_u.grad.data());
    if (!opt.detach) gemv_t_acc(p.w_xu.value, du, dx);
  } else {
    outer_acc(da, x, p.w_xr.grad);
    if (!opt.detach) gemv_t_acc(p.w_xr.value, da, dx);
  }
}

}  // namespace dynwin
