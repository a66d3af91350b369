// Filter gates, tagger architectures, the gradient oracle and training.

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "dynwin/gates.hpp"
#include "dynwin/gradcheck.hpp"
#include "dynwin/networks.hpp"
#include "dynwin/synthetic.hpp"
#include "dynwin/training.hpp"

using namespace dynwin;

namespace {

const std::vector<Architecture> kArchs = {Architecture::Mlp, Architecture::Elman,
                                          Architecture::Jordan, Architecture::Lstm,
                                          Architecture::BiLstm};
const std::vector<GateVariant> kGated = {GateVariant::ScalarConcat, GateVariant::Elementwise,
                                         GateVariant::TwoLayer, GateVariant::WeightedAverage};

std::vector<Sentence> toy_corpus(std::size_t n = 3, std::uint64_t seed = 5) {
  return generate_synthetic_corpus({.sentences = n, .seed = seed});
}

ModelConfig tiny_config(Architecture arch, GateVariant variant, std::uint64_t seed = 1) {
  ModelConfig c;
  c.arch = arch;
  c.variant = variant;
  c.features = {.word_dim = 2, .cap_dim = 1, .char_dim = 1, .chars_per_side = 1,
                .window_radius = 1};
  c.hidden = 4;
  c.depth = 2;
  c.gate_hidden = 3;
  c.init_scale = 1.0;
  c.seed = seed;
  return c;
}

double max_abs_diff(const Vector& a, const Vector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Vector mat_vec(const Matrix& m, const Vector& x) {
  Vector out(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out[r] += m(r, c) * x[c];
  return out;
}

Vector add(Vector a, const Vector& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

Vector column(const Param* p) {
  return p ? Vector(p->value.data().begin(), p->value.data().end()) : Vector{};
}

Vector plus_bias(Vector a, const Param* b) {
  if (b && !b->value.empty()) a = add(std::move(a), column(b));
  return a;
}

Vector apply(Vector v, double (*f)(double)) {
  for (double& x : v) x = f(x);
  return v;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double th(double x) { return std::tanh(x); }

Vector softmax_naive(const Vector& z) {
  const double m = *std::max_element(z.begin(), z.end());
  Vector y(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (y[i] = std::exp(z[i] - m));
  for (double& v : y) v /= s;
  return y;
}

// Straight-line recomputation of the test-mode forward pass from named
// parameters, for models without dropout and with per-slot gates.
std::vector<Vector> oracle_forward(Tagger& m, const std::vector<TokenIds>& tokens) {
  const ModelConfig& c = m.config();
  const std::size_t n = tokens.size(), F = c.features.token_dim(), d = c.features.slots();
  std::vector<Vector> feats;
  for (const auto& ids : tokens) feats.push_back(token_feature(m.tables(), ids));
  const Vector pad = token_feature(m.tables(), pad_token_ids(c.features));

  std::vector<Vector> windows, gated;
  for (std::size_t t = 0; t < n; ++t) {
    Vector x;
    for (std::size_t k = 0; k < d; ++k) {
      const long p = static_cast<long>(t + k) - static_cast<long>(c.features.window_radius);
      const Vector& f = p < 0 || p >= static_cast<long>(n) ? pad : feats[static_cast<std::size_t>(p)];
      x.insert(x.end(), f.begin(), f.end());
    }
    Vector xg = x;
    if (c.variant == GateVariant::ScalarConcat) {
      const Vector r =
          apply(plus_bias(mat_vec(m.find_param("gate.W_xr")->value, x), m.find_param("gate.b_r")),
                sig);
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t j = 0; j < F; ++j) xg[k * F + j] *= r[k];
    }
    windows.push_back(x);
    gated.push_back(xg);
  }

  const Param* why = m.find_param("W_hy");
  const Param* by = m.find_param("b_y");
  std::vector<Vector> probs(n);
  if (is_lstm(c.arch)) {
    std::vector<Vector> in = gated;
    for (std::size_t l = 1; l <= (c.arch == Architecture::BiLstm ? c.depth : c.depth); ++l) {
      std::vector<Vector> out(n);
      const std::size_t dirs = c.arch == Architecture::BiLstm ? 2 : 1;
      for (std::size_t dir = 0; dir < dirs; ++dir) {
        const std::string prefix =
            "lstm.L" + std::to_string(l) + (dir == 0 ? ".fwd" : ".bwd");
        const Param* wx = m.find_param(prefix + ".W_x");
        const Param* wh = m.find_param(prefix + ".W_h");
        const Param* b = m.find_param(prefix + ".b");
        const std::size_t H = c.hidden;
        Vector h(H, 0.0), cell(H, 0.0);
        std::vector<Vector> hs(n);
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t t = dir == 0 ? k : n - 1 - k;
          const Vector pre = plus_bias(add(mat_vec(wx->value, in[t]), mat_vec(wh->value, h)), b);
          for (std::size_t j = 0; j < H; ++j) {
            const double i = sig(pre[j]), f = sig(pre[H + j]), o = sig(pre[2 * H + j]);
            const double g = std::tanh(pre[3 * H + j]);
            cell[j] = f * cell[j] + i * g;
            h[j] = o * std::tanh(cell[j]);
          }
          hs[t] = h;
        }
        for (std::size_t t = 0; t < n; ++t) out[t].insert(out[t].end(), hs[t].begin(), hs[t].end());
      }
      in = out;
    }
    for (std::size_t t = 0; t < n; ++t)
      probs[t] = softmax_naive(plus_bias(mat_vec(why->value, in[t]), by));
    return probs;
  }

  const Param* wxh = m.find_param("W_xh");
  const Param* bh = m.find_param("b_h");
  Vector prev;
  for (std::size_t t = 0; t < n; ++t) {
    Vector a = plus_bias(mat_vec(wxh->value, gated[t]), bh);
    if (is_vanilla_rnn(c.arch) && t > 0) {
      const Param* wrec = m.find_param(c.arch == Architecture::Elman ? "W_hh" : "W_yh");
      const double s = c.forced_reset ? *c.forced_reset
                                      : sig(plus_bias(mat_vec(m.find_param("W_xs")->value,
                                                              windows[t]),
                                                      m.find_param("b_s"))[0]);
      const Vector q = mat_vec(wrec->value, prev);
      for (std::size_t j = 0; j < a.size(); ++j) a[j] += s * q[j];
    }
    const Vector h = apply(a, th);
    probs[t] = softmax_naive(plus_bias(mat_vec(why->value, h), by));
    prev = c.arch == Architecture::Jordan ? probs[t] : h;
  }
  return probs;
}

void copy_param(Tagger& from, Tagger& to, const std::string& name) {
  Param* a = from.find_param(name);
  Param* b = to.find_param(name);
  ASSERT_TRUE(a && b) << name;
  ASSERT_EQ(a->value.rows(), b->value.rows()) << name;
  ASSERT_EQ(a->value.cols(), b->value.cols()) << name;
  b->value = a->value;
}

}  // namespace

// ---------------------------------------------------------------------------
// Filter gates

TEST(Gates, ZeroWeightsGiveOneHalf) {
  Rng rng(1);
  GateShape shape{GateVariant::ScalarConcat, 3, 2, 4};
  GateParams p = make_gate_params(shape, false, rng, 1.0);
  p.w_xr.value.fill(0.0);
  for (double r : gate_forward(p, shape, Vector{1, 2, 3, 4, 5, 6})) EXPECT_EQ(r, 0.5);
}

TEST(Gates, OutputsInOpenUnitInterval) {
  Rng rng(2);
  for (GateVariant v : kGated) {
    GateShape shape{v, 3, 2, 4};
    GateParams p = make_gate_params(shape, true, rng, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      Vector x(shape.input_dim());
      for (double& e : x) e = rng.normal() * 3;
      const Vector r = gate_forward(p, shape, x);
      ASSERT_EQ(r.size(), shape.gate_dim());
      for (double e : r) {
        EXPECT_GT(e, 0.0);
        EXPECT_LT(e, 1.0);
      }
    }
  }
}

TEST(Gates, MatchesDirectOracle) {
  Rng rng(3);
  for (GateVariant v : kGated) {
    GateShape shape{v, 3, 2, 4};
    GateParams p = make_gate_params(shape, true, rng, 1.0);
    for (double& e : p.b_r.value.data()) e = rng.normal();
    if (v == GateVariant::TwoLayer)
      for (double& e : p.b_u.value.data()) e = rng.normal();
    Vector x(shape.input_dim());
    for (double& e : x) e = rng.normal();
    Vector src = x;
    if (v == GateVariant::TwoLayer) src = apply(add(mat_vec(p.w_xu.value, x), column(&p.b_u)), sig);
    const Vector want = apply(add(mat_vec(p.w_xr.value, src), column(&p.b_r)), sig);
    EXPECT_LT(max_abs_diff(gate_forward(p, shape, x), want), 1e-12) << to_string(v);
  }
}

TEST(Gates, DimensionMismatchRejected) {
  Rng rng(4);
  GateShape shape{GateVariant::ScalarConcat, 3, 2, 4};
  GateParams p = make_gate_params(shape, true, rng, 1.0);
  EXPECT_THROW(gate_forward(p, shape, Vector{1, 2, 3}), std::invalid_argument);
}

TEST(Gates, ApplyGates) {
  const GateShape sc{GateVariant::ScalarConcat, 3, 2, 4};
  const Vector x = {1, 2, 3, 4, 5, 6};
  EXPECT_EQ(apply_gates(x, Vector{1, 1, 1}, sc), x);
  EXPECT_EQ(apply_gates(x, Vector{0, 0, 0}, sc), Vector(6, 0.0));
  EXPECT_EQ(apply_gates(x, Vector{1, 0, 1}, sc), (Vector{1, 2, 0, 0, 5, 6}));
  const GateShape el{GateVariant::Elementwise, 3, 2, 4};
  EXPECT_EQ(apply_gates(x, Vector{1, 0, 1, 0, 1, 0}, el), (Vector{1, 0, 3, 0, 5, 0}));
  const GateShape avg{GateVariant::WeightedAverage, 3, 2, 4};
  EXPECT_EQ(apply_gates(x, Vector{1, 0.5, 2}, avg), (Vector{1 + 1.5 + 10, 2 + 2 + 12}));
}

TEST(Gates, OutputShapes) {
  for (GateVariant v : kGated) {
    const GateShape s{v, 9, 5, 4};
    EXPECT_EQ(s.output_dim(), v == GateVariant::WeightedAverage ? 5u : 45u) << to_string(v);
    EXPECT_EQ(s.gate_dim(), v == GateVariant::Elementwise ? 45u : 9u) << to_string(v);
  }
}

TEST(Gates, Dropout) {
  Rng rng(5);
  const Vector r = {0.2, 0.4, 0.9};
  EXPECT_EQ(gate_dropout(r, 0.0, &rng, Mode::Train), r);
  EXPECT_EQ(gate_dropout(r, 0.0, nullptr, Mode::Test), r);
  EXPECT_EQ(gate_dropout(r, 0.5, nullptr, Mode::Test), (Vector{0.1, 0.2, 0.45}));
  const Vector ones(50, 1.0);
  for (double e : gate_dropout(ones, 0.5, &rng, Mode::Train)) EXPECT_TRUE(e == 0.0 || e == 1.0);
  EXPECT_THROW(gate_dropout(r, 1.0, &rng, Mode::Train), std::invalid_argument);
}

TEST(Gates, DropoutExpectation) {
  Rng rng(6);
  const Vector r = {0.3, 0.8};
  const double p = 0.4;
  Vector sum(2, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Vector g = gate_dropout(r, p, &rng, Mode::Train);
    for (std::size_t k = 0; k < 2; ++k) {
      ASSERT_GE(g[k], 0.0);
      ASSERT_LT(g[k], 1.0);
      sum[k] += g[k];
    }
  }
  for (std::size_t k = 0; k < 2; ++k)
    EXPECT_NEAR(sum[k] / n, (1 - p) * r[k], 0.01 * (1 - p) * r[k]);
}

namespace {

// L = <c, gated_window(x)> with frozen masks.
template <typename T>
T gated_loss(const BasicGateParams<T>& p, const GateShape& shape, const GateOptions& opt,
             const std::vector<T>& x, const std::vector<T>& c, std::uint64_t seed) {
  Rng rng(seed);
  BasicGateCache<T> cache;
  const auto out = gated_window(p, shape, opt, x, Mode::Train, &rng, cache);
  T s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += c[i] * out[i];
  return s;
}

}  // namespace

TEST(Gates, BackwardMatchesFiniteDifferences) {
  for (GateVariant v : kGated)
    for (double drop : {0.0, 0.5}) {
      Rng rng(7);
      const GateShape shape{v, 3, 3, 4};
      GateParams p = make_gate_params(shape, true, rng, 1.0);
      for (double& e : p.b_r.value.data()) e = rng.normal();
      Vector x(shape.input_dim()), c(shape.output_dim());
      for (double& e : x) e = rng.normal();
      for (double& e : c) e = rng.normal();
      GateOptions opt;
      opt.drop_rate = drop;

      Rng mask(9);
      GateCache cache;
      gated_window(p, shape, opt, x, Mode::Train, &mask, cache);
      Vector dx(x.size(), 0.0);
      gate_backward(p, shape, opt, x, cache, c, dx);

      auto wide = p.cast<long double>();
      std::vector<long double> xw(x.begin(), x.end()), cw(c.begin(), c.end());
      auto loss = [&] { return gated_loss(wide, shape, opt, xw, cw, 9); };
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double num = static_cast<double>(finite_diff_grad(loss, xw[i], 1e-5L));
        EXPECT_LE(relative_error(dx[i], num), 1e-4) << to_string(v) << " x" << i;
      }
      auto blocks = p.all();
      auto wide_blocks = wide.all();
      for (std::size_t b = 0; b < blocks.size(); ++b)
        for (std::size_t i = 0; i < blocks[b]->value.size(); ++i) {
          const double num = static_cast<double>(
              finite_diff_grad(loss, wide_blocks[b]->value.data()[i], 1e-5L));
          EXPECT_LE(relative_error(blocks[b]->grad.data()[i], num), 1e-4)
              << to_string(v) << ' ' << blocks[b]->name << '[' << i << ']';
        }
    }
}

TEST(Gates, ZeroUpstreamGivesZeroParameterGradient) {
  for (GateVariant v : kGated) {
    Rng rng(8);
    const GateShape shape{v, 3, 2, 4};
    GateParams p = make_gate_params(shape, true, rng, 1.0);
    Vector x(shape.input_dim(), 0.7);
    GateCache cache;
    GateOptions opt;
    opt.drop_rate = 0.0;
    gated_window(p, shape, opt, x, Mode::Train, &rng, cache);
    Vector dx(x.size(), 0.0);
    gate_backward(p, shape, opt, x, cache, Vector(shape.output_dim(), 0.0), dx);
    for (Param* b : p.all())
      for (double g : b->grad.data()) EXPECT_EQ(g, 0.0);
    for (double g : dx) EXPECT_EQ(g, 0.0);
  }
}

TEST(Gates, DetachedGatePathLeavesOnlyTheProductTerm) {
  Rng rng(9);
  const GateShape shape{GateVariant::ScalarConcat, 3, 2, 4};
  GateParams p = make_gate_params(shape, true, rng, 1.0);
  Vector x(6), up(6);
  for (double& e : x) e = rng.normal();
  for (double& e : up) e = rng.normal();
  GateOptions opt;
  opt.drop_rate = 0.0;
  opt.detach = true;
  GateCache cache;
  gated_window(p, shape, opt, x, Mode::Train, &rng, cache);
  Vector dx(6, 0.0);
  gate_backward(p, shape, opt, x, cache, up, dx);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(dx[k * 2 + j], cache.r[k] * up[k * 2 + j]);
  bool any = false;
  for (double g : p.w_xr.grad.data()) any = any || g != 0.0;
  EXPECT_TRUE(any);  // the gate weights still learn
}

// ---------------------------------------------------------------------------
// Networks

TEST(Networks, ZeroWeightsGiveUniformOutputs) {
  const auto corpus = toy_corpus();
  for (Architecture a : kArchs) {
    Tagger m(tiny_config(a, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
    for (Param* p : m.params()) p->value.fill(0.0);
    const double k = static_cast<double>(m.num_tags());
    for (const auto& y : m.predict(m.encode(corpus[0]).tokens))
      for (double v : y) EXPECT_NEAR(v, 1.0 / k, 1e-15) << to_string(a);
  }
}

TEST(Networks, MatchesStraightLineOracle) {
  const auto corpus = toy_corpus();
  for (Architecture a : kArchs)
    for (GateVariant v : {GateVariant::None, GateVariant::ScalarConcat}) {
      ModelConfig c = tiny_config(a, v);
      c.gate_drop_rate = 0.0;
      c.hidden_drop_rate = 0.0;
      Tagger m(c, build_vocab_tagset(corpus));
      Example ex = m.encode(corpus[0]);
      ex.tokens.resize(3);
      const auto got = m.predict(ex.tokens);
      const auto want = oracle_forward(m, ex.tokens);
      for (std::size_t t = 0; t < got.size(); ++t)
        EXPECT_LT(max_abs_diff(got[t], want[t]), 1e-12) << to_string(a) << '/' << to_string(v);
    }
}

TEST(Networks, ProbabilitiesSumToOne) {
  const auto corpus = toy_corpus();
  for (Architecture a : kArchs)
    for (GateVariant v : kGated) {
      Tagger m(tiny_config(a, v), build_vocab_tagset(corpus));
      const auto ex = m.encode(corpus[1]);
      Rng rng(3);
      for (Mode mode : {Mode::Train, Mode::Test})
        for (const auto& y : m.predict(ex.tokens, mode, &rng)) {
          ASSERT_EQ(y.size(), m.num_tags());
          EXPECT_NEAR(std::accumulate(y.begin(), y.end(), 0.0), 1.0, 1e-12);
        }
    }
}

TEST(Networks, ForcedOpenGatesReproduceTheUngatedBaseline) {
  const auto corpus = toy_corpus();
  for (Architecture a : kArchs) {
    ModelConfig base = tiny_config(a, GateVariant::None);
    ModelConfig gated = base;
    gated.variant = GateVariant::ScalarConcat;
    gated.forced_gate = 1.0;
    Tagger m0(base, build_vocab_tagset(corpus)), m1(gated, build_vocab_tagset(corpus));
    for (const auto& s : corpus) {
      const Example ex = m0.encode(s);
      EXPECT_EQ(m0.predict(ex.tokens), m1.predict(ex.tokens)) << to_string(a);
      Rng r0(4), r1(4);
      EXPECT_EQ(m0.predict(ex.tokens, Mode::Train, &r0), m1.predict(ex.tokens, Mode::Train, &r1));
      Rng g0(5), g1(5);
      EXPECT_EQ(m0.loss_and_grad(ex, Mode::Train, &g0), m1.loss_and_grad(ex, Mode::Train, &g1));
    }
  }
}

TEST(Networks, JordanWithClosedResetGateIsAnMlp) {
  const auto corpus = toy_corpus();
  for (GateVariant v : {GateVariant::None, GateVariant::ScalarConcat, GateVariant::TwoLayer}) {
    ModelConfig jc = tiny_config(Architecture::Jordan, v);
    jc.forced_reset = 0.0;
    ModelConfig mc = tiny_config(Architecture::Mlp, v);
    Tagger jordan(jc, build_vocab_tagset(corpus)), mlp(mc, build_vocab_tagset(corpus));
    for (Param* p : mlp.params()) copy_param(jordan, mlp, p->name);
    for (const auto& s : corpus) {
      const auto tokens = mlp.encode(s).tokens;
      EXPECT_EQ(jordan.predict(tokens), mlp.predict(tokens));
      Rng a(6), b(6);
      EXPECT_EQ(jordan.predict(tokens, Mode::Train, &a), mlp.predict(tokens, Mode::Train, &b));
    }
  }
}

TEST(Networks, SingleTokenSentenceHasNoRecurrentContribution) {
  const auto corpus = toy_corpus();
  for (Architecture a : {Architecture::Elman, Architecture::Jordan}) {
    ModelConfig open = tiny_config(a, GateVariant::ScalarConcat);
    ModelConfig closed = open;
    closed.forced_reset = 0.0;
    Tagger m(open, build_vocab_tagset(corpus)), z(closed, build_vocab_tagset(corpus));
    std::vector<TokenIds> one = {m.encode(corpus[0]).tokens[0]};
    EXPECT_EQ(m.predict(one), z.predict(one)) << to_string(a);
  }
}

namespace {

LstmState lstm_oracle(const LstmLayer& layer, const Vector& x, const LstmState& prev) {
  const std::size_t H = layer.hidden;
  auto block = [&](const Matrix& w, std::size_t g, const Vector& v) {
    Vector out(H, 0.0);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) out[r] += w(g * H + r, c) * v[c];
    return out;
  };
  auto pre = [&](std::size_t g) {
    Vector a = add(block(layer.w_x.value, g, x), block(layer.w_h.value, g, prev.h));
    if (!layer.b.value.empty())
      for (std::size_t r = 0; r < H; ++r) a[r] += layer.b.value(g * H + r, 0);
    return a;
  };
  const Vector i = apply(pre(0), sig), f = apply(pre(1), sig), o = apply(pre(2), sig);
  const Vector g = apply(pre(3), th);
  LstmState s{Vector(H), Vector(H)};
  for (std::size_t j = 0; j < H; ++j) {
    s.c[j] = f[j] * prev.c[j] + i[j] * g[j];
    s.h[j] = o[j] * std::tanh(s.c[j]);
  }
  return s;
}

}  // namespace

TEST(Lstm, ZeroWeightsZeroState) {
  Rng rng(1);
  LstmLayer layer("l", 3, 4, true, rng, 1.0);
  for (Param* p : {&layer.w_x, &layer.w_h, &layer.b}) p->value.fill(0.0);
  const LstmState s = lstm_step(layer, Vector{1, 2, 3}, LstmState{Vector(4, 0.0), Vector(4, 0.0)});
  EXPECT_EQ(s.h, Vector(4, 0.0));
  EXPECT_EQ(s.c, Vector(4, 0.0));
}

TEST(Lstm, OpenForgetClosedInputCarriesTheCell) {
  Rng rng(2);
  LstmLayer layer("l", 3, 4, true, rng, 1.0);
  layer.w_x.value.fill(0.0);
  layer.w_h.value.fill(0.0);
  for (std::size_t j = 0; j < 4; ++j) {
    layer.b.value(j, 0) = -1000.0;     // input gate
    layer.b.value(4 + j, 0) = 1000.0;  // forget gate
  }
  const LstmState prev{Vector{0.1, -0.2, 0.3, 0.4}, Vector{1.5, -2.0, 0.25, 3.0}};
  EXPECT_EQ(lstm_step(layer, Vector{1, 2, 3}, prev).c, prev.c);
}

TEST(Lstm, StepMatchesFormulaOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    LstmLayer layer("l", 3, 4, true, rng, 1.0);
    for (double& e : layer.b.value.data()) e = rng.normal();
    LstmState prev{Vector(4), Vector(4)};
    Vector x(3);
    for (double& e : prev.h) e = rng.normal();
    for (double& e : prev.c) e = rng.normal();
    for (double& e : x) e = rng.normal();
    const LstmState got = lstm_step(layer, x, prev);
    const LstmState want = lstm_oracle(layer, x, prev);
    EXPECT_LT(max_abs_diff(got.h, want.h), 1e-12);
    EXPECT_LT(max_abs_diff(got.c, want.c), 1e-12);
  }
}

TEST(Lstm, RecurrentBlocksAreOrthogonalAndForgetBiasIsOne) {
  Rng rng(4);
  LstmLayer layer("l", 3, 6, true, rng, 1.0);
  for (std::size_t g = 0; g < 4; ++g)
    for (std::size_t a = 0; a < 6; ++a)
      for (std::size_t b = 0; b < 6; ++b) {
        double s = 0.0;
        for (std::size_t r = 0; r < 6; ++r) s += layer.w_h.value(g * 6 + r, a) * layer.w_h.value(g * 6 + r, b);
        EXPECT_NEAR(s, a == b ? 1.0 : 0.0, 1e-8);
      }
  for (std::size_t j = 0; j < 24; ++j) EXPECT_EQ(layer.b.value(j, 0), j >= 6 && j < 12 ? 1.0 : 0.0);
}

TEST(Lstm, TiedDirectionsMirrorOnPalindromes) {
  Rng rng(5);
  LstmLayer layer("l", 2, 3, true, rng, 1.0);
  const std::vector<Vector> seq = {{1, 0}, {0.5, -1}, {2, 2}, {0.5, -1}, {1, 0}};
  std::vector<LstmLayer::Step> fwd, bwd;
  layer.forward(seq, false, false, fwd);
  layer.forward(seq, true, false, bwd);
  for (std::size_t t = 0; t < seq.size(); ++t) EXPECT_EQ(fwd[t].h, bwd[seq.size() - 1 - t].h);
}

TEST(Networks, OutputShapeForBothDepths) {
  const auto corpus = toy_corpus();
  for (std::size_t depth : {1, 2}) {
    ModelConfig c = tiny_config(Architecture::BiLstm, GateVariant::ScalarConcat);
    c.depth = depth;
    Tagger m(c, build_vocab_tagset(corpus));
    const auto ex = m.encode(corpus[0]);
    const auto y = m.predict(ex.tokens);
    ASSERT_EQ(y.size(), ex.size());
    for (const auto& p : y) EXPECT_EQ(p.size(), m.num_tags());
    EXPECT_EQ(m.find_param("lstm.L2.fwd.W_x") != nullptr, depth == 2);
  }
}

TEST(Networks, GradientsAreDeterministic) {
  const auto corpus = toy_corpus();
  for (Architecture a : kArchs) {
    Tagger m(tiny_config(a, GateVariant::TwoLayer), build_vocab_tagset(corpus));
    const Example ex = m.encode(corpus[0]);
    GradCheckOptions opt;
    EXPECT_EQ(analytic_gradients(m, ex, opt), analytic_gradients(m, ex, opt)) << to_string(a);
  }
}

TEST(Networks, OutputBiasGradientSumsToZero) {
  const auto corpus = toy_corpus();
  for (Architecture a : kArchs) {
    Tagger m(tiny_config(a, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
    Rng rng(1);
    m.loss_and_grad(m.encode(corpus[0]), Mode::Train, &rng);
    double s = 0.0;
    for (double g : m.find_param("b_y")->grad.data()) s += g;
    EXPECT_NEAR(s, 0.0, 1e-14) << to_string(a);
  }
}

TEST(Networks, GradientsFiniteAcrossSeeds) {
  const auto corpus = toy_corpus(20);
  const Lexicon lex = build_vocab_tagset(corpus);
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    const Architecture a = kArchs[seed % kArchs.size()];
    const GateVariant v = kGated[(seed / kArchs.size()) % kGated.size()];
    ModelConfig c = tiny_config(a, v, seed);
    c.depth = 1;
    Tagger m(c, lex);
    Rng rng(seed);
    const double l = m.loss_and_grad(m.encode(corpus[seed % corpus.size()]), Mode::Train, &rng);
    ASSERT_TRUE(std::isfinite(l)) << seed;
    for (const Param* p : std::as_const(m).params())
      for (double g : p->grad.data()) ASSERT_TRUE(std::isfinite(g)) << seed << ' ' << p->name;
  }
}

TEST(Networks, CastRoundTripIsExact) {
  const auto corpus = toy_corpus();
  Tagger m(tiny_config(Architecture::BiLstm, GateVariant::TwoLayer), build_vocab_tagset(corpus));
  Tagger back = m.cast<long double>().cast<double>();
  const auto tokens = m.encode(corpus[0]).tokens;
  EXPECT_EQ(m.predict(tokens), back.predict(tokens));
}

// ---------------------------------------------------------------------------
// Gradient oracle

TEST(GradCheck, QuadraticAndLinear) {
  double theta = 3.0;
  EXPECT_NEAR(finite_diff_grad([&] { return theta * theta; }, theta, 1e-5), 6.0, 1e-9);
  EXPECT_EQ(theta, 3.0);
  for (double h : {1e-1, 1e-3, 1e-5}) {
    double x = 2.0;
    EXPECT_NEAR(finite_diff_grad([&] { return 4.0 * x - 1.0; }, x, h), 4.0, 1e-9);
  }
}

TEST(GradCheck, NonFiniteLossIsReported) {
  double x = 0.0;
  EXPECT_TRUE(std::isnan(finite_diff_grad([&] { return std::log(x); }, x, 1e-5)));
}

TEST(GradCheck, RelativeErrorDefinition) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-9), 1e-9 / 1e-8);
}

TEST(GradCheck, TinyMlpPasses) {
  TinyProblem p = make_tiny_problem(Architecture::Mlp, GateVariant::ScalarConcat);
  const GradReport r = compare_grads(p.model, p.example);
  std::ostringstream log;
  print_report(log, r);
  EXPECT_TRUE(r.pass()) << log.str();
  EXPECT_EQ(r.blocks.size(), p.model.params().size());
}

TEST(GradCheck, ReportCoversEveryBlock) {
  TinyProblem p = make_tiny_problem(Architecture::BiLstm, GateVariant::TwoLayer);
  const GradReport r = compare_grads(p.model, p.example);
  std::set<std::string> names;
  for (const auto& b : r.blocks) names.insert(b.name);
  for (const char* n : {"word_table", "cap_table", "char_table", "gate.W_xu", "gate.W_ur",
                        "lstm.L1.fwd.W_x", "lstm.L2.bwd.W_h", "W_hy"})
    EXPECT_TRUE(names.count(n)) << n;
  EXPECT_TRUE(r.pass());
}

TEST(GradCheck, SignFlipIsFlaggedInThatBlockOnly) {
  TinyProblem p = make_tiny_problem(Architecture::Elman, GateVariant::ScalarConcat);
  GradCheckOptions opt;
  auto analytic = analytic_gradients(p.model, p.example, opt);
  const auto params = p.model.params();
  std::size_t target = 0;
  for (std::size_t b = 0; b < params.size(); ++b)
    if (params[b]->name == "W_xh") target = b;
  for (double& g : analytic[target].data()) g = -g;
  const GradReport r = compare_grads(p.model, p.example, analytic, opt);
  for (std::size_t b = 0; b < r.blocks.size(); ++b)
    EXPECT_EQ(r.blocks[b].pass, b != target) << r.blocks[b].name;
}

TEST(GradCheck, ErrorShrinksWithTheStep) {
  TinyProblem p = make_tiny_problem(Architecture::Jordan, GateVariant::Elementwise);
  GradCheckOptions coarse, mid, fine;
  coarse.step = 1e-2;
  mid.step = 1e-3;
  fine.step = 1e-5;
  const double a = compare_grads(p.model, p.example, coarse).max_rel_error();
  const double b = compare_grads(p.model, p.example, mid).max_rel_error();
  const GradReport c = compare_grads(p.model, p.example, fine);
  EXPECT_LT(b, a / 10);  // central differences: error falls with h^2
  EXPECT_TRUE(c.pass());
}

TEST(GradCheck, TestModeAndSampledCoordinates) {
  TinyProblem p = make_tiny_problem(Architecture::Lstm, GateVariant::WeightedAverage);
  GradCheckOptions opt;
  opt.mode = Mode::Test;
  opt.max_coords_per_block = 5;
  const GradReport r = compare_grads(p.model, p.example, opt);
  EXPECT_TRUE(r.pass());
  for (const auto& b : r.blocks) EXPECT_LE(b.coords_checked, 5u);
}

// ---------------------------------------------------------------------------
// Training

TEST(Training, NllLoss) {
  const std::vector<Vector> uniform(3, Vector(10, 0.1));
  const std::vector<int> gold = {0, 4, 9};
  EXPECT_NEAR(nll_loss(uniform, gold), std::log(10.0), 1e-12);
  const std::vector<Vector> sure = {{1.0 - 1e-15, 1e-15}};
  EXPECT_NEAR(nll_loss(sure, std::vector<int>{0}), 0.0, 1e-14);
  const std::vector<Vector> zero = {{1.0, 0.0}};
  EXPECT_NEAR(nll_loss(zero, std::vector<int>{1}), -std::log(1e-300), 1e-9);

  Rng rng(1);
  std::vector<Vector> probs;
  std::vector<int> g;
  double want = 0.0;
  for (int t = 0; t < 7; ++t) {
    Vector z(4);
    for (double& e : z) e = rng.normal();
    probs.push_back(softmax(z));
    g.push_back(static_cast<int>(rng.index(4)));
    want -= std::log(probs.back()[static_cast<std::size_t>(g.back())]);
  }
  EXPECT_NEAR(nll_loss(probs, g), want / 7, 1e-12);
  EXPECT_THROW(nll_loss(probs, std::vector<int>{0}), std::invalid_argument);
}

TEST(Training, ZeroLearningRateLeavesModelUnchanged) {
  const auto corpus = toy_corpus();
  Tagger m(tiny_config(Architecture::Elman, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
  const Tagger before = m;
  const auto data = m.encode(corpus);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  Rng rng(1);
  sgd_epoch(m, data, cfg, rng);
  const auto a = std::as_const(m).params();
  const auto b = before.params();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST(Training, InvalidLearningRateRejected) {
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Training, OneSentenceOverfit) {
  const auto corpus = toy_corpus(1, 8);
  ModelConfig c = tiny_config(Architecture::Mlp, GateVariant::ScalarConcat);
  c.gate_drop_rate = 0.0;
  c.hidden_drop_rate = 0.0;
  c.hidden = 8;
  c.features.word_dim = 4;
  Tagger m(c, build_vocab_tagset(corpus));
  const auto data = m.encode(corpus);
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  Rng rng(1);
  std::vector<double> losses;
  for (int e = 0; e < 200; ++e) losses.push_back(sgd_epoch(m, data, cfg, rng));
  std::size_t down = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) down += losses[i] < losses[i - 1] ? 1 : 0;
  EXPECT_GE(static_cast<double>(down), 0.95 * static_cast<double>(losses.size() - 1));
  EXPECT_EQ(evaluate_accuracy(m, data), 1.0);
}

TEST(Training, SameSeedSameParameters) {
  const auto corpus = toy_corpus(4);
  auto run = [&] {
    Tagger m(tiny_config(Architecture::BiLstm, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
    const auto data = m.encode(corpus);
    TrainConfig cfg;
    cfg.epochs = 3;
    return train_loop(std::move(m), data, data, cfg).best;
  };
  const Tagger a = run(), b = run();
  const auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
}

TEST(Training, TestModeIsDeterministic) {
  const auto corpus = toy_corpus();
  Tagger m(tiny_config(Architecture::Lstm, GateVariant::Elementwise), build_vocab_tagset(corpus));
  const auto tokens = m.encode(corpus[2]).tokens;
  EXPECT_EQ(m.predict(tokens), m.predict(tokens));
}

TEST(Training, UpdatesTouchOnlyRowsOfTheSentence) {
  const auto corpus = toy_corpus(10);
  Tagger m(tiny_config(Architecture::Mlp, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
  const Example ex = m.encode(corpus[0]);
  std::set<std::size_t> words = {Vocab::kPad}, caps = {static_cast<std::size_t>(kCapPad)},
                        chars = {Vocab::kPad};
  for (const auto& t : ex.tokens) {
    words.insert(static_cast<std::size_t>(t.word));
    caps.insert(static_cast<std::size_t>(t.cap));
    for (int ch : t.chars) chars.insert(static_cast<std::size_t>(ch));
  }
  const LookupTables before = m.tables();
  Rng rng(2);
  m.loss_and_grad(ex, Mode::Train, &rng);
  m.sgd_step(0.5);
  auto check = [](const Matrix& a, const Matrix& b, const std::set<std::size_t>& allowed) {
    std::size_t changed = 0;
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const bool same = std::equal(a.row(r).begin(), a.row(r).end(), b.row(r).begin());
      if (!same) {
        ++changed;
        EXPECT_TRUE(allowed.count(r)) << "row " << r;
      }
    }
    EXPECT_GT(changed, 0u);
  };
  check(before.word.value, m.tables().word.value, words);
  check(before.cap.value, m.tables().cap.value, caps);
  check(before.chars.value, m.tables().chars.value, chars);
  EXPECT_LT(words.size(), m.tables().word.value.rows());
}

TEST(Training, SmallStepDescends) {
  const auto corpus = toy_corpus();
  for (Architecture a : kArchs) {
    Tagger m(tiny_config(a, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
    const Example ex = m.encode(corpus[0]);
    const double before = m.loss(ex, Mode::Test, nullptr);
    m.zero_grad();
    m.loss_and_grad(ex, Mode::Test, nullptr);
    m.sgd_step(1e-5);
    EXPECT_LE(m.loss(ex, Mode::Test, nullptr), before) << to_string(a);
  }
}

TEST(Training, OracleCopyScoresPerfectly) {
  const auto corpus = toy_corpus(5);
  Tagger m(tiny_config(Architecture::Mlp, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
  auto data = m.encode(corpus);
  for (auto& ex : data) ex.gold = m.tag(ex.tokens);
  EXPECT_EQ(evaluate_accuracy(m, data), 1.0);
}

TEST(Training, ConstantTagModel) {
  std::istringstream in("a|N b|V c|V\nd|N e|V\n");
  const auto corpus = parse_corpus(in);
  Tagger m(tiny_config(Architecture::Mlp, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
  for (Param* p : m.params()) p->value.fill(0.0);
  m.find_param("b_y")->value(static_cast<std::size_t>(m.lexicon().tags.id("N")), 0) = 1.0;
  EXPECT_DOUBLE_EQ(evaluate_accuracy(m, m.encode(corpus)), 0.4);
}

TEST(Training, UnseenGoldTagsCountWrong) {
  std::istringstream tr("a|N b|V\n"), dv("a|N b|X\n");
  const auto train = parse_corpus(tr);
  Tagger m(tiny_config(Architecture::Mlp, GateVariant::ScalarConcat), build_vocab_tagset(train));
  const auto dev = m.encode(parse_corpus(dv));
  EXPECT_EQ(dev[0].gold[1], TagSet::kRare);
  const auto counts = count_correct(m, dev);
  EXPECT_EQ(counts.unseen_gold, 1u);
  EXPECT_LE(counts.correct, 1u);
}

TEST(Training, RandomModelIsNotAboveChance) {
  Rng rng(3);
  std::vector<Sentence> corpus;
  std::vector<std::size_t> counts(1285, 0);
  for (int s = 0; s < 100; ++s) {
    Sentence sent;
    for (int t = 0; t < 20; ++t) {
      const std::size_t tag = rng.bernoulli(0.1) ? 0 : rng.index(1285);
      ++counts[tag];
      const std::string w = "w" + std::to_string(rng.index(300));
      sent.tokens.push_back({w, w, "T" + std::to_string(tag)});
    }
    corpus.push_back(sent);
  }
  const double majority =
      static_cast<double>(*std::max_element(counts.begin(), counts.end())) / 2000.0;
  Tagger m(tiny_config(Architecture::Mlp, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
  EXPECT_LE(evaluate_accuracy(m, m.encode(corpus)), majority + 0.02);
}

TEST(Training, EvaluationIndependentOfWorkers) {
  const auto corpus = toy_corpus(13);
  Tagger m(tiny_config(Architecture::Jordan, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
  const auto data = m.encode(corpus);
  const auto one = count_correct(m, data, 1);
  for (std::size_t w : {2, 3, 8, 64}) {
    const auto many = count_correct(m, data, w);
    EXPECT_EQ(one.correct, many.correct);
    EXPECT_EQ(one.tokens, many.tokens);
  }
  EXPECT_THROW(evaluate_accuracy(m, std::span<const Example>{}), DataError);
}

TEST(Training, ZeroEpochsReturnsInitialModel) {
  const auto corpus = toy_corpus();
  Tagger m(tiny_config(Architecture::Mlp, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
  const auto data = m.encode(corpus);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto result = train_loop(m, data, data, cfg);
  EXPECT_TRUE(result.state.history.empty());
  const auto a = result.best.params(), b = std::as_const(m).params();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
}

TEST(Training, KeepsTheBestDevSnapshot) {
  const auto corpus = toy_corpus(4);
  Tagger m(tiny_config(Architecture::Mlp, GateVariant::ScalarConcat), build_vocab_tagset(corpus));
  const auto data = m.encode(corpus);
  TrainConfig cfg;
  cfg.epochs = 3;
  const std::vector<double> injected = {0.3, 0.9, 0.7};
  std::vector<EpochRecord> seen;
  const auto result = train_loop(
      m, data, data, cfg, [&](const Tagger&, std::size_t e) { return injected[e - 1]; },
      [&](const EpochRecord& r) { seen.push_back(r); });
  EXPECT_EQ(result.state.best_epoch, 2u);
  EXPECT_EQ(result.state.best_dev_acc, 0.9);
  ASSERT_EQ(seen.size(), 3u);
  EXPECT_EQ(seen[2].dev_acc, 0.7);

  TrainConfig two = cfg;
  two.epochs = 2;
  const auto reference =
      train_loop(m, data, data, two, [&](const Tagger&, std::size_t e) { return injected[e - 1]; });
  EXPECT_EQ(reference.state.best_epoch, 2u);
  const auto a = result.best.params(), b = reference.best.params();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}
