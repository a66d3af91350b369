#pragma once

// Finite-difference oracle for the analytic gradients. The oracle only ever
// evaluates the model's loss; dropout masks are frozen by re-seeding the
// generator identically for every evaluation.
//
// By default the perturbed losses are evaluated on a long double copy of the
// model. In double, rounding noise in the loss is around 1e-16 per token,
// which after dividing by 2h = 2e-5 swamps gradients below roughly 1e-6;
// LSTM stacks have many of those.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <concepts>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "dynwin/networks.hpp"
#include "dynwin/numerics.hpp"
#include "dynwin/synthetic.hpp"

namespace dynwin {

// Central difference (f(theta + h) - f(theta - h)) / 2h at one coordinate.
// The coordinate is restored afterwards. Produces NaN when either perturbed
// evaluation is non-finite.
template <typename F, std::floating_point S>
S finite_diff_grad(F&& loss, S& coordinate, std::type_identity_t<S> h = S(1e-5)) {
  const S saved = coordinate;
  coordinate = saved + h;
  const S up = static_cast<S>(loss());
  coordinate = saved - h;
  const S down = static_cast<S>(loss());
  coordinate = saved;
  if (!std::isfinite(up) || !std::isfinite(down)) return std::numeric_limits<S>::quiet_NaN();
  return (up - down) / (S(2) * h);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

struct BlockReport {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // row-major index of the worst coordinate
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool non_finite = false;
  bool pass = true;
};

struct GradReport {
  double threshold = 1e-4;
  std::vector<BlockReport> blocks;
  bool pass() const {
    return std::all_of(blocks.begin(), blocks.end(), [](const BlockReport& b) { return b.pass; });
  }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.max_rel_error);
    return m;
  }
};

struct GradCheckOptions {
  double threshold = 1e-4;
  double step = 1e-5;
  Mode mode = Mode::Train;
  std::uint64_t mask_seed = 7;
  // Blocks larger than this are sampled (seeded) instead of swept.
  std::size_t max_coords_per_block = 2000;
  std::uint64_t sample_seed = 11;
  bool extended_precision = true;  // evaluate the oracle's losses in long double
};

// Analytic gradient of every parameter block, in params() order.
inline std::vector<Matrix> analytic_gradients(Tagger& model, const Example& ex,
                                              const GradCheckOptions& opt) {
  model.zero_grad();
  for (Param* p : model.params()) p->grad.fill(0.0);
  Rng rng(opt.mask_seed);
  model.loss_and_grad(ex, opt.mode, &rng);
  std::vector<Matrix> out;
  for (Param* p : model.params()) out.push_back(p->grad);
  model.zero_grad();
  for (Param* p : model.params()) p->grad.fill(0.0);
  return out;
}

namespace detail {

template <typename T>
GradReport compare_grads_in(BasicTagger<T>& model, const Example& ex,
                            const std::vector<Matrix>& analytic, const GradCheckOptions& opt) {
  GradReport report;
  report.threshold = opt.threshold;
  auto loss = [&] {
    Rng rng(opt.mask_seed);
    return model.loss(ex, opt.mode, &rng);
  };
  Rng sampler(opt.sample_seed);
  const auto params = model.params();
  if (params.size() != analytic.size())
    throw std::invalid_argument("compare_grads: one analytic gradient per block expected");
  for (std::size_t b = 0; b < params.size(); ++b) {
    BasicParam<T>& p = *params[b];
    BlockReport br;
    br.name = p.name;
    const std::size_t n = p.value.size();
    std::vector<std::size_t> coords;
    if (n <= opt.max_coords_per_block) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (std::size_t i = 0; i < opt.max_coords_per_block; ++i) coords.push_back(sampler.index(n));
    }
    for (std::size_t i : coords) {
      const double a = analytic[b].data()[i];
      const auto num = static_cast<double>(finite_diff_grad(loss, p.value.data()[i], opt.step));
      ++br.coords_checked;
      if (!std::isfinite(num) || !std::isfinite(a)) {
        br.non_finite = true;
        br.worst_index = i;
        br.worst_analytic = a;
        br.worst_numeric = num;
        br.max_rel_error = std::numeric_limits<double>::infinity();
        continue;
      }
      const double err = relative_error(a, num);
      if (err > br.max_rel_error) {
        br.max_rel_error = err;
        br.worst_index = i;
        br.worst_analytic = a;
        br.worst_numeric = num;
      }
    }
    br.pass = !br.non_finite && br.max_rel_error <= opt.threshold;
    report.blocks.push_back(br);
  }
  return report;
}

}  // namespace detail

// Compares the given analytic gradients against central differences.
inline GradReport compare_grads(Tagger& model, const Example& ex,
                                const std::vector<Matrix>& analytic,
                                const GradCheckOptions& opt = {}) {
  if (opt.extended_precision) {
    auto wide = model.cast<long double>();
    return detail::compare_grads_in(wide, ex, analytic, opt);
  }
  return detail::compare_grads_in(model, ex, analytic, opt);
}

inline GradReport compare_grads(Tagger& model, const Example& ex,
                                const GradCheckOptions& opt = {}) {
  const auto analytic = analytic_gradients(model, ex, opt);
  return compare_grads(model, ex, analytic, opt);
}

// A small model and sentence for checking one architecture/variant pair:
// 4-dimensional token features, radius 1, two tags plus RARE.
struct TinyProblem {
  Tagger model;
  Example example;
};

inline TinyProblem make_tiny_problem(Architecture arch, GateVariant variant, std::uint64_t seed = 1,
                                     std::size_t hidden = 5, std::size_t length = 4) {
  const auto corpus = generate_synthetic_corpus({.sentences = 1, .seed = 5});
  const Lexicon full = build_vocab_tagset(corpus);
  Lexicon lex;
  lex.words = full.words;
  lex.chars = full.chars;
  lex.tags.add("NP");
  lex.tags.add("N");
  Sentence s;
  for (std::size_t i = 0; i < length; ++i)
    s.tokens.push_back(corpus[0].tokens[i % corpus[0].tokens.size()]);

  ModelConfig c;
  c.arch = arch;
  c.variant = variant;
  c.features = {1, 1, 1, 1, 1};
  c.hidden = hidden;
  c.depth = 2;
  c.gate_hidden = 3;
  c.seed = seed;
  Tagger model(c, lex);
  Example ex = model.encode(s);
  return {std::move(model), std::move(ex)};
}

inline void print_report(std::ostream& out, const GradReport& r) {
  for (const auto& b : r.blocks) {
    out << (b.pass ? "ok   " : "FAIL ") << b.name << "  coords=" << b.coords_checked
        << "  max_rel_err=" << b.max_rel_error;
    if (!b.pass || b.max_rel_error > 0.0)
      out << "  at=" << b.worst_index << " (analytic " << b.worst_analytic << ", numeric "
          << b.worst_numeric << ")";
    if (b.non_finite) out << "  non-finite loss";
    out << '\n';
  }
  out << (r.pass() ? "PASS" : "FAIL") << " threshold=" << r.threshold
      << " max_rel_err=" << r.max_rel_error() << '\n';
}

}  // namespace dynwin
