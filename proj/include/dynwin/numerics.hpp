#pragma once

// Dense linear algebra, activations, initializers and dropout masks.
//
// Everything is templated on the scalar type. Models train in double; the
// gradient checker re-evaluates losses in long double to push the
// finite-difference roundoff floor far below the gradients it checks.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <ranges>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dynwin {

template <typename R>
concept ScalarRange = std::ranges::contiguous_range<R> && std::ranges::sized_range<R>;

template <typename R>
using range_scalar_t = std::remove_cvref_t<std::ranges::range_value_t<R>>;

// Dense row-major matrix.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  T operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.data().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using Vector = std::vector<double>;

// Deterministic generator; the same seed always yields the same stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }

  // Uniform integer in [0, n). Built on the raw engine output so the sequence
  // does not depend on the standard library's distribution implementations.
  std::size_t index(std::size_t n) {
    assert(n > 0);
    return static_cast<std::size_t>(engine_() % n);
  }

  template <typename V>
  void shuffle(std::vector<V>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Kernels. All accumulate into their output.

namespace detail {

template <typename T>
using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using MutRowMajorMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using VecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using MutVecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
RowMajorMap<T> as_eigen(const BasicMatrix<T>& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
template <typename T>
MutRowMajorMap<T> as_eigen(BasicMatrix<T>& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
template <typename T, ScalarRange R>
VecMap<T> as_eigen_vec(const R& r) {
  return {std::data(r), static_cast<Eigen::Index>(std::size(r))};
}
template <typename T, ScalarRange R>
MutVecMap<T> as_eigen_mut_vec(R&& r) {
  return {std::data(r), static_cast<Eigen::Index>(std::size(r))};
}

}  // namespace detail

// out += m * x
template <typename T, ScalarRange X, ScalarRange Y>
void gemv_acc(const BasicMatrix<T>& m, const X& x, Y&& out) {
  assert(std::size(x) == m.cols() && std::size(out) == m.rows());
  if (m.empty()) return;
  detail::as_eigen_mut_vec<T>(out).noalias() += detail::as_eigen(m) * detail::as_eigen_vec<T>(x);
}

// out += m^T * y
template <typename T, ScalarRange Y, ScalarRange X>
void gemv_t_acc(const BasicMatrix<T>& m, const Y& y, X&& out) {
  assert(std::size(y) == m.rows() && std::size(out) == m.cols());
  if (m.empty()) return;
  detail::as_eigen_mut_vec<T>(out).noalias() +=
      detail::as_eigen(m).transpose() * detail::as_eigen_vec<T>(y);
}

// g += y * x^T
template <typename T, ScalarRange Y, ScalarRange X>
void outer_acc(const Y& y, const X& x, BasicMatrix<T>& g) {
  assert(std::size(y) == g.rows() && std::size(x) == g.cols());
  if (g.empty()) return;
  detail::as_eigen(g).noalias() +=
      detail::as_eigen_vec<T>(y) * detail::as_eigen_vec<T>(x).transpose();
}

// y += a * x
template <ScalarRange X, ScalarRange Y>
void axpy(range_scalar_t<X> a, const X& x, Y&& y) {
  assert(std::size(x) == std::size(y));
  const auto* xs = std::data(x);
  auto* ys = std::data(y);
  for (std::size_t i = 0; i < std::size(x); ++i) ys[i] += a * xs[i];
}

template <ScalarRange A, ScalarRange B>
range_scalar_t<A> dot(const A& a, const B& b) {
  assert(std::size(a) == std::size(b));
  range_scalar_t<A> acc = 0;
  for (std::size_t i = 0; i < std::size(a); ++i) acc += a[i] * b[i];
  return acc;
}

template <ScalarRange A, ScalarRange B>
std::vector<range_scalar_t<A>> concat(const A& a, const B& b) {
  std::vector<range_scalar_t<A>> out(std::begin(a), std::end(a));
  out.insert(out.end(), std::begin(b), std::end(b));
  return out;
}

template <ScalarRange A, ScalarRange B>
std::vector<range_scalar_t<A>> hadamard(const A& a, const B& b) {
  assert(std::size(a) == std::size(b));
  std::vector<range_scalar_t<A>> out(std::size(a));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

// ---------------------------------------------------------------------------
// Activations

template <std::floating_point T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <ScalarRange R>
std::vector<range_scalar_t<R>> sigmoid(const R& x) {
  std::vector<range_scalar_t<R>> out(std::size(x));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

template <ScalarRange R>
std::vector<range_scalar_t<R>> tanh(const R& x) {
  std::vector<range_scalar_t<R>> out(std::size(x));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

// Derivatives written in terms of the activation's output.
template <std::floating_point T>
T sigmoid_grad_from_output(T s) {
  return s * (T(1) - s);
}
template <std::floating_point T>
T tanh_grad_from_output(T t) {
  return T(1) - t * t;
}

// Max-subtracted softmax; finite for every finite input.
template <ScalarRange R>
std::vector<range_scalar_t<R>> softmax(const R& logits) {
  using T = range_scalar_t<R>;
  assert(std::size(logits) > 0);
  const T mx = *std::max_element(std::begin(logits), std::end(logits));
  std::vector<T> out(std::size(logits));
  T sum = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (T& v : out) v /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// Initialization

// Entries drawn from N(0, sigma^2), sigma = scale / sqrt(fan_in).
inline Matrix init_gaussian(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng,
                            double scale = 0.1) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("init_gaussian: zero dimension");
  if (fan_in == 0) throw std::invalid_argument("init_gaussian: fan_in must be >= 1");
  const double sigma = scale / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (double& v : m.data()) v = sigma * rng.normal();
  return m;
}

// Random matrix with orthonormal columns (rows >= cols) or rows (rows < cols),
// from the QR factorization of a Gaussian draw. Column signs follow diag(R)
// so the result is Haar-distributed.
inline Matrix init_orthogonal(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("init_orthogonal: zero dimension");
  const auto tall = static_cast<Eigen::Index>(std::max(rows, cols));
  const auto thin = static_cast<Eigen::Index>(std::min(rows, cols));
  Eigen::MatrixXd g(tall, thin);
  for (Eigen::Index c = 0; c < thin; ++c)
    for (Eigen::Index r = 0; r < tall; ++r) g(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall, thin);
  for (Eigen::Index c = 0; c < thin; ++c)
    if (qr.matrixQR()(c, c) < 0.0) q.col(c) *= -1.0;

  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
      m(i, j) = rows >= cols ? q(a, b) : q(b, a);
    }
  return m;
}

// Entry i is 0 with probability drop_rate, otherwise 1.
inline Vector dropout_mask(std::size_t len, double drop_rate, Rng& rng) {
  if (!(drop_rate >= 0.0 && drop_rate < 1.0))
    throw std::invalid_argument("dropout_mask: drop_rate must be in [0, 1)");
  Vector mask(len, 1.0);
  if (drop_rate == 0.0) return mask;
  for (double& v : mask) v = rng.bernoulli(drop_rate) ? 0.0 : 1.0;
  return mask;
}

// ---------------------------------------------------------------------------

// A trainable block: value plus gradient accumulator. Sparse blocks (lookup
// tables) remember which rows received gradient so updates stay row-local.
template <typename T>
struct BasicParam {
  std::string name;
  BasicMatrix<T> value;
  BasicMatrix<T> grad;
  bool sparse = false;
  std::vector<std::size_t> touched;
  std::vector<char> touched_flag;

  BasicParam() = default;
  BasicParam(std::string n, BasicMatrix<T> v, bool is_sparse = false)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()),
        sparse(is_sparse), touched_flag(is_sparse ? value.rows() : 0, 0) {}

  void touch(std::size_t r) {
    if (!sparse || touched_flag[r]) return;
    touched_flag[r] = 1;
    touched.push_back(r);
  }

  void zero_grad() {
    if (sparse) {
      for (std::size_t r : touched) {
        std::fill(grad.row(r).begin(), grad.row(r).end(), T(0));
        touched_flag[r] = 0;
      }
      touched.clear();
    } else {
      grad.fill(T(0));
    }
  }

  // value -= lr * grad, then clears the gradient.
  void sgd_update(T lr) {
    if (sparse) {
      for (std::size_t r : touched) axpy(-lr, grad.row(r), value.row(r));
    } else {
      axpy(-lr, grad.data(), value.data());
    }
    zero_grad();
  }

  template <typename U>
  BasicParam<U> cast() const {
    return BasicParam<U>(name, value.template cast<U>(), sparse);
  }
};

using Param = BasicParam<double>;

}  // namespace dynwin
