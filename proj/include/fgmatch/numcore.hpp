// SPDX-License-Identifier: Apache-2.0
//
// Dense vectors and matrices plus the handful of kernels the similarity
// heads need. Storage is templated on the scalar type (float in production,
// double for gradient checks); dot products and norms always accumulate in
// double.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fgmatch/errors.hpp"

namespace fgmatch {

namespace detail {

template <class Real>
void require_finite(std::span<const Real> values, const char* what) {
  for (Real x : values) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw DomainError(std::string(what) + " contains a non-finite entry");
    }
  }
}

}  // namespace detail

template <class Real>
class BasicVector {
 public:
  using value_type = Real;

  BasicVector() = default;

  /// Zero vector of the given dimension.
  explicit BasicVector(std::size_t dim) : data_(dim, Real(0)) {
    if (dim == 0) throw UsageError("vector dimension must be positive");
  }

  explicit BasicVector(std::vector<Real> data) : data_(std::move(data)) {
    if (data_.empty()) throw UsageError("vector dimension must be positive");
    detail::require_finite<Real>(data_, "vector");
  }

  BasicVector(std::initializer_list<Real> init) : BasicVector(std::vector<Real>(init)) {}

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real operator[](std::size_t i) const { return data_[i]; }
  Real& operator[](std::size_t i) { return data_[i]; }

  std::span<const Real> span() const noexcept { return data_; }
  std::span<Real> span() noexcept { return data_; }
  const std::vector<Real>& values() const noexcept { return data_; }

  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  friend bool operator==(const BasicVector&, const BasicVector&) = default;

 private:
  std::vector<Real> data_;
};

/// Row-major dense matrix.
template <class Real>
class BasicMatrix {
 public:
  using value_type = Real;

  BasicMatrix() = default;

  BasicMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, Real(0)) {
    if (rows == 0 || cols == 0) throw UsageError("matrix dimensions must be positive");
  }

  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<Real> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows == 0 || cols == 0) throw UsageError("matrix dimensions must be positive");
    if (data_.size() != rows * cols) throw UsageError("matrix data size does not match rows*cols");
    detail::require_finite<Real>(data_, "matrix");
  }

  BasicMatrix(std::initializer_list<std::initializer_list<Real>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    if (rows_ == 0 || cols_ == 0) throw UsageError("matrix dimensions must be positive");
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw UsageError("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
    detail::require_finite<Real>(data_, "matrix");
  }

  static BasicMatrix identity(std::size_t n) {
    BasicMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = Real(1);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const Real> row(std::size_t r) const {
    return std::span<const Real>(data_).subspan(r * cols_, cols_);
  }
  std::span<Real> row(std::size_t r) { return std::span<Real>(data_).subspan(r * cols_, cols_); }

  std::span<const Real> span() const noexcept { return data_; }
  std::span<Real> span() noexcept { return data_; }

  friend bool operator==(const BasicMatrix&, const BasicMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

using Vector = BasicVector<float>;
using Matrix = BasicMatrix<float>;
using ScoreMatrix = BasicMatrix<double>;

// ---------------------------------------------------------------------------
// Span kernels

template <class A, class B>
double dot(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw UsageError("dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return acc;
}

template <class A>
double norm(std::span<const A> a) {
  return std::sqrt(dot(a, a));
}

template <class A, class B>
double cosine(std::span<const A> a, std::span<const B> b) {
  if (a.size() != b.size()) throw UsageError("cosine: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine: zero-norm input");
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

/// Gradient of cosine(a, b) with respect to both arguments, scaled by `upstream`
/// and added into `grad_a` / `grad_b`.
template <class A, class B, class G>
void cosine_backward(std::span<const A> a, std::span<const B> b, double upstream,
                     std::span<G> grad_a, std::span<G> grad_b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine: zero-norm input");
  const double inv = 1.0 / (na * nb);
  const double c = dot(a, b) * inv;
  const double ka = c / (na * na);
  const double kb = c / (nb * nb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ai = static_cast<double>(a[i]);
    const double bi = static_cast<double>(b[i]);
    grad_a[i] += static_cast<G>(upstream * (bi * inv - ka * ai));
    grad_b[i] += static_cast<G>(upstream * (ai * inv - kb * bi));
  }
}

/// out = W x + bias (bias may be empty).
template <class Real, class X, class Out>
void affine(const BasicMatrix<Real>& w, std::span<const Real> bias, std::span<const X> x,
            std::span<Out> out) {
  if (w.cols() != x.size()) throw UsageError("matvec: dimension mismatch");
  if (out.size() != w.rows()) throw UsageError("matvec: output dimension mismatch");
  if (!bias.empty() && bias.size() != w.rows()) throw UsageError("matvec: bias dimension mismatch");
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double acc = dot(w.row(r), x);
    if (!bias.empty()) acc += static_cast<double>(bias[r]);
    out[r] = static_cast<Out>(acc);
  }
}

/// Given upstream gradient `dout` of out = W x + b: grad_w += dout x^T,
/// grad_b += dout, and (optionally) grad_x += W^T dout.
template <class Real, class X, class D, class G>
void affine_backward(const BasicMatrix<Real>& w, std::span<const X> x, std::span<const D> dout,
                     std::span<G> grad_w, std::span<G> grad_b, std::span<G> grad_x) {
  const std::size_t rows = w.rows();
  const std::size_t cols = w.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    const double d = static_cast<double>(dout[r]);
    if (d == 0.0) continue;
    if (!grad_b.empty()) grad_b[r] += static_cast<G>(d);
    if (!grad_w.empty()) {
      G* gw = grad_w.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) gw[c] += static_cast<G>(d * static_cast<double>(x[c]));
    }
    if (!grad_x.empty()) {
      const auto wr = w.row(r);
      for (std::size_t c = 0; c < cols; ++c) grad_x[c] += static_cast<G>(d * static_cast<double>(wr[c]));
    }
  }
}

// ---------------------------------------------------------------------------
// Vector-level operations

template <class Real>
double dot(const BasicVector<Real>& a, const BasicVector<Real>& b) {
  return dot(a.span(), b.span());
}

template <class Real>
double norm(const BasicVector<Real>& a) {
  return norm(a.span());
}

/// Cosine similarity in [-1, 1]. Throws UsageError on dimension mismatch and
/// DomainError when either input has zero norm.
template <class Real>
double cosine(const BasicVector<Real>& a, const BasicVector<Real>& b) {
  return cosine(a.span(), b.span());
}

template <class Real>
BasicVector<Real> matvec(const BasicMatrix<Real>& w, const BasicVector<Real>& x) {
  if (w.cols() != x.dim()) throw UsageError("matvec: dimension mismatch");
  BasicVector<Real> out(w.rows());
  affine(w, std::span<const Real>{}, x.span(), out.span());
  return out;
}

/// Numerically stable softmax (max subtraction, double accumulation).
template <class Real>
BasicVector<Real> softmax(const BasicVector<Real>& x) {
  const Real top = *std::max_element(x.begin(), x.end());
  std::vector<double> e(x.dim());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.dim(); ++i) {
    e[i] = std::exp(static_cast<double>(x[i]) - static_cast<double>(top));
    sum += e[i];
  }
  std::vector<Real> out(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] = static_cast<Real>(e[i] / sum);
  return BasicVector<Real>(std::move(out));
}

template <class Real>
BasicVector<Real> tanh_vec(const BasicVector<Real>& x) {
  std::vector<Real> out(x.dim());
  std::transform(x.begin(), x.end(), out.begin(),
                 [](Real v) { return static_cast<Real>(std::tanh(static_cast<double>(v))); });
  return BasicVector<Real>(std::move(out));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Copy scaled to unit L2 norm. Zero vectors are rejected.
template <class Real>
BasicVector<Real> l2_normalized(const BasicVector<Real>& x) {
  const double n = norm(x);
  if (n == 0.0) throw DomainError("cannot normalize a zero-norm vector");
  std::vector<Real> out(x.dim());
  for (std::size_t i = 0; i < x.dim(); ++i) out[i] = static_cast<Real>(static_cast<double>(x[i]) / n);
  return BasicVector<Real>(std::move(out));
}

}  // namespace fgmatch
