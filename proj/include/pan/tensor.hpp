#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pan/error.hpp"

namespace pan {

/// Dense multi-dimensional array of doubles in row-major order.
///
/// Tensors returned from the free-function operations below are value types:
/// no views, no aliasing. Layers mutate only the tensors they own.
class Tensor {
 public:
  /// Scalar zero (rank 0, one element).
  Tensor() : shape_(), data_(1, 0.0) {}

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {
    reject_zero_dims(shape_);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    reject_zero_dims(shape_);
    if (count(shape_) != data_.size()) {
      throw DimensionError("tensor: shape " + shape_string(shape_) + " needs " +
                           std::to_string(count(shape_)) + " elements, got " +
                           std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(std::vector<std::size_t> shape) { return full(std::move(shape), 1.0); }

  static Tensor from_vector(std::vector<double> v) {
    std::vector<std::size_t> shape{v.size()};
    return Tensor(std::move(shape), std::move(v));
  }

  static Tensor from_vector(std::vector<std::size_t> shape, std::vector<double> v) {
    return Tensor(std::move(shape), std::move(v));
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i) { return data_[i]; }
  double operator()(std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Value of a single-element tensor.
  double item() const {
    if (data_.size() != 1) {
      throw DimensionError("item: tensor has " + std::to_string(data_.size()) + " elements");
    }
    return data_[0];
  }

  /// Same data, new shape; element count must match.
  Tensor reshape(std::vector<std::size_t> new_shape) const {
    if (count(new_shape) != data_.size()) {
      throw DimensionError("reshape: " + shape_string(shape_) + " to " +
                           shape_string(new_shape) + " changes element count");
    }
    return Tensor(std::move(new_shape), data_);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  std::string shape_str() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << ", ";
      os << s[i];
    }
    os << ']';
    return os.str();
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

 private:
  static void reject_zero_dims(const std::vector<std::size_t>& s) {
    for (std::size_t d : s) {
      if (d == 0) throw DimensionError("tensor: zero-sized dimension in " + shape_string(s));
    }
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes differ: " + a.shape_str() + " vs " +
                         b.shape_str());
  }
}

}  // namespace detail

/// Matrix product of a [m x k] and b [k x n] with fixed left-to-right
/// accumulation over k, so results are bit-reproducible.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: expects rank-2 operands, got " + a.shape_str() + " x " +
                         b.shape_str());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner dimensions disagree: " + a.shape_str() + " x " +
                         b.shape_str());
  }
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      const double* prow = pb + kk * n;
      double* porow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) porow[j] += aik * prow[j];
    }
  }
  return out;
}

/// Elementwise sum. When b's shape equals a's trailing axes (bias case), b is
/// broadcast over the leading axes.
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) {
    Tensor out = a;
    double* po = out.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] += pb[i];
    return out;
  }
  const std::size_t ar = a.rank(), br = b.rank();
  if (br < ar &&
      std::equal(b.shape().begin(), b.shape().end(), a.shape().end() - static_cast<long>(br))) {
    Tensor out = a;
    const std::size_t inner = b.size();
    double* po = out.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] += pb[i % inner];
    return out;
  }
  throw DimensionError("add: shapes differ: " + a.shape_str() + " vs " + b.shape_str());
}

inline Tensor add(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.vec()) v += c;
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a;
  double* po = out.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] -= pb[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a;
  double* po = out.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] *= pb[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.vec()) v *= c;
  return out;
}

/// Elementwise exponential. Saturates to +inf for arguments above ~709.
inline Tensor exp(const Tensor& a) {
  Tensor out = a;
  for (double& v : out.vec()) v = std::exp(v);
  return out;
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

enum class Reduce { kSum, kMean, kMax, kArgmax };

/// Reduction along one axis; the axis is removed from the shape.
/// Sum/mean accumulate in index order; argmax ties break toward the lowest index.
inline Tensor reduce(Reduce op, const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw DomainError("reduce: axis " + std::to_string(axis) + " out of range for " +
                      a.shape_str());
  }
  const auto& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t k = s[axis];
  if (k == 0) throw DomainError("reduce: empty axis " + std::to_string(axis));

  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  Tensor out(std::move(out_shape));
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const double* base = pa + (o * k) * inner + in;
      double acc;
      std::size_t best = 0;
      switch (op) {
        case Reduce::kSum:
        case Reduce::kMean:
          acc = 0.0;
          for (std::size_t j = 0; j < k; ++j) acc += base[j * inner];
          if (op == Reduce::kMean) acc /= static_cast<double>(k);
          break;
        case Reduce::kMax:
          acc = base[0];
          for (std::size_t j = 1; j < k; ++j) acc = std::max(acc, base[j * inner]);
          break;
        case Reduce::kArgmax:
          acc = base[0];
          for (std::size_t j = 1; j < k; ++j) {
            if (base[j * inner] > acc) {
              acc = base[j * inner];
              best = j;
            }
          }
          acc = static_cast<double>(best);
          break;
      }
      po[o * inner + in] = acc;
    }
  }
  return out;
}

/// Concatenates tensors along one axis; all other dimensions must agree.
inline Tensor concat(const std::vector<const Tensor*>& parts, std::size_t axis) {
  if (parts.empty()) throw DomainError("concat: no operands");
  const Tensor& first = *parts.front();
  if (axis >= first.rank()) {
    throw DomainError("concat: axis " + std::to_string(axis) + " out of range for " +
                      first.shape_str());
  }
  std::size_t axis_total = 0;
  for (const Tensor* t : parts) {
    if (t->rank() != first.rank()) {
      throw DimensionError("concat: rank mismatch: " + first.shape_str() + " vs " +
                           t->shape_str());
    }
    for (std::size_t i = 0; i < first.rank(); ++i) {
      if (i != axis && t->dim(i) != first.dim(i)) {
        throw DimensionError("concat: off-axis dims differ: " + first.shape_str() + " vs " +
                             t->shape_str());
      }
    }
    axis_total += t->dim(axis);
  }
  std::vector<std::size_t> out_shape = first.shape();
  out_shape[axis] = axis_total;
  Tensor out(std::move(out_shape));

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first.dim(i);
  for (std::size_t i = axis + 1; i < first.rank(); ++i) inner *= first.dim(i);

  double* po = out.data();
  const std::size_t out_stride = axis_total * inner;
  std::size_t offset = 0;
  for (const Tensor* t : parts) {
    const std::size_t len = t->dim(axis) * inner;
    const double* pt = t->data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(pt + o * len, pt + (o + 1) * len, po + o * out_stride + offset);
    }
    offset += len;
  }
  return out;
}

inline Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  return concat(std::vector<const Tensor*>{&a, &b}, axis);
}

/// Copies `len` indices starting at `start` along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= a.rank()) {
    throw DomainError("slice: axis " + std::to_string(axis) + " out of range for " +
                      a.shape_str());
  }
  if (start + len > a.dim(axis)) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                         ") exceeds axis " + std::to_string(axis) + " of " + a.shape_str());
  }
  std::vector<std::size_t> out_shape = a.shape();
  out_shape[axis] = len;
  Tensor out(std::move(out_shape));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t in_stride = a.dim(axis) * inner;
  const std::size_t out_stride = len * inner;
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(pa + o * in_stride + start * inner, pa + o * in_stride + (start + len) * inner,
              po + o * out_stride);
  }
  return out;
}

}  // namespace pan
