#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "uvc/error.hpp"
#include "uvc/rng.hpp"

namespace uvc {

// Dense row-major tensor. Image tensors use the fixed (batch, channels,
// height, width) layout; vectors and scalars use 1-d shapes.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), T(0));
  }
  TensorT(std::vector<int> s, T fill) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }

  static size_t numel_of(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw_internal("tensor dimension must be positive");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }

  // 4-d accessors for (B, C, H, W) tensors.
  T& at(int b, int c, int y, int x) {
    return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  T at(int b, int c, int y, int x) const {
    return data[((static_cast<size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }

  static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }
  static TensorT full(std::vector<int> s, T v) { return TensorT(std::move(s), v); }

  static TensorT randn(std::vector<int> s, Rng& rng, T stddev = T(1)) {
    TensorT t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * static_cast<double>(stddev));
    return t;
  }

  static TensorT uniform(std::vector<int> s, Rng& rng, T lo, T hi) {
    TensorT t(std::move(s));
    for (auto& v : t.data)
      v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    return t;
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

template <typename T>
inline void require_same_shape(const TensorT<T>& a, const TensorT<T>& b,
                               const char* op) {
  if (!a.same_shape(b))
    throw_data(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
               b.shape_str());
}

}  // namespace uvc
