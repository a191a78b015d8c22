#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dfex::nn {

/// Dense row-major tensor over a flat buffer. Shapes used in practice are
/// (N, D) for dense activations and (N, C, H, W) for image batches.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape)) {}
  Tensor(std::vector<int> s, T fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

  static std::size_t numel_of(const std::vector<int>& s) {
    if (s.empty()) throw std::invalid_argument("tensor: empty shape");
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dim");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  void reshape(std::vector<int> s) {
    if (numel_of(s) != data.size()) throw std::invalid_argument("tensor: reshape numel mismatch");
    shape = std::move(s);
  }

  void resize(const std::vector<int>& s) {
    shape = s;
    data.resize(numel_of(s));
  }

  std::size_t numel() const { return data.size(); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

}  // namespace dfex::nn
