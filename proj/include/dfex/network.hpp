#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfex/layers.hpp"

namespace dfex::nn {

/// Flat view of a network's trainable parameters; the unit of meta updates.
template <typename T>
struct ParamVector {
  std::vector<T> values;

  std::size_t size() const { return values.size(); }

  ParamVector& operator+=(const ParamVector& o) {
    check(o);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += o.values[i];
    return *this;
  }
  ParamVector& operator-=(const ParamVector& o) {
    check(o);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] -= o.values[i];
    return *this;
  }
  ParamVector& operator*=(T s) {
    for (auto& v : values) v *= s;
    return *this;
  }
  friend ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
  friend ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }

  void check(const ParamVector& o) const {
    if (values.size() != o.values.size())
      throw std::invalid_argument("param vector length mismatch: " +
                                  std::to_string(values.size()) + " vs " +
                                  std::to_string(o.values.size()));
  }
};

template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  const Tensor<T>& forward(const Tensor<T>& x, Mode mode) {
    acts_.resize(layers_.size() + 1);
    acts_[0].resize(x.shape);
    std::copy(x.data.begin(), x.data.end(), acts_[0].data.begin());
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->forward(acts_[i], acts_[i + 1], mode);
    return acts_.back();
  }

  /// Backpropagates d(loss)/d(output); accumulates parameter gradients and
  /// returns d(loss)/d(input).
  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> a, b;
    a.resize(dout.shape);
    std::copy(dout.data.begin(), dout.data.end(), a.data.begin());
    for (std::size_t i = layers_.size(); i-- > 0;) {
      layers_[i]->backward(a, b);
      std::swap(a, b);
    }
    return a;
  }

  std::vector<std::vector<T>*> param_blocks() { return collect(&Layer<T>::params); }
  std::vector<std::vector<T>*> grad_blocks() { return collect(&Layer<T>::grads); }
  std::vector<std::vector<T>*> buffer_blocks() { return collect(&Layer<T>::buffers); }

  std::size_t param_count() {
    std::size_t n = 0;
    for (auto* b : param_blocks()) n += b->size();
    return n;
  }

  ParamVector<T> get_params() { return gather(param_blocks()); }
  ParamVector<T> get_grads() { return gather(grad_blocks()); }
  ParamVector<T> get_buffers() { return gather(buffer_blocks()); }

  void set_params(const ParamVector<T>& pv) { scatter(param_blocks(), pv); }
  void set_buffers(const ParamVector<T>& pv) { scatter(buffer_blocks(), pv); }

  void zero_grads() {
    for (auto* g : grad_blocks()) std::fill(g->begin(), g->end(), T(0));
  }

  void init(Rng& rng) {
    for (auto& l : layers_) l->init(rng);
  }

  std::vector<int> out_shape(std::vector<int> in) const {
    for (const auto& l : layers_) in = l->out_shape(in);
    return in;
  }

  std::size_t layer_count() const { return layers_.size(); }

 private:
  std::vector<std::vector<T>*> collect(std::vector<std::vector<T>*> (Layer<T>::*fn)()) {
    std::vector<std::vector<T>*> out;
    for (auto& l : layers_) {
      auto v = ((*l).*fn)();
      out.insert(out.end(), v.begin(), v.end());
    }
    return out;
  }

  ParamVector<T> gather(const std::vector<std::vector<T>*>& blocks) {
    ParamVector<T> pv;
    std::size_t n = 0;
    for (auto* b : blocks) n += b->size();
    pv.values.reserve(n);
    for (auto* b : blocks) pv.values.insert(pv.values.end(), b->begin(), b->end());
    return pv;
  }

  void scatter(const std::vector<std::vector<T>*>& blocks, const ParamVector<T>& pv) {
    std::size_t off = 0;
    for (auto* b : blocks) {
      if (off + b->size() > pv.values.size())
        throw std::invalid_argument("param vector too short for network");
      std::copy(pv.values.begin() + off, pv.values.begin() + off + b->size(), b->begin());
      off += b->size();
    }
    if (off != pv.values.size())
      throw std::invalid_argument("param vector length does not match network");
  }

  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Tensor<T>> acts_;
};

}  // namespace dfex::nn
