#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace dfex::nn {

/// SGD with classic momentum; weight decay is added to the gradient.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(T lr, T momentum, T weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(const std::vector<std::vector<T>*>& params, const std::vector<std::vector<T>*>& grads) {
    ensure_state(params);
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto& p = *params[b];
      const auto& g = *grads[b];
      auto& v = vel_[b];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const T gi = g[i] + weight_decay_ * p[i];
        v[i] = momentum_ * v[i] + gi;
        p[i] -= lr_ * v[i];
      }
    }
  }

  T lr() const { return lr_; }
  void set_lr(T lr) { lr_ = lr; }

  std::vector<T> state_blob() const {
    std::vector<T> out;
    for (const auto& v : vel_) out.insert(out.end(), v.begin(), v.end());
    return out;
  }
  void restore_state(const std::vector<std::vector<T>*>& params, const std::vector<T>& blob) {
    ensure_state(params);
    std::size_t off = 0;
    for (auto& v : vel_) {
      if (off + v.size() > blob.size()) throw std::invalid_argument("sgd state blob too short");
      std::copy(blob.begin() + off, blob.begin() + off + v.size(), v.begin());
      off += v.size();
    }
    if (off != blob.size()) throw std::invalid_argument("sgd state blob length mismatch");
  }

 private:
  void ensure_state(const std::vector<std::vector<T>*>& params) {
    if (vel_.size() == params.size()) return;
    vel_.clear();
    for (auto* p : params) vel_.emplace_back(p->size(), T(0));
  }

  T lr_, momentum_, weight_decay_;
  std::vector<std::vector<T>> vel_;
};

/// Adam; weight decay is added to the gradient (not decoupled).
template <typename T>
class Adam {
 public:
  Adam(T lr, T weight_decay = T(0), T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::vector<T>*>& params, const std::vector<std::vector<T>*>& grads) {
    ensure_state(params);
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), t_));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), t_));
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto& p = *params[b];
      const auto& g = *grads[b];
      auto& m = m_[b];
      auto& v = v_[b];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const T gi = g[i] + weight_decay_ * p[i];
        m[i] = beta1_ * m[i] + (T(1) - beta1_) * gi;
        v[i] = beta2_ * v[i] + (T(1) - beta2_) * gi * gi;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  T lr() const { return lr_; }
  long long steps_taken() const { return t_; }

  std::vector<T> state_blob() const {
    std::vector<T> out;
    out.push_back(static_cast<T>(t_));
    for (const auto& v : m_) out.insert(out.end(), v.begin(), v.end());
    for (const auto& v : v_) out.insert(out.end(), v.begin(), v.end());
    return out;
  }
  void restore_state(const std::vector<std::vector<T>*>& params, const std::vector<T>& blob) {
    ensure_state(params);
    if (blob.empty()) throw std::invalid_argument("adam state blob empty");
    t_ = static_cast<long long>(blob[0]);
    std::size_t off = 1;
    for (auto* vecs : {&m_, &v_}) {
      for (auto& v : *vecs) {
        if (off + v.size() > blob.size()) throw std::invalid_argument("adam state blob too short");
        std::copy(blob.begin() + off, blob.begin() + off + v.size(), v.begin());
        off += v.size();
      }
    }
    if (off != blob.size()) throw std::invalid_argument("adam state blob length mismatch");
  }

 private:
  void ensure_state(const std::vector<std::vector<T>*>& params) {
    if (m_.size() == params.size()) return;
    m_.clear();
    v_.clear();
    for (auto* p : params) {
      m_.emplace_back(p->size(), T(0));
      v_.emplace_back(p->size(), T(0));
    }
  }

  T lr_, weight_decay_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace dfex::nn
