#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <memory>
#include <omp.h>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfex/rng.hpp"
#include "dfex/tensor.hpp"

namespace dfex::nn {

enum class Mode { kTrain, kEval };

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

/// Base layer: forward caches whatever backward needs; backward accumulates
/// parameter gradients (+=) and writes the input gradient.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual void forward(const Tensor<T>& x, Tensor<T>& y, Mode mode) = 0;
  virtual void backward(const Tensor<T>& dy, Tensor<T>& dx) = 0;
  virtual std::vector<std::vector<T>*> params() { return {}; }
  virtual std::vector<std::vector<T>*> grads() { return {}; }
  /// Non-trainable state (batch-norm running stats); checkpointed, not meta-updated.
  virtual std::vector<std::vector<T>*> buffers() { return {}; }
  virtual void init(Rng&) {}
  virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;
  virtual std::string name() const = 0;
};

namespace detail {

template <typename T>
inline void uniform_fanin_init(std::vector<T>& w, std::vector<T>* b, int fan_in, Rng& rng) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (auto& v : w) v = static_cast<T>((2.0 * rng.uniform() - 1.0)) * bound;
  if (b)
    for (auto& v : *b) v = static_cast<T>((2.0 * rng.uniform() - 1.0)) * bound;
}

}  // namespace detail

template <typename T>
class Dense : public Layer<T> {
 public:
  Dense(int in, int out, bool bias = true)
      : in_(in), out_(out), bias_(bias), w_(static_cast<std::size_t>(in) * out), b_(out),
        dw_(w_.size(), T(0)), db_(out, T(0)) {}

  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    const int n = x.dim(0);
    if (static_cast<int>(x.numel()) != n * in_)
      throw std::invalid_argument("dense: input width mismatch, got " + shape_str(x.shape));
    x_ = &x;
    y.resize({n, out_});
    CMapM<T> X(x.ptr(), n, in_);
    CMapM<T> W(w_.data(), out_, in_);
    MapM<T> Y(y.ptr(), n, out_);
    Y.noalias() = X * W.transpose();
    if (bias_) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> B(b_.data(), out_);
      Y.rowwise() += B.transpose();
    }
  }

  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    const int n = dy.dim(0);
    CMapM<T> dY(dy.ptr(), n, out_);
    CMapM<T> X(x_->ptr(), n, in_);
    CMapM<T> W(w_.data(), out_, in_);
    MapM<T> dW(dw_.data(), out_, in_);
    dW.noalias() += dY.transpose() * X;
    if (bias_) {
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dB(db_.data(), out_);
      dB.noalias() += dY.colwise().sum().transpose();
    }
    dx.resize({n, in_});
    MapM<T> dX(dx.ptr(), n, in_);
    dX.noalias() = dY * W;
  }

  std::vector<std::vector<T>*> params() override {
    if (bias_) return {&w_, &b_};
    return {&w_};
  }
  std::vector<std::vector<T>*> grads() override {
    if (bias_) return {&dw_, &db_};
    return {&dw_};
  }
  void init(Rng& rng) override { detail::uniform_fanin_init(w_, bias_ ? &b_ : nullptr, in_, rng); }
  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return {in[0], out_};
  }
  std::string name() const override { return "dense"; }

 private:
  int in_, out_;
  bool bias_;
  std::vector<T> w_, b_, dw_, db_;
  const Tensor<T>* x_ = nullptr;
};

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int cin, int cout, int k, int stride = 1, int pad = 0, bool bias = true)
      : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad), bias_(bias),
        w_(static_cast<std::size_t>(cout) * cin * k * k), b_(cout),
        dw_(w_.size(), T(0)), db_(cout, T(0)) {}

  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    check_input(x);
    x_ = &x;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = out_dim(h), wo = out_dim(w);
    y.resize({n, cout_, ho, wo});
    const int cols = ho * wo;
    const int rows = cin_ * k_ * k_;
    CMapM<T> W(w_.data(), cout_, rows);

#pragma omp parallel
    {
      std::vector<T> col(static_cast<std::size_t>(rows) * cols);
#pragma omp for schedule(static)
      for (int s = 0; s < n; ++s) {
        im2col(x.ptr() + static_cast<std::size_t>(s) * cin_ * h * w, h, w, col.data());
        MapM<T> Y(y.ptr() + static_cast<std::size_t>(s) * cout_ * cols, cout_, cols);
        CMapM<T> C(col.data(), rows, cols);
        Y.noalias() = W * C;
        if (bias_)
          for (int co = 0; co < cout_; ++co) Y.row(co).array() += b_[co];
      }
    }
  }

  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    const Tensor<T>& x = *x_;
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int ho = out_dim(h), wo = out_dim(w);
    const int cols = ho * wo;
    const int rows = cin_ * k_ * k_;
    dx.resize(x.shape);
    CMapM<T> W(w_.data(), cout_, rows);

    const int nthreads = omp_get_max_threads();
    std::vector<std::vector<T>> dw_part(nthreads, std::vector<T>(w_.size(), T(0)));
    std::vector<std::vector<T>> db_part(nthreads, std::vector<T>(b_.size(), T(0)));

#pragma omp parallel
    {
      const int tid = omp_get_thread_num();
      std::vector<T> col(static_cast<std::size_t>(rows) * cols);
      std::vector<T> dcol(static_cast<std::size_t>(rows) * cols);
      MapM<T> dWt(dw_part[tid].data(), cout_, rows);
#pragma omp for schedule(static)
      for (int s = 0; s < n; ++s) {
        im2col(x.ptr() + static_cast<std::size_t>(s) * cin_ * h * w, h, w, col.data());
        CMapM<T> C(col.data(), rows, cols);
        CMapM<T> dY(dy.ptr() + static_cast<std::size_t>(s) * cout_ * cols, cout_, cols);
        dWt.noalias() += dY * C.transpose();
        if (bias_)
          for (int co = 0; co < cout_; ++co) db_part[tid][co] += dY.row(co).sum();
        MapM<T> dC(dcol.data(), rows, cols);
        dC.noalias() = W.transpose() * dY;
        col2im(dcol.data(), h, w, dx.ptr() + static_cast<std::size_t>(s) * cin_ * h * w);
      }
    }
    for (int t = 0; t < nthreads; ++t) {
      for (std::size_t i = 0; i < w_.size(); ++i) dw_[i] += dw_part[t][i];
      for (std::size_t i = 0; i < b_.size(); ++i) db_[i] += db_part[t][i];
    }
  }

  std::vector<std::vector<T>*> params() override {
    if (bias_) return {&w_, &b_};
    return {&w_};
  }
  std::vector<std::vector<T>*> grads() override {
    if (bias_) return {&dw_, &db_};
    return {&dw_};
  }
  void init(Rng& rng) override {
    detail::uniform_fanin_init(w_, bias_ ? &b_ : nullptr, cin_ * k_ * k_, rng);
  }
  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return {in[0], cout_, out_dim(in[2]), out_dim(in[3])};
  }
  std::string name() const override { return "conv2d"; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.ndim() != 4 || x.dim(1) != cin_)
      throw std::invalid_argument("conv2d: expected (N," + std::to_string(cin_) + ",H,W), got " +
                                  shape_str(x.shape));
    if (out_dim(x.dim(2)) <= 0 || out_dim(x.dim(3)) <= 0)
      throw std::invalid_argument("conv2d: input too small: " + shape_str(x.shape));
  }
  int out_dim(int d) const { return (d + 2 * pad_ - k_) / stride_ + 1; }

  void im2col(const T* src, int h, int w, T* col) const {
    const int ho = out_dim(h), wo = out_dim(w);
    for (int c = 0; c < cin_; ++c) {
      const T* plane = src + static_cast<std::size_t>(c) * h * w;
      for (int ki = 0; ki < k_; ++ki) {
        for (int kj = 0; kj < k_; ++kj) {
          T* row = col + (static_cast<std::size_t>((c * k_ + ki) * k_ + kj)) * ho * wo;
          for (int oi = 0; oi < ho; ++oi) {
            const int ii = oi * stride_ + ki - pad_;
            if (ii < 0 || ii >= h) {
              for (int oj = 0; oj < wo; ++oj) row[oi * wo + oj] = T(0);
              continue;
            }
            const T* srow = plane + static_cast<std::size_t>(ii) * w;
            for (int oj = 0; oj < wo; ++oj) {
              const int jj = oj * stride_ + kj - pad_;
              row[oi * wo + oj] = (jj >= 0 && jj < w) ? srow[jj] : T(0);
            }
          }
        }
      }
    }
  }

  void col2im(const T* col, int h, int w, T* dst) const {
    const int ho = out_dim(h), wo = out_dim(w);
    std::fill(dst, dst + static_cast<std::size_t>(cin_) * h * w, T(0));
    for (int c = 0; c < cin_; ++c) {
      T* plane = dst + static_cast<std::size_t>(c) * h * w;
      for (int ki = 0; ki < k_; ++ki) {
        for (int kj = 0; kj < k_; ++kj) {
          const T* row = col + (static_cast<std::size_t>((c * k_ + ki) * k_ + kj)) * ho * wo;
          for (int oi = 0; oi < ho; ++oi) {
            const int ii = oi * stride_ + ki - pad_;
            if (ii < 0 || ii >= h) continue;
            T* drow = plane + static_cast<std::size_t>(ii) * w;
            for (int oj = 0; oj < wo; ++oj) {
              const int jj = oj * stride_ + kj - pad_;
              if (jj >= 0 && jj < w) drow[jj] += row[oi * wo + oj];
            }
          }
        }
      }
    }
  }

  int cin_, cout_, k_, stride_, pad_;
  bool bias_;
  std::vector<T> w_, b_, dw_, db_;
  const Tensor<T>* x_ = nullptr;
};

/// Batch normalization over (N, C, H, W) or (N, C) inputs, per channel C.
template <typename T>
class BatchNorm : public Layer<T> {
 public:
  explicit BatchNorm(int channels, T momentum = T(0.1), T eps = T(1e-5))
      : c_(channels), momentum_(momentum), eps_(eps), gamma_(channels, T(1)), beta_(channels, T(0)),
        dgamma_(channels, T(0)), dbeta_(channels, T(0)), run_mean_(channels, T(0)),
        run_var_(channels, T(1)) {}

  void forward(const Tensor<T>& x, Tensor<T>& y, Mode mode) override {
    if (x.dim(1) != c_)
      throw std::invalid_argument("batchnorm: channel mismatch, got " + shape_str(x.shape));
    const int n = x.dim(0);
    const int hw = static_cast<int>(x.numel()) / (n * c_);
    n_ = n;
    hw_ = hw;
    train_ = (mode == Mode::kTrain);
    y.resize(x.shape);
    xhat_.resize(x.shape);
    inv_std_.assign(c_, T(0));
    const double m = static_cast<double>(n) * hw;

#pragma omp parallel for schedule(static)
    for (int c = 0; c < c_; ++c) {
      double mu, var;
      if (train_) {
        double s1 = 0.0, s2 = 0.0;
        for (int s = 0; s < n; ++s) {
          const T* p = plane(x, s, c);
          for (int i = 0; i < hw; ++i) {
            s1 += p[i];
            s2 += static_cast<double>(p[i]) * p[i];
          }
        }
        mu = s1 / m;
        var = s2 / m - mu * mu;
        if (var < 0.0) var = 0.0;
        run_mean_[c] = (T(1) - momentum_) * run_mean_[c] + momentum_ * static_cast<T>(mu);
        run_var_[c] = (T(1) - momentum_) * run_var_[c] + momentum_ * static_cast<T>(var);
      } else {
        mu = run_mean_[c];
        var = run_var_[c];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
      inv_std_[c] = inv;
      const T muT = static_cast<T>(mu);
      for (int s = 0; s < n; ++s) {
        const T* p = plane(x, s, c);
        T* q = plane(y, s, c);
        T* xh = plane(xhat_, s, c);
        for (int i = 0; i < hw; ++i) {
          xh[i] = (p[i] - muT) * inv;
          q[i] = gamma_[c] * xh[i] + beta_[c];
        }
      }
    }
  }

  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    dx.resize(dy.shape);
    const int n = n_, hw = hw_;
    const double m = static_cast<double>(n) * hw;

#pragma omp parallel for schedule(static)
    for (int c = 0; c < c_; ++c) {
      double s1 = 0.0, s2 = 0.0;
      for (int s = 0; s < n; ++s) {
        const T* dyp = plane(dy, s, c);
        const T* xh = plane(xhat_, s, c);
        for (int i = 0; i < hw; ++i) {
          s1 += dyp[i];
          s2 += static_cast<double>(dyp[i]) * xh[i];
        }
      }
      dbeta_[c] += static_cast<T>(s1);
      dgamma_[c] += static_cast<T>(s2);
      const T g_inv = gamma_[c] * inv_std_[c];
      if (train_) {
        const T mean_dy = static_cast<T>(s1 / m);
        const T mean_dyxh = static_cast<T>(s2 / m);
        for (int s = 0; s < n; ++s) {
          const T* dyp = plane(dy, s, c);
          const T* xh = plane(xhat_, s, c);
          T* dxp = plane(dx, s, c);
          for (int i = 0; i < hw; ++i) dxp[i] = g_inv * (dyp[i] - mean_dy - xh[i] * mean_dyxh);
        }
      } else {
        for (int s = 0; s < n; ++s) {
          const T* dyp = plane(dy, s, c);
          T* dxp = plane(dx, s, c);
          for (int i = 0; i < hw; ++i) dxp[i] = g_inv * dyp[i];
        }
      }
    }
  }

  std::vector<std::vector<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::vector<T>*> grads() override { return {&dgamma_, &dbeta_}; }
  std::vector<std::vector<T>*> buffers() override { return {&run_mean_, &run_var_}; }
  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
  std::string name() const override { return "batchnorm"; }

 private:
  template <typename Tn>
  T* plane(Tn& t, int s, int c) const {
    return t.ptr() + (static_cast<std::size_t>(s) * c_ + c) * hw_;
  }
  const T* plane(const Tensor<T>& t, int s, int c) const {
    return t.ptr() + (static_cast<std::size_t>(s) * c_ + c) * hw_;
  }

  int c_;
  T momentum_, eps_;
  std::vector<T> gamma_, beta_, dgamma_, dbeta_, run_mean_, run_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  int n_ = 0, hw_ = 0;
  bool train_ = true;
};

template <typename T>
class ReLU : public Layer<T> {
 public:
  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    y.resize(x.shape);
    const std::size_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
      y[i] = x[i] > T(0) ? x[i] : T(0);
    y_ = &y;
  }
  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    dx.resize(dy.shape);
    const Tensor<T>& y = *y_;
    const std::size_t n = dy.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
      dx[i] = y[i] > T(0) ? dy[i] : T(0);
  }
  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
  std::string name() const override { return "relu"; }

 private:
  const Tensor<T>* y_ = nullptr;
};

template <typename T>
class LeakyReLU : public Layer<T> {
 public:
  explicit LeakyReLU(T slope = T(0.2)) : slope_(slope) {}
  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    y.resize(x.shape);
    const std::size_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
      y[i] = x[i] > T(0) ? x[i] : slope_ * x[i];
    y_ = &y;
  }
  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    dx.resize(dy.shape);
    const Tensor<T>& y = *y_;
    const std::size_t n = dy.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
      dx[i] = y[i] > T(0) ? dy[i] : slope_ * dy[i];
  }
  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
  std::string name() const override { return "leaky_relu"; }

 private:
  T slope_;
  const Tensor<T>* y_ = nullptr;
};

template <typename T>
class Tanh : public Layer<T> {
 public:
  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    y.resize(x.shape);
    const std::size_t n = x.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
      y[i] = std::tanh(x[i]);
    y_ = &y;
  }
  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    dx.resize(dy.shape);
    const Tensor<T>& y = *y_;
    const std::size_t n = dy.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
      dx[i] = dy[i] * (T(1) - y[i] * y[i]);
  }
  std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
  std::string name() const override { return "tanh"; }

 private:
  const Tensor<T>* y_ = nullptr;
};

template <typename T>
class MaxPool2d : public Layer<T> {
 public:
  explicit MaxPool2d(int k, int stride = 0) : k_(k), stride_(stride ? stride : k) {}

  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int ho = (h - k_) / stride_ + 1, wo = (w - k_) / stride_ + 1;
    y.resize({n, c, ho, wo});
    in_shape_ = x.shape;
    argmax_.resize(y.numel());
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n * c; ++s) {
      const T* plane = x.ptr() + static_cast<std::size_t>(s) * h * w;
      T* out = y.ptr() + static_cast<std::size_t>(s) * ho * wo;
      std::int32_t* am = argmax_.data() + static_cast<std::size_t>(s) * ho * wo;
      for (int oi = 0; oi < ho; ++oi) {
        for (int oj = 0; oj < wo; ++oj) {
          T best = plane[(oi * stride_) * w + oj * stride_];
          int besti = (oi * stride_) * w + oj * stride_;
          for (int ki = 0; ki < k_; ++ki) {
            for (int kj = 0; kj < k_; ++kj) {
              const int idx = (oi * stride_ + ki) * w + oj * stride_ + kj;
              if (plane[idx] > best) {
                best = plane[idx];
                besti = idx;
              }
            }
          }
          out[oi * wo + oj] = best;
          am[oi * wo + oj] = besti;
        }
      }
    }
  }

  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    dx.resize(in_shape_);
    dx.fill(T(0));
    const int n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    const int per_out = static_cast<int>(dy.numel()) / (n * c);
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n * c; ++s) {
      const T* dyp = dy.ptr() + static_cast<std::size_t>(s) * per_out;
      const std::int32_t* am = argmax_.data() + static_cast<std::size_t>(s) * per_out;
      T* dxp = dx.ptr() + static_cast<std::size_t>(s) * h * w;
      for (int i = 0; i < per_out; ++i) dxp[am[i]] += dyp[i];
    }
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return {in[0], in[1], (in[2] - k_) / stride_ + 1, (in[3] - k_) / stride_ + 1};
  }
  std::string name() const override { return "maxpool2d"; }

 private:
  int k_, stride_;
  std::vector<int> in_shape_;
  std::vector<std::int32_t> argmax_;
};

template <typename T>
class GlobalAvgPool : public Layer<T> {
 public:
  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    in_shape_ = x.shape;
    y.resize({n, c});
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n * c; ++s) {
      const T* p = x.ptr() + static_cast<std::size_t>(s) * hw;
      T acc = T(0);
      for (int i = 0; i < hw; ++i) acc += p[i];
      y[static_cast<std::size_t>(s)] = acc / static_cast<T>(hw);
    }
  }
  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    dx.resize(in_shape_);
    const int n = in_shape_[0], c = in_shape_[1], hw = in_shape_[2] * in_shape_[3];
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n * c; ++s) {
      const T g = dy[static_cast<std::size_t>(s)] / static_cast<T>(hw);
      T* p = dx.ptr() + static_cast<std::size_t>(s) * hw;
      for (int i = 0; i < hw; ++i) p[i] = g;
    }
  }
  std::vector<int> out_shape(const std::vector<int>& in) const override { return {in[0], in[1]}; }
  std::string name() const override { return "global_avg_pool"; }

 private:
  std::vector<int> in_shape_;
};

/// Nearest-neighbour 2x spatial upsampling.
template <typename T>
class Upsample2x : public Layer<T> {
 public:
  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    in_shape_ = x.shape;
    y.resize({n, c, 2 * h, 2 * w});
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n * c; ++s) {
      const T* src = x.ptr() + static_cast<std::size_t>(s) * h * w;
      T* dst = y.ptr() + static_cast<std::size_t>(s) * 4 * h * w;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const T v = src[i * w + j];
          T* q = dst + (2 * i) * 2 * w + 2 * j;
          q[0] = v;
          q[1] = v;
          q[2 * w] = v;
          q[2 * w + 1] = v;
        }
      }
    }
  }
  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    dx.resize(in_shape_);
    const int n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
#pragma omp parallel for schedule(static)
    for (int s = 0; s < n * c; ++s) {
      const T* src = dy.ptr() + static_cast<std::size_t>(s) * 4 * h * w;
      T* dst = dx.ptr() + static_cast<std::size_t>(s) * h * w;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const T* q = src + (2 * i) * 2 * w + 2 * j;
          dst[i * w + j] = q[0] + q[1] + q[2 * w] + q[2 * w + 1];
        }
      }
    }
  }
  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return {in[0], in[1], 2 * in[2], 2 * in[3]};
  }
  std::string name() const override { return "upsample2x"; }

 private:
  std::vector<int> in_shape_;
};

template <typename T>
class Flatten : public Layer<T> {
 public:
  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    in_shape_ = x.shape;
    y.resize({x.dim(0), static_cast<int>(x.numel()) / x.dim(0)});
    std::copy(x.data.begin(), x.data.end(), y.data.begin());
  }
  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    dx.resize(in_shape_);
    std::copy(dy.data.begin(), dy.data.end(), dx.data.begin());
  }
  std::vector<int> out_shape(const std::vector<int>& in) const override {
    int d = 1;
    for (std::size_t i = 1; i < in.size(); ++i) d *= in[i];
    return {in[0], d};
  }
  std::string name() const override { return "flatten"; }

 private:
  std::vector<int> in_shape_;
};

/// Reshapes (N, D) to (N, c, h, w); D must equal c*h*w.
template <typename T>
class Reshape : public Layer<T> {
 public:
  Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
  void forward(const Tensor<T>& x, Tensor<T>& y, Mode) override {
    if (static_cast<int>(x.numel()) != x.dim(0) * c_ * h_ * w_)
      throw std::invalid_argument("reshape: numel mismatch, got " + shape_str(x.shape));
    in_shape_ = x.shape;
    y.resize({x.dim(0), c_, h_, w_});
    std::copy(x.data.begin(), x.data.end(), y.data.begin());
  }
  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    dx.resize(in_shape_);
    std::copy(dy.data.begin(), dy.data.end(), dx.data.begin());
  }
  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return {in[0], c_, h_, w_};
  }
  std::string name() const override { return "reshape"; }

 private:
  int c_, h_, w_;
  std::vector<int> in_shape_;
};

/// Pre-activation-free basic residual block: conv-bn-relu-conv-bn (+ projection
/// shortcut when shape changes), then relu.
template <typename T>
class ResidualBlock : public Layer<T> {
 public:
  ResidualBlock(int cin, int cout, int stride)
      : conv1_(cin, cout, 3, stride, 1, /*bias=*/false), bn1_(cout),
        conv2_(cout, cout, 3, 1, 1, /*bias=*/false), bn2_(cout),
        project_(stride != 1 || cin != cout) {
    if (project_) {
      proj_conv_ = std::make_unique<Conv2d<T>>(cin, cout, 1, stride, 0, /*bias=*/false);
      proj_bn_ = std::make_unique<BatchNorm<T>>(cout);
    }
  }

  void forward(const Tensor<T>& x, Tensor<T>& y, Mode mode) override {
    conv1_.forward(x, a1_, mode);
    bn1_.forward(a1_, a2_, mode);
    relu1_.forward(a2_, a3_, mode);
    conv2_.forward(a3_, a4_, mode);
    bn2_.forward(a4_, a5_, mode);
    if (project_) {
      proj_conv_->forward(x, s1_, mode);
      proj_bn_->forward(s1_, s2_, mode);
    }
    const Tensor<T>& sc = project_ ? s2_ : x;
    sum_.resize(a5_.shape);
    const std::size_t n = sum_.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i)
      sum_[i] = a5_[i] + sc[i];
    relu2_.forward(sum_, y, mode);
  }

  void backward(const Tensor<T>& dy, Tensor<T>& dx) override {
    relu2_.backward(dy, dsum_);
    bn2_.backward(dsum_, g1_);
    conv2_.backward(g1_, g2_);
    relu1_.backward(g2_, g3_);
    bn1_.backward(g3_, g4_);
    conv1_.backward(g4_, dx);
    if (project_) {
      proj_bn_->backward(dsum_, g5_);
      proj_conv_->backward(g5_, g6_);
      const std::size_t n = dx.numel();
#pragma omp parallel for schedule(static)
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) dx[i] += g6_[i];
    } else {
      const std::size_t n = dx.numel();
#pragma omp parallel for schedule(static)
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) dx[i] += dsum_[i];
    }
  }

  std::vector<std::vector<T>*> params() override { return collect(&Layer<T>::params); }
  std::vector<std::vector<T>*> grads() override { return collect(&Layer<T>::grads); }
  std::vector<std::vector<T>*> buffers() override { return collect(&Layer<T>::buffers); }

  void init(Rng& rng) override {
    conv1_.init(rng);
    bn1_.init(rng);
    conv2_.init(rng);
    bn2_.init(rng);
    if (project_) {
      proj_conv_->init(rng);
      proj_bn_->init(rng);
    }
  }

  std::vector<int> out_shape(const std::vector<int>& in) const override {
    return bn2_.out_shape(conv2_.out_shape(conv1_.out_shape(in)));
  }
  std::string name() const override { return "residual_block"; }

 private:
  std::vector<std::vector<T>*> collect(std::vector<std::vector<T>*> (Layer<T>::*fn)()) {
    std::vector<std::vector<T>*> out;
    for (Layer<T>* l : std::vector<Layer<T>*>{&conv1_, &bn1_, &conv2_, &bn2_}) {
      auto v = (l->*fn)();
      out.insert(out.end(), v.begin(), v.end());
    }
    if (project_) {
      for (Layer<T>* l : std::vector<Layer<T>*>{proj_conv_.get(), proj_bn_.get()}) {
        auto v = (l->*fn)();
        out.insert(out.end(), v.begin(), v.end());
      }
    }
    return out;
  }

  Conv2d<T> conv1_;
  BatchNorm<T> bn1_;
  Conv2d<T> conv2_;
  BatchNorm<T> bn2_;
  ReLU<T> relu1_, relu2_;
  bool project_;
  std::unique_ptr<Conv2d<T>> proj_conv_;
  std::unique_ptr<BatchNorm<T>> proj_bn_;
  Tensor<T> a1_, a2_, a3_, a4_, a5_, s1_, s2_, sum_;
  Tensor<T> dsum_, g1_, g2_, g3_, g4_, g5_, g6_;
};

}  // namespace dfex::nn
