#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dfex/errors.hpp"
#include "dfex/losses.hpp"
#include "dfex/models.hpp"
#include "dfex/network.hpp"
#include "dfex/optim.hpp"
#include "dfex/rng.hpp"
#include "dfex/tensor.hpp"

namespace dfex::genmeta {

/// Softmax outputs of K ensemble members on a batch of N samples, C classes.
template <typename T>
struct ProbabilityBatch {
  int members = 0;  // K
  int batch = 0;    // N
  int classes = 0;  // C
  std::vector<T> probs;  // [K][N][C]

  ProbabilityBatch() = default;
  ProbabilityBatch(int k, int n, int c)
      : members(k), batch(n), classes(c),
        probs(static_cast<std::size_t>(k) * n * c, T(0)) {}

  T& at(int k, int n, int c) {
    return probs[(static_cast<std::size_t>(k) * batch + n) * classes + c];
  }
  T at(int k, int n, int c) const {
    return probs[(static_cast<std::size_t>(k) * batch + n) * classes + c];
  }

  void validate(double tol = 1e-5) const {
    if (members < 2) throw ConfigError("probability batch: ensemble size K must be >= 2");
    if (batch < 1 || classes < 1) throw InputError("probability batch: empty batch or classes");
    for (int k = 0; k < members; ++k) {
      for (int n = 0; n < batch; ++n) {
        double sum = 0.0;
        for (int c = 0; c < classes; ++c) {
          const T v = at(k, n, c);
          if (v < T(0)) throw InputError("probability batch: negative entry");
          sum += static_cast<double>(v);
        }
        if (std::abs(sum - 1.0) > tol)
          throw InputError("probability batch: row does not sum to 1 (sum=" +
                           std::to_string(sum) + ")");
      }
    }
  }
};

enum class DiversityMode { kPooledMean, kPerSample };

enum class InnerOptimizer { kAdam, kPlainSgd };

template <typename T>
struct GeneratorLossConfig {
  T lambda_div = T(0.2);          // diversity coefficient
  int adapt_steps = 2;            // p
  T adapt_lr = T(1e-4);           // alpha
  T outer_lr = T(0.1);            // epsilon / outer optimizer lr
  int batch_size = 256;           // N (noise batch per adaptation step)
  DiversityMode diversity_mode = DiversityMode::kPooledMean;
  InnerOptimizer inner_optimizer = InnerOptimizer::kAdam;
  T adapt_weight_decay = T(5e-4);

  void validate() const {
    if (lambda_div < T(0)) throw ConfigError("lambda_div must be >= 0");
    if (adapt_steps < 0) throw ConfigError("adapt_steps must be >= 0");
    if (adapt_lr <= T(0)) throw ConfigError("adapt_lr must be > 0");
    if (outer_lr <= T(0)) throw ConfigError("outer_lr must be > 0");
    if (batch_size <= 0) throw ConfigError("batch_size must be > 0");
  }
};

/// Standard-normal noise batch of shape (n, d), reproducible from rng state.
template <typename T>
nn::Tensor<T> sample_noise(int n, int d, nn::Rng& rng) {
  if (n <= 0 || d <= 0) throw InputError("sample_noise: n and d must be positive");
  nn::Tensor<T> z({n, d});
  for (auto& v : z.data) v = static_cast<T>(rng.normal());
  return z;
}

/// Negated batch-mean, class-summed population standard deviation across the
/// ensemble. Always <= 0; 0 iff all members agree exactly.
template <typename T>
T discrepancy_loss(const ProbabilityBatch<T>& pb) {
  if (pb.members < 2) throw ConfigError("discrepancy_loss: K must be >= 2");
  const int k_count = pb.members, n_count = pb.batch, c_count = pb.classes;
  double acc = 0.0;
  for (int n = 0; n < n_count; ++n) {
    for (int c = 0; c < c_count; ++c) {
      double mean = 0.0;
      for (int k = 0; k < k_count; ++k) mean += pb.at(k, n, c);
      mean /= k_count;
      double var = 0.0;
      for (int k = 0; k < k_count; ++k) {
        const double d = pb.at(k, n, c) - mean;
        var += d * d;
      }
      acc += std::sqrt(var / k_count);
    }
  }
  return static_cast<T>(-acc / n_count);
}

/// d(discrepancy_loss)/d(probs); zero where the per-class std vanishes.
template <typename T>
void discrepancy_loss_grad(const ProbabilityBatch<T>& pb, ProbabilityBatch<T>& grad) {
  if (pb.members < 2) throw ConfigError("discrepancy_loss: K must be >= 2");
  const int k_count = pb.members, n_count = pb.batch, c_count = pb.classes;
  grad = ProbabilityBatch<T>(k_count, n_count, c_count);
  for (int n = 0; n < n_count; ++n) {
    for (int c = 0; c < c_count; ++c) {
      double mean = 0.0;
      for (int k = 0; k < k_count; ++k) mean += pb.at(k, n, c);
      mean /= k_count;
      double var = 0.0;
      for (int k = 0; k < k_count; ++k) {
        const double d = pb.at(k, n, c) - mean;
        var += d * d;
      }
      const double s = std::sqrt(var / k_count);
      if (s <= 0.0) continue;
      const double scale = -1.0 / (static_cast<double>(n_count) * k_count * s);
      for (int k = 0; k < k_count; ++k)
        grad.at(k, n, c) = static_cast<T>(scale * (pb.at(k, n, c) - mean));
    }
  }
}

/// Negated-entropy diversity term. Pooled mode: sum_c m_c log m_c over the
/// batch-pooled mean m; per-sample mode: batch average of the same expression
/// on each sample's ensemble mean. Range [-log C, 0]; 0 log 0 := 0.
template <typename T>
T diversity_loss(const ProbabilityBatch<T>& pb,
                 DiversityMode mode = DiversityMode::kPooledMean) {
  const int k_count = pb.members, n_count = pb.batch, c_count = pb.classes;
  if (mode == DiversityMode::kPooledMean) {
    double acc = 0.0;
    for (int c = 0; c < c_count; ++c) {
      double m = 0.0;
      for (int k = 0; k < k_count; ++k)
        for (int n = 0; n < n_count; ++n) m += pb.at(k, n, c);
      m /= static_cast<double>(k_count) * n_count;
      if (m > 0.0) acc += m * std::log(m);
    }
    return static_cast<T>(acc);
  }
  double acc = 0.0;
  for (int n = 0; n < n_count; ++n) {
    for (int c = 0; c < c_count; ++c) {
      double m = 0.0;
      for (int k = 0; k < k_count; ++k) m += pb.at(k, n, c);
      m /= k_count;
      if (m > 0.0) acc += m * std::log(m);
    }
  }
  return static_cast<T>(acc / n_count);
}

template <typename T>
void diversity_loss_grad(const ProbabilityBatch<T>& pb, DiversityMode mode,
                         ProbabilityBatch<T>& grad) {
  const int k_count = pb.members, n_count = pb.batch, c_count = pb.classes;
  grad = ProbabilityBatch<T>(k_count, n_count, c_count);
  if (mode == DiversityMode::kPooledMean) {
    const double denom = static_cast<double>(k_count) * n_count;
    for (int c = 0; c < c_count; ++c) {
      double m = 0.0;
      for (int k = 0; k < k_count; ++k)
        for (int n = 0; n < n_count; ++n) m += pb.at(k, n, c);
      m /= denom;
      const double g = (std::log(m) + 1.0) / denom;
      for (int k = 0; k < k_count; ++k)
        for (int n = 0; n < n_count; ++n) grad.at(k, n, c) = static_cast<T>(g);
    }
    return;
  }
  for (int n = 0; n < n_count; ++n) {
    for (int c = 0; c < c_count; ++c) {
      double m = 0.0;
      for (int k = 0; k < k_count; ++k) m += pb.at(k, n, c);
      m /= k_count;
      const double g = (std::log(m) + 1.0) / (static_cast<double>(n_count) * k_count);
      for (int k = 0; k < k_count; ++k) grad.at(k, n, c) = static_cast<T>(g);
    }
  }
}

template <typename T>
T generator_loss(const ProbabilityBatch<T>& pb, const GeneratorLossConfig<T>& cfg) {
  return discrepancy_loss(pb) + cfg.lambda_div * diversity_loss(pb, cfg.diversity_mode);
}

struct GeneratorLossParts {
  double total = 0, discrepancy = 0, diversity = 0;
};

template <typename T>
GeneratorLossParts generator_loss_grad(const ProbabilityBatch<T>& pb,
                                       const GeneratorLossConfig<T>& cfg,
                                       ProbabilityBatch<T>& grad) {
  ProbabilityBatch<T> gdiv;
  discrepancy_loss_grad(pb, grad);
  diversity_loss_grad(pb, cfg.diversity_mode, gdiv);
  for (std::size_t i = 0; i < grad.probs.size(); ++i)
    grad.probs[i] += cfg.lambda_div * gdiv.probs[i];
  GeneratorLossParts parts;
  parts.discrepancy = static_cast<double>(discrepancy_loss(pb));
  parts.diversity = static_cast<double>(diversity_loss(pb, cfg.diversity_mode));
  parts.total = parts.discrepancy + static_cast<double>(cfg.lambda_div) * parts.diversity;
  return parts;
}

/// Chain rule through a softmax row: d(loss)/d(logit_c) from d(loss)/d(prob).
template <typename T>
void softmax_backward_row(const T* probs, const T* dprobs, T* dlogits, int c_count) {
  double dot = 0.0;
  for (int c = 0; c < c_count; ++c) dot += static_cast<double>(dprobs[c]) * probs[c];
  for (int c = 0; c < c_count; ++c)
    dlogits[c] = static_cast<T>(probs[c] * (static_cast<double>(dprobs[c]) - dot));
}

/// An objective over a parameter vector: evaluates the loss and its gradient
/// at the given point. Implementations may draw fresh noise from rng.
template <typename T>
class AdaptObjective {
 public:
  virtual ~AdaptObjective() = default;
  virtual T eval_with_grad(const nn::ParamVector<T>& params, nn::ParamVector<T>& grad,
                           nn::Rng& rng) = 0;
};

/// Generator loss through the frozen substitute ensemble: noise -> generator
/// -> each member -> softmax -> combined loss; gradient w.r.t. generator
/// parameters only.
template <typename T>
class GeneratorEnsembleObjective : public AdaptObjective<T> {
 public:
  GeneratorEnsembleObjective(models::Network<T>& generator,
                             std::vector<models::Network<T>*> members,
                             GeneratorLossConfig<T> cfg)
      : gen_(generator), members_(std::move(members)), cfg_(cfg) {
    if (members_.size() < 2) throw ConfigError("generator objective: K must be >= 2");
  }

  T eval_with_grad(const nn::ParamVector<T>& params, nn::ParamVector<T>& grad,
                   nn::Rng& rng) override {
    gen_.set_params(params);
    gen_.zero_grads();
    const int n = cfg_.batch_size;
    const int d = gen_.spec().latent_dim;
    const auto z = sample_noise<T>(n, d, rng);
    const nn::Tensor<T>& images = gen_.forward(z);

    const int k_count = static_cast<int>(members_.size());
    const int c_count = members_[0]->spec().num_classes;
    ProbabilityBatch<T> pb(k_count, n, c_count);
    for (int k = 0; k < k_count; ++k) {
      const nn::Tensor<T>& logits = members_[static_cast<std::size_t>(k)]->forward(images);
      nn::Tensor<T> probs;
      nn::softmax_rows(logits, probs);
      std::copy(probs.data.begin(), probs.data.end(),
                pb.probs.begin() + static_cast<std::size_t>(k) * n * c_count);
    }

    ProbabilityBatch<T> dprobs;
    last_parts_ = generator_loss_grad(pb, cfg_, dprobs);

    nn::Tensor<T> dimages(images.shape, T(0));
    nn::Tensor<T> dlogits({n, c_count});
    for (int k = 0; k < k_count; ++k) {
      for (int row = 0; row < n; ++row) {
        const T* p = pb.probs.data() + (static_cast<std::size_t>(k) * n + row) * c_count;
        const T* dp = dprobs.probs.data() + (static_cast<std::size_t>(k) * n + row) * c_count;
        softmax_backward_row(p, dp, dlogits.ptr() + static_cast<std::size_t>(row) * c_count,
                             c_count);
      }
      nn::Tensor<T> dx = members_[static_cast<std::size_t>(k)]->backward(dlogits);
      for (std::size_t i = 0; i < dimages.numel(); ++i) dimages[i] += dx[i];
    }
    gen_.backward(dimages);
    grad = gen_.grads();
    return static_cast<T>(last_parts_.total);
  }

  const GeneratorLossParts& last_parts() const { return last_parts_; }

 private:
  models::Network<T>& gen_;
  std::vector<models::Network<T>*> members_;
  GeneratorLossConfig<T> cfg_;
  GeneratorLossParts last_parts_;
};

template <typename T>
struct AdaptResult {
  nn::ParamVector<T> theta_hat;
  std::vector<T> step_losses;
};

/// p optimizer steps on the objective starting from a copy of theta; theta
/// itself is never modified. Optimizer state is fresh for every call.
template <typename T>
AdaptResult<T> adapt(const nn::ParamVector<T>& theta, AdaptObjective<T>& objective,
                     const GeneratorLossConfig<T>& cfg, nn::Rng& rng) {
  cfg.validate();
  AdaptResult<T> result;
  result.theta_hat = theta;
  nn::ParamVector<T> grad;
  nn::Adam<T> adam(cfg.adapt_lr, cfg.adapt_weight_decay);
  for (int step = 0; step < cfg.adapt_steps; ++step) {
    const T loss = objective.eval_with_grad(result.theta_hat, grad, rng);
    if (!std::isfinite(static_cast<double>(loss)))
      throw NumericalError("adapt: non-finite loss at step " + std::to_string(step));
    for (const T g : grad.values)
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericalError("adapt: non-finite gradient at step " + std::to_string(step));
    result.step_losses.push_back(loss);
    if (cfg.inner_optimizer == InnerOptimizer::kAdam) {
      adam.step({&result.theta_hat.values}, {&grad.values});
    } else {
      for (std::size_t i = 0; i < result.theta_hat.values.size(); ++i)
        result.theta_hat.values[i] -= cfg.adapt_lr * grad.values[i];
    }
  }
  return result;
}

/// Plain first-order meta update: theta + epsilon * (theta_hat - theta).
template <typename T>
nn::ParamVector<T> reptile_update(const nn::ParamVector<T>& theta,
                                  const nn::ParamVector<T>& theta_hat, T epsilon) {
  theta.check(theta_hat);
  nn::ParamVector<T> out = theta;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] += epsilon * (theta_hat.values[i] - theta.values[i]);
  return out;
}

/// Outer update engine: either the plain interpolation above or Adam fed the
/// pseudo-gradient (theta - theta_hat), with persistent optimizer state.
template <typename T>
class OuterUpdater {
 public:
  enum class Kind { kPlain, kAdam };

  OuterUpdater(Kind kind, T lr, T weight_decay = T(0))
      : kind_(kind), lr_(lr), adam_(lr, weight_decay) {}

  nn::ParamVector<T> update(const nn::ParamVector<T>& theta,
                            const nn::ParamVector<T>& theta_hat) {
    theta.check(theta_hat);
    if (kind_ == Kind::kPlain) return reptile_update(theta, theta_hat, lr_);
    nn::ParamVector<T> out = theta;
    nn::ParamVector<T> pseudo_grad = theta;
    pseudo_grad -= theta_hat;
    adam_.step({&out.values}, {&pseudo_grad.values});
    return out;
  }

  std::vector<T> state_blob() const { return adam_.state_blob(); }
  void restore_state(nn::ParamVector<T>& theta, const std::vector<T>& blob) {
    adam_.restore_state({&theta.values}, blob);
  }

 private:
  Kind kind_;
  T lr_;
  nn::Adam<T> adam_;
};

}  // namespace dfex::genmeta
