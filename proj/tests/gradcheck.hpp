#pragma once

// Central-difference gradient checking against the analytic backward pass.
// Loss is a fixed random linear functional of the network output so that
// d(loss)/d(output) is a constant tensor.

#include <cmath>
#include <vector>

#include "dfex/network.hpp"
#include "dfex/rng.hpp"
#include "dfex/tensor.hpp"

namespace gradcheck {

using dfex::nn::Mode;
using dfex::nn::Rng;
using dfex::nn::Sequential;
using dfex::nn::Tensor;

inline double rel_err(double a, double b) {
  // The absolute floor keeps finite-difference noise on near-zero gradient
  // coordinates from registering as relative error.
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

struct Report {
  double max_param_err = 0.0;
  double max_input_err = 0.0;
};

/// Checks d(w . f(x))/d(params) and d(w . f(x))/d(x) by central differences.
inline Report check(Sequential<double>& seq, Tensor<double> x, Mode mode, std::uint64_t seed,
                    double h = 1e-6) {
  Rng rng(seed);
  const Tensor<double>& y0 = seq.forward(x, mode);
  Tensor<double> w(y0.shape);
  for (auto& v : w.data) v = rng.normal();

  auto loss_at = [&]() {
    const Tensor<double>& y = seq.forward(x, mode);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += w[i] * y[i];
    return acc;
  };

  seq.zero_grads();
  seq.forward(x, mode);
  Tensor<double> dx = seq.backward(w);

  Report report;
  auto params = seq.param_blocks();
  auto grads = seq.grad_blocks();
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b]->size(); ++i) {
      double& p = (*params[b])[i];
      const double keep = p;
      p = keep + h;
      const double lp = loss_at();
      p = keep - h;
      const double lm = loss_at();
      p = keep;
      const double fd = (lp - lm) / (2 * h);
      report.max_param_err = std::max(report.max_param_err, rel_err(fd, (*grads[b])[i]));
    }
  }
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double lp = loss_at();
    x[i] = keep - h;
    const double lm = loss_at();
    x[i] = keep;
    const double fd = (lp - lm) / (2 * h);
    report.max_input_err = std::max(report.max_input_err, rel_err(fd, dx[i]));
  }
  return report;
}

inline Tensor<double> random_tensor(const std::vector<int>& shape, std::uint64_t seed) {
  Tensor<double> t(shape);
  Rng rng(seed);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

}  // namespace gradcheck
