#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "dfex/tensor.hpp"

namespace dfex::nn {

/// Numerically stable row-wise softmax for (N, C) logits.
template <typename T>
void softmax_rows(const Tensor<T>& logits, Tensor<T>& probs) {
  const int n = logits.dim(0), c = logits.dim(1);
  probs.resize({n, c});
  for (int i = 0; i < n; ++i) {
    const T* z = logits.ptr() + static_cast<std::size_t>(i) * c;
    T* p = probs.ptr() + static_cast<std::size_t>(i) * c;
    T mx = z[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    T sum = T(0);
    for (int j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    for (int j = 0; j < c; ++j) p[j] /= sum;
  }
}

/// Row-wise argmax; ties break toward the lowest class index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& scores) {
  const int n = scores.dim(0), c = scores.dim(1);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* row = scores.ptr() + static_cast<std::size_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

/// Mean softmax cross-entropy against integer labels. If dlogits is non-null
/// it receives d(loss)/d(logits) (already divided by the batch size).
template <typename T>
T cross_entropy_hard(const Tensor<T>& logits, const std::vector<int>& labels,
                     Tensor<T>* dlogits = nullptr) {
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("cross_entropy: batch/label count mismatch");
  for (int lab : labels)
    if (lab < 0 || lab >= c) throw std::invalid_argument("cross_entropy: label out of range");
  if (dlogits) dlogits->resize({n, c});
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const T* z = logits.ptr() + static_cast<std::size_t>(i) * c;
    T mx = z[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) sum += std::exp(static_cast<double>(z[j] - mx));
    const double lse = std::log(sum) + static_cast<double>(mx);
    total += lse - static_cast<double>(z[labels[static_cast<std::size_t>(i)]]);
    if (dlogits) {
      T* d = dlogits->ptr() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j)
        d[j] = static_cast<T>(std::exp(static_cast<double>(z[j]) - lse) / n);
      d[labels[static_cast<std::size_t>(i)]] -= T(1) / static_cast<T>(n);
    }
  }
  return static_cast<T>(total / n);
}

}  // namespace dfex::nn
