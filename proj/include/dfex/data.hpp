#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dfex/errors.hpp"
#include "dfex/rng.hpp"
#include "dfex/tensor.hpp"

namespace dfex::data {

template <typename T>
struct LabeledDataset {
  nn::Tensor<T> images;      // (N, c, h, w)
  std::vector<int> labels;   // ground truth
  int num_classes = 0;

  int size() const { return images.ndim() ? images.dim(0) : 0; }
};

enum class Split { kTrain, kTest };

struct DatasetInfo {
  std::string id;
  int num_classes;
  std::array<int, 3> shape;          // (c, h, w) as consumed by the models
  std::vector<double> mean, stddev;  // per-channel, on [0,1] pixels
};

/// Registry of the supported dataset ids and their standard normalizations.
const DatasetInfo& dataset_info(const std::string& id);

/// Loads a dataset from `<data_root>/<id>/`. MNIST is read from the original
/// IDX files and zero-padded from 28x28 to 32x32 before normalization; SVHN
/// is read from IDX files produced by scripts/convert_svhn.py; CIFAR-10/100
/// are read from the binary (.bin) distributions.
LabeledDataset<float> load_dataset(const std::string& id, const std::string& data_root,
                                   Split split);

/// Resolves the data root: explicit argument, else $DFEX_DATA_ROOT, else ./data.
std::string resolve_data_root(const std::string& explicit_root = "");

/// Gaussian-blob toy dataset for tests: one random class mean per class,
/// unit-ish noise around it, labels are the generating class.
template <typename T>
LabeledDataset<T> make_blobs(int n, int num_classes, const std::array<int, 3>& shape,
                             std::uint64_t seed, double noise = 0.25) {
  LabeledDataset<T> ds;
  ds.num_classes = num_classes;
  ds.images.resize({n, shape[0], shape[1], shape[2]});
  ds.labels.resize(static_cast<std::size_t>(n));
  nn::Rng rng(seed);
  const std::size_t elems = ds.images.numel() / static_cast<std::size_t>(n);
  std::vector<T> means(static_cast<std::size_t>(num_classes) * elems);
  for (auto& v : means) v = static_cast<T>(rng.normal());
  for (int i = 0; i < n; ++i) {
    const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
    ds.labels[static_cast<std::size_t>(i)] = cls;
    const T* mu = means.data() + static_cast<std::size_t>(cls) * elems;
    T* dst = ds.images.ptr() + static_cast<std::size_t>(i) * elems;
    for (std::size_t j = 0; j < elems; ++j)
      dst[j] = mu[j] + static_cast<T>(noise * rng.normal());
  }
  return ds;
}

}  // namespace dfex::data
