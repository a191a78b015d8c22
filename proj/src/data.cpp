#include "dfex/data.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace dfex::data {

namespace {

std::uint32_t read_be32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

struct IdxArray {
  std::vector<int> dims;
  std::vector<std::uint8_t> data;
};

IdxArray read_idx(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const std::uint32_t magic = read_be32(in);
  if ((magic >> 8) != 0x8) throw IoError(path + ": not an unsigned-byte IDX file");
  const int ndim = static_cast<int>(magic & 0xff);
  IdxArray arr;
  std::size_t total = 1;
  for (int i = 0; i < ndim; ++i) {
    const int d = static_cast<int>(read_be32(in));
    arr.dims.push_back(d);
    total *= static_cast<std::size_t>(d);
  }
  arr.data.resize(total);
  in.read(reinterpret_cast<char*>(arr.data.data()), static_cast<std::streamsize>(total));
  if (!in) throw IoError(path + ": truncated IDX payload");
  return arr;
}

const std::vector<DatasetInfo>& registry() {
  static const std::vector<DatasetInfo> infos{
      {"mnist", 10, {1, 32, 32}, {0.1307}, {0.3081}},
      {"svhn", 10, {3, 32, 32}, {0.4377, 0.4438, 0.4728}, {0.1980, 0.2010, 0.1970}},
      {"cifar10", 10, {3, 32, 32}, {0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}},
      {"cifar100", 100, {3, 32, 32}, {0.5071, 0.4865, 0.4409}, {0.2673, 0.2564, 0.2762}},
  };
  return infos;
}

/// (x/255 - mean) / std per channel, into an already-sized float tensor.
void normalize_into(const std::uint8_t* src, float* dst, int n, const DatasetInfo& info) {
  const int c = info.shape[0], hw = info.shape[1] * info.shape[2];
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      const float mean = static_cast<float>(info.mean[static_cast<std::size_t>(ch)]);
      const float inv_std = 1.0f / static_cast<float>(info.stddev[static_cast<std::size_t>(ch)]);
      const std::uint8_t* s = src + (static_cast<std::size_t>(i) * c + ch) * hw;
      float* d = dst + (static_cast<std::size_t>(i) * c + ch) * hw;
      for (int j = 0; j < hw; ++j) d[j] = (s[j] / 255.0f - mean) * inv_std;
    }
  }
}

LabeledDataset<float> load_mnist(const std::string& dir, Split split, const DatasetInfo& info) {
  const std::string img_file =
      dir + (split == Split::kTrain ? "/train-images-idx3-ubyte" : "/t10k-images-idx3-ubyte");
  const std::string lab_file =
      dir + (split == Split::kTrain ? "/train-labels-idx1-ubyte" : "/t10k-labels-idx1-ubyte");
  const IdxArray imgs = read_idx(img_file);
  const IdxArray labs = read_idx(lab_file);
  if (imgs.dims.size() != 3 || imgs.dims[1] != 28 || imgs.dims[2] != 28)
    throw IoError(img_file + ": expected (n,28,28) images");
  const int n = imgs.dims[0];
  if (labs.dims.size() != 1 || labs.dims[0] != n)
    throw IoError(lab_file + ": label count mismatch");

  // Zero-pad each 28x28 digit into a 32x32 canvas, then normalize.
  std::vector<std::uint8_t> padded(static_cast<std::size_t>(n) * 32 * 32, 0);
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < 28; ++r) {
      const std::uint8_t* src = imgs.data.data() + (static_cast<std::size_t>(i) * 28 + r) * 28;
      std::uint8_t* dst = padded.data() + (static_cast<std::size_t>(i) * 32 + r + 2) * 32 + 2;
      std::copy(src, src + 28, dst);
    }
  }

  LabeledDataset<float> ds;
  ds.num_classes = info.num_classes;
  ds.images.resize({n, 1, 32, 32});
  normalize_into(padded.data(), ds.images.ptr(), n, info);
  ds.labels.assign(labs.data.begin(), labs.data.end());
  return ds;
}

LabeledDataset<float> load_idx_chw(const std::string& dir, const std::string& prefix, Split split,
                                   const DatasetInfo& info) {
  const std::string tag = split == Split::kTrain ? "train" : "test";
  const std::string img_file = dir + "/" + prefix + tag + "-images-idx3-ubyte";
  const std::string lab_file = dir + "/" + prefix + tag + "-labels-idx1-ubyte";
  const IdxArray imgs = read_idx(img_file);
  const IdxArray labs = read_idx(lab_file);
  if (imgs.dims.size() != 4 || imgs.dims[1] != info.shape[0] || imgs.dims[2] != info.shape[1] ||
      imgs.dims[3] != info.shape[2])
    throw IoError(img_file + ": expected (n," + std::to_string(info.shape[0]) + "," +
                  std::to_string(info.shape[1]) + "," + std::to_string(info.shape[2]) +
                  ") images");
  const int n = imgs.dims[0];
  if (labs.dims.size() != 1 || labs.dims[0] != n)
    throw IoError(lab_file + ": label count mismatch");

  LabeledDataset<float> ds;
  ds.num_classes = info.num_classes;
  ds.images.resize({n, info.shape[0], info.shape[1], info.shape[2]});
  normalize_into(imgs.data.data(), ds.images.ptr(), n, info);
  ds.labels.assign(labs.data.begin(), labs.data.end());
  return ds;
}

LabeledDataset<float> load_cifar(const std::string& dir, Split split, const DatasetInfo& info,
                                 bool coarse_fine_header) {
  std::vector<std::string> files;
  if (!coarse_fine_header) {
    if (split == Split::kTrain)
      for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    else
      files.push_back(dir + "/test_batch.bin");
  } else {
    files.push_back(dir + (split == Split::kTrain ? "/train.bin" : "/test.bin"));
  }

  const std::size_t pixel_bytes = 3072;
  const std::size_t rec = pixel_bytes + (coarse_fine_header ? 2 : 1);
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw IoError("cannot open " + f);
    std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (raw.size() % rec != 0) throw IoError(f + ": unexpected file size");
    const std::size_t n = raw.size() / rec;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint8_t* r = raw.data() + i * rec;
      labels.push_back(coarse_fine_header ? r[1] : r[0]);
      pixels.insert(pixels.end(), r + rec - pixel_bytes, r + rec);
    }
  }

  const int n = static_cast<int>(labels.size());
  LabeledDataset<float> ds;
  ds.num_classes = info.num_classes;
  ds.images.resize({n, 3, 32, 32});
  normalize_into(pixels.data(), ds.images.ptr(), n, info);
  ds.labels = std::move(labels);
  return ds;
}

}  // namespace

const DatasetInfo& dataset_info(const std::string& id) {
  for (const auto& info : registry())
    if (info.id == id) return info;
  throw ConfigError("unknown dataset id: " + id);
}

std::string resolve_data_root(const std::string& explicit_root) {
  if (!explicit_root.empty()) return explicit_root;
  if (const char* env = std::getenv("DFEX_DATA_ROOT")) return env;
  return "data";
}

LabeledDataset<float> load_dataset(const std::string& id, const std::string& data_root,
                                   Split split) {
  const DatasetInfo& info = dataset_info(id);
  const std::string dir = data_root + "/" + id;
  if (!std::filesystem::exists(dir))
    throw IoError("dataset '" + id + "' not found under " + data_root +
                  "; fetch it first (see README: scripts/fetch_mnist.py / dataset ingestion)");
  if (id == "mnist") return load_mnist(dir, split, info);
  if (id == "svhn") return load_idx_chw(dir, "", split, info);
  if (id == "cifar10") return load_cifar(dir, split, info, false);
  if (id == "cifar100") return load_cifar(dir, split, info, true);
  throw ConfigError("unknown dataset id: " + id);
}

}  // namespace dfex::data
