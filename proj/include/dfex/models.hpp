#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "dfex/errors.hpp"
#include "dfex/network.hpp"

namespace dfex::models {

enum class Family { kLenet, kLenetHalf, kResnetKx, kGenerator };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::kLenet: return "lenet";
    case Family::kLenetHalf: return "lenet_half";
    case Family::kResnetKx: return "resnet_kx";
    case Family::kGenerator: return "generator";
  }
  return "?";
}

inline Family family_from_name(const std::string& s) {
  if (s == "lenet") return Family::kLenet;
  if (s == "lenet_half") return Family::kLenetHalf;
  if (s == "resnet_kx") return Family::kResnetKx;
  if (s == "generator") return Family::kGenerator;
  throw ConfigError("unknown architecture family: " + s);
}

struct ArchitectureSpec {
  Family family = Family::kLenet;
  int depth = 0;             // resnet_kx: 18 or 34
  int width_multiplier = 0;  // k in resnet-kx; stage widths are k*(8,16,32,64)
  int num_classes = 2;
  std::array<int, 3> input_shape{1, 32, 32};  // classifier input / generator output (c, h, w)
  int latent_dim = 0;                         // generator only
  int base_channels = 128;                    // generator trunk width

  void validate() const {
    if (num_classes < 2) throw ConfigError("architecture: num_classes must be >= 2");
    for (int d : input_shape)
      if (d <= 0) throw ConfigError("architecture: input shape entries must be positive");
    if (family == Family::kResnetKx) {
      if (depth != 18 && depth != 34) throw ConfigError("resnet_kx: depth must be 18 or 34");
      if (width_multiplier <= 0) throw ConfigError("resnet_kx: width multiplier must be positive");
    }
    if (family == Family::kGenerator) {
      if (latent_dim <= 0) throw ConfigError("generator: latent_dim must be positive");
      if (input_shape[1] % 4 != 0 || input_shape[2] % 4 != 0)
        throw ConfigError("generator: output height/width must be divisible by 4, got " +
                          std::to_string(input_shape[1]) + "x" + std::to_string(input_shape[2]));
      if (base_channels < 2 || base_channels % 2 != 0)
        throw ConfigError("generator: base_channels must be even and >= 2");
    }
  }

  bool operator==(const ArchitectureSpec&) const = default;
};

/// A built network: architecture spec, parameters, and a train/eval mode.
template <typename T>
class Network {
 public:
  Network(ArchitectureSpec spec, nn::Sequential<T> seq, std::vector<int> expected_input)
      : spec_(std::move(spec)), seq_(std::move(seq)), expected_input_(std::move(expected_input)) {}

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const ArchitectureSpec& spec() const { return spec_; }
  nn::Mode mode() const { return mode_; }
  void set_mode(nn::Mode m) { mode_ = m; }

  const nn::Tensor<T>& forward(const nn::Tensor<T>& x) {
    if (x.ndim() != static_cast<int>(expected_input_.size()) + 1)
      throw InputError("network: expected rank " + std::to_string(expected_input_.size() + 1) +
                       " input, got " + nn::shape_str(x.shape));
    for (std::size_t i = 0; i < expected_input_.size(); ++i)
      if (x.dim(static_cast<int>(i) + 1) != expected_input_[i])
        throw InputError("network: input shape " + nn::shape_str(x.shape) +
                         " does not match expected trailing dims");
    return seq_.forward(x, mode_);
  }

  nn::Tensor<T> backward(const nn::Tensor<T>& dout) { return seq_.backward(dout); }

  void initialize(std::uint64_t seed) {
    nn::Rng rng(seed);
    seq_.init(rng);
  }

  nn::ParamVector<T> params() { return seq_.get_params(); }
  nn::ParamVector<T> grads() { return seq_.get_grads(); }
  nn::ParamVector<T> buffers() { return seq_.get_buffers(); }
  void set_params(const nn::ParamVector<T>& pv) { seq_.set_params(pv); }
  void set_buffers(const nn::ParamVector<T>& pv) { seq_.set_buffers(pv); }
  void zero_grads() { seq_.zero_grads(); }
  std::size_t param_count() { return seq_.param_count(); }

  std::vector<std::vector<T>*> param_blocks() { return seq_.param_blocks(); }
  std::vector<std::vector<T>*> grad_blocks() { return seq_.grad_blocks(); }

  const std::vector<int>& expected_input() const { return expected_input_; }
  std::vector<int> output_shape(int batch) const {
    std::vector<int> in{batch};
    in.insert(in.end(), expected_input_.begin(), expected_input_.end());
    return seq_.out_shape(in);
  }

 private:
  ArchitectureSpec spec_;
  nn::Sequential<T> seq_;
  std::vector<int> expected_input_;
  nn::Mode mode_ = nn::Mode::kTrain;
};

namespace detail {

/// LeNet conv/fc widths; the half variant halves every layer.
struct LenetWidths {
  int c1, c2, f1, f2;
};

inline LenetWidths lenet_widths(bool half) {
  return half ? LenetWidths{3, 8, 60, 42} : LenetWidths{6, 16, 120, 84};
}

template <typename T>
nn::Sequential<T> make_lenet(const ArchitectureSpec& spec, bool half) {
  const auto [ch, h, w] = spec.input_shape;
  const auto widths = lenet_widths(half);
  auto conv_out = [](int d) { return d - 4; };
  const int h1 = conv_out(h), w1 = conv_out(w);
  if (h1 < 2 || w1 < 2 || h1 % 2 || w1 % 2)
    throw ConfigError("lenet: unsupported input size " + std::to_string(h) + "x" +
                      std::to_string(w));
  const int h2 = conv_out(h1 / 2), w2 = conv_out(w1 / 2);
  if (h2 < 2 || w2 < 2 || h2 % 2 || w2 % 2)
    throw ConfigError("lenet: unsupported input size " + std::to_string(h) + "x" +
                      std::to_string(w));
  const int flat = widths.c2 * (h2 / 2) * (w2 / 2);

  nn::Sequential<T> seq;
  seq.add(std::make_unique<nn::Conv2d<T>>(ch, widths.c1, 5));
  seq.add(std::make_unique<nn::ReLU<T>>());
  seq.add(std::make_unique<nn::MaxPool2d<T>>(2));
  seq.add(std::make_unique<nn::Conv2d<T>>(widths.c1, widths.c2, 5));
  seq.add(std::make_unique<nn::ReLU<T>>());
  seq.add(std::make_unique<nn::MaxPool2d<T>>(2));
  seq.add(std::make_unique<nn::Flatten<T>>());
  seq.add(std::make_unique<nn::Dense<T>>(flat, widths.f1));
  seq.add(std::make_unique<nn::ReLU<T>>());
  seq.add(std::make_unique<nn::Dense<T>>(widths.f1, widths.f2));
  seq.add(std::make_unique<nn::ReLU<T>>());
  seq.add(std::make_unique<nn::Dense<T>>(widths.f2, spec.num_classes));
  return seq;
}

template <typename T>
nn::Sequential<T> make_resnet_kx(const ArchitectureSpec& spec) {
  std::vector<int> blocks;
  if (spec.depth == 18) blocks = {2, 2, 2, 2};
  else if (spec.depth == 34) blocks = {3, 4, 6, 3};
  else throw ConfigError("resnet_kx: depth must be 18 or 34");

  const int k = spec.width_multiplier;
  const std::array<int, 4> widths{8 * k, 16 * k, 32 * k, 64 * k};
  const auto [ch, h, w] = spec.input_shape;
  if (h % 8 || w % 8)
    throw ConfigError("resnet_kx: input height/width must be divisible by 8");

  nn::Sequential<T> seq;
  seq.add(std::make_unique<nn::Conv2d<T>>(ch, widths[0], 3, 1, 1, /*bias=*/false));
  seq.add(std::make_unique<nn::BatchNorm<T>>(widths[0]));
  seq.add(std::make_unique<nn::ReLU<T>>());
  int cin = widths[0];
  for (int stage = 0; stage < 4; ++stage) {
    const int cout = widths[static_cast<std::size_t>(stage)];
    const int stride0 = stage == 0 ? 1 : 2;
    for (int b = 0; b < blocks[static_cast<std::size_t>(stage)]; ++b) {
      seq.add(std::make_unique<nn::ResidualBlock<T>>(cin, cout, b == 0 ? stride0 : 1));
      cin = cout;
    }
  }
  seq.add(std::make_unique<nn::GlobalAvgPool<T>>());
  seq.add(std::make_unique<nn::Dense<T>>(cin, spec.num_classes));
  return seq;
}

}  // namespace detail

/// Builds a classifier mapping (N, c, h, w) images to (N, C) raw logits.
template <typename T>
Network<T> build_classifier(const ArchitectureSpec& spec) {
  spec.validate();
  nn::Sequential<T> seq;
  switch (spec.family) {
    case Family::kLenet: seq = detail::make_lenet<T>(spec, false); break;
    case Family::kLenetHalf: seq = detail::make_lenet<T>(spec, true); break;
    case Family::kResnetKx: seq = detail::make_resnet_kx<T>(spec); break;
    default: throw ConfigError("build_classifier: family must be a classifier family");
  }
  return Network<T>(spec, std::move(seq),
                    {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]});
}

/// Builds the synthesis network mapping (N, latent_dim) noise to images in
/// [-1, 1]: linear projection to (base, h/4, w/4), three conv blocks with two
/// 2x upsamplings between them, batch norm and tanh at the end.
template <typename T>
Network<T> build_generator(const ArchitectureSpec& spec) {
  if (spec.family != Family::kGenerator)
    throw ConfigError("build_generator: family must be 'generator'");
  spec.validate();
  const auto [ch, h, w] = spec.input_shape;
  const int h0 = h / 4, w0 = w / 4;
  const int base = spec.base_channels;
  const int mid = base / 2;

  nn::Sequential<T> seq;
  seq.add(std::make_unique<nn::Dense<T>>(spec.latent_dim, base * h0 * w0, /*bias=*/false));
  seq.add(std::make_unique<nn::Reshape<T>>(base, h0, w0));
  seq.add(std::make_unique<nn::BatchNorm<T>>(base));
  seq.add(std::make_unique<nn::Conv2d<T>>(base, base, 3, 1, 1, /*bias=*/false));
  seq.add(std::make_unique<nn::BatchNorm<T>>(base));
  seq.add(std::make_unique<nn::LeakyReLU<T>>(T(0.2)));
  seq.add(std::make_unique<nn::Upsample2x<T>>());
  seq.add(std::make_unique<nn::Conv2d<T>>(base, mid, 3, 1, 1, /*bias=*/false));
  seq.add(std::make_unique<nn::BatchNorm<T>>(mid));
  seq.add(std::make_unique<nn::LeakyReLU<T>>(T(0.2)));
  seq.add(std::make_unique<nn::Upsample2x<T>>());
  seq.add(std::make_unique<nn::Conv2d<T>>(mid, ch, 3, 1, 1, /*bias=*/false));
  seq.add(std::make_unique<nn::BatchNorm<T>>(ch));
  seq.add(std::make_unique<nn::Tanh<T>>());
  return Network<T>(spec, std::move(seq), {spec.latent_dim});
}

}  // namespace dfex::models
