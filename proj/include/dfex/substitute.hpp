#pragma once

#include <cstdint>
#include <vector>

#include "dfex/errors.hpp"
#include "dfex/losses.hpp"
#include "dfex/models.hpp"
#include "dfex/optim.hpp"
#include "dfex/oracle.hpp"
#include "dfex/rng.hpp"

namespace dfex::substitute {

using oracle::HardLabelBatch;

template <typename T>
struct SubstituteOptimizerConfig {
  T lr = T(0.1);
  T momentum = T(0.9);
  T weight_decay = T(5e-4);
};

/// Capped FIFO store of (synthetic image, oracle label) pairs with uniform
/// sampling. Backing storage is reserved up front and grows in place.
template <typename T>
class MemoryBuffer {
 public:
  MemoryBuffer(std::size_t capacity, std::vector<int> image_shape)
      : capacity_(capacity), image_shape_(std::move(image_shape)) {
    if (capacity_ == 0) throw ConfigError("memory buffer: capacity must be positive");
    image_elems_ = 1;
    for (int d : image_shape_) image_elems_ *= static_cast<std::size_t>(d);
    images_.reserve(capacity_ * image_elems_);
    labels_.reserve(capacity_);
  }

  void push(const nn::Tensor<T>& images, const std::vector<int>& labels) {
    const std::size_t n = labels.size();
    if (images.numel() != n * image_elems_)
      throw InputError("memory buffer: image/label batch size mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t slot = total_pushed_ % capacity_;
      if (slot >= size_) {
        images_.resize((slot + 1) * image_elems_);
        labels_.resize(slot + 1);
        size_ = slot + 1;
      }
      const T* src = images.ptr() + i * image_elems_;
      std::copy(src, src + image_elems_, images_.begin() + slot * image_elems_);
      labels_[slot] = labels[i];
      ++total_pushed_;
    }
  }

  /// n pairs uniformly with replacement over current contents.
  void sample(int n, nn::Rng& rng, nn::Tensor<T>& out_images,
              std::vector<int>& out_labels) const {
    if (empty()) throw InputError("memory buffer: cannot sample from empty buffer");
    std::vector<int> shape{n};
    shape.insert(shape.end(), image_shape_.begin(), image_shape_.end());
    out_images.resize(shape);
    out_labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const std::size_t slot = rng.below(size_);
      const T* src = images_.data() + slot * image_elems_;
      std::copy(src, src + image_elems_, out_images.ptr() + static_cast<std::size_t>(i) * image_elems_);
      out_labels[static_cast<std::size_t>(i)] = labels_[slot];
    }
  }

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return size_ == 0; }
  unsigned long long total_pushed() const { return total_pushed_; }
  const std::vector<int>& image_shape() const { return image_shape_; }

  int label(std::size_t slot) const { return labels_[slot]; }
  const T* image(std::size_t slot) const { return images_.data() + slot * image_elems_; }
  std::size_t image_elems() const { return image_elems_; }

  /// Snapshot for checkpointing: physical slots plus the push counter.
  void snapshot(std::vector<T>& images_out, std::vector<int>& labels_out,
                unsigned long long& total_pushed_out) const {
    images_out = images_;
    labels_out = labels_;
    total_pushed_out = total_pushed_;
  }
  void restore(const std::vector<T>& images_in, const std::vector<int>& labels_in,
               unsigned long long total_pushed_in) {
    if (images_in.size() != labels_in.size() * image_elems_)
      throw IoError("memory buffer: corrupt snapshot");
    images_ = images_in;
    labels_ = labels_in;
    size_ = labels_.size();
    total_pushed_ = total_pushed_in;
  }

 private:
  std::size_t capacity_;
  std::vector<int> image_shape_;
  std::size_t image_elems_ = 0;
  std::vector<T> images_;
  std::vector<int> labels_;
  std::size_t size_ = 0;
  unsigned long long total_pushed_ = 0;
};

/// K independently-parameterized substitutes with per-member SGD state.
template <typename T>
class SubstituteEnsemble {
 public:
  SubstituteEnsemble(const models::ArchitectureSpec& spec, int k,
                     const SubstituteOptimizerConfig<T>& opt_cfg, std::uint64_t seed) {
    if (k < 2) throw ConfigError("substitute ensemble: K must be >= 2");
    for (int i = 0; i < k; ++i) {
      members_.push_back(models::build_classifier<T>(spec));
      members_.back().initialize(nn::Rng::derive(seed, static_cast<std::uint64_t>(i)));
      opts_.emplace_back(opt_cfg.lr, opt_cfg.momentum, opt_cfg.weight_decay);
    }
  }

  int size() const { return static_cast<int>(members_.size()); }
  models::Network<T>& member(int i) { return members_[static_cast<std::size_t>(i)]; }
  nn::SgdMomentum<T>& optimizer(int i) { return opts_[static_cast<std::size_t>(i)]; }

  void set_mode(nn::Mode m) {
    for (auto& member : members_) member.set_mode(m);
  }

  /// One cross-entropy step per member on fresh oracle-labeled data; returns
  /// each member's loss before its step.
  std::vector<T> train_step_new(const nn::Tensor<T>& images, const HardLabelBatch& labels) {
    if (images.dim(0) != labels.size())
      throw InputError("train_step_new: image/label batch size mismatch");
    std::vector<T> losses;
    losses.reserve(members_.size());
    nn::Tensor<T> dlogits;
    for (std::size_t k = 0; k < members_.size(); ++k) {
      auto& member = members_[k];
      member.set_mode(nn::Mode::kTrain);
      member.zero_grads();
      const nn::Tensor<T>& logits = member.forward(images);
      const T loss = nn::cross_entropy_hard(logits, labels.labels, &dlogits);
      member.backward(dlogits);
      opts_[k].step(member.param_blocks(), member.grad_blocks());
      losses.push_back(loss);
    }
    return losses;
  }

  /// One cross-entropy step per member on a batch sampled from the buffer.
  std::vector<T> replay_step(const MemoryBuffer<T>& buffer, int n, nn::Rng& rng) {
    nn::Tensor<T> images;
    std::vector<int> labels;
    buffer.sample(n, rng, images, labels);
    HardLabelBatch batch{std::move(labels)};
    return train_step_new(images, batch);
  }

  /// Mean-softmax fusion; argmax ties break toward the lowest class index.
  std::vector<int> predict_fused(const nn::Tensor<T>& images) {
    nn::Tensor<T> fused = fused_probs(images);
    return nn::argmax_rows(fused);
  }

  nn::Tensor<T> fused_probs(const nn::Tensor<T>& images) {
    nn::Tensor<T> fused, probs;
    for (std::size_t k = 0; k < members_.size(); ++k) {
      auto& member = members_[k];
      member.set_mode(nn::Mode::kEval);
      const nn::Tensor<T>& logits = member.forward(images);
      nn::softmax_rows(logits, probs);
      if (k == 0) {
        fused = probs;
      } else {
        for (std::size_t i = 0; i < fused.numel(); ++i) fused[i] += probs[i];
      }
    }
    for (std::size_t i = 0; i < fused.numel(); ++i)
      fused[i] /= static_cast<T>(members_.size());
    return fused;
  }

 private:
  std::vector<models::Network<T>> members_;
  std::vector<nn::SgdMomentum<T>> opts_;
};

}  // namespace dfex::substitute
