#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dfex/data.hpp"
#include "dfex/errors.hpp"
#include "dfex/losses.hpp"
#include "dfex/models.hpp"

namespace dfex::oracle {

/// Hard labels only; the type carries no probabilities, logits or gradients.
struct HardLabelBatch {
  std::vector<int> labels;
  int size() const { return static_cast<int>(labels.size()); }
};
static_assert(sizeof(HardLabelBatch) == sizeof(std::vector<int>),
              "hard-label batch must carry nothing beyond categorical labels");

struct LedgerState {
  long long count = 0;
  long long budget = 0;
};

/// Monotone counter with a hard cap over all target-model queries. Check and
/// increment are atomic; a batch is rejected whole if it would overflow.
class QueryLedger {
 public:
  explicit QueryLedger(long long budget, std::string sidecar_path = "")
      : sidecar_(std::move(sidecar_path)) {
    if (budget <= 0) throw ConfigError("query ledger: budget must be positive");
    state_.budget = budget;
    if (!sidecar_.empty() && std::filesystem::exists(sidecar_)) {
      const LedgerState prev = load_sidecar(sidecar_);
      if (prev.budget != budget)
        throw ConfigError("query ledger: sidecar budget " + std::to_string(prev.budget) +
                          " does not match configured budget " + std::to_string(budget));
      state_.count = prev.count;
    } else if (!sidecar_.empty()) {
      persist_locked();
    }
  }

  void charge(long long n) {
    std::lock_guard<std::mutex> lock(mu_);
    if (n < 0) throw InputError("query ledger: negative charge");
    if (state_.count + n > state_.budget)
      throw BudgetExhausted(state_.count, state_.budget, n);
    state_.count += n;
    if (!sidecar_.empty()) persist_locked();
  }

  LedgerState state() const {
    std::lock_guard<std::mutex> lock(mu_);
    return state_;
  }

  void restore(const LedgerState& s) {
    std::lock_guard<std::mutex> lock(mu_);
    if (s.count < state_.count)
      throw ConfigError("query ledger: restore would decrease the count");
    if (s.budget != state_.budget) throw ConfigError("query ledger: restore budget mismatch");
    state_ = s;
    if (!sidecar_.empty()) persist_locked();
  }

  static LedgerState load_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("query ledger: cannot read sidecar " + path);
    nlohmann::json j;
    in >> j;
    LedgerState s;
    s.count = j.at("count").get<long long>();
    s.budget = j.at("budget").get<long long>();
    return s;
  }

 private:
  void persist_locked() const {
    nlohmann::json j{{"count", state_.count}, {"budget", state_.budget}};
    const std::string tmp = sidecar_ + ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw IoError("query ledger: cannot write sidecar " + tmp);
      out << j.dump();
    }
    std::filesystem::rename(tmp, sidecar_);
  }

  mutable std::mutex mu_;
  LedgerState state_;
  std::string sidecar_;
};

/// The attacker-facing view of the target: hard labels and a ledger, nothing
/// else crosses this interface.
template <typename T>
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual HardLabelBatch predict_hard(const nn::Tensor<T>& images) = 0;
  virtual LedgerState ledger() const = 0;
};

template <typename T>
class InProcessOracle : public Oracle<T> {
 public:
  InProcessOracle(models::Network<T> target, long long budget, std::string sidecar_path = "")
      : target_(std::move(target)), ledger_(budget, std::move(sidecar_path)) {
    target_.set_mode(nn::Mode::kEval);
  }

  HardLabelBatch predict_hard(const nn::Tensor<T>& images) override {
    const auto& expect = target_.expected_input();
    if (images.ndim() != 4 || images.dim(1) != expect[0] || images.dim(2) != expect[1] ||
        images.dim(3) != expect[2])
      throw InputError("oracle: input shape " + nn::shape_str(images.shape) +
                       " does not match target input");
    ledger_.charge(images.dim(0));
    target_.set_mode(nn::Mode::kEval);
    const nn::Tensor<T>& logits = target_.forward(images);
    return HardLabelBatch{nn::argmax_rows(logits)};
  }

  LedgerState ledger() const override { return ledger_.state(); }
  void restore_ledger(const LedgerState& s) { ledger_.restore(s); }

  /// Experimenter-side access; not part of the attacker interface.
  models::Network<T>& target() { return target_; }

 private:
  models::Network<T> target_;
  QueryLedger ledger_;
};

namespace detail {
template <typename M, typename T>
concept FusedPredictor = requires(M m, const nn::Tensor<T>& x) {
  { m.predict_fused(x) } -> std::convertible_to<std::vector<int>>;
};
}

/// Experimenter-side test-set accuracy; never touches any query ledger.
/// Accepts a single network (eval-mode argmax) or anything exposing
/// predict_fused (an ensemble).
template <typename T, typename Model>
double evaluate_accuracy(Model& model, const data::LabeledDataset<T>& dataset,
                         int batch_size = 512) {
  const int n = dataset.size();
  if (n == 0) throw InputError("evaluate_accuracy: empty dataset");
  const std::size_t elems = dataset.images.numel() / static_cast<std::size_t>(n);
  long long correct = 0;
  nn::Tensor<T> batch;
  for (int off = 0; off < n; off += batch_size) {
    const int b = std::min(batch_size, n - off);
    std::vector<int> shape = dataset.images.shape;
    shape[0] = b;
    batch.resize(shape);
    std::copy(dataset.images.ptr() + static_cast<std::size_t>(off) * elems,
              dataset.images.ptr() + static_cast<std::size_t>(off + b) * elems, batch.ptr());
    std::vector<int> pred;
    if constexpr (detail::FusedPredictor<Model, T>) {
      pred = model.predict_fused(batch);
    } else {
      const nn::Mode prev = model.mode();
      model.set_mode(nn::Mode::kEval);
      pred = nn::argmax_rows(model.forward(batch));
      model.set_mode(prev);
    }
    for (int i = 0; i < b; ++i)
      if (pred[static_cast<std::size_t>(i)] == dataset.labels[static_cast<std::size_t>(off + i)])
        ++correct;
  }
  return static_cast<double>(correct) / n;
}

}  // namespace dfex::oracle
