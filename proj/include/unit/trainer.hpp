#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "unit/batching.hpp"
#include "unit/checkpoint.hpp"
#include "unit/evaluation.hpp"
#include "unit/metrics_log.hpp"
#include "unit/model.hpp"
#include "unit/optimizer.hpp"

namespace unit {

struct TrainConfig {
  std::size_t iterations = 20000;
  std::size_t batch_size = 64;
  double lr = 5e-4;
  std::size_t warmup = 1000;
  AdamWConfig adam;
  std::uint64_t seed = 0;
  bool augment = true;
  AugmentConfig augmentation;
  bool freeze_image_encoder = false;
  bool freeze_text_encoder = false;
  std::size_t eval_every = 2000;  // 0 = only at the end
  EvalConfig eval;
  std::size_t checkpoint_every = 0;  // 0 = only the final checkpoint

  ScheduleConfig schedule() const { return {lr, warmup, iterations}; }

  void validate() const {
    if (iterations == 0) throw std::invalid_argument("training.iterations must be positive");
    if (warmup >= iterations) throw std::invalid_argument("optimizer.warmup must be smaller than training.iterations");
    if (batch_size == 0) throw std::invalid_argument("training.batch_size must be positive");
    if (!(lr > 0)) throw std::invalid_argument("optimizer.lr must be positive");
    augmentation.validate();
  }
};

/// Raised when a step produces a non-finite loss.
struct DivergenceError : std::runtime_error {
  std::size_t iteration;
  std::string task;
  DivergenceError(std::size_t it, const std::string& t, double loss)
      : std::runtime_error("non-finite loss " + std::to_string(loss) + " at iteration " + std::to_string(it) +
                           " on task " + t),
        iteration(it),
        task(t) {}
};

struct StepResult {
  std::string task;
  double loss = 0.0;
  double learning_rate = 0.0;
  std::vector<char> used;  // per parameter, after freezing
};

// Stream salts for the per-iteration random sources.
enum class TrainStream : std::uint64_t { task = 101, dropout = 102, augment = 103 };

/// Joint training over the model's tasks. Everything random in iteration t is
/// drawn from streams derived from (seed, t), so a run is a pure function of its
/// configuration.
template <class T>
class Trainer {
 public:
  Trainer(UnitModel<T>& model, TrainConfig cfg)
      : model_(model), cfg_(std::move(cfg)), optimizer_(model.parameters(), cfg_.adam) {
    cfg_.validate();
    std::vector<double> p;
    for (const auto& t : model.tasks()) p.push_back(t.probability);
    probabilities_ = normalized_probabilities(p, 0.02);
    const auto& entries = model.parameters().entries();
    frozen_.assign(entries.size(), 0);
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const std::string& n = entries[i].first;
      if ((cfg_.freeze_image_encoder && n.rfind("image_encoder.", 0) == 0) ||
          (cfg_.freeze_text_encoder && n.rfind("text_encoder.", 0) == 0))
        frozen_[i] = 1;
    }
  }

  const TrainConfig& config() const { return cfg_; }
  AdamW<T>& optimizer() { return optimizer_; }
  const std::vector<double>& probabilities() const { return probabilities_; }

  const TaskSpec& task_at(std::size_t iteration) const {
    Rng rng(derive_seed(cfg_.seed, iteration, static_cast<std::uint64_t>(TrainStream::task)));
    return model_.tasks()[sample_task(rng, probabilities_)];
  }

  /// The training batch of iteration t: fresh samples, augmented for detection.
  Batch batch_at(std::size_t iteration, const TaskSpec& spec) const {
    std::vector<std::uint64_t> indices;
    for (std::size_t k = 0; k < cfg_.batch_size; ++k)
      indices.push_back(sample_index(Split::train, iteration * cfg_.batch_size + k));
    Rng aug(derive_seed(cfg_.seed, iteration, static_cast<std::uint64_t>(TrainStream::augment)));
    return make_batch(spec, cfg_.seed, indices, cfg_.augment ? &cfg_.augmentation : nullptr, &aug);
  }

  /// Forward, backward and one optimizer update on `batch` at learning rate `lr`.
  StepResult train_step(const Batch& batch, std::size_t iteration, double lr) {
    auto& store = model_.parameters();
    store.clear_grads();
    Rng dropout(derive_seed(cfg_.seed, iteration, static_cast<std::uint64_t>(TrainStream::dropout)));
    ad::Tape<T> tape;
    StepResult result;
    result.task = batch.task;
    result.learning_rate = lr;
    {
      ad::TapeScope<T> scope(tape);
      Tensor<T> loss = model_.loss(batch, ForwardContext{true, &dropout});
      result.loss = static_cast<double>(loss.item());
      if (!std::isfinite(result.loss)) throw DivergenceError(iteration, batch.task, result.loss);
      ad::backward(tape, loss);
    }
    result.used = AdamW<T>::used_set(store);
    for (std::size_t i = 0; i < result.used.size(); ++i)
      if (frozen_[i]) result.used[i] = 0;
    optimizer_.step(store, result.used, lr);
    store.clear_grads();
    return result;
  }

  StepResult step(std::size_t iteration) {
    const TaskSpec& spec = task_at(iteration);
    return train_step(batch_at(iteration, spec), iteration, lr_schedule(iteration, cfg_.schedule()));
  }

  /// Validation metrics for every task, appended to `log` at `iteration`.
  std::vector<MetricValue> evaluate_all(std::size_t iteration, MetricsLog* log) const {
    std::vector<MetricValue> out;
    const double lr = lr_schedule(std::min(iteration, cfg_.iterations), cfg_.schedule());
    for (const auto& t : model_.tasks()) {
      for (const auto& m : evaluate(model_, t.name, cfg_.seed, cfg_.eval)) {
        if (log) log->add({iteration, m.task, "val", m.name, m.value, lr});
        out.push_back(m);
      }
    }
    return out;
  }

  using Hook = std::function<void(std::size_t iteration, const StepResult&)>;

  /// Iterations [start, iterations): one train record per step, validation at
  /// every `eval_every` boundary and at the end, checkpoints when asked.
  void run(MetricsLog* log, const std::string& checkpoint_dir = "", std::size_t start = 0, const Hook& hook = {}) {
    for (std::size_t t = start; t < cfg_.iterations; ++t) {
      StepResult r = step(t);
      if (log) log->add({t, r.task, "train", "loss", r.loss, r.learning_rate});
      if (hook) hook(t, r);
      const std::size_t done = t + 1;
      if (cfg_.eval_every && done % cfg_.eval_every == 0 && done != cfg_.iterations) evaluate_all(done, log);
      if (!checkpoint_dir.empty() && cfg_.checkpoint_every && done % cfg_.checkpoint_every == 0 &&
          done != cfg_.iterations)
        save_checkpoint(checkpoint_dir + "/checkpoint_" + std::to_string(done) + ".bin", model_.parameters(),
                        &optimizer_);
    }
    evaluate_all(cfg_.iterations, log);
    if (!checkpoint_dir.empty())
      save_checkpoint(checkpoint_dir + "/checkpoint_final.bin", model_.parameters(), &optimizer_);
  }

 private:
  UnitModel<T>& model_;
  TrainConfig cfg_;
  AdamW<T> optimizer_;
  std::vector<double> probabilities_;
  std::vector<char> frozen_;
};

}  // namespace unit
