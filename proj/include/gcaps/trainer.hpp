#pragma once

// ERM and ERM-under-attack training.

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gcaps/attacks.hpp"
#include "gcaps/capsnet.hpp"
#include "gcaps/data_io.hpp"
#include "gcaps/losses.hpp"

namespace gcaps {

enum class OptimizerKind { adam, sgd };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainSpec {
  Index steps = 5000;
  Index batch_size = 32;
  Index train_subset = 0;  ///< 0 = full training set
  OptimizerSpec optimizer;
  bool adversarial = false;
  AttackSpec inner{AttackKind::pgd, 0.3, 0.01, 40, true};
  Index attack_warmup = 0;  ///< inner epsilon ramps linearly from 0 over this many steps
  std::uint64_t seed = 1;
  Index eval_every = 500;          ///< 0 disables periodic evaluation
  Index eval_examples = 1000;
  Index eval_robust_examples = 0;  ///< PGD-evaluated examples at eval time
  Index log_every = 10;
  std::vector<Index> snapshot_steps;  ///< extra checkpoints, e.g. {5000, 15000}

  void validate() const;
};

using Gradients = std::array<Tensor, Parameters::kCount>;

class Optimizer {
 public:
  Optimizer(const OptimizerSpec& spec, const Parameters& like);
  void apply(Parameters& params, const Gradients& grads);
  std::uint64_t updates() const { return updates_; }

 private:
  OptimizerSpec spec_;
  Gradients first_, second_;
  std::uint64_t updates_ = 0;
};

/// Batch-mean margin loss and its parameter gradients.
struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};
LossAndGrads loss_and_gradients(const ModelConfig& config, const Parameters& params, const LabeledBatch& batch);

struct StepResult {
  double loss = 0.0;
  double perturbation = 0.0;  ///< L-inf distance of the trained-on batch to the clean batch
};

class Trainer {
 public:
  Trainer(ModelConfig config, Parameters params, TrainSpec spec);

  /// One optimizer step. In adversarial mode the batch is first replaced by
  /// its PGD counterpart. Throws TrainingError on a non-finite loss.
  StepResult step(const LabeledBatch& batch, std::span<const Index> example_ids = {});

  const Parameters& parameters() const { return params_; }
  const ModelConfig& config() const { return config_; }
  const TrainSpec& spec() const { return spec_; }
  Index steps_done() const { return steps_; }

 private:
  ModelConfig config_;
  Parameters params_;
  TrainSpec spec_;
  Optimizer optimizer_;
  Index steps_ = 0;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// Clean accuracy of the first `limit` examples (all when limit <= 0).
double evaluate_accuracy(const ModelConfig& config, const Parameters& params, const Dataset& data, Index limit = 0,
                         Index batch_size = 100);

/// Output norms for the whole dataset, [M, N].
Tensor dataset_output_norms(const ModelConfig& config, const Parameters& params, const Dataset& data,
                            Index batch_size = 100, Index limit = 0);

struct RunLogRow {
  Index step;
  double loss;
  double clean_accuracy;   ///< NaN when not evaluated at this step
  double robust_accuracy;  ///< NaN when not evaluated at this step
};

/// Full training loop: draws batches from `train`, steps the trainer, logs
/// every `log_every` steps and evaluates on `eval` at the configured cadence.
/// `on_log` receives rows in order; `on_snapshot` is called for each
/// snapshot step and at the end.
void run_training(Trainer& trainer, const Dataset& train, const Dataset& eval,
                  const std::function<void(const RunLogRow&)>& on_log,
                  const std::function<void(const Trainer&, Index step)>& on_snapshot);

}  // namespace gcaps
