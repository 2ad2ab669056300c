#include "gcaps/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gcaps {

void TrainSpec::validate() const {
  if (steps < 0) throw ConfigError("steps", "must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
  if (adversarial) inner.validate();
  if (log_every < 1) throw ConfigError("log_every", "must be >= 1");
  if (attack_warmup < 0) throw ConfigError("attack_warmup", "must be >= 0");
}

// ---------------------------------------------------------------------------
// Optimizer

Optimizer::Optimizer(const OptimizerSpec& spec, const Parameters& like) : spec_(spec) {
  const auto t = like.tensors();
  for (std::size_t k = 0; k < Parameters::kCount; ++k) {
    first_[k] = Tensor::zeros(t[k]->shape());
    second_[k] = Tensor::zeros(t[k]->shape());
  }
}

void Optimizer::apply(Parameters& params, const Gradients& grads) {
  ++updates_;
  auto targets = params.tensors();
  if (spec_.kind == OptimizerKind::sgd) {
    for (std::size_t k = 0; k < Parameters::kCount; ++k)
      targets[k]->array() -= spec_.learning_rate * grads[k].array();
    return;
  }
  const double t = static_cast<double>(updates_);
  const double c1 = 1.0 - std::pow(spec_.beta1, t);
  const double c2 = 1.0 - std::pow(spec_.beta2, t);
  for (std::size_t k = 0; k < Parameters::kCount; ++k) {
    auto& m = first_[k].array();
    auto& v = second_[k].array();
    const auto& g = grads[k].array();
    m = spec_.beta1 * m + (1.0 - spec_.beta1) * g;
    v = spec_.beta2 * v + (1.0 - spec_.beta2) * g.square();
    targets[k]->array() -= spec_.learning_rate * (m / c1) / ((v / c2).sqrt() + spec_.epsilon);
  }
}

// ---------------------------------------------------------------------------

LossAndGrads loss_and_gradients(const ModelConfig& config, const Parameters& params, const LabeledBatch& batch) {
  Graph g;
  const BoundParameters p = bind(g, params, true);
  Var per_example = margin_loss(forward(g.constant(batch.images), p, config).output_norms, batch.labels);
  Var loss = scale(sum(per_example), 1.0 / static_cast<double>(batch.size()));
  g.backward(loss);
  LossAndGrads out;
  out.loss = loss.value()[0];
  for (std::size_t k = 0; k < Parameters::kCount; ++k) out.grads[k] = g.grad(p.vars[k]);
  return out;
}

Trainer::Trainer(ModelConfig config, Parameters params, TrainSpec spec)
    : config_(std::move(config)), params_(std::move(params)), spec_(std::move(spec)), optimizer_(spec_.optimizer, params_) {
  config_.validate();
  spec_.validate();
}

StepResult Trainer::step(const LabeledBatch& batch, std::span<const Index> example_ids) {
  StepResult result;
  LabeledBatch used;
  const LabeledBatch* source = &batch;
  if (spec_.adversarial) {
    std::vector<Index> ids(example_ids.begin(), example_ids.end());
    if (ids.empty()) {
      ids.resize(static_cast<std::size_t>(batch.size()));
      std::iota(ids.begin(), ids.end(), steps_ * spec_.batch_size);
    }
    const std::uint64_t attack_seed = derive_seed(spec_.seed, "train-attack", static_cast<std::uint64_t>(steps_));
    AttackSpec inner = spec_.inner;
    if (steps_ < spec_.attack_warmup)
      inner.epsilon *= static_cast<double>(steps_ + 1) / static_cast<double>(spec_.attack_warmup);
    used.images = attack(model_loss_gradient(config_, params_, inner.loss), batch.images, batch.labels, inner, attack_seed, ids);
    used.labels = batch.labels;
    result.perturbation = linf_distance(used.images, batch.images);
    source = &used;
  }
  LossAndGrads lg = loss_and_gradients(config_, params_, *source);
  if (!std::isfinite(lg.loss))
    throw TrainingError("non-finite loss at step " + std::to_string(steps_) + " (" + std::to_string(lg.loss) + ")");
  optimizer_.apply(params_, lg.grads);
  if (!params_.all_finite()) throw TrainingError("non-finite parameters after step " + std::to_string(steps_));
  ++steps_;
  result.loss = lg.loss;
  return result;
}

// ---------------------------------------------------------------------------

Tensor dataset_output_norms(const ModelConfig& config, const Parameters& params, const Dataset& data,
                            Index batch_size, Index limit) {
  const Index n = limit > 0 ? std::min(limit, data.size()) : data.size();
  Tensor all({std::max<Index>(n, 1), config.output_caps});
  for (Index start = 0; start < n; start += batch_size) {
    std::vector<Index> ids;
    for (Index k = start; k < std::min(n, start + batch_size); ++k) ids.push_back(k);
    const Tensor norms = output_norms(config, params, make_batch(data, ids).images);
    std::copy(norms.data(), norms.data() + norms.size(), all.data() + start * config.output_caps);
  }
  return all;
}

double evaluate_accuracy(const ModelConfig& config, const Parameters& params, const Dataset& data, Index limit,
                         Index batch_size) {
  const Index n = limit > 0 ? std::min(limit, data.size()) : data.size();
  if (n == 0) return 0.0;
  const std::vector<int> pred = predict(dataset_output_norms(config, params, data, batch_size, n));
  Index correct = 0;
  for (Index k = 0; k < n; ++k) correct += pred[static_cast<std::size_t>(k)] == data.labels[static_cast<std::size_t>(k)];
  return static_cast<double>(correct) / static_cast<double>(n);
}

void run_training(Trainer& trainer, const Dataset& train, const Dataset& eval,
                  const std::function<void(const RunLogRow&)>& on_log,
                  const std::function<void(const Trainer&, Index step)>& on_snapshot) {
  const TrainSpec& spec = trainer.spec();
  BatchIterator batches(train, spec.batch_size, derive_seed(spec.seed, "train-batches"));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  AttackSpec robust_eval = spec.inner;
  for (Index s = trainer.steps_done(); s < spec.steps; ++s) {
    const std::vector<Index> ids = batches.next_indices();
    const StepResult r = trainer.step(make_batch(train, ids), ids);
    const Index done = trainer.steps_done();
    const bool evaluate = spec.eval_every > 0 && (done % spec.eval_every == 0 || done == spec.steps);
    if (evaluate || done % spec.log_every == 0) {
      RunLogRow row{done, r.loss, nan, nan};
      if (evaluate) {
        row.clean_accuracy = evaluate_accuracy(trainer.config(), trainer.parameters(), eval, spec.eval_examples);
        if (spec.eval_robust_examples > 0)
          row.robust_accuracy = robust_accuracy(trainer.config(), trainer.parameters(), eval, robust_eval,
                                                derive_seed(spec.seed, "eval-attack"), spec.eval_robust_examples)
                                    .accuracy;
      }
      on_log(row);
    }
    if (std::find(spec.snapshot_steps.begin(), spec.snapshot_steps.end(), done) != spec.snapshot_steps.end() &&
        done != spec.steps)
      on_snapshot(trainer, done);
  }
  on_snapshot(trainer, trainer.steps_done());
}

}  // namespace gcaps
