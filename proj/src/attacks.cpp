#include "gcaps/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>

#include "gcaps/losses.hpp"
#include "gcaps/runtime.hpp"

namespace gcaps {

std::string to_string(AttackKind kind) { return kind == AttackKind::fgsm ? "fgsm" : "pgd"; }

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "fgsm" || name == "FGSM") return AttackKind::fgsm;
  if (name == "pgd" || name == "PGD") return AttackKind::pgd;
  throw ConfigError("attack", "expected fgsm or pgd, got '" + name + "'");
}

std::string to_string(AttackLoss loss) { return loss == AttackLoss::margin ? "margin" : "cross_entropy"; }

AttackLoss parse_attack_loss(const std::string& name) {
  if (name == "cross_entropy") return AttackLoss::cross_entropy;
  if (name == "margin") return AttackLoss::margin;
  throw ConfigError("loss", "expected cross_entropy or margin, got '" + name + "'");
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon", "must lie in [0, 1]");
  if (kind == AttackKind::pgd) {
    if (!(step_size > 0.0)) throw ConfigError("step_size", "must be positive");
    if (steps < 1) throw ConfigError("steps", "must be >= 1");
  }
}

LossGradientFn model_loss_gradient(const ModelConfig& config, const Parameters& params, AttackLoss loss) {
  return [&config, &params, loss](const Tensor& inputs, std::span<const int> labels) {
    Graph g;
    const BoundParameters p = bind(g, params, false);
    Var x = g.variable(inputs);
    Var norms = forward(x, p, config).output_norms;
    Var per_example = loss == AttackLoss::margin ? margin_loss(norms, labels) : norm_cross_entropy(norms, labels);
    g.backward(sum(per_example));
    LossGradient out;
    const Tensor& l = per_example.value();
    out.losses.assign(l.data(), l.data() + l.size());
    out.grad = g.grad(x);
    return out;
  };
}

namespace {

double sign_of(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

Tensor fgsm(const LossGradientFn& loss, const Tensor& inputs, std::span<const int> labels, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon", "must lie in [0, 1]");
  if (epsilon == 0.0) return inputs;
  const Tensor grad = loss(inputs, labels).grad;
  Tensor out(inputs.shape());
  for (Index k = 0; k < inputs.size(); ++k) out[k] = std::clamp(inputs[k] + epsilon * sign_of(grad[k]), 0.0, 1.0);
  return out;
}

Tensor pgd(const LossGradientFn& loss, const Tensor& inputs, std::span<const int> labels, const AttackSpec& spec,
           std::uint64_t seed, std::span<const Index> example_ids) {
  spec.validate();
  if (spec.epsilon == 0.0) return inputs;
  const Index batch = inputs.dim(0);
  const Index per = inputs.size() / batch;
  if (static_cast<Index>(example_ids.size()) != batch) throw ShapeError("pgd", "one example id per input required");
  Tensor lo(inputs.shape()), hi(inputs.shape());
  for (Index k = 0; k < inputs.size(); ++k) {
    lo[k] = std::max(inputs[k] - spec.epsilon, 0.0);
    hi[k] = std::min(inputs[k] + spec.epsilon, 1.0);
  }
  Tensor x = inputs;
  if (spec.random_start) {
    for (Index b = 0; b < batch; ++b) {
      Rng rng = make_rng(seed, "pgd-start", static_cast<std::uint64_t>(example_ids[static_cast<std::size_t>(b)]));
      for (Index k = b * per; k < (b + 1) * per; ++k)
        x[k] = std::clamp(inputs[k] + uniform(rng, -spec.epsilon, spec.epsilon), lo[k], hi[k]);
    }
  }
  for (int step = 0; step < spec.steps; ++step) {
    const Tensor grad = loss(x, labels).grad;
    for (Index k = 0; k < x.size(); ++k) x[k] = std::clamp(x[k] + spec.step_size * sign_of(grad[k]), lo[k], hi[k]);
  }
  return x;
}

Tensor attack(const LossGradientFn& loss, const Tensor& inputs, std::span<const int> labels, const AttackSpec& spec,
              std::uint64_t seed, std::span<const Index> example_ids) {
  if (spec.kind == AttackKind::fgsm) return fgsm(loss, inputs, labels, spec.epsilon);
  return pgd(loss, inputs, labels, spec, seed, example_ids);
}

double linf_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("linf_distance", shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  return a.size() == 0 ? 0.0 : (a.array() - b.array()).abs().maxCoeff();
}

RobustnessResult robust_accuracy(const ModelConfig& config, const Parameters& params, const Dataset& data,
                                 const AttackSpec& spec, std::uint64_t seed, Index limit, Index batch_size,
                                 int threads) {
  spec.validate();
  const Index n = limit > 0 ? std::min(limit, data.size()) : data.size();
  if (n == 0) throw DomainError("robust_accuracy", "empty dataset");
  batch_size = std::max<Index>(1, batch_size);
  const Index batches = (n + batch_size - 1) / batch_size;

  RobustnessResult result;
  result.examples = n;
  result.predictions.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> linf(static_cast<std::size_t>(batches), 0.0);
  std::vector<char> ok(static_cast<std::size_t>(batches), 1);
  const LossGradientFn loss = model_loss_gradient(config, params, spec.loss);

  parallel_chunks(batches, threads, [&](Index first, Index last) {
    for (Index bi = first; bi < last; ++bi) {
      std::vector<Index> ids;
      for (Index k = bi * batch_size; k < std::min(n, (bi + 1) * batch_size); ++k) ids.push_back(k);
      const LabeledBatch batch = make_batch(data, ids);
      const Tensor adv = attack(loss, batch.images, batch.labels, spec, seed, ids);
      const double dist = linf_distance(adv, batch.images);
      linf[static_cast<std::size_t>(bi)] = dist;
      ok[static_cast<std::size_t>(bi)] =
          dist <= spec.epsilon + 1e-9 && adv.array().minCoeff() >= 0.0 && adv.array().maxCoeff() <= 1.0;
      const std::vector<int> pred = predict(output_norms(config, params, adv));
      for (std::size_t k = 0; k < ids.size(); ++k) result.predictions[static_cast<std::size_t>(ids[k])] = pred[k];
    }
  });

  for (Index k = 0; k < n; ++k)
    result.correct += result.predictions[static_cast<std::size_t>(k)] == data.labels[static_cast<std::size_t>(k)];
  result.accuracy = static_cast<double>(result.correct) / static_cast<double>(n);
  result.max_linf = *std::max_element(linf.begin(), linf.end());
  result.within_bounds = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
  return result;
}

}  // namespace gcaps
