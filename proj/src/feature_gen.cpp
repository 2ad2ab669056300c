#include "gcaps/feature_gen.hpp"

#include <algorithm>
#include <numeric>

#include "gcaps/runtime.hpp"

namespace gcaps {

std::string to_string(CapsuleLayer layer) { return layer == CapsuleLayer::hidden ? "hidden" : "output"; }

CapsuleLayer parse_capsule_layer(const std::string& name) {
  if (name == "hidden") return CapsuleLayer::hidden;
  if (name == "output") return CapsuleLayer::output;
  throw ConfigError("layer", "expected 'hidden' or 'output', got '" + name + "'");
}

void GenSpec::validate(const ModelConfig& config) const {
  const Index count = layer == CapsuleLayer::hidden ? config.hidden_caps : config.output_caps;
  if (capsule < 0 || capsule >= count)
    throw ConfigError("capsule", std::to_string(capsule) + " outside [0, " + std::to_string(count) + ")");
  if (!(step_size > 0.0)) throw ConfigError("step_size", "must be positive");
  if (lambda < 0.0) throw ConfigError("lambda", "must be >= 0");
  if (iterations < 0) throw ConfigError("iterations", "must be >= 0");
  if (restarts < 1) throw ConfigError("restarts", "must be >= 1");
  if (keep_best < 1 || keep_best > restarts) throw ConfigError("keep_best", "must be in [1, restarts]");
}

double activation_loss(double norm, double pixel_sum, double lambda, bool penalty) {
  const double d = norm - 1.0;
  return d * d + (penalty ? lambda * pixel_sum : 0.0);
}

namespace {

Var target_norm(Var images, const BoundParameters& params, const ModelConfig& config, const GenSpec& spec) {
  const ForwardResult f = forward(images, params, config);
  Var norms = spec.layer == CapsuleLayer::hidden ? f.hidden_norms : f.output_norms;
  const Index n = norms.value().dim(1);
  // Select column `capsule` with a one-hot reduction.
  Tensor pick = Tensor::zeros({1, n});
  pick[spec.capsule] = 1.0;
  return sum(norms * images.graph()->constant(std::move(pick)), 1);
}

struct Evaluation {
  double loss;
  double norm;
};

Evaluation evaluate(const ModelConfig& config, const Parameters& params, const GenSpec& spec, const Tensor& x,
                    Tensor* grad) {
  Graph g;
  const BoundParameters p = bind(g, params, false);
  Var images = grad ? g.variable(x) : g.constant(x);
  Var norm = target_norm(images, p, config, spec);
  Var loss = square(norm - 1.0);
  if (spec.uses_penalty()) loss = loss + sum(reshape(images, {1, x.size()}), 1) * spec.lambda;
  if (grad) {
    g.backward(sum(loss));
    *grad = g.grad(images);
  }
  return {loss.value()[0], norm.value()[0]};
}

}  // namespace

Var activation_loss(Var images, const BoundParameters& params, const ModelConfig& config, const GenSpec& spec) {
  Var norm = target_norm(images, params, config, spec);
  Var loss = square(norm - 1.0);
  if (!spec.uses_penalty()) return loss;
  const Index b = images.value().dim(0);
  return loss + sum(reshape(images, {b, images.value().size() / b}), 1) * spec.lambda;
}

GenResult generate(const ModelConfig& config, const Parameters& params, const GenSpec& spec, int threads) {
  spec.validate(config);
  const Shape one{1, config.input_channels, config.input_height, config.input_width};
  GenResult out;
  out.restarts.resize(static_cast<std::size_t>(spec.restarts));
  parallel_chunks(spec.restarts, threads, [&](Index begin, Index end) {
    for (Index r = begin; r < end; ++r) {
      Rng rng = make_rng(spec.seed, "gen-init", static_cast<std::uint64_t>(r));
      Tensor x(one);
      for (Index k = 0; k < x.size(); ++k) x[k] = uniform01(rng);
      RestartResult& rr = out.restarts[static_cast<std::size_t>(r)];
      Tensor grad;
      for (int it = 0; it < spec.iterations; ++it) {
        const Evaluation e = evaluate(config, params, spec, x, &grad);
        if (it == 0) rr.initial_loss = e.loss;
        x.array() = (x.array() - spec.step_size * grad.array().sign()).min(1.0).max(0.0);
      }
      const Evaluation last = evaluate(config, params, spec, x, nullptr);
      if (spec.iterations == 0) rr.initial_loss = last.loss;
      rr.final_loss = last.loss;
      rr.final_activation = last.norm;
      x.reshape({config.input_channels, config.input_height, config.input_width});
      rr.image = std::move(x);
    }
  });

  std::vector<Index> order(out.restarts.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return out.restarts[static_cast<std::size_t>(a)].final_loss < out.restarts[static_cast<std::size_t>(b)].final_loss;
  });
  out.kept.assign(order.begin(), order.begin() + spec.keep_best);

  out.image = Tensor::zeros({config.input_channels, config.input_height, config.input_width});
  for (Index r : out.kept) out.image.array() += out.restarts[static_cast<std::size_t>(r)].image.array();
  out.image.array() /= static_cast<double>(spec.keep_best);

  Tensor batch = out.image;
  batch.reshape(one);
  const Evaluation avg = evaluate(config, params, spec, batch, nullptr);
  out.activation = avg.norm;
  out.loss = avg.loss;
  return out;
}

}  // namespace gcaps
