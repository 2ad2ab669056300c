#include "gcaps/routing.hpp"

#include <cmath>

namespace gcaps::routing {

std::string to_string(Algorithm algorithm) {
  return algorithm == Algorithm::sda ? "sda" : "rba";
}

Algorithm parse_algorithm(const std::string& name) {
  if (name == "sda" || name == "SDA") return Algorithm::sda;
  if (name == "rba" || name == "RBA") return Algorithm::rba;
  throw ConfigError("routing", "expected sda or rba, got '" + name + "'");
}

namespace {

struct Dims {
  Index batch, lower, upper, upper_dim;
};

Dims check_input(const RoutingInput& in, const char* op) {
  const Shape& sv = in.lower_activations.shape();
  const Shape& su = in.predictions.shape();
  if (sv.size() != 3 || su.size() != 4 || sv[0] != su[0] || sv[1] != su[1])
    throw ShapeError(op, shape_string(sv) + " and " + shape_string(su));
  if (in.iterations < 1) throw DomainError(op, "iterations must be >= 1");
  return {su[0], su[1], su[2], su[3]};
}

Var zero_logits(Graph& g, const Dims& d) {
  return g.constant(Tensor::zeros({d.batch, d.lower, d.upper}));
}

// sum_i c_ij u_j|i, squashed: [B, 1, J, D].
Var weighted_vote(Var couplings, Var predictions, const Dims& d) {
  Var c = reshape(couplings, {d.batch, d.lower, d.upper, 1});
  return squash(sum(c * predictions, 1), 3);
}

}  // namespace

Var restrict_predictions(Var lower_activations, Var predictions) {
  const Shape& sv = lower_activations.shape();
  const Shape& su = predictions.shape();
  if (sv.size() != 3 || su.size() != 4 || sv[0] != su[0] || sv[1] != su[1])
    throw ShapeError("restrict_predictions", shape_string(sv) + " and " + shape_string(su));
  Var lower_norm = reshape(l2_norm(lower_activations, 2), {sv[0], sv[1], 1, 1});
  Var pred_norm = l2_norm(predictions, 3);
  Var pred_norm_guarded = l2_norm(predictions, 3, kNormGuard);
  return predictions * (minimum(lower_norm, pred_norm) / pred_norm_guarded);
}

double scale_numerator(double parent_coupling, Index upper_count) {
  if (upper_count < 2) throw DomainError("scale_factor", "well defined only for J > 1");
  if (!(parent_coupling > 0.0 && parent_coupling < 1.0))
    throw DomainError("scale_factor", "parent coupling must lie in (0, 1)");
  return std::log(parent_coupling * static_cast<double>(upper_count - 1)) - std::log(1.0 - parent_coupling);
}

double scale_factor(double parent_coupling, Index upper_count, double d_parent, double d_other) {
  const double numerator = scale_numerator(parent_coupling, upper_count);
  if (d_parent == d_other) throw DomainError("scale_factor", "parent and other distances must differ");
  return numerator / (d_parent - d_other);
}

RoutingOutput sda_route(const RoutingInput& in) {
  const Dims d = check_input(in, "sda_route");
  Graph& g = *in.predictions.graph();
  const Tensor& lower = in.lower_activations.value();
  const Index dim = lower.shape()[2];
  for (Index k = 0; k < d.batch * d.lower; ++k) {
    const double n = Eigen::Map<const Eigen::VectorXd>(lower.data() + k * dim, dim).norm();
    if (n > 1.0 + 1e-9) throw DomainError("sda_route", "lower activation norm exceeds 1");
  }

  Var restricted = restrict_predictions(in.lower_activations, in.predictions);
  Var numerator = g.constant(Tensor::constant({1, 1, 1}, scale_numerator(kParentCoupling, d.upper)));
  Var logits = zero_logits(g, d);
  RoutingOutput out;
  for (int r = 0; r < in.iterations; ++r) {
    out.couplings = softmax(logits, 2);
    Var upper = weighted_vote(out.couplings, restricted, d);
    Var distance = reshape(l2_norm(restricted - upper, 3, kNormGuard), {d.batch, d.lower, d.upper});
    // d_parent - d_other = -0.5 * mean_j distance
    out.scale = numerator / (mean(distance, 2) * -0.5);
    logits = distance * out.scale;
    out.activations = upper;
  }
  out.activations = reshape(out.activations, {d.batch, d.upper, d.upper_dim});
  out.logits = logits;
  return out;
}

RoutingOutput rba_route(const RoutingInput& in) {
  const Dims d = check_input(in, "rba_route");
  Graph& g = *in.predictions.graph();
  Var logits = zero_logits(g, d);
  RoutingOutput out;
  for (int r = 0; r < in.iterations; ++r) {
    out.couplings = softmax(logits, 2);
    Var upper = weighted_vote(out.couplings, in.predictions, d);
    logits = logits + reshape(sum(in.predictions * upper, 3), {d.batch, d.lower, d.upper});
    out.activations = upper;
  }
  out.activations = reshape(out.activations, {d.batch, d.upper, d.upper_dim});
  out.logits = logits;
  return out;
}

RoutingOutput route(Algorithm algorithm, const RoutingInput& input) {
  return algorithm == Algorithm::sda ? sda_route(input) : rba_route(input);
}

}  // namespace gcaps::routing
