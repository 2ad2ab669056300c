#pragma once

// Routing between two capsule layers.
//
// Shapes (B = batch, I = lower capsules, J = upper capsules):
//   lower activations  [B, I, D_lower]
//   predictions u_j|i  [B, I, J, D_upper]
//   couplings, logits  [B, I, J]
//   upper activations  [B, J, D_upper]

#include <string>

#include "gcaps/autodiff.hpp"

namespace gcaps::routing {

enum class Algorithm { sda, rba };

std::string to_string(Algorithm algorithm);
Algorithm parse_algorithm(const std::string& name);

inline constexpr int kDefaultIterations = 3;
/// Parent coupling SDA aims for when the parent sits at half the mean distance.
inline constexpr double kParentCoupling = 0.9;

struct RoutingInput {
  Var lower_activations;
  Var predictions;
  int iterations = kDefaultIterations;
};

struct RoutingOutput {
  Var activations;  ///< upper capsules v_j, [B, J, D_upper]
  Var couplings;    ///< c_ij used in the final iteration
  Var logits;       ///< b_ij after the final iteration
  Var scale;        ///< t_i of the final iteration, [B, I, 1]; SDA only
};

/// Rescales every prediction to norm min(|v_i|, |u_j|i|), keeping its
/// direction. Predictions of an inactive capsule collapse to zero.
Var restrict_predictions(Var lower_activations, Var predictions);

/// Numerator log(c (J-1)) - log(1 - c) of the scale factor.
double scale_numerator(double parent_coupling, Index upper_count);

/// Scale t such that softmax over logits {d_parent t, (J-1) x d_other t}
/// assigns `parent_coupling` to the parent. Requires J >= 2 and
/// d_parent != d_other.
double scale_factor(double parent_coupling, Index upper_count, double d_parent, double d_other);

/// Scaled-distance-agreement routing.
RoutingOutput sda_route(const RoutingInput& input);

/// Routing-by-agreement baseline with accumulated dot-product logits.
RoutingOutput rba_route(const RoutingInput& input);

RoutingOutput route(Algorithm algorithm, const RoutingInput& input);

}  // namespace gcaps::routing
