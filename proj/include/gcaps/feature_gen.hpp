#pragma once

// Activation maximization for single capsules: sign-gradient descent on
// (||v_i|| - 1)^2 + lambda * sum(x) from random images, averaged over the
// lowest-loss restarts.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gcaps/capsnet.hpp"

namespace gcaps {

enum class CapsuleLayer { hidden, output };

std::string to_string(CapsuleLayer layer);
CapsuleLayer parse_capsule_layer(const std::string& name);

struct GenSpec {
  CapsuleLayer layer = CapsuleLayer::output;
  Index capsule = 0;
  double step_size = 0.01;
  double lambda = 1e-5;
  int iterations = 1000;
  int restarts = 60;
  int keep_best = 5;
  /// Unset means: penalty on for hidden capsules, off for output capsules.
  std::optional<bool> penalty;
  std::uint64_t seed = 0;

  bool uses_penalty() const { return penalty.value_or(layer == CapsuleLayer::hidden); }
  void validate(const ModelConfig& config) const;
};

/// Per-example loss [B, 1] for images [B, C, H, W] under a full forward pass.
Var activation_loss(Var images, const BoundParameters& params, const ModelConfig& config, const GenSpec& spec);

/// The same objective from a precomputed norm and pixel sum.
double activation_loss(double norm, double pixel_sum, double lambda, bool penalty);

struct RestartResult {
  Tensor image;  // [C, H, W]
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double final_activation = 0.0;
};

struct GenResult {
  Tensor image;  // [C, H, W], pixel-wise mean of the kept restarts
  double activation = 0.0;  ///< ||v_i|| on `image`
  double loss = 0.0;        ///< objective on `image`
  std::vector<RestartResult> restarts;
  std::vector<Index> kept;  ///< restart indices, best first
};

/// Restart r starts from uniform pixels drawn from (seed, "gen-init", r), so
/// results do not depend on how restarts are split over `threads` workers.
GenResult generate(const ModelConfig& config, const Parameters& params, const GenSpec& spec, int threads = 1);

}  // namespace gcaps
