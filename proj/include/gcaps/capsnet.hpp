#pragma once

// Capsule network: conv stem -> primary capsules -> hidden capsule layer ->
// output (class) capsules, with pluggable routing for both routed layers.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "gcaps/autodiff.hpp"
#include "gcaps/rng.hpp"
#include "gcaps/routing.hpp"

namespace gcaps {

struct ModelConfig {
  Index input_channels = 1;
  Index input_height = 28;
  Index input_width = 28;
  Index conv_channels = 256;
  Index conv_kernel = 9;
  Index conv_stride = 1;
  Index primary_types = 32;
  Index primary_dim = 8;
  Index primary_kernel = 9;
  Index primary_stride = 2;
  Index hidden_caps = 32;
  Index hidden_dim = 8;
  Index output_caps = 10;
  Index output_dim = 16;
  routing::Algorithm routing = routing::Algorithm::sda;
  int routing_iterations = routing::kDefaultIterations;

  /// Full-size architecture (CapsNet stem plus one 32-capsule hidden layer).
  static ModelConfig reference();
  /// Reduced stem for laptop-scale runs: 32 conv channels, 8 primary types.
  static ModelConfig desk();
  /// Very small network used by gradient and composition tests.
  static ModelConfig tiny();
  static ModelConfig preset(const std::string& name);

  Index conv_out_h() const { return (input_height - conv_kernel) / conv_stride + 1; }
  Index conv_out_w() const { return (input_width - conv_kernel) / conv_stride + 1; }
  Index primary_grid_h() const { return (conv_out_h() - primary_kernel) / primary_stride + 1; }
  Index primary_grid_w() const { return (conv_out_w() - primary_kernel) / primary_stride + 1; }
  Index primary_caps() const { return primary_types * primary_grid_h() * primary_grid_w(); }

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  /// Canonical "key=value" lines in fixed order; stable across runs.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  /// Applies one key/value pair; throws ConfigError for unknown keys.
  void set(const std::string& key, const std::string& value);

  bool operator==(const ModelConfig&) const = default;
};

/// Learned parameters. Transform matrices are stored as [I, J, D_upper, D_lower]
/// so u_j|i = W_ij v_i.
struct Parameters {
  Tensor conv_kernel;       // [C1, C_in, K, K]
  Tensor conv_bias;         // [C1]
  Tensor primary_kernel;    // [T*Dp, C1, K, K]
  Tensor primary_bias;      // [T*Dp]
  Tensor hidden_transform;  // [I_primary, J_hidden, D_hidden, Dp]
  Tensor output_transform;  // [J_hidden, N, D_out, D_hidden]

  static constexpr std::size_t kCount = 6;
  static const std::array<const char*, kCount>& names();

  std::array<Tensor*, kCount> tensors();
  std::array<const Tensor*, kCount> tensors() const;

  bool all_finite() const;
};

/// He-uniform conv kernels, zero biases, N(0, 0.1^2) transforms.
Parameters init_parameters(const ModelConfig& config, Rng& rng);

/// Parameters as nodes of one graph.
struct BoundParameters {
  std::array<Var, Parameters::kCount> vars;

  Var conv_kernel() const { return vars[0]; }
  Var conv_bias() const { return vars[1]; }
  Var primary_kernel() const { return vars[2]; }
  Var primary_bias() const { return vars[3]; }
  Var hidden_transform() const { return vars[4]; }
  Var output_transform() const { return vars[5]; }
};

/// Binds parameters into `graph`; tracked ones receive gradients.
BoundParameters bind(Graph& graph, const Parameters& params, bool track);

struct CapsuleLayerState {
  Var lower_activations;
  Var predictions;
  routing::RoutingOutput routing;
};

struct ForwardResult {
  Var primary;           // [B, I, Dp]
  CapsuleLayerState hidden;
  CapsuleLayerState output;
  Var hidden_norms;      // [B, J_hidden]
  Var output_norms;      // [B, N]
};

/// images: [B, C, H, W] with pixels in [0, 1].
ForwardResult forward(Var images, const BoundParameters& params, const ModelConfig& config);

/// Capsule predictions u_j|i = W_ij v_i for lower [B,I,Dl] and W [I,J,Du,Dl].
Var transform_predictions(Var lower, Var transform);

/// argmax_k norms[b, k]; ties resolve to the lowest class index.
std::vector<int> predict(const Tensor& output_norms);

/// Convenience: runs an untracked forward pass and returns output norms [B, N].
Tensor output_norms(const ModelConfig& config, const Parameters& params, const Tensor& images);

}  // namespace gcaps
