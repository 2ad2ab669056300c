#pragma once

// L-infinity sign-gradient attacks (FGSM, PGD) and robust accuracy.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gcaps/capsnet.hpp"
#include "gcaps/data_io.hpp"

namespace gcaps {

enum class AttackKind { fgsm, pgd };
enum class AttackLoss { cross_entropy, margin };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);
std::string to_string(AttackLoss loss);
AttackLoss parse_attack_loss(const std::string& name);

struct AttackSpec {
  AttackKind kind = AttackKind::pgd;
  double epsilon = 0.3;
  double step_size = 0.01;  ///< PGD only
  int steps = 40;           ///< PGD only
  bool random_start = true; ///< PGD only
  AttackLoss loss = AttackLoss::cross_entropy;

  void validate() const;
};

/// Per-example losses and the gradient of their sum with respect to the input.
struct LossGradient {
  std::vector<double> losses;
  Tensor grad;
};

using LossGradientFn = std::function<LossGradient(const Tensor& inputs, std::span<const int> labels)>;

/// Loss of the model on its output norms, differentiated with respect to its
/// input. The returned callable keeps references to `config` and `params`.
LossGradientFn model_loss_gradient(const ModelConfig& config, const Parameters& params,
                                   AttackLoss loss = AttackLoss::cross_entropy);

/// clip(x + eps * sign(grad), 0, 1).
Tensor fgsm(const LossGradientFn& loss, const Tensor& inputs, std::span<const int> labels, double epsilon);

/// `steps` iterations of x <- P(x + a * sign(grad)), P projecting onto the
/// eps-ball around `inputs` intersected with [0, 1]. With random start, the
/// initial point is uniform in the ball, drawn from a stream keyed by
/// (seed, example_ids[b]) so results do not depend on batching.
Tensor pgd(const LossGradientFn& loss, const Tensor& inputs, std::span<const int> labels, const AttackSpec& spec,
           std::uint64_t seed, std::span<const Index> example_ids);

/// Dispatches on spec.kind.
Tensor attack(const LossGradientFn& loss, const Tensor& inputs, std::span<const int> labels, const AttackSpec& spec,
              std::uint64_t seed, std::span<const Index> example_ids);

/// Largest |adv - x| over all elements.
double linf_distance(const Tensor& a, const Tensor& b);

struct RobustnessResult {
  double accuracy = 0.0;
  Index examples = 0;
  Index correct = 0;
  double max_linf = 0.0;        ///< over every generated example
  bool within_bounds = true;    ///< every x_adv within the ball and in [0, 1]
  std::vector<int> predictions; ///< per example, after attack
};

/// Accuracy after attacking each example of `data` (first `limit` examples
/// when limit > 0). Examples are processed in batches of `batch_size`,
/// distributed over `threads` workers.
RobustnessResult robust_accuracy(const ModelConfig& config, const Parameters& params, const Dataset& data,
                                 const AttackSpec& spec, std::uint64_t seed, Index limit = 0, Index batch_size = 50,
                                 int threads = 1);

}  // namespace gcaps
