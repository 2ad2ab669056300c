#pragma once

#include <span>

#include "gcaps/autodiff.hpp"

namespace gcaps {

struct MarginLoss {
  double positive = 0.9;      ///< m+
  double negative = 0.1;      ///< m-
  double down_weight = 0.5;   ///< lambda for absent classes
};

/// Per-example margin loss for output norms [B, N]; returns [B, 1].
///   sum_k T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2
Var margin_loss(Var norms, std::span<const int> labels, const MarginLoss& m = {});

/// Scalar reference for one example.
double margin_loss(std::span<const double> norms, int label, const MarginLoss& m = {});

/// Per-example cross-entropy of softmax(scale * norms) against the label,
/// for norms [B, N]; returns [B, 1]. Never flat, unlike the margin loss.
Var norm_cross_entropy(Var norms, std::span<const int> labels, double scale = 10.0);

double norm_cross_entropy(std::span<const double> norms, int label, double scale = 10.0);

}  // namespace gcaps
