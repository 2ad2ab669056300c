#pragma once

// Structural metrics over routing records (T-score, D-score, parent
// uniqueness), the empirical usefulness estimator, accuracy and the
// confusion matrix.

#include <set>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gcaps/tensor.hpp"

namespace gcaps {

/// Couplings c^m_ij and scalar activations |v^m_j| of one routed layer,
/// accumulated over M examples. Entropy and parent-uniqueness totals are
/// accumulated on append, so the couplings themselves need only be kept when
/// `keep_couplings` is set (they dominate memory for large M).
class RoutingRecord {
 public:
  RoutingRecord(Index lower, Index upper, bool keep_couplings = true)
      : lower_(lower), upper_(upper), keep_couplings_(keep_couplings) {}

  /// couplings: [B, I, J]; activation_norms: [B, J].
  void append(const Tensor& couplings, const Tensor& activation_norms);

  Index examples() const { return examples_; }
  Index lower() const { return lower_; }
  Index upper() const { return upper_; }

  bool keeps_couplings() const { return keep_couplings_; }

  /// Only valid when couplings are kept.
  double coupling(Index m, Index i, Index j) const {
    return couplings_.at(static_cast<std::size_t>((m * lower_ + i) * upper_ + j));
  }
  double activation(Index m, Index j) const { return activations_[static_cast<std::size_t>(m * upper_ + j)]; }

  /// Sum of -c log c over every appended (m, i, j).
  double entropy_total() const { return entropy_total_; }
  /// Number of (m, i) rows with a strict unique maximum.
  Index unique_parents() const { return unique_parents_; }

 private:
  Index lower_, upper_;
  bool keep_couplings_;
  Index examples_ = 0;
  double entropy_total_ = 0.0;
  Index unique_parents_ = 0;
  std::vector<double> couplings_;
  std::vector<double> activations_;
};

/// Mean coupling entropy per (example, lower capsule), natural log, 0 log 0 = 0.
double average_entropy(const RoutingRecord& record);

/// T = 1 - H_avg / log J. Requires J >= 2 and at least one example.
double t_score(const RoutingRecord& record);

/// Maximum over upper capsules of the population standard deviation of
/// activations across the batch. Requires M >= 2.
double d_score(const RoutingRecord& record);

/// Fraction of (example, lower capsule) pairs whose coupling row has a strict
/// unique maximum.
double parent_uniqueness(const RoutingRecord& record);

/// {-1, N-1} label coding: component k is N-1 for the true class, -1 elsewhere.
Eigen::VectorXd encode_label(int label, int classes);

/// Empirical mean of sum_n y^(n) f(x)^(n) where f(x)^(n) = indicator(x) for
/// n in `feature_classes`, 0 otherwise.
double usefulness(std::span<const int> indicator, const std::set<int>& feature_classes, std::span<const int> labels,
                  int classes);

using ConfusionMatrix = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>;

/// Rows: true class; columns: predicted class.
ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels, int classes);

double accuracy(const ConfusionMatrix& confusion);

}  // namespace gcaps
