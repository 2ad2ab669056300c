#include "gcaps/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace gcaps {

void RoutingRecord::append(const Tensor& couplings, const Tensor& activation_norms) {
  if (couplings.rank() != 3 || couplings.dim(1) != lower_ || couplings.dim(2) != upper_ ||
      activation_norms.rank() != 2 || activation_norms.dim(0) != couplings.dim(0) || activation_norms.dim(1) != upper_)
    throw ShapeError("RoutingRecord::append", shape_string(couplings.shape()) + " and " +
                                                  shape_string(activation_norms.shape()));
  const Index rows = couplings.dim(0) * lower_;
  for (Index r = 0; r < rows; ++r) {
    const double* row = couplings.data() + r * upper_;
    double best = row[0];
    int ties = 1;
    for (Index j = 0; j < upper_; ++j) {
      const double c = row[j];
      if (c > 0.0) entropy_total_ -= c * std::log(c);
      if (j == 0) continue;
      if (c > best) {
        best = c;
        ties = 1;
      } else if (c == best) {
        ++ties;
      }
    }
    unique_parents_ += ties == 1;
  }
  if (keep_couplings_) couplings_.insert(couplings_.end(), couplings.data(), couplings.data() + couplings.size());
  activations_.insert(activations_.end(), activation_norms.data(), activation_norms.data() + activation_norms.size());
  examples_ += couplings.dim(0);
}

double average_entropy(const RoutingRecord& r) {
  if (r.examples() < 1 || r.lower() < 1) throw DomainError("t_score", "record is empty");
  return r.entropy_total() / static_cast<double>(r.examples() * r.lower());
}

double t_score(const RoutingRecord& r) {
  if (r.upper() < 2) throw DomainError("t_score", "needs J >= 2 (log J = 0)");
  return 1.0 - average_entropy(r) / std::log(static_cast<double>(r.upper()));
}

double d_score(const RoutingRecord& r) {
  if (r.examples() < 2) throw DomainError("d_score", "needs at least 2 examples");
  const double m = static_cast<double>(r.examples());
  double best = 0.0;
  for (Index j = 0; j < r.upper(); ++j) {
    double mean = 0.0;
    for (Index e = 0; e < r.examples(); ++e) mean += r.activation(e, j);
    mean /= m;
    double var = 0.0;
    for (Index e = 0; e < r.examples(); ++e) {
      const double d = r.activation(e, j) - mean;
      var += d * d;
    }
    best = std::max(best, std::sqrt(var / m));
  }
  return best;
}

double parent_uniqueness(const RoutingRecord& r) {
  if (r.examples() < 1 || r.lower() < 1) throw DomainError("parent_uniqueness", "record is empty");
  return static_cast<double>(r.unique_parents()) / static_cast<double>(r.examples() * r.lower());
}

Eigen::VectorXd encode_label(int label, int classes) {
  if (label < 0 || label >= classes) throw DomainError("encode_label", "label out of range");
  Eigen::VectorXd y = Eigen::VectorXd::Constant(classes, -1.0);
  y[label] = classes - 1.0;
  return y;
}

double usefulness(std::span<const int> indicator, const std::set<int>& feature_classes, std::span<const int> labels,
                  int classes) {
  if (labels.empty()) throw DomainError("usefulness", "empty dataset");
  if (indicator.size() != labels.size()) throw ShapeError("usefulness", "indicator and labels differ in length");
  // Integer arithmetic keeps the constant-feature case exactly zero.
  long long total = 0;
  for (std::size_t m = 0; m < labels.size(); ++m) {
    if (!indicator[m]) continue;
    for (int n : feature_classes) {
      if (n < 0 || n >= classes) throw DomainError("usefulness", "feature class out of range");
      total += n == labels[m] ? classes - 1 : -1;
    }
  }
  return static_cast<double>(total) / static_cast<double>(labels.size());
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels, int classes) {
  if (predictions.size() != labels.size()) throw ShapeError("confusion_matrix", "length mismatch");
  ConfusionMatrix cm = ConfusionMatrix::Zero(classes, classes);
  for (std::size_t m = 0; m < labels.size(); ++m) {
    if (labels[m] < 0 || labels[m] >= classes || predictions[m] < 0 || predictions[m] >= classes)
      throw DomainError("confusion_matrix", "class index out of range at example " + std::to_string(m));
    ++cm(labels[m], predictions[m]);
  }
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const long total = cm.sum();
  return total == 0 ? 0.0 : static_cast<double>(cm.trace()) / static_cast<double>(total);
}

}  // namespace gcaps
