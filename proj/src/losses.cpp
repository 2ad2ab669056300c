#include "gcaps/losses.hpp"

#include <algorithm>
#include <cmath>

namespace gcaps {

Var margin_loss(Var norms, std::span<const int> labels, const MarginLoss& m) {
  const Shape& s = norms.shape();
  if (s.size() != 2 || static_cast<std::size_t>(s[0]) != labels.size())
    throw ShapeError("margin_loss", shape_string(s) + " with " + std::to_string(labels.size()) + " labels");
  const Index batch = s[0], classes = s[1];
  Tensor present({batch, classes});
  Tensor absent = Tensor::constant({batch, classes}, m.down_weight);
  for (Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes) throw DomainError("margin_loss", "label out of range");
    present.at(b, y) = 1.0;
    absent.at(b, y) = 0.0;
  }
  Graph& g = *norms.graph();
  Var hit = square(relu(scale(norms, -1.0) + m.positive));
  Var miss = square(relu(norms - m.negative));
  return sum(g.constant(std::move(present)) * hit + g.constant(std::move(absent)) * miss, 1);
}

double margin_loss(std::span<const double> norms, int label, const MarginLoss& m) {
  double total = 0.0;
  for (std::size_t k = 0; k < norms.size(); ++k) {
    if (static_cast<int>(k) == label) {
      const double d = std::max(0.0, m.positive - norms[k]);
      total += d * d;
    } else {
      const double d = std::max(0.0, norms[k] - m.negative);
      total += m.down_weight * d * d;
    }
  }
  return total;
}

Var norm_cross_entropy(Var norms, std::span<const int> labels, double factor) {
  const Shape& s = norms.shape();
  if (s.size() != 2 || static_cast<std::size_t>(s[0]) != labels.size())
    throw ShapeError("norm_cross_entropy", shape_string(s) + " with " + std::to_string(labels.size()) + " labels");
  const Index batch = s[0], classes = s[1];
  const Tensor& v = norms.value();
  Tensor onehot({batch, classes});
  Tensor shift({batch, classes});
  Tensor top({batch, 1});
  for (Index b = 0; b < batch; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= classes) throw DomainError("norm_cross_entropy", "label out of range");
    onehot.at(b, y) = 1.0;
    double m = v.at(b, 0);
    for (Index j = 1; j < classes; ++j) m = std::max(m, v.at(b, j));
    top.at(b, 0) = factor * m;
    for (Index j = 0; j < classes; ++j) shift.at(b, j) = factor * m;
  }
  Graph& g = *norms.graph();
  Var z = scale(norms, factor);
  Var lse = log(sum(exp(z - g.constant(std::move(shift))), 1)) + g.constant(std::move(top));
  return lse - sum(z * g.constant(std::move(onehot)), 1);
}

double norm_cross_entropy(std::span<const double> norms, int label, double factor) {
  double top = norms[0];
  for (double n : norms) top = std::max(top, n);
  double total = 0.0;
  for (double n : norms) total += std::exp(factor * (n - top));
  return factor * top + std::log(total) - factor * norms[static_cast<std::size_t>(label)];
}

}  // namespace gcaps
