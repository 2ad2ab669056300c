#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gcaps/autodiff.hpp"
#include "gcaps/rng.hpp"

namespace gcaps::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (Index k = 0; k < t.size(); ++k) t[k] = uniform(rng, lo, hi);
  return t;
}

/// Builds a differentiable expression from graph variables.
using Expression = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Reduces an arbitrary-shaped output to a scalar with fixed random weights so
/// every output component contributes to the checked gradient.
inline Var weighted_sum(Graph& g, Var out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(out.shape(), rng, 0.5, 1.5);
  Var weights = g.constant(std::move(w));
  return out.shape().empty() ? out : sum(out * weights);
}

inline double scalar_loss(const Expression& f, const std::vector<Tensor>& inputs, std::uint64_t seed) {
  Graph g;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(g.constant(t));
  return weighted_sum(g, f(g, vars), seed).value()[0];
}

/// Largest normwise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over all inputs, with central differences of step h.
inline double gradient_error(const Expression& f, const std::vector<Tensor>& inputs, double h = 1e-5,
                             std::uint64_t seed = 17) {
  Graph g;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(g.variable(t));
  g.backward(weighted_sum(g, f(g, vars), seed));

  double worst = 0.0;
  for (std::size_t n = 0; n < inputs.size(); ++n) {
    const Tensor analytic = g.grad(vars[n]);
    std::vector<Tensor> probe = inputs;
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (Index k = 0; k < inputs[n].size(); ++k) {
      const double x0 = inputs[n][k];
      probe[n][k] = x0 + h;
      const double up = scalar_loss(f, probe, seed);
      probe[n][k] = x0 - h;
      const double down = scalar_loss(f, probe, seed);
      probe[n][k] = x0;
      const double numeric = (up - down) / (2.0 * h);
      diff += (analytic[k] - numeric) * (analytic[k] - numeric);
      na += analytic[k] * analytic[k];
      nn += numeric * numeric;
    }
    const double scale = std::sqrt(std::max(na, nn));
    if (scale > 0.0) worst = std::max(worst, std::sqrt(diff) / scale);
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace gcaps::test
