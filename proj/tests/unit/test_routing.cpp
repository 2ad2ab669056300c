#include <doctest.h>

#include "gcaps/errors.hpp"
#include "gcaps/routing.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gcaps;
using gcaps::test::random_tensor;
using gcaps::test::Oracle;
using gcaps::test::oracle_route;

namespace {

// Lower activations with norms in [0, 1): squashed random vectors.
Tensor random_lower(const Shape& shape, Rng& rng) {
  Graph g;
  return squash(g.constant(random_tensor(shape, rng, -2.0, 2.0)), 2).value();
}

routing::RoutingOutput run(Graph& g, routing::Algorithm a, const Tensor& lower, const Tensor& pred, int iterations) {
  return routing::route(a, {g.constant(lower), g.constant(pred), iterations});
}

void check_against_oracle(routing::Algorithm a, const Tensor& lower, const Tensor& pred, int iterations) {
  Graph g;
  const routing::RoutingOutput out = run(g, a, lower, pred, iterations);
  const Oracle o = oracle_route(a == routing::Algorithm::sda, lower, pred, iterations);
  const Index B = pred.dim(0), I = pred.dim(1), J = pred.dim(2), D = pred.dim(3);
  double worst = 0.0;
  for (Index b = 0; b < B; ++b) {
    for (Index i = 0; i < I; ++i)
      for (Index j = 0; j < J; ++j) {
        worst = std::max(worst, std::abs(out.couplings.value().at(b, i, j) - o.couplings[b][i][j]));
        const double lo = o.logits[b][i][j];
        worst = std::max(worst, std::abs(out.logits.value().at(b, i, j) - lo) / std::max(1.0, std::abs(lo)));
      }
    for (Index j = 0; j < J; ++j)
      for (Index k = 0; k < D; ++k)
        worst = std::max(worst, std::abs(out.activations.value().at(b, j, k) - o.upper[b][j][k]));
    if (a == routing::Algorithm::sda)
      for (Index i = 0; i < I; ++i) {
        const double t = o.scale[b][i];
        worst = std::max(worst, std::abs(out.scale.value().at(b, i, 0) - t) / std::max(1.0, std::abs(t)));
      }
  }
  CHECK(worst < 1e-10);
}

}  // namespace

TEST_SUITE("routing") {
  TEST_CASE("restriction follows the min rule") {
    Graph g;
    // One example, lower capsule norm 0.5; predictions of norm 2, 0.3 and 0.
    Var lower = g.constant(Tensor({1, 1, 2}, {0.3, 0.4}));
    Var pred = g.constant(Tensor({1, 1, 3, 2}, {0.0, 2.0, 0.18, 0.24, 0.0, 0.0}));
    const Tensor r = routing::restrict_predictions(lower, pred).value();
    CHECK(r.at(0, 0, 0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.at(0, 0, 0, 0) == 0.0);
    // The norm guard perturbs an unclipped prediction by about 1e-11 relative.
    CHECK(r.at(0, 0, 1, 0) == doctest::Approx(0.18).epsilon(1e-10));
    CHECK(r.at(0, 0, 1, 1) == doctest::Approx(0.24).epsilon(1e-10));
    CHECK(r.at(0, 0, 2, 0) == 0.0);

    Var off = g.constant(Tensor::zeros({1, 1, 2}));
    const Tensor z = routing::restrict_predictions(off, pred).value();
    CHECK(z.array().abs().maxCoeff() == 0.0);
  }

  TEST_CASE("scale factor examples and the softmax identity") {
    const double t = routing::scale_factor(0.9, 10, 1.0, 2.0);
    CHECK(t == doctest::Approx(-4.3944).epsilon(1e-4));
    const double parent = std::exp(1.0 * t);
    const double others = 9.0 * std::exp(2.0 * t);
    CHECK(std::abs(parent / (parent + others) - 0.9) < 1e-9);
    CHECK(routing::scale_factor(0.5, 2, 1.0, 2.0) == 0.0);
    CHECK_THROWS_AS(routing::scale_factor(0.9, 1, 1.0, 2.0), DomainError);
    CHECK_THROWS_AS(routing::scale_factor(0.9, 10, 1.0, 1.0), DomainError);
    CHECK_THROWS_AS(routing::scale_factor(1.0, 10, 1.0, 2.0), DomainError);
  }

  TEST_CASE("scale factor round-trips the parent coupling for many settings") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
      const Index J = 2 + static_cast<Index>(rng() % 200);
      const double c = uniform(rng, 0.01, 0.99);
      const double dp = uniform(rng, 0.0, 3.0), dother = dp + uniform(rng, 0.01, 3.0);
      const double t = routing::scale_factor(c, J, dp, dother);
      const double num = std::exp(dp * t), den = num + static_cast<double>(J - 1) * std::exp(dother * t);
      CHECK(std::abs(num / den - c) < 1e-9);
    }
  }

  TEST_CASE("maximum coupling when the others sit at logit -2") {
    auto parent_share = [](Index J) {
      Graph g;
      Tensor b = Tensor::constant({1, J}, -2.0);
      b[0] = 0.0;
      return softmax(g.constant(b), 1).value()[0];
    };
    // Agreement to four decimals: within one unit of the fourth decimal place.
    CHECK(std::abs(parent_share(10) - 0.4508) < 1e-4);
    CHECK(std::abs(parent_share(128) - 0.0550) < 1e-4);
  }

  TEST_CASE("single iteration gives uniform couplings and squashed mean votes") {
    Rng rng(6);
    const Tensor lower = random_lower({2, 5, 4}, rng), pred = random_tensor({2, 5, 3, 6}, rng, -0.3, 0.3);
    for (auto a : {routing::Algorithm::sda, routing::Algorithm::rba}) {
      Graph g;
      const auto out = run(g, a, lower, pred, 1);
      for (Index k = 0; k < out.couplings.value().size(); ++k) CHECK(out.couplings.value()[k] == 1.0 / 3.0);
    }
  }

  TEST_CASE("SDA and RBA match the straight-line oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
      const Index B = 1 + static_cast<Index>(rng() % 3), I = 1 + static_cast<Index>(rng() % 6);
      const Index J = 2 + static_cast<Index>(rng() % 5), D = 1 + static_cast<Index>(rng() % 5);
      const int r = 1 + static_cast<int>(rng() % 4);
      const Tensor lower = random_lower({B, I, 3}, rng);
      const Tensor pred = random_tensor({B, I, J, D}, rng, -1.0, 1.0);
      CAPTURE(trial);
      check_against_oracle(routing::Algorithm::sda, lower, pred, r);
      check_against_oracle(routing::Algorithm::rba, lower, pred, r);
    }
  }

  TEST_CASE("agreeing predictions pull both lower capsules to the same parent") {
    // Both lower capsules fully active; both predict e1 for upper 0, but
    // opposite vectors for upper 1.
    Tensor lower({1, 2, 2}, {1.0, 0.0, 1.0, 0.0});
    Tensor pred({1, 2, 2, 2}, {1.0, 0.0, 0.0, 1.0,  //
                               1.0, 0.0, 0.0, -1.0});
    for (auto a : {routing::Algorithm::sda, routing::Algorithm::rba}) {
      Graph g;
      const Tensor c = run(g, a, lower, pred, 3).couplings.value();
      CAPTURE(routing::to_string(a));
      CHECK(c.at(0, 0, 0) > c.at(0, 0, 1));
      CHECK(c.at(0, 1, 0) > c.at(0, 1, 1));
    }
  }

  TEST_CASE("RBA lets an inactive capsule with a large prediction steer couplings") {
    // Lower capsule 0 is nearly inactive but predicts a norm-10 vector for
    // upper 1; lower capsule 1 is active and agrees weakly with upper 0.
    Tensor lower({1, 2, 2}, {0.01, 0.0, 0.9, 0.0});
    Tensor pred({1, 2, 2, 2}, {0.1, 0.0, 10.0, 0.0,  //
                               0.3, 0.0, 0.0, 0.1});
    Graph g;
    const Tensor rba = run(g, routing::Algorithm::rba, lower, pred, 2).couplings.value();
    CHECK(rba.at(0, 0, 1) > rba.at(0, 0, 0));
    CHECK(rba.at(0, 0, 1) > 0.99);
    // Under SDA the same prediction is first shrunk to the capsule's activation.
    const Tensor sda = run(g, routing::Algorithm::sda, lower, pred, 2).couplings.value();
    CHECK(sda.at(0, 0, 1) < rba.at(0, 0, 1));
  }

  TEST_CASE("couplings stay row-stochastic and SDA scales negative") {
    Rng rng(8);
    for (int trial = 0; trial < 30; ++trial) {
      const Index I = 1 + static_cast<Index>(rng() % 8), J = 2 + static_cast<Index>(rng() % 10);
      const int r = 1 + static_cast<int>(rng() % 5);
      const Tensor lower = random_lower({2, I, 4}, rng), pred = random_tensor({2, I, J, 3}, rng, -2.0, 2.0);
      for (auto a : {routing::Algorithm::sda, routing::Algorithm::rba}) {
        Graph g;
        const auto out = run(g, a, lower, pred, r);
        const Tensor& c = out.couplings.value();
        for (Index b = 0; b < 2; ++b)
          for (Index i = 0; i < I; ++i) {
            double total = 0.0;
            for (Index j = 0; j < J; ++j) total += c.at(b, i, j);
            CHECK(std::abs(total - 1.0) <= 1e-9);
          }
        const Tensor n = l2_norm(out.activations, 2).value();
        CHECK(n.array().maxCoeff() < 1.0);
        if (a == routing::Algorithm::sda) CHECK(out.scale.value().array().maxCoeff() < 0.0);
      }
    }
  }

  TEST_CASE("SDA predictions never exceed the activation of their lower capsule") {
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
      const Tensor lower = random_lower({1, 6, 4}, rng), pred = random_tensor({1, 6, 4, 5}, rng, -3.0, 3.0);
      Graph g;
      Var restricted = routing::restrict_predictions(g.constant(lower), g.constant(pred));
      const auto out = run(g, routing::Algorithm::sda, lower, pred, 3);
      const Tensor lower_norm = l2_norm(g.constant(lower), 2).value();
      const Tensor pred_norm = l2_norm(restricted, 3).value();
      for (Index i = 0; i < 6; ++i)
        for (Index j = 0; j < 4; ++j) CHECK(pred_norm.at(0, i, j, 0) <= lower_norm.at(0, i, 0) + 1e-12);
      // Each pre-squash input is bounded by the coupling-weighted lower norms.
      Var c = reshape(out.couplings, {1, 6, 4, 1});
      const Tensor s_norm = l2_norm(sum(c * restricted, 1), 3).value();
      for (Index j = 0; j < 4; ++j) {
        double bound = 0.0;
        for (Index i = 0; i < 6; ++i) bound += out.couplings.value().at(0, i, j) * lower_norm.at(0, i, 0);
        CHECK(s_norm.at(0, 0, j, 0) <= bound + 1e-12);
      }
    }
  }

  TEST_CASE("SDA with no active parts yields no active wholes") {
    Rng rng(10);
    const Tensor pred = random_tensor({2, 4, 3, 5}, rng);
    Graph g;
    const auto out = run(g, routing::Algorithm::sda, Tensor::zeros({2, 4, 6}), pred, 3);
    CHECK(out.activations.value().array().abs().maxCoeff() == 0.0);
    for (Index k = 0; k < out.couplings.value().size(); ++k)
      CHECK(out.couplings.value()[k] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  }

  TEST_CASE("permuting upper capsules permutes the outputs") {
    Rng rng(11);
    const Index I = 4, J = 5, D = 3;
    const Tensor lower = random_lower({1, I, 2}, rng), pred = random_tensor({1, I, J, D}, rng);
    const std::vector<Index> perm{3, 0, 4, 1, 2};
    Tensor permuted({1, I, J, D});
    for (Index i = 0; i < I; ++i)
      for (Index j = 0; j < J; ++j)
        for (Index k = 0; k < D; ++k) permuted.at(0, i, j, k) = pred.at(0, i, perm[j], k);
    for (auto a : {routing::Algorithm::sda, routing::Algorithm::rba}) {
      Graph g;
      const auto base = run(g, a, lower, pred, 3);
      const auto moved = run(g, a, lower, permuted, 3);
      double worst = 0.0;
      for (Index j = 0; j < J; ++j) {
        for (Index k = 0; k < D; ++k)
          worst = std::max(worst, std::abs(moved.activations.value().at(0, j, k) -
                                           base.activations.value().at(0, perm[j], k)));
        for (Index i = 0; i < I; ++i)
          worst = std::max(worst, std::abs(moved.couplings.value().at(0, i, j) -
                                           base.couplings.value().at(0, i, perm[j])));
      }
      CHECK(worst < 1e-12);
    }
  }

  TEST_CASE("routing is bit-deterministic") {
    Rng rng(12);
    const Tensor lower = random_lower({3, 7, 4}, rng), pred = random_tensor({3, 7, 5, 6}, rng);
    for (auto a : {routing::Algorithm::sda, routing::Algorithm::rba}) {
      Graph g1, g2;
      const auto x = run(g1, a, lower, pred, 3);
      const auto y = run(g2, a, lower, pred, 3);
      CHECK(test::max_abs_diff(x.activations.value(), y.activations.value()) == 0.0);
      CHECK(test::max_abs_diff(x.couplings.value(), y.couplings.value()) == 0.0);
    }
  }

  TEST_CASE("gradients flow through all routing iterations") {
    Rng rng(13);
    const Tensor lower = random_lower({1, 2, 3}, rng), pred = random_tensor({1, 2, 2, 3}, rng, -0.8, 0.8);
    for (auto a : {routing::Algorithm::sda, routing::Algorithm::rba}) {
      CAPTURE(routing::to_string(a));
      const double err = test::gradient_error(
          [a](Graph&, const std::vector<Var>& v) {
            const auto out = routing::route(a, {v[0], v[1], 3});
            return concat({reshape(out.activations, {1, 6}), reshape(out.couplings, {1, 4})}, 1);
          },
          {lower, pred});
      CHECK(err < 1e-4);
    }
  }

  TEST_CASE("input validation") {
    Graph g;
    Var lower = g.constant(Tensor::zeros({1, 2, 3}));
    Var pred = g.constant(Tensor::zeros({1, 3, 2, 3}));
    CHECK_THROWS_AS(routing::sda_route({lower, pred, 3}), ShapeError);
    Var too_long = g.constant(Tensor::constant({1, 3, 2}, 1.0));
    CHECK_THROWS_AS(routing::sda_route({too_long, pred, 3}), DomainError);
    CHECK_THROWS_AS(routing::sda_route({g.constant(Tensor::zeros({1, 3, 2})), g.constant(Tensor::zeros({1, 3, 1, 2})), 3}),
                    DomainError);
    CHECK(routing::parse_algorithm("rba") == routing::Algorithm::rba);
    CHECK_THROWS_AS(routing::parse_algorithm("em"), ConfigError);
  }
}
