#include <doctest.h>

#include "gcaps/errors.hpp"
#include "gcaps/feature_gen.hpp"
#include "support.hpp"

using namespace gcaps;

namespace {

GenSpec small_spec(CapsuleLayer layer, Index capsule) {
  GenSpec s;
  s.layer = layer;
  s.capsule = capsule;
  s.iterations = 30;
  s.restarts = 4;
  s.keep_best = 2;
  s.step_size = 0.02;
  s.seed = 5;
  return s;
}

Tensor capsule_norms(const ModelConfig& c, const Parameters& p, const Tensor& image, CapsuleLayer layer) {
  Tensor x = image;
  x.reshape({1, c.input_channels, c.input_height, c.input_width});
  Graph g;
  const ForwardResult f = forward(g.constant(x), bind(g, p, false), c);
  return (layer == CapsuleLayer::output ? f.output_norms : f.hidden_norms).value();
}

}  // namespace

TEST_SUITE("feature_gen") {
  TEST_CASE("objective examples") {
    CHECK(activation_loss(1.0, 0.0, 1e-5, true) == 0.0);
    CHECK(activation_loss(0.0, 0.0, 1e-5, true) == 1.0);
    CHECK(activation_loss(0.5, 1000.0, 1e-5, true) == doctest::Approx(0.26).epsilon(1e-12));
    CHECK(activation_loss(0.5, 1000.0, 1e-5, false) == doctest::Approx(0.25).epsilon(1e-12));
  }

  TEST_CASE("graph objective matches the scalar form on a forward pass") {
    const ModelConfig c = ModelConfig::tiny();
    Rng rng(1);
    const Parameters p = init_parameters(c, rng);
    const Tensor x = test::random_tensor({3, 1, 8, 8}, rng, 0.0, 1.0);
    for (CapsuleLayer layer : {CapsuleLayer::hidden, CapsuleLayer::output}) {
      GenSpec s = small_spec(layer, 1);
      Graph g;
      const Tensor loss = activation_loss(g.constant(x), bind(g, p, false), c, s).value();
      Graph h;
      const ForwardResult f = forward(h.constant(x), bind(h, p, false), c);
      const Tensor& norms = (layer == CapsuleLayer::output ? f.output_norms : f.hidden_norms).value();
      for (Index b = 0; b < 3; ++b) {
        double pixels = 0.0;
        for (Index k = 0; k < 64; ++k) pixels += x[b * 64 + k];
        CHECK(loss[b] == doctest::Approx(activation_loss(norms.at(b, 1), pixels, s.lambda, s.uses_penalty())));
      }
    }
  }

  TEST_CASE("penalty defaults follow the layer") {
    CHECK(small_spec(CapsuleLayer::hidden, 0).uses_penalty());
    CHECK_FALSE(small_spec(CapsuleLayer::output, 0).uses_penalty());
    GenSpec forced = small_spec(CapsuleLayer::output, 0);
    forced.penalty = true;
    CHECK(forced.uses_penalty());
  }

  TEST_CASE("zero iterations with one restart returns the initial image") {
    const ModelConfig c = ModelConfig::tiny();
    Rng rng(2);
    const Parameters p = init_parameters(c, rng);
    GenSpec s = small_spec(CapsuleLayer::output, 0);
    s.iterations = 0;
    s.restarts = 1;
    s.keep_best = 1;
    const GenResult r = generate(c, p, s);
    Rng init = make_rng(s.seed, "gen-init", 0);
    for (Index k = 0; k < r.image.size(); ++k) CHECK(r.image[k] == uniform01(init));
    CHECK(r.restarts[0].initial_loss == r.restarts[0].final_loss);
  }

  TEST_CASE("generated images stay in the unit box and descend") {
    const ModelConfig c = ModelConfig::tiny();
    Rng rng(3);
    const Parameters p = init_parameters(c, rng);
    for (CapsuleLayer layer : {CapsuleLayer::hidden, CapsuleLayer::output}) {
      const GenResult r = generate(c, p, small_spec(layer, 1));
      CHECK(r.image.shape() == Shape{1, 8, 8});
      CHECK(r.image.array().minCoeff() >= 0.0);
      CHECK(r.image.array().maxCoeff() <= 1.0);
      CHECK(r.restarts.size() == 4);
      CHECK(r.kept.size() == 2);
      CHECK(r.restarts[static_cast<std::size_t>(r.kept[0])].final_loss <=
            r.restarts[static_cast<std::size_t>(r.kept[1])].final_loss);
      int improved = 0;
      for (const RestartResult& rr : r.restarts) improved += rr.final_loss < rr.initial_loss;
      CHECK(improved >= 3);
      CHECK(capsule_norms(c, p, r.image, layer)[1] == doctest::Approx(r.activation).epsilon(1e-12));
    }
  }

  TEST_CASE("kept image is the mean of the best restarts") {
    const ModelConfig c = ModelConfig::tiny();
    Rng rng(4);
    const Parameters p = init_parameters(c, rng);
    const GenResult r = generate(c, p, small_spec(CapsuleLayer::output, 0));
    for (Index k = 0; k < r.image.size(); ++k) {
      double mean = 0.0;
      for (Index id : r.kept) mean += r.restarts[static_cast<std::size_t>(id)].image[k];
      CHECK(r.image[k] == doctest::Approx(mean / 2.0).epsilon(1e-15));
    }
  }

  TEST_CASE("results are deterministic and independent of thread count") {
    const ModelConfig c = ModelConfig::tiny();
    Rng rng(5);
    const Parameters p = init_parameters(c, rng);
    const GenSpec s = small_spec(CapsuleLayer::hidden, 2);
    const GenResult a = generate(c, p, s, 1), b = generate(c, p, s, 3);
    CHECK(test::max_abs_diff(a.image, b.image) == 0.0);
    CHECK(a.kept == b.kept);
  }

  TEST_CASE("spec validation") {
    const ModelConfig c = ModelConfig::tiny();
    GenSpec s = small_spec(CapsuleLayer::output, 2);
    CHECK_THROWS_AS(s.validate(c), ConfigError);
    s = small_spec(CapsuleLayer::hidden, 2);
    CHECK_NOTHROW(s.validate(c));
    s.keep_best = 5;
    try {
      s.validate(c);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "keep_best");
    }
    CHECK(parse_capsule_layer("hidden") == CapsuleLayer::hidden);
    CHECK_THROWS_AS(parse_capsule_layer("primary"), ConfigError);
  }
}
