#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gcaps/checkpoint.hpp"
#include "gcaps/errors.hpp"
#include "gcaps/io.hpp"
#include "gcaps/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace gcaps;
using gcaps::test::random_tensor;

namespace {

// Synthetic two-class data: class 1 lights the left half, class 0 the right.
Dataset synthetic(Index count, std::uint64_t seed, Index side = 8) {
  Rng rng(seed);
  Dataset d;
  d.rows = d.cols = side;
  for (Index m = 0; m < count; ++m) {
    const int label = static_cast<int>(m % 2);
    d.labels.push_back(label);
    for (Index r = 0; r < side; ++r)
      for (Index c = 0; c < side; ++c) {
        const bool lit = label == 1 ? c < side / 2 : c >= side / 2;
        d.pixels.push_back(static_cast<std::uint8_t>(lit ? 150 + rng() % 100 : rng() % 60));
      }
  }
  return d;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gcaps_unit_" + name)).string();
}

std::vector<Index> iota_ids(Index n) {
  std::vector<Index> ids(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) ids[static_cast<std::size_t>(k)] = k;
  return ids;
}

}  // namespace

TEST_SUITE("margin loss") {
  TEST_CASE("spec examples") {
    const std::vector<double> inside{0.05, 0.95, 0.05};
    CHECK(margin_loss(inside, 1) == 0.0);
    const std::vector<double> zeros(10, 0.0);
    CHECK(margin_loss(zeros, 3) == doctest::Approx(0.81).epsilon(1e-15));
    const std::vector<double> half{0.5, 0.5};
    CHECK(margin_loss(half, 0) == doctest::Approx(0.24).epsilon(1e-15));
  }

  TEST_CASE("graph form agrees with the scalar form and is non-negative") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor norms = random_tensor({4, 5}, rng, 0.0, 0.999);
      std::vector<int> labels;
      for (int b = 0; b < 4; ++b) labels.push_back(static_cast<int>(rng() % 5));
      Graph g;
      const Tensor per_example = margin_loss(g.constant(norms), labels).value();
      REQUIRE(per_example.shape() == Shape{4, 1});
      for (Index b = 0; b < 4; ++b) {
        const std::vector<double> row(norms.data() + b * 5, norms.data() + b * 5 + 5);
        CHECK(per_example[b] == doctest::Approx(test::margin_oracle(row, labels[static_cast<std::size_t>(b)])));
        CHECK(per_example[b] >= 0.0);
      }
    }
  }

  TEST_CASE("label out of range is rejected") {
    Graph g;
    const std::vector<int> labels{2};
    CHECK_THROWS_AS(margin_loss(g.constant(Tensor::zeros({1, 2})), labels), DomainError);
  }
}

TEST_SUITE("norm cross-entropy") {
  TEST_CASE("hand examples") {
    const std::vector<double> half{0.5, 0.5};
    CHECK(norm_cross_entropy(half, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const std::vector<double> zeros(10, 0.0);
    CHECK(norm_cross_entropy(zeros, 7) == doctest::Approx(std::log(10.0)).epsilon(1e-15));
    const std::vector<double> sure{1.0, 0.0};
    CHECK(norm_cross_entropy(sure, 0) == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-12));
    CHECK(norm_cross_entropy(sure, 1) == doctest::Approx(10.0 + std::log1p(std::exp(-10.0))).epsilon(1e-12));
  }

  TEST_CASE("graph form agrees with the oracle and has a gradient everywhere") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
      const double factor = 1.0 + 29.0 * uniform01(rng);
      const Tensor norms = random_tensor({4, 5}, rng, 0.0, 0.999);
      std::vector<int> labels;
      for (int b = 0; b < 4; ++b) labels.push_back(static_cast<int>(rng() % 5));
      Graph g;
      Var n = g.variable(norms);
      Var per_example = norm_cross_entropy(n, labels, factor);
      REQUIRE(per_example.shape() == Shape{4, 1});
      g.backward(sum(per_example));
      const Tensor grad = g.grad(n);
      for (Index b = 0; b < 4; ++b) {
        const std::vector<double> row(norms.data() + b * 5, norms.data() + b * 5 + 5);
        const int y = labels[static_cast<std::size_t>(b)];
        CHECK(per_example.value()[b] == doctest::Approx(test::cross_entropy_oracle(row, y, factor)).epsilon(1e-12));
        CHECK(norm_cross_entropy(row, y, factor) == doctest::Approx(per_example.value()[b]).epsilon(1e-12));
        CHECK(grad.at(b, y) < 0.0);
      }
    }
  }

  TEST_CASE("gradient matches finite differences") {
    Rng rng(3);
    const std::vector<int> labels{2, 0, 1};
    const test::Expression f = [&labels](Graph&, const std::vector<Var>& v) {
      return norm_cross_entropy(v[0], labels, 10.0);
    };
    CHECK(test::gradient_error(f, {random_tensor({3, 4}, rng, 0.0, 1.0)}) < 1e-6);
  }

  TEST_CASE("label out of range is rejected") {
    Graph g;
    const std::vector<int> labels{-1};
    CHECK_THROWS_AS(norm_cross_entropy(g.constant(Tensor::zeros({1, 2})), labels), DomainError);
  }
}

TEST_SUITE("optimizer") {
  TEST_CASE("adam matches the bias-corrected update written out by hand") {
    ModelConfig c = ModelConfig::tiny();
    Rng rng(2);
    Parameters p = init_parameters(c, rng);
    const Parameters start = p;
    Gradients g1, g2;
    for (std::size_t k = 0; k < Parameters::kCount; ++k) {
      g1[k] = random_tensor(p.tensors()[k]->shape(), rng);
      g2[k] = random_tensor(p.tensors()[k]->shape(), rng);
    }
    Optimizer opt(OptimizerSpec{}, p);
    opt.apply(p, g1);
    opt.apply(p, g2);
    const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double worst = 0.0;
    for (std::size_t k = 0; k < Parameters::kCount; ++k)
      for (Index e = 0; e < p.tensors()[k]->size(); ++e) {
        double x = (*start.tensors()[k])[e], m = 0.0, v = 0.0;
        int t = 0;
        for (const Gradients* g : {&g1, &g2}) {
          ++t;
          const double gr = (*g)[k][e];
          m = b1 * m + (1 - b1) * gr;
          v = b2 * v + (1 - b2) * gr * gr;
          x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
        }
        worst = std::max(worst, std::abs(x - (*p.tensors()[k])[e]));
      }
    CHECK(worst < 1e-15);
  }

  TEST_CASE("sgd steps against the gradient") {
    Rng rng(3);
    Parameters p = init_parameters(ModelConfig::tiny(), rng);
    const Parameters start = p;
    Gradients g;
    for (std::size_t k = 0; k < Parameters::kCount; ++k) g[k] = Tensor::constant(p.tensors()[k]->shape(), 2.0);
    Optimizer opt(OptimizerSpec{OptimizerKind::sgd, 0.5}, p);
    opt.apply(p, g);
    CHECK(p.conv_kernel[0] == doctest::Approx(start.conv_kernel[0] - 1.0));
  }
}

TEST_SUITE("trainer") {
  TEST_CASE("tiny model learns the synthetic task") {
    const Dataset data = synthetic(64, 4);
    ModelConfig c = ModelConfig::tiny();
    Rng rng(5);
    TrainSpec spec;
    spec.steps = 150;
    spec.batch_size = 16;
    spec.optimizer.learning_rate = 0.01;
    spec.eval_every = 0;
    Trainer trainer(c, init_parameters(c, rng), spec);
    std::vector<double> losses;
    run_training(
        trainer, data, data, [&](const RunLogRow& row) { losses.push_back(row.loss); }, [](const Trainer&, Index) {});
    CHECK(trainer.steps_done() == 150);
    CHECK(losses.back() < losses.front());
    CHECK(evaluate_accuracy(c, trainer.parameters(), data) >= 0.9);
  }

  TEST_CASE("fixed seed gives a bit-identical loss trace on the desk preset") {
    const Dataset data = synthetic(48, 6, 28);
    auto trace = [&]() {
      ModelConfig c = ModelConfig::desk();
      Rng rng(7);
      TrainSpec spec;
      spec.steps = 10;
      spec.batch_size = 8;
      spec.log_every = 1;
      spec.eval_every = 5;
      spec.eval_examples = 16;
      spec.seed = 99;
      Trainer trainer(c, init_parameters(c, rng), spec);
      std::vector<double> out;
      run_training(
          trainer, data, data,
          [&](const RunLogRow& row) {
            out.push_back(row.loss);
            if (!std::isnan(row.clean_accuracy)) out.push_back(row.clean_accuracy);
          },
          [](const Trainer&, Index) {});
      return out;
    };
    const std::vector<double> a = trace(), b = trace();
    REQUIRE(a.size() == 12);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
  }

  TEST_CASE("adversarial step with epsilon 0 equals the clean step") {
    const Dataset data = synthetic(8, 8);
    const LabeledBatch batch = make_batch(data, iota_ids(8));
    ModelConfig c = ModelConfig::tiny();
    Rng rng(9);
    const Parameters p0 = init_parameters(c, rng);
    TrainSpec clean;
    TrainSpec adv = clean;
    adv.adversarial = true;
    adv.inner.epsilon = 0.0;
    adv.inner.steps = 3;
    Trainer a(c, p0, clean), b(c, p0, adv);
    CHECK(a.step(batch).loss == b.step(batch).loss);
    for (std::size_t k = 0; k < Parameters::kCount; ++k)
      CHECK(test::max_abs_diff(*a.parameters().tensors()[k], *b.parameters().tensors()[k]) == 0.0);
  }

  TEST_CASE("adversarial steps train on inputs inside the epsilon ball") {
    const Dataset data = synthetic(8, 10);
    const LabeledBatch batch = make_batch(data, iota_ids(8));
    ModelConfig c = ModelConfig::tiny();
    Rng rng(11);
    TrainSpec spec;
    spec.adversarial = true;
    spec.inner.steps = 5;
    Trainer t(c, init_parameters(c, rng), spec);
    for (int s = 0; s < 3; ++s) {
      const StepResult r = t.step(batch);
      CHECK(r.perturbation <= spec.inner.epsilon + 1e-9);
      CHECK(r.perturbation > 0.0);
    }
  }

  TEST_CASE("attack warm-up ramps the inner radius linearly") {
    const Dataset data = synthetic(8, 10);
    const LabeledBatch batch = make_batch(data, iota_ids(8));
    ModelConfig c = ModelConfig::tiny();
    Rng rng(11);
    TrainSpec spec;
    spec.adversarial = true;
    spec.inner.steps = 40;
    spec.inner.random_start = false;
    spec.attack_warmup = 4;
    Trainer t(c, init_parameters(c, rng), spec);
    for (int s = 0; s < 6; ++s) {
      const double radius = spec.inner.epsilon * std::min(1.0, (s + 1) / 4.0);
      const StepResult r = t.step(batch);
      CHECK(r.perturbation <= radius + 1e-12);
      CHECK(r.perturbation > radius - 0.01 - 1e-12);
    }
    spec.attack_warmup = -1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
  }

  TEST_CASE("non-finite loss aborts with a diagnostic") {
    const Dataset data = synthetic(4, 12);
    ModelConfig c = ModelConfig::tiny();
    Rng rng(13);
    Parameters p = init_parameters(c, rng);
    p.output_transform[0] = std::numeric_limits<double>::quiet_NaN();
    Trainer t(c, p, TrainSpec{});
    CHECK_THROWS_AS(t.step(make_batch(data, iota_ids(4))), TrainingError);
  }

  TEST_CASE("snapshots fire at the configured steps and at the end") {
    const Dataset data = synthetic(16, 14);
    ModelConfig c = ModelConfig::tiny();
    Rng rng(15);
    TrainSpec spec;
    spec.steps = 6;
    spec.batch_size = 4;
    spec.eval_every = 0;
    spec.snapshot_steps = {2, 4};
    Trainer t(c, init_parameters(c, rng), spec);
    std::vector<Index> snaps;
    run_training(t, data, data, [](const RunLogRow&) {}, [&](const Trainer&, Index s) { snaps.push_back(s); });
    CHECK(snaps == std::vector<Index>{2, 4, 6});
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("round trip gives bit-identical forward outputs") {
    for (const ModelConfig& c : {ModelConfig::tiny(), ModelConfig::desk()}) {
      Rng rng(16);
      Checkpoint ck{c, init_parameters(c, rng), 1234, 42};
      const std::string path = temp_path("roundtrip.gcaps");
      save_checkpoint(path, ck);
      const Checkpoint back = load_checkpoint(path, c);
      CHECK(back.step == 1234);
      CHECK(back.seed == 42);
      CHECK(back.config == c);
      const Index n = c.input_height == 8 ? 100 : 10;
      const Tensor x = random_tensor({n, 1, c.input_height, c.input_width}, rng, 0.0, 1.0);
      CHECK(test::max_abs_diff(output_norms(c, ck.params, x), output_norms(c, back.params, x)) == 0.0);
      std::filesystem::remove(path);
    }
  }

  TEST_CASE("header layout") {
    Rng rng(17);
    const ModelConfig c = ModelConfig::tiny();
    const std::string bytes = serialize_checkpoint({c, init_parameters(c, rng), 7, 9});
    CHECK(bytes.substr(0, 5) == "GCAPS");
    std::uint32_t version = 0, text_len = 0;
    std::memcpy(&version, bytes.data() + 5, 4);
    std::memcpy(&text_len, bytes.data() + 9, 4);
    CHECK(version == kCheckpointVersion);
    CHECK(bytes.substr(13, text_len) == c.to_text());
  }

  TEST_CASE("corrupt inputs are rejected") {
    Rng rng(18);
    const ModelConfig c = ModelConfig::tiny();
    const std::string bytes = serialize_checkpoint({c, init_parameters(c, rng), 1, 1});
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 20)), FormatError);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), FormatError);
    std::string bad_version = bytes;
    bad_version[5] = 9;
    CHECK_THROWS_AS(deserialize_checkpoint(bad_version), FormatError);
    CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(temp_path("does_not_exist.gcaps")), FormatError);
  }

  TEST_CASE("shape disagreeing with the stored config is rejected") {
    Rng rng(19);
    const ModelConfig c = ModelConfig::tiny();
    Parameters p = init_parameters(c, rng);
    p.output_transform = Tensor::zeros({3, 2, 4, 5});
    CHECK_THROWS_AS(deserialize_checkpoint(serialize_checkpoint({c, p, 0, 0})), FormatError);
  }

  TEST_CASE("config mismatch names the field") {
    Rng rng(20);
    const ModelConfig c = ModelConfig::tiny();
    ModelConfig other = c;
    other.hidden_caps = 5;
    try {
      deserialize_checkpoint(serialize_checkpoint({c, init_parameters(c, rng), 0, 0}), other);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.field() == "hidden_caps");
    }
  }

  TEST_CASE("fixture checkpoint classifies the fixture image as recorded") {
    const std::string dir = GCAPS_FIXTURE_DIR;
    const Checkpoint ck = load_checkpoint(dir + "/tiny.gcaps");
    std::ifstream golden(dir + "/tiny_golden.txt");
    REQUIRE(golden.good());
    int expected_class = -1;
    std::vector<double> expected_norms(static_cast<std::size_t>(ck.config.output_caps));
    golden >> expected_class;
    for (double& n : expected_norms) golden >> n;
    Tensor x({1, 1, ck.config.input_height, ck.config.input_width});
    for (Index k = 0; k < x.size(); ++k) x[k] = static_cast<double>((k * 7) % 11) / 10.0;
    const Tensor norms = output_norms(ck.config, ck.params, x);
    CHECK(predict(norms)[0] == expected_class);
    for (std::size_t k = 0; k < expected_norms.size(); ++k)
      CHECK(norms[static_cast<Index>(k)] == doctest::Approx(expected_norms[k]).epsilon(1e-12));
  }
}
