#pragma once

// Run configuration: an INI file with sections [run], [data], [model],
// [train], [attack] and [gen]. Every key has a default;
// command-line flags are applied on top of the file.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gcaps/attacks.hpp"
#include "gcaps/capsnet.hpp"
#include "gcaps/feature_gen.hpp"
#include "gcaps/trainer.hpp"

namespace gcaps {

struct DataConfig {
  std::string root;  ///< prefix for relative paths; defaults to $GCAPS_DATA_DIR
  std::string train_images = "train-images-idx3-ubyte";
  std::string train_labels = "train-labels-idx1-ubyte";
  std::string test_images = "t10k-images-idx3-ubyte";
  std::string test_labels = "t10k-labels-idx1-ubyte";
  std::string name = "mnist";  ///< dataset label written into metric tables
  Index eval_examples = 0;     ///< test examples used by eval/attack/confusion; 0 = all
  std::optional<int> class_filter;
  Index resize_rows = 0;  ///< nearest-neighbour resize of foreign data; 0 = off
  Index resize_cols = 0;

  std::string resolve(const std::string& path) const;
};

struct AttackRunConfig {
  AttackKind kind = AttackKind::pgd;
  std::vector<double> epsilons{0.1, 0.3, 0.5};
  double step_size = 0.01;
  int steps = 40;
  bool random_start = true;
  Index batch_size = 50;
  AttackLoss loss = AttackLoss::cross_entropy;

  AttackSpec spec(double epsilon) const { return {kind, epsilon, step_size, steps, random_start, loss}; }
};

struct GenRunConfig {
  GenSpec base;  ///< layer, step size, lambda, iterations, restarts, keep-best, penalty
  std::vector<Index> capsules;  ///< empty = every capsule of the layer
  bool save_restarts = false;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "run";
  int threads = 1;
  DataConfig data;
  ModelConfig model = ModelConfig::desk();
  TrainSpec train;
  AttackRunConfig attack;
  GenRunConfig gen;
  Index activation_map_examples = 100;

  /// Canonical, fully resolved INI text. parse(to_text()) reproduces *this.
  std::string to_text() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);

  /// Pushes the root seed into the components that carry their own copy.
  void propagate_seed();
  void validate() const;
};

}  // namespace gcaps
