#pragma once

// Subcommands of the gcaps executable. Each takes a fully resolved RunConfig,
// writes its artifacts into config.out and returns the paths it wrote.

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gcaps/checkpoint.hpp"
#include "gcaps/config.hpp"
#include "gcaps/metrics.hpp"

namespace gcaps::cli {

struct CommandContext {
  RunConfig config;
  std::optional<std::string> checkpoint;           ///< input checkpoint
  std::optional<routing::Algorithm> routing;       ///< overrides the checkpoint's routing
  std::ostream* log = nullptr;                     ///< progress messages; null = silent
};

using Artifacts = std::vector<std::string>;

Artifacts train(CommandContext& ctx);
Artifacts eval(CommandContext& ctx);
Artifacts attack(CommandContext& ctx);
Artifacts gen_features(CommandContext& ctx);
Artifacts confusion(CommandContext& ctx);
Artifacts activation_map(CommandContext& ctx);

/// Routing records and predictions of one pass over `data`.
struct StructureReport {
  RoutingRecord hidden;
  RoutingRecord output;
  std::vector<int> predictions;
  double accuracy = 0.0;
};

/// Forward passes over the first `limit` examples (all when limit <= 0).
StructureReport evaluate_structure(const ModelConfig& config, const Parameters& params, const Dataset& data,
                                   Index limit = 0, Index batch_size = 100);

/// Test split after resize, optional class filter and the eval_examples limit.
Dataset load_eval_data(const RunConfig& config, std::optional<int> class_filter);

}  // namespace gcaps::cli
