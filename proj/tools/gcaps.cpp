#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"
#include "gcaps/runtime.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
  std::optional<std::string> routing;
  bool adversarial = false;
  std::optional<double> epsilon;
  std::optional<int> class_filter;
  std::optional<int> threads;
  bool quiet = false;
};

void add_flags(CLI::App& cmd, Flags& f) {
  cmd.add_option("--config", f.config, "INI run configuration")->check(CLI::ExistingFile);
  cmd.add_option("--seed", f.seed, "Root seed for every random stream");
  cmd.add_option("--out", f.out, "Output directory");
  cmd.add_option("--checkpoint", f.checkpoint, "Input checkpoint (train: initial parameters)");
  cmd.add_option("--routing", f.routing, "Routing algorithm")->check(CLI::IsMember({"sda", "rba"}));
  cmd.add_flag("--adversarial", f.adversarial, "Train under PGD attack");
  cmd.add_option("--epsilon", f.epsilon, "Attack radius (train: inner attack; attack: single-value grid)");
  cmd.add_option("--class-filter", f.class_filter, "Restrict data to one class");
  cmd.add_option("--threads", f.threads, "Worker threads; 1 guarantees bit-reproducibility")->check(CLI::PositiveNumber);
  cmd.add_flag("--quiet", f.quiet, "No progress output");
}

gcaps::cli::CommandContext resolve(const Flags& f, const std::string& command) {
  gcaps::cli::CommandContext ctx;
  ctx.config = f.config.empty() ? gcaps::RunConfig::parse("") : gcaps::RunConfig::load(f.config);
  gcaps::RunConfig& c = ctx.config;
  if (f.seed) {
    c.seed = *f.seed;
    c.propagate_seed();
  }
  if (f.out) c.out = *f.out;
  if (f.threads) c.threads = *f.threads;
  if (f.class_filter) c.data.class_filter = *f.class_filter;
  if (f.adversarial) c.train.adversarial = true;
  if (f.epsilon) {
    if (command == "train") c.train.inner.epsilon = *f.epsilon;
    else c.attack.epsilons = {*f.epsilon};
  }
  if (f.routing) ctx.routing = gcaps::routing::parse_algorithm(*f.routing);
  ctx.checkpoint = f.checkpoint;
  ctx.log = f.quiet ? nullptr : &std::cerr;
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  gcaps::tune_allocator();
  CLI::App app{"Capsule networks with scaled-distance-agreement routing"};
  app.require_subcommand(1);

  using Command = gcaps::cli::Artifacts (*)(gcaps::cli::CommandContext&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"train", "Train a model (optionally adversarially); writes checkpoints and a run log", gcaps::cli::train},
      {"eval", "Accuracy, T-score, D-score and parent uniqueness; writes metrics.csv", gcaps::cli::eval},
      {"attack", "Robust accuracy over an epsilon grid; writes robustness.csv", gcaps::cli::attack},
      {"gen-features", "Activation-maximization images for capsules; writes PGMs and features.csv",
       gcaps::cli::gen_features},
      {"confusion", "Confusion matrix on the test split; writes confusion.csv", gcaps::cli::confusion},
      {"activation-map", "Hidden-capsule activations over a shuffled batch as a PGM heat map",
       gcaps::cli::activation_map},
  };
  std::vector<Flags> flags(commands.size());
  std::vector<CLI::App*> subs;
  for (std::size_t k = 0; k < commands.size(); ++k) {
    subs.push_back(app.add_subcommand(std::get<0>(commands[k]), std::get<1>(commands[k])));
    add_flags(*subs.back(), flags[k]);
  }
  CLI11_PARSE(app, argc, argv);

  for (std::size_t k = 0; k < commands.size(); ++k) {
    if (!subs[k]->parsed()) continue;
    try {
      gcaps::cli::CommandContext ctx = resolve(flags[k], std::get<0>(commands[k]));
      for (const std::string& path : std::get<2>(commands[k])(ctx)) std::cout << path << "\n";
      return 0;
    } catch (const gcaps::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 3;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
  }
  return 2;
}
