#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>

#include "gcaps/feature_gen.hpp"
#include "gcaps/io.hpp"

namespace gcaps::cli {

namespace fs = std::filesystem;

namespace {

class Progress {
 public:
  explicit Progress(std::ostream* os) : os_(os), start_(std::chrono::steady_clock::now()) {}

  template <typename... Parts>
  void operator()(const Parts&... parts) const {
    if (!os_) return;
    const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    *os_ << "[" << std::fixed << std::setprecision(1) << std::setw(7) << t << "s] " << std::defaultfloat << std::setprecision(6);
    (*os_ << ... << parts) << std::endl;
  }

 private:
  std::ostream* os_;
  std::chrono::steady_clock::time_point start_;
};

std::string out_path(const RunConfig& c, const std::string& name) { return (fs::path(c.out) / name).string(); }

std::string write_config(const RunConfig& c) {
  const std::string path = out_path(c, "config.ini");
  write_file_atomic(path, c.to_text());
  return path;
}

Dataset prepare(Dataset d, const DataConfig& cfg) {
  if (cfg.resize_rows > 0 && cfg.resize_cols > 0 && (d.rows != cfg.resize_rows || d.cols != cfg.resize_cols))
    d = resize_nearest(d, cfg.resize_rows, cfg.resize_cols);
  return d;
}

Dataset load_train(const RunConfig& c) {
  Dataset d = prepare(load_idx(c.data.resolve(c.data.train_images), c.data.resolve(c.data.train_labels)), c.data);
  if (c.train.train_subset > 0) d = head(d, c.train.train_subset);
  return d;
}

void check_input_shape(const ModelConfig& m, const Dataset& d) {
  if (d.rows != m.input_height || d.cols != m.input_width || m.input_channels != 1)
    throw ConfigError("data", "images are " + std::to_string(d.rows) + "x" + std::to_string(d.cols) +
                                  " but the model expects " + std::to_string(m.input_channels) + "x" +
                                  std::to_string(m.input_height) + "x" + std::to_string(m.input_width));
}

/// Loads the input checkpoint and makes its model config the run's model.
Checkpoint load_model(CommandContext& ctx) {
  if (!ctx.checkpoint) throw ConfigError("checkpoint", "this command needs --checkpoint");
  Checkpoint ck = load_checkpoint(*ctx.checkpoint);
  if (ctx.routing) ck.config.routing = *ctx.routing;
  ctx.config.model = ck.config;
  return ck;
}

std::string filter_label(std::optional<int> filter) { return filter ? std::to_string(*filter) : "all"; }

}  // namespace

Dataset load_eval_data(const RunConfig& c, std::optional<int> class_filter) {
  Dataset d = prepare(load_idx(c.data.resolve(c.data.test_images), c.data.resolve(c.data.test_labels)), c.data);
  if (class_filter) d = filter_class(d, *class_filter);
  if (c.data.eval_examples > 0) d = head(d, c.data.eval_examples);
  return d;
}

StructureReport evaluate_structure(const ModelConfig& config, const Parameters& params, const Dataset& data,
                                   Index limit, Index batch_size) {
  const Index n = limit > 0 ? std::min(limit, data.size()) : data.size();
  StructureReport r{RoutingRecord(config.primary_caps(), config.hidden_caps, false),
                    RoutingRecord(config.hidden_caps, config.output_caps, false),
                    {},
                    0.0};
  Index correct = 0;
  for (Index start = 0; start < n; start += batch_size) {
    std::vector<Index> ids;
    for (Index k = start; k < std::min(n, start + batch_size); ++k) ids.push_back(k);
    const LabeledBatch batch = make_batch(data, ids);
    Graph g;
    const ForwardResult f = forward(g.constant(batch.images), bind(g, params, false), config);
    r.hidden.append(f.hidden.routing.couplings.value(), f.hidden_norms.value());
    r.output.append(f.output.routing.couplings.value(), f.output_norms.value());
    const std::vector<int> pred = predict(f.output_norms.value());
    for (std::size_t k = 0; k < pred.size(); ++k) correct += pred[k] == batch.labels[k];
    r.predictions.insert(r.predictions.end(), pred.begin(), pred.end());
  }
  r.accuracy = n > 0 ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  return r;
}

Artifacts train(CommandContext& ctx) {
  RunConfig& c = ctx.config;
  if (ctx.routing) c.model.routing = *ctx.routing;
  c.validate();
  const Progress say(ctx.log);
  Artifacts written{write_config(c)};

  const Dataset train_data = load_train(c);
  check_input_shape(c.model, train_data);
  RunConfig eval_cfg = c;
  eval_cfg.data.eval_examples = 0;
  const Dataset test_data = load_eval_data(eval_cfg, std::nullopt);

  Parameters params;
  if (ctx.checkpoint) {
    params = load_checkpoint(*ctx.checkpoint, c.model).params;
    say("initialized from ", *ctx.checkpoint);
  } else {
    Rng rng = make_rng(c.seed, "init");
    params = init_parameters(c.model, rng);
  }
  say("training ", routing::to_string(c.model.routing), c.train.adversarial ? " (adversarial)" : "", " for ",
      c.train.steps, " steps on ", train_data.size(), " examples");

  Trainer trainer(c.model, std::move(params), c.train);
  CsvTable log({"step", "loss", "clean_acc", "robust_acc"});
  const std::string log_path = out_path(c, "run_log.csv");
  run_training(
      trainer, train_data, test_data,
      [&](const RunLogRow& row) {
        log.row().add(row.step).add(row.loss).add(row.clean_accuracy).add(row.robust_accuracy);
        log.save(log_path);
        if (!std::isnan(row.clean_accuracy))
          say("step ", row.step, " loss ", row.loss, " clean_acc ", row.clean_accuracy,
              std::isnan(row.robust_accuracy) ? "" : " robust_acc ",
              std::isnan(row.robust_accuracy) ? "" : format_number(row.robust_accuracy));
        else if (row.step % (c.train.log_every * 10) == 0)
          say("step ", row.step, " loss ", row.loss);
      },
      [&](const Trainer& t, Index step) {
        const Checkpoint ck{t.config(), t.parameters(), static_cast<std::uint64_t>(step), c.seed};
        const bool last = step == c.train.steps;
        const std::string path = out_path(c, last ? "checkpoint.gcaps" : "checkpoint_step" + std::to_string(step) + ".gcaps");
        save_checkpoint(path, ck);
        written.push_back(path);
      });
  log.save(log_path);
  written.push_back(log_path);
  return written;
}

Artifacts eval(CommandContext& ctx) {
  const Checkpoint ck = load_model(ctx);
  RunConfig& c = ctx.config;
  c.validate();
  const Progress say(ctx.log);
  Artifacts written{write_config(c)};
  const int single = c.data.class_filter.value_or(0);

  CsvTable table({"dataset", "algorithm", "class_filter", "T", "D", "accuracy", "parent_uniqueness", "T_output",
                  "D_output", "parent_uniqueness_output", "examples"});
  for (const std::optional<int> filter : {std::optional<int>{}, std::optional<int>{single}}) {
    const Dataset data = load_eval_data(c, filter);
    check_input_shape(c.model, data);
    const StructureReport r = evaluate_structure(c.model, ck.params, data);
    say(filter_label(filter), ": accuracy ", r.accuracy, " T ", t_score(r.hidden), " D ", d_score(r.hidden));
    table.row()
        .add(c.data.name)
        .add(routing::to_string(c.model.routing))
        .add(filter_label(filter))
        .add(t_score(r.hidden))
        .add(d_score(r.hidden))
        .add(r.accuracy)
        .add(parent_uniqueness(r.hidden))
        .add(t_score(r.output))
        .add(d_score(r.output))
        .add(parent_uniqueness(r.output))
        .add(data.size());
  }
  const std::string path = out_path(c, "metrics.csv");
  table.save(path);
  written.push_back(path);
  return written;
}

Artifacts attack(CommandContext& ctx) {
  const Checkpoint ck = load_model(ctx);
  RunConfig& c = ctx.config;
  c.validate();
  const Progress say(ctx.log);
  Artifacts written{write_config(c)};
  const Dataset data = load_eval_data(c, c.data.class_filter);
  check_input_shape(c.model, data);

  CsvTable table({"dataset", "algorithm", "attack", "epsilon", "accuracy", "examples", "max_linf", "within_bounds"});
  for (double eps : c.attack.epsilons) {
    const RobustnessResult r = robust_accuracy(c.model, ck.params, data, c.attack.spec(eps), derive_seed(c.seed, "attack"),
                                               0, c.attack.batch_size, c.threads);
    say(to_string(c.attack.kind), " eps ", eps, ": accuracy ", r.accuracy, " max_linf ", r.max_linf);
    if (!r.within_bounds) throw DomainError("attack", "adversarial example outside the epsilon ball or [0, 1]");
    table.row()
        .add(c.data.name)
        .add(routing::to_string(c.model.routing))
        .add(to_string(c.attack.kind))
        .add(eps)
        .add(r.accuracy)
        .add(r.examples)
        .add(r.max_linf)
        .add(std::string(r.within_bounds ? "true" : "false"));
  }
  const std::string path = out_path(c, "robustness.csv");
  table.save(path);
  written.push_back(path);
  return written;
}

Artifacts gen_features(CommandContext& ctx) {
  const Checkpoint ck = load_model(ctx);
  RunConfig& c = ctx.config;
  c.validate();
  const Progress say(ctx.log);
  Artifacts written{write_config(c)};

  std::vector<Index> capsules = c.gen.capsules;
  if (capsules.empty()) {
    const Index count = c.gen.base.layer == CapsuleLayer::hidden ? c.model.hidden_caps : c.model.output_caps;
    for (Index k = 0; k < count; ++k) capsules.push_back(k);
  }
  const std::string layer = to_string(c.gen.base.layer);
  CsvTable table({"layer", "capsule", "activation", "loss", "restarts", "keep_best", "restarts_improved"});
  CsvTable per_restart({"layer", "capsule", "restart", "initial_loss", "final_loss", "final_activation", "kept"});
  for (Index cap : capsules) {
    GenSpec spec = c.gen.base;
    spec.capsule = cap;
    spec.seed = derive_seed(c.seed, "gen", static_cast<std::uint64_t>(cap));
    const GenResult r = generate(c.model, ck.params, spec, c.threads);
    Index improved = 0;
    for (std::size_t k = 0; k < r.restarts.size(); ++k) {
      const RestartResult& rr = r.restarts[k];
      improved += rr.final_loss < rr.initial_loss;
      const bool kept = std::find(r.kept.begin(), r.kept.end(), static_cast<Index>(k)) != r.kept.end();
      per_restart.row()
          .add(layer)
          .add(cap)
          .add(static_cast<long long>(k))
          .add(rr.initial_loss)
          .add(rr.final_loss)
          .add(rr.final_activation)
          .add(std::string(kept ? "true" : "false"));
      if (c.gen.save_restarts) {
        const std::string p = out_path(c, "features/" + layer + "_" + std::to_string(cap) + "_restart" +
                                              std::to_string(k) + ".pgm");
        save_pgm(p, rr.image);
        written.push_back(p);
      }
    }
    const std::string p = out_path(c, "features/" + layer + "_" + std::to_string(cap) + ".pgm");
    save_pgm(p, r.image);
    written.push_back(p);
    say(layer, " capsule ", cap, ": activation ", r.activation, " loss ", r.loss, " improved ", improved, "/",
        r.restarts.size());
    table.row().add(layer).add(cap).add(r.activation).add(r.loss).add(spec.restarts).add(spec.keep_best).add(improved);
  }
  const std::string path = out_path(c, "features.csv");
  table.save(path);
  const std::string restarts_path = out_path(c, "features_restarts.csv");
  per_restart.save(restarts_path);
  written.push_back(path);
  written.push_back(restarts_path);
  return written;
}

Artifacts confusion(CommandContext& ctx) {
  const Checkpoint ck = load_model(ctx);
  RunConfig& c = ctx.config;
  c.validate();
  const Progress say(ctx.log);
  Artifacts written{write_config(c)};
  const Dataset data = load_eval_data(c, c.data.class_filter);
  check_input_shape(c.model, data);

  const Tensor norms = dataset_output_norms(c.model, ck.params, data);
  const std::vector<int> pred = predict(norms);
  const int classes = static_cast<int>(c.model.output_caps);
  const ConfusionMatrix cm = confusion_matrix(std::span<const int>(pred).first(data.labels.size()), data.labels, classes);
  say("accuracy ", accuracy(cm), " on ", data.size(), " examples");

  std::vector<std::string> header{"true_class"};
  for (int k = 0; k < classes; ++k) header.push_back("pred_" + std::to_string(k));
  CsvTable table(header);
  for (int t = 0; t < classes; ++t) {
    table.row().add(t);
    for (int p = 0; p < classes; ++p) table.add(static_cast<long long>(cm(t, p)));
  }
  const std::string path = out_path(c, "confusion.csv");
  table.save(path);
  written.push_back(path);
  return written;
}

Artifacts activation_map(CommandContext& ctx) {
  const Checkpoint ck = load_model(ctx);
  RunConfig& c = ctx.config;
  c.validate();
  const Progress say(ctx.log);
  Artifacts written{write_config(c)};
  RunConfig all = c;
  all.data.eval_examples = 0;
  const Dataset data = load_eval_data(all, c.data.class_filter);
  check_input_shape(c.model, data);

  BatchIterator shuffled(data, std::min(c.activation_map_examples, data.size()),
                         derive_seed(c.seed, "activation-map"));
  const LabeledBatch batch = shuffled.next();
  Graph g;
  const ForwardResult f = forward(g.constant(batch.images), bind(g, ck.params, false), c.model);
  const Tensor& norms = f.hidden_norms.value();  // [M, J]

  std::vector<std::string> header{"example", "label"};
  for (Index j = 0; j < c.model.hidden_caps; ++j) header.push_back("capsule_" + std::to_string(j));
  CsvTable table(header);
  for (Index m = 0; m < norms.dim(0); ++m) {
    table.row().add(m).add(batch.labels[static_cast<std::size_t>(m)]);
    for (Index j = 0; j < norms.dim(1); ++j) table.add(norms.at(m, j));
  }
  const std::string stem = "activation_map_" + filter_label(c.data.class_filter);
  const std::string pgm = out_path(c, stem + ".pgm");
  const std::string csv = out_path(c, stem + ".csv");
  save_pgm(pgm, norms);
  table.save(csv);
  say("activation map of ", norms.dim(0), " examples x ", norms.dim(1), " hidden capsules");
  written.push_back(pgm);
  written.push_back(csv);
  return written;
}

}  // namespace gcaps::cli
