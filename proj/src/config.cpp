#include "gcaps/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gcaps/io.hpp"

namespace gcaps {

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError(key, "cannot parse '" + text + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key, "expected true/false, got '" + text + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
    out.push_back(parse_number<T>(key, item));
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string s;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (k) s += ",";
    if constexpr (std::is_floating_point_v<T>)
      s += format_number(values[k]);
    else
      s += std::to_string(values[k]);
  }
  return s;
}

std::string flag(bool b) { return b ? "true" : "false"; }

template <typename F>
auto parse_named(const std::string& key, const std::string& text, F parse) {
  try {
    return parse(text);
  } catch (const ConfigError& e) {
    throw ConfigError(key, std::string(e.what()).substr(e.field().size() + 2));
  }
}

void set_run(RunConfig& c, const std::string& key, const std::string& v) {
  const std::string full = "run." + key;
  if (key == "seed") c.seed = parse_number<std::uint64_t>(full, v);
  else if (key == "out") c.out = v;
  else if (key == "threads") c.threads = parse_number<int>(full, v);
  else if (key == "activation_map_examples") c.activation_map_examples = parse_number<Index>(full, v);
  else throw ConfigError(full, "unknown key");
}

void set_data(DataConfig& d, const std::string& key, const std::string& v) {
  const std::string full = "data." + key;
  if (key == "root") d.root = v;
  else if (key == "train_images") d.train_images = v;
  else if (key == "train_labels") d.train_labels = v;
  else if (key == "test_images") d.test_images = v;
  else if (key == "test_labels") d.test_labels = v;
  else if (key == "name") d.name = v;
  else if (key == "eval_examples") d.eval_examples = parse_number<Index>(full, v);
  else if (key == "class_filter") {
    if (v == "none" || v.empty()) d.class_filter.reset();
    else d.class_filter = parse_number<int>(full, v);
  } else if (key == "resize_rows") d.resize_rows = parse_number<Index>(full, v);
  else if (key == "resize_cols") d.resize_cols = parse_number<Index>(full, v);
  else throw ConfigError(full, "unknown key");
}

void set_train(TrainSpec& t, const std::string& key, const std::string& v) {
  const std::string full = "train." + key;
  if (key == "steps") t.steps = parse_number<Index>(full, v);
  else if (key == "batch_size") t.batch_size = parse_number<Index>(full, v);
  else if (key == "train_subset") t.train_subset = parse_number<Index>(full, v);
  else if (key == "optimizer") {
    if (v == "adam") t.optimizer.kind = OptimizerKind::adam;
    else if (v == "sgd") t.optimizer.kind = OptimizerKind::sgd;
    else throw ConfigError(full, "expected adam or sgd, got '" + v + "'");
  } else if (key == "learning_rate") t.optimizer.learning_rate = parse_number<double>(full, v);
  else if (key == "beta1") t.optimizer.beta1 = parse_number<double>(full, v);
  else if (key == "beta2") t.optimizer.beta2 = parse_number<double>(full, v);
  else if (key == "adam_epsilon") t.optimizer.epsilon = parse_number<double>(full, v);
  else if (key == "adversarial") t.adversarial = parse_bool(full, v);
  else if (key == "attack") t.inner.kind = parse_named(full, v, parse_attack_kind);
  else if (key == "attack_epsilon") t.inner.epsilon = parse_number<double>(full, v);
  else if (key == "attack_step_size") t.inner.step_size = parse_number<double>(full, v);
  else if (key == "attack_steps") t.inner.steps = parse_number<int>(full, v);
  else if (key == "attack_random_start") t.inner.random_start = parse_bool(full, v);
  else if (key == "attack_loss") t.inner.loss = parse_named(full, v, parse_attack_loss);
  else if (key == "attack_warmup") t.attack_warmup = parse_number<Index>(full, v);
  else if (key == "eval_every") t.eval_every = parse_number<Index>(full, v);
  else if (key == "eval_examples") t.eval_examples = parse_number<Index>(full, v);
  else if (key == "eval_robust_examples") t.eval_robust_examples = parse_number<Index>(full, v);
  else if (key == "log_every") t.log_every = parse_number<Index>(full, v);
  else if (key == "snapshot_steps") t.snapshot_steps = parse_list<Index>(full, v);
  else throw ConfigError(full, "unknown key");
}

void set_attack(AttackRunConfig& a, const std::string& key, const std::string& v) {
  const std::string full = "attack." + key;
  if (key == "kind") a.kind = parse_named(full, v, parse_attack_kind);
  else if (key == "epsilons") a.epsilons = parse_list<double>(full, v);
  else if (key == "step_size") a.step_size = parse_number<double>(full, v);
  else if (key == "steps") a.steps = parse_number<int>(full, v);
  else if (key == "random_start") a.random_start = parse_bool(full, v);
  else if (key == "batch_size") a.batch_size = parse_number<Index>(full, v);
  else if (key == "loss") a.loss = parse_named(full, v, parse_attack_loss);
  else throw ConfigError(full, "unknown key");
}

void set_gen(GenRunConfig& g, const std::string& key, const std::string& v) {
  const std::string full = "gen." + key;
  if (key == "layer") g.base.layer = parse_capsule_layer(v);
  else if (key == "capsules") g.capsules = v == "all" ? std::vector<Index>{} : parse_list<Index>(full, v);
  else if (key == "step_size") g.base.step_size = parse_number<double>(full, v);
  else if (key == "lambda") g.base.lambda = parse_number<double>(full, v);
  else if (key == "iterations") g.base.iterations = parse_number<int>(full, v);
  else if (key == "restarts") g.base.restarts = parse_number<int>(full, v);
  else if (key == "keep_best") g.base.keep_best = parse_number<int>(full, v);
  else if (key == "penalty") {
    if (v == "auto") g.base.penalty.reset();
    else g.base.penalty = parse_bool(full, v);
  } else if (key == "save_restarts") g.save_restarts = parse_bool(full, v);
  else throw ConfigError(full, "unknown key");
}

}  // namespace

std::string DataConfig::resolve(const std::string& path) const {
  const std::filesystem::path p(path);
  if (p.is_absolute() || root.empty()) return path;
  return (std::filesystem::path(root) / p).string();
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  os << "[run]\n"
     << "seed=" << seed << "\n"
     << "out=" << out << "\n"
     << "threads=" << threads << "\n"
     << "activation_map_examples=" << activation_map_examples << "\n"
     << "\n[data]\n"
     << "root=" << data.root << "\n"
     << "train_images=" << data.train_images << "\n"
     << "train_labels=" << data.train_labels << "\n"
     << "test_images=" << data.test_images << "\n"
     << "test_labels=" << data.test_labels << "\n"
     << "name=" << data.name << "\n"
     << "eval_examples=" << data.eval_examples << "\n"
     << "class_filter=" << (data.class_filter ? std::to_string(*data.class_filter) : "none") << "\n"
     << "resize_rows=" << data.resize_rows << "\n"
     << "resize_cols=" << data.resize_cols << "\n"
     << "\n[model]\n"
     << model.to_text()
     << "\n[train]\n"
     << "steps=" << train.steps << "\n"
     << "batch_size=" << train.batch_size << "\n"
     << "train_subset=" << train.train_subset << "\n"
     << "optimizer=" << (train.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd") << "\n"
     << "learning_rate=" << format_number(train.optimizer.learning_rate) << "\n"
     << "beta1=" << format_number(train.optimizer.beta1) << "\n"
     << "beta2=" << format_number(train.optimizer.beta2) << "\n"
     << "adam_epsilon=" << format_number(train.optimizer.epsilon) << "\n"
     << "adversarial=" << flag(train.adversarial) << "\n"
     << "attack=" << to_string(train.inner.kind) << "\n"
     << "attack_epsilon=" << format_number(train.inner.epsilon) << "\n"
     << "attack_step_size=" << format_number(train.inner.step_size) << "\n"
     << "attack_steps=" << train.inner.steps << "\n"
     << "attack_random_start=" << flag(train.inner.random_start) << "\n"
     << "attack_loss=" << to_string(train.inner.loss) << "\n"
     << "attack_warmup=" << train.attack_warmup << "\n"
     << "eval_every=" << train.eval_every << "\n"
     << "eval_examples=" << train.eval_examples << "\n"
     << "eval_robust_examples=" << train.eval_robust_examples << "\n"
     << "log_every=" << train.log_every << "\n"
     << "snapshot_steps=" << join(train.snapshot_steps) << "\n"
     << "\n[attack]\n"
     << "kind=" << to_string(attack.kind) << "\n"
     << "epsilons=" << join(attack.epsilons) << "\n"
     << "step_size=" << format_number(attack.step_size) << "\n"
     << "steps=" << attack.steps << "\n"
     << "random_start=" << flag(attack.random_start) << "\n"
     << "batch_size=" << attack.batch_size << "\n"
     << "loss=" << to_string(attack.loss) << "\n"
     << "\n[gen]\n"
     << "layer=" << to_string(gen.base.layer) << "\n"
     << "capsules=" << (gen.capsules.empty() ? "all" : join(gen.capsules)) << "\n"
     << "step_size=" << format_number(gen.base.step_size) << "\n"
     << "lambda=" << format_number(gen.base.lambda) << "\n"
     << "iterations=" << gen.base.iterations << "\n"
     << "restarts=" << gen.base.restarts << "\n"
     << "keep_best=" << gen.base.keep_best << "\n"
     << "penalty=" << (gen.base.penalty ? flag(*gen.base.penalty) : "auto") << "\n"
     << "save_restarts=" << flag(gen.save_restarts) << "\n";
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", std::string("line ") + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c;
  if (const auto data_root = std::getenv("GCAPS_DATA_DIR")) c.data.root = data_root;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(section, "key outside of a section");
    if (section == "model") {
      if (const auto preset = body.get_optional<std::string>("preset")) c.model = ModelConfig::preset(*preset);
      for (const auto& [key, value] : body)
        if (key != "preset") c.model.set(key, value.data());
      continue;
    }
    for (const auto& [key, value] : body) {
      const std::string& v = value.data();
      if (section == "run") set_run(c, key, v);
      else if (section == "data") set_data(c.data, key, v);
      else if (section == "train") set_train(c.train, key, v);
      else if (section == "attack") set_attack(c.attack, key, v);
      else if (section == "gen") set_gen(c.gen, key, v);
      else throw ConfigError(section, "unknown section");
    }
  }
  c.propagate_seed();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", path + ": cannot open");
  std::ostringstream os;
  os << in.rdbuf();
  return parse(os.str());
}

void RunConfig::propagate_seed() {
  train.seed = seed;
  gen.base.seed = derive_seed(seed, "gen");
}

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("run.threads", "must be >= 1");
  if (out.empty()) throw ConfigError("run.out", "must not be empty");
  if (data.class_filter && (*data.class_filter < 0 || *data.class_filter >= model.output_caps))
    throw ConfigError("data.class_filter", "outside the class range");
  model.validate();
  train.validate();
  for (double e : attack.epsilons)
    if (e < 0.0) throw ConfigError("attack.epsilons", "must be >= 0");
  if (attack.batch_size < 1) throw ConfigError("attack.batch_size", "must be >= 1");
  for (Index cap : gen.capsules) {
    GenSpec s = gen.base;
    s.capsule = cap;
    s.validate(model);
  }
  if (gen.capsules.empty()) gen.base.validate(model);
  if (activation_map_examples < 1) throw ConfigError("run.activation_map_examples", "must be >= 1");
}

}  // namespace gcaps
