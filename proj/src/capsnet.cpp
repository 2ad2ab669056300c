#include "gcaps/capsnet.hpp"

#include <cmath>
#include <sstream>

namespace gcaps {

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::reference() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.conv_channels = 32;
  c.primary_types = 8;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.input_height = 8;
  c.input_width = 8;
  c.conv_channels = 3;
  c.conv_kernel = 3;
  c.primary_types = 1;
  c.primary_dim = 4;
  c.primary_kernel = 3;
  c.primary_stride = 2;
  c.hidden_caps = 3;
  c.hidden_dim = 4;
  c.output_caps = 2;
  c.output_dim = 4;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "reference") return reference();
  if (name == "desk") return desk();
  if (name == "tiny") return tiny();
  throw ConfigError("preset", "unknown model preset '" + name + "'");
}

void ModelConfig::validate() const {
  auto positive = [](Index v, const char* field) {
    if (v < 1) throw ConfigError(field, "must be positive");
  };
  positive(input_channels, "input_channels");
  positive(input_height, "input_height");
  positive(input_width, "input_width");
  positive(conv_channels, "conv_channels");
  positive(conv_kernel, "conv_kernel");
  positive(conv_stride, "conv_stride");
  positive(primary_types, "primary_types");
  positive(primary_dim, "primary_dim");
  positive(primary_kernel, "primary_kernel");
  positive(primary_stride, "primary_stride");
  positive(hidden_dim, "hidden_dim");
  positive(output_dim, "output_dim");
  if (hidden_caps < 2) throw ConfigError("hidden_caps", "must be >= 2");
  if (output_caps < 2) throw ConfigError("output_caps", "must be >= 2");
  if (routing_iterations < 1) throw ConfigError("routing_iterations", "must be >= 1");
  if (conv_kernel > input_height || conv_kernel > input_width)
    throw ConfigError("conv_kernel", "larger than the input");
  if (primary_kernel > conv_out_h() || primary_kernel > conv_out_w())
    throw ConfigError("primary_kernel", "larger than the conv feature map");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "input_channels=" << input_channels << "\n"
     << "input_height=" << input_height << "\n"
     << "input_width=" << input_width << "\n"
     << "conv_channels=" << conv_channels << "\n"
     << "conv_kernel=" << conv_kernel << "\n"
     << "conv_stride=" << conv_stride << "\n"
     << "primary_types=" << primary_types << "\n"
     << "primary_dim=" << primary_dim << "\n"
     << "primary_kernel=" << primary_kernel << "\n"
     << "primary_stride=" << primary_stride << "\n"
     << "hidden_caps=" << hidden_caps << "\n"
     << "hidden_dim=" << hidden_dim << "\n"
     << "output_caps=" << output_caps << "\n"
     << "output_dim=" << output_dim << "\n"
     << "routing=" << routing::to_string(routing) << "\n"
     << "routing_iterations=" << routing_iterations << "\n";
  return os.str();
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  auto integer = [&](Index& field) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(value, &used);
    } catch (const std::exception&) {
      throw ConfigError(key, "expected an integer, got '" + value + "'");
    }
    if (used != value.size()) throw ConfigError(key, "expected an integer, got '" + value + "'");
    field = static_cast<Index>(v);
  };
  if (key == "input_channels") integer(input_channels);
  else if (key == "input_height") integer(input_height);
  else if (key == "input_width") integer(input_width);
  else if (key == "conv_channels") integer(conv_channels);
  else if (key == "conv_kernel") integer(conv_kernel);
  else if (key == "conv_stride") integer(conv_stride);
  else if (key == "primary_types") integer(primary_types);
  else if (key == "primary_dim") integer(primary_dim);
  else if (key == "primary_kernel") integer(primary_kernel);
  else if (key == "primary_stride") integer(primary_stride);
  else if (key == "hidden_caps") integer(hidden_caps);
  else if (key == "hidden_dim") integer(hidden_dim);
  else if (key == "output_caps") integer(output_caps);
  else if (key == "output_dim") integer(output_dim);
  else if (key == "routing") routing = routing::parse_algorithm(value);
  else if (key == "routing_iterations") {
    Index r = 0;
    integer(r);
    routing_iterations = static_cast<int>(r);
  } else {
    throw ConfigError(key, "unknown model key");
  }
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model", "malformed line '" + line + "'");
    c.set(line.substr(0, eq), line.substr(eq + 1));
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

const std::array<const char*, Parameters::kCount>& Parameters::names() {
  static const std::array<const char*, kCount> n{"conv_kernel",    "conv_bias",        "primary_kernel",
                                                 "primary_bias",   "hidden_transform", "output_transform"};
  return n;
}

std::array<Tensor*, Parameters::kCount> Parameters::tensors() {
  return {&conv_kernel, &conv_bias, &primary_kernel, &primary_bias, &hidden_transform, &output_transform};
}

std::array<const Tensor*, Parameters::kCount> Parameters::tensors() const {
  return {&conv_kernel, &conv_bias, &primary_kernel, &primary_bias, &hidden_transform, &output_transform};
}

bool Parameters::all_finite() const {
  for (const Tensor* t : tensors())
    if (!t->all_finite()) return false;
  return true;
}

namespace {

Tensor he_uniform(Shape shape, Index fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = uniform(rng, -limit, limit);
  return t;
}

Tensor gaussian(Shape shape, double sigma, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = sigma * normal(rng);
  return t;
}

}  // namespace

Parameters init_parameters(const ModelConfig& c, Rng& rng) {
  c.validate();
  Parameters p;
  p.conv_kernel = he_uniform({c.conv_channels, c.input_channels, c.conv_kernel, c.conv_kernel},
                             c.input_channels * c.conv_kernel * c.conv_kernel, rng);
  p.conv_bias = Tensor::zeros({c.conv_channels});
  p.primary_kernel = he_uniform({c.primary_types * c.primary_dim, c.conv_channels, c.primary_kernel, c.primary_kernel},
                                c.conv_channels * c.primary_kernel * c.primary_kernel, rng);
  p.primary_bias = Tensor::zeros({c.primary_types * c.primary_dim});
  p.hidden_transform = gaussian({c.primary_caps(), c.hidden_caps, c.hidden_dim, c.primary_dim}, 0.1, rng);
  p.output_transform = gaussian({c.hidden_caps, c.output_caps, c.output_dim, c.hidden_dim}, 0.1, rng);
  return p;
}

BoundParameters bind(Graph& graph, const Parameters& params, bool track) {
  BoundParameters b;
  const auto tensors = params.tensors();
  for (std::size_t k = 0; k < Parameters::kCount; ++k)
    b.vars[k] = track ? graph.variable(*tensors[k]) : graph.constant(*tensors[k]);
  return b;
}

// ---------------------------------------------------------------------------
// Forward

Var transform_predictions(Var lower, Var transform) {
  const Shape& sv = lower.shape();
  const Shape& sw = transform.shape();
  if (sv.size() != 3 || sw.size() != 4 || sv[1] != sw[0] || sv[2] != sw[3])
    throw ShapeError("transform_predictions", shape_string(sv) + " and " + shape_string(sw));
  const Index batch = sv[0], lower_n = sv[1], lower_dim = sv[2];
  const Index upper_n = sw[1], upper_dim = sw[2];
  Var w = reshape(transform, {1, lower_n, upper_n * upper_dim, lower_dim});
  Var v = reshape(lower, {batch, lower_n, lower_dim, 1});
  return reshape(matmul(w, v), {batch, lower_n, upper_n, upper_dim});
}

ForwardResult forward(Var images, const BoundParameters& p, const ModelConfig& c) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != c.input_channels || s[2] != c.input_height || s[3] != c.input_width)
    throw ShapeError("forward", shape_string(s) + " vs configured input [B," + std::to_string(c.input_channels) + "," +
                                    std::to_string(c.input_height) + "," + std::to_string(c.input_width) + "]");
  const Index batch = s[0];
  const Index gh = c.primary_grid_h(), gw = c.primary_grid_w();

  Var h = conv2d(images, p.conv_kernel(), c.conv_stride);
  h = relu(h + reshape(p.conv_bias(), {1, c.conv_channels, 1, 1}));
  Var pc = conv2d(h, p.primary_kernel(), c.primary_stride);
  pc = pc + reshape(p.primary_bias(), {1, c.primary_types * c.primary_dim, 1, 1});
  // [B, T*Dp, gh, gw] -> [B, T, gh, gw, Dp] -> [B, I, Dp]
  pc = permute(reshape(pc, {batch, c.primary_types, c.primary_dim, gh, gw}), {0, 1, 3, 4, 2});
  pc = reshape(pc, {batch, c.primary_caps(), c.primary_dim});

  ForwardResult out;
  out.primary = squash(pc, 2);

  out.hidden.lower_activations = out.primary;
  out.hidden.predictions = transform_predictions(out.primary, p.hidden_transform());
  out.hidden.routing = routing::route(c.routing, {out.primary, out.hidden.predictions, c.routing_iterations});
  Var hidden = out.hidden.routing.activations;

  out.output.lower_activations = hidden;
  out.output.predictions = transform_predictions(hidden, p.output_transform());
  out.output.routing = routing::route(c.routing, {hidden, out.output.predictions, c.routing_iterations});

  out.hidden_norms = reshape(l2_norm(hidden, 2), {batch, c.hidden_caps});
  out.output_norms = reshape(l2_norm(out.output.routing.activations, 2), {batch, c.output_caps});
  return out;
}

std::vector<int> predict(const Tensor& norms) {
  if (norms.rank() != 2) throw ShapeError("predict", shape_string(norms.shape()));
  const Index batch = norms.dim(0), classes = norms.dim(1);
  std::vector<int> out(static_cast<std::size_t>(batch));
  for (Index b = 0; b < batch; ++b) {
    Index best = 0;
    for (Index k = 1; k < classes; ++k)
      if (norms.at(b, k) > norms.at(b, best)) best = k;
    out[static_cast<std::size_t>(b)] = static_cast<int>(best);
  }
  return out;
}

Tensor output_norms(const ModelConfig& config, const Parameters& params, const Tensor& images) {
  Graph g;
  const BoundParameters p = bind(g, params, false);
  return forward(g.constant(images), p, config).output_norms.value();
}

}  // namespace gcaps
