#include "gcaps/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "gcaps/io.hpp"

namespace gcaps {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void read_doubles(double* dst, std::size_t n, const char* what) {
    need(n * sizeof(double), what);
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

Parameters expected_shapes(const ModelConfig& config) {
  Rng rng(0);
  return init_parameters(config, rng);
}

void check_config(const ModelConfig& stored, const ModelConfig& expected) {
  if (stored == expected) return;
  std::istringstream a(stored.to_text()), b(expected.to_text());
  std::string la, lb;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la == lb) continue;
    const std::string field = la.substr(0, la.find('='));
    throw ConfigError(field, "checkpoint has '" + la + "', expected '" + lb + "'");
  }
  throw ConfigError("model", "checkpoint config differs");
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = c.config.to_text();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  put<std::uint64_t>(out, c.step);
  put<std::uint64_t>(out, c.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(Parameters::kCount));
  const auto tensors = c.params.tensors();
  for (std::size_t k = 0; k < Parameters::kCount; ++k) {
    const std::string name = Parameters::names()[k];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const Tensor& t = *tensors[k];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(double));
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::optional<ModelConfig>& expected) {
  Reader r(bytes);
  if (r.bytes(sizeof kCheckpointMagic, "magic") != std::string(kCheckpointMagic, sizeof kCheckpointMagic))
    throw FormatError("not a checkpoint: magic mismatch");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  const auto text_len = r.get<std::uint32_t>("config length");
  Checkpoint c;
  c.config = ModelConfig::from_text(r.bytes(text_len, "config"));
  if (expected) check_config(c.config, *expected);
  c.step = r.get<std::uint64_t>("step");
  c.seed = r.get<std::uint64_t>("seed");
  const auto count = r.get<std::uint32_t>("parameter count");
  if (count != Parameters::kCount)
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, expected " +
                      std::to_string(Parameters::kCount));
  const Parameters like = expected_shapes(c.config);
  const auto want = like.tensors();
  auto slots = c.params.tensors();
  for (std::size_t k = 0; k < Parameters::kCount; ++k) {
    const auto name_len = r.get<std::uint32_t>("parameter name length");
    const std::string name = r.bytes(name_len, "parameter name");
    if (name != Parameters::names()[k])
      throw FormatError("unexpected parameter '" + name + "', expected '" + Parameters::names()[k] + "'");
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("parameter '" + name + "': implausible rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<Index>(r.get<std::uint64_t>("extent")));
    if (shape != want[k]->shape())
      throw FormatError("parameter '" + name + "': shape " + shape_string(shape) + " does not match config " +
                        shape_string(want[k]->shape()));
    Tensor t(shape);
    r.read_doubles(t.data(), static_cast<std::size_t>(t.size()), "parameter values");
    *slots[k] = std::move(t);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open checkpoint");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace gcaps
