#include "gcaps/data_io.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace gcaps {

namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

std::string hex(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += digits[(v >> shift) & 0xf];
  return s;
}

std::vector<std::uint8_t> inflate_gzip(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw FormatError(path + ": cannot open");
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.insert(out.end(), buf, buf + n);
  int err = 0;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) throw FormatError(path + ": corrupt gzip stream (" + msg + ")");
  return out;
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return inflate_gzip(path);
  return bytes;
}

Dataset parse_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels) {
  if (images.size() < 16) throw FormatError("image file: truncated header");
  if (labels.size() < 8) throw FormatError("label file: truncated header");
  const std::uint32_t image_magic = read_be32(images, 0);
  const std::uint32_t label_magic = read_be32(labels, 0);
  if (image_magic != kIdxImageMagic)
    throw FormatError("image file: wrong magic " + hex(image_magic) + ", expected " + hex(kIdxImageMagic));
  if (label_magic != kIdxLabelMagic)
    throw FormatError("label file: wrong magic " + hex(label_magic) + ", expected " + hex(kIdxLabelMagic));
  const std::uint64_t count = read_be32(images, 4);
  const std::uint64_t rows = read_be32(images, 8);
  const std::uint64_t cols = read_be32(images, 12);
  const std::uint64_t label_count = read_be32(labels, 4);
  if (count != label_count)
    throw FormatError("image/label count mismatch: " + std::to_string(count) + " vs " + std::to_string(label_count));
  if (rows == 0 || cols == 0) throw FormatError("image file: zero image extent");
  if (images.size() < 16 + count * rows * cols) throw FormatError("image file: truncated payload");
  if (labels.size() < 8 + count) throw FormatError("label file: truncated payload");

  Dataset d;
  d.rows = static_cast<Index>(rows);
  d.cols = static_cast<Index>(cols);
  d.pixels.assign(images.begin() + 16, images.begin() + static_cast<std::ptrdiff_t>(16 + count * rows * cols));
  d.labels.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) d.labels.push_back(labels[8 + i]);
  return d;
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  return parse_idx(read_file_bytes(images_path), read_file_bytes(labels_path));
}

LabeledBatch make_batch(const Dataset& data, const std::vector<Index>& indices) {
  LabeledBatch b;
  const Index n = static_cast<Index>(indices.size());
  if (n == 0) throw ShapeError("make_batch", "empty index list");
  b.images = Tensor({n, 1, data.rows, data.cols});
  const Index sz = data.image_size();
  for (Index k = 0; k < n; ++k) {
    const Index src = indices[static_cast<std::size_t>(k)];
    for (Index p = 0; p < sz; ++p) b.images[k * sz + p] = data.pixel(src, p);
    b.labels.push_back(data.labels[static_cast<std::size_t>(src)]);
  }
  return b;
}

Dataset head(const Dataset& data, Index count) {
  Dataset d;
  d.rows = data.rows;
  d.cols = data.cols;
  count = std::min(count, data.size());
  d.pixels.assign(data.pixels.begin(), data.pixels.begin() + count * data.image_size());
  d.labels.assign(data.labels.begin(), data.labels.begin() + count);
  return d;
}

Dataset filter_class(const Dataset& data, int label) {
  Dataset d;
  d.rows = data.rows;
  d.cols = data.cols;
  const Index sz = data.image_size();
  for (Index i = 0; i < data.size(); ++i) {
    if (data.labels[static_cast<std::size_t>(i)] != label) continue;
    d.pixels.insert(d.pixels.end(), data.pixels.begin() + i * sz, data.pixels.begin() + (i + 1) * sz);
    d.labels.push_back(label);
  }
  return d;
}

Dataset resize_nearest(const Dataset& data, Index rows, Index cols) {
  if (rows < 1 || cols < 1) throw ShapeError("resize_nearest", "target extent must be positive");
  Dataset d;
  d.rows = rows;
  d.cols = cols;
  d.labels = data.labels;
  d.pixels.resize(static_cast<std::size_t>(data.size() * rows * cols));
  for (Index i = 0; i < data.size(); ++i)
    for (Index y = 0; y < rows; ++y)
      for (Index x = 0; x < cols; ++x) {
        const Index sy = y * data.rows / rows, sx = x * data.cols / cols;
        d.pixels[static_cast<std::size_t>((i * rows + y) * cols + x)] =
            data.pixels[static_cast<std::size_t>(i * data.image_size() + sy * data.cols + sx)];
      }
  return d;
}

BatchIterator::BatchIterator(const Dataset& data, Index batch_size, std::uint64_t seed, std::optional<int> class_filter)
    : data_(&data), batch_size_(batch_size), rng_(seed) {
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  for (Index i = 0; i < data.size(); ++i)
    if (!class_filter || data.labels[static_cast<std::size_t>(i)] == *class_filter) pool_.push_back(i);
  if (pool_.empty()) throw ConfigError("class_filter", "no examples left after filtering");
  reshuffle();
  epoch_ = 0;
}

void BatchIterator::reshuffle() {
  order_ = pool_;
  // Fisher-Yates with the portable 64-bit engine (std::shuffle is
  // implementation-defined).
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng_() % i);
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
  ++epoch_;
}

std::vector<Index> BatchIterator::next_indices() {
  if (cursor_ >= order_.size()) reshuffle();
  const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  std::vector<Index> idx(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                         order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return idx;
}

LabeledBatch BatchIterator::next() { return make_batch(*data_, next_indices()); }

}  // namespace gcaps
