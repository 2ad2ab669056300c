#pragma once

// IDX dataset ingestion (MNIST, fashionMNIST and any other grayscale IDX
// pair), batching and deterministic shuffling.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gcaps/rng.hpp"
#include "gcaps/tensor.hpp"

namespace gcaps {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Images kept as raw bytes; batches are normalized to [0, 1] on assembly.
struct Dataset {
  Index rows = 0;
  Index cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
  Index image_size() const { return rows * cols; }
  double pixel(Index example, Index offset) const {
    return pixels[static_cast<std::size_t>(example * image_size() + offset)] / 255.0;
  }
};

struct LabeledBatch {
  Tensor images;  // [M, 1, rows, cols], values in [0, 1]
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(labels.size()); }
};

/// Reads a pair of big-endian IDX files; gzip-compressed inputs are detected
/// by their magic bytes. Throws FormatError on wrong magic, truncated payload
/// or mismatching counts.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Parses in-memory IDX content; load_idx is a thin wrapper around this.
Dataset parse_idx(const std::vector<std::uint8_t>& images, const std::vector<std::uint8_t>& labels);

/// Reads a whole file, transparently inflating gzip.
std::vector<std::uint8_t> read_file_bytes(const std::string& path);

/// Examples with the given indices, in that order.
LabeledBatch make_batch(const Dataset& data, const std::vector<Index>& indices);

/// First `count` examples (or all, if fewer).
Dataset head(const Dataset& data, Index count);

/// Examples whose label equals `label`.
Dataset filter_class(const Dataset& data, int label);

/// Nearest-neighbour resize for foreign datasets whose images are not the
/// configured size.
Dataset resize_nearest(const Dataset& data, Index rows, Index cols);

/// Endless stream of shuffled batches. Each epoch is a fresh permutation
/// drawn from the seed; the final batch of an epoch may be short.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, Index batch_size, std::uint64_t seed,
                std::optional<int> class_filter = std::nullopt);

  LabeledBatch next();
  /// Indices (into the source dataset) of the next batch without assembling it.
  std::vector<Index> next_indices();

  Index epoch() const { return epoch_; }

 private:
  void reshuffle();

  const Dataset* data_;
  Index batch_size_;
  std::vector<Index> pool_;
  std::vector<Index> order_;
  std::size_t cursor_ = 0;
  Index epoch_ = 0;
  Rng rng_;
};

}  // namespace gcaps
