#pragma once

#include <string>
#include <vector>

#include "gcaps/tensor.hpp"

namespace gcaps {

/// Writes `content` to `path` via a sibling temporary file and rename, so
/// readers never observe a partial artifact.
void write_file_atomic(const std::string& path, const std::string& content);

/// Minimal CSV builder; numbers are printed with round-trip precision.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  CsvTable& row();
  CsvTable& add(const std::string& cell);
  CsvTable& add(double value);
  CsvTable& add(long long value);
  CsvTable& add(int value) { return add(static_cast<long long>(value)); }
  CsvTable& add(long value) { return add(static_cast<long long>(value)); }

  std::string str() const;
  void save(const std::string& path) const { write_file_atomic(path, str()); }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Shortest decimal text that parses back to exactly `value`; NaN prints empty.
std::string format_number(double value);

/// 8-bit binary PGM (P5). `pixels` is [H, W] (or any tensor whose last two
/// extents are H, W); values are clamped to [lo, hi] and scaled to 0..255.
std::string encode_pgm(const Tensor& pixels, double lo = 0.0, double hi = 1.0);
void save_pgm(const std::string& path, const Tensor& pixels, double lo = 0.0, double hi = 1.0);

}  // namespace gcaps
