#include "gcaps/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace gcaps {

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(tmp.string() + ": cannot open for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw Error(tmp.string() + ": write failed");
  }
  fs::rename(tmp, target);
}

std::string format_number(double value) {
  if (std::isnan(value)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

CsvTable::CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

CsvTable& CsvTable::row() {
  rows_.emplace_back();
  return *this;
}

CsvTable& CsvTable::add(const std::string& cell) {
  if (rows_.empty()) rows_.emplace_back();
  rows_.back().push_back(cell);
  return *this;
}

CsvTable& CsvTable::add(double value) { return add(format_number(value)); }

CsvTable& CsvTable::add(long long value) { return add(std::to_string(value)); }

std::string CsvTable::str() const {
  auto join = [](const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k) line += ',';
      line += cells[k];
    }
    return line + "\n";
  };
  std::string out = join(header_);
  for (const auto& r : rows_) out += join(r);
  return out;
}

std::string encode_pgm(const Tensor& pixels, double lo, double hi) {
  if (pixels.rank() < 2) throw ShapeError("encode_pgm", shape_string(pixels.shape()));
  const Index h = pixels.dim(pixels.rank() - 2), w = pixels.dim(pixels.rank() - 1);
  if (pixels.size() != h * w) throw ShapeError("encode_pgm", "expected a single image, got " + shape_string(pixels.shape()));
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (Index k = 0; k < h * w; ++k) {
    const double v = std::clamp((pixels[k] - lo) / span, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  return out;
}

void save_pgm(const std::string& path, const Tensor& pixels, double lo, double hi) {
  write_file_atomic(path, encode_pgm(pixels, lo, hi));
}

}  // namespace gcaps
