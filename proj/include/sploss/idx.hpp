#pragma once

// IDX (the MNIST container format): big-endian u32 magic 0x00000803 (u8 images,
// three dimensions) or 0x00000801 (u8 labels, one dimension), then one big-endian
// u32 per dimension, then the raw bytes. gzip-compressed files are detected by
// zlib and decompressed transparently.

#include <zlib.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sploss/datasets.hpp"
#include "sploss/error.hpp"

namespace sploss {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

class GzReader {
 public:
  explicit GzReader(const std::filesystem::path& path) : path_(path.string()) {
    file_ = gzopen(path_.c_str(), "rb");
    if (file_ == nullptr) throw ParseError("cannot open " + path_);
  }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;
  ~GzReader() { gzclose(file_); }

  void read(void* dst, std::size_t n) {
    auto* p = static_cast<unsigned char*>(dst);
    while (n > 0) {
      const unsigned chunk = n > (1u << 30) ? (1u << 30) : static_cast<unsigned>(n);
      const int got = gzread(file_, p, chunk);
      if (got <= 0) throw ParseError(path_ + ": truncated or corrupt file");
      p += got;
      n -= static_cast<std::size_t>(got);
    }
  }

  std::uint32_t be32() {
    std::array<unsigned char, 4> b{};
    read(b.data(), 4);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  }

  bool at_eof() {
    unsigned char c;
    return gzread(file_, &c, 1) == 0;
  }

 private:
  std::string path_;
  gzFile file_ = nullptr;
};

class GzWriter {
 public:
  GzWriter(const std::filesystem::path& path, bool compress) : path_(path.string()) {
    file_ = gzopen(path_.c_str(), compress ? "wb9" : "wbT");
    if (file_ == nullptr) throw Error("cannot open " + path_ + " for writing");
  }
  GzWriter(const GzWriter&) = delete;
  GzWriter& operator=(const GzWriter&) = delete;
  ~GzWriter() { gzclose(file_); }

  void write(const void* src, std::size_t n) {
    if (n > 0 && gzwrite(file_, src, static_cast<unsigned>(n)) != static_cast<int>(n))
      throw Error("failed writing " + path_);
  }
  void be32(std::uint32_t v) {
    const std::array<unsigned char, 4> b{static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                         static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    write(b.data(), 4);
  }

 private:
  std::string path_;
  gzFile file_ = nullptr;
};

inline bool wants_gzip(const std::filesystem::path& p) { return p.extension() == ".gz"; }

}  // namespace detail

/// Images scaled by 1/255 and flattened row-major; feature_range = (0, 1);
/// num_classes = max label + 1.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  detail::GzReader img(images_path);
  const std::uint32_t img_magic = img.be32();
  if (img_magic != kIdxImageMagic)
    throw ParseError(images_path.string() + ": bad IDX image magic");
  const std::uint32_t n = img.be32();
  const std::uint32_t h = img.be32();
  const std::uint32_t w = img.be32();
  if (n == 0 || h == 0 || w == 0) throw ParseError(images_path.string() + ": empty IDX image file");

  detail::GzReader lab(labels_path);
  if (lab.be32() != kIdxLabelMagic) throw ParseError(labels_path.string() + ": bad IDX label magic");
  const std::uint32_t n_labels = lab.be32();
  if (n_labels != n)
    throw ParseError("IDX count mismatch: " + std::to_string(n) + " images, " + std::to_string(n_labels) + " labels");

  const std::size_t d = std::size_t{h} * w;
  std::vector<unsigned char> pixels(std::size_t{n} * d);
  img.read(pixels.data(), pixels.size());
  if (!img.at_eof()) throw ParseError(images_path.string() + ": trailing bytes after images");
  std::vector<unsigned char> raw_labels(n);
  lab.read(raw_labels.data(), raw_labels.size());
  if (!lab.at_eof()) throw ParseError(labels_path.string() + ": trailing bytes after labels");

  Dataset ds;
  std::vector<double> values(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) values[i] = pixels[i] / 255.0;
  ds.features = Tensor(n, d, std::move(values));
  int max_label = 0;
  ds.labels.reserve(n);
  for (unsigned char l : raw_labels) {
    ds.labels.push_back(l);
    max_label = std::max(max_label, static_cast<int>(l));
  }
  ds.num_classes = max_label + 1;
  ds.feature_range.assign(d, {0.0, 1.0});
  return ds;
}

/// Writes features (expected in [0, 1], rounded to bytes) and labels as IDX;
/// gzip when the path ends in ".gz".
inline void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path, std::uint32_t height, std::uint32_t width) {
  if (std::size_t{height} * width != ds.dim()) throw DimensionError("write_idx: height*width != feature dim");
  {
    detail::GzWriter out(images_path, detail::wants_gzip(images_path));
    out.be32(kIdxImageMagic);
    out.be32(static_cast<std::uint32_t>(ds.size()));
    out.be32(height);
    out.be32(width);
    std::vector<unsigned char> bytes(ds.features.size());
    auto v = ds.features.data();
    for (std::size_t i = 0; i < bytes.size(); ++i) {
      const double s = std::clamp(v[i], 0.0, 1.0) * 255.0;
      bytes[i] = static_cast<unsigned char>(std::lround(s));
    }
    out.write(bytes.data(), bytes.size());
  }
  detail::GzWriter out(labels_path, detail::wants_gzip(labels_path));
  out.be32(kIdxLabelMagic);
  out.be32(static_cast<std::uint32_t>(ds.size()));
  std::vector<unsigned char> bytes(ds.labels.begin(), ds.labels.end());
  out.write(bytes.data(), bytes.size());
}

}  // namespace sploss
