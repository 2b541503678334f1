#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "stein/errors.hpp"
#include "stein/rng.hpp"
#include "stein/tensor.hpp"

namespace stein {

struct Dataset {
  Tensor samples;           // N×d
  std::vector<int> labels;  // empty when unlabeled
  std::size_t num_classes = 0;
  std::string provenance;

  bool has_labels() const { return !labels.empty(); }
  std::size_t count() const { return samples.rows(); }
  std::size_t dim() const { return samples.cols(); }
};

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

struct SynthSpec {
  enum class Kind { GaussianClusters, TwoMoons, Glyphs };
  Kind kind = Kind::GaussianClusters;
  std::size_t n = 1000;
  std::uint64_t seed = 0;

  // gaussian clusters
  std::vector<std::vector<double>> centers{{-2.0, 0.0}, {2.0, 0.0}};
  double sigma = 0.3;

  // two moons
  double moon_noise = 0.1;

  // 8×8 glyph patterns
  std::vector<double> class_freq;  // empty = uniform over 10 classes
  double glyph_noise = 0.1;
};

namespace detail {

// 8×8 digit-like binary patterns, one per class.
inline const std::array<std::array<const char*, 8>, 10>& glyph_bitmaps() {
  static const std::array<std::array<const char*, 8>, 10> maps = {{
      {"..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "..####..",
       "........"},
      {"...##...", "..###...", "...##...", "...##...", "...##...", "...##...", "..####..",
       "........"},
      {"..####..", ".#....#.", "......#.", ".....#..", "....#...", "..##....", ".######.",
       "........"},
      {"..####..", ".#....#.", "......#.", "...###..", "......#.", ".#....#.", "..####..",
       "........"},
      {"....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..",
       "........"},
      {".######.", ".#......", ".######.", "......#.", "......#.", ".#....#.", ".#####..",
       "........"},
      {"..####..", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
       "........"},
      {".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....",
       "........"},
      {".######.", ".#....#.", ".#....#.", ".######.", ".#....#.", ".#....#.", ".######.",
       "........"},
      {"..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", "..####..",
       "........"},
  }};
  return maps;
}

}  // namespace detail

/// Clean 8×8 glyph for one class, as a 64-vector in [0,1].
inline Tensor glyph_prototype(int cls) {
  const auto& rows = detail::glyph_bitmaps().at(static_cast<std::size_t>(cls));
  Tensor t = Tensor::zeros({64});
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) t[r * 8 + c] = rows[r][c] == '#' ? 1.0 : 0.0;
  return t;
}

inline Dataset gen_synthetic(const SynthSpec& spec) {
  if (spec.n == 0) throw std::invalid_argument("gen_synthetic: empty dataset requested");
  Rng rng(spec.seed);
  Dataset ds;

  switch (spec.kind) {
    case SynthSpec::Kind::GaussianClusters: {
      if (spec.centers.empty())
        throw std::invalid_argument("gen_synthetic: clusters need at least one center");
      std::size_t d = spec.centers[0].size();
      std::size_t k = spec.centers.size();
      ds.samples = Tensor::zeros({spec.n, d});
      ds.labels.resize(spec.n);
      ds.num_classes = k;
      std::vector<double> w(k, 1.0);
      for (std::size_t i = 0; i < spec.n; ++i) {
        std::size_t c = rng.categorical(w);
        ds.labels[i] = static_cast<int>(c);
        for (std::size_t j = 0; j < d; ++j)
          ds.samples.at(i, j) = spec.centers[c][j] + spec.sigma * rng.normal();
      }
      ds.provenance = "synthetic:gaussian_clusters";
      break;
    }
    case SynthSpec::Kind::TwoMoons: {
      ds.samples = Tensor::zeros({spec.n, 2});
      ds.labels.resize(spec.n);
      ds.num_classes = 2;
      for (std::size_t i = 0; i < spec.n; ++i) {
        int cls = rng.uniform01() < 0.5 ? 0 : 1;
        double t = M_PI * rng.uniform01();
        double x, y;
        if (cls == 0) {
          x = std::cos(t);
          y = std::sin(t);
        } else {
          x = 1.0 - std::cos(t);
          y = 0.5 - std::sin(t);
        }
        ds.samples.at(i, 0) = x + spec.moon_noise * rng.normal();
        ds.samples.at(i, 1) = y + spec.moon_noise * rng.normal();
        ds.labels[i] = cls;
      }
      ds.provenance = "synthetic:two_moons";
      break;
    }
    case SynthSpec::Kind::Glyphs: {
      std::vector<double> freq = spec.class_freq;
      if (freq.empty()) freq.assign(10, 0.1);
      if (freq.size() != 10)
        throw std::invalid_argument("gen_synthetic: glyph class_freq must have 10 entries");
      ds.samples = Tensor::zeros({spec.n, 64});
      ds.labels.resize(spec.n);
      ds.num_classes = 10;
      for (std::size_t i = 0; i < spec.n; ++i) {
        int cls = static_cast<int>(rng.categorical(freq));
        ds.labels[i] = cls;
        Tensor proto = glyph_prototype(cls);
        for (std::size_t j = 0; j < 64; ++j) {
          double v = proto[j] + spec.glyph_noise * rng.normal();
          ds.samples.at(i, j) = std::min(1.0, std::max(0.0, v));
        }
      }
      ds.provenance = "synthetic:glyphs";
      break;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX loader (big-endian; magic 0x00000803 for images, 0x00000801 for labels)
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& path,
                               std::size_t& offset) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4)
    throw IoError(path + ": truncated at byte offset " + std::to_string(offset));
  offset += 4;
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace detail

/// Loads IDX image (and optionally label) files. Pixels scale to [0,1]; a
/// positive `downsample_to` center-crops to a square and nearest-neighbor
/// samples to that side length.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path = "",
                        std::size_t downsample_to = 0) {
  std::ifstream in(images_path, std::ios::binary);
  if (!in) throw IoError(images_path + ": cannot open");
  std::size_t off = 0;
  std::uint32_t magic = detail::read_be32(in, images_path, off);
  if (magic != 0x00000803u)
    throw IoError(images_path + ": bad magic (expected 0x00000803 image file)");
  std::uint32_t count = detail::read_be32(in, images_path, off);
  std::uint32_t rows = detail::read_be32(in, images_path, off);
  std::uint32_t cols = detail::read_be32(in, images_path, off);

  std::vector<unsigned char> pix(static_cast<std::size_t>(rows) * cols);
  std::size_t side = downsample_to > 0 ? downsample_to : 0;
  std::size_t crop = std::min(rows, cols);
  std::size_t out_r = side > 0 ? side : rows;
  std::size_t out_c = side > 0 ? side : cols;

  Dataset ds;
  ds.samples = Tensor::zeros({count, out_r * out_c});
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
    if (static_cast<std::size_t>(in.gcount()) != pix.size())
      throw IoError(images_path + ": truncated at byte offset " +
                    std::to_string(off + static_cast<std::size_t>(in.gcount())));
    off += pix.size();
    if (side == 0) {
      for (std::size_t j = 0; j < pix.size(); ++j)
        ds.samples.at(i, j) = static_cast<double>(pix[j]) / 255.0;
    } else {
      std::size_t r0 = (rows - crop) / 2, c0 = (cols - crop) / 2;
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c) {
          std::size_t sr = r0 + (r * crop) / side;
          std::size_t sc = c0 + (c * crop) / side;
          ds.samples.at(i, r * side + c) =
              static_cast<double>(pix[sr * cols + sc]) / 255.0;
        }
    }
  }

  if (!labels_path.empty()) {
    std::ifstream lin(labels_path, std::ios::binary);
    if (!lin) throw IoError(labels_path + ": cannot open");
    std::size_t loff = 0;
    std::uint32_t lmagic = detail::read_be32(lin, labels_path, loff);
    if (lmagic != 0x00000801u)
      throw IoError(labels_path + ": bad magic (expected 0x00000801 label file)");
    std::uint32_t lcount = detail::read_be32(lin, labels_path, loff);
    if (lcount != count)
      throw IoError(labels_path + ": label count " + std::to_string(lcount) +
                    " does not match image count " + std::to_string(count));
    std::vector<unsigned char> lbl(count);
    lin.read(reinterpret_cast<char*>(lbl.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(lin.gcount()) != count)
      throw IoError(labels_path + ": truncated at byte offset " +
                    std::to_string(loff + static_cast<std::size_t>(lin.gcount())));
    ds.labels.assign(lbl.begin(), lbl.end());
    int maxl = 0;
    for (int l : ds.labels) maxl = std::max(maxl, l);
    ds.num_classes = static_cast<std::size_t>(maxl) + 1;
  }
  ds.provenance = "idx:" + images_path;
  return ds;
}

/// Writes a pair of IDX files (used by the round-trip tests and for
/// exporting synthetic sets in a standard container).
inline void write_idx(const Dataset& ds, std::size_t rows, std::size_t cols,
                      const std::string& images_path, const std::string& labels_path = "") {
  if (rows * cols != ds.dim()) throw std::invalid_argument("write_idx: shape mismatch");
  std::ofstream out(images_path, std::ios::binary);
  if (!out) throw IoError(images_path + ": cannot open for writing");
  auto be32 = [&out](std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
  };
  be32(0x00000803u);
  be32(static_cast<std::uint32_t>(ds.count()));
  be32(static_cast<std::uint32_t>(rows));
  be32(static_cast<std::uint32_t>(cols));
  for (std::size_t i = 0; i < ds.count(); ++i)
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      double v = std::min(1.0, std::max(0.0, ds.samples.at(i, j)));
      unsigned char b = static_cast<unsigned char>(v * 255.0 + 0.5);
      out.write(reinterpret_cast<char*>(&b), 1);
    }
  if (!labels_path.empty()) {
    std::ofstream lout(labels_path, std::ios::binary);
    if (!lout) throw IoError(labels_path + ": cannot open for writing");
    auto lbe32 = [&lout](std::uint32_t v) {
      unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v)};
      lout.write(reinterpret_cast<char*>(b), 4);
    };
    lbe32(0x00000801u);
    lbe32(static_cast<std::uint32_t>(ds.labels.size()));
    for (int l : ds.labels) {
      unsigned char b = static_cast<unsigned char>(l);
      lout.write(reinterpret_cast<char*>(&b), 1);
    }
  }
}

}  // namespace stein
