#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stein/errors.hpp"
#include "stein/mlp.hpp"
#include "stein/optim.hpp"
#include "stein/particles.hpp"
#include "stein/tensor.hpp"
#include "stein/trace.hpp"

namespace stein {

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError(path + ": write failed");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_trace_csv(const MetricTrace& trace, const std::string& path) {
  write_text_file(path, trace.to_csv());
}

// ---------------------------------------------------------------------------
// Sample dumps: CSV for low-dim data, PGM tile grid for image-shaped data
// ---------------------------------------------------------------------------

struct ImageShape {
  std::size_t h = 0, w = 0;
};

inline std::string samples_to_csv(const ParticleSet& particles) {
  std::string out;
  for (std::size_t j = 0; j < particles.dim(); ++j) {
    if (j) out += ',';
    out += "dim_" + std::to_string(j);
  }
  out += '\n';
  for (std::size_t i = 0; i < particles.count(); ++i) {
    for (std::size_t j = 0; j < particles.dim(); ++j) {
      if (j) out += ',';
      out += MetricTrace::format(particles.positions.at(i, j));
    }
    out += '\n';
  }
  return out;
}

/// Binary PGM (P5, maxval 255) with samples tiled on a near-square grid.
/// Values map affinely from [0,1] to [0,255]; out-of-range pixels clamp and
/// are counted in a warning on the log stream.
inline void write_pgm_grid(const ParticleSet& particles, ImageShape shape,
                           const std::string& path, std::ostream& log = std::cerr) {
  if (shape.h * shape.w != particles.dim())
    throw std::invalid_argument("write_pgm_grid: image shape does not match sample dim");
  std::size_t n = particles.count();
  std::size_t grid_cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::size_t grid_rows = (n + grid_cols - 1) / grid_cols;
  std::size_t width = grid_cols * shape.w;
  std::size_t height = grid_rows * shape.h;
  std::vector<unsigned char> canvas(width * height, 0);

  std::size_t clamped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t tr = i / grid_cols, tc = i % grid_cols;
    for (std::size_t r = 0; r < shape.h; ++r)
      for (std::size_t c = 0; c < shape.w; ++c) {
        double v = particles.positions.at(i, r * shape.w + c) * 255.0;
        if (v < 0.0) {
          v = 0.0;
          ++clamped;
        } else if (v > 255.0) {
          v = 255.0;
          ++clamped;
        }
        canvas[(tr * shape.h + r) * width + (tc * shape.w + c)] =
            static_cast<unsigned char>(v + 0.5);
      }
  }
  if (clamped > 0)
    log << "write_pgm_grid: clamped " << clamped << " pixel(s) outside [0,1] in " << path
        << "\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(canvas.data()),
            static_cast<std::streamsize>(canvas.size()));
  if (!out) throw IoError(path + ": write failed");
}

inline void write_samples(const ParticleSet& particles, std::optional<ImageShape> shape,
                          const std::string& path, std::ostream& log = std::cerr) {
  if (shape) {
    write_pgm_grid(particles, *shape, path, log);
  } else {
    write_text_file(path, samples_to_csv(particles));
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary, bit-exact f64 round trip
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::map<std::string, Mlp> nets;
  std::map<std::string, AdamSnapshot> optimizers;
  std::map<std::string, double> scalars;
  std::map<std::string, std::string> strings;
};

namespace detail {

constexpr char kCheckpointMagic[4] = {'S', 'T', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw IoError(path + ": truncated checkpoint at byte offset " + std::to_string(pos));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline void put_tensor_data(std::string& out, const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(out, t[i]);
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  using namespace detail;
  std::string out;
  out.append(kCheckpointMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ck.nets.size() + ck.optimizers.size() +
                                          ck.scalars.size() + ck.strings.size()));
  for (const auto& [name, net] : ck.nets) {
    out.push_back(0);
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(net.layer_count()));
    for (std::size_t i = 0; i < net.layer_count(); ++i) {
      const Mlp::Layer& l = net.layer(i);
      put_u32(out, static_cast<std::uint32_t>(l.w.rows()));
      put_u32(out, static_cast<std::uint32_t>(l.w.cols()));
      out.push_back(static_cast<char>(l.act));
      out.push_back(l.has_bias() ? 1 : 0);
      put_tensor_data(out, l.w);
      if (l.has_bias()) put_tensor_data(out, l.b);
    }
  }
  for (const auto& [name, opt] : ck.optimizers) {
    out.push_back(1);
    put_str(out, name);
    put_f64(out, opt.lr);
    put_f64(out, opt.beta1);
    put_f64(out, opt.beta2);
    put_f64(out, opt.eps);
    put_u64(out, static_cast<std::uint64_t>(opt.t));
    put_u64(out, opt.m.size());
    put_tensor_data(out, opt.m);
    put_tensor_data(out, opt.v);
  }
  for (const auto& [name, v] : ck.scalars) {
    out.push_back(2);
    put_str(out, name);
    put_f64(out, v);
  }
  for (const auto& [name, s] : ck.strings) {
    out.push_back(3);
    put_str(out, name);
    put_str(out, s);
  }
  write_text_file(path, out);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  using namespace detail;
  std::string buf = read_text_file(path);
  Reader r{buf, 0, path};
  r.need(4);
  if (std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw IoError(path + ": not a checkpoint file (bad magic)");
  r.pos = 4;
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  std::uint32_t count = r.u32();

  Checkpoint ck;
  for (std::uint32_t rec = 0; rec < count; ++rec) {
    r.need(1);
    int kind = static_cast<unsigned char>(buf[r.pos++]);
    std::string name = r.str();
    switch (kind) {
      case 0: {
        std::uint32_t layers = r.u32();
        std::vector<Mlp::Layer> ls;
        for (std::uint32_t i = 0; i < layers; ++i) {
          std::uint32_t in = r.u32(), outd = r.u32();
          r.need(2);
          Act act = static_cast<Act>(static_cast<unsigned char>(buf[r.pos++]));
          bool has_bias = buf[r.pos++] != 0;
          Tensor w = Tensor::zeros({in, outd});
          for (std::size_t k = 0; k < w.size(); ++k) w[k] = r.f64();
          Tensor b;
          if (has_bias) {
            b = Tensor::zeros({outd});
            for (std::size_t k = 0; k < b.size(); ++k) b[k] = r.f64();
          }
          ls.push_back(Mlp::Layer{std::move(w), std::move(b), act});
        }
        ck.nets.emplace(name, Mlp(std::move(ls)));
        break;
      }
      case 1: {
        AdamSnapshot opt;
        opt.lr = r.f64();
        opt.beta1 = r.f64();
        opt.beta2 = r.f64();
        opt.eps = r.f64();
        opt.t = static_cast<std::int64_t>(r.u64());
        std::uint64_t dim = r.u64();
        opt.m = Tensor::zeros({dim});
        for (std::size_t k = 0; k < dim; ++k) opt.m[k] = r.f64();
        opt.v = Tensor::zeros({dim});
        for (std::size_t k = 0; k < dim; ++k) opt.v[k] = r.f64();
        ck.optimizers.emplace(name, std::move(opt));
        break;
      }
      case 2: {
        double v = r.f64();
        ck.scalars.emplace(name, v);
        break;
      }
      case 3: {
        ck.strings.emplace(name, r.str());
        break;
      }
      default:
        throw IoError(path + ": unknown checkpoint record kind " + std::to_string(kind));
    }
  }
  return ck;
}

}  // namespace stein
