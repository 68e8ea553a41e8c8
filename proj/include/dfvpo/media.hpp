#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dfvpo/error.hpp"
#include "dfvpo/rng.hpp"

namespace dfvpo {

namespace fs = std::filesystem;

enum class Dtype : std::uint8_t { U8 = 0, F64 = 1 };

struct Shape {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t frame_size() const noexcept { return height * width * channels; }
  std::size_t size() const noexcept { return frames * frame_size(); }
  bool operator==(const Shape&) const = default;
};

/// Immutable T x H x W x C frame tensor. Samples are stored as doubles for
/// both dtypes; an U8 video holds integral values in [0, 255].
class Video {
 public:
  Video() = default;

  Video(Shape shape, Dtype dtype, std::vector<double> data, std::string id = {}, double frame_rate = 8.0)
      : shape_(shape), dtype_(dtype), data_(std::move(data)), id_(std::move(id)), frame_rate_(frame_rate) {
    require(shape_.frames >= 1 && shape_.height >= 1 && shape_.width >= 1, Errc::InvalidVideo,
            "video dimensions must be positive");
    require(shape_.channels == 1 || shape_.channels == 3, Errc::InvalidVideo, "channels must be 1 or 3");
    require(data_.size() == shape_.size(), Errc::InvalidVideo, "data length does not match shape");
    const double hi = dtype_ == Dtype::U8 ? 255.0 : 1.0;
    for (double v : data_) {
      require(v >= 0.0 && v <= hi, Errc::InvalidVideo, "sample outside the dtype range");
      if (dtype_ == Dtype::U8) require(v == std::floor(v), Errc::InvalidVideo, "non-integral u8 sample");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  Dtype dtype() const noexcept { return dtype_; }
  const std::string& id() const noexcept { return id_; }
  double frame_rate() const noexcept { return frame_rate_; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> frame(std::size_t t) const {
    return std::span<const double>(data_).subspan(t * shape_.frame_size(), shape_.frame_size());
  }
  double at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return data_[((t * shape_.height + y) * shape_.width + x) * shape_.channels + c];
  }

  /// Same metadata, new samples.
  Video with_data(std::vector<double> data) const { return Video(shape_, dtype_, std::move(data), id_, frame_rate_); }
  Video with_id(std::string id) const { return Video(shape_, dtype_, data_, std::move(id), frame_rate_); }

  bool same_samples(const Video& other) const { return shape_ == other.shape_ && data_ == other.data_; }

  bool operator==(const Video& o) const {
    return shape_ == o.shape_ && dtype_ == o.dtype_ && id_ == o.id_ && frame_rate_ == o.frame_rate_ &&
           data_ == o.data_;
  }

 private:
  Shape shape_{};
  Dtype dtype_ = Dtype::F64;
  std::vector<double> data_;
  std::string id_;
  double frame_rate_ = 8.0;
};

inline Video to_float(const Video& v) {
  if (v.dtype() == Dtype::F64) return v;
  std::vector<double> out(v.data().begin(), v.data().end());
  for (double& x : out) x /= 255.0;
  return Video(v.shape(), Dtype::F64, std::move(out), v.id(), v.frame_rate());
}

/// round(clamp(x, 0, 1) * 255), ties away from zero.
inline double quantize_u8(double x) { return std::round(std::clamp(x, 0.0, 1.0) * 255.0); }

inline Video to_u8(const Video& v) {
  if (v.dtype() == Dtype::U8) return v;
  std::vector<double> out(v.data().begin(), v.data().end());
  for (double& x : out) x = quantize_u8(x);
  return Video(v.shape(), Dtype::U8, std::move(out), v.id(), v.frame_rate());
}

// ---------------------------------------------------------------------------
// Moving-sprite scenes

enum class SpriteShape { Square, Disc };

struct SpriteSceneConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_frames = 16;
  std::size_t channels = 1;
  SpriteShape shape = SpriteShape::Square;
  std::size_t sprite_size = 4;
  std::array<int, 2> velocity{0, 1};  // (dy, dx) pixels per frame
  double background = 0.0;
  double foreground = 1.0;
  std::optional<std::array<int, 2>> start;  // top-left (y, x); drawn from the seed when absent
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const SpriteSceneConfig& c) {
  nlohmann::json j{{"height", c.height},
                   {"width", c.width},
                   {"num_frames", c.num_frames},
                   {"channels", c.channels},
                   {"shape", c.shape == SpriteShape::Square ? "square" : "disc"},
                   {"sprite_size", c.sprite_size},
                   {"velocity", c.velocity},
                   {"background", c.background},
                   {"foreground", c.foreground},
                   {"seed", c.seed}};
  j["start"] = c.start ? nlohmann::json(*c.start) : nlohmann::json(nullptr);
  return j;
}

/// FNV-1a over the canonical JSON text of the config.
inline std::string config_hash(const SpriteSceneConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
  return out;
}

namespace detail {

// Range of legal start coordinates along one axis so that start + t * v stays
// within [0, extent - size] for every t in [0, frames).
inline std::pair<long, long> legal_starts(std::size_t extent, std::size_t size, int v, std::size_t frames) {
  const long hi = static_cast<long>(extent) - static_cast<long>(size);
  const long travel = static_cast<long>(v) * static_cast<long>(frames - 1);
  return {std::max(0L, -travel), std::min(hi, hi - travel)};
}

}  // namespace detail

inline Video synth_moving_sprite(const SpriteSceneConfig& cfg) {
  require(cfg.height >= 1 && cfg.width >= 1 && cfg.num_frames >= 1, Errc::InvalidVideo, "empty scene");
  require(cfg.channels == 1 || cfg.channels == 3, Errc::InvalidVideo, "channels must be 1 or 3");
  require(cfg.sprite_size >= 1, Errc::ConfigOutOfBounds, "sprite_size must be positive");
  require(cfg.background >= 0.0 && cfg.background <= 1.0 && cfg.foreground >= 0.0 && cfg.foreground <= 1.0,
          Errc::InvalidVideo, "intensities must lie in [0, 1]");
  require(cfg.sprite_size <= cfg.height && cfg.sprite_size <= cfg.width, Errc::ConfigOutOfBounds,
          "sprite larger than the grid");

  const auto [y_lo, y_hi] = detail::legal_starts(cfg.height, cfg.sprite_size, cfg.velocity[0], cfg.num_frames);
  const auto [x_lo, x_hi] = detail::legal_starts(cfg.width, cfg.sprite_size, cfg.velocity[1], cfg.num_frames);

  rng::Stream s(cfg.seed, 0x5917E);
  long y0 = 0;
  long x0 = 0;
  if (cfg.start) {
    y0 = (*cfg.start)[0];
    x0 = (*cfg.start)[1];
    require(y0 >= y_lo && y0 <= y_hi && x0 >= x_lo && x0 <= x_hi, Errc::ConfigOutOfBounds,
            "sprite leaves the grid");
  } else {
    require(y_lo <= y_hi && x_lo <= x_hi, Errc::ConfigOutOfBounds, "no start position keeps the sprite inside");
    y0 = y_lo + static_cast<long>(s.index(static_cast<std::size_t>(y_hi - y_lo + 1)));
    x0 = x_lo + static_cast<long>(s.index(static_cast<std::size_t>(x_hi - x_lo + 1)));
  }

  std::array<double, 3> color{cfg.foreground, cfg.foreground, cfg.foreground};
  if (cfg.channels == 3) {
    for (double& c : color) c = cfg.foreground * (0.5 + 0.5 * s.uniform());
  }

  const Shape shape{cfg.num_frames, cfg.height, cfg.width, cfg.channels};
  std::vector<double> data(shape.size(), cfg.background);
  const double half = static_cast<double>(cfg.sprite_size) / 2.0;
  const double centre = (static_cast<double>(cfg.sprite_size) - 1.0) / 2.0;
  for (std::size_t t = 0; t < cfg.num_frames; ++t) {
    const long top = y0 + static_cast<long>(t) * cfg.velocity[0];
    const long left = x0 + static_cast<long>(t) * cfg.velocity[1];
    for (std::size_t dy = 0; dy < cfg.sprite_size; ++dy) {
      for (std::size_t dx = 0; dx < cfg.sprite_size; ++dx) {
        if (cfg.shape == SpriteShape::Disc) {
          const double ry = static_cast<double>(dy) - centre;
          const double rx = static_cast<double>(dx) - centre;
          if (ry * ry + rx * rx > half * half) continue;
        }
        const auto y = static_cast<std::size_t>(top) + dy;
        const auto x = static_cast<std::size_t>(left) + dx;
        for (std::size_t c = 0; c < cfg.channels; ++c)
          data[((t * cfg.height + y) * cfg.width + x) * cfg.channels + c] = color[c];
      }
    }
  }
  return Video(shape, Dtype::F64, std::move(data));
}

// ---------------------------------------------------------------------------
// VRAW container
//
//   "DFVP" | format_version u32 | T u32 | H u32 | W u32 | C u32 | dtype u8 | 7 pad
//   payload: row-major, frame-major; u8 bytes or little-endian f64
//   optional trailer: "META" | frame_rate f64 | id_len u32 | id bytes

inline constexpr std::uint32_t kVrawVersion = 1;
inline constexpr std::size_t kVrawHeaderSize = 32;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline std::uint32_t get_u32(std::string_view in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)]);
  return v;
}
inline std::uint64_t get_u64(std::string_view in, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[off + static_cast<std::size_t>(i)]);
  return v;
}
inline double get_f64(std::string_view in, std::size_t off) { return std::bit_cast<double>(get_u64(in, off)); }

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::IoError, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), Errc::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), Errc::IoError, "short write to " + path.string());
}

}  // namespace detail

inline std::string encode_vraw(const Video& v) {
  std::string out = "DFVP";
  const Shape& s = v.shape();
  detail::put_u32(out, kVrawVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(s.frames));
  detail::put_u32(out, static_cast<std::uint32_t>(s.height));
  detail::put_u32(out, static_cast<std::uint32_t>(s.width));
  detail::put_u32(out, static_cast<std::uint32_t>(s.channels));
  out.push_back(static_cast<char>(v.dtype()));
  out.append(7, '\0');
  if (v.dtype() == Dtype::U8) {
    for (double x : v.data()) out.push_back(static_cast<char>(static_cast<std::uint8_t>(x)));
  } else {
    for (double x : v.data()) detail::put_f64(out, x);
  }
  out += "META";
  detail::put_f64(out, v.frame_rate());
  detail::put_u32(out, static_cast<std::uint32_t>(v.id().size()));
  out += v.id();
  return out;
}

inline Video decode_vraw(std::string_view bytes, std::string fallback_id = {}) {
  require(bytes.size() >= 4 && bytes.substr(0, 4) == "DFVP", Errc::MagicMismatch, "not a VRAW container");
  require(bytes.size() >= kVrawHeaderSize, Errc::TruncatedPayload, "header shorter than 32 bytes");
  const std::uint32_t version = detail::get_u32(bytes, 4);
  require(version == kVrawVersion, Errc::InvalidVideo, "unsupported VRAW version " + std::to_string(version));
  const Shape shape{detail::get_u32(bytes, 8), detail::get_u32(bytes, 12), detail::get_u32(bytes, 16),
                    detail::get_u32(bytes, 20)};
  const auto dtype_byte = static_cast<std::uint8_t>(bytes[24]);
  require(dtype_byte <= 1, Errc::InvalidVideo, "unknown dtype tag");
  const auto dtype = static_cast<Dtype>(dtype_byte);
  const std::size_t elem = dtype == Dtype::U8 ? 1 : 8;
  const std::size_t payload = shape.size() * elem;
  require(bytes.size() >= kVrawHeaderSize + payload, Errc::TruncatedPayload, "payload shorter than header claims");

  std::vector<double> data(shape.size());
  const std::size_t base = kVrawHeaderSize;
  if (dtype == Dtype::U8) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<unsigned char>(bytes[base + i]);
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = detail::get_f64(bytes, base + 8 * i);
  }

  std::string id = std::move(fallback_id);
  double frame_rate = 8.0;
  std::size_t off = base + payload;
  if (bytes.size() >= off + 16 && bytes.substr(off, 4) == "META") {
    frame_rate = detail::get_f64(bytes, off + 4);
    const std::uint32_t n = detail::get_u32(bytes, off + 12);
    require(bytes.size() >= off + 16 + n, Errc::TruncatedPayload, "metadata trailer cut short");
    id = std::string(bytes.substr(off + 16, n));
  }
  return Video(shape, dtype, std::move(data), std::move(id), frame_rate);
}

// ---------------------------------------------------------------------------
// Netpbm (binary PGM / PPM, maxval 255)

struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};

inline std::string encode_pnm(const Raster& r) {
  std::string out = (r.channels == 1 ? "P5\n" : "P6\n") + std::to_string(r.width) + " " +
                    std::to_string(r.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(r.pixels.data()), r.pixels.size());
  return out;
}

inline Raster decode_pnm(std::string_view bytes, const std::string& what) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  const std::string magic = token();
  require(magic == "P5" || magic == "P6", Errc::MagicMismatch, what + " is not a binary PGM/PPM");
  Raster r;
  r.channels = magic == "P5" ? 1 : 3;
  try {
    r.width = std::stoul(token());
    r.height = std::stoul(token());
    require(std::stoul(token()) == 255, Errc::InvalidVideo, what + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    fail(Errc::InvalidVideo, what + ": malformed header");
  }
  ++pos;  // single whitespace byte before the raster
  const std::size_t n = r.height * r.width * r.channels;
  require(bytes.size() >= pos + n, Errc::TruncatedPayload, what + ": raster cut short");
  r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return r;
}

/// All frames laid side by side, quantized to 8 bits.
inline Raster frame_strip(const Video& v) {
  const Shape& s = v.shape();
  Raster r{s.height, s.width * s.frames, s.channels, {}};
  r.pixels.resize(r.height * r.width * r.channels);
  const bool is_float = v.dtype() == Dtype::F64;
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x)
        for (std::size_t c = 0; c < s.channels; ++c) {
          const double val = v.at(t, y, x, c);
          r.pixels[(y * r.width + t * s.width + x) * s.channels + c] =
              static_cast<std::uint8_t>(is_float ? quantize_u8(val) : val);
        }
  return r;
}

// ---------------------------------------------------------------------------
// File entry points

inline void save_video(const Video& v, const fs::path& path) {
  require(path.parent_path().empty() || fs::is_directory(path.parent_path()), Errc::IoError,
          "parent directory missing for " + path.string());
  detail::write_file(path, encode_vraw(v));
}

namespace detail {

inline Video load_image_directory(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_regular_file() && name.rfind("frame_", 0) == 0) files.push_back(entry.path());
  }
  require(!files.empty(), Errc::InvalidVideo, "no frame_ files in " + dir.string());
  std::sort(files.begin(), files.end());

  Shape shape{files.size(), 0, 0, 0};
  std::vector<double> data;
  for (std::size_t t = 0; t < files.size(); ++t) {
    const Raster r = decode_pnm(read_file(files[t]), files[t].filename().string());
    if (t == 0) {
      shape.height = r.height;
      shape.width = r.width;
      shape.channels = r.channels;
      data.reserve(shape.size());
    }
    require(r.height == shape.height && r.width == shape.width && r.channels == shape.channels,
            Errc::HeterogeneousFrames, files[t].filename().string() + " disagrees with frame 0 dimensions");
    data.insert(data.end(), r.pixels.begin(), r.pixels.end());
  }
  return Video(shape, Dtype::U8, std::move(data), dir.filename().string());
}

}  // namespace detail

/// Loads a VRAW file, or a directory of frame_%05d.{pgm,ppm} images as an
/// unsigned-8-bit video in lexical order.
inline Video load_video(const fs::path& path) {
  if (fs::is_directory(path)) return detail::load_image_directory(path);
  return decode_vraw(detail::read_file(path), path.stem().string());
}

}  // namespace dfvpo
