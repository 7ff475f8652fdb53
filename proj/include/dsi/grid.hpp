#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dsi/common.hpp"

namespace dsi {

// ----------------------------------------------------------------------------
// Roles and streams
// ----------------------------------------------------------------------------

// Role codes are part of the tensor file format; do not reorder.
enum class Role : std::uint32_t {
  SourceVideo = 0,
  TargetVideoLatent = 1,
  TargetRefImage = 2,
  RawRefImage = 3,
  SourceFirstFrame = 4,
  TargetImageLatent = 5,
};

inline constexpr std::uint32_t kRoleCount = 6;

enum class Stream { Video, Image };

inline bool is_image_role(Role r) {
  switch (r) {
    case Role::TargetRefImage:
    case Role::RawRefImage:
    case Role::SourceFirstFrame:
    case Role::TargetImageLatent:
      return true;
    default:
      return false;
  }
}

inline bool is_target_role(Role r) {
  return r == Role::TargetVideoLatent || r == Role::TargetImageLatent;
}

inline Role target_role(Stream s) {
  return s == Stream::Video ? Role::TargetVideoLatent : Role::TargetImageLatent;
}

// Roles a stream's token sequence may contain, in canonical condition order.
inline bool stream_accepts(Stream s, Role r) {
  if (s == Stream::Video)
    return r == Role::SourceVideo || r == Role::TargetVideoLatent || r == Role::TargetRefImage;
  return r == Role::TargetImageLatent || r == Role::SourceFirstFrame || r == Role::RawRefImage;
}

inline const char* role_name(Role r) {
  switch (r) {
    case Role::SourceVideo: return "SourceVideo";
    case Role::TargetVideoLatent: return "TargetVideoLatent";
    case Role::TargetRefImage: return "TargetRefImage";
    case Role::RawRefImage: return "RawRefImage";
    case Role::SourceFirstFrame: return "SourceFirstFrame";
    case Role::TargetImageLatent: return "TargetImageLatent";
  }
  return "?";
}

inline const char* stream_name(Stream s) { return s == Stream::Video ? "video" : "image"; }

// ----------------------------------------------------------------------------
// LatentGrid: a (frames x height x width x channels) latent volume with a role
// ----------------------------------------------------------------------------

struct LatentGrid {
  std::size_t frames = 0;   // F
  std::size_t height = 0;   // patch rows
  std::size_t width = 0;    // patch cols
  std::size_t channels = 0; // embedding dim, even
  Role role = Role::SourceVideo;
  std::vector<double> data; // row-major (f, y, x, c)

  LatentGrid() = default;
  LatentGrid(std::size_t f, std::size_t h, std::size_t w, std::size_t c, Role r)
      : frames(f), height(h), width(w), channels(c), role(r),
        data(f * h * w * c, 0.0) {
    validate_dims();
  }

  std::size_t tokens() const noexcept { return frames * height * width; }
  std::size_t values() const noexcept { return tokens() * channels; }

  double& at(std::size_t f, std::size_t y, std::size_t x, std::size_t c) {
    return data[((f * height + y) * width + x) * channels + c];
  }
  double at(std::size_t f, std::size_t y, std::size_t x, std::size_t c) const {
    return data[((f * height + y) * width + x) * channels + c];
  }

  void validate_dims() const {
    if (frames < 1 || height < 1 || width < 1)
      throw InputError("grid: frames/height/width must all be >= 1");
    if (channels < 2 || channels % 2 != 0)
      throw InputError("grid: channels must be even and >= 2");
    if (is_image_role(role) && frames != 1)
      throw InputError(std::string("grid: image role ") + role_name(role) +
                       " requires a single frame");
  }

  // checks the full set of invariants, including data
  void validate() const {
    validate_dims();
    if (data.size() != values()) throw InputError("grid: data length mismatch");
    for (double v : data)
      if (!std::isfinite(v)) throw InputError("grid: non-finite value");
  }

  // Digest over dims and values; deliberately role-free so clients that look
  // only at content (a VLM sees pixels, not tags) hash equal grids equally.
  std::uint64_t content_digest() const {
    std::uint64_t h = kFnvOffset;
    h = fnv1a(h, static_cast<std::uint64_t>(frames));
    h = fnv1a(h, static_cast<std::uint64_t>(height));
    h = fnv1a(h, static_cast<std::uint64_t>(width));
    h = fnv1a(h, static_cast<std::uint64_t>(channels));
    for (double v : data) h = fnv1a(h, v);
    return h;
  }

  LatentGrid with_role(Role r) const {
    LatentGrid g = *this;
    g.role = r;
    g.validate_dims();
    return g;
  }

  // first frame as a single-frame grid
  LatentGrid first_frame(Role r) const {
    LatentGrid g(1, height, width, channels, r);
    std::copy(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(height * width * channels),
              g.data.begin());
    return g;
  }
};

inline LatentGrid seeded_grid(std::size_t f, std::size_t h, std::size_t w, std::size_t c,
                              Role role, std::uint64_t seed, double scale = 1.0) {
  LatentGrid g(f, h, w, c, role);
  Rng rng(seed);
  for (double& v : g.data) v = scale * rng.normal();
  return g;
}

// ----------------------------------------------------------------------------
// Tensor file format: magic "DSI1", five u32 LE (F, h, w, d, role code),
// then F*h*w*d IEEE-754 f32 LE in row-major (f, y, x, c) order
// ----------------------------------------------------------------------------

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint32_t f32_bits(float f) {
  std::uint32_t b;
  __builtin_memcpy(&b, &f, 4);
  return b;
}

inline float f32_from_bits(std::uint32_t b) {
  float f;
  __builtin_memcpy(&f, &b, 4);
  return f;
}

}  // namespace detail

inline std::string encode_grid(const LatentGrid& g) {
  g.validate();
  std::string out;
  out.reserve(4 + 20 + g.values() * 4);
  out += "DSI1";
  detail::put_u32_le(out, static_cast<std::uint32_t>(g.frames));
  detail::put_u32_le(out, static_cast<std::uint32_t>(g.height));
  detail::put_u32_le(out, static_cast<std::uint32_t>(g.width));
  detail::put_u32_le(out, static_cast<std::uint32_t>(g.channels));
  detail::put_u32_le(out, static_cast<std::uint32_t>(g.role));
  for (double v : g.data) detail::put_u32_le(out, detail::f32_bits(static_cast<float>(v)));
  return out;
}

inline LatentGrid decode_grid(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 24 || bytes.compare(0, 4, "DSI1") != 0)
    throw InputError(origin + ": not a DSI1 tensor file");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 4;
  const std::uint32_t f = detail::get_u32_le(p);
  const std::uint32_t h = detail::get_u32_le(p + 4);
  const std::uint32_t w = detail::get_u32_le(p + 8);
  const std::uint32_t d = detail::get_u32_le(p + 12);
  const std::uint32_t role = detail::get_u32_le(p + 16);
  if (role >= kRoleCount) throw InputError(origin + ": unknown role code");
  const std::size_t n = static_cast<std::size_t>(f) * h * w * d;
  if (bytes.size() != 24 + n * 4) throw InputError(origin + ": payload size mismatch");
  LatentGrid g;
  g.frames = f;
  g.height = h;
  g.width = w;
  g.channels = d;
  g.role = static_cast<Role>(role);
  g.data.resize(n);
  const unsigned char* q = p + 20;
  for (std::size_t i = 0; i < n; ++i, q += 4)
    g.data[i] = static_cast<double>(detail::f32_from_bits(detail::get_u32_le(q)));
  g.validate();
  return g;
}

inline void write_grid(const std::filesystem::path& path, const LatentGrid& g) {
  const std::string bytes = encode_grid(g);
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw InputError("cannot open for writing: " + path.string());
  const std::size_t n = std::fwrite(bytes.data(), 1, bytes.size(), fp);
  std::fclose(fp);
  if (n != bytes.size()) throw InputError("short write: " + path.string());
}

inline LatentGrid read_grid(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw InputError("cannot open tensor file: " + path.string());
  std::string bytes;
  char buf[1 << 14];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, fp)) > 0) bytes.append(buf, n);
  std::fclose(fp);
  return decode_grid(bytes, path.string());
}

}  // namespace dsi
