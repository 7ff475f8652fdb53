#pragma once

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

#include "dsi/grid.hpp"
#include "dsi/rope_offsets.hpp"

namespace dsi {

// ----------------------------------------------------------------------------
// Patchification: grid <-> token sequence in row-major (f, y, x) order
// ----------------------------------------------------------------------------

struct GridDims {
  std::size_t frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t tokens() const noexcept { return frames * height * width; }
  bool operator==(const GridDims&) const = default;
};

struct GridIndex {
  std::size_t f = 0;
  std::size_t y = 0;
  std::size_t x = 0;
};

struct TokenSeq {
  Mat tokens;                   // tokens() x channels
  std::vector<GridIndex> index; // per-token grid index
};

inline TokenSeq patchify(const LatentGrid& grid) {
  grid.validate();
  TokenSeq seq;
  seq.tokens = Mat(grid.tokens(), grid.channels);
  seq.index.reserve(grid.tokens());
  std::size_t k = 0;
  for (std::size_t f = 0; f < grid.frames; ++f)
    for (std::size_t y = 0; y < grid.height; ++y)
      for (std::size_t x = 0; x < grid.width; ++x, ++k) {
        seq.index.push_back({f, y, x});
        for (std::size_t c = 0; c < grid.channels; ++c)
          seq.tokens(k, c) = grid.at(f, y, x, c);
      }
  return seq;
}

inline LatentGrid unpatchify(const Mat& tokens, GridDims dims, Role role) {
  if (tokens.rows != dims.tokens())
    throw InputError("unpatchify: token count does not match grid dims");
  LatentGrid g(dims.frames, dims.height, dims.width, tokens.cols, role);
  std::size_t k = 0;
  for (std::size_t f = 0; f < dims.frames; ++f)
    for (std::size_t y = 0; y < dims.height; ++y)
      for (std::size_t x = 0; x < dims.width; ++x, ++k)
        for (std::size_t c = 0; c < tokens.cols; ++c) g.at(f, y, x, c) = tokens(k, c);
  return g;
}

// ----------------------------------------------------------------------------
// SegmentLayout: ordered token segments of one stream
// ----------------------------------------------------------------------------

struct Segment {
  Role role;
  GridDims dims;
  RoleOffset offset;
  std::size_t begin = 0; // token span [begin, end)
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
};

struct SegmentLayout {
  Stream stream = Stream::Video;
  std::vector<Segment> segments;
  std::size_t total_tokens = 0;

  const Segment* find(Role r) const {
    for (const auto& s : segments)
      if (s.role == r) return &s;
    return nullptr;
  }

  const Segment& target() const {
    const Segment* s = find(target_role(stream));
    if (!s) throw InputError("layout: missing target segment");
    return *s;
  }
};

// Spans are assigned in a fixed canonical order regardless of input order:
// the target segment first, then conditions in the stream's role order
// (video: SourceVideo, TargetRefImage; image: SourceFirstFrame, RawRefImage).
// Offsets are computed against the target segment's width and frame count.
inline SegmentLayout build_layout(Stream stream,
                                  const std::vector<std::pair<Role, GridDims>>& parts) {
  bool seen[kRoleCount] = {};
  for (const auto& [role, dims] : parts) {
    if (!stream_accepts(stream, role))
      throw InputError(std::string("build_layout: role ") + role_name(role) +
                       " is not valid on the " + stream_name(stream) + " stream");
    if (seen[static_cast<std::uint32_t>(role)])
      throw InputError(std::string("build_layout: duplicate role ") + role_name(role));
    seen[static_cast<std::uint32_t>(role)] = true;
    if (dims.frames < 1 || dims.height < 1 || dims.width < 1)
      throw InputError("build_layout: segment dims must all be >= 1");
    if (is_image_role(role) && dims.frames != 1)
      throw InputError(std::string("build_layout: image role ") + role_name(role) +
                       " requires a single frame");
  }

  const Role target = target_role(stream);
  const auto find_part = [&](Role r) -> const GridDims* {
    for (const auto& [role, dims] : parts)
      if (role == r) return &dims;
    return nullptr;
  };
  const GridDims* target_dims = find_part(target);
  if (!target_dims)
    throw InputError(std::string("build_layout: layout requires exactly one ") +
                     role_name(target) + " segment");

  const std::size_t w = target_dims->width;
  const std::size_t n = target_dims->frames;

  const Role order_video[] = {Role::TargetVideoLatent, Role::SourceVideo, Role::TargetRefImage};
  const Role order_image[] = {Role::TargetImageLatent, Role::SourceFirstFrame, Role::RawRefImage};
  const Role* order = stream == Stream::Video ? order_video : order_image;

  SegmentLayout layout;
  layout.stream = stream;
  std::size_t cursor = 0;
  for (int i = 0; i < 3; ++i) {
    const GridDims* dims = find_part(order[i]);
    if (!dims) continue;
    Segment seg;
    seg.role = order[i];
    seg.dims = *dims;
    seg.offset = role_offset(order[i], stream, w, n);
    seg.begin = cursor;
    seg.end = cursor + dims->tokens();
    cursor = seg.end;
    layout.segments.push_back(seg);
  }
  layout.total_tokens = cursor;
  return layout;
}

}  // namespace dsi
