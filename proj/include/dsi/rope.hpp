#pragma once

#include <cmath>
#include <vector>

#include "dsi/layout.hpp"
#include "dsi/rope_offsets.hpp"

namespace dsi {

// Per-token rotary coordinate on the (frame, width, height) axes.
struct TokenCoord {
  long long f = 0;
  long long w = 0;
  long long h = 0;

  bool operator==(const TokenCoord&) const = default;
};

// Multi-axis rotary configuration. The head dimension is carved into three
// even blocks rotated by the frame, height, and width coordinates in that
// order; within a block, pair i turns at theta_i = base^(-2i/block_dim).
struct RopeConfig {
  std::size_t head_dim = 64;
  double base = 10000.0;
  std::size_t axis_f = 32;
  std::size_t axis_h = 16;
  std::size_t axis_w = 16;

  void validate() const {
    if (axis_f + axis_h + axis_w != head_dim)
      throw InputError("rope: axis split must sum to head_dim");
    for (std::size_t a : {axis_f, axis_h, axis_w})
      if (a < 2 || a % 2 != 0) throw InputError("rope: each axis block must be even and >= 2");
  }

  static RopeConfig for_head_dim(std::size_t head_dim, double base = 10000.0) {
    if (head_dim % 4 != 0 || head_dim < 8)
      throw InputError("rope: default axis split needs head_dim divisible by 4 and >= 8");
    RopeConfig cfg;
    cfg.head_dim = head_dim;
    cfg.base = base;
    cfg.axis_f = head_dim / 2;
    cfg.axis_h = head_dim / 4;
    cfg.axis_w = head_dim / 4;
    return cfg;
  }
};

// Token at grid index (f, y, x) in a segment with offset (dF, dW, dH) lands
// at coordinate (f + dF, x + dW, y + dH).
inline std::vector<TokenCoord> assign_coordinates(const SegmentLayout& layout) {
  std::vector<TokenCoord> coords(layout.total_tokens);
  for (const Segment& seg : layout.segments) {
    std::size_t k = seg.begin;
    for (std::size_t f = 0; f < seg.dims.frames; ++f)
      for (std::size_t y = 0; y < seg.dims.height; ++y)
        for (std::size_t x = 0; x < seg.dims.width; ++x, ++k)
          coords[k] = {static_cast<long long>(f) + seg.offset.df,
                       static_cast<long long>(x) + seg.offset.dw,
                       static_cast<long long>(y) + seg.offset.dh};
  }
  return coords;
}

namespace detail {

// Frame-append baseline used by the fulldit_rope ablation arm: conditions are
// treated as extra frames continuing the target's frame axis, with no width
// or height separation. Not part of the public surface.
inline std::vector<TokenCoord> assign_coordinates_fulldit(const SegmentLayout& layout) {
  std::vector<TokenCoord> coords(layout.total_tokens);
  long long running_f = static_cast<long long>(layout.target().dims.frames);
  for (const Segment& seg : layout.segments) {
    const bool is_target = is_target_role(seg.role);
    const long long df = is_target ? 0 : running_f;
    std::size_t k = seg.begin;
    for (std::size_t f = 0; f < seg.dims.frames; ++f)
      for (std::size_t y = 0; y < seg.dims.height; ++y)
        for (std::size_t x = 0; x < seg.dims.width; ++x, ++k)
          coords[k] = {static_cast<long long>(f) + df, static_cast<long long>(x),
                       static_cast<long long>(y)};
    if (!is_target) running_f += static_cast<long long>(seg.dims.frames);
  }
  return coords;
}

// Rotates one axis block of every row in place. `sign` of -1 applies the
// inverse rotation (used by the autodiff backward pass).
inline void rotate_block(Mat& m, const std::vector<TokenCoord>& coords, std::size_t col0,
                         std::size_t block_dim, double base, int axis, double sign) {
  const std::size_t pairs = block_dim / 2;
  for (std::size_t i = 0; i < pairs; ++i) {
    const double theta =
        std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(block_dim));
    for (std::size_t r = 0; r < m.rows; ++r) {
      const TokenCoord& c = coords[r];
      const long long pos = axis == 0 ? c.f : (axis == 1 ? c.h : c.w);
      const double angle = sign * static_cast<double>(pos) * theta;
      const double ca = std::cos(angle);
      const double sa = std::sin(angle);
      const std::size_t j = col0 + 2 * i;
      const double a = m(r, j);
      const double b = m(r, j + 1);
      m(r, j) = a * ca - b * sa;
      m(r, j + 1) = a * sa + b * ca;
    }
  }
}

inline void rope_rotate_inplace(Mat& m, const std::vector<TokenCoord>& coords,
                                const RopeConfig& cfg, bool inverse = false) {
  cfg.validate();
  if (m.cols != cfg.head_dim) throw InputError("rope: token dim does not match head_dim");
  if (coords.size() != m.rows) throw InputError("rope: coordinate count mismatch");
  const double sign = inverse ? -1.0 : 1.0;
  rotate_block(m, coords, 0, cfg.axis_f, cfg.base, 0, sign);
  rotate_block(m, coords, cfg.axis_f, cfg.axis_h, cfg.base, 1, sign);
  rotate_block(m, coords, cfg.axis_f + cfg.axis_h, cfg.axis_w, cfg.base, 2, sign);
}

}  // namespace detail

inline Mat apply_rope(const Mat& tokens, const std::vector<TokenCoord>& coords,
                      const RopeConfig& cfg) {
  Mat out = tokens;
  detail::rope_rotate_inplace(out, coords, cfg);
  return out;
}

// convenience for single-coordinate call sites and tests
inline Mat apply_rope(const Mat& tokens, TokenCoord coord, const RopeConfig& cfg) {
  return apply_rope(tokens, std::vector<TokenCoord>(tokens.rows, coord), cfg);
}

}  // namespace dsi
