#pragma once

#include <string>

#include "dsi/grid.hpp"

namespace dsi {

// Coordinate shift applied to a whole segment before rotary embedding.
// Components are in patch-latent units on the (frame, width, height) axes.
struct RoleOffset {
  long long df = 0;
  long long dw = 0;
  long long dh = 0;

  bool operator==(const RoleOffset&) const = default;
};

// Role- and stream-specific offsets. Target latents anchor at zero so their
// coordinates equal raw grid indices; strong conditions move along the width
// axis, weak conditions along the frame axis. `target_width` and
// `video_frames` are measured on the target latent grid.
//
//   video stream:  SourceVideo       -> (0, w, 0)
//                  TargetVideoLatent -> (0, 0, 0)
//                  TargetRefImage    -> (N, 2w, 0)
//   image stream:  TargetImageLatent -> (0, 0, 0)
//                  SourceFirstFrame  -> (0, w, 0)
//                  RawRefImage       -> (1, 0, 0)
inline RoleOffset role_offset(Role role, Stream stream, std::size_t target_width,
                              std::size_t video_frames) {
  if (target_width < 1 || video_frames < 1)
    throw InputError("role_offset: target width and frame count must be >= 1");
  const auto w = static_cast<long long>(target_width);
  const auto n = static_cast<long long>(video_frames);
  if (stream == Stream::Video) {
    switch (role) {
      case Role::TargetVideoLatent: return {0, 0, 0};
      case Role::SourceVideo: return {0, w, 0};
      case Role::TargetRefImage: return {n, 2 * w, 0};
      default: break;
    }
  } else {
    switch (role) {
      case Role::TargetImageLatent: return {0, 0, 0};
      case Role::SourceFirstFrame: return {0, w, 0};
      case Role::RawRefImage: return {1, 0, 0};
      default: break;
    }
  }
  throw InputError(std::string("role_offset: role ") + role_name(role) +
                   " is not valid on the " + stream_name(stream) + " stream");
}

}  // namespace dsi
