#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "dsi/rope.hpp"
#include "dsi/selftest.hpp"

using namespace dsi;

TEST_CASE("role offsets match the assignment table") {
  // video stream
  CHECK(role_offset(Role::SourceVideo, Stream::Video, 4, 4) == RoleOffset{0, 4, 0});
  CHECK(role_offset(Role::TargetVideoLatent, Stream::Video, 4, 4) == RoleOffset{0, 0, 0});
  CHECK(role_offset(Role::TargetRefImage, Stream::Video, 4, 4) == RoleOffset{4, 8, 0});
  // image stream
  CHECK(role_offset(Role::TargetImageLatent, Stream::Image, 4, 4) == RoleOffset{0, 0, 0});
  CHECK(role_offset(Role::TargetImageLatent, Stream::Image, 7, 2) == RoleOffset{0, 0, 0});
  CHECK(role_offset(Role::SourceFirstFrame, Stream::Image, 4, 4) == RoleOffset{0, 4, 0});
  CHECK(role_offset(Role::RawRefImage, Stream::Image, 4, 4) == RoleOffset{1, 0, 0});
  // scaling with the target grid
  CHECK(role_offset(Role::TargetRefImage, Stream::Video, 6, 9) == RoleOffset{9, 12, 0});

  CHECK_THROWS_AS(role_offset(Role::RawRefImage, Stream::Video, 4, 4), InputError);
  CHECK_THROWS_AS(role_offset(Role::SourceVideo, Stream::Image, 4, 4), InputError);
  CHECK_THROWS_AS(role_offset(Role::SourceVideo, Stream::Video, 0, 4), InputError);
}

TEST_CASE("assign_coordinates applies per-segment offsets") {
  const SegmentLayout layout = build_layout(
      Stream::Video, {{Role::TargetVideoLatent, {4, 2, 4}},
                      {Role::SourceVideo, {4, 2, 4}},
                      {Role::TargetRefImage, {1, 2, 4}}});
  const std::vector<TokenCoord> coords = assign_coordinates(layout);

  // target token at (f=2, y=1, x=3) -> (2, 3, 1)
  const Segment& target = layout.segments[0];
  const std::size_t t_idx = target.begin + (2 * 2 + 1) * 4 + 3;
  CHECK(coords[t_idx] == TokenCoord{2, 3, 1});

  // source token at (0, 0, 0) with w=4 -> (0, 4, 0)
  CHECK(coords[layout.segments[1].begin] == TokenCoord{0, 4, 0});

  // ref token at (0, y=1, x=2) with w=4, N=4 -> (4, 10, 1)
  const std::size_t r_idx = layout.segments[2].begin + 1 * 4 + 2;
  CHECK(coords[r_idx] == TokenCoord{4, 10, 1});
}

TEST_CASE("zero-anchor: target coordinates equal raw grid indices") {
  Rng rng(31);
  for (int i = 0; i < 20; ++i) {
    const Stream stream = i % 2 == 0 ? Stream::Video : Stream::Image;
    const SegmentLayout layout = random_layout(stream, rng);
    const std::vector<TokenCoord> coords = assign_coordinates(layout);
    const Segment& target = layout.target();
    std::size_t k = target.begin;
    for (std::size_t f = 0; f < target.dims.frames; ++f)
      for (std::size_t y = 0; y < target.dims.height; ++y)
        for (std::size_t x = 0; x < target.dims.width; ++x, ++k) {
          REQUIRE(coords[k] == TokenCoord{static_cast<long long>(f), static_cast<long long>(x),
                                          static_cast<long long>(y)});
        }
  }
}

TEST_CASE("apply_rope leaves zero-coordinate tokens unchanged") {
  const RopeConfig cfg = RopeConfig::for_head_dim(16);
  Rng rng(8);
  const Mat x = random_mat(rng, 3, 16);
  const Mat y = apply_rope(x, TokenCoord{0, 0, 0}, cfg);
  CHECK(y.data == x.data);
}

TEST_CASE("apply_rope first-pair rotation matches complex multiplication") {
  // axis blocks (2, 2, 2): pair 0 of the frame block turns by F * theta_0,
  // and theta_0 = base^0 = 1 for any base
  RopeConfig cfg;
  cfg.head_dim = 6;
  cfg.axis_f = 2;
  cfg.axis_h = 2;
  cfg.axis_w = 2;
  Mat x(1, 6);
  x(0, 0) = 1.0;
  const Mat y = apply_rope(x, TokenCoord{1, 0, 0}, cfg);
  CHECK(y(0, 0) == Catch::Approx(std::cos(1.0)).epsilon(1e-12));
  CHECK(y(0, 1) == Catch::Approx(std::sin(1.0)).epsilon(1e-12));
  for (std::size_t c = 2; c < 6; ++c) CHECK(y(0, c) == 0.0);
}

TEST_CASE("apply_rope axis blocks pick up the right coordinate") {
  RopeConfig cfg;
  cfg.head_dim = 6;
  cfg.axis_f = 2;
  cfg.axis_h = 2;
  cfg.axis_w = 2;
  Mat x(1, 6);
  for (std::size_t c = 0; c < 6; ++c) x(0, c) = c % 2 == 0 ? 1.0 : 0.0;
  // only the H coordinate set: the middle block rotates, the others do not
  const Mat y = apply_rope(x, TokenCoord{0, 0, 3}, cfg);
  CHECK(y(0, 0) == 1.0);
  CHECK(y(0, 1) == 0.0);
  CHECK(y(0, 2) == Catch::Approx(std::cos(3.0)).epsilon(1e-12));
  CHECK(y(0, 3) == Catch::Approx(std::sin(3.0)).epsilon(1e-12));
  CHECK(y(0, 4) == 1.0);
  CHECK(y(0, 5) == 0.0);
}

TEST_CASE("apply_rope validates shapes and config") {
  const RopeConfig cfg = RopeConfig::for_head_dim(16);
  Mat x(2, 8);
  CHECK_THROWS_AS(apply_rope(x, TokenCoord{1, 1, 1}, cfg), InputError);
  RopeConfig bad = cfg;
  bad.axis_f = 30;
  Mat ok(2, 16);
  CHECK_THROWS_AS(apply_rope(ok, TokenCoord{1, 1, 1}, bad), InputError);
  CHECK_THROWS_AS(RopeConfig::for_head_dim(10), InputError);
}

TEST_CASE("default axis split follows the 2:1:1 carve") {
  const RopeConfig c64 = RopeConfig::for_head_dim(64);
  CHECK(c64.axis_f == 32);
  CHECK(c64.axis_h == 16);
  CHECK(c64.axis_w == 16);
  CHECK(c64.base == 10000.0);
  const RopeConfig c16 = RopeConfig::for_head_dim(16);
  CHECK(c16.axis_f == 8);
  CHECK(c16.axis_h == 4);
  CHECK(c16.axis_w == 4);
}

TEST_CASE("rotation preserves norms") {
  CHECK(rope_norm_drift(123) <= 1e-5);
}

TEST_CASE("relative-position identity") {
  CHECK(rope_relative_identity_err(321, 1000) <= 1e-5);
}

TEST_CASE("per-stream coordinate disjointness over random layouts") {
  const DisjointnessReport report = rope_disjointness(55, 100, 8);
  CHECK(report.layouts == 200);
  CHECK(report.collisions == 0);
}

TEST_CASE("cross-stream overlap is permitted") {
  // both streams anchor their target at (0, 0, 0); the coordinate spaces are
  // intentionally allowed to overlap because the streams never mix queries
  const SegmentLayout video = build_layout(Stream::Video, {{Role::TargetVideoLatent, {2, 2, 2}}});
  const SegmentLayout image = build_layout(Stream::Image, {{Role::TargetImageLatent, {1, 2, 2}}});
  std::set<std::tuple<long long, long long, long long>> video_coords;
  for (const TokenCoord& c : assign_coordinates(video)) video_coords.insert({c.f, c.w, c.h});
  bool overlap = false;
  for (const TokenCoord& c : assign_coordinates(image))
    if (video_coords.count({c.f, c.w, c.h})) overlap = true;
  CHECK(overlap);
}

TEST_CASE("frame-append baseline is axis-adjacent, not offset-separated") {
  const FrameAppendReport report = fulldit_adjacency(99, 100, 8);
  CHECK(report.layouts > 0);
  CHECK(report.confirmed == report.layouts);

  // spot-check the running frame offset on a concrete layout
  const SegmentLayout layout = build_layout(
      Stream::Video, {{Role::TargetVideoLatent, {3, 2, 2}},
                      {Role::SourceVideo, {3, 2, 2}},
                      {Role::TargetRefImage, {1, 2, 2}}});
  const std::vector<TokenCoord> coords = detail::assign_coordinates_fulldit(layout);
  CHECK(coords[layout.segments[1].begin] == TokenCoord{3, 0, 0}); // +F exactly
  CHECK(coords[layout.segments[2].begin] == TokenCoord{6, 0, 0}); // +F + F_src
}
