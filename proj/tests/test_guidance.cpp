#include <catch2/catch_amalgamated.hpp>

#include "dsi/guidance.hpp"
#include "dsi/selftest.hpp"

using namespace dsi;

namespace {

StubVlmClient make_vlm(std::size_t prompt_tokens = 3, std::size_t content_tokens = 8,
                       std::uint64_t seed = 7, std::size_t dim = 12) {
  return StubVlmClient(StubVlmConfig{seed, dim, prompt_tokens, content_tokens, false});
}

}  // namespace

TEST_CASE("select_guidance_tokens keeps non-prompt tokens in order") {
  Rng rng(3);
  const Mat raw = random_mat(rng, 10, 6);
  std::vector<std::uint8_t> flags = {1, 0, 1, 0, 0, 1, 0, 0, 1, 0};
  const GuidanceEmbedding out = select_guidance_tokens(raw, flags, GuidanceKind::Style, 42);
  REQUIRE(out.tokens.rows == 6);
  std::size_t r = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    if (flags[i]) continue;
    for (std::size_t c = 0; c < 6; ++c) REQUIRE(out.tokens(r, c) == raw(i, c));
    ++r;
  }
  CHECK(out.provenance == GuidanceKind::Style);
  CHECK(out.source_hash == 42);
}

TEST_CASE("select_guidance_tokens: no flags is the identity") {
  Rng rng(4);
  const Mat raw = random_mat(rng, 5, 4);
  const GuidanceEmbedding out =
      select_guidance_tokens(raw, std::vector<std::uint8_t>(5, 0), GuidanceKind::Insert, 0);
  CHECK(out.tokens.data == raw.data);
}

TEST_CASE("select_guidance_tokens matches a filter-by-flag oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(100);
    const Mat raw = random_mat(rng, n, 3);
    std::vector<std::uint8_t> flags(n);
    bool any_kept = false;
    for (auto& f : flags) {
      f = rng.below(2) ? 1 : 0;
      if (!f) any_kept = true;
    }
    if (!any_kept) flags[rng.below(n)] = 0;

    // independent oracle: plain filter
    std::vector<std::vector<double>> want;
    for (std::size_t i = 0; i < n; ++i)
      if (!flags[i]) {
        std::vector<double> row(3);
        for (std::size_t c = 0; c < 3; ++c) row[c] = raw(i, c);
        want.push_back(std::move(row));
      }

    const GuidanceEmbedding out = select_guidance_tokens(raw, flags, GuidanceKind::Pretrain, 0);
    REQUIRE(out.tokens.rows == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
      for (std::size_t c = 0; c < 3; ++c) REQUIRE(out.tokens(i, c) == want[i][c]);
  }
}

TEST_CASE("select_guidance_tokens: all-prompt input is an error") {
  Mat raw(4, 2);
  CHECK_THROWS_AS(select_guidance_tokens(raw, {1, 1, 1, 1}, GuidanceKind::Style, 0), InputError);
  CHECK_THROWS_AS(select_guidance_tokens(raw, {1, 1}, GuidanceKind::Style, 0), InputError);
}

TEST_CASE("style_guidance drops prompt tokens and tags provenance") {
  StubVlmClient vlm = make_vlm(3, 8);
  const LatentGrid ref = seeded_grid(1, 2, 2, 4, Role::RawRefImage, 1);
  const LatentGrid frame = seeded_grid(1, 2, 2, 4, Role::SourceFirstFrame, 2);
  const GuidanceEmbedding e = style_guidance(vlm, ref, frame);
  CHECK(e.tokens.rows == 8);
  CHECK(e.provenance == GuidanceKind::Style);
  CHECK(vlm.query_count() == 1);
}

TEST_CASE("guidance extraction is deterministic and order-sensitive") {
  StubVlmClient vlm = make_vlm();
  const LatentGrid a = seeded_grid(1, 2, 2, 4, Role::RawRefImage, 1);
  const LatentGrid b = seeded_grid(1, 2, 2, 4, Role::SourceFirstFrame, 2);

  const GuidanceEmbedding first = style_guidance(vlm, a, b);
  const GuidanceEmbedding second = style_guidance(vlm, a, b);
  CHECK(first.source_hash == second.source_hash);
  CHECK(first.tokens.data == second.tokens.data);

  // swapped image order is a different query
  const GuidanceEmbedding swapped =
      style_guidance(vlm, b.with_role(Role::RawRefImage), a.with_role(Role::SourceFirstFrame));
  CHECK(swapped.source_hash != first.source_hash);
  CHECK(swapped.tokens.data != first.tokens.data);
}

TEST_CASE("insert_guidance mirrors style_guidance with its own provenance") {
  StubVlmClient vlm = make_vlm(3, 5);
  const LatentGrid ref = seeded_grid(1, 2, 2, 4, Role::RawRefImage, 3);
  const LatentGrid frame = seeded_grid(1, 2, 2, 4, Role::SourceFirstFrame, 4);
  const GuidanceEmbedding e = insert_guidance(vlm, ref, frame, "place the mug on the table");
  CHECK(e.tokens.rows == 5);
  CHECK(e.provenance == GuidanceKind::Insert);
  const GuidanceEmbedding again = insert_guidance(vlm, ref, frame, "place the mug on the table");
  CHECK(e.tokens.data == again.tokens.data);
  const GuidanceEmbedding other = insert_guidance(vlm, ref, frame, "place the mug on the floor");
  CHECK(e.tokens.data != other.tokens.data);
}

TEST_CASE("pretrain_guidance is the single-image variant") {
  StubVlmClient vlm = make_vlm(2, 4);
  const LatentGrid frame = seeded_grid(1, 2, 2, 4, Role::SourceFirstFrame, 9);
  const GuidanceEmbedding e = pretrain_guidance(vlm, frame);
  CHECK(e.tokens.rows == 4);
  CHECK(e.provenance == GuidanceKind::Pretrain);
  CHECK(pretrain_guidance(vlm, frame).tokens.data == e.tokens.data);
}

TEST_CASE("compose_video_guidance concatenates with a recorded boundary") {
  StubVlmClient vlm = make_vlm(3, 5, 11, 6);
  const LatentGrid ref = seeded_grid(1, 2, 2, 4, Role::RawRefImage, 5);
  const LatentGrid frame = seeded_grid(1, 2, 2, 4, Role::SourceFirstFrame, 6);
  const GuidanceEmbedding insert = insert_guidance(vlm, ref, frame, "by the window");

  Rng motion_rng(12);
  GuidanceEmbedding motion;
  motion.tokens = random_mat(motion_rng, 7, 6); // 7 motion tokens, dim 6
  motion.provenance = GuidanceKind::Motion;

  const AdapterMap identity = AdapterMap::identity(6);
  const GuidanceEmbedding out = compose_video_guidance(motion, insert, identity);
  REQUIRE(out.tokens.rows == 12);
  REQUIRE(out.boundary.has_value());
  CHECK(*out.boundary == 5);
  CHECK(out.provenance == GuidanceKind::Insert);
  // identity adapter: insert tokens pass through unchanged
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 6; ++c) CHECK(out.tokens(i, c) == insert.tokens(i, c));
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t c = 0; c < 6; ++c) CHECK(out.tokens(5 + i, c) == motion.tokens(i, c));
}

TEST_CASE("compose_video_guidance contract errors") {
  StubVlmClient vlm = make_vlm(2, 3, 13, 6);
  const LatentGrid ref = seeded_grid(1, 2, 2, 4, Role::RawRefImage, 7);
  const LatentGrid frame = seeded_grid(1, 2, 2, 4, Role::SourceFirstFrame, 8);
  const GuidanceEmbedding insert = insert_guidance(vlm, ref, frame, "anywhere");
  const AdapterMap identity = AdapterMap::identity(6);

  GuidanceEmbedding empty_motion;
  empty_motion.provenance = GuidanceKind::Motion;
  CHECK_THROWS_AS(compose_video_guidance(empty_motion, insert, identity), InputError);

  GuidanceEmbedding wrong_dim;
  wrong_dim.tokens = Mat(4, 5); // adapter emits dim 6
  wrong_dim.provenance = GuidanceKind::Motion;
  CHECK_THROWS_AS(compose_video_guidance(wrong_dim, insert, identity), InputError);
}

TEST_CASE("feedback_guidance substitutes only the reference slot") {
  StubVlmClient vlm = make_vlm();
  const LatentGrid ref = seeded_grid(1, 2, 2, 4, Role::RawRefImage, 21);
  const LatentGrid frame = seeded_grid(1, 2, 2, 4, Role::SourceFirstFrame, 22);

  const GuidanceEmbedding base = insert_guidance(vlm, ref, frame, "near the plant");
  // with the estimate equal to the reference content, outputs coincide
  const LatentGrid x0_same = ref.with_role(Role::TargetImageLatent);
  const GuidanceEmbedding fb =
      feedback_guidance(vlm, GuidanceKind::Insert, "near the plant", x0_same, frame);
  CHECK(fb.tokens.data == base.tokens.data);
  CHECK(fb.provenance == GuidanceKind::FeedbackInsert);
  CHECK(fb.source_hash == base.source_hash);

  const GuidanceEmbedding fb_style =
      feedback_guidance(vlm, GuidanceKind::Style, "style prompt", x0_same, frame);
  CHECK(fb_style.provenance == GuidanceKind::FeedbackStyle);

  // the stub is sensitive to the image content, so a different estimate
  // changes the embedding
  const LatentGrid x0_other = seeded_grid(1, 2, 2, 4, Role::TargetImageLatent, 23);
  const GuidanceEmbedding fb2 =
      feedback_guidance(vlm, GuidanceKind::Insert, "near the plant", x0_other, frame);
  CHECK(fb2.tokens.data != base.tokens.data);

  CHECK_THROWS_AS(feedback_guidance(vlm, GuidanceKind::Motion, "p", x0_same, frame), InputError);
}

TEST_CASE("adapter is affine") {
  const AdapterMap a = AdapterMap::seeded(6, 4, 77);
  Rng rng(30);
  const Mat x = random_mat(rng, 5, 6);
  const Mat y = random_mat(rng, 5, 6);
  const double alpha = 0.7, beta = -1.3;
  Mat mix(5, 6);
  for (std::size_t i = 0; i < mix.data.size(); ++i)
    mix.data[i] = alpha * x.data[i] + beta * y.data[i];
  const Mat lhs = a.apply(mix);
  const Mat ax = a.apply(x);
  const Mat ay = a.apply(y);
  for (std::size_t i = 0; i < lhs.rows; ++i)
    for (std::size_t j = 0; j < lhs.cols; ++j) {
      const double rhs = alpha * ax(i, j) + beta * ay(i, j) - (alpha + beta - 1.0) * a.bias(0, j);
      CHECK(lhs(i, j) == Catch::Approx(rhs).margin(1e-5));
    }
  CHECK_THROWS_AS(a.apply(Mat(2, 5)), InputError);
}

TEST_CASE("client failures propagate as guidance-backend errors") {
  StubVlmClient failing(StubVlmConfig{1, 8, 2, 2, true});
  const LatentGrid ref = seeded_grid(1, 2, 2, 4, Role::RawRefImage, 31);
  const LatentGrid frame = seeded_grid(1, 2, 2, 4, Role::SourceFirstFrame, 32);
  CHECK_THROWS_AS(style_guidance(failing, ref, frame), ClientError);

  StubMotionEncoder failing_motion(StubMotionConfig{1, 8, 3, true});
  CHECK_THROWS_AS(failing_motion.encode("pan left"), ClientError);
}

TEST_CASE("motion encoder stub is deterministic per text") {
  StubMotionEncoder enc(StubMotionConfig{9, 16, 5, false});
  const Mat a = enc.encode("dolly in");
  const Mat b = enc.encode("dolly in");
  const Mat c = enc.encode("dolly out");
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
  CHECK(a.rows == 5);
  CHECK(a.cols == 16);
  CHECK(enc.encode_count() == 3);
}
