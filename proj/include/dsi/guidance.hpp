#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsi/clients.hpp"
#include "dsi/grid.hpp"

namespace dsi {

// ----------------------------------------------------------------------------
// Guidance embeddings
// ----------------------------------------------------------------------------

enum class GuidanceKind {
  Motion,
  Style,
  Insert,
  FeedbackStyle,
  FeedbackInsert,
  Pretrain,
};

inline const char* guidance_kind_name(GuidanceKind k) {
  switch (k) {
    case GuidanceKind::Motion: return "motion";
    case GuidanceKind::Style: return "style";
    case GuidanceKind::Insert: return "insert";
    case GuidanceKind::FeedbackStyle: return "feedback-style";
    case GuidanceKind::FeedbackInsert: return "feedback-insert";
    case GuidanceKind::Pretrain: return "pretrain";
  }
  return "?";
}

struct GuidanceEmbedding {
  Mat tokens;
  GuidanceKind provenance = GuidanceKind::Motion;
  std::uint64_t source_hash = 0;
  // set by compose_video_guidance: index of the first motion token
  std::optional<std::size_t> boundary;

  void validate() const {
    if (tokens.rows == 0) throw InputError("guidance: empty embedding");
    if (!all_finite(tokens)) throw InputError("guidance: non-finite value");
  }
};

// Fixed instruction templates shipped with the artifact. Insertion prompts
// and video descriptions are data; these two are system prompts.
inline constexpr std::string_view kDefaultStylePrompt =
    "Compare the reference image with the first frame of the scene and describe how to adapt "
    "the reference's lighting, palette, and material rendering to match the scene.";
inline constexpr std::string_view kDefaultPretrainPrompt =
    "Describe the first frame of the video: environment, lighting, and atmosphere.";

// ----------------------------------------------------------------------------
// Adapter: affine map from the reasoning backend's embedding space into the
// generator's cross-attention space
// ----------------------------------------------------------------------------

struct AdapterMap {
  Mat weight; // in_dim x out_dim
  Mat bias;   // 1 x out_dim

  std::size_t in_dim() const { return weight.rows; }
  std::size_t out_dim() const { return weight.cols; }

  static AdapterMap identity(std::size_t dim) {
    AdapterMap a;
    a.weight = Mat(dim, dim);
    for (std::size_t i = 0; i < dim; ++i) a.weight(i, i) = 1.0;
    a.bias = Mat(1, dim);
    return a;
  }

  static AdapterMap seeded(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
    AdapterMap a;
    a.weight = Mat(in_dim, out_dim);
    a.bias = Mat(1, out_dim);
    Rng rng(fnv1a(kFnvOffset, seed));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    rng.fill_normal(a.weight, scale);
    rng.fill_normal(a.bias, 0.01);
    return a;
  }

  Mat apply(const Mat& tokens) const {
    if (tokens.cols != in_dim()) throw InputError("adapter: input dim mismatch");
    Mat out = matmul(tokens, weight);
    for (std::size_t i = 0; i < out.rows; ++i)
      for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += bias(0, j);
    return out;
  }

  GuidanceEmbedding apply(const GuidanceEmbedding& e) const {
    GuidanceEmbedding out = e;
    out.tokens = apply(e.tokens);
    return out;
  }
};

// ----------------------------------------------------------------------------
// Token selection and the per-task guidance extractors
// ----------------------------------------------------------------------------

// Keeps exactly the tokens not flagged as prompt, in their original order.
inline GuidanceEmbedding select_guidance_tokens(const Mat& raw,
                                                const std::vector<std::uint8_t>& is_prompt,
                                                GuidanceKind provenance,
                                                std::uint64_t source_hash) {
  if (is_prompt.size() != raw.rows)
    throw InputError("select_guidance_tokens: flag count does not match token count");
  std::size_t kept = 0;
  for (std::uint8_t f : is_prompt)
    if (!f) ++kept;
  if (kept == 0)
    throw InputError("select_guidance_tokens: all tokens flagged as prompt, guidance is empty");
  GuidanceEmbedding out;
  out.tokens = Mat(kept, raw.cols);
  std::size_t r = 0;
  for (std::size_t i = 0; i < raw.rows; ++i) {
    if (is_prompt[i]) continue;
    for (std::size_t j = 0; j < raw.cols; ++j) out.tokens(r, j) = raw(i, j);
    ++r;
  }
  out.provenance = provenance;
  out.source_hash = source_hash;
  out.validate();
  return out;
}

namespace detail {

inline std::uint64_t guidance_source_hash(std::string_view prompt,
                                          const std::vector<const LatentGrid*>& images) {
  std::uint64_t h = fnv1a(kFnvOffset, prompt);
  for (const LatentGrid* g : images) h = fnv1a(h, g->content_digest());
  return h;
}

inline GuidanceEmbedding query_and_select(VlmClient& client, std::string_view prompt,
                                          const std::vector<const LatentGrid*>& images,
                                          GuidanceKind provenance) {
  VlmResponse r = client.query(prompt, images);
  return select_guidance_tokens(r.tokens, r.is_prompt, provenance,
                                guidance_source_hash(prompt, images));
}

}  // namespace detail

// Style reasoning over (reference image, first source frame).
inline GuidanceEmbedding style_guidance(VlmClient& client, const LatentGrid& ref_image,
                                        const LatentGrid& source_frame,
                                        std::string_view style_prompt = kDefaultStylePrompt) {
  return detail::query_and_select(client, style_prompt, {&ref_image, &source_frame},
                                  GuidanceKind::Style);
}

// Insertion reasoning with the coarse location instruction.
inline GuidanceEmbedding insert_guidance(VlmClient& client, const LatentGrid& ref_image,
                                         const LatentGrid& source_frame,
                                         std::string_view insert_prompt) {
  return detail::query_and_select(client, insert_prompt, {&ref_image, &source_frame},
                                  GuidanceKind::Insert);
}

// Single-image captioning variant used in the alignment pretraining phase.
inline GuidanceEmbedding pretrain_guidance(VlmClient& client, const LatentGrid& source_frame,
                                           std::string_view prompt = kDefaultPretrainPrompt) {
  return detail::query_and_select(client, prompt, {&source_frame}, GuidanceKind::Pretrain);
}

// Closed-loop refinement: identical pipeline to style_/insert_guidance with
// the one-step estimate substituted into the reference-image slot. The motion
// embedding is never recomputed here.
inline GuidanceEmbedding feedback_guidance(VlmClient& client, GuidanceKind base,
                                           std::string_view prompt,
                                           const LatentGrid& x0_estimate,
                                           const LatentGrid& source_frame) {
  GuidanceKind provenance;
  if (base == GuidanceKind::Style)
    provenance = GuidanceKind::FeedbackStyle;
  else if (base == GuidanceKind::Insert)
    provenance = GuidanceKind::FeedbackInsert;
  else
    throw InputError("feedback_guidance: base must be style or insert");
  return detail::query_and_select(client, prompt, {&x0_estimate, &source_frame}, provenance);
}

// Video-stream guidance: adapted insertion tokens followed by motion tokens,
// with the segment boundary recorded. Only reasoning-backend tokens pass
// through the adapter; motion tokens are already in generator space.
inline GuidanceEmbedding compose_video_guidance(const GuidanceEmbedding& motion,
                                                const GuidanceEmbedding& insert,
                                                const AdapterMap& adapter) {
  if (motion.tokens.rows == 0) throw InputError("compose_video_guidance: empty motion embedding");
  if (insert.tokens.rows == 0) throw InputError("compose_video_guidance: empty insert embedding");
  Mat adapted = adapter.apply(insert.tokens);
  if (adapted.cols != motion.tokens.cols)
    throw InputError("compose_video_guidance: adapted dim does not match motion dim");
  GuidanceEmbedding out;
  out.tokens = Mat(adapted.rows + motion.tokens.rows, adapted.cols);
  std::copy(adapted.data.begin(), adapted.data.end(), out.tokens.data.begin());
  std::copy(motion.tokens.data.begin(), motion.tokens.data.end(),
            out.tokens.data.begin() + static_cast<std::ptrdiff_t>(adapted.data.size()));
  out.provenance = insert.provenance;
  out.boundary = adapted.rows;
  out.source_hash = fnv1a(fnv1a(kFnvOffset, insert.source_hash), motion.source_hash);
  out.validate();
  return out;
}

// Everything the sampler needs to produce and refresh guidance.
struct GuidanceClients {
  std::shared_ptr<VlmClient> vlm;
  std::shared_ptr<MotionEncoderClient> motion;
  AdapterMap adapter;
};

inline GuidanceClients stub_guidance_clients(std::uint64_t seed, std::size_t guidance_dim,
                                             std::size_t vlm_dim = 24) {
  GuidanceClients g;
  g.vlm = std::make_shared<StubVlmClient>(
      StubVlmConfig{fnv1a(fnv1a(kFnvOffset, seed), "vlm"), vlm_dim, 4, 8, false});
  g.motion = std::make_shared<StubMotionEncoder>(
      StubMotionConfig{fnv1a(fnv1a(kFnvOffset, seed), "motion"), guidance_dim, 6, false});
  g.adapter = AdapterMap::seeded(vlm_dim, guidance_dim, fnv1a(fnv1a(kFnvOffset, seed), "adapter"));
  return g;
}

}  // namespace dsi
