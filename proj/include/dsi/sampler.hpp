#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "dsi/dit.hpp"
#include "dsi/guidance.hpp"

namespace dsi {

// ----------------------------------------------------------------------------
// Rectified-flow pieces: x_t = (1 - sigma) x0 + sigma * eps, velocity
// target eps - x0, sampled by Euler integration over decreasing sigma
// ----------------------------------------------------------------------------

// Linear schedule sigma_k = (k+1)/T; t_index counts down from T-1 (sigma 1)
// to 0, with a virtual step -1 at sigma 0.
inline std::vector<double> sigma_schedule(std::size_t t_steps) {
  if (t_steps < 1) throw InputError("sigma_schedule: need at least one step");
  std::vector<double> s(t_steps);
  for (std::size_t k = 0; k < t_steps; ++k)
    s[k] = static_cast<double>(k + 1) / static_cast<double>(t_steps);
  return s;
}

// Closed-form clean-latent estimate from the current state and the predicted
// velocity.
inline Mat one_step_x0(const Mat& x_t, const Mat& v_pred, double sigma) {
  if (!x_t.same_shape(v_pred)) throw InputError("one_step_x0: shape mismatch");
  if (sigma < 0.0 || sigma > 1.0) throw InputError("one_step_x0: sigma out of [0, 1]");
  Mat x0 = x_t;
  for (std::size_t i = 0; i < x0.data.size(); ++i) x0.data[i] -= sigma * v_pred.data[i];
  return x0;
}

inline void euler_step(Mat& x, const Mat& v, double sigma_t, double sigma_next) {
  if (!x.same_shape(v)) throw InputError("euler_step: shape mismatch");
  const double dsigma = sigma_t - sigma_next;
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] -= dsigma * v.data[i];
}

// ----------------------------------------------------------------------------
// Feedback gating
// ----------------------------------------------------------------------------

struct FeedbackConfig {
  std::size_t t_start = 0;
  bool enabled = true;
};

// Guidance is refreshed only at the high-noise end of the trajectory:
// t_index >= t_start. Below t_start the latest embeddings stay frozen.
inline bool feedback_gate(std::size_t t_index, const FeedbackConfig& cfg) {
  return cfg.enabled && t_index >= cfg.t_start;
}

// ----------------------------------------------------------------------------
// Denoising state and trace
// ----------------------------------------------------------------------------

struct ActiveGuidance {
  GuidanceEmbedding video;
  GuidanceEmbedding image;
};

struct DenoiseState {
  std::size_t t_index = 0;
  std::size_t t_steps = 0;
  double sigma = 1.0;
  LatentGrid video_latent;
  LatentGrid image_latent;
  ActiveGuidance active_guidance;
};

struct StepTraceEntry {
  std::size_t t_index = 0;
  double sigma = 0.0;
  bool gated = false;
  std::size_t client_calls = 0;
  double video_norm = 0.0;
  double image_norm = 0.0;
};

// One line per step: step index, sigma (9 significant digits), gate flag,
// client-call count, post-update latent norm per stream.
inline std::string format_trace_line(const StepTraceEntry& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu %.9g %d %zu %.9g %.9g", e.t_index, e.sigma,
                e.gated ? 1 : 0, e.client_calls, e.video_norm, e.image_norm);
  return buf;
}

inline std::string format_trace(const std::vector<StepTraceEntry>& trace) {
  std::string out;
  for (const auto& e : trace) {
    out += format_trace_line(e);
    out += '\n';
  }
  return out;
}

// ----------------------------------------------------------------------------
// Closed-loop sampling
// ----------------------------------------------------------------------------

struct SampleInputs {
  LatentGrid source_video; // role SourceVideo
  LatentGrid raw_ref;      // role RawRefImage
  std::string p_insert;
  std::string p_desc;
  std::string p_style = std::string(kDefaultStylePrompt);
};

struct SampleConfig {
  DiTConfig dit;
  FeedbackConfig feedback;
  std::size_t steps = 10;
  std::uint64_t seed = 0;
};

struct SampleResult {
  LatentGrid video; // role TargetVideoLatent
  LatentGrid image; // role TargetImageLatent
  std::vector<StepTraceEntry> trace;
};

// Runs the dual-stream Euler sampler. The video stream denoises the insertion
// target conditioned on the source video and the image stream's evolving
// harmonized reference; the image stream denoises the style-transfer target
// conditioned on the first source frame and the raw reference. At gated steps
// the image stream's one-step estimate is pushed back through the reasoning
// client to refresh both streams' guidance; the motion embedding is computed
// once and never refreshed.
inline SampleResult sample(const SampleInputs& inputs, const SampleConfig& cfg,
                           GuidanceClients& clients) {
  inputs.source_video.validate();
  inputs.raw_ref.validate();
  if (inputs.source_video.role != Role::SourceVideo)
    throw InputError("sample: source video grid must carry the SourceVideo role");
  if (inputs.raw_ref.role != Role::RawRefImage)
    throw InputError("sample: reference grid must carry the RawRefImage role");
  if (inputs.source_video.channels != cfg.dit.latent_dim ||
      inputs.raw_ref.channels != cfg.dit.latent_dim)
    throw InputError("sample: input channel dim does not match model latent dim");
  if (inputs.p_insert.empty()) throw InputError("sample: p_insert must be nonempty");
  if (cfg.feedback.t_start > cfg.steps)
    throw InputError("sample: t_start must lie in [0, steps]");
  cfg.dit.validate();

  const LatentGrid source_frame = inputs.source_video.first_frame(Role::SourceFirstFrame);
  const DiTWeights weights = DiTWeights::seeded(cfg.dit);

  FeedbackConfig fb = cfg.feedback;
  if (cfg.dit.ablation.feedback_off) fb.enabled = false;

  // initial guidance
  GuidanceEmbedding motion;
  motion.tokens = clients.motion->encode(inputs.p_desc);
  motion.provenance = GuidanceKind::Motion;
  motion.source_hash = fnv1a(kFnvOffset, inputs.p_desc);
  motion.validate();
  const GuidanceEmbedding style =
      style_guidance(*clients.vlm, inputs.raw_ref, source_frame, inputs.p_style);
  const GuidanceEmbedding insert =
      insert_guidance(*clients.vlm, inputs.raw_ref, source_frame, inputs.p_insert);

  DenoiseState state;
  state.t_steps = cfg.steps;
  state.active_guidance.video = compose_video_guidance(motion, insert, clients.adapter);
  state.active_guidance.image = clients.adapter.apply(style);
  state.video_latent = seeded_grid(inputs.source_video.frames, inputs.source_video.height,
                                   inputs.source_video.width, cfg.dit.latent_dim,
                                   Role::TargetVideoLatent, fnv1a(fnv1a(kFnvOffset, cfg.seed), "video-noise"));
  state.image_latent = seeded_grid(1, inputs.source_video.height, inputs.source_video.width,
                                   cfg.dit.latent_dim, Role::TargetImageLatent,
                                   fnv1a(fnv1a(kFnvOffset, cfg.seed), "image-noise"));

  const std::vector<double> sigmas = sigma_schedule(cfg.steps);
  SampleResult result;

  for (std::size_t k = cfg.steps; k-- > 0;) {
    state.t_index = k;
    state.sigma = sigmas[k];
    const double sigma_next = k == 0 ? 0.0 : sigmas[k - 1];

    // the image stream's current latent is the video stream's
    // harmonized-reference condition
    const LatentGrid ref_condition = state.image_latent.with_role(Role::TargetRefImage);
    const StreamBatch video_in =
        assemble_stream(Stream::Video, {&state.video_latent, &inputs.source_video, &ref_condition},
                        state.active_guidance.video.tokens);
    const StreamBatch image_in =
        assemble_stream(Stream::Image, {&state.image_latent, &source_frame, &inputs.raw_ref},
                        state.active_guidance.image.tokens);

    const DiTForward fwd = dit_forward(weights, cfg.dit, video_in, image_in, state.sigma);

    StepTraceEntry entry;
    entry.t_index = k;
    entry.sigma = state.sigma;
    entry.gated = feedback_gate(k, fb);
    if (entry.gated) {
      TokenSeq image_tokens = patchify(state.image_latent);
      const Mat x0_tokens = one_step_x0(image_tokens.tokens, fwd.image_velocity, state.sigma);
      LatentGrid x0_estimate = unpatchify(
          x0_tokens, {1, state.image_latent.height, state.image_latent.width},
          Role::TargetImageLatent);
      try {
        const GuidanceEmbedding fb_style = feedback_guidance(
            *clients.vlm, GuidanceKind::Style, inputs.p_style, x0_estimate, source_frame);
        const GuidanceEmbedding fb_insert = feedback_guidance(
            *clients.vlm, GuidanceKind::Insert, inputs.p_insert, x0_estimate, source_frame);
        state.active_guidance.image = clients.adapter.apply(fb_style);
        state.active_guidance.video = compose_video_guidance(motion, fb_insert, clients.adapter);
      } catch (const ClientError& e) {
        throw ClientError("feedback at step " + std::to_string(k), e.what());
      }
      entry.client_calls = 2;
    }

    TokenSeq video_tokens = patchify(state.video_latent);
    TokenSeq image_tokens = patchify(state.image_latent);
    euler_step(video_tokens.tokens, fwd.video_velocity, state.sigma, sigma_next);
    euler_step(image_tokens.tokens, fwd.image_velocity, state.sigma, sigma_next);
    state.video_latent =
        unpatchify(video_tokens.tokens,
                   {state.video_latent.frames, state.video_latent.height,
                    state.video_latent.width},
                   Role::TargetVideoLatent);
    state.image_latent = unpatchify(
        image_tokens.tokens, {1, state.image_latent.height, state.image_latent.width},
        Role::TargetImageLatent);

    entry.video_norm = l2_norm(video_tokens.tokens);
    entry.image_norm = l2_norm(image_tokens.tokens);
    result.trace.push_back(entry);
  }

  state.video_latent.validate();
  state.image_latent.validate();
  result.video = std::move(state.video_latent);
  result.image = std::move(state.image_latent);
  return result;
}

}  // namespace dsi
