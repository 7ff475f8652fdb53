#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dsi/curation.hpp"
#include "dsi/dit.hpp"
#include "dsi/sampler.hpp"

namespace dsi {

// A quadruplet decoded to latents.
struct TrainItem {
  LatentGrid source_video;   // SourceVideo
  LatentGrid target_video;   // TargetVideoLatent, the video stream's clean x0
  LatentGrid raw_ref;        // RawRefImage
  LatentGrid harmonized_ref; // TargetRefImage, the image stream's clean x0
  std::string p_insert;
  std::string p_desc;
  std::string p_style;
};

inline TrainItem load_train_item(const Quadruplet& q) {
  TrainItem item;
  item.source_video = read_grid(q.source_video).with_role(Role::SourceVideo);
  item.target_video = read_grid(q.target_video).with_role(Role::TargetVideoLatent);
  item.raw_ref = read_grid(q.raw_ref).with_role(Role::RawRefImage);
  item.harmonized_ref = read_grid(q.harmonized_ref).with_role(Role::TargetRefImage);
  item.p_insert = q.p_insert;
  item.p_desc = q.p_desc;
  item.p_style = q.p_style.empty() ? std::string(kDefaultStylePrompt) : q.p_style;
  return item;
}

struct TrainStepResult {
  double loss = 0.0;
  double video_term = 0.0;
  double image_term = 0.0;
  std::vector<Mat> gradients; // aligned with DiTWeights::params() order
};

namespace detail {

struct ItemEval {
  double loss = 0.0;
  double video_term = 0.0;
  double image_term = 0.0;
  std::vector<Mat> gradients;
};

inline Mat noised(const Mat& x0, const Mat& eps, double sigma) {
  Mat x = x0;
  for (std::size_t i = 0; i < x.data.size(); ++i)
    x.data[i] = (1.0 - sigma) * x0.data[i] + sigma * eps.data[i];
  return x;
}

inline Mat velocity_target(const Mat& x0, const Mat& eps) {
  Mat v = eps;
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] -= x0.data[i];
  return v;
}

}  // namespace detail

// One dual-task optimization step: rectified-flow MSE on the video target
// segment plus rectified-flow MSE on the image target segment with equal
// weights. Noise draws depend only on (noise_seed, item index), never on the
// weights, so the loss is a clean function of the parameters.
//
// The single_stream ablation removes the image-term contribution to loss and
// gradients; the forward pass itself is unchanged, so the loss drops by
// exactly the image-term value.
inline TrainStepResult train_step(const std::vector<TrainItem>& batch, const DiTWeights& weights,
                                  const DiTConfig& cfg, GuidanceClients& clients,
                                  std::uint64_t noise_seed, bool with_gradients = true) {
  if (batch.empty()) throw InputError("train_step: empty batch");
  cfg.validate();

  std::vector<detail::ItemEval> evals;
  evals.reserve(batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainItem& item = batch[i];
    for (const LatentGrid* g :
         {&item.source_video, &item.target_video, &item.raw_ref, &item.harmonized_ref})
      g->validate();
    if (item.target_video.channels != cfg.latent_dim)
      throw InputError("train_step: latent dim does not match config");

    const std::uint64_t item_seed = fnv1a(fnv1a(kFnvOffset, noise_seed), static_cast<std::uint64_t>(i));
    Rng rng(item_seed);
    const double sigma = rng.uniform(0.05, 0.95);

    const LatentGrid source_frame = item.source_video.first_frame(Role::SourceFirstFrame);

    // guidance from the raw reference, exactly as at inference start
    GuidanceEmbedding motion;
    motion.tokens = clients.motion->encode(item.p_desc);
    motion.provenance = GuidanceKind::Motion;
    motion.source_hash = fnv1a(kFnvOffset, item.p_desc);
    motion.validate();
    const GuidanceEmbedding style =
        style_guidance(*clients.vlm, item.raw_ref, source_frame, item.p_style);
    const GuidanceEmbedding insert =
        insert_guidance(*clients.vlm, item.raw_ref, source_frame, item.p_insert);
    const GuidanceEmbedding video_guidance =
        compose_video_guidance(motion, insert, clients.adapter);
    const GuidanceEmbedding image_guidance = clients.adapter.apply(style);

    const Mat video_x0 = patchify(item.target_video).tokens;
    const Mat image_x0 = patchify(item.harmonized_ref).tokens;
    Mat video_eps(video_x0.rows, video_x0.cols);
    Mat image_eps(image_x0.rows, image_x0.cols);
    Rng(fnv1a(item_seed, "video-eps")).fill_normal(video_eps);
    Rng(fnv1a(item_seed, "image-eps")).fill_normal(image_eps);

    LatentGrid video_noisy =
        unpatchify(detail::noised(video_x0, video_eps, sigma),
                   {item.target_video.frames, item.target_video.height, item.target_video.width},
                   Role::TargetVideoLatent);
    LatentGrid image_noisy = unpatchify(
        detail::noised(image_x0, image_eps, sigma),
        {1, item.harmonized_ref.height, item.harmonized_ref.width}, Role::TargetImageLatent);

    const StreamBatch video_in = assemble_stream(
        Stream::Video, {&video_noisy, &item.source_video, &item.harmonized_ref},
        video_guidance.tokens);
    const StreamBatch image_in = assemble_stream(
        Stream::Image, {&image_noisy, &source_frame, &item.raw_ref}, image_guidance.tokens);

    // the forward is always dual; the ablation only rescales the loss terms
    DiTConfig fwd_cfg = cfg;
    fwd_cfg.ablation.single_stream = false;

    Tape tape;
    const TapeWeightIds ids = register_weights(tape, weights);
    const TapeForwardResult fwd =
        dit_forward_on_tape(tape, ids, fwd_cfg, video_in, image_in, sigma);

    const Tape::Id video_mse =
        tape.mean_sq_diff(fwd.video_velocity, detail::velocity_target(video_x0, video_eps));
    const Tape::Id image_mse =
        tape.mean_sq_diff(fwd.image_velocity, detail::velocity_target(image_x0, image_eps));
    const double image_weight = cfg.ablation.single_stream ? 0.0 : 1.0;
    const Tape::Id loss = tape.add_scaled(video_mse, image_mse, 1.0, image_weight);

    detail::ItemEval eval;
    eval.loss = tape.val(loss)(0, 0);
    eval.video_term = tape.val(video_mse)(0, 0);
    eval.image_term = tape.val(image_mse)(0, 0);
    if (!std::isfinite(eval.loss)) throw InputError("train_step: non-finite loss");
    if (with_gradients) {
      tape.backward(loss);
      eval.gradients.reserve(ids.ordered.size());
      for (Tape::Id id : ids.ordered) eval.gradients.push_back(tape.grad(id));
    }
    evals.push_back(std::move(eval));
  }

  // pairwise reduction in index order
  const detail::ItemEval total = pairwise_reduce(
      evals, [](detail::ItemEval a, const detail::ItemEval& b) {
        a.loss += b.loss;
        a.video_term += b.video_term;
        a.image_term += b.image_term;
        for (std::size_t j = 0; j < a.gradients.size(); ++j)
          for (std::size_t k = 0; k < a.gradients[j].data.size(); ++k)
            a.gradients[j].data[k] += b.gradients[j].data[k];
        return a;
      });

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  TrainStepResult result;
  result.loss = total.loss * inv_b;
  result.video_term = total.video_term * inv_b;
  result.image_term = total.image_term * inv_b;
  result.gradients = total.gradients;
  for (Mat& g : result.gradients)
    for (double& v : g.data) v *= inv_b;
  return result;
}

// loss evaluation without backward, for finite-difference probes
inline double train_loss(const std::vector<TrainItem>& batch, const DiTWeights& weights,
                         const DiTConfig& cfg, GuidanceClients& clients,
                         std::uint64_t noise_seed) {
  return train_step(batch, weights, cfg, clients, noise_seed, /*with_gradients=*/false).loss;
}

}  // namespace dsi
