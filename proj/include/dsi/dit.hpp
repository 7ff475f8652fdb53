#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dsi/attention.hpp"
#include "dsi/guidance.hpp"
#include "dsi/layout.hpp"
#include "dsi/rope.hpp"
#include "dsi/tape.hpp"

namespace dsi {

// ----------------------------------------------------------------------------
// Configuration
// ----------------------------------------------------------------------------

struct AblationFlags {
  bool single_stream = false; // no cross-stream K/V injection; image loss dropped
  bool fulldit_rope = false;  // frame-append coordinates instead of role offsets
  bool feedback_off = false;  // closed-loop guidance refresh disabled
};

struct DiTConfig {
  std::size_t depth = 2;
  std::size_t model_dim = 64;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t guidance_dim = 32; // cross-attention dim d_g
  std::size_t latent_dim = 16;   // grid channel dim
  std::size_t mlp_mult = 4;
  std::uint64_t seed = 0;
  double rope_base = 10000.0;
  AblationFlags ablation;

  RopeConfig rope() const { return RopeConfig::for_head_dim(head_dim, rope_base); }

  void validate() const {
    if (model_dim != heads * head_dim)
      throw InputError("dit: model_dim must equal heads * head_dim");
    if (depth < 1) throw InputError("dit: depth must be >= 1");
    rope().validate();
  }
};

// ----------------------------------------------------------------------------
// Weights (shared between the two streams)
// ----------------------------------------------------------------------------

inline constexpr std::size_t kSigmaFeatures = 8;

inline Mat sigma_features(double sigma) {
  Mat f(1, kSigmaFeatures);
  double freq = 3.14159265358979323846;
  for (std::size_t j = 0; j < kSigmaFeatures / 2; ++j, freq *= 2.0) {
    f(0, 2 * j) = std::sin(freq * sigma);
    f(0, 2 * j + 1) = std::cos(freq * sigma);
  }
  return f;
}

struct BlockWeights {
  Mat attn_gain; // 1 x model_dim
  Mat wq, wk, wv, wo;
  Mat cross_gain;
  Mat wcq; // model_dim x model_dim
  Mat wck; // guidance_dim x model_dim
  Mat wcv; // guidance_dim x model_dim
  Mat wco;
  Mat mlp_gain;
  Mat w1, w2;
};

struct DiTWeights {
  Mat embed;   // latent_dim x model_dim
  Mat sigma_w; // kSigmaFeatures x model_dim
  std::vector<BlockWeights> blocks;
  Mat out_gain;
  Mat out_proj; // model_dim x latent_dim

  static DiTWeights seeded(const DiTConfig& cfg) {
    cfg.validate();
    Rng rng(fnv1a(fnv1a(kFnvOffset, cfg.seed), "dit-weights"));
    const auto init = [&rng](std::size_t r, std::size_t c) {
      Mat m(r, c);
      rng.fill_normal(m, 1.0 / std::sqrt(static_cast<double>(r)));
      return m;
    };
    const auto ones = [](std::size_t c) {
      Mat m(1, c);
      for (double& v : m.data) v = 1.0;
      return m;
    };
    DiTWeights w;
    w.embed = init(cfg.latent_dim, cfg.model_dim);
    w.sigma_w = init(kSigmaFeatures, cfg.model_dim);
    const std::size_t mlp_dim = cfg.mlp_mult * cfg.model_dim;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
      BlockWeights b;
      b.attn_gain = ones(cfg.model_dim);
      b.wq = init(cfg.model_dim, cfg.model_dim);
      b.wk = init(cfg.model_dim, cfg.model_dim);
      b.wv = init(cfg.model_dim, cfg.model_dim);
      b.wo = init(cfg.model_dim, cfg.model_dim);
      b.cross_gain = ones(cfg.model_dim);
      b.wcq = init(cfg.model_dim, cfg.model_dim);
      b.wck = init(cfg.guidance_dim, cfg.model_dim);
      b.wcv = init(cfg.guidance_dim, cfg.model_dim);
      b.wco = init(cfg.model_dim, cfg.model_dim);
      b.mlp_gain = ones(cfg.model_dim);
      b.w1 = init(cfg.model_dim, mlp_dim);
      b.w2 = init(mlp_dim, cfg.model_dim);
      w.blocks.push_back(std::move(b));
    }
    w.out_gain = ones(cfg.model_dim);
    w.out_proj = init(cfg.model_dim, cfg.latent_dim);
    return w;
  }

  // named parameter list; order is the gradient order used everywhere
  std::vector<std::pair<std::string, Mat*>> params() {
    std::vector<std::pair<std::string, Mat*>> p;
    p.emplace_back("embed", &embed);
    p.emplace_back("sigma_w", &sigma_w);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string b = "block" + std::to_string(l) + ".";
      BlockWeights& bw = blocks[l];
      p.emplace_back(b + "attn_gain", &bw.attn_gain);
      p.emplace_back(b + "wq", &bw.wq);
      p.emplace_back(b + "wk", &bw.wk);
      p.emplace_back(b + "wv", &bw.wv);
      p.emplace_back(b + "wo", &bw.wo);
      p.emplace_back(b + "cross_gain", &bw.cross_gain);
      p.emplace_back(b + "wcq", &bw.wcq);
      p.emplace_back(b + "wck", &bw.wck);
      p.emplace_back(b + "wcv", &bw.wcv);
      p.emplace_back(b + "wco", &bw.wco);
      p.emplace_back(b + "mlp_gain", &bw.mlp_gain);
      p.emplace_back(b + "w1", &bw.w1);
      p.emplace_back(b + "w2", &bw.w2);
    }
    p.emplace_back("out_gain", &out_gain);
    p.emplace_back("out_proj", &out_proj);
    return p;
  }
};

// ----------------------------------------------------------------------------
// Assembled stream inputs
// ----------------------------------------------------------------------------

struct StreamBatch {
  SegmentLayout layout;
  Mat tokens;   // layout.total_tokens x latent_dim, in canonical segment order
  Mat guidance; // guidance tokens x guidance_dim
};

// Patchifies the given grids into one token matrix following the canonical
// segment order of the stream's layout.
inline StreamBatch assemble_stream(Stream stream, const std::vector<const LatentGrid*>& grids,
                                   Mat guidance) {
  std::vector<std::pair<Role, GridDims>> parts;
  parts.reserve(grids.size());
  std::size_t channels = 0;
  for (const LatentGrid* g : grids) {
    g->validate();
    if (channels == 0)
      channels = g->channels;
    else if (g->channels != channels)
      throw InputError("assemble_stream: grids disagree on channel dim");
    parts.emplace_back(g->role, GridDims{g->frames, g->height, g->width});
  }
  StreamBatch batch;
  batch.layout = build_layout(stream, parts);
  batch.tokens = Mat(batch.layout.total_tokens, channels);
  for (const Segment& seg : batch.layout.segments) {
    const LatentGrid* grid = nullptr;
    for (const LatentGrid* g : grids)
      if (g->role == seg.role) grid = g;
    TokenSeq seq = patchify(*grid);
    for (std::size_t k = 0; k < seq.tokens.rows; ++k)
      for (std::size_t c = 0; c < channels; ++c)
        batch.tokens(seg.begin + k, c) = seq.tokens(k, c);
  }
  batch.guidance = std::move(guidance);
  return batch;
}

// ----------------------------------------------------------------------------
// Forward pass
// ----------------------------------------------------------------------------

struct TapeBlockIds {
  Tape::Id attn_gain, wq, wk, wv, wo;
  Tape::Id cross_gain, wcq, wck, wcv, wco;
  Tape::Id mlp_gain, w1, w2;
};

struct TapeWeightIds {
  Tape::Id embed, sigma_w;
  std::vector<TapeBlockIds> blocks;
  Tape::Id out_gain, out_proj;
  std::vector<Tape::Id> ordered; // matches DiTWeights::params() order
};

// Leaf registration order matches DiTWeights::params().
inline TapeWeightIds register_weights(Tape& t, const DiTWeights& w) {
  TapeWeightIds ids;
  const auto add = [&](const Mat& m) {
    ids.ordered.push_back(t.leaf(m));
    return ids.ordered.back();
  };
  ids.embed = add(w.embed);
  ids.sigma_w = add(w.sigma_w);
  for (const BlockWeights& b : w.blocks) {
    TapeBlockIds tb;
    tb.attn_gain = add(b.attn_gain);
    tb.wq = add(b.wq);
    tb.wk = add(b.wk);
    tb.wv = add(b.wv);
    tb.wo = add(b.wo);
    tb.cross_gain = add(b.cross_gain);
    tb.wcq = add(b.wcq);
    tb.wck = add(b.wck);
    tb.wcv = add(b.wcv);
    tb.wco = add(b.wco);
    tb.mlp_gain = add(b.mlp_gain);
    tb.w1 = add(b.w1);
    tb.w2 = add(b.w2);
    ids.blocks.push_back(tb);
  }
  ids.out_gain = add(w.out_gain);
  ids.out_proj = add(w.out_proj);
  return ids;
}

struct TapeForwardResult {
  Tape::Id video_velocity = 0;
  Tape::Id image_velocity = 0;
  // per layer, per head (key id, value id) retained from the image stream
  std::vector<std::vector<std::pair<Tape::Id, Tape::Id>>> image_kv_ids;
};

namespace detail {

struct StreamCtx {
  const SegmentLayout* layout;
  std::vector<TokenCoord> coords;
  AttentionMask self_mask;
  Tape::Id guidance;
  AttentionMask cross_mask;
};

inline std::vector<Tape::Id> split_heads(Tape& t, Tape::Id x, std::size_t heads,
                                         std::size_t head_dim) {
  std::vector<Tape::Id> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h)
    out.push_back(t.slice_cols(x, h * head_dim, (h + 1) * head_dim));
  return out;
}

}  // namespace detail

// Runs both streams through the shared blocks on the given tape. Per layer the
// image stream's self-attention executes first; its rotated keys and values
// are retained and appended to the video stream's self-attention unless the
// single_stream ablation is on. Guidance enters through cross-attention.
// Velocities are read off the target segments only.
inline TapeForwardResult dit_forward_on_tape(Tape& t, const TapeWeightIds& w,
                                             const DiTConfig& cfg, const StreamBatch& video,
                                             const StreamBatch& image, double sigma) {
  cfg.validate();
  for (const StreamBatch* b : {&video, &image}) {
    if (b->tokens.cols != cfg.latent_dim)
      throw InputError("dit_forward: token channel dim does not match config");
    if (b->tokens.rows != b->layout.total_tokens)
      throw InputError("dit_forward: token count does not match layout");
    if (b->guidance.rows == 0 || b->guidance.cols != cfg.guidance_dim)
      throw InputError("dit_forward: guidance must be nonempty with the configured dim");
  }
  if (video.layout.stream != Stream::Video || image.layout.stream != Stream::Image)
    throw InputError("dit_forward: stream/layout mismatch");

  const RopeConfig rope_cfg = cfg.rope();
  const bool inject = !cfg.ablation.single_stream;

  detail::StreamCtx img;
  img.layout = &image.layout;
  img.coords = cfg.ablation.fulldit_rope ? detail::assign_coordinates_fulldit(image.layout)
                                         : assign_coordinates(image.layout);
  img.self_mask = build_semi_mask(image.layout, 0);
  img.guidance = t.leaf(image.guidance);
  img.cross_mask = AttentionMask(image.layout.total_tokens, image.guidance.rows, true);

  detail::StreamCtx vid;
  vid.layout = &video.layout;
  vid.coords = cfg.ablation.fulldit_rope ? detail::assign_coordinates_fulldit(video.layout)
                                         : assign_coordinates(video.layout);
  vid.self_mask = build_semi_mask(video.layout, inject ? image.layout.total_tokens : 0);
  vid.guidance = t.leaf(video.guidance);
  vid.cross_mask = AttentionMask(video.layout.total_tokens, video.guidance.rows, true);

  const Tape::Id sigma_in = t.leaf(sigma_features(sigma));
  const Tape::Id sigma_emb = t.matmul(sigma_in, w.sigma_w);
  Tape::Id x_v = t.add_rowvec(t.matmul(t.leaf(video.tokens), w.embed), sigma_emb);
  Tape::Id x_i = t.add_rowvec(t.matmul(t.leaf(image.tokens), w.embed), sigma_emb);

  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  TapeForwardResult result;

  const auto self_qkv = [&](Tape::Id x, const TapeBlockIds& b, const detail::StreamCtx& ctx) {
    const Tape::Id xn = t.rms_norm(x, b.attn_gain);
    auto q = detail::split_heads(t, t.matmul(xn, b.wq), cfg.heads, cfg.head_dim);
    auto k = detail::split_heads(t, t.matmul(xn, b.wk), cfg.heads, cfg.head_dim);
    auto v = detail::split_heads(t, t.matmul(xn, b.wv), cfg.heads, cfg.head_dim);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      q[h] = t.rope(q[h], ctx.coords, rope_cfg);
      k[h] = t.rope(k[h], ctx.coords, rope_cfg);
    }
    return std::tuple{q, k, v};
  };

  const auto cross_attend = [&](Tape::Id x, const TapeBlockIds& b, const detail::StreamCtx& ctx) {
    const Tape::Id xn = t.rms_norm(x, b.cross_gain);
    auto q = detail::split_heads(t, t.matmul(xn, b.wcq), cfg.heads, cfg.head_dim);
    auto k = detail::split_heads(t, t.matmul(ctx.guidance, b.wck), cfg.heads, cfg.head_dim);
    auto v = detail::split_heads(t, t.matmul(ctx.guidance, b.wcv), cfg.heads, cfg.head_dim);
    std::vector<Tape::Id> heads_out;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const Tape::Id p =
          t.masked_softmax(t.scale(t.matmul_nt(q[h], k[h]), inv_sqrt_hd), ctx.cross_mask);
      heads_out.push_back(t.matmul(p, v[h]));
    }
    return t.add(x, t.matmul(t.concat_cols(heads_out), b.wco));
  };

  const auto mlp = [&](Tape::Id x, const TapeBlockIds& b) {
    const Tape::Id xn = t.rms_norm(x, b.mlp_gain);
    return t.add(x, t.matmul(t.silu(t.matmul(xn, b.w1)), b.w2));
  };

  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const TapeBlockIds& b = w.blocks[l];

    // image stream is processed first; its K/V are what the video stream sees
    auto [qi, ki, vi] = self_qkv(x_i, b, img);
    std::vector<std::pair<Tape::Id, Tape::Id>> layer_kv;
    std::vector<Tape::Id> img_heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const Tape::Id p =
          t.masked_softmax(t.scale(t.matmul_nt(qi[h], ki[h]), inv_sqrt_hd), img.self_mask);
      img_heads.push_back(t.matmul(p, vi[h]));
      layer_kv.emplace_back(ki[h], vi[h]);
    }
    x_i = t.add(x_i, t.matmul(t.concat_cols(img_heads), b.wo));

    auto [qv, kv, vv] = self_qkv(x_v, b, vid);
    std::vector<Tape::Id> vid_heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      Tape::Id keys = kv[h];
      Tape::Id vals = vv[h];
      if (inject) {
        keys = t.concat_rows(keys, layer_kv[h].first);
        vals = t.concat_rows(vals, layer_kv[h].second);
      }
      const Tape::Id p =
          t.masked_softmax(t.scale(t.matmul_nt(qv[h], keys), inv_sqrt_hd), vid.self_mask);
      vid_heads.push_back(t.matmul(p, vals));
    }
    x_v = t.add(x_v, t.matmul(t.concat_cols(vid_heads), b.wo));

    x_i = cross_attend(x_i, b, img);
    x_v = cross_attend(x_v, b, vid);
    x_i = mlp(x_i, b);
    x_v = mlp(x_v, b);

    result.image_kv_ids.push_back(inject ? layer_kv
                                         : std::vector<std::pair<Tape::Id, Tape::Id>>{});
  }

  const Tape::Id out_v = t.matmul(t.rms_norm(x_v, w.out_gain), w.out_proj);
  const Tape::Id out_i = t.matmul(t.rms_norm(x_i, w.out_gain), w.out_proj);
  result.video_velocity = t.slice_rows(out_v, video.layout.target().begin,
                                       video.layout.target().end);
  result.image_velocity = t.slice_rows(out_i, image.layout.target().begin,
                                       image.layout.target().end);
  return result;
}

struct DiTForward {
  Mat video_velocity; // video target tokens x latent_dim
  Mat image_velocity; // image target tokens x latent_dim
  std::vector<StreamKV> image_kv; // one per layer; empty heads when not injecting
};

inline DiTForward dit_forward(const DiTWeights& weights, const DiTConfig& cfg,
                              const StreamBatch& video, const StreamBatch& image, double sigma) {
  Tape t;
  const TapeWeightIds ids = register_weights(t, weights);
  const TapeForwardResult r = dit_forward_on_tape(t, ids, cfg, video, image, sigma);
  DiTForward out;
  out.video_velocity = t.val(r.video_velocity);
  out.image_velocity = t.val(r.image_velocity);
  for (const auto& layer : r.image_kv_ids) {
    StreamKV kv;
    kv.source_layout = image.layout;
    for (const auto& [k_id, v_id] : layer) {
      kv.keys.push_back(t.val(k_id));
      kv.values.push_back(t.val(v_id));
    }
    out.image_kv.push_back(std::move(kv));
  }
  return out;
}

}  // namespace dsi
