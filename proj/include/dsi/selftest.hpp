#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "dsi/attention.hpp"
#include "dsi/rope.hpp"
#include "dsi/sampler.hpp"
#include "dsi/train.hpp"

namespace dsi {

// ----------------------------------------------------------------------------
// Shared random generators for property checks
// ----------------------------------------------------------------------------

// Random per-stream layout. The target is always present; each condition is
// included at random (at least one when force_condition). Source video dims
// mirror the target's, as in the task itself; reference images draw their own
// spatial dims.
inline SegmentLayout random_layout(Stream stream, Rng& rng, std::size_t max_dim = 8,
                                   bool force_condition = false) {
  const auto dim = [&rng, max_dim] { return 1 + rng.below(max_dim); };
  std::vector<std::pair<Role, GridDims>> parts;
  if (stream == Stream::Video) {
    const GridDims target{dim(), dim(), dim()};
    parts.emplace_back(Role::TargetVideoLatent, target);
    bool with_source = rng.below(2) == 0;
    const bool with_ref = rng.below(2) == 0;
    if (force_condition && !with_source && !with_ref) with_source = true;
    if (with_source) parts.emplace_back(Role::SourceVideo, target);
    if (with_ref) parts.emplace_back(Role::TargetRefImage, GridDims{1, dim(), dim()});
  } else {
    parts.emplace_back(Role::TargetImageLatent, GridDims{1, dim(), dim()});
    bool with_sff = rng.below(2) == 0;
    const bool with_ref = rng.below(2) == 0;
    if (force_condition && !with_sff && !with_ref) with_sff = true;
    if (with_sff) parts.emplace_back(Role::SourceFirstFrame, GridDims{1, dim(), dim()});
    if (with_ref) parts.emplace_back(Role::RawRefImage, GridDims{1, dim(), dim()});
  }
  return build_layout(stream, parts);
}

inline Mat random_mat(Rng& rng, std::size_t rows, std::size_t cols) {
  Mat m(rows, cols);
  rng.fill_normal(m);
  return m;
}

namespace oracle {

// Naive dense attention used as an independent reference: long double
// accumulation, no max subtraction, explicit masking.
inline Mat attend_reference(const Mat& q, const Mat& k, const Mat& v, const AttentionMask& mask) {
  Mat out(q.rows, v.cols);
  const long double inv_sqrt_d = 1.0L / std::sqrt(static_cast<long double>(q.cols));
  for (std::size_t i = 0; i < q.rows; ++i) {
    std::vector<long double> w(k.rows, 0.0L);
    long double denom = 0.0L;
    for (std::size_t j = 0; j < k.rows; ++j) {
      if (!mask.at(i, j)) continue;
      long double s = 0.0L;
      for (std::size_t c = 0; c < q.cols; ++c)
        s += static_cast<long double>(q(i, c)) * static_cast<long double>(k(j, c));
      w[j] = std::exp(s * inv_sqrt_d);
      denom += w[j];
    }
    for (std::size_t j = 0; j < k.rows; ++j) {
      if (w[j] == 0.0L) continue;
      const long double p = w[j] / denom;
      for (std::size_t c = 0; c < v.cols; ++c)
        out(i, c) += static_cast<double>(p * static_cast<long double>(v(j, c)));
    }
  }
  return out;
}

}  // namespace oracle

// ----------------------------------------------------------------------------
// Individual property measurements
// ----------------------------------------------------------------------------

// max |dot(R(p1)q, R(p2)k) - dot(q, R(p2-p1)k)| over random draws
inline double rope_relative_identity_err(std::uint64_t seed, std::size_t draws = 1000,
                                         long long max_coord = 32) {
  const RopeConfig cfg = RopeConfig::for_head_dim(16);
  Rng rng(fnv1a(kFnvOffset, seed));
  double worst = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const Mat q = random_mat(rng, 1, cfg.head_dim);
    const Mat k = random_mat(rng, 1, cfg.head_dim);
    const auto coord = [&rng, max_coord] {
      return TokenCoord{static_cast<long long>(rng.below(static_cast<std::uint64_t>(max_coord) + 1)),
                        static_cast<long long>(rng.below(static_cast<std::uint64_t>(max_coord) + 1)),
                        static_cast<long long>(rng.below(static_cast<std::uint64_t>(max_coord) + 1))};
    };
    const TokenCoord p1 = coord();
    const TokenCoord p2 = coord();
    const TokenCoord rel{p2.f - p1.f, p2.w - p1.w, p2.h - p1.h};
    const Mat rq = apply_rope(q, p1, cfg);
    const Mat rk = apply_rope(k, p2, cfg);
    const Mat rk_rel = apply_rope(k, rel, cfg);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t c = 0; c < cfg.head_dim; ++c) {
      lhs += rq(0, c) * rk(0, c);
      rhs += q(0, c) * rk_rel(0, c);
    }
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return worst;
}

inline double rope_norm_drift(std::uint64_t seed, std::size_t draws = 1000,
                              long long max_coord = 32) {
  const RopeConfig cfg = RopeConfig::for_head_dim(16);
  Rng rng(fnv1a(fnv1a(kFnvOffset, seed), "norm"));
  double worst = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const Mat x = random_mat(rng, 1, cfg.head_dim);
    const TokenCoord p{static_cast<long long>(rng.below(static_cast<std::uint64_t>(max_coord) + 1)),
                       static_cast<long long>(rng.below(static_cast<std::uint64_t>(max_coord) + 1)),
                       static_cast<long long>(rng.below(static_cast<std::uint64_t>(max_coord) + 1))};
    worst = std::max(worst, std::abs(l2_norm(apply_rope(x, p, cfg)) - l2_norm(x)));
  }
  return worst;
}

struct DisjointnessReport {
  std::size_t layouts = 0;
  std::size_t collisions = 0;
};

// Brute-force coordinate enumeration per layout; a collision is two tokens
// from different segments sharing an identical (F, W, H).
inline DisjointnessReport rope_disjointness(std::uint64_t seed, std::size_t layouts_per_stream = 100,
                                            std::size_t max_dim = 8,
                                            std::optional<Stream> only = std::nullopt) {
  Rng rng(fnv1a(fnv1a(kFnvOffset, seed), "disjoint"));
  DisjointnessReport report;
  for (Stream stream : {Stream::Video, Stream::Image}) {
    if (only && *only != stream) continue;
    for (std::size_t i = 0; i < layouts_per_stream; ++i) {
      const SegmentLayout layout = random_layout(stream, rng, max_dim);
      const std::vector<TokenCoord> coords = assign_coordinates(layout);
      std::map<std::tuple<long long, long long, long long>, std::size_t> owner;
      ++report.layouts;
      for (std::size_t s = 0; s < layout.segments.size(); ++s) {
        const Segment& seg = layout.segments[s];
        for (std::size_t k = seg.begin; k < seg.end; ++k) {
          const auto key = std::make_tuple(coords[k].f, coords[k].w, coords[k].h);
          auto [it, inserted] = owner.emplace(key, s);
          if (!inserted && it->second != s) ++report.collisions;
        }
      }
    }
  }
  return report;
}

struct FrameAppendReport {
  std::size_t layouts = 0;   // layouts with at least one condition
  std::size_t confirmed = 0; // conditions continue the target frame axis and
                             // overlap it spatially
};

// Demonstrates how the frame-append baseline differs from role offsets: the
// first appended condition starts exactly +F after the target on the frame
// axis while sharing its width/height ranges.
inline FrameAppendReport fulldit_adjacency(std::uint64_t seed, std::size_t layouts_per_stream = 100,
                                           std::size_t max_dim = 8,
                                           std::optional<Stream> only = std::nullopt) {
  Rng rng(fnv1a(fnv1a(kFnvOffset, seed), "fulldit"));
  FrameAppendReport report;
  for (Stream stream : {Stream::Video, Stream::Image}) {
    if (only && *only != stream) continue;
    for (std::size_t i = 0; i < layouts_per_stream; ++i) {
      const SegmentLayout layout = random_layout(stream, rng, max_dim, /*force_condition=*/true);
      if (layout.segments.size() < 2) continue;
      ++report.layouts;
      const std::vector<TokenCoord> coords = detail::assign_coordinates_fulldit(layout);
      const Segment& target = layout.target();
      const Segment& first_cond = layout.segments[1];
      long long min_f = coords[first_cond.begin].f;
      long long min_w = coords[first_cond.begin].w, max_w = min_w;
      long long min_h = coords[first_cond.begin].h, max_h = min_h;
      for (std::size_t k = first_cond.begin; k < first_cond.end; ++k) {
        min_f = std::min(min_f, coords[k].f);
        min_w = std::min(min_w, coords[k].w);
        max_w = std::max(max_w, coords[k].w);
        min_h = std::min(min_h, coords[k].h);
        max_h = std::max(max_h, coords[k].h);
      }
      const bool adjacent = min_f == static_cast<long long>(target.dims.frames);
      const bool w_overlap = min_w < static_cast<long long>(target.dims.width) && max_w >= 0;
      const bool h_overlap = min_h < static_cast<long long>(target.dims.height) && max_h >= 0;
      if (adjacent && w_overlap && h_overlap) ++report.confirmed;
    }
  }
  return report;
}

// Replaces every target-segment token and measures the worst change in
// condition-segment attention outputs.
inline double condition_isolation_drift(std::uint64_t seed, std::size_t trials = 50,
                                        std::optional<Stream> only = std::nullopt) {
  Rng rng(fnv1a(fnv1a(kFnvOffset, seed), "isolation"));
  const std::size_t dim = 16;
  double worst = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    const Stream stream = only ? *only : (i % 2 == 0 ? Stream::Video : Stream::Image);
    const SegmentLayout layout = random_layout(stream, rng, 5, /*force_condition=*/true);
    const AttentionMask mask = build_semi_mask(layout);
    Mat q = random_mat(rng, layout.total_tokens, dim);
    Mat k = random_mat(rng, layout.total_tokens, dim);
    Mat v = random_mat(rng, layout.total_tokens, dim);
    const Mat base = attend(q, k, v, mask);
    const Segment& target = layout.target();
    for (std::size_t r = target.begin; r < target.end; ++r)
      for (std::size_t c = 0; c < dim; ++c) {
        q(r, c) = rng.normal();
        k(r, c) = rng.normal();
        v(r, c) = rng.normal();
      }
    const Mat changed = attend(q, k, v, mask);
    for (const Segment& seg : layout.segments) {
      if (is_target_role(seg.role)) continue;
      for (std::size_t r = seg.begin; r < seg.end; ++r)
        for (std::size_t c = 0; c < dim; ++c)
          worst = std::max(worst, std::abs(changed(r, c) - base(r, c)));
    }
  }
  return worst;
}

// masked attend against the naive dense reference
inline double masked_attention_oracle_err(std::uint64_t seed, std::size_t trials = 30,
                                          std::size_t max_tokens = 64) {
  Rng rng(fnv1a(fnv1a(kFnvOffset, seed), "oracle"));
  const std::size_t dim = 16;
  double worst = 0.0;
  for (std::size_t i = 0; i < trials; ++i) {
    const std::size_t n = 1 + rng.below(max_tokens);
    const Mat q = random_mat(rng, n, dim);
    const Mat k = random_mat(rng, n, dim);
    const Mat v = random_mat(rng, n, dim);
    AttentionMask mask(n, n, false);
    for (std::size_t r = 0; r < n; ++r) {
      mask.set(r, rng.below(n), true); // at least one allowed entry per row
      for (std::size_t c = 0; c < n; ++c)
        if (rng.below(3) != 0) mask.set(r, c, true);
    }
    const Mat got = attend(q, k, v, mask);
    const Mat want = oracle::attend_reference(q, k, v, mask);
    for (std::size_t j = 0; j < got.data.size(); ++j)
      worst = std::max(worst, std::abs(got.data[j] - want.data[j]));
  }
  return worst;
}

struct InjectionReport {
  double condition_drift = 0.0; // must stay ~0
  double target_shift = 0.0;    // must be > 0 (injection is not a no-op)
};

// With injected image K/V, only target rows may move relative to the
// no-injection result.
inline InjectionReport injection_isolation(std::uint64_t seed, std::size_t trials = 20) {
  Rng rng(fnv1a(fnv1a(kFnvOffset, seed), "injection"));
  const std::size_t dim = 16;
  InjectionReport report;
  for (std::size_t i = 0; i < trials; ++i) {
    const SegmentLayout layout = random_layout(Stream::Video, rng, 5, /*force_condition=*/true);
    const Mat q = random_mat(rng, layout.total_tokens, dim);
    const Mat k = random_mat(rng, layout.total_tokens, dim);
    const Mat v = random_mat(rng, layout.total_tokens, dim);
    const std::size_t n_inj = 1 + rng.below(6);
    const Mat ik = random_mat(rng, n_inj, dim);
    const Mat iv = random_mat(rng, n_inj, dim);
    const Mat without = attend(q, k, v, build_semi_mask(layout));
    const Mat with_kv = dual_stream_attend(q, k, v, layout, ik, iv);
    for (const Segment& seg : layout.segments) {
      const bool target = is_target_role(seg.role);
      for (std::size_t r = seg.begin; r < seg.end; ++r)
        for (std::size_t c = 0; c < dim; ++c) {
          const double d = std::abs(with_kv(r, c) - without(r, c));
          if (target)
            report.target_shift = std::max(report.target_shift, d);
          else
            report.condition_drift = std::max(report.condition_drift, d);
        }
    }
  }
  return report;
}

// analytic x0 recovery through one_step_x0 across sigma levels
inline double one_step_x0_recovery_err(std::uint64_t seed) {
  Rng rng(fnv1a(fnv1a(kFnvOffset, seed), "x0"));
  const Mat x0 = random_mat(rng, 6, 8);
  const Mat eps = random_mat(rng, 6, 8);
  double worst = 0.0;
  for (int s = 1; s <= 9; ++s) {
    const double sigma = 0.1 * s;
    Mat x_t(x0.rows, x0.cols);
    Mat v(x0.rows, x0.cols);
    for (std::size_t i = 0; i < x0.data.size(); ++i) {
      x_t.data[i] = (1.0 - sigma) * x0.data[i] + sigma * eps.data[i];
      v.data[i] = eps.data[i] - x0.data[i];
    }
    const Mat rec = one_step_x0(x_t, v, sigma);
    for (std::size_t i = 0; i < x0.data.size(); ++i)
      worst = std::max(worst, std::abs(rec.data[i] - x0.data[i]));
  }
  return worst;
}

// Euler sampling with the oracle velocity v = (x_t - x0) / sigma must land on
// x0 for any step count.
inline double sampler_consistency_err(std::uint64_t seed,
                                      const std::vector<std::size_t>& step_counts = {1, 5, 50}) {
  Rng rng(fnv1a(fnv1a(kFnvOffset, seed), "sampler"));
  const Mat x0 = random_mat(rng, 5, 6);
  const Mat eps = random_mat(rng, 5, 6);
  double worst = 0.0;
  for (std::size_t t_steps : step_counts) {
    const std::vector<double> sigmas = sigma_schedule(t_steps);
    Mat x = eps; // sigma = 1 start
    for (std::size_t k = t_steps; k-- > 0;) {
      Mat v(x.rows, x.cols);
      for (std::size_t i = 0; i < x.data.size(); ++i)
        v.data[i] = (x.data[i] - x0.data[i]) / sigmas[k];
      euler_step(x, v, sigmas[k], k == 0 ? 0.0 : sigmas[k - 1]);
    }
    for (std::size_t i = 0; i < x.data.size(); ++i)
      worst = std::max(worst, std::abs(x.data[i] - x0.data[i]));
  }
  return worst;
}

// ----------------------------------------------------------------------------
// Finite-difference gradient oracle
// ----------------------------------------------------------------------------

inline TrainItem seeded_train_item(std::uint64_t seed, std::size_t frames, std::size_t height,
                                   std::size_t width, std::size_t channels) {
  TrainItem item;
  item.source_video =
      seeded_grid(frames, height, width, channels, Role::SourceVideo, fnv1a(seed, "src"));
  item.target_video =
      seeded_grid(frames, height, width, channels, Role::TargetVideoLatent, fnv1a(seed, "tar"));
  item.raw_ref = seeded_grid(1, height, width, channels, Role::RawRefImage, fnv1a(seed, "raw"));
  item.harmonized_ref =
      seeded_grid(1, height, width, channels, Role::TargetRefImage, fnv1a(seed, "harm"));
  item.p_insert = "insert the object near the center";
  item.p_desc = "slow pan over a quiet scene";
  item.p_style = std::string(kDefaultStylePrompt);
  return item;
}

// Central finite differences on a sampled subset of each weight tensor.
// Relative error uses max(|fd|, |analytic|, 0.01) as denominator so that
// near-zero gradient entries are compared at an absolute 1e-5 scale.
inline double gradient_check_max_rel_err(const DiTConfig& cfg, std::uint64_t seed,
                                         std::size_t coords_per_tensor = 3, double h = 1e-3) {
  GuidanceClients clients = stub_guidance_clients(fnv1a(seed, "clients"), cfg.guidance_dim);
  const std::vector<TrainItem> batch = {
      seeded_train_item(fnv1a(seed, "item"), 2, 2, 3, cfg.latent_dim)};
  DiTWeights weights = DiTWeights::seeded(cfg);
  const std::uint64_t noise_seed = fnv1a(seed, "noise");

  const TrainStepResult analytic = train_step(batch, weights, cfg, clients, noise_seed);

  Rng pick(fnv1a(seed, "pick"));
  double worst = 0.0;
  auto params = weights.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Mat* mat = params[p].second;
    for (std::size_t c = 0; c < coords_per_tensor; ++c) {
      const std::size_t idx = pick.below(mat->data.size());
      const double saved = mat->data[idx];
      mat->data[idx] = saved + h;
      const double up = train_loss(batch, weights, cfg, clients, noise_seed);
      mat->data[idx] = saved - h;
      const double down = train_loss(batch, weights, cfg, clients, noise_seed);
      mat->data[idx] = saved;
      const double fd = (up - down) / (2.0 * h);
      const double an = analytic.gradients[p].data[idx];
      const double denom = std::max({std::abs(fd), std::abs(an), 0.01});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

// ----------------------------------------------------------------------------
// Suite runner
// ----------------------------------------------------------------------------

struct PropertyResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string note;
};

struct SelftestOptions {
  std::uint64_t seed = 2024;
  bool fulldit = false;
  std::optional<Stream> stream;
};

inline std::vector<PropertyResult> run_selftest(const SelftestOptions& opt) {
  std::vector<PropertyResult> results;
  const auto check_le = [&results](std::string name, double measured, double threshold,
                                   std::string note = {}) {
    results.push_back(
        {std::move(name), measured <= threshold, measured, threshold, std::move(note)});
  };

  check_le("rope_relative_identity", rope_relative_identity_err(opt.seed), 1e-5);
  check_le("rope_norm_preservation", rope_norm_drift(opt.seed), 1e-5);

  if (!opt.fulldit) {
    const DisjointnessReport d = rope_disjointness(opt.seed, 100, 8, opt.stream);
    check_le("rope_disjointness", static_cast<double>(d.collisions), 0.0,
             std::to_string(d.layouts) + " layouts");
  } else {
    const FrameAppendReport f = fulldit_adjacency(opt.seed, 100, 8, opt.stream);
    results.push_back({"rope_disjointness_expected_violated",
                       f.confirmed == f.layouts && f.layouts > 0,
                       static_cast<double>(f.confirmed), static_cast<double>(f.layouts),
                       "conditions continue the target frame axis at exactly +F and overlap it "
                       "spatially"});
  }

  check_le("semi_attention_condition_isolation", condition_isolation_drift(opt.seed, 50, opt.stream),
           1e-7);
  check_le("semi_attention_dense_oracle", masked_attention_oracle_err(opt.seed), 1e-6);

  if (!opt.stream || *opt.stream == Stream::Video) {
    const InjectionReport inj = injection_isolation(opt.seed);
    check_le("dual_stream_injection_isolation", inj.condition_drift, 1e-7,
             inj.target_shift > 0.0 ? "target rows shifted as expected"
                                    : "WARNING: injection had no effect on target rows");
    results.back().pass = results.back().pass && inj.target_shift > 0.0;
  }

  check_le("one_step_x0_recovery", one_step_x0_recovery_err(opt.seed), 1e-5);
  check_le("sampler_consistency", sampler_consistency_err(opt.seed), 1e-4);

  DiTConfig grad_cfg;
  grad_cfg.seed = opt.seed;
  check_le("gradient_check", gradient_check_max_rel_err(grad_cfg, opt.seed, 2), 1e-3);

  return results;
}

}  // namespace dsi
