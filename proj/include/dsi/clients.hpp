#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "dsi/grid.hpp"

namespace dsi {

// ----------------------------------------------------------------------------
// Guidance-side model clients. Real backends live behind these interfaces;
// the shipped implementations are deterministic stubs whose outputs are pure
// functions of (seed, prompt, image content).
// ----------------------------------------------------------------------------

struct VlmResponse {
  Mat tokens;                          // token count x embedding dim
  std::vector<std::uint8_t> is_prompt; // 1 for tokens originating from the prompt
};

class VlmClient {
 public:
  virtual ~VlmClient() = default;

  // Concurrent identical queries must return identical results.
  virtual VlmResponse query(std::string_view prompt,
                            const std::vector<const LatentGrid*>& images) = 0;

  virtual std::size_t query_count() const = 0;
};

class MotionEncoderClient {
 public:
  virtual ~MotionEncoderClient() = default;

  virtual Mat encode(std::string_view text) = 0;

  virtual std::size_t encode_count() const = 0;
};

// ----------------------------------------------------------------------------
// Stubs
// ----------------------------------------------------------------------------

struct StubVlmConfig {
  std::uint64_t seed = 0;
  std::size_t dim = 48;
  std::size_t prompt_tokens = 4;
  std::size_t content_tokens = 8;
  bool fail = false; // error-path injection for tests
};

class StubVlmClient final : public VlmClient {
 public:
  explicit StubVlmClient(StubVlmConfig cfg) : cfg_(cfg) {
    if (cfg_.dim < 1) throw InputError("stub vlm: dim must be >= 1");
  }

  VlmResponse query(std::string_view prompt,
                    const std::vector<const LatentGrid*>& images) override {
    count_.fetch_add(1, std::memory_order_relaxed);
    if (cfg_.fail) throw ClientError("vlm", "stub configured to fail");
    std::uint64_t h = fnv1a(kFnvOffset, cfg_.seed);
    h = fnv1a(h, "vlm");
    h = fnv1a(h, prompt);
    for (const LatentGrid* g : images) h = fnv1a(h, g->content_digest());
    Rng rng(h);
    const std::size_t n = cfg_.prompt_tokens + cfg_.content_tokens;
    VlmResponse r;
    r.tokens = Mat(n, cfg_.dim);
    for (double& v : r.tokens.data) v = rng.uniform(-1.0, 1.0);
    r.is_prompt.assign(n, 0);
    for (std::size_t i = 0; i < cfg_.prompt_tokens; ++i) r.is_prompt[i] = 1;
    return r;
  }

  std::size_t query_count() const override { return count_.load(std::memory_order_relaxed); }

  const StubVlmConfig& config() const { return cfg_; }

 private:
  StubVlmConfig cfg_;
  std::atomic<std::size_t> count_{0};
};

struct StubMotionConfig {
  std::uint64_t seed = 0;
  std::size_t dim = 32;
  std::size_t tokens = 6;
  bool fail = false;
};

class StubMotionEncoder final : public MotionEncoderClient {
 public:
  explicit StubMotionEncoder(StubMotionConfig cfg) : cfg_(cfg) {
    if (cfg_.dim < 1 || cfg_.tokens < 1)
      throw InputError("stub motion encoder: dim and token count must be >= 1");
  }

  Mat encode(std::string_view text) override {
    count_.fetch_add(1, std::memory_order_relaxed);
    if (cfg_.fail) throw ClientError("motion", "stub configured to fail");
    std::uint64_t h = fnv1a(kFnvOffset, cfg_.seed);
    h = fnv1a(h, "motion");
    h = fnv1a(h, text);
    Rng rng(h);
    Mat tokens(cfg_.tokens, cfg_.dim);
    for (double& v : tokens.data) v = rng.uniform(-1.0, 1.0);
    return tokens;
  }

  std::size_t encode_count() const override { return count_.load(std::memory_order_relaxed); }

  const StubMotionConfig& config() const { return cfg_; }

 private:
  StubMotionConfig cfg_;
  std::atomic<std::size_t> count_{0};
};

}  // namespace dsi
