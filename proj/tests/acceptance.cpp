// Acceptance suite: runs every criterion at its stated tolerance and prints
// one pass/fail line per criterion. Exit code is the number of failures.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dsi/dsi.hpp"

using namespace dsi;
namespace fs = std::filesystem;

namespace {

int failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int index, const std::string& name, bool pass, const std::string& detail,
            double runtime_s) {
  std::printf("[%s] %2d. %-38s %s (%.2fs)\n", pass ? "PASS" : "FAIL", index, name.c_str(),
              detail.c_str(), runtime_s);
  if (!pass) ++failures;
}

void criterion(int index, const std::string& name,
               const std::function<std::pair<bool, std::string>()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = false;
  std::string detail;
  try {
    std::tie(pass, detail) = body();
  } catch (const std::exception& e) {
    pass = false;
    detail = std::string("exception: ") + e.what();
  }
  report(index, name, pass, detail, seconds_since(t0));
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DSI_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

char fmt_buf[512];

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  std::snprintf(fmt_buf, sizeof fmt_buf, f, args...);
  return fmt_buf;
}

}  // namespace

int main() {
  const std::uint64_t seed = 20240811;

  // 1. per-stream coordinate disjointness, and the frame-append contrast
  criterion(1, "dual-rope disjointness", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const DisjointnessReport d = rope_disjointness(seed, 100, 8);
    const FrameAppendReport f = fulldit_adjacency(seed, 100, 8);
    const double elapsed = seconds_since(t0);
    const bool pass = d.collisions == 0 && d.layouts == 200 && f.layouts > 0 &&
                      f.confirmed == f.layouts && elapsed < 5.0;
    return std::pair{pass, fmt("collisions=%zu/%zu layouts; frame-append adjacency (+F exactly, "
                               "spatial overlap) %zu/%zu",
                               d.collisions, d.layouts, f.confirmed, f.layouts)};
  });

  // 2. relative-position identity and norm preservation
  criterion(2, "rope relative-position identity", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const double rel = rope_relative_identity_err(seed, 1000, 32);
    const double norm = rope_norm_drift(seed, 1000, 32);
    const double elapsed = seconds_since(t0);
    return std::pair{rel <= 1e-5 && norm <= 1e-5 && elapsed < 5.0,
                     fmt("identity err=%.3e (<=1e-5), norm drift=%.3e (<=1e-5)", rel, norm)};
  });

  // 3. semi-attention condition isolation + dense oracle
  criterion(3, "semi-attention condition isolation", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const double drift = condition_isolation_drift(seed, 50);
    const double oracle = masked_attention_oracle_err(seed, 30, 64);
    const double elapsed = seconds_since(t0);
    return std::pair{drift <= 1e-7 && oracle <= 1e-6 && elapsed < 10.0,
                     fmt("drift=%.3e (<=1e-7), oracle err=%.3e (<=1e-6)", drift, oracle)};
  });

  // 4. dual-stream injection touches only target rows, shapes verified
  criterion(4, "dual-stream kv injection", [&] {
    const InjectionReport inj = injection_isolation(seed, 20);
    bool shapes_ok = true;
    Rng rng(fnv1a(seed, "shape"));
    for (int i = 0; i < 20; ++i) {
      const SegmentLayout layout = random_layout(Stream::Video, rng, 6, true);
      const std::size_t dim = 2 * (1 + rng.below(16));
      const std::size_t n_inj = 1 + rng.below(8);
      const Mat out = dual_stream_attend(
          random_mat(rng, layout.total_tokens, dim), random_mat(rng, layout.total_tokens, dim),
          random_mat(rng, layout.total_tokens, dim), layout, random_mat(rng, n_inj, dim),
          random_mat(rng, n_inj, dim));
      shapes_ok = shapes_ok && out.rows == layout.total_tokens && out.cols == dim;
    }
    return std::pair{inj.condition_drift <= 1e-7 && inj.target_shift > 0.0 && shapes_ok,
                     fmt("condition drift=%.3e (<=1e-7), target shift=%.3e (>0), shapes ok=%d",
                         inj.condition_drift, inj.target_shift, shapes_ok ? 1 : 0)};
  });

  // 5. one-step x0 and Euler sampler against analytic constructions
  criterion(5, "one-step x0 and euler sampler", [&] {
    const double x0_err = one_step_x0_recovery_err(seed);
    const double euler_err = sampler_consistency_err(seed, {1, 5, 50});
    return std::pair{x0_err <= 1e-5 && euler_err <= 1e-4,
                     fmt("x0 recovery=%.3e (<=1e-5), euler=%.3e (<=1e-4)", x0_err, euler_err)};
  });

  // 6. feedback gating counts
  criterion(6, "feedback gating", [&] {
    const auto gate_counts = [&](std::size_t steps, std::size_t t_start, bool enabled) {
      SampleInputs in;
      in.source_video = seeded_grid(2, 2, 2, 8, Role::SourceVideo, fnv1a(seed, "gsrc"));
      in.raw_ref = seeded_grid(1, 2, 2, 8, Role::RawRefImage, fnv1a(seed, "gref"));
      in.p_insert = "insert it";
      in.p_desc = "scene";
      SampleConfig cfg;
      cfg.dit.depth = 1;
      cfg.dit.model_dim = 16;
      cfg.dit.heads = 1;
      cfg.dit.head_dim = 16;
      cfg.dit.guidance_dim = 8;
      cfg.dit.latent_dim = 8;
      cfg.steps = steps;
      cfg.feedback.t_start = t_start;
      cfg.feedback.enabled = enabled;
      GuidanceClients clients = stub_guidance_clients(fnv1a(seed, "gc"), cfg.dit.guidance_dim);
      const auto* vlm = dynamic_cast<const StubVlmClient*>(clients.vlm.get());
      const SampleResult r = sample(in, cfg, clients);
      std::size_t gated = 0, calls = 0;
      for (const auto& e : r.trace) {
        gated += e.gated ? 1 : 0;
        calls += e.client_calls;
      }
      return std::tuple{gated, calls, vlm->query_count() - 2};
    };
    const auto [g50, c50, q50] = gate_counts(50, 30, true);
    const auto [g10, c10, q10] = gate_counts(10, 6, true);
    const auto [goff, coff, qoff] = gate_counts(10, 6, false);
    const bool pass = g50 == 20 && c50 == 40 && q50 == 40 && g10 == 4 && c10 == 8 && q10 == 8 &&
                      goff == 0 && coff == 0 && qoff == 0;
    return std::pair{pass, fmt("T=50,t0=30: %zu gated/%zu calls; T=10,t0=6: %zu/%zu; off: %zu/%zu",
                               g50, c50, g10, c10, goff, coff)};
  });

  // 7. token selection equals the filter oracle; all-prompt input errors
  criterion(7, "guidance token selection", [&] {
    Rng rng(fnv1a(seed, "select"));
    bool oracle_ok = true;
    for (int trial = 0; trial < 100 && oracle_ok; ++trial) {
      const std::size_t n = 1 + rng.below(64);
      const Mat raw = random_mat(rng, n, 4);
      std::vector<std::uint8_t> flags(n);
      bool kept = false;
      for (auto& f : flags) {
        f = rng.below(2) ? 1 : 0;
        if (!f) kept = true;
      }
      if (!kept) flags[rng.below(n)] = 0;
      const GuidanceEmbedding out = select_guidance_tokens(raw, flags, GuidanceKind::Style, 0);
      std::size_t r = 0;
      for (std::size_t i = 0; i < n && oracle_ok; ++i) {
        if (flags[i]) continue;
        for (std::size_t c = 0; c < 4; ++c)
          if (out.tokens(r, c) != raw(i, c)) oracle_ok = false;
        ++r;
      }
      oracle_ok = oracle_ok && out.tokens.rows == r;
    }
    bool raises = false;
    try {
      select_guidance_tokens(Mat(3, 2), {1, 1, 1}, GuidanceKind::Style, 0);
    } catch (const InputError&) {
      raises = true;
    }
    return std::pair{oracle_ok && raises,
                     fmt("filter oracle over 100 patterns ok=%d, empty-guidance raises=%d",
                         oracle_ok ? 1 : 0, raises ? 1 : 0)};
  });

  // 8. gradient check on the dim-64 toy model, 5 seeds
  criterion(8, "gradient check", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      DiTConfig cfg; // the dim-64 default
      cfg.seed = fnv1a(seed, s);
      worst = std::max(worst, gradient_check_max_rel_err(cfg, fnv1a(seed, 100 + s), 3));
    }

    // single_stream must change the loss by exactly the image-term value
    DiTConfig cfg;
    cfg.seed = seed;
    GuidanceClients clients = stub_guidance_clients(fnv1a(seed, "sc"), cfg.guidance_dim);
    const std::vector<TrainItem> batch = {seeded_train_item(fnv1a(seed, "si"), 2, 2, 3,
                                                            cfg.latent_dim)};
    const DiTWeights weights = DiTWeights::seeded(cfg);
    const TrainStepResult dual = train_step(batch, weights, cfg, clients, 3);
    DiTConfig single_cfg = cfg;
    single_cfg.ablation.single_stream = true;
    const TrainStepResult single = train_step(batch, weights, single_cfg, clients, 3);
    const double term_gap = std::abs((dual.loss - single.loss) - dual.image_term);
    const bool single_ok = single.loss == single.video_term &&
                           single.video_term == dual.video_term && term_gap <= 1e-12;

    const double elapsed = seconds_since(t0);
    return std::pair{worst <= 1e-3 && single_ok && elapsed < 60.0,
                     fmt("max rel err=%.3e (<=1e-3) over 5 seeds; single-stream loss gap=%.1e",
                         worst, term_gap)};
  });

  // 9. curation consensus truth table and manifest round-trip
  criterion(9, "curation consensus and manifest", [&] {
    std::size_t accepted_rows = 0;
    bool sound = true;
    for (unsigned bits = 0; bits < 256; ++bits) {
      StubAgentConfig ca, cb;
      for (std::size_t i = 0; i < 4; ++i) {
        ca.verdicts[i] = (bits >> i) & 1u;
        cb.verdicts[i] = (bits >> (4 + i)) & 1u;
      }
      StubVerifierAgent a(ca), b(cb);
      Quadruplet q;
      q.id = "t";
      q.p_insert = "x";
      const VerificationRecord r = verify_quadruplet(q, a, b);
      if (r.accepted) {
        ++accepted_rows;
        if (bits != 255) sound = false;
      }
    }

    Rng rng(fnv1a(seed, "manifest"));
    const std::string alphabet = "ab\"'=\\\n\r\x1f\t z";
    std::vector<Quadruplet> qs;
    for (int i = 0; i < 50; ++i) {
      Quadruplet q;
      q.id = "q" + std::to_string(i);
      q.provenance = i % 2 ? Provenance::AdaptedEditingDataset : Provenance::SynthesizedFromT2V;
      const auto scramble = [&](std::string base) {
        for (std::size_t k = rng.below(14); k-- > 0;) base += alphabet[rng.below(alphabet.size())];
        return base;
      };
      q.source_video = scramble("a/");
      q.target_video = scramble("b/");
      q.raw_ref = scramble("c/");
      q.harmonized_ref = scramble("d/");
      q.p_insert = scramble("insert ");
      q.p_desc = scramble("");
      q.p_style = scramble("");
      if (i % 3 == 0) {
        StubVerifierAgent a(StubAgentConfig{}), b(StubAgentConfig{});
        verify_quadruplet(q, a, b);
      }
      qs.push_back(q);
    }
    const fs::path path = fs::temp_directory_path() / "dsi_acceptance_manifest.dsv";
    persist_manifest(qs, path);
    const std::vector<Quadruplet> back = load_manifest(path);
    bool lossless = back.size() == qs.size();
    for (std::size_t i = 0; lossless && i < qs.size(); ++i)
      lossless = back[i].id == qs[i].id && back[i].provenance == qs[i].provenance &&
                 back[i].source_video == qs[i].source_video &&
                 back[i].target_video == qs[i].target_video &&
                 back[i].raw_ref == qs[i].raw_ref &&
                 back[i].harmonized_ref == qs[i].harmonized_ref &&
                 back[i].p_insert == qs[i].p_insert && back[i].p_desc == qs[i].p_desc &&
                 back[i].p_style == qs[i].p_style &&
                 back[i].verification.has_value() == qs[i].verification.has_value();
    fs::remove(path);
    return std::pair{accepted_rows == 1 && sound && lossless,
                     fmt("truth table accepts %zu/256 rows (want 1); 50-record round-trip "
                         "lossless=%d",
                         accepted_rows, lossless ? 1 : 0)};
  });

  // 10. end-to-end determinism through the CLI
  criterion(10, "end-to-end determinism", [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = fs::temp_directory_path() / "dsi_acceptance_e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    write_grid(dir / "src.dsi", seeded_grid(4, 2, 4, 16, Role::SourceVideo, fnv1a(seed, "esrc")));
    write_grid(dir / "ref.dsi", seeded_grid(1, 2, 4, 16, Role::RawRefImage, fnv1a(seed, "eref")));
    const std::string base = "sample --source " + (dir / "src.dsi").string() + " --ref " +
                             (dir / "ref.dsi").string() +
                             " --p-insert \"insert the object\" --p-desc \"scene\" --steps 10 "
                             "--t-start 6 --seed 77 --depth 2 --out ";
    const int e1 = run_cli(base + (dir / "run1").string());
    const int e2 = run_cli(base + (dir / "run2").string());
    bool identical = e1 == 0 && e2 == 0;
    for (const char* f : {"video.dsi", "image.dsi", "trace.txt"})
      identical = identical && read_file(dir / "run1" / f) == read_file(dir / "run2" / f) &&
                  !read_file(dir / "run1" / f).empty();
    bool finite = true;
    if (identical) {
      const LatentGrid video = read_grid(dir / "run1" / "video.dsi");
      const LatentGrid image = read_grid(dir / "run1" / "image.dsi");
      for (double v : video.data) finite = finite && std::isfinite(v);
      for (double v : image.data) finite = finite && std::isfinite(v);
    }
    const double elapsed = seconds_since(t0);
    fs::remove_all(dir);
    return std::pair{identical && finite && elapsed < 60.0,
                     fmt("two cli runs byte-identical=%d, outputs finite=%d, %.2fs",
                         identical ? 1 : 0, finite ? 1 : 0, elapsed)};
  });

  if (failures == 0)
    std::printf("acceptance: all 10 criteria passed\n");
  else
    std::printf("acceptance: %d criteria FAILED\n", failures);
  return failures;
}
