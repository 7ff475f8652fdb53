// Command-line front end: sampling, dataset curation, and self-test
// diagnostics over the dual-stream insertion toolkit.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dsi/dsi.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitInputError = 2;
constexpr int kExitClientError = 3;

struct AblationSpec {
  std::vector<std::string> names;

  dsi::AblationFlags flags() const {
    dsi::AblationFlags f;
    for (const std::string& n : names) {
      if (n == "single_stream")
        f.single_stream = true;
      else if (n == "fulldit_rope")
        f.fulldit_rope = true;
      else if (n == "feedback_off")
        f.feedback_off = true;
      else
        throw dsi::InputError("unknown ablation '" + n +
                              "' (expected single_stream, fulldit_rope or feedback_off)");
    }
    return f;
  }
};

dsi::AllClients resolve_clients(const std::string& config_path, std::uint64_t seed,
                                std::size_t guidance_dim) {
  if (config_path.empty()) return dsi::make_stub_clients(seed, guidance_dim);
  return dsi::load_clients(config_path, seed, guidance_dim);
}

int cmd_sample(const std::string& source_path, const std::string& ref_path,
               const std::string& p_insert, const std::string& p_desc,
               const std::string& p_style, std::size_t steps, std::size_t t_start, bool feedback,
               std::uint64_t seed, const std::string& out_dir, const AblationSpec& ablate,
               const std::string& clients_path, std::size_t depth, std::size_t model_dim,
               std::size_t heads, std::size_t guidance_dim) {
  dsi::SampleInputs inputs;
  inputs.source_video = dsi::read_grid(source_path);
  inputs.raw_ref = dsi::read_grid(ref_path);
  inputs.p_insert = p_insert;
  inputs.p_desc = p_desc;
  if (!p_style.empty()) inputs.p_style = p_style;

  dsi::SampleConfig cfg;
  cfg.dit.depth = depth;
  cfg.dit.model_dim = model_dim;
  cfg.dit.heads = heads;
  if (model_dim % heads != 0) throw dsi::InputError("model-dim must be divisible by heads");
  cfg.dit.head_dim = model_dim / heads;
  cfg.dit.guidance_dim = guidance_dim;
  cfg.dit.latent_dim = inputs.source_video.channels;
  cfg.dit.seed = seed;
  cfg.dit.ablation = ablate.flags();
  cfg.feedback.t_start = t_start;
  cfg.feedback.enabled = feedback;
  cfg.steps = steps;
  cfg.seed = seed;

  dsi::AllClients clients = resolve_clients(clients_path, seed, guidance_dim);
  const dsi::SampleResult result = dsi::sample(inputs, cfg, clients.guidance);

  fs::create_directories(out_dir);
  dsi::write_grid(fs::path(out_dir) / "video.dsi", result.video);
  dsi::write_grid(fs::path(out_dir) / "image.dsi", result.image);
  {
    const std::string trace = dsi::format_trace(result.trace);
    const fs::path trace_path = fs::path(out_dir) / "trace.txt";
    std::FILE* fp = std::fopen(trace_path.string().c_str(), "wb");
    if (!fp) throw dsi::InputError("cannot write trace: " + trace_path.string());
    std::fwrite(trace.data(), 1, trace.size(), fp);
    std::fclose(fp);
  }

  std::size_t gated = 0, calls = 0;
  for (const auto& e : result.trace) {
    gated += e.gated ? 1 : 0;
    calls += e.client_calls;
  }
  std::printf("sample: %zu steps, %zu gated, %zu guidance-client calls, outputs in %s\n",
              result.trace.size(), gated, calls, out_dir.c_str());
  return kExitOk;
}

int cmd_curate(const std::string& input_dir, const std::string& out_manifest,
               std::string media_dir, std::uint64_t seed, const std::string& clients_path,
               double area_max, double vis_min) {
  if (!fs::is_directory(input_dir))
    throw dsi::InputError("input directory does not exist: " + input_dir);
  if (media_dir.empty()) media_dir = (fs::path(out_manifest).parent_path() / "media").string();

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(input_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".dsi") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw dsi::InputError("no .dsi tensor files in " + input_dir);

  dsi::AllClients clients = resolve_clients(clients_path, seed, 32);
  dsi::CurationThresholds thresholds;
  thresholds.max_area_ratio = area_max;
  thresholds.min_visibility = vis_min;

  std::vector<dsi::Quadruplet> accepted;
  std::size_t rejected_candidate = 0, rejected_verify = 0;
  for (const fs::path& file : files) {
    const dsi::LatentGrid video = dsi::read_grid(file);
    const auto candidate = dsi::propose_candidate(video, *clients.curation.grounder, thresholds);
    if (!candidate) {
      ++rejected_candidate;
      continue;
    }
    dsi::Quadruplet q =
        dsi::build_quadruplet(video, *candidate, clients.curation, file.stem().string(), media_dir);
    const dsi::VerificationRecord record =
        dsi::verify_quadruplet(q, *clients.curation.agent_a, *clients.curation.agent_b);
    if (record.accepted)
      accepted.push_back(std::move(q));
    else
      ++rejected_verify;
  }
  dsi::persist_manifest(accepted, out_manifest);
  std::printf("curate: %zu accepted, %zu rejected (%zu no candidate, %zu failed verification)\n",
              accepted.size(), rejected_candidate + rejected_verify, rejected_candidate,
              rejected_verify);
  return kExitOk;
}

int cmd_selftest(bool json_output, std::uint64_t seed, const AblationSpec& ablate,
                 const std::string& stream_filter) {
  dsi::SelftestOptions opt;
  opt.seed = seed;
  opt.fulldit = ablate.flags().fulldit_rope;
  if (stream_filter == "video")
    opt.stream = dsi::Stream::Video;
  else if (stream_filter == "image")
    opt.stream = dsi::Stream::Image;
  else if (!stream_filter.empty() && stream_filter != "both")
    throw dsi::InputError("unknown stream filter '" + stream_filter + "'");

  const std::vector<dsi::PropertyResult> results = dsi::run_selftest(opt);
  std::vector<std::string> failed;
  for (const auto& r : results) {
    if (json_output) {
      nlohmann::json j;
      j["name"] = r.name;
      j["pass"] = r.pass;
      j["measured"] = r.measured;
      j["threshold"] = r.threshold;
      std::printf("%s\n", j.dump().c_str());
    } else {
      std::printf("%-44s %s  measured=%.3e threshold=%.3e%s%s\n", r.name.c_str(),
                  r.pass ? "PASS" : "FAIL", r.measured, r.threshold, r.note.empty() ? "" : "  | ",
                  r.note.c_str());
    }
    if (!r.pass) failed.push_back(r.name);
  }
  if (!failed.empty()) {
    std::fprintf(stderr, "selftest: %zu properties failed:\n", failed.size());
    for (const auto& name : failed) std::fprintf(stderr, "  %s\n", name.c_str());
    return kExitPropertyFailure;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-stream insertion toolkit"};
  app.require_subcommand(1);

  // sample
  auto* sample = app.add_subcommand("sample", "run the closed-loop dual-stream sampler");
  std::string source_path, ref_path, p_insert, p_desc, p_style, out_dir = "out";
  std::string clients_path, stream_filter;
  std::size_t steps = 10, t_start = 0, depth = 2, model_dim = 64, heads = 4, guidance_dim = 32;
  std::uint64_t seed = 0;
  std::string feedback = "on";
  AblationSpec ablate;
  sample->add_option("--source", source_path, "source video tensor file")->required();
  sample->add_option("--ref", ref_path, "raw reference image tensor file")->required();
  sample->add_option("--p-insert", p_insert, "coarse insertion instruction")->required();
  sample->add_option("--p-desc", p_desc, "overall video description");
  sample->add_option("--p-style", p_style, "style system prompt override");
  sample->add_option("--steps", steps, "denoising steps");
  sample->add_option("--t-start", t_start, "feedback threshold: refresh while t_index >= t-start");
  sample->add_option("--feedback", feedback, "on|off")->check(CLI::IsMember({"on", "off"}));
  sample->add_option("--seed", seed, "run seed");
  sample->add_option("--out", out_dir, "output directory");
  sample->add_option("--ablate", ablate.names, "ablation arm (repeatable)");
  sample->add_option("--clients", clients_path, "client config json");
  sample->add_option("--depth", depth, "transformer blocks");
  sample->add_option("--model-dim", model_dim, "model width");
  sample->add_option("--heads", heads, "attention heads");
  sample->add_option("--guidance-dim", guidance_dim, "cross-attention dim");

  // curate
  auto* curate = app.add_subcommand("curate", "synthesize and verify training quadruplets");
  std::string input_dir, out_manifest = "manifest.dsv", media_dir;
  double area_max = 0.35, vis_min = 0.9;
  curate->add_option("--input-dir", input_dir, "directory of raw video tensor files")->required();
  curate->add_option("--out", out_manifest, "manifest output path");
  curate->add_option("--media-dir", media_dir, "directory for generated tensor files");
  curate->add_option("--seed", seed, "run seed");
  curate->add_option("--clients", clients_path, "client config json");
  curate->add_option("--area-max", area_max, "max bbox area ratio for candidates");
  curate->add_option("--vis-min", vis_min, "min visibility ratio for candidates");

  // selftest
  auto* selftest = app.add_subcommand("selftest", "run the invariant property suites");
  bool json_output = false;
  selftest->add_flag("--json", json_output, "one json object per property");
  selftest->add_option("--seed", seed, "suite seed");
  selftest->add_option("--ablate", ablate.names, "ablation arm (repeatable)");
  selftest->add_option("--stream", stream_filter, "video|image|both")
      ->check(CLI::IsMember({"video", "image", "both"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e); // --help
    app.exit(e);
    return kExitInputError;
  }

  try {
    if (sample->parsed())
      return cmd_sample(source_path, ref_path, p_insert, p_desc, p_style, steps, t_start,
                        feedback == "on", seed, out_dir, ablate, clients_path, depth, model_dim,
                        heads, guidance_dim);
    if (curate->parsed())
      return cmd_curate(input_dir, out_manifest, media_dir, seed, clients_path, area_max, vis_min);
    if (selftest->parsed()) return cmd_selftest(json_output, seed, ablate, stream_filter);
  } catch (const dsi::ClientError& e) {
    std::fprintf(stderr, "client error [%s]: %s\n", e.stage().c_str(), e.what());
    return kExitClientError;
  } catch (const dsi::InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitInputError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kExitInputError;
  }
  return kExitInputError;
}
