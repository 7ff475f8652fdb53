#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "dsi/clients.hpp"
#include "dsi/curation.hpp"
#include "dsi/guidance.hpp"

namespace dsi {

// Client wiring for a whole run: the guidance side (reasoning + motion
// encoders and the adapter) plus the curation pipeline side.
struct AllClients {
  GuidanceClients guidance;
  ClientSet curation;
};

inline AllClients make_stub_clients(std::uint64_t seed, std::size_t guidance_dim) {
  AllClients all;
  all.guidance = stub_guidance_clients(fnv1a(fnv1a(kFnvOffset, seed), "guidance"), guidance_dim);
  all.curation = stub_client_set(fnv1a(fnv1a(kFnvOffset, seed), "curation"));
  return all;
}

namespace detail {

using json = nlohmann::json;

inline std::uint64_t cfg_seed(const json& j, std::uint64_t fallback) {
  if (j.contains("seed")) return j.at("seed").get<std::uint64_t>();
  return fallback;
}

inline void require_stub_backend(const json& j, const std::string& role) {
  const std::string backend = j.value("backend", std::string("stub"));
  if (backend != "stub")
    throw ClientError(role, "unknown backend '" + backend + "' (only 'stub' ships with this build)");
}

inline std::array<bool, 4> parse_verdicts(const json& j) {
  std::array<bool, 4> v = {true, true, true, true};
  if (j.contains("verdicts")) {
    const json& jv = j.at("verdicts");
    for (AnomalyCategory c : kAnomalyCategories) {
      const char* name = anomaly_name(c);
      if (jv.contains(name)) v[static_cast<std::size_t>(c)] = jv.at(name).get<bool>();
    }
  }
  if (j.contains("fail_categories"))
    for (const auto& name : j.at("fail_categories")) {
      bool known = false;
      for (AnomalyCategory c : kAnomalyCategories)
        if (name.get<std::string>() == anomaly_name(c)) {
          v[static_cast<std::size_t>(c)] = false;
          known = true;
        }
      if (!known)
        throw InputError("client config: unknown anomaly category '" +
                         name.get<std::string>() + "'");
    }
  return v;
}

}  // namespace detail

// Loads the role -> backend map. Every role is optional; missing roles get
// stubs seeded from default_seed. The stub backend honors a 64-bit "seed"
// plus per-role knobs documented in the README.
inline AllClients load_clients(const std::filesystem::path& path, std::uint64_t default_seed,
                               std::size_t guidance_dim) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open client config: " + path.string());
  detail::json j;
  try {
    in >> j;
  } catch (const detail::json::exception& e) {
    throw InputError("client config parse error: " + std::string(e.what()));
  }

  AllClients all = make_stub_clients(default_seed, guidance_dim);
  const auto sub = [default_seed](std::string_view role) {
    return fnv1a(fnv1a(kFnvOffset, default_seed), role);
  };

  if (j.contains("vlm")) {
    const auto& c = j.at("vlm");
    detail::require_stub_backend(c, "vlm");
    StubVlmConfig cfg;
    cfg.seed = detail::cfg_seed(c, sub("vlm"));
    cfg.dim = c.value("dim", cfg.dim);
    cfg.prompt_tokens = c.value("prompt_tokens", cfg.prompt_tokens);
    cfg.content_tokens = c.value("content_tokens", cfg.content_tokens);
    cfg.fail = c.value("fail", false);
    all.guidance.vlm = std::make_shared<StubVlmClient>(cfg);
  }
  if (j.contains("motion")) {
    const auto& c = j.at("motion");
    detail::require_stub_backend(c, "motion");
    StubMotionConfig cfg;
    cfg.seed = detail::cfg_seed(c, sub("motion"));
    cfg.dim = c.value("dim", guidance_dim);
    cfg.tokens = c.value("tokens", cfg.tokens);
    cfg.fail = c.value("fail", false);
    all.guidance.motion = std::make_shared<StubMotionEncoder>(cfg);
  }
  {
    // adapter dims follow the configured vlm/motion dims
    const auto* vlm = dynamic_cast<const StubVlmClient*>(all.guidance.vlm.get());
    const std::size_t in_dim = vlm ? vlm->config().dim : 24;
    std::uint64_t adapter_seed = sub("adapter");
    bool identity = false;
    if (j.contains("adapter")) {
      adapter_seed = detail::cfg_seed(j.at("adapter"), adapter_seed);
      identity = j.at("adapter").value("identity", false);
    }
    all.guidance.adapter = identity ? AdapterMap::identity(guidance_dim)
                                    : AdapterMap::seeded(in_dim, guidance_dim, adapter_seed);
  }

  if (j.contains("grounder")) {
    const auto& c = j.at("grounder");
    detail::require_stub_backend(c, "grounder");
    StubGrounderConfig cfg;
    cfg.seed = detail::cfg_seed(c, sub("grounder"));
    cfg.bbox_area_ratio = c.value("bbox_area_ratio", cfg.bbox_area_ratio);
    cfg.visibility_ratio = c.value("visibility_ratio", cfg.visibility_ratio);
    cfg.fail = c.value("fail", false);
    all.curation.grounder = std::make_shared<StubGrounder>(cfg);
  }
  if (j.contains("segmenter")) {
    const auto& c = j.at("segmenter");
    detail::require_stub_backend(c, "segmenter");
    all.curation.segmenter = std::make_shared<StubSegmenter>(
        StubSegmenterConfig{detail::cfg_seed(c, sub("segmenter")), c.value("fail", false)});
  }
  if (j.contains("remover")) {
    const auto& c = j.at("remover");
    detail::require_stub_backend(c, "remover");
    all.curation.remover = std::make_shared<StubRemover>(
        StubRemoverConfig{detail::cfg_seed(c, sub("remover")), c.value("fail", false)});
  }
  if (j.contains("completer")) {
    const auto& c = j.at("completer");
    detail::require_stub_backend(c, "completer");
    all.curation.completer = std::make_shared<StubCompleter>(
        StubCompleterConfig{detail::cfg_seed(c, sub("completer")), c.value("fail", false)});
  }
  if (j.contains("styler")) {
    const auto& c = j.at("styler");
    detail::require_stub_backend(c, "styler");
    StubStylerConfig cfg;
    cfg.seed = detail::cfg_seed(c, sub("styler"));
    if (c.contains("templates")) cfg.templates = c.at("templates").get<std::vector<std::string>>();
    cfg.fail = c.value("fail", false);
    all.curation.styler = std::make_shared<StubStyler>(std::move(cfg));
  }
  if (j.contains("captioner")) {
    const auto& c = j.at("captioner");
    detail::require_stub_backend(c, "captioner");
    all.curation.captioner = std::make_shared<StubCaptioner>(
        StubCaptionerConfig{detail::cfg_seed(c, sub("captioner")), c.value("fail", false)});
  }
  for (const char* agent : {"agent_a", "agent_b"}) {
    if (!j.contains(agent)) continue;
    const auto& c = j.at(agent);
    detail::require_stub_backend(c, agent);
    StubAgentConfig cfg;
    cfg.seed = detail::cfg_seed(c, sub(agent));
    cfg.verdicts = detail::parse_verdicts(c);
    cfg.fail = c.value("fail", false);
    auto made = std::make_shared<StubVerifierAgent>(cfg);
    if (std::string(agent) == "agent_a")
      all.curation.agent_a = made;
    else
      all.curation.agent_b = made;
  }
  return all;
}

}  // namespace dsi
