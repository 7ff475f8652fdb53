#pragma once

#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dsi/grid.hpp"
#include "dsi/guidance.hpp"

namespace dsi {

// ----------------------------------------------------------------------------
// Domain types
// ----------------------------------------------------------------------------

enum class Provenance { AdaptedEditingDataset, SynthesizedFromT2V };

inline const char* provenance_name(Provenance p) {
  return p == Provenance::AdaptedEditingDataset ? "AdaptedEditingDataset" : "SynthesizedFromT2V";
}

enum class AnomalyCategory : std::size_t {
  IdentityDrift = 0,
  IncompleteErasure = 1,
  TemporalArtifacts = 2,
  BackgroundPerturbation = 3,
};

inline constexpr std::array<AnomalyCategory, 4> kAnomalyCategories = {
    AnomalyCategory::IdentityDrift, AnomalyCategory::IncompleteErasure,
    AnomalyCategory::TemporalArtifacts, AnomalyCategory::BackgroundPerturbation};

inline const char* anomaly_name(AnomalyCategory c) {
  switch (c) {
    case AnomalyCategory::IdentityDrift: return "IdentityDrift";
    case AnomalyCategory::IncompleteErasure: return "IncompleteErasure";
    case AnomalyCategory::TemporalArtifacts: return "TemporalArtifacts";
    case AnomalyCategory::BackgroundPerturbation: return "BackgroundPerturbation";
  }
  return "?";
}

// Two agents times four categories; a quadruplet survives only if every
// entry passes.
struct VerificationRecord {
  std::array<bool, 4> agent_a{};
  std::array<bool, 4> agent_b{};
  bool accepted = false;

  static VerificationRecord from_checks(const std::array<bool, 4>& a,
                                        const std::array<bool, 4>& b) {
    VerificationRecord r;
    r.agent_a = a;
    r.agent_b = b;
    r.accepted = true;
    for (bool v : a) r.accepted = r.accepted && v;
    for (bool v : b) r.accepted = r.accepted && v;
    return r;
  }

  void validate() const {
    bool all = true;
    for (bool v : agent_a) all = all && v;
    for (bool v : agent_b) all = all && v;
    if (accepted != all)
      throw InputError("verification record: accepted bit contradicts entries");
  }
};

struct CandidateObject {
  std::string description;
  double bbox_area_ratio = 0.0;  // in (0, 1]
  double visibility_ratio = 0.0; // fraction of frames visible, in [0, 1]

  void validate() const {
    if (!(bbox_area_ratio > 0.0 && bbox_area_ratio <= 1.0))
      throw InputError("candidate: bbox area ratio out of (0, 1]");
    if (!(visibility_ratio >= 0.0 && visibility_ratio <= 1.0))
      throw InputError("candidate: visibility ratio out of [0, 1]");
  }
};

struct Quadruplet {
  std::string id;
  Provenance provenance = Provenance::SynthesizedFromT2V;
  std::string source_video;    // tensor-file references
  std::string target_video;
  std::string raw_ref;
  std::string harmonized_ref;
  std::string p_insert;
  std::string p_desc;
  std::string p_style;
  std::optional<VerificationRecord> verification;
};

// Per-token spatial mask over a video volume.
struct RegionMask {
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<std::uint8_t> inside;

  RegionMask() = default;
  RegionMask(std::size_t f, std::size_t h, std::size_t w)
      : frames(f), height(h), width(w), inside(f * h * w, 0) {}

  bool at(std::size_t f, std::size_t y, std::size_t x) const {
    return inside[(f * height + y) * width + x] != 0;
  }
  void set(std::size_t f, std::size_t y, std::size_t x, bool v) {
    inside[(f * height + y) * width + x] = v ? 1 : 0;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : inside) n += v;
    return n;
  }
  bool matches(const LatentGrid& g) const {
    return frames == g.frames && height == g.height && width == g.width;
  }
};

// ----------------------------------------------------------------------------
// Pipeline client interfaces
// ----------------------------------------------------------------------------

class GrounderClient {
 public:
  virtual ~GrounderClient() = default;
  // candidates ordered best-first
  virtual std::vector<CandidateObject> propose(const LatentGrid& video) = 0;
};

class SegmenterClient {
 public:
  virtual ~SegmenterClient() = default;
  virtual RegionMask segment(const LatentGrid& video, const std::string& description) = 0;
};

class RemoverClient {
 public:
  virtual ~RemoverClient() = default;
  // inpaints the masked region; everything outside the mask is preserved
  virtual LatentGrid remove(const LatentGrid& video, const RegionMask& mask) = 0;
};

class CompleterClient {
 public:
  virtual ~CompleterClient() = default;
  // reconstructs occluded or truncated parts of an extracted reference
  virtual LatentGrid complete(const LatentGrid& image, const RegionMask& visible) = 0;
};

struct StyledImage {
  LatentGrid image;
  std::string style_template;
};

class StylerClient {
 public:
  virtual ~StylerClient() = default;
  // picks a template with its own seeded generator and applies it
  virtual StyledImage stylize(const LatentGrid& image) = 0;
};

struct CaptionPair {
  std::string p_insert;
  std::string p_desc;
};

class CaptionerClient {
 public:
  virtual ~CaptionerClient() = default;
  virtual CaptionPair caption(const LatentGrid& video, const std::string& description) = 0;
};

class VerifierAgent {
 public:
  virtual ~VerifierAgent() = default;
  virtual bool check(const Quadruplet& q, AnomalyCategory category) = 0;
  virtual std::size_t check_count() const = 0;
};

struct ClientSet {
  std::shared_ptr<GrounderClient> grounder;
  std::shared_ptr<SegmenterClient> segmenter;
  std::shared_ptr<RemoverClient> remover;
  std::shared_ptr<CompleterClient> completer;
  std::shared_ptr<StylerClient> styler;
  std::shared_ptr<CaptionerClient> captioner;
  std::shared_ptr<VerifierAgent> agent_a;
  std::shared_ptr<VerifierAgent> agent_b;
};

// ----------------------------------------------------------------------------
// Deterministic stubs
// ----------------------------------------------------------------------------

inline const std::vector<std::string>& default_style_templates() {
  static const std::vector<std::string> templates = {
      "oil-painting", "watercolor", "pencil-sketch", "anime-cel",
      "low-poly",     "neon-glow",  "sepia-film",    "chalk-pastel"};
  return templates;
}

struct StubGrounderConfig {
  std::uint64_t seed = 0;
  double bbox_area_ratio = 0.2;
  double visibility_ratio = 0.95;
  bool fail = false;
};

class StubGrounder final : public GrounderClient {
 public:
  explicit StubGrounder(StubGrounderConfig cfg) : cfg_(cfg) {}

  std::vector<CandidateObject> propose(const LatentGrid& video) override {
    if (cfg_.fail) throw ClientError("grounder", "stub configured to fail");
    CandidateObject c;
    c.description = "object-" + hex64(fnv1a(fnv1a(kFnvOffset, cfg_.seed), video.content_digest()))
                                    .substr(0, 8);
    c.bbox_area_ratio = cfg_.bbox_area_ratio;
    c.visibility_ratio = cfg_.visibility_ratio;
    return {c};
  }

 private:
  StubGrounderConfig cfg_;
};

struct StubSegmenterConfig {
  std::uint64_t seed = 0;
  bool fail = false;
};

class StubSegmenter final : public SegmenterClient {
 public:
  explicit StubSegmenter(StubSegmenterConfig cfg) : cfg_(cfg) {}

  RegionMask segment(const LatentGrid& video, const std::string& description) override {
    if (cfg_.fail) throw ClientError("segmenter", "stub configured to fail");
    Rng rng(fnv1a(fnv1a(fnv1a(kFnvOffset, cfg_.seed), video.content_digest()), description));
    RegionMask mask(video.frames, video.height, video.width);
    const std::size_t y0 = rng.below(std::max<std::size_t>(1, video.height / 2));
    const std::size_t x0 = rng.below(std::max<std::size_t>(1, video.width / 2));
    const std::size_t rh = 1 + rng.below(video.height - y0);
    const std::size_t rw = 1 + rng.below(video.width - x0);
    for (std::size_t f = 0; f < video.frames; ++f)
      for (std::size_t y = y0; y < y0 + rh; ++y)
        for (std::size_t x = x0; x < x0 + rw; ++x) mask.set(f, y, x, true);
    return mask;
  }

 private:
  StubSegmenterConfig cfg_;
};

struct StubRemoverConfig {
  std::uint64_t seed = 0;
  bool fail = false;
};

class StubRemover final : public RemoverClient {
 public:
  explicit StubRemover(StubRemoverConfig cfg) : cfg_(cfg) {}

  LatentGrid remove(const LatentGrid& video, const RegionMask& mask) override {
    if (cfg_.fail) throw ClientError("remover", "stub configured to fail");
    if (!mask.matches(video)) throw InputError("remover: mask dims do not match video");
    LatentGrid out = video;
    Rng rng(fnv1a(fnv1a(fnv1a(kFnvOffset, cfg_.seed), video.content_digest()), "remove"));
    for (std::size_t f = 0; f < video.frames; ++f)
      for (std::size_t y = 0; y < video.height; ++y)
        for (std::size_t x = 0; x < video.width; ++x) {
          if (!mask.at(f, y, x)) continue;
          for (std::size_t c = 0; c < video.channels; ++c)
            out.at(f, y, x, c) = 0.1 * rng.normal();
        }
    return out;
  }

 private:
  StubRemoverConfig cfg_;
};

struct StubCompleterConfig {
  std::uint64_t seed = 0;
  bool fail = false;
};

class StubCompleter final : public CompleterClient {
 public:
  explicit StubCompleter(StubCompleterConfig cfg) : cfg_(cfg) {}

  LatentGrid complete(const LatentGrid& image, const RegionMask& visible) override {
    if (cfg_.fail) throw ClientError("completer", "stub configured to fail");
    if (visible.frames != 1 || visible.height != image.height || visible.width != image.width)
      throw InputError("completer: mask dims do not match image");
    LatentGrid out = image;
    Rng rng(fnv1a(fnv1a(fnv1a(kFnvOffset, cfg_.seed), image.content_digest()), "complete"));
    for (std::size_t y = 0; y < image.height; ++y)
      for (std::size_t x = 0; x < image.width; ++x) {
        if (visible.at(0, y, x)) continue;
        for (std::size_t c = 0; c < image.channels; ++c)
          out.at(0, y, x, c) = 0.05 * rng.normal();
      }
    return out;
  }

 private:
  StubCompleterConfig cfg_;
};

struct StubStylerConfig {
  std::uint64_t seed = 0;
  std::vector<std::string> templates = default_style_templates();
  bool fail = false;
};

class StubStyler final : public StylerClient {
 public:
  explicit StubStyler(StubStylerConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.templates.empty()) throw InputError("styler: template list is empty");
  }

  StyledImage stylize(const LatentGrid& image) override {
    if (cfg_.fail) throw ClientError("styler", "stub configured to fail");
    Rng pick(fnv1a(fnv1a(fnv1a(kFnvOffset, cfg_.seed), image.content_digest()), "style"));
    const std::string& name = cfg_.templates[pick.below(cfg_.templates.size())];
    // each template is a fixed affine value transform
    Rng param(fnv1a(kFnvOffset, name));
    const double scale = 0.6 + 0.8 * param.uniform();
    const double shift = -0.25 + 0.5 * param.uniform();
    StyledImage styled;
    styled.image = image.with_role(Role::RawRefImage);
    for (double& v : styled.image.data) v = scale * v + shift;
    styled.style_template = name;
    return styled;
  }

 private:
  StubStylerConfig cfg_;
};

struct StubCaptionerConfig {
  std::uint64_t seed = 0;
  bool fail = false;
};

class StubCaptioner final : public CaptionerClient {
 public:
  explicit StubCaptioner(StubCaptionerConfig cfg) : cfg_(cfg) {}

  CaptionPair caption(const LatentGrid& video, const std::string& description) override {
    if (cfg_.fail) throw ClientError("captioner", "stub configured to fail");
    const std::string tag =
        hex64(fnv1a(fnv1a(fnv1a(kFnvOffset, cfg_.seed), video.content_digest()), description))
            .substr(0, 8);
    CaptionPair p;
    p.p_insert = "insert the " + description + " at a plausible position in the scene";
    p.p_desc = "steady wide shot of scene " + tag + " with gentle camera motion";
    return p;
  }

 private:
  StubCaptionerConfig cfg_;
};

struct StubAgentConfig {
  std::uint64_t seed = 0;
  std::array<bool, 4> verdicts = {true, true, true, true};
  bool fail = false;
};

class StubVerifierAgent final : public VerifierAgent {
 public:
  explicit StubVerifierAgent(StubAgentConfig cfg) : cfg_(cfg) {}

  bool check(const Quadruplet&, AnomalyCategory category) override {
    count_.fetch_add(1, std::memory_order_relaxed);
    if (cfg_.fail) throw ClientError("verifier", "stub configured to fail");
    return cfg_.verdicts[static_cast<std::size_t>(category)];
  }

  std::size_t check_count() const override { return count_.load(std::memory_order_relaxed); }

 private:
  StubAgentConfig cfg_;
  std::atomic<std::size_t> count_{0};
};

inline ClientSet stub_client_set(std::uint64_t seed) {
  const auto sub = [seed](std::string_view role) { return fnv1a(fnv1a(kFnvOffset, seed), role); };
  ClientSet c;
  c.grounder = std::make_shared<StubGrounder>(StubGrounderConfig{sub("grounder")});
  c.segmenter = std::make_shared<StubSegmenter>(StubSegmenterConfig{sub("segmenter")});
  c.remover = std::make_shared<StubRemover>(StubRemoverConfig{sub("remover")});
  c.completer = std::make_shared<StubCompleter>(StubCompleterConfig{sub("completer")});
  c.styler = std::make_shared<StubStyler>(StubStylerConfig{sub("styler")});
  c.captioner = std::make_shared<StubCaptioner>(StubCaptionerConfig{sub("captioner")});
  c.agent_a = std::make_shared<StubVerifierAgent>(StubAgentConfig{sub("agent_a")});
  c.agent_b = std::make_shared<StubVerifierAgent>(StubAgentConfig{sub("agent_b")});
  return c;
}

// ----------------------------------------------------------------------------
// Pipeline operations
// ----------------------------------------------------------------------------

struct CurationThresholds {
  double max_area_ratio = 0.35; // candidates must not dominate the frame
  double min_visibility = 0.9;  // and must stay visible through the video
};

inline std::optional<CandidateObject> propose_candidate(const LatentGrid& video,
                                                        GrounderClient& grounder,
                                                        const CurationThresholds& thresholds = {}) {
  video.validate();
  std::vector<CandidateObject> candidates = grounder.propose(video);
  if (candidates.empty()) return std::nullopt;
  const CandidateObject& top = candidates.front();
  top.validate();
  if (top.bbox_area_ratio > thresholds.max_area_ratio) return std::nullopt;
  if (top.visibility_ratio < thresholds.min_visibility) return std::nullopt;
  return top;
}

// First-frame crop of the masked object; background cells zeroed. This is the
// ground-truth (already in-scene, hence harmonized) reference before
// occlusion completion.
inline LatentGrid extract_reference(const LatentGrid& video, const RegionMask& mask) {
  if (!mask.matches(video)) throw InputError("extract_reference: mask dims do not match video");
  LatentGrid ref(1, video.height, video.width, video.channels, Role::TargetRefImage);
  for (std::size_t y = 0; y < video.height; ++y)
    for (std::size_t x = 0; x < video.width; ++x) {
      if (!mask.at(0, y, x)) continue;
      for (std::size_t c = 0; c < video.channels; ++c) ref.at(0, y, x, c) = video.at(0, y, x, c);
    }
  return ref;
}

struct QuadrupletMedia {
  LatentGrid source_video;
  LatentGrid target_video;
  LatentGrid raw_ref;
  LatentGrid harmonized_ref;
  std::string p_insert;
  std::string p_desc;
  std::string p_style;
  std::string style_template;
  RegionMask mask;
};

// Synthesis path over an unannotated raw video: segment the chosen object,
// inpaint it away to get the source video, extract and complete the GT
// reference, stylize it into the raw reference, then caption.
inline QuadrupletMedia synthesize_quadruplet_media(const LatentGrid& raw_video,
                                                   const CandidateObject& candidate,
                                                   const ClientSet& clients) {
  raw_video.validate();
  candidate.validate();
  QuadrupletMedia m;
  m.target_video = raw_video.with_role(Role::TargetVideoLatent);
  m.mask = clients.segmenter->segment(raw_video, candidate.description);
  if (m.mask.count() == 0) throw ClientError("segmenter", "empty mask");
  m.source_video = clients.remover->remove(raw_video, m.mask).with_role(Role::SourceVideo);
  RegionMask frame0(1, raw_video.height, raw_video.width);
  for (std::size_t y = 0; y < raw_video.height; ++y)
    for (std::size_t x = 0; x < raw_video.width; ++x) frame0.set(0, y, x, m.mask.at(0, y, x));
  const LatentGrid extracted = extract_reference(m.target_video, m.mask);
  m.harmonized_ref = clients.completer->complete(extracted, frame0)
                         .with_role(Role::TargetRefImage);
  StyledImage styled = clients.styler->stylize(m.harmonized_ref);
  m.raw_ref = styled.image.with_role(Role::RawRefImage);
  m.style_template = styled.style_template;
  CaptionPair captions = clients.captioner->caption(m.target_video, candidate.description);
  m.p_insert = captions.p_insert;
  m.p_desc = captions.p_desc;
  m.p_style = std::string(kDefaultStylePrompt);
  if (m.p_insert.empty()) throw ClientError("captioner", "empty insertion prompt");
  return m;
}

inline std::string media_path(const std::filesystem::path& dir, const std::string& id,
                              const char* part) {
  return (dir / (id + "." + part + ".dsi")).generic_string();
}

inline Quadruplet write_quadruplet(const QuadrupletMedia& media, Provenance provenance,
                                   const std::string& id, const std::filesystem::path& media_dir) {
  std::filesystem::create_directories(media_dir);
  Quadruplet q;
  q.id = id;
  q.provenance = provenance;
  q.source_video = media_path(media_dir, id, "source");
  q.target_video = media_path(media_dir, id, "target");
  q.raw_ref = media_path(media_dir, id, "rawref");
  q.harmonized_ref = media_path(media_dir, id, "harmref");
  write_grid(q.source_video, media.source_video);
  write_grid(q.target_video, media.target_video);
  write_grid(q.raw_ref, media.raw_ref);
  write_grid(q.harmonized_ref, media.harmonized_ref);
  q.p_insert = media.p_insert;
  q.p_desc = media.p_desc;
  q.p_style = media.p_style;
  return q;
}

inline Quadruplet build_quadruplet(const LatentGrid& raw_video, const CandidateObject& candidate,
                                   const ClientSet& clients, const std::string& id,
                                   const std::filesystem::path& media_dir) {
  const QuadrupletMedia media = synthesize_quadruplet_media(raw_video, candidate, clients);
  return write_quadruplet(media, Provenance::SynthesizedFromT2V, id, media_dir);
}

// Adaptation path for existing editing datasets: the reference and both video
// variants already exist; grounding/segmentation/completion reuse the same
// clients.
inline Quadruplet import_editing_sample(const LatentGrid& ref_image,
                                        const LatentGrid& video_with_object,
                                        const LatentGrid& video_without_object,
                                        const ClientSet& clients, const std::string& id,
                                        const std::filesystem::path& media_dir) {
  ref_image.validate();
  video_with_object.validate();
  video_without_object.validate();
  std::vector<CandidateObject> described = clients.grounder->propose(ref_image.with_role(Role::RawRefImage));
  if (described.empty()) throw ClientError("grounder", "no description for reference image");
  const std::string& description = described.front().description;
  QuadrupletMedia m;
  m.target_video = video_with_object.with_role(Role::TargetVideoLatent);
  m.source_video = video_without_object.with_role(Role::SourceVideo);
  m.mask = clients.segmenter->segment(m.target_video, description);
  if (m.mask.count() == 0) throw ClientError("segmenter", "empty mask");
  RegionMask frame0(1, m.target_video.height, m.target_video.width);
  for (std::size_t y = 0; y < m.target_video.height; ++y)
    for (std::size_t x = 0; x < m.target_video.width; ++x)
      frame0.set(0, y, x, m.mask.at(0, y, x));
  m.harmonized_ref = clients.completer
                         ->complete(extract_reference(m.target_video, m.mask), frame0)
                         .with_role(Role::TargetRefImage);
  m.raw_ref = ref_image.with_role(Role::RawRefImage);
  CaptionPair captions = clients.captioner->caption(m.target_video, description);
  m.p_insert = captions.p_insert;
  m.p_desc = captions.p_desc;
  m.p_style = std::string(kDefaultStylePrompt);
  return write_quadruplet(m, Provenance::AdaptedEditingDataset, id, media_dir);
}

// Queries each agent once per category. On agent failure the record is not
// attached and the quadruplet stays unverified.
inline VerificationRecord verify_quadruplet(Quadruplet& q, VerifierAgent& agent_a,
                                            VerifierAgent& agent_b) {
  if (q.verification) throw InputError("verify_quadruplet: quadruplet already verified");
  std::array<bool, 4> a{};
  std::array<bool, 4> b{};
  for (AnomalyCategory c : kAnomalyCategories) a[static_cast<std::size_t>(c)] = agent_a.check(q, c);
  for (AnomalyCategory c : kAnomalyCategories) b[static_cast<std::size_t>(c)] = agent_b.check(q, c);
  const VerificationRecord record = VerificationRecord::from_checks(a, b);
  q.verification = record;
  return record;
}

// ----------------------------------------------------------------------------
// Manifest: one record per line, key=value fields joined by the unit
// separator 0x1F; backslash escapes for 0x1F ("\u"), newline ("\n") and
// backslash itself
// ----------------------------------------------------------------------------

namespace detail {

inline constexpr char kUnitSep = '\x1f';

inline std::string escape_value(std::string_view v) {
  std::string out;
  out.reserve(v.size());
  for (char c : v) {
    if (c == '\\')
      out += "\\\\";
    else if (c == '\n')
      out += "\\n";
    else if (c == kUnitSep)
      out += "\\u";
    else
      out += c;
  }
  return out;
}

inline std::string unescape_value(std::string_view v, std::size_t line_no) {
  std::string out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != '\\') {
      out += v[i];
      continue;
    }
    if (i + 1 >= v.size())
      throw InputError("manifest parse error at line " + std::to_string(line_no) +
                       ": dangling escape");
    const char c = v[++i];
    if (c == '\\')
      out += '\\';
    else if (c == 'n')
      out += '\n';
    else if (c == 'u')
      out += kUnitSep;
    else
      throw InputError("manifest parse error at line " + std::to_string(line_no) +
                       ": unknown escape");
  }
  return out;
}

inline const std::array<const char*, 9>& manifest_text_keys() {
  static const std::array<const char*, 9> keys = {
      "id",      "provenance", "source_video", "target_video", "raw_ref",
      "harmonized_ref", "p_insert", "p_desc", "p_style"};
  return keys;
}

inline const std::array<const char*, 9>& manifest_bit_keys() {
  static const std::array<const char*, 9> keys = {"vA1", "vA2", "vA3", "vA4", "vB1",
                                                  "vB2", "vB3", "vB4", "accepted"};
  return keys;
}

}  // namespace detail

inline std::string manifest_line(const Quadruplet& q) {
  if (q.verification) q.verification->validate();
  std::string line;
  const auto field = [&line](std::string_view key, std::string_view value) {
    if (!line.empty()) line += detail::kUnitSep;
    line += key;
    line += '=';
    line += detail::escape_value(value);
  };
  field("id", q.id);
  field("provenance", provenance_name(q.provenance));
  field("source_video", q.source_video);
  field("target_video", q.target_video);
  field("raw_ref", q.raw_ref);
  field("harmonized_ref", q.harmonized_ref);
  field("p_insert", q.p_insert);
  field("p_desc", q.p_desc);
  field("p_style", q.p_style);
  if (q.verification) {
    const VerificationRecord& r = *q.verification;
    const auto& keys = detail::manifest_bit_keys();
    for (std::size_t i = 0; i < 4; ++i) field(keys[i], r.agent_a[i] ? "1" : "0");
    for (std::size_t i = 0; i < 4; ++i) field(keys[4 + i], r.agent_b[i] ? "1" : "0");
    field("accepted", r.accepted ? "1" : "0");
  }
  return line;
}

inline Quadruplet parse_manifest_line(std::string_view line, std::size_t line_no) {
  const auto fail = [line_no](const std::string& why) -> InputError {
    return InputError("manifest parse error at line " + std::to_string(line_no) + ": " + why);
  };
  std::vector<std::pair<std::string, std::string>> fields;
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t end = line.find(detail::kUnitSep, start);
    if (end == std::string_view::npos) end = line.size();
    const std::string_view piece = line.substr(start, end - start);
    const std::size_t eq = piece.find('=');
    if (eq == std::string_view::npos) throw fail("field without '='");
    fields.emplace_back(std::string(piece.substr(0, eq)),
                        detail::unescape_value(piece.substr(eq + 1), line_no));
    start = end + 1;
    if (end == line.size()) break;
  }
  const auto& text_keys = detail::manifest_text_keys();
  const auto& bit_keys = detail::manifest_bit_keys();
  if (fields.size() != text_keys.size() && fields.size() != text_keys.size() + bit_keys.size())
    throw fail("unexpected field count " + std::to_string(fields.size()));
  for (std::size_t i = 0; i < text_keys.size(); ++i)
    if (fields[i].first != text_keys[i])
      throw fail("expected key '" + std::string(text_keys[i]) + "', found '" + fields[i].first +
                 "'");
  Quadruplet q;
  q.id = fields[0].second;
  if (fields[1].second == "AdaptedEditingDataset")
    q.provenance = Provenance::AdaptedEditingDataset;
  else if (fields[1].second == "SynthesizedFromT2V")
    q.provenance = Provenance::SynthesizedFromT2V;
  else
    throw fail("unknown provenance '" + fields[1].second + "'");
  q.source_video = fields[2].second;
  q.target_video = fields[3].second;
  q.raw_ref = fields[4].second;
  q.harmonized_ref = fields[5].second;
  q.p_insert = fields[6].second;
  q.p_desc = fields[7].second;
  q.p_style = fields[8].second;
  if (q.p_insert.empty()) throw fail("p_insert must be nonempty");
  if (fields.size() == text_keys.size() + bit_keys.size()) {
    const auto bit = [&](std::size_t i) -> bool {
      const auto& [key, value] = fields[text_keys.size() + i];
      if (key != bit_keys[i]) throw fail("expected key '" + std::string(bit_keys[i]) + "'");
      if (value == "1") return true;
      if (value == "0") return false;
      throw fail("bit field must be 0 or 1");
    };
    VerificationRecord r;
    for (std::size_t i = 0; i < 4; ++i) r.agent_a[i] = bit(i);
    for (std::size_t i = 0; i < 4; ++i) r.agent_b[i] = bit(4 + i);
    r.accepted = bit(8);
    try {
      r.validate();
    } catch (const InputError& e) {
      throw fail(e.what());
    }
    q.verification = r;
  }
  return q;
}

inline void persist_manifest(const std::vector<Quadruplet>& quadruplets,
                             const std::filesystem::path& path) {
  std::string out;
  for (const Quadruplet& q : quadruplets) {
    out += manifest_line(q);
    out += '\n';
  }
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw InputError("cannot open manifest for writing: " + path.string());
  const std::size_t n = std::fwrite(out.data(), 1, out.size(), fp);
  std::fclose(fp);
  if (n != out.size()) throw InputError("short write: " + path.string());
}

inline std::vector<Quadruplet> load_manifest(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw InputError("cannot open manifest: " + path.string());
  std::string bytes;
  char buf[1 << 14];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, fp)) > 0) bytes.append(buf, n);
  std::fclose(fp);
  std::vector<Quadruplet> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < bytes.size()) {
    std::size_t end = bytes.find('\n', start);
    ++line_no;
    if (end == std::string::npos)
      throw InputError("manifest parse error at line " + std::to_string(line_no) +
                       ": missing newline terminator");
    out.push_back(parse_manifest_line(std::string_view(bytes).substr(start, end - start), line_no));
    start = end + 1;
  }
  return out;
}

}  // namespace dsi
