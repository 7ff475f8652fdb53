#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dsi/grid.hpp"
#include "dsi/curation.hpp"

using namespace dsi;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run(const std::string& args) {
  const std::string cmd = std::string(DSI_CLI_PATH) + " " + args + " 2>&1";
  std::FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path fresh_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_inputs(const fs::path& dir) {
  write_grid(dir / "src.dsi", seeded_grid(4, 2, 4, 16, Role::SourceVideo, 301));
  write_grid(dir / "ref.dsi", seeded_grid(1, 2, 4, 16, Role::RawRefImage, 302));
  return dir;
}

}  // namespace

TEST_CASE("cli sample writes outputs and the gated trace") {
  const fs::path dir = fresh_dir("dsi_cli_sample");
  write_inputs(dir);
  const std::string out = (dir / "out").string();

  const RunResult r = run("sample --source " + (dir / "src.dsi").string() + " --ref " +
                          (dir / "ref.dsi").string() +
                          " --p-insert \"insert the lamp\" --p-desc \"office\" --steps 10 "
                          "--t-start 6 --seed 42 --out " + out);
  CHECK(r.exit_code == 0);

  CHECK_NOTHROW(read_grid(out + "/video.dsi"));
  CHECK_NOTHROW(read_grid(out + "/image.dsi"));
  const std::string trace = read_file(out + "/trace.txt");
  std::size_t gated = 0, lines = 0;
  std::istringstream in(trace);
  std::string line;
  while (std::getline(in, line)) {
    ++lines;
    std::istringstream fields(line);
    std::size_t t;
    double sigma;
    int gate;
    std::size_t calls;
    double vn, in_;
    fields >> t >> sigma >> gate >> calls >> vn >> in_;
    REQUIRE(fields);
    gated += gate;
    CHECK(calls == (gate ? 2u : 0u));
  }
  CHECK(lines == 10);
  CHECK(gated == 4);
  fs::remove_all(dir);
}

TEST_CASE("cli sample with feedback off gates nothing") {
  const fs::path dir = fresh_dir("dsi_cli_nofb");
  write_inputs(dir);
  const RunResult r = run("sample --source " + (dir / "src.dsi").string() + " --ref " +
                          (dir / "ref.dsi").string() +
                          " --p-insert \"x\" --steps 6 --feedback off --out " +
                          (dir / "out").string());
  CHECK(r.exit_code == 0);
  const std::string trace = read_file(dir / "out" / "trace.txt");
  std::istringstream in(trace);
  std::string line;
  while (std::getline(in, line)) CHECK(line.find(" 0 0 ") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli exit codes are exhaustive and disjoint") {
  const fs::path dir = fresh_dir("dsi_cli_exit");
  write_inputs(dir);

  SECTION("missing input file is an input error") {
    const RunResult r = run("sample --source /nonexistent.dsi --ref " +
                            (dir / "ref.dsi").string() + " --p-insert x");
    CHECK(r.exit_code == 2);
  }
  SECTION("unknown flag is an input error") {
    const RunResult r = run("sample --nonsense");
    CHECK(r.exit_code == 2);
  }
  SECTION("unknown ablation name is an input error") {
    const RunResult r = run("sample --source " + (dir / "src.dsi").string() + " --ref " +
                            (dir / "ref.dsi").string() + " --p-insert x --ablate bogus");
    CHECK(r.exit_code == 2);
  }
  SECTION("unknown client backend is a client error") {
    const fs::path cfg = dir / "clients.json";
    std::ofstream(cfg) << R"({"vlm": {"backend": "gpt-42"}})";
    const RunResult r = run("sample --source " + (dir / "src.dsi").string() + " --ref " +
                            (dir / "ref.dsi").string() + " --p-insert x --clients " +
                            cfg.string());
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("client error") != std::string::npos);
  }
  SECTION("failing client is a client error") {
    const fs::path cfg = dir / "clients.json";
    std::ofstream(cfg) << R"({"vlm": {"backend": "stub", "fail": true}})";
    const RunResult r = run("sample --source " + (dir / "src.dsi").string() + " --ref " +
                            (dir / "ref.dsi").string() + " --p-insert x --clients " +
                            cfg.string());
    CHECK(r.exit_code == 3);
  }
  fs::remove_all(dir);
}

TEST_CASE("cli curate produces a manifest of accepted quadruplets") {
  const fs::path dir = fresh_dir("dsi_cli_curate");
  const fs::path inputs = dir / "raw";
  fs::create_directories(inputs);
  for (int i = 0; i < 5; ++i)
    write_grid(inputs / ("clip" + std::to_string(i) + ".dsi"),
               seeded_grid(3, 4, 4, 4, Role::TargetVideoLatent, 500 + i));

  const std::string manifest = (dir / "manifest.dsv").string();
  const RunResult r = run("curate --input-dir " + inputs.string() + " --out " + manifest +
                          " --media-dir " + (dir / "media").string() + " --seed 9");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("5 accepted") != std::string::npos);

  const std::vector<Quadruplet> qs = load_manifest(manifest);
  REQUIRE(qs.size() == 5);
  for (const Quadruplet& q : qs) {
    REQUIRE(q.verification.has_value());
    CHECK(q.verification->accepted);
    CHECK_NOTHROW(read_grid(q.source_video));
  }

  SECTION("same seed reproduces the manifest byte for byte") {
    const std::string manifest2 = (dir / "manifest2.dsv").string();
    const RunResult r2 = run("curate --input-dir " + inputs.string() + " --out " + manifest2 +
                             " --media-dir " + (dir / "media2").string() + " --seed 9");
    CHECK(r2.exit_code == 0);
    std::string a = read_file(manifest);
    std::string b = read_file(manifest2);
    // paths differ only by the media dir name; normalize before comparing
    std::size_t pos;
    while ((pos = b.find("media2")) != std::string::npos) b.replace(pos, 6, "media");
    CHECK(a == b);
  }
  SECTION("an always-failing agent rejects everything") {
    const fs::path cfg = dir / "clients.json";
    std::ofstream(cfg) << R"({"agent_b": {"backend": "stub",
                              "fail_categories": ["TemporalArtifacts"]}})";
    const std::string manifest3 = (dir / "manifest3.dsv").string();
    const RunResult r3 = run("curate --input-dir " + inputs.string() + " --out " + manifest3 +
                             " --media-dir " + (dir / "media3").string() + " --seed 9 --clients " +
                             cfg.string());
    CHECK(r3.exit_code == 0);
    CHECK(r3.output.find("0 accepted") != std::string::npos);
    CHECK(load_manifest(manifest3).empty());
  }
  fs::remove_all(dir);
}

TEST_CASE("cli curate input errors") {
  const RunResult r = run("curate --input-dir /nonexistent_dir_xyz --out /tmp/m.dsv");
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli selftest passes and emits parseable json") {
  const RunResult r = run("selftest --json --seed 5");
  CHECK(r.exit_code == 0);
  std::istringstream in(r.output);
  std::string line;
  std::size_t entries = 0;
  bool saw_disjointness = false, saw_gradient = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] != '{') continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    REQUIRE(j.contains("name"));
    REQUIRE(j.contains("pass"));
    REQUIRE(j.contains("measured"));
    REQUIRE(j.contains("threshold"));
    CHECK(j.at("pass").get<bool>());
    if (j.at("name") == "rope_disjointness") saw_disjointness = true;
    if (j.at("name") == "gradient_check") saw_gradient = true;
    ++entries;
  }
  CHECK(entries >= 8);
  CHECK(saw_disjointness);
  CHECK(saw_gradient);
}

TEST_CASE("cli selftest reports the frame-append arm as expected-violated") {
  const RunResult r = run("selftest --ablate fulldit_rope --seed 5");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("rope_disjointness_expected_violated") != std::string::npos);

  const RunResult rj = run("selftest --ablate fulldit_rope --seed 5 --json");
  CHECK(rj.exit_code == 0);
  CHECK(rj.output.find("rope_disjointness_expected_violated") != std::string::npos);
}

TEST_CASE("cli selftest stream filter") {
  const RunResult r = run("selftest --stream image --seed 5");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("dual_stream_injection_isolation") == std::string::npos);
  const RunResult bad = run("selftest --stream sideways");
  CHECK(bad.exit_code == 2);
}
