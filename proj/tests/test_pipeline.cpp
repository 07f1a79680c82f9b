#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>

#include "json.hpp"
#include "xspdc/error.hpp"
#include "xspdc/io.hpp"
#include "xspdc/pipeline.hpp"

using namespace xspdc;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kConfig = fs::path(XSPDC_SOURCE_DIR) / "configs" / "diamond660.cfg";

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

struct Sandbox {
  fs::path root;
  Sandbox() {
    root = fs::temp_directory_path() / ("xspdc_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(root);
  }
  ~Sandbox() { fs::remove_all(root); }

  Result cli(const std::string& args) const {
    const fs::path err = root / "stderr.txt";
    const std::string cmd = std::string("\"") + XSPDC_CLI + "\" " + args + " run.output_root=" + (root / "runs").string() +
                            " 2>" + err.string();
    Result r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    while (std::fgets(buf, sizeof buf, p)) r.out += buf;
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = fs::exists(err) ? read_text_file(err) : "";
    return r;
  }

  // Small fast configuration: event-level synthesis, fewer frames.
  Result run(const std::string& stage, const std::string& extra = "") const {
    return cli("run " + stage + " --config " + kConfig.string() + " synth.output=events synth.frames=20000 " + extra);
  }
};

fs::path run_dir_of(const Result& r) { return json::parse(r.out)["run_dir"].get<std::string>(); }

}  // namespace

TEST_CASE("version and usage errors") {
  Sandbox sb;
  FILE* p = popen((std::string("\"") + XSPDC_CLI + "\" --version").c_str(), "r");
  char buf[256] = {};
  REQUIRE(std::fgets(buf, sizeof buf, p) != nullptr);
  CHECK(pclose(p) == 0);
  CHECK(std::string(buf).find(kToolVersion) != std::string::npos);

  auto r = sb.cli("run");
  CHECK(r.code == 2);
  CHECK(json::parse(r.err)["error"] == "usage_error");
  r = sb.cli("run bogus --config " + kConfig.string());
  CHECK(r.code == 2);
}

TEST_CASE("configuration errors exit with code 2") {
  Sandbox sb;
  auto r = sb.run("simulate", "simulate.no_such_key=1");
  CHECK(r.code == 2);
  const auto j = json::parse(r.err);
  CHECK(j["exit_code"] == 2);
  CHECK(j["message"].get<std::string>().find("no_such_key") != std::string::npos);

  CHECK(sb.run("simulate", "simulate.windows=12.3-12.7:10.3-10.7").code == 2);
  CHECK(sb.run("simulate", "geometry.pump_energy_kev=abc").code == 2);
  CHECK(sb.cli("run simulate --config " + (sb.root / "missing.cfg").string()).code == 2);
}

TEST_CASE("missing and malformed inputs exit with code 3") {
  Sandbox sb;
  auto r = sb.run("recon");
  CHECK(r.code == 3);
  CHECK(json::parse(r.err)["exit_code"] == 3);

  // Raw chain: damage the frame file between synth and recon.
  const std::string raw = "synth.output=raw synth.frames=200";
  REQUIRE(sb.cli("run simulate --config " + kConfig.string() + " " + raw).code == 0);
  r = sb.cli("run synth --config " + kConfig.string() + " " + raw);
  REQUIRE(r.code == 0);
  const fs::path frames = run_dir_of(r) / artifact::kRawFrames;
  REQUIRE(fs::exists(frames));
  std::string bytes = read_text_file(frames);
  bytes[0] = 'X';
  write_text_file(frames, bytes);
  r = sb.cli("run recon --config " + kConfig.string() + " " + raw);
  CHECK(r.code == 3);
  CHECK(json::parse(r.err)["error"] == "format_error");
}

TEST_CASE("full run recovers the scaling law and records provenance") {
  Sandbox sb;
  const auto r = sb.cli("run all --config " + kConfig.string() + " synth.output=events");
  REQUIRE(r.code == 0);
  const fs::path dir = run_dir_of(r);
  const auto report = json::parse(read_text_file(dir / "analyze" / "report.json"));
  const double slope = report["scaling"]["slope"];
  CHECK(slope >= -1.05);
  CHECK(slope <= -0.95);
  CHECK(report["windows"].size() == 5);
  for (const auto& w : report["windows"]) {
    CHECK(w["no_signal"] == false);
    CHECK(w["signal_ring"]["radius_px"].get<double>() > 0.0);
  }

  const auto m = json::parse(read_text_file(dir / artifact::kManifest));
  CHECK(m["tool_version"] == kToolVersion);
  CHECK(m["config_hash"].get<std::string>().size() > 0);
  for (const char* stage : {"simulate", "synth", "recon", "extract", "analyze"}) {
    CAPTURE(stage);
    REQUIRE(m["stages"].contains(stage));
    CHECK_FALSE(m["stages"][stage]["outputs"].empty());
    for (const auto& [path, hash] : m["stages"][stage]["outputs"].items()) {
      CHECK(file_hash(dir / path) == hash.get<std::string>());
    }
  }
  CHECK(m["stages"]["recon"]["inputs"].contains(artifact::kSynthEvents));
  CHECK(fs::exists(dir / "config.cfg"));
}

TEST_CASE("rerunning a stage is byte-identical") {
  Sandbox sb;
  REQUIRE(sb.run("all").code == 0);
  const auto r = sb.run("extract");
  REQUIRE(r.code == 0);
  const fs::path dir = run_dir_of(r);
  std::map<std::string, std::string> first;
  for (const auto& e : fs::directory_iterator(dir / "extract")) first[e.path().filename().string()] = file_hash(e.path());
  REQUIRE(sb.run("extract").code == 0);
  for (const auto& [name, hash] : first) CHECK(file_hash(dir / "extract" / name) == hash);
  REQUIRE(first.size() >= 3);

  // Thread count never changes results.
  const auto r2 = sb.run("extract", "--jobs 1");
  REQUIRE(r2.code == 0);
  for (const auto& [name, hash] : first) CHECK(file_hash(dir / "extract" / name) == hash);
}

TEST_CASE("configuration and seeds select the run directory") {
  Sandbox sb;
  const auto a = sb.run("simulate");
  const auto b = sb.run("simulate", "--seed 9");
  const auto c = sb.run("simulate", "synth.frames=20000");
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(run_dir_of(a) != run_dir_of(b));
  CHECK(run_dir_of(c) == run_dir_of(a));
}

TEST_CASE("no coincidences exit with code 4") {
  Sandbox sb;
  const auto r = sb.run("all", "synth.pair_rates_per_hour=0 synth.background_rate_hz=0");
  CHECK(r.code == 4);
  const auto j = json::parse(r.out);
  CHECK(j["no_signal"] == true);
}

TEST_CASE("negative control runs through the pipeline") {
  Sandbox sb;
  const auto r = sb.run("all", "extract.control=frame_shuffle");
  CHECK((r.code == 0 || r.code == 4));
  const auto s = json::parse(read_text_file(run_dir_of(r) / artifact::kExtractSummary));
  CHECK(s.contains("windows"));
  CHECK(sb.run("extract", "extract.control=nonsense").code == 2);
}

TEST_CASE("pair csv round trip") {
  const fs::path p = fs::temp_directory_path() / "xspdc_pairs_rt.csv";
  std::vector<CoincidencePair> pairs(3);
  for (int i = 0; i < 3; ++i) {
    pairs[i].frame_id = 10 + i;
    pairs[i].a.frame_id = pairs[i].b.frame_id = 10 + i;
    pairs[i].a.x = 20 + i;
    pairs[i].a.y = 30;
    pairs[i].a.energy_kev = 10.4 + 0.1 * i;
    pairs[i].b.x = 200;
    pairs[i].b.y = 40 + i;
    pairs[i].b.energy_kev = 10.6 - 0.1 * i;
  }
  write_pairs_csv(p, pairs, {0, 2});
  const auto back = read_pairs_csv(p);
  REQUIRE(back.size() == 2);
  CHECK(back[1].frame_id == 12);
  CHECK(back[1].a.x == 22);
  CHECK(back[1].b.energy_ev() == 10400);
  CHECK(read_text_file(p).rfind("frame_id,ax,ay,ae_ev,bx,by,be_ev\n", 0) == 0);
  write_text_file(p, "frame_id,ax,ay\n1,2,3\n");
  CHECK_THROWS_AS(read_pairs_csv(p), FormatError);
  fs::remove(p);
}
