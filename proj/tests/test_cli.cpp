#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <sstream>
#include <thread>

#include "cli.hpp"
#include "httplib.h"
#include "rawdrift/fetch.hpp"
#include "rawdrift/isp_static.hpp"
#include "rawdrift/raw_io.hpp"

using namespace rawdrift;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(RAWDRIFT_TEST_TMP) / "cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path path = dir / "run.yaml";
  write_file_atomic(path, text);
  return path;
}

int run(const std::string& command, const fs::path& config, const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> args{command, "--config", config.string(), "--out", out.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  return cli::run(args);
}

// Relative path -> bytes for every file under `dir`.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return out;
}

const char* kProcess = R"(command: process
seed: 3
data: {source: synth, dataset: shapes, count: 1, size: 16}
pipeline: {configs: all}
)";

}  // namespace

TEST(Cli, ProcessWritesTwelveNamedViews) {
  const fs::path dir = scratch("process");
  const fs::path cfg = write_config(dir, kProcess);
  ASSERT_EQ(run("process", cfg, dir / "out"), cli::kOk);
  std::vector<std::string> views;
  for (const auto& e : fs::directory_iterator(dir / "out" / "views")) views.push_back(e.path().filename().string());
  std::sort(views.begin(), views.end());
  ASSERT_EQ(views.size(), 12u);
  for (const auto& c : enumerate_configs()) {
    std::string tag = c.abbreviation();
    std::replace(tag.begin(), tag.end(), ',', '-');
    EXPECT_TRUE(std::binary_search(views.begin(), views.end(), "scene_000__" + tag + ".png")) << tag;
  }
  EXPECT_TRUE(fs::exists(dir / "out" / "config.resolved.yaml"));
  EXPECT_TRUE(fs::exists(dir / "out" / "run.log"));
}

TEST(Cli, ProcessRerunKeepsExistingOutputs) {
  const fs::path dir = scratch("process_rerun");
  const fs::path cfg = write_config(dir, kProcess);
  ASSERT_EQ(run("process", cfg, dir / "out"), cli::kOk);
  const fs::path view = dir / "out" / "views" / "scene_000__bi-s-ga.png";
  write_file_atomic(view, "sentinel");
  EXPECT_EQ(run("process", cfg, dir / "out"), cli::kOk);
  EXPECT_EQ(read_file(view), "sentinel");
  EXPECT_EQ(run("process", cfg, dir / "out", {"--force"}), cli::kOk);
  EXPECT_NE(read_file(view), "sentinel");
}

TEST(Cli, ProcessIsDeterministic) {
  const fs::path dir = scratch("process_det");
  const fs::path cfg = write_config(dir, std::string(kProcess) + "");
  ASSERT_EQ(run("process", cfg, dir / "a"), cli::kOk);
  ASSERT_EQ(run("process", cfg, dir / "b"), cli::kOk);
  EXPECT_EQ(tree(dir / "a"), tree(dir / "b"));
}

TEST(Cli, ResolvedConfigParsesBack) {
  const fs::path dir = scratch("resolved");
  const fs::path cfg = write_config(dir, kProcess);
  ASSERT_EQ(run("process", cfg, dir / "a"), cli::kOk);
  ASSERT_EQ(run("process", dir / "a" / "config.resolved.yaml", dir / "b"), cli::kOk);
  EXPECT_EQ(read_file(dir / "a" / "config.resolved.yaml"), read_file(dir / "b" / "config.resolved.yaml"));
}

TEST(Cli, StrictConfigRejectsUnknownKeys) {
  const fs::path dir = scratch("strict");
  EXPECT_EQ(run("process", write_config(dir, "command: process\nseeed: 1\n"), dir / "o1"), cli::kConfigError);
  EXPECT_EQ(run("process", write_config(dir, "command: process\ndata: {count: 1, colour: red}\n"), dir / "o2"),
            cli::kConfigError);
  EXPECT_EQ(run("process", write_config(dir, "command: synth\n"), dir / "o3"), cli::kConfigError);
  EXPECT_EQ(run("process", write_config(dir, "command: process\nsynthesis: {folds: 2}\n"), dir / "o4"),
            cli::kConfigError);
  EXPECT_EQ(run("process", dir / "missing.yaml", dir / "o5"), cli::kConfigError);
  EXPECT_EQ(cli::run({"nonsense"}), cli::kConfigError);
}

TEST(Cli, MissingRawIsIoError) {
  const fs::path dir = scratch("io");
  const fs::path cfg = write_config(dir, "command: process\ndata: {source: files, files: [nothing.pgm]}\n");
  EXPECT_EQ(run("process", cfg, dir / "out"), cli::kIoError);
}

TEST(Cli, GradcheckReportsSevenGroupsAndRaw) {
  const fs::path dir = scratch("gradcheck");
  const fs::path cfg = write_config(dir, "command: gradcheck\nseed: 1\ngradcheck: {count: 2, size: 8}\n");
  ASSERT_EQ(run("gradcheck", cfg, dir / "out"), cli::kOk);
  const std::string csv = read_file(dir / "out" / "gradcheck.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  for (const char* g : {"\nBL,", "\nDM,", "\nWB,", "\nCC,", "\nSH,", "\nDN,", "\nGC,", "\nraw,"}) {
    EXPECT_NE(csv.find(g), std::string::npos) << g;
  }
}

TEST(Cli, GradcheckFaultFixtureExits5) {
  const fs::path dir = scratch("gradcheck_fault");
  const fs::path cfg = write_config(
      dir, "command: gradcheck\nseed: 1\ngradcheck:\n  count: 1\n  size: 8\n  fault: {op: channel_affine, factor: 1.5}\n");
  EXPECT_EQ(run("gradcheck", cfg, dir / "out"), cli::kGradcheckFail);
  EXPECT_NE(read_file(dir / "out" / "run.log").find("status exit-5"), std::string::npos);
}

TEST(Cli, ForensicsZeroStepsEqualsBaseline) {
  const fs::path dir = scratch("forensics");
  const fs::path cfg = write_config(dir, R"(command: forensics
seed: 2
data: {source: synth, dataset: shapes, count: 24, size: 8}
train: {steps: 5, batch: 4}
forensics: {lambdas: [0, 1], groups: [all, WB], steps: 0, optimize_count: 8, test_count: 8}
)");
  ASSERT_EQ(run("forensics", cfg, dir / "out"), cli::kOk);
  const std::string csv = read_file(dir / "out" / "forensics.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    std::vector<std::string> f;
    std::istringstream cells(line);
    for (std::string c; std::getline(cells, c, ',');) f.push_back(c);
    ASSERT_EQ(f.size(), 11u);
    EXPECT_EQ(f[2], f[3]) << line;  // score == baseline score
    EXPECT_EQ(f[4], "0") << line;   // l2
    EXPECT_EQ(f[5], f[6]) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 4);
  EXPECT_EQ(read_file(dir / "out" / "theta" / "all__lambda_0.yaml"), read_file(dir / "out" / "baseline_params.yaml"));
}

TEST(Cli, OptimizeFrozenMatchesZeroRateLearned) {
  const fs::path dir = scratch("optimize");
  const std::string base = R"(command: optimize
seed: 4
data: {source: synth, dataset: shapes, count: 12, size: 8}
train: {steps: 6, batch: 4}
)";
  ASSERT_EQ(run("optimize", write_config(dir, base + "optimization: {modes: [frozen], eval_every: 2}\n"), dir / "f"),
            cli::kOk);
  ASSERT_EQ(run("optimize",
                write_config(dir, base + "optimization: {modes: [learned], pipeline_lr: 0, eval_every: 2}\n"),
                dir / "l"),
            cli::kOk);
  EXPECT_EQ(read_file(dir / "f" / "trajectory__frozen.csv"), read_file(dir / "l" / "trajectory__learned.csv"));
  EXPECT_EQ(read_file(dir / "f" / "params" / "frozen__fold0.yaml"), read_file(dir / "l" / "params" / "learned__fold0.yaml"));
}

TEST(Cli, SynthIsDeterministicAcrossThreadCounts) {
  const fs::path dir = scratch("synth");
  const fs::path cfg = write_config(dir, R"(command: synth
seed: 5
data: {source: synth, dataset: texture, count: 8, size: 8}
train: {steps: 2, batch: 4}
synthesis: {folds: 2, corruptions: [brightness]}
)");
  ASSERT_EQ(run("synth", cfg, dir / "a", {"--threads", "1"}), cli::kOk);
  ASSERT_EQ(run("synth", cfg, dir / "b", {"--threads", "4"}), cli::kOk);
  auto a = tree(dir / "a"), b = tree(dir / "b");
  // The resolved config records the thread count.
  a.erase("config.resolved.yaml");
  b.erase("config.resolved.yaml");
  a.erase("run.log");
  b.erase("run.log");
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.count("matrix.csv"));
  // A completed run is not repeated; a different config is refused.
  EXPECT_EQ(run("synth", cfg, dir / "a", {"--threads", "1"}), cli::kOk);
  EXPECT_EQ(run("synth", cfg, dir / "a", {"--seed", "6"}), cli::kConfigError);
}

namespace {

class StubServer {
 public:
  explicit StubServer(std::map<std::string, std::string> files) : files_(std::move(files)) {
    server_.Get(R"(/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto it = files_.find(req.matches[1]);
      if (it == files_.end()) {
        res.status = 404;
        return;
      }
      res.set_content(it->second, "application/octet-stream");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }
  std::string url(const std::string& name) const { return "http://127.0.0.1:" + std::to_string(port_) + "/" + name; }

 private:
  std::map<std::string, std::string> files_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST(Cli, FetchExitCodes) {
  const fs::path dir = scratch("fetch");
  StubServer server({{"a.bin", "alpha"}, {"b.bin", "bravo"}});
  DatasetManifest m;
  m.entries.push_back({server.url("a.bin"), "a.bin", sha256_hex("alpha"), 5});
  m.entries.push_back({server.url("b.bin"), "b.bin", sha256_hex("bravo"), 5});
  write_file_atomic(dir / "manifest.yaml", manifest_to_yaml(m));
  const fs::path cfg = write_config(dir, "command: fetch\nfetch: {manifest: manifest.yaml, destination: data}\n");
  ASSERT_EQ(run("fetch", cfg, dir / "r1"), cli::kOk);
  EXPECT_EQ(read_file(dir / "data" / "b.bin"), "bravo");
  ASSERT_EQ(run("fetch", cfg, dir / "r2"), cli::kOk);
  EXPECT_EQ(read_file(dir / "r2" / "fetch.csv").find("downloaded"), std::string::npos);

  m.entries[1].sha256 = sha256_hex("something else");
  write_file_atomic(dir / "manifest.yaml", manifest_to_yaml(m));
  fs::remove(dir / "data" / "b.bin");
  EXPECT_EQ(run("fetch", cfg, dir / "r3"), cli::kChecksumFail);
  EXPECT_FALSE(fs::exists(dir / "data" / "b.bin"));
}
