#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <map>
#include <thread>

#include "httplib.h"
#include "rawdrift/error.hpp"
#include "rawdrift/fetch.hpp"
#include "rawdrift/raw_io.hpp"

using namespace rawdrift;
namespace fs = std::filesystem;

namespace {

// Serves a fixed set of files and counts requests per path.
class StubServer {
 public:
  explicit StubServer(std::map<std::string, std::string> files) : files_(std::move(files)) {
    server_.Get(R"(/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      const std::string name = req.matches[1];
      ++hits_[name];
      auto it = files_.find(name);
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

  std::string url(const std::string& name) const {
    return "http://127.0.0.1:" + std::to_string(port_) + "/" + name;
  }
  int hits(const std::string& name) { return hits_[name].load(); }
  void replace(const std::string& name, std::string body) { files_[name] = std::move(body); }

 private:
  std::map<std::string, std::string> files_;
  std::map<std::string, std::atomic<int>> hits_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(RAWDRIFT_TEST_TMP) / "fetch" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const std::map<std::string, std::string> kFiles = {
    {"a.pgm", "alpha bytes"}, {"b.pgm", std::string(5000, 'b')}, {"c.yaml", "schema: x\n"}};

DatasetManifest manifest_for(const StubServer& server) {
  DatasetManifest m;
  for (const auto& [name, body] : kFiles) {
    m.entries.push_back({server.url(name), "raw/" + name, sha256_hex(body), body.size()});
  }
  m.splits["train"] = {"raw/a.pgm", "raw/b.pgm"};
  m.splits["test"] = {"raw/c.yaml"};
  return m;
}

}  // namespace

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Fetch, IdempotentSecondRun) {
  StubServer server(kFiles);
  const auto dir = scratch("idempotent");
  const auto m = manifest_for(server);

  const FetchReport first = fetch_dataset(m, dir);
  EXPECT_EQ(first.downloads(), 3u);
  EXPECT_TRUE(first.complete());
  for (const auto& [name, body] : kFiles) EXPECT_EQ(read_file(dir / "raw" / name), body);

  const FetchReport second = fetch_dataset(m, dir);
  EXPECT_EQ(second.downloads(), 0u);
  EXPECT_EQ(second.count(FetchStatus::AlreadyValid), 3u);
  for (const auto& [name, body] : kFiles) EXPECT_EQ(server.hits(name), 1);
}

TEST(Fetch, RedownloadsCorruptedFile) {
  StubServer server(kFiles);
  const auto dir = scratch("corrupt");
  const auto m = manifest_for(server);
  fetch_dataset(m, dir);
  write_file_atomic(dir / "raw" / "b.pgm", std::string(5000, 'x'));

  const FetchReport report = fetch_dataset(m, dir);
  EXPECT_EQ(report.downloads(), 1u);
  EXPECT_EQ(read_file(dir / "raw" / "b.pgm"), kFiles.at("b.pgm"));
}

TEST(Fetch, RejectsChecksumMismatch) {
  StubServer server(kFiles);
  server.replace("c.yaml", "tampered!\n");
  const auto dir = scratch("mismatch");
  const FetchReport report = fetch_dataset(manifest_for(server), dir);
  EXPECT_EQ(report.count(FetchStatus::ChecksumMismatch), 1u);
  EXPECT_FALSE(report.complete());
  EXPECT_FALSE(fs::exists(dir / "raw" / "c.yaml"));
  EXPECT_NE(report.to_csv().find("raw/c.yaml,checksum_mismatch"), std::string::npos);
}

TEST(Fetch, NetworkFailureGivesPartialReport) {
  const auto dir = scratch("network");
  DatasetManifest m;
  {
    StubServer server(kFiles);
    m = manifest_for(server);
  }
  // Server is gone: every entry fails, nothing is written.
  const FetchReport report = fetch_dataset(m, dir, {1, 2});
  EXPECT_EQ(report.count(FetchStatus::NetworkError), 3u);
  EXPECT_NE(report.records[0].detail.find("retry"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "raw" / "a.pgm"));
}

TEST(Manifest, YamlRoundTripAndStrictness) {
  const auto dir = scratch("manifest");
  DatasetManifest m;
  m.entries.push_back({"https://example.org/a.pgm", "a.pgm", std::string(64, 'a'), 12});
  m.splits["train"] = {"a.pgm"};
  write_file_atomic(dir / "m.yaml", manifest_to_yaml(m));
  const DatasetManifest back = load_manifest(dir / "m.yaml");
  ASSERT_EQ(back.entries.size(), 1u);
  EXPECT_EQ(back.entries[0].sha256, m.entries[0].sha256);
  EXPECT_EQ(back.entries[0].size, 12u);
  EXPECT_EQ(back.splits.at("train"), m.splits.at("train"));

  write_file_atomic(dir / "bad.yaml", "schema: rawdrift.manifest/1\nentries: []\nextra: 1\n");
  EXPECT_THROW(load_manifest(dir / "bad.yaml"), Error);
  write_file_atomic(dir / "abs.yaml",
                    "schema: rawdrift.manifest/1\nentries:\n  - {url: http://h/a, path: /etc/a, sha256: " +
                        std::string(64, 'a') + ", size: 1}\n");
  EXPECT_THROW(load_manifest(dir / "abs.yaml"), Error);
}
