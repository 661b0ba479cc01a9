#include "rawdrift/fetch.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <iomanip>
#include <set>
#include <sstream>

#include "httplib.h"
#include "rawdrift/error.hpp"
#include "rawdrift/raw_io.hpp"

namespace fs = std::filesystem;

namespace rawdrift {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorCode::Io, "sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

const char* to_string(FetchStatus status) {
  switch (status) {
    case FetchStatus::AlreadyValid: return "already_valid";
    case FetchStatus::Downloaded: return "downloaded";
    case FetchStatus::ChecksumMismatch: return "checksum_mismatch";
    case FetchStatus::NetworkError: return "network_error";
  }
  return "unknown";
}

std::size_t FetchReport::count(FetchStatus status) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                [status](const FetchRecord& r) { return r.status == status; }));
}

bool FetchReport::complete() const {
  return count(FetchStatus::AlreadyValid) + count(FetchStatus::Downloaded) == records.size();
}

std::string FetchReport::to_csv() const {
  std::string out = "path,status,detail\n";
  for (const auto& r : records) {
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), ',', ';');
    out += r.path + "," + to_string(r.status) + "," + detail + "\n";
  }
  return out;
}

DatasetManifest load_manifest(const fs::path& path) {
  DatasetManifest m;
  try {
    const YAML::Node doc = YAML::LoadFile(path.string());
    for (const auto& kv : doc) {
      const auto key = kv.first.as<std::string>();
      if (key != "schema" && key != "entries" && key != "splits") {
        fail(ErrorCode::Schema, "unknown manifest key '" + key + "'");
      }
    }
    if (!doc["schema"] || doc["schema"].as<std::string>() != "rawdrift.manifest/1") {
      fail(ErrorCode::Schema, "manifest schema must be rawdrift.manifest/1");
    }
    std::set<std::string> seen;
    for (const auto& e : doc["entries"]) {
      for (const auto& kv : e) {
        const auto key = kv.first.as<std::string>();
        if (key != "url" && key != "path" && key != "sha256" && key != "size") {
          fail(ErrorCode::Schema, "unknown manifest entry key '" + key + "'");
        }
      }
      ManifestEntry entry{e["url"].as<std::string>(), e["path"].as<std::string>(),
                          e["sha256"].as<std::string>(), e["size"].as<std::uint64_t>()};
      const fs::path rel(entry.path);
      if (rel.is_absolute() || entry.path.find("..") != std::string::npos) {
        fail(ErrorCode::Schema, "manifest paths must be relative: " + entry.path);
      }
      if (!seen.insert(entry.path).second) fail(ErrorCode::Schema, "duplicate manifest path " + entry.path);
      if (entry.sha256.size() != 64 ||
          !std::all_of(entry.sha256.begin(), entry.sha256.end(),
                       [](char c) { return std::isdigit(static_cast<unsigned char>(c)) || (c >= 'a' && c <= 'f'); })) {
        fail(ErrorCode::Schema, "bad sha256 for " + entry.path);
      }
      m.entries.push_back(std::move(entry));
    }
    if (const YAML::Node splits = doc["splits"]) {
      for (const auto& kv : splits) {
        auto& list = m.splits[kv.first.as<std::string>()];
        for (const auto& p : kv.second) {
          const auto name = p.as<std::string>();
          if (!seen.count(name)) fail(ErrorCode::Schema, "split references unknown path " + name);
          list.push_back(name);
        }
      }
    }
  } catch (const YAML::Exception& e) {
    fail(ErrorCode::Schema, "malformed manifest " + path.string() + ": " + e.what());
  }
  return m;
}

std::string manifest_to_yaml(const DatasetManifest& manifest) {
  YAML::Emitter out;
  out << YAML::BeginMap << YAML::Key << "schema" << YAML::Value << "rawdrift.manifest/1";
  out << YAML::Key << "entries" << YAML::Value << YAML::BeginSeq;
  for (const auto& e : manifest.entries) {
    out << YAML::BeginMap << YAML::Key << "url" << YAML::Value << e.url << YAML::Key << "path"
        << YAML::Value << e.path << YAML::Key << "sha256" << YAML::Value << e.sha256 << YAML::Key
        << "size" << YAML::Value << e.size << YAML::EndMap;
  }
  out << YAML::EndSeq;
  if (!manifest.splits.empty()) {
    out << YAML::Key << "splits" << YAML::Value << YAML::BeginMap;
    for (const auto& [name, list] : manifest.splits) {
      out << YAML::Key << name << YAML::Value << YAML::Flow << list;
    }
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string target;  // /path?query
};

Url split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(ErrorCode::Schema, "URL lacks a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") fail(ErrorCode::Schema, "unsupported URL scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool matches(const fs::path& file, const ManifestEntry& e) {
  std::error_code ec;
  if (!fs::is_regular_file(file, ec)) return false;
  if (fs::file_size(file, ec) != e.size || ec) return false;
  return sha256_file(file) == e.sha256;
}

}  // namespace

FetchReport fetch_dataset(const DatasetManifest& manifest, const fs::path& destination,
                          const FetchOptions& options) {
  FetchReport report;
  for (const auto& e : manifest.entries) {
    const fs::path target = destination / e.path;
    if (matches(target, e)) {
      report.records.push_back({e.path, FetchStatus::AlreadyValid, ""});
      continue;
    }
    const Url url = split_url(e.url);
    std::string error;
    std::optional<std::string> body;
    for (int attempt = 0; attempt < std::max(1, options.attempts) && !body; ++attempt) {
      httplib::Client client(url.origin);
      client.set_connection_timeout(options.timeout_seconds, 0);
      client.set_read_timeout(options.timeout_seconds, 0);
      client.set_follow_location(true);
      auto res = client.Get(url.target);
      if (!res) {
        error = "request failed: " + httplib::to_string(res.error());
      } else if (res->status != 200) {
        error = "HTTP status " + std::to_string(res->status);
      } else {
        body = std::move(res->body);
      }
    }
    if (!body) {
      report.records.push_back({e.path, FetchStatus::NetworkError,
                                error + "; rerun fetch to retry (verified files are skipped)"});
      continue;
    }
    const std::string digest = sha256_hex(*body);
    if (body->size() != e.size || digest != e.sha256) {
      report.records.push_back({e.path, FetchStatus::ChecksumMismatch,
                                "got " + std::to_string(body->size()) + " bytes sha256 " + digest});
      continue;
    }
    write_file_atomic(target, *body);
    report.records.push_back({e.path, FetchStatus::Downloaded, ""});
  }
  return report;
}

}  // namespace rawdrift
