#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rawdrift {

struct ManifestEntry {
  std::string url;
  std::string path;    // relative to the destination directory
  std::string sha256;  // lowercase hex
  std::uint64_t size = 0;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::map<std::string, std::vector<std::string>> splits;
};

/// Strict YAML reader: unknown keys, duplicate or absolute paths and
/// malformed checksums are rejected.
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string manifest_to_yaml(const DatasetManifest& manifest);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

enum class FetchStatus { AlreadyValid, Downloaded, ChecksumMismatch, NetworkError };
const char* to_string(FetchStatus status);

struct FetchRecord {
  std::string path;
  FetchStatus status;
  std::string detail;
};

struct FetchReport {
  std::vector<FetchRecord> records;

  std::size_t count(FetchStatus status) const;
  std::size_t downloads() const { return count(FetchStatus::Downloaded); }
  bool complete() const;
  std::string to_csv() const;
};

struct FetchOptions {
  int attempts = 2;
  int timeout_seconds = 30;
};

/// Idempotent: entries already present with matching size and checksum are
/// skipped. Rejected downloads never replace the destination file.
FetchReport fetch_dataset(const DatasetManifest& manifest, const std::filesystem::path& destination,
                          const FetchOptions& options = {});

}  // namespace rawdrift
