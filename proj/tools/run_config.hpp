#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rawdrift/drift_controls.hpp"
#include "rawdrift/scenes.hpp"

namespace rawdrift::cli {

enum class Command { Process, Synth, Forensics, Optimize, Gradcheck, Fetch };
Command parse_command(std::string_view name);
const char* to_string(Command command);

struct DataSection {
  std::string source = "synth";  // synth | files
  DatasetKind dataset = DatasetKind::Shapes;
  std::size_t count = 64;
  std::size_t size = 32;
  double intensity_scale = 1.0;
  double texture_low = 0.02;
  double texture_high = 0.08;
  std::string cfa = "BGGR";
  std::vector<std::filesystem::path> files;  // absolute after resolution
};

struct PipelineSection {
  std::vector<StaticConfig> configs = enumerate_configs();
  std::optional<std::filesystem::path> params;  // parameter document
  bool dump_stages = false;
};

struct SynthesisSection {
  std::size_t folds = 2;
  std::vector<CorruptionKind> corruptions{kAllCorruptions.begin(), kAllCorruptions.end()};
  int severity = 3;
  unsigned threads = 1;
};

struct ForensicsSection {
  std::vector<double> lambdas{0, 1e-3, 1e-2, 1e-1, 1, 10, 1e2, 1e6};
  std::vector<ParamGroupMask> groups{ParamGroupMask::all()};
  std::size_t steps = 20;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr = 1e-2;
  std::size_t optimize_count = 16;
  std::size_t test_count = 16;
  std::optional<std::filesystem::path> model;  // checkpoint; trained when absent
};

struct OptimizationSection {
  std::vector<OptimizationMode> modes{OptimizationMode::Learned, OptimizationMode::Frozen, OptimizationMode::DirectRaw};
  std::size_t folds = 2;
  double pipeline_lr = 1e-3;
  ParamGroupMask pipeline_groups = ParamGroupMask::all();
  bool output_standardize = true;
  std::size_t eval_every = 10;
};

struct GradcheckSection {
  std::size_t count = 20;
  std::size_t size = 16;
  double step = 1e-5;
  double tolerance = 1e-4;
  double pixel_margin = 1e-2;
  bool include_raw = true;
  std::string cfa = "BGGR";
  std::optional<std::filesystem::path> params;
  std::optional<std::pair<std::string, double>> fault;
};

struct FetchSection {
  std::filesystem::path manifest;
  std::optional<std::filesystem::path> destination;  // cache directory when absent
  int attempts = 2;
  int timeout_seconds = 30;
};

struct RunConfig {
  Command command = Command::Process;
  std::uint64_t seed = 0;
  DataSection data;
  TaskKind task = TaskKind::Classification;
  TrainConfig train;
  PipelineSection pipeline;
  SynthesisSection synthesis;
  ForensicsSection forensics;
  OptimizationSection optimization;
  GradcheckSection gradcheck;
  FetchSection fetch;
};

/// Strict parse: unknown keys, keys from another command's sections and
/// out-of-range values are Config errors. Relative paths resolve against
/// `base_dir`.
RunConfig parse_run_config(const std::string& text, Command expected, const std::filesystem::path& base_dir);
/// Full effective configuration, defaults included. Parsing the output
/// yields the same configuration.
std::string resolved_yaml(const RunConfig& config);

}  // namespace rawdrift::cli
