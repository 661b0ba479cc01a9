#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "rawdrift/raw_io.hpp"

namespace rawdrift {

enum class SceneKind { Disks, Stripes, Gradient, NoiseTexture };

SceneKind parse_scene_kind(std::string_view name);
const char* to_string(SceneKind kind);

struct SceneSpec {
  SceneKind kind = SceneKind::Disks;
  std::uint64_t seed = 0;
  std::size_t size = 64;
  std::optional<int> class_id;
  /// Attach a mask marking disk pixels (all-zero for disk-free scenes).
  bool with_mask = false;
  /// NoiseTexture: half-width of the uniform per-photosite texture.
  double texture_amplitude = 0.05;
  /// Multiplies the mosaic before quantization (low-light emulation).
  double intensity_scale = 1.0;
  CfaLayout cfa = CfaLayout::bggr();
};

struct Disk {
  double cx, cy, radius;
  bool contains(std::size_t y, std::size_t x) const;
};

struct Scene {
  RgbImage truth;
  RawImage raw;
  std::vector<Disk> disks;
};

/// Deterministic in (spec). Raw values sit on the 16-bit grid.
Scene render_scene(const SceneSpec& spec);
RawImage synth_scene(const SceneSpec& spec);

enum class DatasetKind {
  /// Class 0 disks, class 1 stripes.
  Shapes,
  /// Noise-texture scenes; the class is the texture amplitude (low / high).
  Texture,
  /// Disk scenes with masks.
  Segmentation,
};

DatasetKind parse_dataset_kind(std::string_view name);
const char* to_string(DatasetKind kind);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Shapes;
  std::size_t count = 64;
  std::size_t size = 32;
  std::uint64_t seed = 0;
  double intensity_scale = 1.0;
  double texture_low = 0.02;
  double texture_high = 0.08;
  CfaLayout cfa = CfaLayout::bggr();
};

/// Balanced, class-interleaved labelled raws.
std::vector<RawImage> synth_dataset(const DatasetSpec& spec);

/// splitmix64 step; used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace rawdrift
