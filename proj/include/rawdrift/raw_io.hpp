#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rawdrift/tensor.hpp"

namespace rawdrift {

enum class Channel : int { R = 0, G = 1, B = 2 };

/// Assignment of colour filters to the four (row parity, column parity)
/// sites of a 2×2 Bayer cell.
class CfaLayout {
 public:
  /// `sites` indexed by 2 * (row % 2) + (col % 2). Throws unless the cell
  /// holds exactly one R, one B and two G.
  explicit CfaLayout(std::array<Channel, 4> sites);

  /// B at (even, even), G at mixed parity, R at (odd, odd).
  static CfaLayout bggr();
  static CfaLayout rggb();
  static CfaLayout grbg();
  static CfaLayout gbrg();
  /// Four-letter pattern name, row-major over the 2×2 cell ("BGGR").
  static CfaLayout parse(std::string_view name);

  Channel at(std::size_t row, std::size_t col) const { return sites_[2 * (row % 2) + col % 2]; }
  std::array<int, 4> site_channels() const;
  std::string name() const;

  friend bool operator==(const CfaLayout&, const CfaLayout&) = default;

 private:
  std::array<Channel, 4> sites_;
};

struct Label {
  std::optional<int> class_id;
  /// H×W, values 0 or 1.
  std::optional<Tensor> mask;
};

/// Single-plane mosaic normalized from 16-bit counts to [0, 1].
struct RawImage {
  Tensor data;  // H×W
  CfaLayout cfa = CfaLayout::bggr();
  Label label;

  std::size_t height() const { return data.dim(0); }
  std::size_t width() const { return data.dim(1); }
  /// Throws unless the shape is H×W with even sides and values in [0, 1].
  void validate() const;
};

enum class Stage {
  BlackLevel,
  Demosaic,
  WhiteBalance,
  ColorCorrect,
  Yuv,
  Sharpen,
  Denoise,
  Gamma,
  Standardized,
  External,
};

const char* to_string(Stage stage);

/// 3×H×W view at some stage of the pipeline. Only Gamma-stage views are
/// guaranteed to lie in [0, 1].
struct RgbImage {
  Tensor data;
  Stage stage = Stage::External;

  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

/// Value stored for a 16-bit quantized sample: round half up of v·65535
/// after clipping to [0, 1].
std::uint16_t quantize16(double v);

/// Sidecar metadata path for a raw image: "scene.pgm" -> "scene.yaml".
std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

/// Reads a binary 16-bit PGM (P5, maxval 65535) and its sidecar.
RawImage load_raw(const std::filesystem::path& path);
/// Writes PGM + sidecar (+ 8-bit mask PNG when the label carries a mask).
void write_raw(const RawImage& image, const std::filesystem::path& path,
               std::string_view provenance = "");

/// 16-bit three-channel PNG, values clipped to [0, 1] before quantization.
void write_rgb(const RgbImage& image, const std::filesystem::path& path);
RgbImage load_rgb(const std::filesystem::path& path);

/// 8-bit single-channel PNG with 0 / 255 values.
void write_mask(const Tensor& mask, const std::filesystem::path& path);
Tensor load_mask(const std::filesystem::path& path);

/// Samples, at each pixel, the channel its CFA site selects.
RawImage mosaic(const RgbImage& image, const CfaLayout& cfa);

/// Writes bytes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace rawdrift
