#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "rawdrift/raw_io.hpp"

namespace rawdrift {

namespace constants {

inline constexpr std::array<double, 9> K_G = {0, 0.25, 0, 0.25, 1, 0.25, 0, 0.25, 0};
inline constexpr std::array<double, 9> K_RB = {0.25, 0.5, 0.25, 0.5, 1, 0.5, 0.25, 0.5, 0.25};

inline constexpr std::array<double, 9> M_RGB_2_YUV = {
    0.299,       0.587,       0.114,        //
    -0.14714119, -0.28886916, 0.43601035,   //
    0.61497538,  -0.51496512, -0.10001026,  //
};
inline constexpr std::array<double, 9> M_YUV_2_RGB = {
    1.0000000000e+00, -4.1827794561e-09, 1.1398830414e+00,   //
    1.0000000000e+00, -3.9464232326e-01, -5.8062183857e-01,  //
    1.0000000000e+00, 2.0320618153e+00,  -1.2232658220e-09,  //
};

inline constexpr std::array<double, 25> K_BLUR = {
    6.9625e-08, 2.8089e-05, 2.0755e-04, 2.8089e-05, 6.9625e-08,  //
    2.8089e-05, 1.1332e-02, 8.3731e-02, 1.1332e-02, 2.8089e-05,  //
    2.0755e-04, 8.3731e-02, 6.1869e-01, 8.3731e-02, 2.0755e-04,  //
    2.8089e-05, 1.1332e-02, 8.3731e-02, 1.1332e-02, 2.8089e-05,  //
    6.9625e-08, 2.8089e-05, 2.0755e-04, 2.8089e-05, 6.9625e-08,  //
};
inline constexpr std::array<double, 9> K_SHARP = {0, -1, 0, -1, 5, -1, 0, -1, 0};

inline constexpr std::array<double, 4> DEFAULT_BLACK_LEVEL = {0, 0, 0, 0};
inline constexpr std::array<double, 3> DEFAULT_WHITE_BALANCE = {1, 1, 1};
inline constexpr std::array<double, 9> DEFAULT_COLOUR_MATRIX = {1, 0, 0, 0, 1, 0, 0, 0, 1};
inline constexpr double DEFAULT_GAMMA = 2.2;

/// Black-level slot (0-based into bl1..bl4) for each site 2 * (row % 2) + col % 2.
inline constexpr std::array<int, 4> BLACK_LEVEL_SLOT = {3, 1, 2, 0};

/// Unsharp masking: Gaussian radius and amount.
inline constexpr double UNSHARP_SIGMA = 1.0;
inline constexpr double UNSHARP_AMOUNT = 1.0;

}  // namespace constants

enum class DemosaicAlgo { Bilinear, Malvar2004, Menon2007 };
enum class SharpenAlgo { SharpFilter, UnsharpMask };
enum class DenoiseAlgo { Gaussian, Median };

struct StaticConfig {
  DemosaicAlgo demosaic = DemosaicAlgo::Bilinear;
  SharpenAlgo sharpen = SharpenAlgo::SharpFilter;
  DenoiseAlgo denoise = DenoiseAlgo::Gaussian;
  std::array<double, 4> bl = constants::DEFAULT_BLACK_LEVEL;
  std::array<double, 3> wb = constants::DEFAULT_WHITE_BALANCE;
  std::array<double, 9> cc = constants::DEFAULT_COLOUR_MATRIX;
  double gamma = constants::DEFAULT_GAMMA;

  /// "bi,s,ga" style label: demosaic {bi,ma,me}, sharpen {s,u}, denoise {me,ga}.
  std::string abbreviation() const;
  /// Sets the three algorithm choices; continuous parameters are untouched.
  static StaticConfig from_abbreviation(std::string_view abbreviation);
  void validate() const;
};

/// All twelve algorithm triples with default continuous parameters.
std::vector<StaticConfig> enumerate_configs();

// Stages. Raw planes are H×W, views 3×H×W; all borders use reflect padding.
Tensor black_level(const Tensor& raw, const std::array<double, 4>& bl, bool clamp = true);
RgbImage demosaic(const RawImage& raw, DemosaicAlgo algo);
RgbImage white_balance(const RgbImage& view, const std::array<double, 3>& wb);
RgbImage color_correct(const RgbImage& view, const std::array<double, 9>& matrix);
RgbImage rgb_to_yuv(const RgbImage& view);
RgbImage yuv_to_rgb(const RgbImage& view);
RgbImage sharpen(const RgbImage& view, SharpenAlgo algo);
/// Filtering only; the pipeline follows it with yuv_to_rgb.
RgbImage denoise(const RgbImage& view, DenoiseAlgo algo);
RgbImage gamma_correct(const RgbImage& view, double gamma);

/// One entry per stage boundary: BL (as 1×H×W), DM, WB, CC, YUV, SH, DN
/// (back in RGB), GC.
std::vector<RgbImage> process_static_stages(const RawImage& raw, const StaticConfig& config);
RgbImage process_static(const RawImage& raw, const StaticConfig& config);

/// Plain same-size cross-correlation of one plane with reflect padding.
void correlate_plane(const double* in, double* out, std::size_t h, std::size_t w,
                     const double* kernel, std::size_t k);

}  // namespace rawdrift
