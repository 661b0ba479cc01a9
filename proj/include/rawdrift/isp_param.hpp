#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "rawdrift/isp_static.hpp"
#include "rawdrift/tape.hpp"

namespace rawdrift {

enum class ParamGroup { BL = 0, DM, WB, CC, SH, DN, GC };
inline constexpr std::size_t kParamGroups = 7;
inline constexpr std::array<ParamGroup, kParamGroups> kAllGroups = {
    ParamGroup::BL, ParamGroup::DM, ParamGroup::WB, ParamGroup::CC,
    ParamGroup::SH, ParamGroup::DN, ParamGroup::GC};

/// "BL", "DM", ... as used in configs and reports.
const char* to_string(ParamGroup group);
ParamGroup parse_param_group(std::string_view name);

struct ParamGroupMask {
  std::array<bool, kParamGroups> trainable{};

  static ParamGroupMask all();
  static ParamGroupMask none() { return {}; }
  static ParamGroupMask only(ParamGroup group);
  /// "all", "none" or a '+'-joined list such as "WB+CC".
  static ParamGroupMask parse(std::string_view spec);

  bool operator[](ParamGroup g) const { return trainable[std::size_t(g)]; }
  bool any() const;
  std::string to_string() const;
};

/// θ₁..θ₇ of the parametrized pipeline.
struct PipelineParams {
  Tensor black_level{{4}};       // θ₁: bl1..bl4
  Tensor demosaic{{3, 3, 3}};    // θ₂: R, G, B sparse-plane kernels
  Tensor white_balance{{3}};     // θ₃
  Tensor colour_matrix{{3, 3}};  // θ₄
  Tensor sharpen{{3, 3}};        // θ₅
  Tensor denoise{{5, 5}};        // θ₆
  Tensor gamma{{1}};             // θ₇
  bool output_standardize = false;

  Tensor& group(ParamGroup g);
  const Tensor& group(ParamGroup g) const;
  /// Throws on wrong shapes, non-finite entries or gamma <= 0.
  void validate() const;
  /// Clamps gamma to the positive floor used during optimization.
  void project();

  friend bool operator==(const PipelineParams&, const PipelineParams&) = default;
};

inline constexpr double kGammaFloor = 1e-3;
inline constexpr double kStandardizeEps = 1e-5;

PipelineParams default_params();
/// Parameters reproducing process_static for the (Bilinear, SharpFilter,
/// Gaussian) family; other algorithm choices are Unsupported.
PipelineParams static_equivalence_params(const StaticConfig& config);

/// Tape leaves for the seven groups; groups outside the mask are constants.
struct PipelineVars {
  std::array<Var, kParamGroups> groups;
  bool output_standardize = false;

  Var operator[](ParamGroup g) const { return groups[std::size_t(g)]; }
};

PipelineVars attach(Tape& tape, const PipelineParams& params, const ParamGroupMask& trainable);

struct StageTrace {
  std::vector<std::pair<Stage, Var>> stages;
};

/// Raw batch N×H×W -> view batch N×3×H×W.
Var process_param(Var raw, const PipelineVars& params, const CfaLayout& cfa, StageTrace* trace = nullptr);
/// Single image without gradients.
RgbImage process_param(const RawImage& raw, const PipelineParams& params);

/// Stacks same-sized raws (N×H×W). All must share one CFA layout.
Tensor stack_raws(const std::vector<RawImage>& raws);

std::string serialize_params(const PipelineParams& params);
PipelineParams deserialize_params(std::string_view document);

}  // namespace rawdrift
