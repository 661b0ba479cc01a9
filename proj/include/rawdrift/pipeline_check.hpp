#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rawdrift/isp_param.hpp"

namespace rawdrift {

struct GradcheckOptions {
  double step = 1e-5;
  /// Output pixels whose pre-clip value lies within this distance of 0 or 1
  /// get zero loss weight. Near 0 the slope of v^(1/γ) is unbounded, and the
  /// truncation error of central differences grows like step² · v^(1/γ - 3).
  double pixel_margin = 1e-2;
  /// Coordinates whose ±step perturbation brings any weighted pre-clip value
  /// within this distance of 0 or 1 are skipped.
  double boundary_margin = 1e-6;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  bool include_raw = true;
  /// Scales the adjoint of one tape op by a factor (negative control).
  std::optional<std::pair<std::string, double>> fault;
};

struct GradcheckRow {
  std::string name;  // parameter group name or "raw"
  double rel_error = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;

  bool pass() const;
  double worst() const;
  std::string to_csv() const;
};

/// Compares backward gradients of a fixed random weighted sum of the
/// pipeline output against central finite differences, per θ group and for
/// the raw input. `raw` is N×H×W.
GradcheckReport pipeline_gradcheck(const Tensor& raw, const CfaLayout& cfa, const PipelineParams& params,
                                   const GradcheckOptions& options = {});

}  // namespace rawdrift
