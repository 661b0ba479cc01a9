#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rawdrift/isp_param.hpp"
#include "rawdrift/task_models.hpp"

namespace rawdrift {

// Corruption baseline ------------------------------------------------------

enum class CorruptionKind { GaussNoise, GaussBlur, Contrast, Brightness, Saturate };
CorruptionKind parse_corruption_kind(std::string_view name);
const char* to_string(CorruptionKind kind);
inline constexpr std::array<CorruptionKind, 5> kAllCorruptions = {
    CorruptionKind::GaussNoise, CorruptionKind::GaussBlur, CorruptionKind::Contrast, CorruptionKind::Brightness,
    CorruptionKind::Saturate};

/// Parameter for severities 1..5:
///   gauss_noise  noise std            0.04 0.06 0.08 0.09 0.10
///   gauss_blur   blur sigma (pixels)  0.4  0.6  0.8  1.0  1.5
///   contrast     1 - factor on (v-μ)  0.25 0.5  0.6  0.7  0.85
///   brightness   additive shift       0.05 0.1  0.15 0.2  0.3
///   saturate     chroma gain - 1      0.5  1.0  2.0  3.0  4.0
double corruption_parameter(CorruptionKind kind, int severity);
/// Applies a corruption with an explicit parameter (0 is the identity for
/// every kind). Output clipped to [0, 1].
RgbImage corrupt_with(const RgbImage& view, CorruptionKind kind, double parameter, std::uint64_t seed);
RgbImage apply_corruption(const RgbImage& view, CorruptionKind kind, int severity, std::uint64_t seed);

// Difference images -----------------------------------------------------------

struct DiffImages {
  RgbImage diff;                  // |A - B| per channel
  std::array<double, 3> l2{};     // per-channel Euclidean norm
  std::array<double, 3> max{};    // per-channel max
  double l2_total = 0, max_total = 0;
};
DiffImages diff_images(const RgbImage& a, const RgbImage& b);

// Shared training protocol -----------------------------------------------------

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch = 16;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::size_t classes = 2;
};

/// Seeded k-fold split: test indices of each fold (train = the rest).
std::vector<std::vector<std::size_t>> make_folds(std::size_t count, std::size_t folds, std::uint64_t seed);
Labels labels_of(const std::vector<RawImage>& data, TaskKind task);

/// Trains a fresh model (init from `seed`) on `views` with epoch-shuffled
/// mini-batches drawn from `seed`.
TaskModel train_on_views(const Tensor& views, const Labels& labels, TaskKind task, const TrainConfig& train,
                         std::uint64_t seed);

// Drift synthesis -----------------------------------------------------------

struct SynthesisOptions {
  TaskKind task = TaskKind::Classification;
  std::size_t folds = 3;
  std::uint64_t seed = 0;
  TrainConfig train;
  std::vector<StaticConfig> configs = enumerate_configs();
  /// Corruption baseline, evaluated on each train config's own views.
  std::vector<CorruptionKind> corruptions{kAllCorruptions.begin(), kAllCorruptions.end()};
  int corruption_severity = 3;
  unsigned threads = 1;
};

struct CorruptionRow {
  std::size_t train = 0;
  CorruptionKind kind{};
  double mean = 0, std = 0;
};

struct SynthesisReport {
  std::vector<std::string> labels;
  std::vector<std::vector<std::vector<double>>> fold_scores;  // [fold][train][test]
  std::vector<std::vector<double>> mean, std;                 // [train][test] over folds
  std::vector<double> row_mean, row_std;                      // per train config, over folds of the row average
  std::vector<std::size_t> ranking;                           // train configs by row_mean, best first
  std::size_t worst_train = 0, worst_test = 0;                // lowest off-diagonal mean
  DiffImages worst_diff;                                      // views of the first raw under both configs
  std::vector<CorruptionRow> corruption;

  double diagonal_mean() const;
  double off_diagonal_mean() const;
  std::string matrix_csv() const;
  std::string folds_csv() const;
  std::string ranking_csv() const;
  std::string corruption_csv() const;
};

SynthesisReport run_synthesis(const std::vector<RawImage>& data, const SynthesisOptions& options);

// Drift forensics -----------------------------------------------------------

struct ForensicsConfig {
  double lambda = 0;
  std::size_t steps = 20;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double lr = 1e-2;
  ParamGroupMask mask = ParamGroupMask::all();
  std::uint64_t seed = 0;
};

struct ForensicsBatch {
  Tensor raw;  // N×H×W
  Labels labels;
};

struct ForensicsReport {
  double lambda = 0;
  std::string groups;
  double baseline_score = 0;       // held-out batch, baseline θ
  double score = 0;                // held-out batch, reported θ̃
  double l2 = 0;                   // held-out batch, mean over images of ‖V − Ṽ‖²
  double opt_baseline_score = 0;   // optimization batch
  double opt_score = 0;
  std::vector<double> objective;   // objective at every evaluated step, step 0 first
  std::size_t best_step = 0;       // iterate reported (lowest objective)
  bool aborted = false;
  PipelineParams theta;
};

/// Minimizes λ·ℓ₂(V, Ṽ) − L(Ṽ, Y) over the unmasked groups of θ̃ starting at
/// `baseline`; V is computed once on the optimization batch. The reported θ̃
/// is the best iterate seen, so its objective never exceeds the initial one.
ForensicsReport run_forensics(const TaskModel& model, const PipelineParams& baseline, const CfaLayout& cfa,
                              const ForensicsBatch& optimize_on, const ForensicsBatch& test_on,
                              const ForensicsConfig& config);

std::string forensics_csv(const std::vector<ForensicsReport>& rows);
std::string forensics_trajectory_csv(const std::vector<ForensicsReport>& rows);

// Drift optimization --------------------------------------------------------

enum class OptimizationMode { Learned, Frozen, DirectRaw };
OptimizationMode parse_optimization_mode(std::string_view name);
const char* to_string(OptimizationMode mode);

struct OptimizationOptions {
  TaskKind task = TaskKind::Classification;
  OptimizationMode mode = OptimizationMode::Learned;
  std::size_t folds = 3;
  std::uint64_t seed = 0;
  TrainConfig train;
  double pipeline_lr = 1e-3;
  ParamGroupMask pipeline_mask = ParamGroupMask::all();
  bool output_standardize = true;
  std::size_t eval_every = 10;
};

struct TrajectoryPoint {
  std::size_t fold = 0, step = 0;
  double score = 0;
};

struct OptimizationRun {
  OptimizationMode mode{};
  std::vector<TrajectoryPoint> trajectory;
  std::vector<PipelineParams> final_params;  // per fold
  double mean = 0, std = 0;                  // over folds and evaluated steps

  std::string trajectory_csv() const;
};

OptimizationRun run_drift_optimization(const std::vector<RawImage>& data, const OptimizationOptions& options);
/// One row per run: mode, mean, std, number of trajectory points.
std::string optimization_summary_csv(const std::vector<OptimizationRun>& runs);

/// Processes raws into an N×3×H×W view batch.
Tensor static_views(const std::vector<RawImage>& data, const StaticConfig& config);
/// Bilinear demosaic only; the direct-raw input representation.
Tensor demosaic_views(const std::vector<RawImage>& data);

/// Scales raw values (low-light emulation), re-quantized to the 16-bit grid.
std::vector<RawImage> scale_intensity(const std::vector<RawImage>& data, double factor);

}  // namespace rawdrift
