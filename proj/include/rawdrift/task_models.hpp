#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rawdrift/isp_param.hpp"
#include "rawdrift/tape.hpp"

namespace rawdrift {

enum class TaskKind { Classification, Segmentation };
TaskKind parse_task_kind(std::string_view name);
const char* to_string(TaskKind kind);

/// Named parameter tensors in a fixed order.
struct TaskModel {
  TaskKind kind = TaskKind::Classification;
  std::size_t classes = 2;  // classification only
  std::vector<std::pair<std::string, Tensor>> params;

  std::size_t parameter_count() const;
  friend bool operator==(const TaskModel&, const TaskModel&) = default;
};

/// conv(3→8) ReLU pool, conv(8→16) ReLU pool, global average pool, linear(16→K).
TaskModel make_classifier(std::size_t classes, std::uint64_t seed);
/// Two-level encoder/decoder with skip connections and a 1×1 head; input
/// sides must be multiples of 4.
TaskModel make_segmenter(std::uint64_t seed);
TaskModel make_model(TaskKind kind, std::size_t classes, std::uint64_t seed);

std::vector<Var> attach(Tape& tape, const TaskModel& model, bool trainable);
/// views N×3×H×W -> logits N×K (classifier) or N×H×W (segmenter).
Var forward(const TaskModel& model, const std::vector<Var>& params, Var views);
/// Convenience forward without gradients.
Tensor forward(const TaskModel& model, const Tensor& views);

struct Labels {
  std::vector<int> classes;  // classification
  Tensor masks;              // segmentation, N×H×W of 0 / 1

  std::size_t size() const { return classes.empty() ? (masks.rank() ? masks.dim(0) : 0) : classes.size(); }
  Labels subset(const std::vector<std::size_t>& rows) const;
};

enum class LossKind { CrossEntropy, BceDice, SqL2 };
LossKind parse_loss_kind(std::string_view name);
const char* to_string(LossKind kind);
/// Cross entropy for classification, BCE + Dice for segmentation.
LossKind default_loss(TaskKind kind);

/// SqL2 is the batch mean of ‖logits − target‖², the target being one-hot
/// classes or the mask.
Var task_loss(Var logits, const Labels& labels, LossKind kind);

enum class OptimizerKind { Sgd, Adam };
OptimizerKind parse_optimizer_kind(std::string_view name);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m, v;

  /// Advances the step counter once per optimizer step (call before update).
  void begin_step() { ++step; }
  void update(const std::string& slot, Tensor& param, const Tensor& grad);
};

/// Jointly differentiable pipeline parameters for train_step.
struct PipelineSlot {
  PipelineParams* params = nullptr;
  ParamGroupMask mask;
  OptimizerState* optimizer = nullptr;
};

/// One optimization step on views already computed (static pipeline, raw
/// demosaic or cached). Returns the loss before the update.
double train_step(TaskModel& model, OptimizerState& opt, const Tensor& views, const Labels& labels, LossKind loss);
/// One step through the parametrized pipeline from an N×H×W raw batch.
/// Pipeline groups outside `pipeline.mask` are left untouched.
double train_step(TaskModel& model, OptimizerState& opt, const Tensor& raw, const CfaLayout& cfa,
                  const Labels& labels, LossKind loss, PipelineSlot pipeline);

enum class Metric { Accuracy, Iou };
Metric default_metric(TaskKind kind);
const char* to_string(Metric metric);

/// Accuracy from N×K logits, or mean per-item IoU from N×H×W logits with a
/// 0.5 probability threshold (empty union counts as 1).
double score(const Tensor& logits, const Labels& labels, Metric metric);
double evaluate(const TaskModel& model, const Tensor& views, const Labels& labels, Metric metric,
                std::size_t chunk = 64);

std::string serialize_model(const TaskModel& model);
TaskModel deserialize_model(std::string_view document);

/// Rows of `t` along its leading axis, in the given order.
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows);

}  // namespace rawdrift
