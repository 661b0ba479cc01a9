#include "rawdrift/task_models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rawdrift/document.hpp"
#include "rawdrift/error.hpp"
#include "rawdrift/ops.hpp"

namespace rawdrift {

namespace o = ops;

namespace {

constexpr const char* kCheckpointSchema = "rawdrift.checkpoint/1";

Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

void add_conv(TaskModel& m, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
              std::mt19937_64& rng) {
  m.params.emplace_back(name + ".weight", glorot({cout, cin, k, k}, cin * k * k, cout * k * k, rng));
  m.params.emplace_back(name + ".bias", Tensor({cout}));
}

Tensor one_hot(const std::vector<int>& classes, std::size_t k) {
  Tensor t({classes.size(), k});
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (classes[i] < 0 || std::size_t(classes[i]) >= k) {
      fail(ErrorCode::Domain, "class label " + std::to_string(classes[i]) + " out of range");
    }
    t[i * k + std::size_t(classes[i])] = 1.0;
  }
  return t;
}

Gradients run_backward(Var loss) {
  const double value = loss.value().item();
  if (!std::isfinite(value)) fail(ErrorCode::NonFinite, "non-finite training loss; step aborted");
  return loss.tape().backward(loss);
}

void update_model(TaskModel& model, OptimizerState& opt, const std::vector<Var>& vars, const Gradients& grads) {
  opt.begin_step();
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (const Tensor* g = grads.find(vars[i])) opt.update(model.params[i].first, model.params[i].second, *g);
  }
}

}  // namespace

TaskKind parse_task_kind(std::string_view name) {
  if (name == "classification") return TaskKind::Classification;
  if (name == "segmentation") return TaskKind::Segmentation;
  fail(ErrorCode::Config, "unknown task kind '" + std::string(name) + "'");
}

const char* to_string(TaskKind kind) {
  return kind == TaskKind::Classification ? "classification" : "segmentation";
}

std::size_t TaskModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

TaskModel make_classifier(std::size_t classes, std::uint64_t seed) {
  if (classes < 2) fail(ErrorCode::Config, "classifier needs at least two classes");
  std::mt19937_64 rng(seed);
  TaskModel m{TaskKind::Classification, classes, {}};
  add_conv(m, "conv1", 3, 8, 3, rng);
  add_conv(m, "conv2", 8, 16, 3, rng);
  m.params.emplace_back("fc.weight", glorot({classes, 16}, 16, classes, rng));
  m.params.emplace_back("fc.bias", Tensor({classes}));
  return m;
}

TaskModel make_segmenter(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TaskModel m{TaskKind::Segmentation, 1, {}};
  add_conv(m, "enc1", 3, 8, 3, rng);
  add_conv(m, "enc2", 8, 16, 3, rng);
  add_conv(m, "dec1", 16, 16, 3, rng);
  add_conv(m, "dec2", 32, 8, 3, rng);
  add_conv(m, "head", 16, 1, 1, rng);
  return m;
}

TaskModel make_model(TaskKind kind, std::size_t classes, std::uint64_t seed) {
  return kind == TaskKind::Classification ? make_classifier(classes, seed) : make_segmenter(seed);
}

std::vector<Var> attach(Tape& tape, const TaskModel& model, bool trainable) {
  std::vector<Var> vars;
  for (const auto& [name, t] : model.params) vars.push_back(tape.leaf(t, trainable));
  return vars;
}

Var forward(const TaskModel& model, const std::vector<Var>& p, Var views) {
  const Shape& s = views.shape();
  if (s.size() != 4 || s[1] != 3) fail(ErrorCode::Shape, "task model expects N×3×H×W views, got " + shape_string(s));
  if (p.size() != model.params.size()) fail(ErrorCode::Shape, "parameter list does not match the model");
  if (model.kind == TaskKind::Classification) {
    Var x = o::max_pool2(o::relu(o::conv2d_dense(views, p[0], p[1])));
    x = o::max_pool2(o::relu(o::conv2d_dense(x, p[2], p[3])));
    return o::linear(o::global_avg_pool(x), p[4], p[5]);
  }
  if (s[2] % 4 || s[3] % 4) fail(ErrorCode::Shape, "segmenter input sides must be multiples of 4");
  const Var e1 = o::relu(o::conv2d_dense(views, p[0], p[1]));           // 8 × H
  const Var e2 = o::relu(o::conv2d_dense(o::max_pool2(e1), p[2], p[3]));  // 16 × H/2
  Var d = o::relu(o::conv2d_dense(o::max_pool2(e2), p[4], p[5]));         // 16 × H/4
  d = o::concat_channels(o::upsample2(d), e2);                             // 32 × H/2
  d = o::relu(o::conv2d_dense(d, p[6], p[7]));                             // 8 × H/2
  d = o::concat_channels(o::upsample2(d), e1);                             // 16 × H
  const Var logits = o::conv2d_dense(d, p[8], p[9]);
  return o::reshape(logits, {s[0], s[2], s[3]});
}

Tensor forward(const TaskModel& model, const Tensor& views) {
  Tape tape;
  return forward(model, attach(tape, model, false), tape.constant(views)).value();
}

Labels Labels::subset(const std::vector<std::size_t>& rows) const {
  Labels out;
  for (auto r : rows) {
    if (!classes.empty()) out.classes.push_back(classes.at(r));
  }
  if (masks.rank()) out.masks = gather_rows(masks, rows);
  return out;
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "cross_entropy") return LossKind::CrossEntropy;
  if (name == "bce_dice") return LossKind::BceDice;
  if (name == "sq_l2") return LossKind::SqL2;
  fail(ErrorCode::Config, "unknown loss '" + std::string(name) + "'");
}

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::CrossEntropy: return "cross_entropy";
    case LossKind::BceDice: return "bce_dice";
    case LossKind::SqL2: return "sq_l2";
  }
  return "unknown";
}

LossKind default_loss(TaskKind kind) {
  return kind == TaskKind::Classification ? LossKind::CrossEntropy : LossKind::BceDice;
}

Var task_loss(Var logits, const Labels& labels, LossKind kind) {
  const std::size_t n = logits.shape()[0];
  if (labels.size() != n) fail(ErrorCode::Shape, "label count does not match the batch");
  switch (kind) {
    case LossKind::CrossEntropy:
      if (labels.classes.empty()) fail(ErrorCode::Config, "cross entropy needs class labels");
      return o::softmax_cross_entropy(logits, labels.classes);
    case LossKind::BceDice:
      if (!labels.masks.rank()) fail(ErrorCode::Config, "bce_dice needs masks");
      return o::bce_dice(logits, labels.masks);
    case LossKind::SqL2: {
      const Tensor target = labels.classes.empty() ? labels.masks : one_hot(labels.classes, logits.shape()[1]);
      if (target.size() != logits.value().size()) fail(ErrorCode::Shape, "sq_l2 target does not match logits");
      const Var diff = o::sub(logits, logits.tape().constant(target.reshaped(logits.shape())));
      return o::scale(o::sq_l2(diff), 1.0 / double(n));
    }
  }
  fail(ErrorCode::Config, "unknown loss kind");
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  fail(ErrorCode::Config, "unknown optimizer '" + std::string(name) + "'");
}

void OptimizerState::update(const std::string& slot, Tensor& param, const Tensor& grad) {
  auto w = param.values();
  const auto g = grad.values();
  if (kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    return;
  }
  auto [mit, m_new] = m.try_emplace(slot, param.shape());
  auto [vit, v_new] = v.try_emplace(slot, param.shape());
  auto mv = mit->second.values();
  auto vv = vit->second.values();
  const double c1 = 1.0 - std::pow(beta1, double(step));
  const double c2 = 1.0 - std::pow(beta2, double(step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    mv[i] = beta1 * mv[i] + (1.0 - beta1) * g[i];
    vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i];
    w[i] -= lr * (mv[i] / c1) / (std::sqrt(vv[i] / c2) + eps);
  }
}

double train_step(TaskModel& model, OptimizerState& opt, const Tensor& views, const Labels& labels, LossKind loss) {
  Tape tape;
  const std::vector<Var> vars = attach(tape, model, true);
  const Var l = task_loss(forward(model, vars, tape.constant(views)), labels, loss);
  const Gradients grads = run_backward(l);
  update_model(model, opt, vars, grads);
  return l.value().item();
}

double train_step(TaskModel& model, OptimizerState& opt, const Tensor& raw, const CfaLayout& cfa,
                  const Labels& labels, LossKind loss, PipelineSlot pipeline) {
  if (!pipeline.params) fail(ErrorCode::Config, "train_step: pipeline slot without parameters");
  if (pipeline.mask.any() && !pipeline.optimizer) fail(ErrorCode::Config, "train_step: trainable pipeline needs an optimizer");
  Tape tape;
  const PipelineVars pvars = attach(tape, *pipeline.params, pipeline.mask);
  const std::vector<Var> vars = attach(tape, model, true);
  const Var views = process_param(tape.constant(raw), pvars, cfa);
  const Var l = task_loss(forward(model, vars, views), labels, loss);
  const Gradients grads = run_backward(l);
  update_model(model, opt, vars, grads);
  if (pipeline.mask.any()) {
    pipeline.optimizer->begin_step();
    for (auto g : kAllGroups) {
      if (!pipeline.mask[g]) continue;
      if (const Tensor* grad = grads.find(pvars[g])) {
        pipeline.optimizer->update(to_string(g), pipeline.params->group(g), *grad);
      }
    }
    pipeline.params->project();
  }
  return l.value().item();
}

Metric default_metric(TaskKind kind) { return kind == TaskKind::Classification ? Metric::Accuracy : Metric::Iou; }

const char* to_string(Metric metric) { return metric == Metric::Accuracy ? "accuracy" : "iou"; }

double score(const Tensor& logits, const Labels& labels, Metric metric) {
  const std::size_t n = labels.size();
  if (n == 0) fail(ErrorCode::Shape, "cannot score an empty dataset");
  if (logits.rank() == 0 || logits.dim(0) != n) fail(ErrorCode::Shape, "logit count does not match labels");
  const std::size_t per = logits.size() / n;
  double total = 0;
  if (metric == Metric::Accuracy) {
    if (labels.classes.empty()) fail(ErrorCode::Config, "accuracy needs class labels");
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = logits.values().data() + i * per;
      total += std::size_t(std::max_element(row, row + per) - row) == std::size_t(labels.classes[i]);
    }
    return total / double(n);
  }
  if (!labels.masks.rank() || labels.masks.size() != logits.size()) fail(ErrorCode::Shape, "IoU needs masks matching the logits");
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
      const bool pred = 1.0 / (1.0 + std::exp(-logits[j])) > 0.5;
      const bool truth = labels.masks[j] > 0.5;
      inter += pred && truth;
      uni += pred || truth;
    }
    total += uni == 0 ? 1.0 : double(inter) / double(uni);
  }
  return total / double(n);
}

double evaluate(const TaskModel& model, const Tensor& views, const Labels& labels, Metric metric, std::size_t chunk) {
  const std::size_t n = labels.size();
  if (n == 0) fail(ErrorCode::Shape, "cannot evaluate on an empty dataset");
  std::vector<double> logits;
  Shape logit_shape;
  for (std::size_t start = 0; start < n; start += chunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(n, start + chunk); ++i) rows.push_back(i);
    const Tensor out = forward(model, gather_rows(views, rows));
    logits.insert(logits.end(), out.values().begin(), out.values().end());
    logit_shape = out.shape();
  }
  logit_shape[0] = n;
  return score(Tensor(logit_shape, std::move(logits)), labels, metric);
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  if (t.rank() == 0) fail(ErrorCode::Shape, "gather_rows on a scalar");
  const std::size_t per = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = rows.size();
  std::vector<double> out;
  out.reserve(rows.size() * per);
  for (auto r : rows) {
    if (r >= t.dim(0)) fail(ErrorCode::Shape, "row index out of range");
    out.insert(out.end(), t.values().begin() + long(r * per), t.values().begin() + long((r + 1) * per));
  }
  return Tensor(std::move(shape), std::move(out), t.dtype());
}

std::string serialize_model(const TaskModel& model) {
  YAML::Emitter out;
  out << YAML::BeginMap << YAML::Key << "schema" << YAML::Value << kCheckpointSchema;
  out << YAML::Key << "task" << YAML::Value << to_string(model.kind);
  out << YAML::Key << "classes" << YAML::Value << model.classes;
  out << YAML::Key << "params" << YAML::Value << YAML::BeginSeq;
  for (const auto& [name, t] : model.params) {
    out << YAML::BeginMap << YAML::Key << "name" << YAML::Value << name;
    out << YAML::Key << "shape" << YAML::Value << YAML::Flow << t.shape();
    out << YAML::Key << "values" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (double v : t.values()) out << doc::format_double(v);
    out << YAML::EndSeq << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

TaskModel deserialize_model(std::string_view document) {
  const YAML::Node root = doc::load(std::string(document), "checkpoint");
  doc::require_keys(root, {"schema", "task", "classes", "params"}, "checkpoint");
  if (doc::required(root, "schema", "checkpoint").Scalar() != kCheckpointSchema) {
    fail(ErrorCode::Schema, std::string("checkpoint schema must be ") + kCheckpointSchema);
  }
  const TaskKind kind = parse_task_kind(doc::required(root, "task", "checkpoint").Scalar());
  const auto classes = doc::required(root, "classes", "checkpoint").as<std::size_t>();
  TaskModel expected = make_model(kind, classes, 0);
  const YAML::Node params = doc::required(root, "params", "checkpoint");
  if (!params.IsSequence() || params.size() != expected.params.size()) {
    fail(ErrorCode::Schema, "checkpoint parameter list does not match the architecture");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const YAML::Node p = params[i];
    doc::require_keys(p, {"name", "shape", "values"}, "checkpoint parameter");
    auto& [name, t] = expected.params[i];
    if (p["name"].Scalar() != name || p["shape"].as<std::vector<std::size_t>>() != t.shape()) {
      fail(ErrorCode::Schema, "checkpoint parameter " + std::to_string(i) + " does not match " + name);
    }
    t = doc::read_values(p["values"], {t.size()}, name).reshaped(t.shape());
  }
  return expected;
}

}  // namespace rawdrift
