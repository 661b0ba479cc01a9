#include "rawdrift/drift_controls.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "rawdrift/document.hpp"
#include "rawdrift/error.hpp"
#include "rawdrift/ops.hpp"
#include "rawdrift/scenes.hpp"

namespace rawdrift {

namespace o = ops;

namespace {

std::string fmt(double v) { return doc::format_double(v); }

OptimizerState optimizer(OptimizerKind kind, double lr) {
  OptimizerState s;
  s.kind = kind;
  s.lr = lr;
  return s;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0;
  for (double x : xs) m += x;
  m /= double(xs.size());
  double s = 0;
  for (double x : xs) s += (x - m) * (x - m);
  return {m, std::sqrt(s / double(xs.size()))};
}

void blur_plane(const double* in, double* out, std::size_t h, std::size_t w, double sigma) {
  const long radius = std::max(1L, long(std::ceil(4.0 * sigma)));
  std::vector<double> taps;
  double total = 0;
  for (long i = -radius; i <= radius; ++i) {
    taps.push_back(std::exp(-0.5 * double(i * i) / (sigma * sigma)));
    total += taps.back();
  }
  for (auto& t : taps) t /= total;
  auto reflect = [](long i, long n) {
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
  };
  std::vector<double> tmp(h * w);
  for (long y = 0; y < long(h); ++y) {
    for (long x = 0; x < long(w); ++x) {
      double acc = 0;
      for (long t = -radius; t <= radius; ++t) acc += taps[std::size_t(t + radius)] * in[std::size_t(y) * w + std::size_t(reflect(x + t, long(w)))];
      tmp[std::size_t(y) * w + std::size_t(x)] = acc;
    }
  }
  for (long y = 0; y < long(h); ++y) {
    for (long x = 0; x < long(w); ++x) {
      double acc = 0;
      for (long t = -radius; t <= radius; ++t) acc += taps[std::size_t(t + radius)] * tmp[std::size_t(reflect(y + t, long(h))) * w + std::size_t(x)];
      out[std::size_t(y) * w + std::size_t(x)] = acc;
    }
  }
}

// Epoch-shuffled mini-batch indices.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : order_(n), batch_(std::min(batch, n)), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    if (pos_ + batch_ > order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + long(pos_), order_.begin() + long(pos_ + batch_));
    pos_ += batch_;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_, pos_ = 0;
  std::mt19937_64 rng_;
};

std::vector<std::size_t> complement(const std::vector<std::size_t>& subset, std::size_t n) {
  std::vector<char> in(n, 0);
  for (auto i : subset) in[i] = 1;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (!in[i]) out.push_back(i);
  }
  return out;
}

Tensor raw_batch(const std::vector<RawImage>& data, const std::vector<std::size_t>& rows) {
  std::vector<RawImage> picked;
  for (auto r : rows) picked.push_back(data[r]);
  return stack_raws(picked);
}

Tensor param_views(const Tensor& raw, const PipelineParams& params, const CfaLayout& cfa) {
  Tape tape;
  return process_param(tape.constant(raw), attach(tape, params, ParamGroupMask::none()), cfa).value();
}

RgbImage view_at(const Tensor& batch, std::size_t i) {
  const std::size_t per = batch.size() / batch.dim(0);
  return {Tensor({3, batch.dim(2), batch.dim(3)},
                 std::vector<double>(batch.values().begin() + long(i * per), batch.values().begin() + long((i + 1) * per))),
          Stage::Gamma};
}

void check_dataset(const std::vector<RawImage>& data, std::size_t folds) {
  if (folds < 2) fail(ErrorCode::Config, "folds must be at least 2");
  if (data.size() < 2 * folds) {
    fail(ErrorCode::Config, "insufficient data: " + std::to_string(data.size()) + " items for " +
                                std::to_string(folds) + " folds (need at least two per fold)");
  }
}

}  // namespace

// Corruptions ----------------------------------------------------------------

CorruptionKind parse_corruption_kind(std::string_view name) {
  for (auto k : kAllCorruptions) {
    if (name == to_string(k)) return k;
  }
  fail(ErrorCode::Config, "unknown corruption '" + std::string(name) + "'");
}

const char* to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::GaussNoise: return "gauss_noise";
    case CorruptionKind::GaussBlur: return "gauss_blur";
    case CorruptionKind::Contrast: return "contrast";
    case CorruptionKind::Brightness: return "brightness";
    case CorruptionKind::Saturate: return "saturate";
  }
  return "unknown";
}

double corruption_parameter(CorruptionKind kind, int severity) {
  static constexpr double table[5][5] = {
      {0.04, 0.06, 0.08, 0.09, 0.10},  // gauss_noise
      {0.4, 0.6, 0.8, 1.0, 1.5},       // gauss_blur
      {0.25, 0.5, 0.6, 0.7, 0.85},     // contrast
      {0.05, 0.1, 0.15, 0.2, 0.3},     // brightness
      {0.5, 1.0, 2.0, 3.0, 4.0},       // saturate
  };
  if (severity < 1 || severity > 5) fail(ErrorCode::Config, "corruption severity must be in 1..5");
  return table[int(kind)][severity - 1];
}

RgbImage corrupt_with(const RgbImage& view, CorruptionKind kind, double p, std::uint64_t seed) {
  if (view.data.rank() != 3 || view.data.dim(0) != 3) fail(ErrorCode::Shape, "corruption expects a 3×H×W view");
  if (p == 0.0) return view;
  const std::size_t h = view.height(), w = view.width(), n = h * w;
  Tensor out = view.data;
  auto v = out.values();
  switch (kind) {
    case CorruptionKind::GaussNoise: {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> nd(0.0, 1.0);
      for (auto& x : v) x += p * nd(rng);
      break;
    }
    case CorruptionKind::GaussBlur:
      if (p < 0) fail(ErrorCode::Config, "blur sigma must be positive");
      for (std::size_t c = 0; c < 3; ++c) blur_plane(view.data.values().data() + c * n, v.data() + c * n, h, w, p);
      break;
    case CorruptionKind::Contrast: {
      double mean = 0;
      for (double x : v) mean += x;
      mean /= double(v.size());
      for (auto& x : v) x = mean + (1.0 - p) * (x - mean);
      break;
    }
    case CorruptionKind::Brightness:
      for (auto& x : v) x += p;
      break;
    case CorruptionKind::Saturate:
      for (std::size_t i = 0; i < n; ++i) {
        const double gray = 0.299 * v[i] + 0.587 * v[n + i] + 0.114 * v[2 * n + i];
        for (std::size_t c = 0; c < 3; ++c) v[c * n + i] = gray + (1.0 + p) * (v[c * n + i] - gray);
      }
      break;
  }
  for (auto& x : v) x = std::clamp(x, 0.0, 1.0);
  return {std::move(out), view.stage};
}

RgbImage apply_corruption(const RgbImage& view, CorruptionKind kind, int severity, std::uint64_t seed) {
  return corrupt_with(view, kind, corruption_parameter(kind, severity), seed);
}

DiffImages diff_images(const RgbImage& a, const RgbImage& b) {
  if (a.data.shape() != b.data.shape() || a.data.rank() != 3 || a.data.dim(0) != 3) {
    fail(ErrorCode::Shape, "diff_images: " + shape_string(a.data.shape()) + " vs " + shape_string(b.data.shape()));
  }
  DiffImages d;
  d.diff = {Tensor(a.data.shape()), Stage::External};
  const std::size_t n = a.height() * a.width();
  double total = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    double sq = 0;
    for (std::size_t i = c * n; i < (c + 1) * n; ++i) {
      const double x = std::abs(a.data[i] - b.data[i]);
      d.diff.data[i] = x;
      sq += x * x;
      d.max[c] = std::max(d.max[c], x);
    }
    d.l2[c] = std::sqrt(sq);
    total += sq;
    d.max_total = std::max(d.max_total, d.max[c]);
  }
  d.l2_total = std::sqrt(total);
  return d;
}

// Training protocol ------------------------------------------------------------

std::vector<std::vector<std::size_t>> make_folds(std::size_t count, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) fail(ErrorCode::Config, "folds must be at least 2");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t i = 0; i < count; ++i) out[i % folds].push_back(order[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

Labels labels_of(const std::vector<RawImage>& data, TaskKind task) {
  Labels labels;
  if (task == TaskKind::Classification) {
    for (const auto& r : data) {
      if (!r.label.class_id) fail(ErrorCode::Config, "classification needs a class label on every raw");
      labels.classes.push_back(*r.label.class_id);
    }
    return labels;
  }
  std::vector<double> masks;
  for (const auto& r : data) {
    if (!r.label.mask) fail(ErrorCode::Config, "segmentation needs a mask on every raw");
    masks.insert(masks.end(), r.label.mask->values().begin(), r.label.mask->values().end());
  }
  labels.masks = Tensor({data.size(), data[0].height(), data[0].width()}, std::move(masks));
  return labels;
}

TaskModel train_on_views(const Tensor& views, const Labels& labels, TaskKind task, const TrainConfig& train,
                         std::uint64_t seed) {
  TaskModel model = make_model(task, train.classes, mix_seed(seed, 1));
  OptimizerState opt = optimizer(train.optimizer, train.lr);
  BatchSampler sampler(labels.size(), train.batch, mix_seed(seed, 2));
  const LossKind loss = default_loss(task);
  for (std::size_t step = 0; step < train.steps; ++step) {
    const auto rows = sampler.next();
    train_step(model, opt, gather_rows(views, rows), labels.subset(rows), loss);
  }
  return model;
}

Tensor static_views(const std::vector<RawImage>& data, const StaticConfig& config) {
  if (data.empty()) fail(ErrorCode::Config, "empty dataset");
  std::vector<double> values;
  for (const auto& r : data) {
    const RgbImage v = process_static(r, config);
    values.insert(values.end(), v.data.values().begin(), v.data.values().end());
  }
  return Tensor({data.size(), 3, data[0].height(), data[0].width()}, std::move(values));
}

Tensor demosaic_views(const std::vector<RawImage>& data) {
  if (data.empty()) fail(ErrorCode::Config, "empty dataset");
  std::vector<double> values;
  for (const auto& r : data) {
    const RgbImage v = demosaic(r, DemosaicAlgo::Bilinear);
    values.insert(values.end(), v.data.values().begin(), v.data.values().end());
  }
  return Tensor({data.size(), 3, data[0].height(), data[0].width()}, std::move(values));
}

std::vector<RawImage> scale_intensity(const std::vector<RawImage>& data, double factor) {
  if (!(factor > 0 && factor <= 1)) fail(ErrorCode::Config, "intensity scale must lie in (0, 1]");
  std::vector<RawImage> out = data;
  for (auto& r : out) {
    for (auto& v : r.data.values()) v = quantize16(v * factor) / 65535.0;
  }
  return out;
}

// Synthesis ----------------------------------------------------------------------

double SynthesisReport::diagonal_mean() const {
  double s = 0;
  for (std::size_t i = 0; i < mean.size(); ++i) s += mean[i][i];
  return s / double(mean.size());
}

double SynthesisReport::off_diagonal_mean() const {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    for (std::size_t j = 0; j < mean.size(); ++j) {
      if (i == j) continue;
      s += mean[i][j];
      ++n;
    }
  }
  return s / double(n);
}

std::string SynthesisReport::matrix_csv() const {
  std::string out = "train,test,mean,std\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = 0; j < labels.size(); ++j) {
      out += "\"" + labels[i] + "\",\"" + labels[j] + "\"," + fmt(mean[i][j]) + "," + fmt(std[i][j]) + "\n";
    }
  }
  return out;
}

std::string SynthesisReport::folds_csv() const {
  std::string out = "fold,train,test,score\n";
  for (std::size_t f = 0; f < fold_scores.size(); ++f) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      for (std::size_t j = 0; j < labels.size(); ++j) {
        out += std::to_string(f) + ",\"" + labels[i] + "\",\"" + labels[j] + "\"," + fmt(fold_scores[f][i][j]) + "\n";
      }
    }
  }
  return out;
}

std::string SynthesisReport::ranking_csv() const {
  std::string out = "rank,train,mean,std\n";
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    const std::size_t i = ranking[r];
    out += std::to_string(r + 1) + ",\"" + labels[i] + "\"," + fmt(row_mean[i]) + "," + fmt(row_std[i]) + "\n";
  }
  return out;
}

std::string SynthesisReport::corruption_csv() const {
  std::string out = "train,corruption,mean,std\n";
  for (const auto& row : corruption) {
    out += "\"" + labels[row.train] + "\"," + to_string(row.kind) + "," + fmt(row.mean) + "," + fmt(row.std) + "\n";
  }
  return out;
}

SynthesisReport run_synthesis(const std::vector<RawImage>& data, const SynthesisOptions& options) {
  check_dataset(data, options.folds);
  const std::size_t nc = options.configs.size();
  if (nc == 0) fail(ErrorCode::Config, "no pipeline configurations");
  const Labels labels = labels_of(data, options.task);
  const Metric metric = default_metric(options.task);

  std::vector<Tensor> views;
  for (const auto& c : options.configs) views.push_back(static_views(data, c));
  const auto folds = make_folds(data.size(), options.folds, options.seed);

  SynthesisReport report;
  for (const auto& c : options.configs) report.labels.push_back(c.abbreviation());
  report.fold_scores.assign(options.folds, std::vector<std::vector<double>>(nc, std::vector<double>(nc)));
  const std::size_t nk = options.corruptions.size();
  std::vector<std::vector<std::vector<double>>> corrupt(options.folds,
                                                        std::vector<std::vector<double>>(nc, std::vector<double>(nk)));

  // Cells (fold, train config) are independent; results land in fixed slots.
  auto run_cell = [&](std::size_t cell) {
    const std::size_t f = cell / nc, c = cell % nc;
    const auto& test = folds[f];
    const auto train = complement(test, data.size());
    const Labels test_labels = labels.subset(test);
    const TaskModel model = train_on_views(gather_rows(views[c], train), labels.subset(train), options.task,
                                           options.train, mix_seed(options.seed, 100 + f));
    for (std::size_t t = 0; t < nc; ++t) {
      report.fold_scores[f][c][t] = evaluate(model, gather_rows(views[t], test), test_labels, metric);
    }
    const Tensor own = gather_rows(views[c], test);
    for (std::size_t k = 0; k < nk; ++k) {
      std::vector<double> values;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const RgbImage v = corrupt_with(view_at(own, i), options.corruptions[k],
                                        corruption_parameter(options.corruptions[k], options.corruption_severity),
                                        mix_seed(options.seed, 1000 + test[i]));
        values.insert(values.end(), v.data.values().begin(), v.data.values().end());
      }
      corrupt[f][c][k] = evaluate(model, Tensor(own.shape(), std::move(values)), test_labels, metric);
    }
  };
  const std::size_t cells = options.folds * nc;
  const unsigned workers = std::max(1u, std::min<unsigned>(options.threads, unsigned(cells)));
  if (workers == 1) {
    for (std::size_t cell = 0; cell < cells; ++cell) run_cell(cell);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t cell; (cell = next++) < cells;) run_cell(cell);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  report.mean.assign(nc, std::vector<double>(nc));
  report.std.assign(nc, std::vector<double>(nc));
  report.row_mean.resize(nc);
  report.row_std.resize(nc);
  for (std::size_t i = 0; i < nc; ++i) {
    std::vector<double> row_avgs;
    for (std::size_t f = 0; f < options.folds; ++f) {
      double s = 0;
      for (std::size_t j = 0; j < nc; ++j) s += report.fold_scores[f][i][j];
      row_avgs.push_back(s / double(nc));
    }
    std::tie(report.row_mean[i], report.row_std[i]) = mean_std(row_avgs);
    for (std::size_t j = 0; j < nc; ++j) {
      std::vector<double> xs;
      for (std::size_t f = 0; f < options.folds; ++f) xs.push_back(report.fold_scores[f][i][j]);
      std::tie(report.mean[i][j], report.std[i][j]) = mean_std(xs);
    }
    for (std::size_t k = 0; k < nk; ++k) {
      std::vector<double> xs;
      for (std::size_t f = 0; f < options.folds; ++f) xs.push_back(corrupt[f][i][k]);
      const auto [m, s] = mean_std(xs);
      report.corruption.push_back({i, options.corruptions[k], m, s});
    }
  }
  report.ranking.resize(nc);
  std::iota(report.ranking.begin(), report.ranking.end(), 0);
  std::stable_sort(report.ranking.begin(), report.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return report.row_mean[a] > report.row_mean[b]; });

  double worst = 2.0;
  for (std::size_t i = 0; i < nc; ++i) {
    for (std::size_t j = 0; j < nc; ++j) {
      if (i != j && report.mean[i][j] < worst) {
        worst = report.mean[i][j];
        report.worst_train = i;
        report.worst_test = j;
      }
    }
  }
  if (nc > 1) {
    report.worst_diff = diff_images(process_static(data[0], options.configs[report.worst_train]),
                                    process_static(data[0], options.configs[report.worst_test]));
  }
  return report;
}

// Forensics ----------------------------------------------------------------------

ForensicsReport run_forensics(const TaskModel& model, const PipelineParams& baseline, const CfaLayout& cfa,
                              const ForensicsBatch& optimize_on, const ForensicsBatch& test_on,
                              const ForensicsConfig& config) {
  if (!(config.lambda >= 0) || !std::isfinite(config.lambda)) fail(ErrorCode::Config, "lambda must be a finite value ≥ 0");
  baseline.validate();
  const Metric metric = default_metric(model.kind);
  const LossKind loss_kind = default_loss(model.kind);
  const Tensor v_opt = param_views(optimize_on.raw, baseline, cfa);
  const Tensor v_test = param_views(test_on.raw, baseline, cfa);

  ForensicsReport report;
  report.lambda = config.lambda;
  report.groups = config.mask.to_string();
  report.baseline_score = score(forward(model, v_test), test_on.labels, metric);
  report.opt_baseline_score = score(forward(model, v_opt), optimize_on.labels, metric);

  PipelineParams theta = baseline;
  PipelineParams best = baseline;
  double best_objective = std::numeric_limits<double>::infinity();
  OptimizerState opt = optimizer(config.optimizer, config.lr);
  const double n = double(optimize_on.raw.dim(0));
  for (std::size_t step = 0; step <= config.steps; ++step) {
    Tape tape;
    const PipelineVars pv = attach(tape, theta, config.mask);
    const Var view = process_param(tape.constant(optimize_on.raw), pv, cfa);
    const Var l2 = o::scale(o::sq_l2(o::sub(view, tape.constant(v_opt))), 1.0 / n);
    const Var task = task_loss(forward(model, attach(tape, model, false), view), optimize_on.labels, loss_kind);
    const Var objective = o::sub(o::scale(l2, config.lambda), task);
    const double value = objective.value().item();
    if (!std::isfinite(value)) {
      report.aborted = true;
      break;
    }
    report.objective.push_back(value);
    if (value < best_objective) {
      best_objective = value;
      best = theta;
      report.best_step = step;
    }
    if (step == config.steps || !config.mask.any()) continue;
    const Gradients grads = tape.backward(objective);
    opt.begin_step();
    for (auto g : kAllGroups) {
      if (const Tensor* grad = config.mask[g] ? grads.find(pv[g]) : nullptr) opt.update(to_string(g), theta.group(g), *grad);
    }
    theta.project();
  }

  report.theta = best;
  const Tensor test_views = param_views(test_on.raw, best, cfa);
  report.score = score(forward(model, test_views), test_on.labels, metric);
  report.opt_score = score(forward(model, param_views(optimize_on.raw, best, cfa)), optimize_on.labels, metric);
  double sq = 0;
  for (std::size_t i = 0; i < test_views.size(); ++i) sq += (test_views[i] - v_test[i]) * (test_views[i] - v_test[i]);
  report.l2 = sq / double(test_on.raw.dim(0));
  return report;
}

std::string forensics_csv(const std::vector<ForensicsReport>& rows) {
  std::string out =
      "lambda,groups,baseline_score,score,l2,opt_baseline_score,opt_score,objective_initial,objective_reported,best_step,"
      "aborted\n";
  for (const auto& r : rows) {
    const double first = r.objective.empty() ? 0.0 : r.objective.front();
    const double best = r.objective.empty() ? 0.0 : r.objective[r.best_step];
    out += fmt(r.lambda) + "," + r.groups + "," + fmt(r.baseline_score) + "," + fmt(r.score) + "," + fmt(r.l2) + "," +
           fmt(r.opt_baseline_score) + "," + fmt(r.opt_score) + "," + fmt(first) + "," + fmt(best) + "," +
           std::to_string(r.best_step) + "," + (r.aborted ? "true" : "false") + "\n";
  }
  return out;
}

std::string forensics_trajectory_csv(const std::vector<ForensicsReport>& rows) {
  std::string out = "lambda,groups,step,objective\n";
  for (const auto& r : rows) {
    for (std::size_t s = 0; s < r.objective.size(); ++s) {
      out += fmt(r.lambda) + "," + r.groups + "," + std::to_string(s) + "," + fmt(r.objective[s]) + "\n";
    }
  }
  return out;
}

// Optimization ---------------------------------------------------------------------

OptimizationMode parse_optimization_mode(std::string_view name) {
  if (name == "learned") return OptimizationMode::Learned;
  if (name == "frozen") return OptimizationMode::Frozen;
  if (name == "direct_raw") return OptimizationMode::DirectRaw;
  fail(ErrorCode::Config, "unknown optimization mode '" + std::string(name) + "'");
}

const char* to_string(OptimizationMode mode) {
  switch (mode) {
    case OptimizationMode::Learned: return "learned";
    case OptimizationMode::Frozen: return "frozen";
    case OptimizationMode::DirectRaw: return "direct_raw";
  }
  return "unknown";
}

std::string OptimizationRun::trajectory_csv() const {
  std::string out = "fold,step,score\n";
  for (const auto& p : trajectory) {
    out += std::to_string(p.fold) + "," + std::to_string(p.step) + "," + fmt(p.score) + "\n";
  }
  return out;
}

OptimizationRun run_drift_optimization(const std::vector<RawImage>& data, const OptimizationOptions& options) {
  check_dataset(data, options.folds);
  if (options.eval_every == 0) fail(ErrorCode::Config, "eval_every must be positive");
  const Labels labels = labels_of(data, options.task);
  const Metric metric = default_metric(options.task);
  const LossKind loss = default_loss(options.task);
  const CfaLayout cfa = data[0].cfa;
  const auto folds = make_folds(data.size(), options.folds, options.seed);
  const Tensor raw_views = options.mode == OptimizationMode::DirectRaw ? demosaic_views(data) : Tensor();

  OptimizationRun run;
  run.mode = options.mode;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& test = folds[f];
    const auto train = complement(test, data.size());
    const Labels test_labels = labels.subset(test);
    const Tensor test_raw = raw_batch(data, test);
    const std::uint64_t seed = mix_seed(options.seed, 100 + f);
    TaskModel model = make_model(options.task, options.train.classes, mix_seed(seed, 1));
    OptimizerState opt = optimizer(options.train.optimizer, options.train.lr);
    OptimizerState pipe_opt = optimizer(OptimizerKind::Adam, options.pipeline_lr);
    PipelineParams params = default_params();
    params.output_standardize = options.output_standardize;
    BatchSampler sampler(train.size(), options.train.batch, mix_seed(seed, 2));

    auto evaluate_now = [&](std::size_t step) {
      const Tensor views = options.mode == OptimizationMode::DirectRaw ? gather_rows(raw_views, test)
                                                                        : param_views(test_raw, params, cfa);
      run.trajectory.push_back({f, step, evaluate(model, views, test_labels, metric)});
    };
    for (std::size_t step = 1; step <= options.train.steps; ++step) {
      std::vector<std::size_t> rows;
      for (auto i : sampler.next()) rows.push_back(train[i]);
      const Labels batch_labels = labels.subset(rows);
      if (options.mode == OptimizationMode::DirectRaw) {
        train_step(model, opt, gather_rows(raw_views, rows), batch_labels, loss);
      } else {
        const bool learned = options.mode == OptimizationMode::Learned;
        train_step(model, opt, raw_batch(data, rows), cfa, batch_labels, loss,
                   {&params, learned ? options.pipeline_mask : ParamGroupMask::none(), learned ? &pipe_opt : nullptr});
      }
      if (step % options.eval_every == 0 || step == options.train.steps) evaluate_now(step);
    }
    run.final_params.push_back(params);
  }
  std::vector<double> scores;
  for (const auto& p : run.trajectory) scores.push_back(p.score);
  std::tie(run.mean, run.std) = mean_std(scores);
  return run;
}

std::string optimization_summary_csv(const std::vector<OptimizationRun>& runs) {
  std::string out = "mode,mean,std,points\n";
  for (const auto& r : runs) {
    out += std::string(to_string(r.mode)) + "," + fmt(r.mean) + "," + fmt(r.std) + "," +
           std::to_string(r.trajectory.size()) + "\n";
  }
  return out;
}

}  // namespace rawdrift
