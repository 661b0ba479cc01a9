#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>
#include <tuple>

#include "rawdrift/error.hpp"
#include "rawdrift/gradcheck.hpp"
#include "rawdrift/ops.hpp"
#include "rawdrift/task_models.hpp"

using namespace rawdrift;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Tensor random_mask(Shape shape, std::uint64_t seed) {
  Tensor t = random_tensor(std::move(shape), seed);
  for (auto& v : t.values()) v = v > 0.5 ? 1.0 : 0.0;
  return t;
}

TaskModel zeroed(TaskModel m) {
  for (auto& [name, t] : m.params) t = Tensor(t.shape());
  return m;
}

// Loss as a function of one parameter tensor, for finite differences.
double loss_with(const TaskModel& base, std::size_t index, const Tensor& value, const Tensor& views, const Labels& labels,
                 LossKind kind) {
  TaskModel m = base;
  m.params[index].second = value;
  Tape tape;
  return task_loss(forward(m, attach(tape, m, false), tape.constant(views)), labels, kind).value().item();
}

}  // namespace

TEST(Models, ShapesAndSizes) {
  const TaskModel c = make_classifier(3, 1);
  EXPECT_LT(c.parameter_count(), 10000u);
  EXPECT_EQ(forward(c, random_tensor({2, 3, 16, 16}, 2)).shape(), (Shape{2, 3}));
  const TaskModel s = make_segmenter(1);
  EXPECT_EQ(forward(s, random_tensor({2, 3, 16, 20}, 3)).shape(), (Shape{2, 16, 20}));
  EXPECT_THROW(forward(s, random_tensor({1, 3, 10, 12}, 3)), Error);
  EXPECT_THROW(forward(c, random_tensor({1, 2, 8, 8}, 3)), Error);
}

TEST(Models, ZeroWeightsGiveZeroLogits) {
  for (const auto& m : {zeroed(make_classifier(4, 1)), zeroed(make_segmenter(1))}) {
    const Tensor logits = forward(m, random_tensor({2, 3, 8, 8}, 4));
    for (double v : logits.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Models, DeterministicInitAndForward) {
  EXPECT_EQ(make_classifier(2, 7), make_classifier(2, 7));
  EXPECT_FALSE(make_classifier(2, 7) == make_classifier(2, 8));
  const Tensor x = random_tensor({2, 3, 8, 8}, 5);
  EXPECT_TRUE(bitwise_equal(forward(make_segmenter(3), x), forward(make_segmenter(3), x)));
  // Glorot bound for conv1: sqrt(6 / (27 + 72)).
  const double limit = std::sqrt(6.0 / 99.0);
  for (double v : make_classifier(2, 9).params[0].second.values()) EXPECT_LE(std::abs(v), limit);
}

TEST(Models, AllParameterGradientsMatchFiniteDifferences) {
  const Tensor views = random_tensor({2, 3, 8, 8}, 6);
  Labels cls{{1, 0}, {}};
  Labels seg{{}, random_mask({2, 8, 8}, 7)};
  for (const auto& [model, labels, kind] :
       {std::tuple{make_classifier(2, 11), cls, LossKind::CrossEntropy},
        std::tuple{make_classifier(2, 12), cls, LossKind::SqL2},
        std::tuple{make_segmenter(13), seg, LossKind::BceDice}}) {
    Tape tape;
    const auto vars = attach(tape, model, true);
    const Gradients g = tape.backward(task_loss(forward(model, vars, tape.constant(views)), labels, kind));
    for (std::size_t i = 0; i < model.params.size(); ++i) {
      const Tensor numeric = finite_diff_grad(
          [&](const Tensor& p) { return loss_with(model, i, p, views, labels, kind); }, model.params[i].second, 1e-6);
      EXPECT_LE(gradient_relative_error(g[vars[i]], numeric), 1e-4) << model.params[i].first << " " << to_string(kind);
    }
  }
}

TEST(Losses, Examples) {
  Tape tape;
  const Var uniform = tape.constant(Tensor({3, 5}));
  EXPECT_NEAR(task_loss(uniform, Labels{{0, 4, 2}, {}}, LossKind::CrossEntropy).value().item(), std::log(5.0), 1e-12);
  EXPECT_THROW(task_loss(uniform, Labels{{0, 5, 2}, {}}, LossKind::CrossEntropy), Error);
  Tensor mask = random_mask({2, 4, 4}, 8);
  Tensor logits = mask;
  for (auto& v : logits.values()) v = v > 0.5 ? 40.0 : -40.0;
  EXPECT_LT(task_loss(tape.constant(logits), Labels{{}, mask}, LossKind::BceDice).value().item(), 1e-9);
  const double sq = task_loss(tape.constant(Tensor::from({2, 2}, {1, 0, 0.5, 0.5})), Labels{{0, 0}, {}}, LossKind::SqL2)
                        .value()
                        .item();
  EXPECT_DOUBLE_EQ(sq, 0.25);
}

TEST(Losses, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  Tape tape;
  const Tensor z = Tensor::from({1, 3}, {0.2, -1.0, 0.7});
  const Var logits = tape.leaf(z, true);
  const Gradients g = tape.backward(task_loss(logits, Labels{{2}, {}}, LossKind::CrossEntropy));
  const double denom = std::exp(0.2) + std::exp(-1.0) + std::exp(0.7);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(g[logits][k], std::exp(z[k]) / denom - (k == 2), 1e-12);
}

TEST(Optimizers, ZeroLearningRateKeepsBits) {
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    TaskModel m = make_classifier(2, 1);
    const TaskModel before = m;
    OptimizerState opt{kind, 0.0};
    train_step(m, opt, random_tensor({2, 3, 8, 8}, 2), Labels{{0, 1}, {}}, LossKind::CrossEntropy);
    for (std::size_t i = 0; i < m.params.size(); ++i) EXPECT_TRUE(bitwise_equal(m.params[i].second, before.params[i].second));
  }
}

TEST(Optimizers, SgdClosedForm) {
  OptimizerState opt{OptimizerKind::Sgd, 0.1};
  Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5});
  Tape tape;
  const Var wv = tape.leaf(w, true);
  const Gradients g = tape.backward(ops::scale(ops::sq_l2(wv), 0.5));
  opt.begin_step();
  opt.update("w", w, g[wv]);
  EXPECT_DOUBLE_EQ(w[0], 0.9);
  EXPECT_DOUBLE_EQ(w[1], -1.8);
  EXPECT_DOUBLE_EQ(w[2], 0.45);
}

TEST(Optimizers, AdamSolvesQuadratic) {
  OptimizerState opt{OptimizerKind::Adam, 0.05};
  Tensor w = Tensor::from({2}, {3.0, -2.0});
  double grad_norm = 1e9;
  for (int step = 0; step < 500 && grad_norm >= 1e-3; ++step) {
    // f = 2 w0² + 0.5 w1² + w0 w1 / 2
    const Tensor g = Tensor::from({2}, {4 * w[0] + 0.5 * w[1], w[1] + 0.5 * w[0]});
    grad_norm = std::hypot(g[0], g[1]);
    opt.begin_step();
    opt.update("w", w, g);
  }
  EXPECT_LT(grad_norm, 1e-3);
}

TEST(Optimizers, IdenticalSeedsIdenticalTrajectories) {
  auto run = [] {
    TaskModel m = make_classifier(2, 5);
    OptimizerState opt;
    const Tensor x = random_tensor({4, 3, 8, 8}, 6);
    for (int i = 0; i < 3; ++i) train_step(m, opt, x, Labels{{0, 1, 1, 0}, {}}, LossKind::CrossEntropy);
    return m;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainStep, NonFiniteLossAborts) {
  TaskModel m = make_classifier(2, 1);
  const TaskModel before = m;
  OptimizerState opt;
  Tensor x = random_tensor({2, 3, 8, 8}, 2);
  x[5] = std::numeric_limits<double>::infinity();
  try {
    train_step(m, opt, x, Labels{{0, 1}, {}}, LossKind::CrossEntropy);
    ADD_FAILURE() << "expected an abort";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFinite);
  }
  EXPECT_EQ(m, before);
}

TEST(TrainStep, PipelineGroupsOutsideMaskUntouched) {
  TaskModel m = make_classifier(2, 1);
  OptimizerState opt, popt{OptimizerKind::Adam, 1e-2};
  PipelineParams p = default_params();
  const PipelineParams before = p;
  const Tensor raw = random_tensor({2, 8, 8}, 3);
  train_step(m, opt, raw, CfaLayout::bggr(), Labels{{0, 1}, {}}, LossKind::CrossEntropy,
             {&p, ParamGroupMask::parse("WB+GC"), &popt});
  for (auto g : kAllGroups) {
    const bool changed = !bitwise_equal(p.group(g), before.group(g));
    EXPECT_EQ(changed, g == ParamGroup::WB || g == ParamGroup::GC) << to_string(g);
  }
}

TEST(TrainStep, GammaProjection) {
  PipelineParams p = default_params();
  p.gamma[0] = -4.0;
  p.project();
  EXPECT_EQ(p.gamma[0], kGammaFloor);
}

TEST(Metrics, AccuracyAndIou) {
  EXPECT_EQ(score(Tensor::from({2, 2}, {1, 0, 0, 1}), Labels{{0, 1}, {}}, Metric::Accuracy), 1.0);
  EXPECT_EQ(score(Tensor::from({2, 2}, {1, 0, 0, 1}), Labels{{1, 1}, {}}, Metric::Accuracy), 0.5);
  const Tensor mask = Tensor::from({1, 2, 2}, {1, 1, 0, 0});
  const Tensor complement = Tensor::from({1, 2, 2}, {-5, -5, 5, 5});
  EXPECT_EQ(score(complement, Labels{{}, mask}, Metric::Iou), 0.0);
  EXPECT_EQ(score(Tensor::from({1, 2, 2}, {-1, -1, -1, -1}), Labels{{}, Tensor({1, 2, 2})}, Metric::Iou), 1.0);
  EXPECT_THROW(score(Tensor({0, 2}), Labels{}, Metric::Accuracy), Error);
}

TEST(Metrics, IouMatchesSetComputation) {
  const std::size_t n = 6;
  const Tensor truth = random_mask({n, 8, 8}, 20);
  const Tensor logits = random_tensor({n, 8, 8}, 21, -1.0, 1.0);
  double expect = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::size_t> pred_set, true_set, both, either;
    for (std::size_t j = 0; j < 64; ++j) {
      if (logits[i * 64 + j] > 0) pred_set.insert(j);
      if (truth[i * 64 + j] == 1) true_set.insert(j);
    }
    std::set_intersection(pred_set.begin(), pred_set.end(), true_set.begin(), true_set.end(),
                          std::inserter(both, both.end()));
    std::set_union(pred_set.begin(), pred_set.end(), true_set.begin(), true_set.end(),
                   std::inserter(either, either.end()));
    expect += either.empty() ? 1.0 : double(both.size()) / double(either.size());
  }
  EXPECT_DOUBLE_EQ(score(logits, Labels{{}, truth}, Metric::Iou), expect / n);
}

TEST(Metrics, EvaluateIsPermutationInvariant) {
  const TaskModel m = make_classifier(2, 3);
  const Tensor views = random_tensor({10, 3, 8, 8}, 4);
  Labels labels{{0, 1, 0, 1, 0, 1, 1, 0, 0, 1}, {}};
  std::vector<std::size_t> order = {3, 1, 4, 0, 9, 2, 6, 5, 8, 7};
  EXPECT_EQ(evaluate(m, views, labels, Metric::Accuracy, 3),
            evaluate(m, gather_rows(views, order), labels.subset(order), Metric::Accuracy, 4));
}

TEST(Checkpoint, RoundTrip) {
  for (const auto& m : {make_classifier(3, 1), make_segmenter(2)}) {
    EXPECT_EQ(deserialize_model(serialize_model(m)), m);
  }
  std::string text = serialize_model(make_classifier(2, 1));
  text.replace(text.find("conv2.bias"), 10, "conv9.bias");
  EXPECT_THROW(deserialize_model(text), Error);
}
