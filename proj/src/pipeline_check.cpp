#include "rawdrift/pipeline_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rawdrift/document.hpp"
#include "rawdrift/gradcheck.hpp"
#include "rawdrift/ops.hpp"

namespace rawdrift {

namespace {

struct Evaluation {
  double loss;
  Tensor pre_clip;
};

struct Problem {
  const Tensor& raw;
  const CfaLayout& cfa;
  const PipelineParams& params;
  Tensor weights;

  // Forward with group `g` (or the raw input when g is empty) replaced.
  Evaluation eval(std::optional<ParamGroup> g, const Tensor& replacement) const {
    PipelineParams p = params;
    if (g) p.group(*g) = replacement;
    Tape tape;
    PipelineVars vars;
    for (auto group : kAllGroups) vars.groups[std::size_t(group)] = tape.constant(p.group(group));
    vars.output_standardize = p.output_standardize;
    StageTrace trace;
    const Var out = process_param(tape.constant(g ? raw : replacement), vars, cfa, &trace);
    const Var loss = ops::sum(ops::mul(out, tape.constant(weights)));
    const auto it = std::find_if(trace.stages.begin(), trace.stages.end(),
                                 [](const auto& s) { return s.first == Stage::Denoise; });
    return {loss.value().item(), it->second.value()};
  }
};

bool near_boundary(const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& weights, double margin) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (weights[i] == 0.0) continue;
    const double lo = std::min({a[i], b[i], c[i]}) - margin;
    const double hi = std::max({a[i], b[i], c[i]}) + margin;
    if ((lo <= 0.0 && hi >= 0.0) || (lo <= 1.0 && hi >= 1.0)) return true;
  }
  return false;
}

GradcheckRow check(const Problem& problem, std::optional<ParamGroup> g, const Tensor& point, const Tensor& analytic,
                   const Evaluation& base, const GradcheckOptions& options) {
  GradcheckRow row;
  row.name = g ? to_string(*g) : "raw";
  Tensor numeric(point.shape());
  Tensor kept(point.shape());
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor plus = point, minus = point;
    plus[i] += options.step;
    minus[i] -= options.step;
    const Evaluation ep = problem.eval(g, plus), em = problem.eval(g, minus);
    if (near_boundary(base.pre_clip, ep.pre_clip, em.pre_clip, problem.weights, options.boundary_margin)) {
      ++row.skipped;
      continue;
    }
    numeric[i] = (ep.loss - em.loss) / (2 * options.step);
    kept[i] = analytic[i];
    ++row.checked;
  }
  row.rel_error = gradient_relative_error(kept, numeric);
  row.pass = row.rel_error <= options.tolerance;
  return row;
}

}  // namespace

bool GradcheckReport::pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.pass; });
}

double GradcheckReport::worst() const {
  double w = 0;
  for (const auto& r : rows) w = std::max(w, r.rel_error);
  return w;
}

std::string GradcheckReport::to_csv() const {
  std::string out = "group,rel_error,checked,skipped,pass\n";
  for (const auto& r : rows) {
    out += r.name + "," + doc::format_double(r.rel_error) + "," + std::to_string(r.checked) + "," +
           std::to_string(r.skipped) + "," + (r.pass ? "true" : "false") + "\n";
  }
  return out;
}

GradcheckReport pipeline_gradcheck(const Tensor& raw, const CfaLayout& cfa, const PipelineParams& params,
                                   const GradcheckOptions& options) {
  params.validate();
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  Tensor weights({raw.dim(0), 3, raw.dim(1), raw.dim(2)});
  for (auto& w : weights.values()) w = u(rng);
  Problem problem{raw, cfa, params, weights};
  const Evaluation base = problem.eval(std::nullopt, raw);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double v = base.pre_clip[i];
    if (std::abs(v) < options.pixel_margin || std::abs(v - 1.0) < options.pixel_margin) problem.weights[i] = 0.0;
  }

  Tape tape;
  const PipelineVars vars = attach(tape, params, ParamGroupMask::all());
  const Var input = tape.leaf(raw, true);
  const Var loss = ops::sum(ops::mul(process_param(input, vars, cfa), tape.constant(problem.weights)));
  if (options.fault) tape.inject_adjoint_fault(options.fault->first, options.fault->second);
  const Gradients grads = tape.backward(loss);

  GradcheckReport report;
  for (auto g : kAllGroups) {
    const Tensor* analytic = grads.find(vars[g]);
    const Tensor zeros(params.group(g).shape());
    report.rows.push_back(check(problem, g, params.group(g), analytic ? *analytic : zeros, base, options));
  }
  if (options.include_raw) report.rows.push_back(check(problem, std::nullopt, raw, grads[input], base, options));
  return report;
}

}  // namespace rawdrift
