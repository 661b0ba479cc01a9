#include "rawdrift/isp_param.hpp"

#include <algorithm>
#include <cmath>

#include "rawdrift/document.hpp"
#include "rawdrift/error.hpp"
#include "rawdrift/ops.hpp"

namespace rawdrift {

namespace o = ops;

namespace {

constexpr const char* kGroupNames[kParamGroups] = {"BL", "DM", "WB", "CC", "SH", "DN", "GC"};
constexpr const char* kGroupKeys[kParamGroups] = {"black_level", "demosaic", "white_balance", "colour_matrix",
                                                  "sharpen",     "denoise",  "gamma"};
constexpr const char* kSchema = "rawdrift.pipeline_params/1";

const Shape& group_shape(ParamGroup g) {
  static const Shape shapes[kParamGroups] = {{4}, {3, 3, 3}, {3}, {3, 3}, {3, 3}, {5, 5}, {1}};
  return shapes[std::size_t(g)];
}

template <std::size_t N>
Tensor tensor_of(const std::array<double, N>& a, Shape shape) {
  return Tensor(std::move(shape), std::vector<double>(a.begin(), a.end()));
}

}  // namespace

const char* to_string(ParamGroup group) { return kGroupNames[std::size_t(group)]; }

ParamGroup parse_param_group(std::string_view name) {
  for (auto g : kAllGroups) {
    if (name == kGroupNames[std::size_t(g)]) return g;
  }
  fail(ErrorCode::Config, "unknown parameter group '" + std::string(name) + "' (expected BL, DM, WB, CC, SH, DN or GC)");
}

ParamGroupMask ParamGroupMask::all() {
  ParamGroupMask m;
  m.trainable.fill(true);
  return m;
}

ParamGroupMask ParamGroupMask::only(ParamGroup group) {
  ParamGroupMask m;
  m.trainable[std::size_t(group)] = true;
  return m;
}

ParamGroupMask ParamGroupMask::parse(std::string_view spec) {
  if (spec == "all") return all();
  if (spec == "none") return none();
  ParamGroupMask m;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t end = std::min(spec.find('+', start), spec.size());
    m.trainable[std::size_t(parse_param_group(spec.substr(start, end - start)))] = true;
    start = end + 1;
  }
  return m;
}

bool ParamGroupMask::any() const { return std::find(trainable.begin(), trainable.end(), true) != trainable.end(); }

std::string ParamGroupMask::to_string() const {
  if (!any()) return "none";
  if (std::all_of(trainable.begin(), trainable.end(), [](bool b) { return b; })) return "all";
  std::string s;
  for (auto g : kAllGroups) {
    if (!(*this)[g]) continue;
    if (!s.empty()) s += '+';
    s += kGroupNames[std::size_t(g)];
  }
  return s;
}

Tensor& PipelineParams::group(ParamGroup g) {
  return const_cast<Tensor&>(std::as_const(*this).group(g));
}

const Tensor& PipelineParams::group(ParamGroup g) const {
  switch (g) {
    case ParamGroup::BL: return black_level;
    case ParamGroup::DM: return demosaic;
    case ParamGroup::WB: return white_balance;
    case ParamGroup::CC: return colour_matrix;
    case ParamGroup::SH: return sharpen;
    case ParamGroup::DN: return denoise;
    case ParamGroup::GC: return gamma;
  }
  fail(ErrorCode::Config, "unknown parameter group");
}

void PipelineParams::validate() const {
  for (auto g : kAllGroups) {
    const Tensor& t = group(g);
    if (t.shape() != group_shape(g)) {
      fail(ErrorCode::Schema, std::string(kGroupKeys[std::size_t(g)]) + " must have shape " +
                                  shape_string(group_shape(g)) + ", got " + shape_string(t.shape()));
    }
    if (!t.all_finite()) fail(ErrorCode::NonFinite, std::string(kGroupKeys[std::size_t(g)]) + " has non-finite entries");
  }
  if (!(gamma[0] > 0)) fail(ErrorCode::Domain, "gamma must be positive");
}

void PipelineParams::project() { gamma[0] = std::max(gamma[0], kGammaFloor); }

PipelineParams default_params() {
  namespace k = constants;
  PipelineParams p;
  p.black_level = tensor_of(k::DEFAULT_BLACK_LEVEL, {4});
  std::vector<double> dm;
  for (const auto* kernel : {&k::K_RB, &k::K_G, &k::K_RB}) dm.insert(dm.end(), kernel->begin(), kernel->end());
  p.demosaic = Tensor({3, 3, 3}, std::move(dm));
  p.white_balance = tensor_of(k::DEFAULT_WHITE_BALANCE, {3});
  p.colour_matrix = tensor_of(k::DEFAULT_COLOUR_MATRIX, {3, 3});
  p.sharpen = tensor_of(k::K_SHARP, {3, 3});
  p.denoise = tensor_of(k::K_BLUR, {5, 5});
  p.gamma = Tensor({1}, {k::DEFAULT_GAMMA});
  return p;
}

PipelineParams static_equivalence_params(const StaticConfig& config) {
  config.validate();
  if (config.demosaic != DemosaicAlgo::Bilinear || config.sharpen != SharpenAlgo::SharpFilter ||
      config.denoise != DenoiseAlgo::Gaussian) {
    fail(ErrorCode::Unsupported, "configuration " + config.abbreviation() +
                                     " has no parametrized equivalent; only bi,s,ga is parametrizable");
  }
  PipelineParams p = default_params();
  p.black_level = tensor_of(config.bl, {4});
  p.white_balance = tensor_of(config.wb, {3});
  p.colour_matrix = tensor_of(config.cc, {3, 3});
  p.gamma = Tensor({1}, {config.gamma});
  return p;
}

PipelineVars attach(Tape& tape, const PipelineParams& params, const ParamGroupMask& trainable) {
  params.validate();
  PipelineVars vars;
  for (auto g : kAllGroups) vars.groups[std::size_t(g)] = tape.leaf(params.group(g), trainable[g]);
  vars.output_standardize = params.output_standardize;
  return vars;
}

Var process_param(Var raw, const PipelineVars& p, const CfaLayout& cfa, StageTrace* trace) {
  if (raw.shape().size() != 3 || raw.shape()[1] % 2 || raw.shape()[2] % 2) {
    fail(ErrorCode::Shape, "process_param expects an N×H×W raw batch with even sides, got " +
                               shape_string(raw.shape()));
  }
  Tape& tape = raw.tape();
  auto record = [trace](Stage s, Var v) {
    if (trace) trace->stages.emplace_back(s, v);
    return v;
  };
  const Var to_yuv = tape.constant(tensor_of(constants::M_RGB_2_YUV, {3, 3}));
  const Var to_rgb = tape.constant(tensor_of(constants::M_YUV_2_RGB, {3, 3}));

  Var v = record(Stage::BlackLevel, o::site_subtract(raw, p[ParamGroup::BL], constants::BLACK_LEVEL_SLOT));
  v = o::bayer_split(v, cfa.site_channels());
  v = record(Stage::Demosaic, o::conv2d(v, p[ParamGroup::DM], o::Padding::Reflect, false));
  v = record(Stage::WhiteBalance, o::channel_scale(v, p[ParamGroup::WB]));
  v = record(Stage::ColorCorrect, o::channel_affine(v, p[ParamGroup::CC]));
  v = record(Stage::Yuv, o::channel_affine(v, to_yuv));
  v = record(Stage::Sharpen, o::conv2d(v, p[ParamGroup::SH], o::Padding::Reflect, true));
  v = o::conv2d(v, p[ParamGroup::DN], o::Padding::Reflect, true);
  v = record(Stage::Denoise, o::channel_affine(v, to_rgb));
  v = record(Stage::Gamma, o::pow(o::clip01(v), o::reciprocal(p[ParamGroup::GC])));
  if (p.output_standardize) v = record(Stage::Standardized, o::channel_standardize(v, kStandardizeEps));
  return v;
}

RgbImage process_param(const RawImage& raw, const PipelineParams& params) {
  raw.validate();
  Tape tape;
  const PipelineVars vars = attach(tape, params, ParamGroupMask::none());
  const Var in = tape.constant(raw.data.reshaped({1, raw.height(), raw.width()}));
  const Var out = process_param(in, vars, raw.cfa);
  return {out.value().reshaped({3, raw.height(), raw.width()}),
          params.output_standardize ? Stage::Standardized : Stage::Gamma};
}

Tensor stack_raws(const std::vector<RawImage>& raws) {
  if (raws.empty()) fail(ErrorCode::Shape, "cannot stack an empty raw list");
  const std::size_t h = raws[0].height(), w = raws[0].width();
  std::vector<double> values;
  values.reserve(raws.size() * h * w);
  for (const auto& r : raws) {
    if (r.data.shape() != raws[0].data.shape()) fail(ErrorCode::Shape, "raw batch items differ in size");
    if (!(r.cfa == raws[0].cfa)) fail(ErrorCode::Config, "raw batch items differ in CFA layout");
    values.insert(values.end(), r.data.values().begin(), r.data.values().end());
  }
  return Tensor({raws.size(), h, w}, std::move(values));
}

std::string serialize_params(const PipelineParams& params) {
  params.validate();
  YAML::Emitter out;
  out << YAML::BeginMap << YAML::Key << "schema" << YAML::Value << kSchema;
  for (auto g : kAllGroups) {
    out << YAML::Key << kGroupKeys[std::size_t(g)] << YAML::Value;
    if (g == ParamGroup::GC) {
      out << doc::format_double(params.gamma[0]);
    } else {
      doc::emit_values(out, params.group(g));
    }
  }
  out << YAML::Key << "output_standardize" << YAML::Value << params.output_standardize;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

PipelineParams deserialize_params(std::string_view document) {
  const YAML::Node root = doc::load(std::string(document), "parameter document");
  doc::require_keys(root,
                    {"schema", "black_level", "demosaic", "white_balance", "colour_matrix", "sharpen", "denoise",
                     "gamma", "output_standardize"},
                    "parameter document");
  if (doc::required(root, "schema", "parameter document").Scalar() != kSchema) {
    fail(ErrorCode::Schema, std::string("parameter document schema must be ") + kSchema);
  }
  PipelineParams p;
  for (auto g : kAllGroups) {
    const std::string key = kGroupKeys[std::size_t(g)];
    const YAML::Node node = doc::required(root, key, "parameter document");
    p.group(g) = g == ParamGroup::GC ? Tensor({1}, {doc::parse_double(node, key)})
                                     : doc::read_values(node, group_shape(g), key);
  }
  if (const YAML::Node s = root["output_standardize"]) {
    if (s.Scalar() != "true" && s.Scalar() != "false") fail(ErrorCode::Schema, "output_standardize must be true or false");
    p.output_standardize = s.Scalar() == "true";
  }
  p.validate();
  return p;
}

}  // namespace rawdrift
