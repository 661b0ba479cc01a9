#include "run_config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>

#include "rawdrift/document.hpp"
#include "rawdrift/error.hpp"

namespace rawdrift::cli {

namespace fs = std::filesystem;

namespace {

std::string key_path(std::string_view where, std::string_view key) { return std::string(where) + "." + std::string(key); }

std::string as_string(const YAML::Node& n, const std::string& where) {
  if (!n.IsScalar()) fail(ErrorCode::Config, where + ": expected a scalar");
  return n.Scalar();
}

double as_double(const YAML::Node& n, const std::string& where) {
  try {
    return doc::parse_double(n, where);
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
}

std::uint64_t as_uint(const YAML::Node& n, const std::string& where) {
  const std::string s = as_string(n, where);
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) fail(ErrorCode::Config, where + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

std::size_t as_positive(const YAML::Node& n, const std::string& where) {
  const auto v = as_uint(n, where);
  if (v == 0) fail(ErrorCode::Config, where + ": must be positive");
  return std::size_t(v);
}

bool as_bool(const YAML::Node& n, const std::string& where) {
  const std::string s = as_string(n, where);
  if (s == "true") return true;
  if (s == "false") return false;
  fail(ErrorCode::Config, where + ": expected true or false, got '" + s + "'");
}

std::vector<YAML::Node> as_list(const YAML::Node& n, const std::string& where) {
  if (!n.IsSequence()) fail(ErrorCode::Config, where + ": expected a list");
  std::vector<YAML::Node> out;
  for (const auto& item : n) out.push_back(item);
  if (out.empty()) fail(ErrorCode::Config, where + ": list must not be empty");
  return out;
}

fs::path as_path(const YAML::Node& n, const std::string& where, const fs::path& base) {
  const fs::path p = as_string(n, where);
  return (p.is_absolute() ? p : base / p).lexically_normal();
}

template <class F>
void with(const YAML::Node& map, const char* key, F&& f) {
  if (const YAML::Node n = map[key]) f(n);
}

void check_map(const YAML::Node& n, std::string_view where) {
  if (!n.IsMap()) fail(ErrorCode::Config, std::string(where) + ": expected a mapping");
}

void require(const YAML::Node& map, std::initializer_list<std::string_view> allowed, std::string_view where) {
  check_map(map, where);
  try {
    doc::require_keys(map, allowed, where);
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::Sgd ? "sgd" : "adam"; }

void parse_data(const YAML::Node& n, DataSection& d, const fs::path& base) {
  const std::string w = "data";
  require(n, {"source", "dataset", "count", "size", "intensity_scale", "texture_low", "texture_high", "cfa", "files"}, w);
  with(n, "source", [&](auto v) { d.source = as_string(v, key_path(w, "source")); });
  if (d.source != "synth" && d.source != "files") fail(ErrorCode::Config, "data.source: expected synth or files");
  with(n, "dataset", [&](auto v) { d.dataset = parse_dataset_kind(as_string(v, key_path(w, "dataset"))); });
  with(n, "count", [&](auto v) { d.count = as_positive(v, key_path(w, "count")); });
  with(n, "size", [&](auto v) { d.size = as_positive(v, key_path(w, "size")); });
  with(n, "intensity_scale", [&](auto v) { d.intensity_scale = as_double(v, key_path(w, "intensity_scale")); });
  with(n, "texture_low", [&](auto v) { d.texture_low = as_double(v, key_path(w, "texture_low")); });
  with(n, "texture_high", [&](auto v) { d.texture_high = as_double(v, key_path(w, "texture_high")); });
  with(n, "cfa", [&](auto v) { d.cfa = CfaLayout::parse(as_string(v, key_path(w, "cfa"))).name(); });
  with(n, "files", [&](auto v) {
    for (const auto& f : as_list(v, key_path(w, "files"))) d.files.push_back(as_path(f, key_path(w, "files"), base));
  });
  if (d.size % 2) fail(ErrorCode::Config, "data.size must be even");
  if (!(d.intensity_scale > 0 && d.intensity_scale <= 1)) fail(ErrorCode::Config, "data.intensity_scale must lie in (0, 1]");
  if (d.source == "files" && d.files.empty()) fail(ErrorCode::Config, "data.files is required when data.source is files");
  if (d.source == "synth" && !d.files.empty()) fail(ErrorCode::Config, "data.files is only valid when data.source is files");
}

void parse_train(const YAML::Node& n, TrainConfig& t) {
  const std::string w = "train";
  require(n, {"steps", "batch", "lr", "optimizer"}, w);
  with(n, "steps", [&](auto v) { t.steps = as_uint(v, key_path(w, "steps")); });
  with(n, "batch", [&](auto v) { t.batch = as_positive(v, key_path(w, "batch")); });
  with(n, "lr", [&](auto v) { t.lr = as_double(v, key_path(w, "lr")); });
  with(n, "optimizer", [&](auto v) { t.optimizer = parse_optimizer_kind(as_string(v, key_path(w, "optimizer"))); });
  if (t.lr < 0) fail(ErrorCode::Config, "train.lr must be ≥ 0");
}

void parse_pipeline(const YAML::Node& n, PipelineSection& p, const fs::path& base) {
  const std::string w = "pipeline";
  require(n, {"configs", "params", "dump_stages"}, w);
  with(n, "configs", [&](auto v) {
    if (v.IsScalar() && v.Scalar() == "all") return;
    p.configs.clear();
    for (const auto& c : as_list(v, key_path(w, "configs"))) {
      p.configs.push_back(StaticConfig::from_abbreviation(as_string(c, key_path(w, "configs"))));
    }
  });
  with(n, "params", [&](auto v) { p.params = as_path(v, key_path(w, "params"), base); });
  with(n, "dump_stages", [&](auto v) { p.dump_stages = as_bool(v, key_path(w, "dump_stages")); });
}

void parse_synthesis(const YAML::Node& n, SynthesisSection& s) {
  const std::string w = "synthesis";
  require(n, {"folds", "corruptions", "severity", "threads"}, w);
  with(n, "folds", [&](auto v) { s.folds = as_uint(v, key_path(w, "folds")); });
  with(n, "corruptions", [&](auto v) {
    s.corruptions.clear();
    if (v.IsSequence() && v.size() == 0) return;
    for (const auto& c : as_list(v, key_path(w, "corruptions"))) {
      s.corruptions.push_back(parse_corruption_kind(as_string(c, key_path(w, "corruptions"))));
    }
  });
  with(n, "severity", [&](auto v) { s.severity = int(as_uint(v, key_path(w, "severity"))); });
  with(n, "threads", [&](auto v) { s.threads = unsigned(as_positive(v, key_path(w, "threads"))); });
  if (s.folds < 2) fail(ErrorCode::Config, "synthesis.folds must be at least 2");
  if (s.severity < 1 || s.severity > 5) fail(ErrorCode::Config, "synthesis.severity must be in 1..5");
}

void parse_forensics(const YAML::Node& n, ForensicsSection& f, const fs::path& base) {
  const std::string w = "forensics";
  require(n, {"lambdas", "groups", "steps", "optimizer", "lr", "optimize_count", "test_count", "model"}, w);
  with(n, "lambdas", [&](auto v) {
    f.lambdas.clear();
    for (const auto& x : as_list(v, key_path(w, "lambdas"))) {
      f.lambdas.push_back(as_double(x, key_path(w, "lambdas")));
      if (f.lambdas.back() < 0) fail(ErrorCode::Config, "forensics.lambdas must be ≥ 0");
    }
  });
  with(n, "groups", [&](auto v) {
    f.groups.clear();
    for (const auto& g : as_list(v, key_path(w, "groups"))) {
      f.groups.push_back(ParamGroupMask::parse(as_string(g, key_path(w, "groups"))));
    }
  });
  with(n, "steps", [&](auto v) { f.steps = as_uint(v, key_path(w, "steps")); });
  with(n, "optimizer", [&](auto v) { f.optimizer = parse_optimizer_kind(as_string(v, key_path(w, "optimizer"))); });
  with(n, "lr", [&](auto v) { f.lr = as_double(v, key_path(w, "lr")); });
  with(n, "optimize_count", [&](auto v) { f.optimize_count = as_positive(v, key_path(w, "optimize_count")); });
  with(n, "test_count", [&](auto v) { f.test_count = as_positive(v, key_path(w, "test_count")); });
  with(n, "model", [&](auto v) { f.model = as_path(v, key_path(w, "model"), base); });
}

void parse_optimization(const YAML::Node& n, OptimizationSection& o) {
  const std::string w = "optimization";
  require(n, {"modes", "folds", "pipeline_lr", "pipeline_groups", "output_standardize", "eval_every"}, w);
  with(n, "modes", [&](auto v) {
    o.modes.clear();
    for (const auto& m : as_list(v, key_path(w, "modes"))) {
      o.modes.push_back(parse_optimization_mode(as_string(m, key_path(w, "modes"))));
    }
  });
  with(n, "folds", [&](auto v) { o.folds = as_uint(v, key_path(w, "folds")); });
  with(n, "pipeline_lr", [&](auto v) { o.pipeline_lr = as_double(v, key_path(w, "pipeline_lr")); });
  with(n, "pipeline_groups", [&](auto v) { o.pipeline_groups = ParamGroupMask::parse(as_string(v, key_path(w, "pipeline_groups"))); });
  with(n, "output_standardize", [&](auto v) { o.output_standardize = as_bool(v, key_path(w, "output_standardize")); });
  with(n, "eval_every", [&](auto v) { o.eval_every = as_positive(v, key_path(w, "eval_every")); });
  if (o.folds < 2) fail(ErrorCode::Config, "optimization.folds must be at least 2");
  if (o.pipeline_lr < 0) fail(ErrorCode::Config, "optimization.pipeline_lr must be ≥ 0");
}

void parse_gradcheck(const YAML::Node& n, GradcheckSection& g, const fs::path& base) {
  const std::string w = "gradcheck";
  require(n, {"count", "size", "step", "tolerance", "pixel_margin", "include_raw", "cfa", "params", "fault"}, w);
  with(n, "count", [&](auto v) { g.count = as_positive(v, key_path(w, "count")); });
  with(n, "size", [&](auto v) { g.size = as_positive(v, key_path(w, "size")); });
  with(n, "step", [&](auto v) { g.step = as_double(v, key_path(w, "step")); });
  with(n, "tolerance", [&](auto v) { g.tolerance = as_double(v, key_path(w, "tolerance")); });
  with(n, "pixel_margin", [&](auto v) { g.pixel_margin = as_double(v, key_path(w, "pixel_margin")); });
  with(n, "include_raw", [&](auto v) { g.include_raw = as_bool(v, key_path(w, "include_raw")); });
  with(n, "cfa", [&](auto v) { g.cfa = CfaLayout::parse(as_string(v, key_path(w, "cfa"))).name(); });
  with(n, "params", [&](auto v) { g.params = as_path(v, key_path(w, "params"), base); });
  with(n, "fault", [&](auto v) {
    const std::string fw = key_path(w, "fault");
    require(v, {"op", "factor"}, fw);
    g.fault = {as_string(doc::required(v, "op", fw), key_path(fw, "op")),
               as_double(doc::required(v, "factor", fw), key_path(fw, "factor"))};
  });
  if (g.size % 2 || g.size < 4) fail(ErrorCode::Config, "gradcheck.size must be even and at least 4");
  if (!(g.step > 0)) fail(ErrorCode::Config, "gradcheck.step must be positive");
}

void parse_fetch(const YAML::Node& n, FetchSection& f, const fs::path& base) {
  const std::string w = "fetch";
  require(n, {"manifest", "destination", "attempts", "timeout_seconds"}, w);
  f.manifest = as_path(doc::required(n, "manifest", w), key_path(w, "manifest"), base);
  with(n, "destination", [&](auto v) { f.destination = as_path(v, key_path(w, "destination"), base); });
  with(n, "attempts", [&](auto v) { f.attempts = int(as_positive(v, key_path(w, "attempts"))); });
  with(n, "timeout_seconds", [&](auto v) { f.timeout_seconds = int(as_positive(v, key_path(w, "timeout_seconds"))); });
}

void emit(YAML::Emitter& out, const char* key, double v) { out << YAML::Key << key << YAML::Value << doc::format_double(v); }
void emit(YAML::Emitter& out, const char* key, const std::string& v) { out << YAML::Key << key << YAML::Value << v; }
void emit(YAML::Emitter& out, const char* key, std::uint64_t v) { out << YAML::Key << key << YAML::Value << v; }
void emit(YAML::Emitter& out, const char* key, bool v) { out << YAML::Key << key << YAML::Value << (v ? "true" : "false"); }

template <class T, class F>
void emit_list(YAML::Emitter& out, const char* key, const std::vector<T>& xs, F&& str) {
  out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& x : xs) out << str(x);
  out << YAML::EndSeq;
}

}  // namespace

Command parse_command(std::string_view name) {
  for (auto c : {Command::Process, Command::Synth, Command::Forensics, Command::Optimize, Command::Gradcheck,
                 Command::Fetch}) {
    if (name == to_string(c)) return c;
  }
  fail(ErrorCode::Config, "unknown command '" + std::string(name) + "'");
}

const char* to_string(Command command) {
  switch (command) {
    case Command::Process: return "process";
    case Command::Synth: return "synth";
    case Command::Forensics: return "forensics";
    case Command::Optimize: return "optimize";
    case Command::Gradcheck: return "gradcheck";
    case Command::Fetch: return "fetch";
  }
  return "unknown";
}

RunConfig parse_run_config(const std::string& text, Command expected, const fs::path& base_dir) {
  YAML::Node root;
  try {
    root = doc::load(text, "config");
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
  check_map(root, "config");
  RunConfig c;
  c.command = parse_command(as_string(doc::required(root, "command", "config"), "command"));
  if (c.command != expected) {
    fail(ErrorCode::Config, std::string("config is for '") + to_string(c.command) + "', not '" + to_string(expected) + "'");
  }
  switch (c.command) {
    case Command::Process: require(root, {"command", "seed", "data", "pipeline"}, "config"); break;
    case Command::Synth: require(root, {"command", "seed", "data", "task", "train", "synthesis"}, "config"); break;
    case Command::Forensics: require(root, {"command", "seed", "data", "task", "train", "forensics"}, "config"); break;
    case Command::Optimize: require(root, {"command", "seed", "data", "task", "train", "optimization"}, "config"); break;
    case Command::Gradcheck: require(root, {"command", "seed", "gradcheck"}, "config"); break;
    case Command::Fetch: require(root, {"command", "fetch"}, "config"); break;
  }
  with(root, "seed", [&](auto v) { c.seed = as_uint(v, "seed"); });
  with(root, "data", [&](auto v) { parse_data(v, c.data, base_dir); });
  c.task = c.data.dataset == DatasetKind::Segmentation ? TaskKind::Segmentation : TaskKind::Classification;
  with(root, "task", [&](auto v) {
    const TaskKind t = parse_task_kind(as_string(v, "task"));
    if (c.data.source == "synth" && t != c.task) {
      fail(ErrorCode::Config, std::string("task ") + to_string(t) + " does not match dataset " + to_string(c.data.dataset));
    }
    c.task = t;
  });
  with(root, "train", [&](auto v) { parse_train(v, c.train); });
  with(root, "pipeline", [&](auto v) { parse_pipeline(v, c.pipeline, base_dir); });
  with(root, "synthesis", [&](auto v) { parse_synthesis(v, c.synthesis); });
  with(root, "forensics", [&](auto v) { parse_forensics(v, c.forensics, base_dir); });
  with(root, "optimization", [&](auto v) { parse_optimization(v, c.optimization); });
  with(root, "gradcheck", [&](auto v) { parse_gradcheck(v, c.gradcheck, base_dir); });
  if (c.command == Command::Fetch) parse_fetch(doc::required(root, "fetch", "config"), c.fetch, base_dir);
  return c;
}

std::string resolved_yaml(const RunConfig& c) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  emit(out, "command", std::string(to_string(c.command)));
  const bool uses_data = c.command == Command::Process || c.command == Command::Synth ||
                         c.command == Command::Forensics || c.command == Command::Optimize;
  if (c.command != Command::Fetch) emit(out, "seed", c.seed);
  if (uses_data) {
    const auto& d = c.data;
    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    emit(out, "source", d.source);
    if (d.source == "synth") {
      emit(out, "dataset", std::string(to_string(d.dataset)));
      emit(out, "count", std::uint64_t(d.count));
      emit(out, "size", std::uint64_t(d.size));
      if (d.dataset == DatasetKind::Texture) {
        emit(out, "texture_low", d.texture_low);
        emit(out, "texture_high", d.texture_high);
      }
      emit(out, "cfa", d.cfa);
    } else {
      emit_list(out, "files", d.files, [](const fs::path& p) { return p.string(); });
    }
    emit(out, "intensity_scale", d.intensity_scale);
    out << YAML::EndMap;
  }
  if (c.command == Command::Synth || c.command == Command::Forensics || c.command == Command::Optimize) {
    emit(out, "task", std::string(to_string(c.task)));
    out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    emit(out, "steps", std::uint64_t(c.train.steps));
    emit(out, "batch", std::uint64_t(c.train.batch));
    emit(out, "lr", c.train.lr);
    emit(out, "optimizer", optimizer_name(c.train.optimizer));
    out << YAML::EndMap;
  }
  switch (c.command) {
    case Command::Process: {
      const auto& p = c.pipeline;
      out << YAML::Key << "pipeline" << YAML::Value << YAML::BeginMap;
      emit_list(out, "configs", p.configs, [](const StaticConfig& s) { return s.abbreviation(); });
      if (p.params) emit(out, "params", p.params->string());
      emit(out, "dump_stages", p.dump_stages);
      out << YAML::EndMap;
      break;
    }
    case Command::Synth: {
      const auto& s = c.synthesis;
      out << YAML::Key << "synthesis" << YAML::Value << YAML::BeginMap;
      emit(out, "folds", std::uint64_t(s.folds));
      emit_list(out, "corruptions", s.corruptions, [](CorruptionKind k) { return std::string(to_string(k)); });
      emit(out, "severity", std::uint64_t(s.severity));
      emit(out, "threads", std::uint64_t(s.threads));
      out << YAML::EndMap;
      break;
    }
    case Command::Forensics: {
      const auto& f = c.forensics;
      out << YAML::Key << "forensics" << YAML::Value << YAML::BeginMap;
      emit_list(out, "lambdas", f.lambdas, [](double x) { return doc::format_double(x); });
      emit_list(out, "groups", f.groups, [](const ParamGroupMask& m) { return m.to_string(); });
      emit(out, "steps", std::uint64_t(f.steps));
      emit(out, "optimizer", optimizer_name(f.optimizer));
      emit(out, "lr", f.lr);
      emit(out, "optimize_count", std::uint64_t(f.optimize_count));
      emit(out, "test_count", std::uint64_t(f.test_count));
      if (f.model) emit(out, "model", f.model->string());
      out << YAML::EndMap;
      break;
    }
    case Command::Optimize: {
      const auto& o = c.optimization;
      out << YAML::Key << "optimization" << YAML::Value << YAML::BeginMap;
      emit_list(out, "modes", o.modes, [](OptimizationMode m) { return std::string(to_string(m)); });
      emit(out, "folds", std::uint64_t(o.folds));
      emit(out, "pipeline_lr", o.pipeline_lr);
      emit(out, "pipeline_groups", o.pipeline_groups.to_string());
      emit(out, "output_standardize", o.output_standardize);
      emit(out, "eval_every", std::uint64_t(o.eval_every));
      out << YAML::EndMap;
      break;
    }
    case Command::Gradcheck: {
      const auto& g = c.gradcheck;
      out << YAML::Key << "gradcheck" << YAML::Value << YAML::BeginMap;
      emit(out, "count", std::uint64_t(g.count));
      emit(out, "size", std::uint64_t(g.size));
      emit(out, "step", g.step);
      emit(out, "tolerance", g.tolerance);
      emit(out, "pixel_margin", g.pixel_margin);
      emit(out, "include_raw", g.include_raw);
      emit(out, "cfa", g.cfa);
      if (g.params) emit(out, "params", g.params->string());
      if (g.fault) {
        out << YAML::Key << "fault" << YAML::Value << YAML::BeginMap;
        emit(out, "op", g.fault->first);
        emit(out, "factor", g.fault->second);
        out << YAML::EndMap;
      }
      out << YAML::EndMap;
      break;
    }
    case Command::Fetch: {
      const auto& f = c.fetch;
      out << YAML::Key << "fetch" << YAML::Value << YAML::BeginMap;
      emit(out, "manifest", f.manifest.string());
      if (f.destination) emit(out, "destination", f.destination->string());
      emit(out, "attempts", std::uint64_t(f.attempts));
      emit(out, "timeout_seconds", std::uint64_t(f.timeout_seconds));
      out << YAML::EndMap;
      break;
    }
  }
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace rawdrift::cli
