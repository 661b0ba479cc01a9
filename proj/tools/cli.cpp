#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <random>

#include "rawdrift/document.hpp"
#include "rawdrift/error.hpp"
#include "rawdrift/fetch.hpp"
#include "rawdrift/pipeline_check.hpp"
#include "run_config.hpp"

namespace rawdrift::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kResolvedName = "config.resolved.yaml";
constexpr const char* kLogName = "run.log";

struct Flags {
  fs::path config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::optional<unsigned> threads;
  bool force = false;
};

/// Output directory of one run. Every file goes through an atomic write and
/// leaves a line in the run log.
class RunDir {
 public:
  RunDir(fs::path root, bool force) : root_(std::move(root)), force_(force) {}

  const fs::path& root() const { return root_; }

  bool keep_existing(const std::string& name) {
    if (force_ || !fs::exists(root_ / name)) return false;
    log_.push_back("kept " + name);
    return true;
  }

  void text(const std::string& name, const std::string& bytes) {
    prepare(name);
    write_file_atomic(root_ / name, bytes);
    log_.push_back("wrote " + name + " sha256=" + sha256_hex(bytes));
  }

  void png(const std::string& name, const RgbImage& image) {
    prepare(name);
    write_rgb(image, root_ / name);
    log_.push_back("wrote " + name + " sha256=" + sha256_file(root_ / name));
  }

  void note(std::string line) { log_.push_back(std::move(line)); }

  void finish(const std::string& resolved, const std::string& status) {
    text(kResolvedName, resolved);
    std::string log;
    for (const auto& line : log_) log += line + "\n";
    log += "status " + status + "\n";
    write_file_atomic(root_ / kLogName, log);
  }

 private:
  void prepare(const std::string& name) { fs::create_directories((root_ / name).parent_path()); }

  fs::path root_;
  bool force_;
  std::vector<std::string> log_;
};

std::string file_tag(std::string s) {
  for (auto& c : s) {
    if (c == ',') c = '-';
  }
  return s;
}

std::string lambda_tag(double lambda) { return "lambda_" + doc::format_double(lambda); }

struct NamedData {
  std::vector<RawImage> raws;
  std::vector<std::string> names;
};

NamedData load_data(const RunConfig& c) {
  NamedData d;
  if (c.data.source == "synth") {
    DatasetSpec spec;
    spec.kind = c.data.dataset;
    spec.count = c.data.count;
    spec.size = c.data.size;
    spec.seed = mix_seed(c.seed, 1);
    spec.intensity_scale = c.data.intensity_scale;
    spec.texture_low = c.data.texture_low;
    spec.texture_high = c.data.texture_high;
    spec.cfa = CfaLayout::parse(c.data.cfa);
    d.raws = synth_dataset(spec);
    for (std::size_t i = 0; i < d.raws.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "scene_%03zu", i);
      d.names.emplace_back(name);
    }
    return d;
  }
  for (const auto& f : c.data.files) {
    d.raws.push_back(load_raw(f));
    d.names.push_back(f.stem().string());
  }
  if (c.data.intensity_scale != 1.0) d.raws = scale_intensity(d.raws, c.data.intensity_scale);
  for (const auto& r : d.raws) {
    if (r.data.shape() != d.raws.front().data.shape() || !(r.cfa == d.raws.front().cfa)) {
      fail(ErrorCode::Config, "all input raws must share shape and CFA layout");
    }
  }
  return d;
}

PipelineParams load_params(const fs::path& path) { return deserialize_params(read_file(path)); }

RgbImage stage_preview(const RgbImage& stage) {
  if (stage.data.dim(0) == 3) return stage;
  // Single-plane stages are written as gray.
  const std::size_t n = stage.data.size();
  std::vector<double> v(3 * n);
  for (std::size_t c = 0; c < 3; ++c) std::copy(stage.data.values().begin(), stage.data.values().end(), v.begin() + long(c * n));
  return {Tensor({3, stage.data.dim(1), stage.data.dim(2)}, std::move(v)), stage.stage};
}

int cmd_process(const RunConfig& c, RunDir& dir) {
  const NamedData data = load_data(c);
  if (c.data.source == "synth") {
    for (std::size_t i = 0; i < data.raws.size(); ++i) {
      const std::string name = "raw/" + data.names[i] + ".pgm";
      if (dir.keep_existing(name)) continue;
      fs::create_directories(dir.root() / "raw");
      write_raw(data.raws[i], dir.root() / name, "synth");
      dir.note("wrote " + name + " sha256=" + sha256_file(dir.root() / name));
    }
  }
  const std::optional<PipelineParams> params =
      c.pipeline.params ? std::optional(load_params(*c.pipeline.params)) : std::nullopt;
  std::size_t written = 0;
  for (std::size_t i = 0; i < data.raws.size(); ++i) {
    for (const auto& config : c.pipeline.configs) {
      const std::string stem = data.names[i] + "__" + file_tag(config.abbreviation());
      const std::string name = "views/" + stem + ".png";
      if (!dir.keep_existing(name)) {
        dir.png(name, process_static(data.raws[i], config));
        ++written;
      }
      if (!c.pipeline.dump_stages) continue;
      const auto stages = process_static_stages(data.raws[i], config);
      for (std::size_t k = 0; k < stages.size(); ++k) {
        const std::string sname = "stages/" + stem + "__" + std::to_string(k + 1) + "_" + to_string(stages[k].stage) + ".png";
        if (!dir.keep_existing(sname)) dir.png(sname, stage_preview(stages[k]));
      }
    }
    if (params) {
      const std::string name = "views/" + data.names[i] + "__param.png";
      if (!dir.keep_existing(name)) {
        dir.png(name, process_param(data.raws[i], *params));
        ++written;
      }
    }
  }
  std::cout << "process: " << written << " views written to " << dir.root().string() << "\n";
  return kOk;
}

int cmd_synth(const RunConfig& c, RunDir& dir) {
  const NamedData data = load_data(c);
  SynthesisOptions o;
  o.task = c.task;
  o.folds = c.synthesis.folds;
  o.seed = c.seed;
  o.train = c.train;
  o.corruptions = c.synthesis.corruptions;
  o.corruption_severity = c.synthesis.severity;
  o.threads = c.synthesis.threads;
  const SynthesisReport r = run_synthesis(data.raws, o);
  dir.text("matrix.csv", r.matrix_csv());
  dir.text("folds.csv", r.folds_csv());
  dir.text("ranking.csv", r.ranking_csv());
  dir.text("corruption.csv", r.corruption_csv());
  const std::string a = r.labels[r.worst_train], b = r.labels[r.worst_test];
  std::string summary = "diagonal_mean,off_diagonal_mean,worst_train,worst_test,worst_mean,diff_l2_r,diff_l2_g,diff_l2_b,diff_max\n";
  summary += doc::format_double(r.diagonal_mean()) + "," + doc::format_double(r.off_diagonal_mean()) + ",\"" + a + "\",\"" +
             b + "\"," + doc::format_double(r.mean[r.worst_train][r.worst_test]) + "," +
             doc::format_double(r.worst_diff.l2[0]) + "," + doc::format_double(r.worst_diff.l2[1]) + "," +
             doc::format_double(r.worst_diff.l2[2]) + "," + doc::format_double(r.worst_diff.max_total) + "\n";
  dir.text("summary.csv", summary);
  const auto& configs = enumerate_configs();
  dir.png("worst/" + data.names[0] + "__" + file_tag(a) + ".png", process_static(data.raws[0], configs[r.worst_train]));
  dir.png("worst/" + data.names[0] + "__" + file_tag(b) + ".png", process_static(data.raws[0], configs[r.worst_test]));
  dir.png("worst/diff__" + file_tag(a) + "__" + file_tag(b) + ".png", r.worst_diff.diff);
  std::cout << "synth: diagonal mean " << doc::format_double(r.diagonal_mean()) << ", off-diagonal mean "
            << doc::format_double(r.off_diagonal_mean()) << "\n";
  return kOk;
}

int cmd_forensics(const RunConfig& c, RunDir& dir) {
  const NamedData data = load_data(c);
  const auto& f = c.forensics;
  const std::size_t n = data.raws.size();
  if (n < f.optimize_count + f.test_count + 2) {
    fail(ErrorCode::Config, "forensics needs data.count ≥ optimize_count + test_count + 2");
  }
  const std::size_t train_n = n - f.optimize_count - f.test_count;
  auto slice = [&](std::size_t from, std::size_t count) {
    return std::vector<RawImage>(data.raws.begin() + long(from), data.raws.begin() + long(from + count));
  };
  const auto train = slice(0, train_n), opt = slice(train_n, f.optimize_count), test = slice(n - f.test_count, f.test_count);
  const PipelineParams baseline = default_params();
  const CfaLayout cfa = data.raws[0].cfa;

  TaskModel model;
  if (f.model) {
    model = deserialize_model(read_file(*f.model));
    if (model.kind != c.task) fail(ErrorCode::Config, "forensics.model was trained for a different task");
  } else {
    Tape tape;
    const Tensor views =
        process_param(tape.constant(stack_raws(train)), attach(tape, baseline, ParamGroupMask::none()), cfa).value();
    model = train_on_views(views, labels_of(train, c.task), c.task, c.train, mix_seed(c.seed, 2));
  }
  dir.text("model.yaml", serialize_model(model));
  dir.text("baseline_params.yaml", serialize_params(baseline));

  const ForensicsBatch opt_batch{stack_raws(opt), labels_of(opt, c.task)};
  const ForensicsBatch test_batch{stack_raws(test), labels_of(test, c.task)};
  std::vector<ForensicsReport> rows;
  bool aborted = false;
  for (const auto& mask : f.groups) {
    for (double lambda : f.lambdas) {
      ForensicsConfig fc;
      fc.lambda = lambda;
      fc.steps = f.steps;
      fc.optimizer = f.optimizer;
      fc.lr = f.lr;
      fc.mask = mask;
      fc.seed = c.seed;
      rows.push_back(run_forensics(model, baseline, cfa, opt_batch, test_batch, fc));
      aborted = aborted || rows.back().aborted;
      dir.text("theta/" + mask.to_string() + "__" + lambda_tag(lambda) + ".yaml", serialize_params(rows.back().theta));
    }
  }
  dir.text("forensics.csv", forensics_csv(rows));
  dir.text("trajectory.csv", forensics_trajectory_csv(rows));
  std::cout << "forensics: " << rows.size() << " runs" << (aborted ? ", at least one aborted on a non-finite objective" : "")
            << "\n";
  return aborted ? kNumericAbort : kOk;
}

int cmd_optimize(const RunConfig& c, RunDir& dir) {
  const NamedData data = load_data(c);
  std::vector<OptimizationRun> runs;
  for (auto mode : c.optimization.modes) {
    OptimizationOptions o;
    o.task = c.task;
    o.mode = mode;
    o.folds = c.optimization.folds;
    o.seed = c.seed;
    o.train = c.train;
    o.pipeline_lr = c.optimization.pipeline_lr;
    o.pipeline_mask = c.optimization.pipeline_groups;
    o.output_standardize = c.optimization.output_standardize;
    o.eval_every = c.optimization.eval_every;
    runs.push_back(run_drift_optimization(data.raws, o));
    const std::string tag = to_string(mode);
    dir.text("trajectory__" + tag + ".csv", runs.back().trajectory_csv());
    if (mode == OptimizationMode::DirectRaw) continue;
    for (std::size_t k = 0; k < runs.back().final_params.size(); ++k) {
      dir.text("params/" + tag + "__fold" + std::to_string(k) + ".yaml", serialize_params(runs.back().final_params[k]));
    }
  }
  dir.text("summary.csv", optimization_summary_csv(runs));
  for (const auto& r : runs) {
    std::cout << "optimize: " << to_string(r.mode) << " mean " << doc::format_double(r.mean) << " std "
              << doc::format_double(r.std) << "\n";
  }
  return kOk;
}

int cmd_gradcheck(const RunConfig& c, RunDir& dir) {
  const auto& g = c.gradcheck;
  const PipelineParams params = g.params ? load_params(*g.params) : default_params();
  const CfaLayout cfa = CfaLayout::parse(g.cfa);
  GradcheckOptions o;
  o.step = g.step;
  o.tolerance = g.tolerance;
  o.pixel_margin = g.pixel_margin;
  o.include_raw = g.include_raw;
  o.fault = g.fault;
  GradcheckReport total;
  for (std::size_t i = 0; i < g.count; ++i) {
    std::mt19937_64 rng(mix_seed(c.seed, 100 + i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor raw({1, g.size, g.size});
    for (auto& v : raw.values()) v = quantize16(u(rng)) / 65535.0;
    o.seed = mix_seed(c.seed, 200 + i);
    const GradcheckReport r = pipeline_gradcheck(raw, cfa, params, o);
    if (total.rows.empty()) {
      total = r;
      continue;
    }
    for (std::size_t k = 0; k < r.rows.size(); ++k) {
      auto& t = total.rows[k];
      t.rel_error = std::max(t.rel_error, r.rows[k].rel_error);
      t.checked += r.rows[k].checked;
      t.skipped += r.rows[k].skipped;
      t.pass = t.pass && r.rows[k].pass;
    }
  }
  dir.text("gradcheck.csv", total.to_csv());
  std::cout << total.to_csv();
  return total.pass() ? kOk : kGradcheckFail;
}

fs::path cache_dir() {
  if (const char* env = std::getenv("RAWDRIFT_CACHE_DIR"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "rawdrift";
  return fs::path(".rawdrift-cache");
}

int cmd_fetch(const RunConfig& c, RunDir& dir) {
  const DatasetManifest manifest = load_manifest(c.fetch.manifest);
  FetchOptions o;
  o.attempts = c.fetch.attempts;
  o.timeout_seconds = c.fetch.timeout_seconds;
  const FetchReport r = fetch_dataset(manifest, *c.fetch.destination, o);
  dir.text("fetch.csv", r.to_csv());
  std::cout << "fetch: " << r.downloads() << " downloaded, " << r.count(FetchStatus::AlreadyValid) << " already valid, "
            << r.count(FetchStatus::ChecksumMismatch) << " checksum failures, " << r.count(FetchStatus::NetworkError)
            << " network failures\n";
  if (r.count(FetchStatus::ChecksumMismatch)) return kChecksumFail;
  if (r.count(FetchStatus::NetworkError)) return kIoError;
  return kOk;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io:
    case ErrorCode::FormatMagic:
    case ErrorCode::FormatMaxval:
    case ErrorCode::FormatOddDimensions:
    case ErrorCode::FormatTruncated:
    case ErrorCode::MissingSidecar:
    case ErrorCode::Sidecar:
    case ErrorCode::Network:
      return kIoError;
    case ErrorCode::NonFinite: return kNumericAbort;
    case ErrorCode::Checksum: return kChecksumFail;
    default: return kConfigError;
  }
}

int execute(Command command, const Flags& flags) {
  std::string text;
  try {
    text = read_file(flags.config);
  } catch (const Error& e) {
    std::cerr << "error: cannot read config: " << e.what() << "\n";
    return kConfigError;
  }
  RunConfig config = parse_run_config(text, command, fs::absolute(flags.config).parent_path());
  if (flags.seed) config.seed = *flags.seed;
  if (flags.threads) config.synthesis.threads = *flags.threads;
  if (command == Command::Fetch && !config.fetch.destination) {
    config.fetch.destination = cache_dir() / config.fetch.manifest.stem();
  }
  const fs::path out = flags.out ? *flags.out : fs::path("runs") / (std::string(to_string(command)) + "-seed" + std::to_string(config.seed));
  const std::string resolved = resolved_yaml(config);

  // Report-producing commands run once per output directory unless forced.
  const bool whole_run = command == Command::Synth || command == Command::Forensics || command == Command::Optimize ||
                         command == Command::Gradcheck;
  if (whole_run && !flags.force && fs::exists(out / kLogName)) {
    const fs::path previous = out / kResolvedName;
    if (fs::exists(previous) && read_file(previous) == resolved) {
      std::cout << to_string(command) << ": outputs in " << out.string() << " are up to date (use --force to rerun)\n";
      return kOk;
    }
    std::cerr << "error: " << out.string() << " holds a run with a different config (use --force to overwrite)\n";
    return kConfigError;
  }
  fs::create_directories(out);
  RunDir dir(out, flags.force);
  dir.note(std::string("rawdrift ") + to_string(command));
  dir.note("config sha256=" + sha256_hex(resolved));
  int status = kOk;
  try {
    switch (command) {
      case Command::Process: status = cmd_process(config, dir); break;
      case Command::Synth: status = cmd_synth(config, dir); break;
      case Command::Forensics: status = cmd_forensics(config, dir); break;
      case Command::Optimize: status = cmd_optimize(config, dir); break;
      case Command::Gradcheck: status = cmd_gradcheck(config, dir); break;
      case Command::Fetch: status = cmd_fetch(config, dir); break;
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NonFinite) throw;
    dir.note(std::string("aborted: ") + e.what());
    dir.finish(resolved, "numeric-abort");
    throw;
  }
  dir.finish(resolved, status == kOk ? "ok" : "exit-" + std::to_string(status));
  return status;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Raw-image data models and dataset drift controls"};
  app.require_subcommand(1);
  Flags flags;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out;
  const std::vector<std::pair<Command, const char*>> commands = {
      {Command::Process, "Process raw images through static pipeline configurations"},
      {Command::Synth, "Train x test matrix over the twelve pipeline configurations"},
      {Command::Forensics, "Adversarial search over pipeline parameters"},
      {Command::Optimize, "Learned, frozen and direct-raw training"},
      {Command::Gradcheck, "Compare pipeline gradients with finite differences"},
      {Command::Fetch, "Download and verify a dataset manifest"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [command, help] : commands) {
    CLI::App* sub = app.add_subcommand(to_string(command), help);
    sub->add_option("--config", flags.config, "Run configuration (YAML)")->required();
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out, "Output directory");
    sub->add_flag("--force", flags.force, "Overwrite existing outputs");
    sub->add_option("--threads", threads, "Worker threads (synthesis cells)")->check(CLI::PositiveNumber);
    subs.push_back(sub);
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  for (std::size_t i = 0; i < subs.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    if (subs[i]->count("--seed")) flags.seed = seed;
    if (subs[i]->count("--threads")) flags.threads = threads;
    if (subs[i]->count("--out")) flags.out = fs::path(out);
    try {
      return execute(commands[i].first, flags);
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return exit_code(e.code());
    } catch (const fs::filesystem_error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kIoError;
    }
  }
  return kConfigError;
}

}  // namespace rawdrift::cli
