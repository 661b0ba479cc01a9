#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <random>

#include "rawdrift/error.hpp"
#include "rawdrift/isp_param.hpp"
#include "rawdrift/ops.hpp"
#include "rawdrift/pipeline_check.hpp"
#include "rawdrift/scenes.hpp"

using namespace rawdrift;

namespace {

RawImage random_raw(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t({h, w});
  for (auto& v : t.values()) v = u(rng);
  return RawImage{t};
}

PipelineParams random_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  PipelineParams p = default_params();
  for (auto g : kAllGroups) {
    for (auto& v : p.group(g).values()) v += 0.05 * nd(rng);
  }
  return p;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::Config;
}

}  // namespace

TEST(Defaults, MatchListing) {
  const PipelineParams p = default_params();
  EXPECT_EQ(p.sharpen[4], 5.0);
  EXPECT_EQ(p.denoise[12], 6.1869e-01);
  EXPECT_EQ(p.gamma[0], 2.2);
  for (double v : p.black_level.values()) EXPECT_EQ(v, 0.0);
  for (double v : p.white_balance.values()) EXPECT_EQ(v, 1.0);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(p.colour_matrix[i], i % 4 == 0 ? 1.0 : 0.0);
    EXPECT_EQ(p.demosaic[i], constants::K_RB[i]);
    EXPECT_EQ(p.demosaic[9 + i], constants::K_G[i]);
    EXPECT_EQ(p.demosaic[18 + i], constants::K_RB[i]);
  }
  EXPECT_FALSE(p.output_standardize);
}

TEST(Equivalence, DefaultMatchesStatic) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RawImage raw = random_raw(16, 16, seed);
    EXPECT_LE(max_abs_diff(process_param(raw, default_params()).data, process_static(raw, StaticConfig{}).data), 1e-6);
  }
}

TEST(Equivalence, NonDefaultContinuousParameters) {
  StaticConfig c;
  c.bl = {0.01, 0.02, 0.015, 0.005};
  c.wb = {1.6, 1.0, 1.3};
  c.cc = {1.2, -0.1, -0.1, -0.05, 1.1, -0.05, 0.0, -0.2, 1.2};
  c.gamma = 1.8;
  const PipelineParams p = static_equivalence_params(c);
  EXPECT_EQ(p.demosaic, default_params().demosaic);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    // Raws above the largest offset keep the static clamp inactive.
    RawImage raw = random_raw(16, 16, 100 + seed);
    for (auto& v : raw.data.values()) v = 0.05 + 0.9 * v;
    EXPECT_LE(max_abs_diff(process_param(raw, p).data, process_static(raw, c).data), 1e-6);
  }
}

TEST(Equivalence, UnsupportedConfigs) {
  for (const auto& c : enumerate_configs()) {
    if (c.abbreviation() == "bi,s,ga") {
      EXPECT_NO_THROW(static_equivalence_params(c));
    } else {
      EXPECT_EQ(code_of([&] { static_equivalence_params(c); }), ErrorCode::Unsupported) << c.abbreviation();
    }
  }
}

TEST(ProcessParam, IdentityComposition) {
  PipelineParams p = default_params();
  p.sharpen = Tensor::from({3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  p.denoise = Tensor({5, 5});
  p.denoise[12] = 1.0;
  p.gamma[0] = 1.0;
  const RgbImage out = process_param(RawImage{Tensor::filled({8, 8}, 0.3)}, p);
  for (double v : out.data.values()) EXPECT_NEAR(v, 0.3, 1e-12);
}

TEST(ProcessParam, RangeStagesAndStandardize) {
  const RawImage raw = random_raw(8, 8, 3);
  PipelineParams p = random_params(4);
  const RgbImage view = process_param(raw, p);
  for (double v : view.data.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  Tape tape;
  p.output_standardize = true;
  StageTrace trace;
  const Var out = process_param(tape.constant(raw.data.reshaped({1, 8, 8})), attach(tape, p, ParamGroupMask::none()),
                                raw.cfa, &trace);
  ASSERT_EQ(trace.stages.size(), 9u);
  EXPECT_EQ(trace.stages.front().first, Stage::BlackLevel);
  EXPECT_EQ(trace.stages.back().first, Stage::Standardized);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0;
    for (std::size_t i = 0; i < 64; ++i) mean += out.value()[c * 64 + i];
    EXPECT_NEAR(mean / 64, 0.0, 1e-12);
  }
}

TEST(ProcessParam, RejectsNonFinite) {
  PipelineParams p = default_params();
  p.colour_matrix[3] = std::nan("");
  EXPECT_EQ(code_of([&] { process_param(random_raw(4, 4, 1), p); }), ErrorCode::NonFinite);
}

TEST(ProcessParam, MaskedGroupsHaveNoGradient) {
  Tape tape;
  const PipelineVars vars = attach(tape, default_params(), ParamGroupMask::parse("WB+GC"));
  const Var out = process_param(tape.constant(random_raw(8, 8, 5).data.reshaped({1, 8, 8})), vars, CfaLayout::bggr());
  const Gradients g = tape.backward(ops::sq_l2(out));
  EXPECT_EQ(g.size(), 2u);
  EXPECT_TRUE(g.contains(vars[ParamGroup::WB]));
  EXPECT_TRUE(g.contains(vars[ParamGroup::GC]));
  EXPECT_FALSE(g.contains(vars[ParamGroup::CC]));
}

TEST(Gradients, AllGroupsAndRawMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const RawImage raw = random_raw(16, 16, 200 + seed);
    GradcheckOptions opt;
    opt.seed = seed;
    const GradcheckReport report =
        pipeline_gradcheck(raw.data.reshaped({1, 16, 16}), raw.cfa, seed ? random_params(seed) : default_params(), opt);
    ASSERT_EQ(report.rows.size(), 8u);
    for (const auto& row : report.rows) {
      EXPECT_TRUE(row.pass) << row.name << " " << row.rel_error;
      EXPECT_GT(row.checked, 0u) << row.name;
    }
  }
}

TEST(Gradients, CorruptedAdjointIsCaught) {
  const RawImage raw = random_raw(8, 8, 9);
  GradcheckOptions opt;
  opt.fault = {{"channel_affine", 1.5}};
  opt.include_raw = false;
  const GradcheckReport report = pipeline_gradcheck(raw.data.reshaped({1, 8, 8}), raw.cfa, default_params(), opt);
  EXPECT_FALSE(report.pass());
}

TEST(Gradients, StandardizedOutputMatchesFiniteDifferences) {
  const RawImage raw = random_raw(8, 8, 11);
  PipelineParams p = default_params();
  p.output_standardize = true;
  const GradcheckReport report = pipeline_gradcheck(raw.data.reshaped({1, 8, 8}), raw.cfa, p, {});
  for (const auto& row : report.rows) EXPECT_TRUE(row.pass) << row.name << " " << row.rel_error;
}

TEST(GroupMask, Parse) {
  EXPECT_EQ(ParamGroupMask::parse("all").to_string(), "all");
  EXPECT_FALSE(ParamGroupMask::parse("none").any());
  EXPECT_EQ(ParamGroupMask::parse("CC+WB").to_string(), "WB+CC");
  EXPECT_THROW(ParamGroupMask::parse("WB+XX"), Error);
}

TEST(Serialization, RoundTripBitIdentical) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    PipelineParams p = random_params(seed);
    p.output_standardize = seed % 2;
    const PipelineParams back = deserialize_params(serialize_params(p));
    for (auto g : kAllGroups) EXPECT_TRUE(bitwise_equal(back.group(g), p.group(g))) << to_string(g);
    EXPECT_EQ(back.output_standardize, p.output_standardize);
  }
}

TEST(Serialization, DefaultDocument) {
  const std::string text = serialize_params(default_params());
  EXPECT_NE(text.find("gamma: 2.2\n"), std::string::npos) << text;
  EXPECT_NE(text.find("schema: rawdrift.pipeline_params/1"), std::string::npos);
}

TEST(Serialization, RejectsInvalidDocuments) {
  const std::string good = serialize_params(default_params());
  auto replace = [&](const std::string& from, const std::string& to) {
    std::string s = good;
    s.replace(s.find(from), from.size(), to);
    return s;
  };
  EXPECT_EQ(code_of([&] { deserialize_params(replace("gamma: 2.2", "gamma: -1")); }), ErrorCode::Domain);
  EXPECT_EQ(code_of([&] { deserialize_params(replace("gamma: 2.2", "gamma: .nan")); }), ErrorCode::Schema);
  EXPECT_EQ(code_of([&] { deserialize_params(good + "extra: 1\n"); }), ErrorCode::Schema);
  EXPECT_EQ(code_of([&] { deserialize_params(replace("white_balance: [1, 1, 1]", "white_balance: [1, 1]")); }),
            ErrorCode::Schema);
  EXPECT_EQ(code_of([&] { deserialize_params(replace("pipeline_params/1", "pipeline_params/9")); }),
            ErrorCode::Schema);
}
