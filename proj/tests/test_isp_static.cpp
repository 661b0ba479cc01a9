#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "rawdrift/error.hpp"
#include "rawdrift/isp_static.hpp"
#include "rawdrift/scenes.hpp"

using namespace rawdrift;
namespace k = rawdrift::constants;

namespace {

RawImage constant_raw(std::size_t h, std::size_t w, double c) { return RawImage{Tensor::filled({h, w}, c)}; }

RawImage random_raw(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t({h, w});
  for (auto& v : t.values()) v = u(rng);
  return RawImage{t};
}

RgbImage random_view(std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t({3, h, w});
  for (auto& v : t.values()) v = u(rng);
  return RgbImage{t, Stage::External};
}

// Straight 4-loop correlation with explicit mirror indexing.
double mirror_at(const double* plane, long h, long w, long y, long x) {
  y = y < 0 ? -y : (y >= h ? 2 * h - 2 - y : y);
  x = x < 0 ? -x : (x >= w ? 2 * w - 2 - x : x);
  return plane[y * w + x];
}

Tensor loop_filter(const Tensor& view, const double* kernel, long ks) {
  const long h = long(view.dim(1)), w = long(view.dim(2)), r = ks / 2;
  Tensor out(view.shape());
  for (long c = 0; c < 3; ++c) {
    const double* plane = view.values().data() + c * h * w;
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        double acc = 0;
        for (long a = 0; a < ks; ++a) {
          for (long b = 0; b < ks; ++b) acc += kernel[a * ks + b] * mirror_at(plane, h, w, y + a - r, x + b - r);
        }
        out[std::size_t(c * h * w + y * w + x)] = acc;
      }
    }
  }
  return out;
}

bool is_constant(const Tensor& t, std::size_t channel, double value, double tol) {
  const std::size_t n = t.size() / t.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(t[channel * n + i] - value) > tol) return false;
  }
  return true;
}

}  // namespace

TEST(Constants, YuvRoundTrip) {
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = 0;
      for (std::size_t j = 0; j < 3; ++j) acc += k::M_YUV_2_RGB[r * 3 + j] * k::M_RGB_2_YUV[j * 3 + c];
      EXPECT_NEAR(acc, r == c ? 1.0 : 0.0, 1e-5);
    }
  }
  const RgbImage v = random_view(6, 6, 3);
  EXPECT_LE(max_abs_diff(yuv_to_rgb(rgb_to_yuv(v)).data, v.data), 1e-5);
  EXPECT_EQ(max_abs_diff(rgb_to_yuv(RgbImage{Tensor({3, 2, 2})}).data, Tensor({3, 2, 2})), 0.0);
}

TEST(Constants, GrayHasNoChroma) {
  const RgbImage yuv = rgb_to_yuv(RgbImage{Tensor::filled({3, 2, 2}, 0.7)});
  EXPECT_TRUE(is_constant(yuv.data, 0, 0.7, 1e-12));
  EXPECT_TRUE(is_constant(yuv.data, 1, 0.0, 1e-7));
  EXPECT_TRUE(is_constant(yuv.data, 2, 0.0, 1e-7));
}

TEST(Constants, KernelSums) {
  double sharp = 0, blur = 0, g = 0, rb = 0;
  for (double v : k::K_SHARP) sharp += v;
  for (double v : k::K_BLUR) blur += v;
  for (double v : k::K_G) g += v;
  for (double v : k::K_RB) rb += v;
  EXPECT_EQ(sharp, 1.0);
  EXPECT_NEAR(blur, 1.0, 1e-3);
  EXPECT_NE(blur, 1.0);
  EXPECT_EQ(g, 2.0);
  EXPECT_EQ(rb, 4.0);
  EXPECT_EQ(k::K_BLUR[12], 6.1869e-01);
  EXPECT_EQ(k::K_SHARP[4], 5.0);
  EXPECT_EQ(k::DEFAULT_GAMMA, 2.2);
}

TEST(BlackLevel, Examples) {
  const Tensor raw = random_raw(4, 6, 1).data;
  EXPECT_TRUE(bitwise_equal(black_level(raw, {0, 0, 0, 0}), raw));
  const Tensor c = black_level(Tensor::filled({4, 4}, 0.5), {0.1, 0.1, 0.1, 0.1});
  for (double v : c.values()) EXPECT_DOUBLE_EQ(v, 0.4);
  EXPECT_EQ(black_level(Tensor::filled({2, 2}, 0.05), {0.1, 0.1, 0.1, 0.1})[0], 0.0);
}

TEST(BlackLevel, SiteAssignmentAndClamp) {
  const std::array<double, 4> bl = {0.1, 0.2, 0.3, 0.4};
  const Tensor raw = random_raw(6, 8, 2).data;
  const Tensor clamped = black_level(raw, bl, true);
  const Tensor free = black_level(raw, bl, false);
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      // bl1 (odd, odd), bl2 (even, odd), bl3 (odd, even), bl4 (even, even).
      const double off = y % 2 ? (x % 2 ? bl[0] : bl[2]) : (x % 2 ? bl[1] : bl[3]);
      const std::size_t i = y * 8 + x;
      EXPECT_EQ(free[i], raw[i] - off);
      EXPECT_EQ(clamped[i], std::max(raw[i] - off, 0.0));
    }
  }
}

TEST(Demosaic, BilinearConstant) {
  for (const auto& cfa : {CfaLayout::bggr(), CfaLayout::rggb(), CfaLayout::grbg(), CfaLayout::gbrg()}) {
    RawImage raw = constant_raw(6, 8, 0.3);
    raw.cfa = cfa;
    const RgbImage v = demosaic(raw, DemosaicAlgo::Bilinear);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_TRUE(is_constant(v.data, c, 0.3, 1e-15)) << cfa.name();
  }
}

TEST(Demosaic, SwappedKernelAssignmentBreaksConstants) {
  // Cross kernel on R/B and full kernel on G, evaluated by hand at a G site of
  // a constant mosaic: G would come out doubled.
  double g_full = 0;
  for (std::size_t i = 0; i < 9; ++i) {
    const std::size_t y = i / 3, x = i % 3;
    const bool g_site = (y + x) % 2 == 0;  // centre is a G site
    g_full += g_site ? k::K_RB[i] : 0.0;
  }
  EXPECT_EQ(g_full, 2.0);
}

TEST(Demosaic, BilinearMatchesSparsePlaneOracle) {
  const RawImage raw = random_raw(8, 10, 4);
  const RgbImage v = demosaic(raw, DemosaicAlgo::Bilinear);
  Tensor sparse({3, 8, 10});
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 10; ++x) sparse[std::size_t(raw.cfa.at(y, x)) * 80 + y * 10 + x] = raw.data[y * 10 + x];
  }
  const Tensor rb = loop_filter(sparse, k::K_RB.data(), 3);
  const Tensor g = loop_filter(sparse, k::K_G.data(), 3);
  for (std::size_t i = 0; i < 80; ++i) {
    EXPECT_NEAR(v.data[i], rb[i], 1e-15);
    EXPECT_NEAR(v.data[80 + i], g[80 + i], 1e-15);
    EXPECT_NEAR(v.data[160 + i], rb[160 + i], 1e-15);
  }
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 10; ++x) {
      EXPECT_EQ(v.data[std::size_t(raw.cfa.at(y, x)) * 80 + y * 10 + x], raw.data[y * 10 + x]);
    }
  }
}

TEST(Demosaic, AllAlgorithmsPreserveConstants) {
  for (auto algo : {DemosaicAlgo::Malvar2004, DemosaicAlgo::Menon2007}) {
    const RgbImage v = demosaic(constant_raw(10, 12, 0.5), algo);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_TRUE(is_constant(v.data, c, 0.5, 1e-12));
  }
}

TEST(Demosaic, MalvarBeatsBilinearOnSmoothScene) {
  const std::size_t n = 48;
  Tensor truth({3, n, n});
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double g = 0.5 + 0.3 * std::sin(0.35 * x) * std::cos(0.27 * y);
      for (std::size_t c = 0; c < 3; ++c) truth[c * n * n + y * n + x] = g;
    }
  }
  const RawImage raw = mosaic(RgbImage{truth}, CfaLayout::bggr());
  auto interior_error = [&](DemosaicAlgo algo) {
    const Tensor v = demosaic(raw, algo).data;
    double acc = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 4; y < n - 4; ++y) {
        for (std::size_t x = 4; x < n - 4; ++x) {
          const double d = v[c * n * n + y * n + x] - truth[c * n * n + y * n + x];
          acc += d * d;
        }
      }
    }
    return acc;
  };
  const double bi = interior_error(DemosaicAlgo::Bilinear);
  EXPECT_LT(interior_error(DemosaicAlgo::Malvar2004), bi);
  EXPECT_LT(interior_error(DemosaicAlgo::Menon2007), bi);
}

TEST(Demosaic, RejectsOddSides) {
  EXPECT_THROW(demosaic(RawImage{Tensor({3, 4})}, DemosaicAlgo::Bilinear), Error);
  EXPECT_THROW(demosaic(RawImage{Tensor({4, 4})}, static_cast<DemosaicAlgo>(9)), Error);
}

TEST(WhiteBalance, Examples) {
  const RgbImage v = random_view(4, 4, 5);
  EXPECT_TRUE(bitwise_equal(white_balance(v, {1, 1, 1}).data, v.data));
  const Tensor out = white_balance(RgbImage{Tensor::filled({3, 1, 1}, 0.2)}, {2, 1, 0.5}).data;
  EXPECT_DOUBLE_EQ(out[0], 0.4);
  EXPECT_DOUBLE_EQ(out[1], 0.2);
  EXPECT_DOUBLE_EQ(out[2], 0.1);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  const std::array<double, 3> a = {u(rng), u(rng), u(rng)}, b = {u(rng), u(rng), u(rng)};
  EXPECT_LE(max_abs_diff(white_balance(white_balance(v, a), b).data,
                         white_balance(v, {a[0] * b[0], a[1] * b[1], a[2] * b[2]}).data),
            1e-15);
}

TEST(ColorCorrect, Examples) {
  const RgbImage v = random_view(4, 5, 7);
  EXPECT_TRUE(bitwise_equal(color_correct(v, k::DEFAULT_COLOUR_MATRIX).data, v.data));
  const Tensor swapped = color_correct(v, {0, 1, 0, 1, 0, 0, 0, 0, 1}).data;
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(swapped[i], v.data[20 + i]);
    EXPECT_EQ(swapped[20 + i], v.data[i]);
  }
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  std::array<double, 9> m;
  for (auto& e : m) e = nd(rng);
  const Tensor out = color_correct(v, m).data;
  for (std::size_t p = 0; p < 20; ++p) {
    for (std::size_t r = 0; r < 3; ++r) {
      double acc = 0;
      for (std::size_t c = 0; c < 3; ++c) acc += m[r * 3 + c] * v.data[c * 20 + p];
      EXPECT_EQ(out[r * 20 + p], acc);
    }
  }
}

TEST(Sharpen, ConstantsUnchanged) {
  const RgbImage c{Tensor::filled({3, 8, 8}, 0.37)};
  for (auto algo : {SharpenAlgo::SharpFilter, SharpenAlgo::UnsharpMask}) {
    const Tensor out = sharpen(c, algo).data;
    for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_TRUE(is_constant(out, ch, 0.37, 1e-15));
  }
}

TEST(Sharpen, ImpulseResponse) {
  Tensor t({3, 7, 7});
  t[3 * 7 + 3] = 1.0;
  const Tensor out = sharpen(RgbImage{t}, SharpenAlgo::SharpFilter).data;
  EXPECT_EQ(out[3 * 7 + 3], 5.0);
  EXPECT_EQ(out[2 * 7 + 3], -1.0);
  EXPECT_EQ(out[3 * 7 + 4], -1.0);
  EXPECT_EQ(out[2 * 7 + 2], 0.0);
  const RgbImage v = random_view(6, 7, 9);
  EXPECT_LE(max_abs_diff(sharpen(v, SharpenAlgo::SharpFilter).data, loop_filter(v.data, k::K_SHARP.data(), 3)), 1e-15);
}

TEST(Sharpen, UnsharpMaskMatchesDefinition) {
  const RgbImage v = random_view(12, 12, 10);
  std::vector<double> taps;
  double total = 0;
  for (int i = -4; i <= 4; ++i) {
    taps.push_back(std::exp(-0.5 * i * i));
    total += taps.back();
  }
  std::vector<double> kernel(81);
  for (std::size_t a = 0; a < 9; ++a) {
    for (std::size_t b = 0; b < 9; ++b) kernel[a * 9 + b] = taps[a] * taps[b] / (total * total);
  }
  const Tensor blurred = loop_filter(v.data, kernel.data(), 9);
  const Tensor out = sharpen(v, SharpenAlgo::UnsharpMask).data;
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], 2 * v.data[i] - blurred[i], 1e-12);
}

TEST(Denoise, Examples) {
  const RgbImage c{Tensor::filled({3, 6, 6}, 0.8)};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    EXPECT_TRUE(is_constant(denoise(c, DenoiseAlgo::Median).data, ch, 0.8, 0.0));
    EXPECT_TRUE(is_constant(denoise(c, DenoiseAlgo::Gaussian).data, ch, 0.8, 1e-3));
  }
  Tensor impulse({3, 5, 5});
  impulse[12] = 1.0;
  EXPECT_EQ(denoise(RgbImage{impulse}, DenoiseAlgo::Median).data[12], 0.0);
  const RgbImage v = random_view(7, 9, 11);
  EXPECT_LE(max_abs_diff(denoise(v, DenoiseAlgo::Gaussian).data, loop_filter(v.data, k::K_BLUR.data(), 5)), 1e-15);
}

TEST(Gamma, Examples) {
  const Tensor t = Tensor::from({3, 1, 1}, {-0.5, 0.3, 4.0});
  const Tensor clip_only = gamma_correct(RgbImage{t}, 1.0).data;
  EXPECT_EQ(clip_only[0], 0.0);
  EXPECT_EQ(clip_only[1], 0.3);
  EXPECT_EQ(clip_only[2], 1.0);
  const Tensor g2 = gamma_correct(RgbImage{Tensor::from({3, 1, 1}, {0.25, 4.0, 0.0})}, 2.0).data;
  EXPECT_EQ(g2[0], 0.5);
  EXPECT_EQ(g2[1], 1.0);
  EXPECT_EQ(g2[2], 0.0);
  EXPECT_THROW(gamma_correct(RgbImage{t}, 0.0), Error);
  EXPECT_THROW(gamma_correct(RgbImage{t}, -2.0), Error);
}

TEST(Configs, Enumeration) {
  const auto configs = enumerate_configs();
  ASSERT_EQ(configs.size(), 12u);
  std::set<std::string> names;
  for (const auto& c : configs) names.insert(c.abbreviation());
  EXPECT_EQ(names.size(), 12u);
  EXPECT_TRUE(names.count("bi,s,me"));
  EXPECT_TRUE(names.count("ma,u,ga"));
  EXPECT_TRUE(names.count("me,u,me"));
  const auto c = StaticConfig::from_abbreviation("me,u,ga");
  EXPECT_EQ(c.demosaic, DemosaicAlgo::Menon2007);
  EXPECT_EQ(c.sharpen, SharpenAlgo::UnsharpMask);
  EXPECT_EQ(c.denoise, DenoiseAlgo::Gaussian);
  EXPECT_THROW(StaticConfig::from_abbreviation("bi,x,ga"), Error);
}

TEST(Pipeline, ConstantRawDefaultConfig) {
  const RgbImage out = process_static(constant_raw(8, 8, 0.5), StaticConfig{});
  // The listed blur kernel sums to 0.99997, so Y shrinks by that factor.
  for (std::size_t c = 0; c < 3; ++c) EXPECT_TRUE(is_constant(out.data, c, std::pow(0.5, 1 / 2.2), 1e-4));
  StaticConfig median = StaticConfig::from_abbreviation("bi,s,me");
  const RgbImage exact = process_static(constant_raw(8, 8, 0.5), median);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_TRUE(is_constant(exact.data, c, std::pow(0.5, 1 / 2.2), 1e-12));
}

TEST(Pipeline, StageTraceOrder) {
  const auto trace = process_static_stages(random_raw(8, 8, 12), StaticConfig{});
  ASSERT_EQ(trace.size(), 8u);
  const Stage order[] = {Stage::BlackLevel, Stage::Demosaic, Stage::WhiteBalance, Stage::ColorCorrect,
                         Stage::Yuv,        Stage::Sharpen,  Stage::Denoise,      Stage::Gamma};
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(trace[i].stage, order[i]);
}

TEST(Pipeline, OutputRangeAndDistinctConfigs) {
  SceneSpec spec{SceneKind::Disks, 21, 32};
  const RawImage raw = synth_scene(spec);
  std::vector<Tensor> outs;
  for (auto c : enumerate_configs()) {
    c.wb = {1.8, 1.0, 1.4};
    const Tensor out = process_static(raw, c).data;
    for (double v : out.values()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    outs.push_back(out);
  }
  for (std::size_t i = 0; i < outs.size(); ++i) {
    for (std::size_t j = i + 1; j < outs.size(); ++j) EXPECT_GT(max_abs_diff(outs[i], outs[j]), 0.0) << i << "," << j;
  }
}

TEST(Pipeline, SharpenDenoiseOrderMatters) {
  const RgbImage yuv = rgb_to_yuv(demosaic(random_raw(12, 12, 13), DemosaicAlgo::Bilinear));
  const Tensor a = denoise(sharpen(yuv, SharpenAlgo::SharpFilter), DenoiseAlgo::Median).data;
  const Tensor b = sharpen(denoise(yuv, DenoiseAlgo::Median), SharpenAlgo::SharpFilter).data;
  EXPECT_GT(max_abs_diff(a, b), 1e-3);
}
