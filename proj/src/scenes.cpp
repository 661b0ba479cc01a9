#include "rawdrift/scenes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "rawdrift/error.hpp"

namespace rawdrift {

SceneKind parse_scene_kind(std::string_view name) {
  if (name == "disks") return SceneKind::Disks;
  if (name == "stripes") return SceneKind::Stripes;
  if (name == "gradient") return SceneKind::Gradient;
  if (name == "noise-texture") return SceneKind::NoiseTexture;
  fail(ErrorCode::Config, "unknown scene kind '" + std::string(name) + "'");
}

const char* to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::Disks: return "disks";
    case SceneKind::Stripes: return "stripes";
    case SceneKind::Gradient: return "gradient";
    case SceneKind::NoiseTexture: return "noise-texture";
  }
  return "unknown";
}

DatasetKind parse_dataset_kind(std::string_view name) {
  if (name == "shapes") return DatasetKind::Shapes;
  if (name == "texture") return DatasetKind::Texture;
  if (name == "segmentation") return DatasetKind::Segmentation;
  fail(ErrorCode::Config, "unknown dataset kind '" + std::string(name) + "'");
}

const char* to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::Shapes: return "shapes";
    case DatasetKind::Texture: return "texture";
    case DatasetKind::Segmentation: return "segmentation";
  }
  return "unknown";
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

bool Disk::contains(std::size_t y, std::size_t x) const {
  const double dy = static_cast<double>(y) + 0.5 - cy;
  const double dx = static_cast<double>(x) + 0.5 - cx;
  return dx * dx + dy * dy <= radius * radius;
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::array<double, 3> colour(Rng& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

// Linear blend between two colours along a random direction.
void paint_background(Tensor& rgb, Rng& rng, double lo, double hi) {
  const std::size_t h = rgb.dim(1), w = rgb.dim(2);
  const auto c0 = colour(rng, lo, hi);
  const auto c1 = colour(rng, lo, hi);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double ux = std::cos(angle), uy = std::sin(angle);
  const double extent = std::abs(ux) * static_cast<double>(w) + std::abs(uy) * static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) - 0.5 * static_cast<double>(w);
      const double py = static_cast<double>(y) - 0.5 * static_cast<double>(h);
      const double t = std::clamp(0.5 + (px * ux + py * uy) / extent, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) rgb[(c * h + y) * w + x] = (1.0 - t) * c0[c] + t * c1[c];
    }
  }
}

}  // namespace

Scene render_scene(const SceneSpec& spec) {
  if (spec.size < 4 || spec.size % 2) fail(ErrorCode::Config, "scene size must be even and >= 4");
  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.kind)));
  const std::size_t n = spec.size;
  const double s = static_cast<double>(n);
  Tensor rgb(Shape{3, n, n});
  Tensor mask(Shape{n, n});
  Scene scene;

  switch (spec.kind) {
    case SceneKind::Disks: {
      paint_background(rgb, rng, 0.2, 0.45);
      const int count = std::uniform_int_distribution<int>(2, 4)(rng);
      for (int i = 0; i < count; ++i) {
        const double r = uniform(rng, s / 10.0, s / 5.0);
        Disk d{uniform(rng, r, s - r), uniform(rng, r, s - r), r};
        const auto c = colour(rng, 0.55, 0.9);
        for (std::size_t y = 0; y < n; ++y) {
          for (std::size_t x = 0; x < n; ++x) {
            if (!d.contains(y, x)) continue;
            for (std::size_t ch = 0; ch < 3; ++ch) rgb[(ch * n + y) * n + x] = c[ch];
            mask[y * n + x] = 1.0;
          }
        }
        scene.disks.push_back(d);
      }
      break;
    }
    case SceneKind::Stripes: {
      paint_background(rgb, rng, 0.2, 0.45);
      const double angle = uniform(rng, 0.0, std::numbers::pi);
      const double period = uniform(rng, s / 8.0, s / 4.0);
      const double phase = uniform(rng, 0.0, period);
      const auto c = colour(rng, 0.55, 0.9);
      const double ux = std::cos(angle), uy = std::sin(angle);
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          const double t = (static_cast<double>(x) + 0.5) * ux + (static_cast<double>(y) + 0.5) * uy + phase;
          if (std::fmod(std::fmod(t, period) + period, period) >= 0.5 * period) continue;
          for (std::size_t ch = 0; ch < 3; ++ch) rgb[(ch * n + y) * n + x] = c[ch];
        }
      }
      break;
    }
    case SceneKind::Gradient:
      paint_background(rgb, rng, 0.05, 0.95);
      break;
    case SceneKind::NoiseTexture:
      paint_background(rgb, rng, 0.3, 0.6);
      break;
  }

  scene.truth = RgbImage{rgb, Stage::External};
  RawImage raw = mosaic(scene.truth, spec.cfa);
  if (spec.kind == SceneKind::NoiseTexture) {
    const double a = spec.texture_amplitude;
    for (auto& v : raw.data.values()) v += uniform(rng, -a, a);
  }
  for (auto& v : raw.data.values()) {
    v = static_cast<double>(quantize16(v * spec.intensity_scale)) / 65535.0;
  }
  raw.label.class_id = spec.class_id;
  if (spec.with_mask) raw.label.mask = std::move(mask);
  scene.raw = std::move(raw);
  return scene;
}

RawImage synth_scene(const SceneSpec& spec) { return render_scene(spec).raw; }

std::vector<RawImage> synth_dataset(const DatasetSpec& spec) {
  std::vector<RawImage> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) {
    SceneSpec s;
    s.seed = mix_seed(spec.seed, i);
    s.size = spec.size;
    s.intensity_scale = spec.intensity_scale;
    s.cfa = spec.cfa;
    const int cls = static_cast<int>(i % 2);
    switch (spec.kind) {
      case DatasetKind::Shapes:
        s.kind = cls == 0 ? SceneKind::Disks : SceneKind::Stripes;
        s.class_id = cls;
        break;
      case DatasetKind::Texture:
        s.kind = SceneKind::NoiseTexture;
        s.texture_amplitude = cls == 0 ? spec.texture_low : spec.texture_high;
        s.class_id = cls;
        break;
      case DatasetKind::Segmentation:
        s.kind = SceneKind::Disks;
        s.with_mask = true;
        break;
    }
    out.push_back(synth_scene(s));
  }
  return out;
}

}  // namespace rawdrift
