#include "rawdrift/isp_static.hpp"

#include <algorithm>
#include <cmath>

#include "rawdrift/error.hpp"

namespace rawdrift {

namespace {

long reflect(long i, long n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

void check_view(const RgbImage& view) {
  if (view.data.rank() != 3 || view.data.dim(0) != 3) {
    fail(ErrorCode::Shape, "expected a 3xHxW view, got " + shape_string(view.data.shape()));
  }
}

RgbImage per_pixel_matrix(const RgbImage& view, const std::array<double, 9>& m, Stage stage) {
  check_view(view);
  const std::size_t n = view.height() * view.width();
  const double* in = view.data.values().data();
  Tensor out(view.data.shape());
  double* o = out.values().data();
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t r = 0; r < 3; ++r) {
      o[r * n + p] = m[3 * r] * in[p] + m[3 * r + 1] * in[n + p] + m[3 * r + 2] * in[2 * n + p];
    }
  }
  return {std::move(out), stage};
}

RgbImage per_plane(const RgbImage& view, const double* kernel, std::size_t k, Stage stage) {
  check_view(view);
  const std::size_t h = view.height(), w = view.width();
  Tensor out(view.data.shape());
  for (std::size_t c = 0; c < 3; ++c) {
    correlate_plane(view.data.values().data() + c * h * w, out.values().data() + c * h * w, h, w,
                    kernel, k);
  }
  return {std::move(out), stage};
}

std::vector<double> gaussian_kernel(double sigma) {
  const long radius = std::lround(4.0 * sigma);
  std::vector<double> taps;
  double total = 0;
  for (long i = -radius; i <= radius; ++i) {
    taps.push_back(std::exp(-0.5 * double(i * i) / (sigma * sigma)));
    total += taps.back();
  }
  for (auto& t : taps) t /= total;
  const std::size_t k = taps.size();
  std::vector<double> kernel(k * k);
  for (std::size_t y = 0; y < k; ++y) {
    for (std::size_t x = 0; x < k; ++x) kernel[y * k + x] = taps[y] * taps[x];
  }
  return kernel;
}

// Demosaicing helpers. Masks are 1 where the CFA samples the channel.
struct Masks {
  std::vector<char> r, g, b;
  std::vector<char> red_rows, blue_rows, red_cols, blue_cols;
};

Masks cfa_masks(const CfaLayout& cfa, std::size_t h, std::size_t w) {
  Masks m;
  m.r.resize(h * w);
  m.g.resize(h * w);
  m.b.resize(h * w);
  m.red_rows.assign(h, 0);
  m.blue_rows.assign(h, 0);
  m.red_cols.assign(w, 0);
  m.blue_cols.assign(w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const Channel c = cfa.at(y, x);
      m.r[y * w + x] = c == Channel::R;
      m.g[y * w + x] = c == Channel::G;
      m.b[y * w + x] = c == Channel::B;
      if (c == Channel::R) m.red_rows[y] = m.red_cols[x] = 1;
      if (c == Channel::B) m.blue_rows[y] = m.blue_cols[x] = 1;
    }
  }
  return m;
}

std::vector<double> correlate(const std::vector<double>& in, std::size_t h, std::size_t w,
                              const std::vector<double>& kernel, std::size_t k) {
  std::vector<double> out(h * w);
  correlate_plane(in.data(), out.data(), h, w, kernel.data(), k);
  return out;
}

// 1-D correlation along rows (horizontal) or columns; symmetric kernels only,
// so correlation and convolution coincide.
std::vector<double> filter_1d(const std::vector<double>& in, std::size_t h, std::size_t w,
                              const std::vector<double>& taps, bool horizontal) {
  const long half = static_cast<long>(taps.size() / 2);
  std::vector<double> out(h * w);
  for (long y = 0; y < long(h); ++y) {
    for (long x = 0; x < long(w); ++x) {
      double acc = 0;
      for (long t = -half; t <= half; ++t) {
        const long yy = horizontal ? y : reflect(y + t, long(h));
        const long xx = horizontal ? reflect(x + t, long(w)) : x;
        acc += taps[std::size_t(t + half)] * in[std::size_t(yy) * w + std::size_t(xx)];
      }
      out[std::size_t(y) * w + std::size_t(x)] = acc;
    }
  }
  return out;
}

Tensor stack(const std::vector<double>& r, const std::vector<double>& g, const std::vector<double>& b,
             std::size_t h, std::size_t w) {
  Tensor out({3, h, w});
  auto v = out.values();
  std::copy(r.begin(), r.end(), v.begin());
  std::copy(g.begin(), g.end(), v.begin() + long(h * w));
  std::copy(b.begin(), b.end(), v.begin() + long(2 * h * w));
  return out;
}

Tensor bilinear(const RawImage& raw) {
  const std::size_t h = raw.height(), w = raw.width();
  std::array<std::vector<double>, 3> planes;
  for (auto& p : planes) p.assign(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      planes[static_cast<int>(raw.cfa.at(y, x))][y * w + x] = raw.data[y * w + x];
    }
  }
  const std::vector<double> kg(constants::K_G.begin(), constants::K_G.end());
  const std::vector<double> krb(constants::K_RB.begin(), constants::K_RB.end());
  return stack(correlate(planes[0], h, w, krb, 3), correlate(planes[1], h, w, kg, 3),
               correlate(planes[2], h, w, krb, 3), h, w);
}

Tensor malvar(const RawImage& raw) {
  const std::size_t h = raw.height(), w = raw.width();
  const Masks m = cfa_masks(raw.cfa, h, w);
  const std::vector<double> cfa(raw.data.values().begin(), raw.data.values().end());
  auto scaled = [](std::vector<double> k) {
    for (auto& v : k) v /= 8.0;
    return k;
  };
  const auto gr_gb = scaled({0, 0, -1, 0, 0, 0, 0, 2, 0, 0, -1, 2, 4, 2, -1, 0, 0, 2, 0, 0, 0, 0, -1, 0, 0});
  const auto rg_rbbr =
      scaled({0, 0, 0.5, 0, 0, 0, -1, 0, -1, 0, -1, 4, 5, 4, -1, 0, -1, 0, -1, 0, 0, 0, 0.5, 0, 0});
  std::vector<double> rg_brrb(25);
  for (std::size_t y = 0; y < 5; ++y) {
    for (std::size_t x = 0; x < 5; ++x) rg_brrb[y * 5 + x] = rg_rbbr[x * 5 + y];
  }
  const auto rb_bbrr =
      scaled({0, 0, -1.5, 0, 0, 0, 2, 0, 2, 0, -1.5, 0, 6, 0, -1.5, 0, 2, 0, 2, 0, 0, 0, -1.5, 0, 0});

  const auto g_interp = correlate(cfa, h, w, gr_gb, 5);
  const auto c_rbbr = correlate(cfa, h, w, rg_rbbr, 5);
  const auto c_brrb = correlate(cfa, h, w, rg_brrb, 5);
  const auto c_diag = correlate(cfa, h, w, rb_bbrr, 5);

  std::vector<double> r(h * w), g(h * w), b(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      r[i] = m.r[i] ? cfa[i] : 0.0;
      g[i] = m.g[i] ? cfa[i] : g_interp[i];
      b[i] = m.b[i] ? cfa[i] : 0.0;
      const bool rr = m.red_rows[y], br = m.blue_rows[y], rc = m.red_cols[x], bc = m.blue_cols[x];
      if (rr && bc) r[i] = c_rbbr[i];
      if (br && rc) r[i] = c_brrb[i];
      if (br && rc) b[i] = c_rbbr[i];
      if (rr && bc) b[i] = c_brrb[i];
      if (br && bc) r[i] = c_diag[i];
      if (rr && rc) b[i] = c_diag[i];
    }
  }
  return stack(r, g, b, h, w);
}

// Directional interpolation with a decision step; the optional refinement is
// not applied.
Tensor menon(const RawImage& raw) {
  const std::size_t h = raw.height(), w = raw.width(), n = h * w;
  const Masks m = cfa_masks(raw.cfa, h, w);
  const std::vector<double> cfa(raw.data.values().begin(), raw.data.values().end());
  const std::vector<double> h0 = {0, 0.5, 0, 0.5, 0}, h1 = {-0.25, 0, 0.5, 0, -0.25};

  const auto h0x = filter_1d(cfa, h, w, h0, true), h1x = filter_1d(cfa, h, w, h1, true);
  const auto h0y = filter_1d(cfa, h, w, h0, false), h1y = filter_1d(cfa, h, w, h1, false);
  std::vector<double> r(n), g(n), b(n), gh(n), gv(n), ch(n), cv(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = m.r[i] ? cfa[i] : 0.0;
    g[i] = m.g[i] ? cfa[i] : 0.0;
    b[i] = m.b[i] ? cfa[i] : 0.0;
    gh[i] = m.g[i] ? g[i] : h0x[i] + h1x[i];
    gv[i] = m.g[i] ? g[i] : h0y[i] + h1y[i];
    ch[i] = m.r[i] ? r[i] - gh[i] : m.b[i] ? b[i] - gh[i] : 0.0;
    cv[i] = m.r[i] ? r[i] - gv[i] : m.b[i] ? b[i] - gv[i] : 0.0;
  }

  std::vector<double> dh(n), dv(n);
  for (long y = 0; y < long(h); ++y) {
    for (long x = 0; x < long(w); ++x) {
      const std::size_t i = std::size_t(y) * w + std::size_t(x);
      dh[i] = std::abs(ch[i] - ch[std::size_t(y) * w + std::size_t(reflect(x + 2, long(w)))]);
      dv[i] = std::abs(cv[i] - cv[std::size_t(reflect(y + 2, long(h))) * w + std::size_t(x)]);
    }
  }

  // Classifier: true convolution with zero padding, so taps are read flipped.
  static constexpr double k[5][5] = {
      {0, 0, 1, 0, 1}, {0, 0, 0, 1, 0}, {0, 0, 3, 0, 3}, {0, 0, 0, 1, 0}, {0, 0, 1, 0, 1}};
  std::vector<char> use_h(n);
  for (long y = 0; y < long(h); ++y) {
    for (long x = 0; x < long(w); ++x) {
      double sh = 0, sv = 0;
      for (long a = 0; a < 5; ++a) {
        for (long c = 0; c < 5; ++c) {
          const long yy = y + 2 - a, xx = x + 2 - c;
          if (yy < 0 || yy >= long(h) || xx < 0 || xx >= long(w)) continue;
          const std::size_t j = std::size_t(yy) * w + std::size_t(xx);
          sh += k[a][c] * dh[j];
          sv += k[c][a] * dv[j];
        }
      }
      use_h[std::size_t(y) * w + std::size_t(x)] = sv >= sh;
    }
  }
  for (std::size_t i = 0; i < n; ++i) g[i] = use_h[i] ? gh[i] : gv[i];

  const std::vector<double> kb = {0.5, 0, 0.5};
  auto row_of = [w](std::size_t i) { return i / w; };
  {
    const auto rx = filter_1d(r, h, w, kb, true), ry = filter_1d(r, h, w, kb, false);
    const auto bx = filter_1d(b, h, w, kb, true), by = filter_1d(b, h, w, kb, false);
    const auto gx = filter_1d(g, h, w, kb, true), gy = filter_1d(g, h, w, kb, false);
    for (std::size_t i = 0; i < n; ++i) {
      if (!m.g[i]) continue;
      const bool rr = m.red_rows[row_of(i)], br = m.blue_rows[row_of(i)];
      if (rr) r[i] = g[i] + rx[i] - gx[i];
      if (br) r[i] = g[i] + ry[i] - gy[i];
      if (br) b[i] = g[i] + bx[i] - gx[i];
      if (rr) b[i] = g[i] + by[i] - gy[i];
    }
  }
  {
    const auto rx = filter_1d(r, h, w, kb, true), ry = filter_1d(r, h, w, kb, false);
    const auto bx = filter_1d(b, h, w, kb, true), by = filter_1d(b, h, w, kb, false);
    std::vector<double> r2 = r, b2 = b;
    for (std::size_t i = 0; i < n; ++i) {
      if (m.b[i]) r2[i] = use_h[i] ? b[i] + rx[i] - bx[i] : b[i] + ry[i] - by[i];
      if (m.r[i]) b2[i] = use_h[i] ? r[i] + bx[i] - rx[i] : r[i] + by[i] - ry[i];
    }
    r = std::move(r2);
    b = std::move(b2);
  }
  return stack(r, g, b, h, w);
}

}  // namespace

void correlate_plane(const double* in, double* out, std::size_t h, std::size_t w, const double* kernel,
                     std::size_t k) {
  const long half = long(k / 2);
  if (long(h) <= half || long(w) <= half) {
    fail(ErrorCode::Shape, "image too small for reflect padding with a " + std::to_string(k) + "x" +
                               std::to_string(k) + " kernel");
  }
  for (long y = 0; y < long(h); ++y) {
    for (long x = 0; x < long(w); ++x) {
      double acc = 0;
      for (long a = -half; a <= half; ++a) {
        const std::size_t row = std::size_t(reflect(y + a, long(h))) * w;
        for (long b = -half; b <= half; ++b) {
          acc += kernel[std::size_t(a + half) * k + std::size_t(b + half)] *
                 in[row + std::size_t(reflect(x + b, long(w)))];
        }
      }
      out[std::size_t(y) * w + std::size_t(x)] = acc;
    }
  }
}

std::string StaticConfig::abbreviation() const {
  static constexpr const char* dm[] = {"bi", "ma", "me"};
  static constexpr const char* sh[] = {"s", "u"};
  static constexpr const char* dn[] = {"ga", "me"};
  return std::string(dm[int(demosaic)]) + "," + sh[int(sharpen)] + "," + dn[int(denoise)];
}

StaticConfig StaticConfig::from_abbreviation(std::string_view abbreviation) {
  for (const auto& c : enumerate_configs()) {
    if (c.abbreviation() == abbreviation) return c;
  }
  fail(ErrorCode::Config, "unknown configuration '" + std::string(abbreviation) +
                              "' (expected e.g. bi,s,ga or ma,u,me)");
}

void StaticConfig::validate() const {
  if (!(gamma > 0) || !std::isfinite(gamma)) fail(ErrorCode::Config, "gamma must be a positive finite number");
  auto finite = [](const auto& a) { return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); }); };
  if (!finite(bl) || !finite(wb) || !finite(cc)) fail(ErrorCode::Config, "non-finite continuous parameter");
}

std::vector<StaticConfig> enumerate_configs() {
  std::vector<StaticConfig> out;
  for (auto dm : {DemosaicAlgo::Bilinear, DemosaicAlgo::Malvar2004, DemosaicAlgo::Menon2007}) {
    for (auto sh : {SharpenAlgo::SharpFilter, SharpenAlgo::UnsharpMask}) {
      for (auto dn : {DenoiseAlgo::Median, DenoiseAlgo::Gaussian}) {
        StaticConfig c;
        c.demosaic = dm;
        c.sharpen = sh;
        c.denoise = dn;
        out.push_back(c);
      }
    }
  }
  return out;
}

Tensor black_level(const Tensor& raw, const std::array<double, 4>& bl, bool clamp) {
  if (raw.rank() != 2) fail(ErrorCode::Shape, "black_level expects an HxW raw plane");
  const std::size_t h = raw.dim(0), w = raw.dim(1);
  Tensor out(raw.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double v = raw[y * w + x] - bl[constants::BLACK_LEVEL_SLOT[2 * (y % 2) + x % 2]];
      out[y * w + x] = clamp ? std::max(v, 0.0) : v;
    }
  }
  return out;
}

RgbImage demosaic(const RawImage& raw, DemosaicAlgo algo) {
  if (raw.data.rank() != 2 || raw.height() % 2 || raw.width() % 2) {
    fail(ErrorCode::Shape, "demosaic expects an HxW raw with even sides, got " + shape_string(raw.data.shape()));
  }
  switch (algo) {
    case DemosaicAlgo::Bilinear: return {bilinear(raw), Stage::Demosaic};
    case DemosaicAlgo::Malvar2004: return {malvar(raw), Stage::Demosaic};
    case DemosaicAlgo::Menon2007: return {menon(raw), Stage::Demosaic};
  }
  fail(ErrorCode::Config, "unknown demosaic algorithm id " + std::to_string(int(algo)));
}

RgbImage white_balance(const RgbImage& view, const std::array<double, 3>& wb) {
  return per_pixel_matrix(view, {wb[0], 0, 0, 0, wb[1], 0, 0, 0, wb[2]}, Stage::WhiteBalance);
}

RgbImage color_correct(const RgbImage& view, const std::array<double, 9>& matrix) {
  return per_pixel_matrix(view, matrix, Stage::ColorCorrect);
}

RgbImage rgb_to_yuv(const RgbImage& view) { return per_pixel_matrix(view, constants::M_RGB_2_YUV, Stage::Yuv); }

RgbImage yuv_to_rgb(const RgbImage& view) {
  return per_pixel_matrix(view, constants::M_YUV_2_RGB, Stage::Denoise);
}

RgbImage sharpen(const RgbImage& view, SharpenAlgo algo) {
  if (algo == SharpenAlgo::SharpFilter) return per_plane(view, constants::K_SHARP.data(), 3, Stage::Sharpen);
  static const std::vector<double> blur = gaussian_kernel(constants::UNSHARP_SIGMA);
  const std::size_t k = std::size_t(std::lround(std::sqrt(double(blur.size()))));
  RgbImage blurred = per_plane(view, blur.data(), k, Stage::Sharpen);
  auto b = blurred.data.values();
  const auto v = view.data.values();
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = v[i] + constants::UNSHARP_AMOUNT * (v[i] - b[i]);
  return blurred;
}

RgbImage denoise(const RgbImage& view, DenoiseAlgo algo) {
  if (algo == DenoiseAlgo::Gaussian) return per_plane(view, constants::K_BLUR.data(), 5, Stage::Denoise);
  check_view(view);
  const long h = long(view.height()), w = long(view.width());
  if (h < 2 || w < 2) fail(ErrorCode::Shape, "median filter needs at least 2x2 pixels");
  Tensor out(view.data.shape());
  std::array<double, 9> window;
  for (long c = 0; c < 3; ++c) {
    const double* in = view.data.values().data() + c * h * w;
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        std::size_t k = 0;
        for (long a = -1; a <= 1; ++a) {
          for (long b = -1; b <= 1; ++b) window[k++] = in[reflect(y + a, h) * w + reflect(x + b, w)];
        }
        std::nth_element(window.begin(), window.begin() + 4, window.end());
        out[std::size_t(c * h * w + y * w + x)] = window[4];
      }
    }
  }
  return {std::move(out), Stage::Denoise};
}

RgbImage gamma_correct(const RgbImage& view, double gamma) {
  if (!(gamma > 0)) fail(ErrorCode::Config, "gamma must be positive");
  Tensor out = view.data;
  for (auto& v : out.values()) v = std::pow(std::clamp(v, 0.0, 1.0), 1.0 / gamma);
  return {std::move(out), Stage::Gamma};
}

std::vector<RgbImage> process_static_stages(const RawImage& raw, const StaticConfig& config) {
  config.validate();
  raw.validate();
  std::vector<RgbImage> trace;
  RawImage bl{black_level(raw.data, config.bl), raw.cfa, {}};
  trace.push_back({bl.data.reshaped({1, raw.height(), raw.width()}), Stage::BlackLevel});
  trace.push_back(demosaic(bl, config.demosaic));
  trace.push_back(white_balance(trace.back(), config.wb));
  trace.push_back(color_correct(trace.back(), config.cc));
  trace.push_back(rgb_to_yuv(trace.back()));
  trace.push_back(sharpen(trace.back(), config.sharpen));
  trace.push_back(yuv_to_rgb(denoise(trace.back(), config.denoise)));
  trace.push_back(gamma_correct(trace.back(), config.gamma));
  return trace;
}

RgbImage process_static(const RawImage& raw, const StaticConfig& config) {
  return process_static_stages(raw, config).back();
}

}  // namespace rawdrift
