#include "rawdrift/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rawdrift/error.hpp"

namespace rawdrift::ops {
namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::Shape, std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                               " vs " + shape_string(b.shape()));
  }
}

void require_scalar(Var s, const char* op) {
  if (s.value().size() != 1) {
    fail(ErrorCode::Shape, std::string(op) + ": expected a single-element operand, got " +
                               shape_string(s.shape()));
  }
}

Tensor like(const Tensor& t) { return Tensor(t.shape(), t.dtype()); }

// (N, C, H, W) view of a C×H×W or N×C×H×W shape.
struct Planes {
  std::size_t n, c, h, w;
  std::size_t plane() const { return h * w; }
};

Planes planes_of(const Shape& s, const char* op) {
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3]};
  fail(ErrorCode::Shape, std::string(op) + ": expected C×H×W or N×C×H×W, got " + shape_string(s));
}

// (N, H, W) view of an H×W or N×H×W mosaic.
Planes mosaic_of(const Shape& s, const char* op) {
  if (s.size() == 2) return {1, 1, s[0], s[1]};
  if (s.size() == 3) return {s[0], 1, s[1], s[2]};
  fail(ErrorCode::Shape, std::string(op) + ": expected H×W or N×H×W, got " + shape_string(s));
}

// Source index for padded coordinate p in [0, n + 2r), or -1 for zero padding.
std::vector<std::ptrdiff_t> pad_map(std::size_t n, std::size_t r, Padding padding) {
  std::vector<std::ptrdiff_t> map(n + 2 * r);
  const auto sn = static_cast<std::ptrdiff_t>(n);
  for (std::size_t p = 0; p < map.size(); ++p) {
    std::ptrdiff_t i = static_cast<std::ptrdiff_t>(p) - static_cast<std::ptrdiff_t>(r);
    if (i < 0 || i >= sn) {
      if (padding == Padding::Zero) {
        i = -1;
      } else {
        i = i < 0 ? -i : 2 * sn - 2 - i;
      }
    }
    map[p] = i;
  }
  return map;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record("add", std::move(out), {a, b},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           for (Tensor* t : gi) {
                             if (!t) continue;
                             for (std::size_t i = 0; i < g.size(); ++i) (*t)[i] += g[i];
                           }
                         });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape().record("sub", std::move(out), {a, b},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           if (gi[0]) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                           }
                           if (gi[1]) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] -= g[i];
                           }
                         });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().record("mul", std::move(out), {a, b},
                         [a, b](const Tensor& g, std::span<Tensor* const> gi) {
                           const Tensor& av = a.value();
                           const Tensor& bv = b.value();
                           if (gi[0]) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bv[i];
                           }
                           if (gi[1]) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * av[i];
                           }
                         });
}

Var add_scalar(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v += s;
  return a.tape().record("add_scalar", std::move(out), {a},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
                         });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= s;
  return a.tape().record("scale", std::move(out), {a},
                         [s](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += s * g[i];
                         });
}

Var mul_scalar(Var a, Var s) {
  require_scalar(s, "mul_scalar");
  const double sv = s.value()[0];
  Tensor out = a.value();
  for (auto& v : out.values()) v *= sv;
  return a.tape().record("mul_scalar", std::move(out), {a, s},
                         [a, s](const Tensor& g, std::span<Tensor* const> gi) {
                           const double sv = s.value()[0];
                           const Tensor& av = a.value();
                           if (gi[0]) {
                             for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += sv * g[i];
                           }
                           if (gi[1]) {
                             double acc = 0.0;
                             for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
                             (*gi[1])[0] += acc;
                           }
                         });
}

namespace {

void check_pow_domain(const Tensor& base, double p) {
  if (p == std::floor(p)) return;
  for (double v : base.values()) {
    if (v < 0.0) fail(ErrorCode::Domain, "pow: negative base with fractional exponent");
  }
}

// d(a^p)/da with the a == 0, p < 1 point (unbounded slope) mapped to zero.
double pow_slope(double a, double p) {
  if (a == 0.0 && p < 1.0) return 0.0;
  return p * std::pow(a, p - 1.0);
}

}  // namespace

Var pow(Var a, double exponent) {
  check_pow_domain(a.value(), exponent);
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::pow(v, exponent);
  return a.tape().record("pow", std::move(out), {a},
                         [a, exponent](const Tensor& g, std::span<Tensor* const> gi) {
                           const Tensor& av = a.value();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             (*gi[0])[i] += g[i] * pow_slope(av[i], exponent);
                           }
                         });
}

Var pow(Var a, Var exponent) {
  require_scalar(exponent, "pow");
  const double p = exponent.value()[0];
  check_pow_domain(a.value(), p);
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::pow(v, p);
  return a.tape().record(
      "pow", std::move(out), {a, exponent},
      [a, exponent](const Tensor& g, std::span<Tensor* const> gi) {
        const double p = exponent.value()[0];
        const Tensor& av = a.value();
        if (gi[0]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * pow_slope(av[i], p);
        }
        if (gi[1]) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (av[i] == 0.0) continue;
            const double clamped = std::max(av[i], 1e-12);
            acc += g[i] * std::pow(av[i], p) * std::log(clamped);
          }
          (*gi[1])[0] += acc;
        }
      });
}

Var reciprocal(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) {
    if (v == 0.0) fail(ErrorCode::Domain, "reciprocal of zero");
    v = 1.0 / v;
  }
  return a.tape().record("reciprocal", std::move(out), {a},
                         [a](const Tensor& g, std::span<Tensor* const> gi) {
                           const Tensor& av = a.value();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             (*gi[0])[i] -= g[i] / (av[i] * av[i]);
                           }
                         });
}

Var clip01(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return a.tape().record("clip01", std::move(out), {a},
                         [a](const Tensor& g, std::span<Tensor* const> gi) {
                           const Tensor& av = a.value();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (av[i] >= 0.0 && av[i] <= 1.0) (*gi[0])[i] += g[i];
                           }
                         });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::max(v, 0.0);
  return a.tape().record("relu", std::move(out), {a},
                         [a](const Tensor& g, std::span<Tensor* const> gi) {
                           const Tensor& av = a.value();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (av[i] > 0.0) (*gi[0])[i] += g[i];
                           }
                         });
}

Var elementwise(Var a, Elementwise op, Var operand) {
  switch (op) {
    case Elementwise::Add:
      return operand.value().size() == 1 && a.value().size() != 1
                 ? add(a, mul_scalar(a.tape().constant(Tensor::filled(a.shape(), 1.0)), operand))
                 : add(a, operand);
    case Elementwise::Sub:
      return sub(a, operand);
    case Elementwise::Mul:
      return operand.value().size() == 1 && a.value().size() != 1 ? mul_scalar(a, operand)
                                                                  : mul(a, operand);
    case Elementwise::Pow:
      return pow(a, operand);
    case Elementwise::Clip01:
      return clip01(a);
    case Elementwise::Scale:
      return mul_scalar(a, operand);
  }
  fail(ErrorCode::Config, "unknown elementwise op");
}

Var elementwise(Var a, Elementwise op, double operand) {
  switch (op) {
    case Elementwise::Add: return add_scalar(a, operand);
    case Elementwise::Sub: return add_scalar(a, -operand);
    case Elementwise::Mul:
    case Elementwise::Scale: return scale(a, operand);
    case Elementwise::Pow: return pow(a, operand);
    case Elementwise::Clip01: return clip01(a);
  }
  fail(ErrorCode::Config, "unknown elementwise op");
}

Var sum(Var a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  return a.tape().record("sum", Tensor::scalar(acc), {a},
                         [](const Tensor& g, std::span<Tensor* const> gi) {
                           for (auto& v : gi[0]->values()) v += g[0];
                         });
}

Var mean(Var a) {
  const auto n = static_cast<double>(a.value().size());
  double acc = 0.0;
  for (double v : a.value().values()) acc += v;
  return a.tape().record("mean", Tensor::scalar(n > 0 ? acc / n : 0.0), {a},
                         [n](const Tensor& g, std::span<Tensor* const> gi) {
                           for (auto& v : gi[0]->values()) v += g[0] / n;
                         });
}

Var sq_l2(Var a) {
  double acc = 0.0;
  for (double v : a.value().values()) acc += v * v;
  return a.tape().record("sq_l2", Tensor::scalar(acc), {a},
                         [a](const Tensor& g, std::span<Tensor* const> gi) {
                           const Tensor& av = a.value();
                           for (std::size_t i = 0; i < av.size(); ++i) (*gi[0])[i] += 2.0 * av[i] * g[0];
                         });
}

Var reduce(Var a, Reduce op) {
  switch (op) {
    case Reduce::Sum: return sum(a);
    case Reduce::Mean: return mean(a);
    case Reduce::SqL2: return sq_l2(a);
  }
  fail(ErrorCode::Config, "unknown reduction");
}

Var conv2d(Var input, Var kernel, Padding padding, bool per_channel) {
  const Planes p = planes_of(input.shape(), "conv2d");
  const Shape& ks = kernel.shape();
  std::size_t k = 0;
  if (per_channel) {
    if (ks.size() != 2 || ks[0] != ks[1]) {
      fail(ErrorCode::Shape, "conv2d: shared kernel must be k×k, got " + shape_string(ks));
    }
    k = ks[0];
  } else {
    if (ks.size() != 3 || ks[0] != p.c || ks[1] != ks[2]) {
      fail(ErrorCode::Shape, "conv2d: per-channel kernels must be C×k×k, got " + shape_string(ks));
    }
    k = ks[1];
  }
  if (k % 2 == 0) fail(ErrorCode::Config, "conv2d: kernel size must be odd, got " + std::to_string(k));
  const std::size_t r = k / 2;
  if (padding == Padding::Reflect && (p.h <= r || p.w <= r)) {
    fail(ErrorCode::Shape, "conv2d: image too small for reflect padding");
  }
  if (!kernel.value().all_finite()) fail(ErrorCode::NonFinite, "conv2d: non-finite kernel");

  const auto rows = pad_map(p.h, r, padding);
  const auto cols = pad_map(p.w, r, padding);
  const std::size_t pw = p.w + 2 * r;
  const std::size_t ph = p.h + 2 * r;

  auto kernel_of = [per_channel, k](const Tensor& kv, std::size_t c) {
    return kv.values().data() + (per_channel ? 0 : c * k * k);
  };
  auto pad_plane = [&](const double* src, std::vector<double>& dst) {
    dst.assign(ph * pw, 0.0);
    for (std::size_t y = 0; y < ph; ++y) {
      if (rows[y] < 0) continue;
      const double* row = src + static_cast<std::size_t>(rows[y]) * p.w;
      for (std::size_t x = 0; x < pw; ++x) {
        if (cols[x] >= 0) dst[y * pw + x] = row[cols[x]];
      }
    }
  };

  const Tensor& in = input.value();
  Tensor out = like(in);
  std::vector<double> padded;
  for (std::size_t n = 0; n < p.n; ++n) {
    for (std::size_t c = 0; c < p.c; ++c) {
      const std::size_t off = (n * p.c + c) * p.plane();
      pad_plane(in.values().data() + off, padded);
      const double* kv = kernel_of(kernel.value(), c);
      double* o = out.values().data() + off;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double w = kv[i * k + j];
          if (w == 0.0) continue;
          for (std::size_t y = 0; y < p.h; ++y) {
            const double* src = padded.data() + (y + i) * pw + j;
            double* dst = o + y * p.w;
            for (std::size_t x = 0; x < p.w; ++x) dst[x] += w * src[x];
          }
        }
      }
    }
  }

  return input.tape().record(
      "conv2d", std::move(out), {input, kernel},
      [=](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& in = input.value();
        const Tensor& kval = kernel.value();
        std::vector<double> padded;
        std::vector<double> gpad;
        for (std::size_t n = 0; n < p.n; ++n) {
          for (std::size_t c = 0; c < p.c; ++c) {
            const std::size_t off = (n * p.c + c) * p.plane();
            const double* go = g.values().data() + off;
            if (gi[1]) {
              padded.assign(ph * pw, 0.0);
              for (std::size_t y = 0; y < ph; ++y) {
                if (rows[y] < 0) continue;
                const double* row = in.values().data() + off + static_cast<std::size_t>(rows[y]) * p.w;
                for (std::size_t x = 0; x < pw; ++x) {
                  if (cols[x] >= 0) padded[y * pw + x] = row[cols[x]];
                }
              }
              double* gk = gi[1]->values().data() + (per_channel ? 0 : c * k * k);
              for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                  double acc = 0.0;
                  for (std::size_t y = 0; y < p.h; ++y) {
                    const double* src = padded.data() + (y + i) * pw + j;
                    const double* gy = go + y * p.w;
                    for (std::size_t x = 0; x < p.w; ++x) acc += gy[x] * src[x];
                  }
                  gk[i * k + j] += acc;
                }
              }
            }
            if (gi[0]) {
              gpad.assign(ph * pw, 0.0);
              const double* kv = kval.values().data() + (per_channel ? 0 : c * k * k);
              for (std::size_t i = 0; i < k; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                  const double w = kv[i * k + j];
                  if (w == 0.0) continue;
                  for (std::size_t y = 0; y < p.h; ++y) {
                    double* dst = gpad.data() + (y + i) * pw + j;
                    const double* gy = go + y * p.w;
                    for (std::size_t x = 0; x < p.w; ++x) dst[x] += w * gy[x];
                  }
                }
              }
              double* gin = gi[0]->values().data() + off;
              for (std::size_t y = 0; y < ph; ++y) {
                if (rows[y] < 0) continue;
                double* row = gin + static_cast<std::size_t>(rows[y]) * p.w;
                for (std::size_t x = 0; x < pw; ++x) {
                  if (cols[x] >= 0) row[cols[x]] += gpad[y * pw + x];
                }
              }
            }
          }
        }
      });
}

Var channel_affine(Var input, Var matrix) {
  const Planes p = planes_of(input.shape(), "channel_affine");
  if (p.c != 3 || matrix.shape() != Shape{3, 3}) {
    fail(ErrorCode::Shape, "channel_affine: needs 3 channels and a 3×3 matrix");
  }
  const Tensor& in = input.value();
  const Tensor& m = matrix.value();
  Tensor out = like(in);
  const std::size_t plane = p.plane();
  for (std::size_t n = 0; n < p.n; ++n) {
    const double* x = in.values().data() + n * 3 * plane;
    double* y = out.values().data() + n * 3 * plane;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        y[c * plane + i] = m[c * 3] * x[i] + m[c * 3 + 1] * x[plane + i] + m[c * 3 + 2] * x[2 * plane + i];
      }
    }
  }
  return input.tape().record(
      "channel_affine", std::move(out), {input, matrix},
      [input, matrix, p](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& in = input.value();
        const Tensor& m = matrix.value();
        const std::size_t plane = p.plane();
        for (std::size_t n = 0; n < p.n; ++n) {
          const double* x = in.values().data() + n * 3 * plane;
          const double* gy = g.values().data() + n * 3 * plane;
          if (gi[0]) {
            double* gx = gi[0]->values().data() + n * 3 * plane;
            for (std::size_t d = 0; d < 3; ++d) {
              for (std::size_t i = 0; i < plane; ++i) {
                gx[d * plane + i] += m[d] * gy[i] + m[3 + d] * gy[plane + i] + m[6 + d] * gy[2 * plane + i];
              }
            }
          }
          if (gi[1]) {
            for (std::size_t c = 0; c < 3; ++c) {
              for (std::size_t d = 0; d < 3; ++d) {
                double acc = 0.0;
                for (std::size_t i = 0; i < plane; ++i) acc += gy[c * plane + i] * x[d * plane + i];
                (*gi[1])[c * 3 + d] += acc;
              }
            }
          }
        }
      });
}

Var channel_scale(Var input, Var gains) {
  const Planes p = planes_of(input.shape(), "channel_scale");
  if (gains.value().size() != p.c) {
    fail(ErrorCode::Shape, "channel_scale: expected " + std::to_string(p.c) + " gains");
  }
  const Tensor& in = input.value();
  const Tensor& gv = gains.value();
  Tensor out = like(in);
  const std::size_t plane = p.plane();
  for (std::size_t n = 0; n < p.n; ++n) {
    for (std::size_t c = 0; c < p.c; ++c) {
      const std::size_t off = (n * p.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = gv[c] * in[off + i];
    }
  }
  return input.tape().record(
      "channel_scale", std::move(out), {input, gains},
      [input, gains, p](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& in = input.value();
        const Tensor& gv = gains.value();
        const std::size_t plane = p.plane();
        for (std::size_t n = 0; n < p.n; ++n) {
          for (std::size_t c = 0; c < p.c; ++c) {
            const std::size_t off = (n * p.c + c) * plane;
            if (gi[0]) {
              for (std::size_t i = 0; i < plane; ++i) (*gi[0])[off + i] += gv[c] * g[off + i];
            }
            if (gi[1]) {
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += g[off + i] * in[off + i];
              (*gi[1])[c] += acc;
            }
          }
        }
      });
}

Var bayer_split(Var raw, std::array<int, 4> site_channel) {
  const Planes p = mosaic_of(raw.shape(), "bayer_split");
  for (int ch : site_channel) {
    if (ch < 0 || ch > 2) fail(ErrorCode::Config, "bayer_split: channel index out of range");
  }
  const Tensor& in = raw.value();
  Shape shape = raw.shape().size() == 2 ? Shape{3, p.h, p.w} : Shape{p.n, 3, p.h, p.w};
  Tensor out(shape, in.dtype());
  const std::size_t plane = p.plane();
  for (std::size_t n = 0; n < p.n; ++n) {
    for (std::size_t y = 0; y < p.h; ++y) {
      for (std::size_t x = 0; x < p.w; ++x) {
        const auto ch = static_cast<std::size_t>(site_channel[2 * (y % 2) + x % 2]);
        out[(n * 3 + ch) * plane + y * p.w + x] = in[n * plane + y * p.w + x];
      }
    }
  }
  return raw.tape().record(
      "bayer_split", std::move(out), {raw},
      [p, site_channel](const Tensor& g, std::span<Tensor* const> gi) {
        const std::size_t plane = p.plane();
        for (std::size_t n = 0; n < p.n; ++n) {
          for (std::size_t y = 0; y < p.h; ++y) {
            for (std::size_t x = 0; x < p.w; ++x) {
              const auto ch = static_cast<std::size_t>(site_channel[2 * (y % 2) + x % 2]);
              (*gi[0])[n * plane + y * p.w + x] += g[(n * 3 + ch) * plane + y * p.w + x];
            }
          }
        }
      });
}

Var site_subtract(Var raw, Var offsets, std::array<int, 4> site_slot) {
  const Planes p = mosaic_of(raw.shape(), "site_subtract");
  if (offsets.value().size() != 4) fail(ErrorCode::Shape, "site_subtract: expected 4 offsets");
  for (int s : site_slot) {
    if (s < 0 || s > 3) fail(ErrorCode::Config, "site_subtract: slot index out of range");
  }
  const Tensor& ov = offsets.value();
  Tensor out = raw.value();
  for (std::size_t n = 0; n < p.n; ++n) {
    for (std::size_t y = 0; y < p.h; ++y) {
      double* row = out.values().data() + n * p.plane() + y * p.w;
      for (std::size_t x = 0; x < p.w; ++x) {
        row[x] -= ov[static_cast<std::size_t>(site_slot[2 * (y % 2) + x % 2])];
      }
    }
  }
  return raw.tape().record(
      "site_subtract", std::move(out), {raw, offsets},
      [p, site_slot](const Tensor& g, std::span<Tensor* const> gi) {
        if (gi[0]) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
        }
        if (gi[1]) {
          for (std::size_t n = 0; n < p.n; ++n) {
            for (std::size_t y = 0; y < p.h; ++y) {
              const double* row = g.values().data() + n * p.plane() + y * p.w;
              for (std::size_t x = 0; x < p.w; ++x) {
                (*gi[1])[static_cast<std::size_t>(site_slot[2 * (y % 2) + x % 2])] -= row[x];
              }
            }
          }
        }
      });
}

Var channel_standardize(Var input, double eps) {
  const Planes p = planes_of(input.shape(), "channel_standardize");
  const Tensor& in = input.value();
  const std::size_t plane = p.plane();
  const auto count = static_cast<double>(p.n * plane);
  std::vector<double> mu(p.c, 0.0);
  std::vector<double> sd(p.c, 0.0);
  for (std::size_t c = 0; c < p.c; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < p.n; ++n) {
      const double* x = in.values().data() + (n * p.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += x[i];
    }
    mu[c] = acc / count;
    double var = 0.0;
    for (std::size_t n = 0; n < p.n; ++n) {
      const double* x = in.values().data() + (n * p.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) var += (x[i] - mu[c]) * (x[i] - mu[c]);
    }
    sd[c] = std::sqrt(var / count);
  }
  Tensor out = like(in);
  for (std::size_t n = 0; n < p.n; ++n) {
    for (std::size_t c = 0; c < p.c; ++c) {
      const std::size_t off = (n * p.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[off + i] = (in[off + i] - mu[c]) / (sd[c] + eps);
    }
  }
  return input.tape().record(
      "channel_standardize", std::move(out), {input},
      [input, p, mu, sd, eps, count](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& in = input.value();
        const std::size_t plane = p.plane();
        for (std::size_t c = 0; c < p.c; ++c) {
          double gsum = 0.0;
          double gd = 0.0;
          for (std::size_t n = 0; n < p.n; ++n) {
            const std::size_t off = (n * p.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              gsum += g[off + i];
              gd += g[off + i] * (in[off + i] - mu[c]);
            }
          }
          const double denom = sd[c] + eps;
          const double gmean = gsum / count;
          const double coupling = sd[c] > 0.0 ? gd / (count * sd[c] * denom * denom) : 0.0;
          for (std::size_t n = 0; n < p.n; ++n) {
            const std::size_t off = (n * p.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double d = in[off + i] - mu[c];
              (*gi[0])[off + i] += (g[off + i] - gmean) / denom - d * coupling;
            }
          }
        }
      });
}

Var conv2d_dense(Var input, Var weight, Var bias) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.size() != 4 || ws.size() != 4 || ws[1] != is[1] || ws[2] != ws[3] ||
      bias.value().size() != ws[0]) {
    fail(ErrorCode::Shape, "conv2d_dense: input " + shape_string(is) + ", weight " +
                               shape_string(ws) + ", bias " + shape_string(bias.shape()));
  }
  const std::size_t k = ws[2];
  if (k % 2 == 0) fail(ErrorCode::Config, "conv2d_dense: kernel size must be odd");
  const std::size_t N = is[0], Ci = is[1], H = is[2], W = is[3], Co = ws[0];
  const std::size_t r = k / 2;
  const std::size_t plane = H * W;

  const Tensor& in = input.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  Tensor out(Shape{N, Co, H, W}, in.dtype());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Co; ++co) {
      double* o = out.values().data() + (n * Co + co) * plane;
      std::fill(o, o + plane, bv[co]);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        const double* x = in.values().data() + (n * Ci + ci) * plane;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double w = wv[((co * Ci + ci) * k + ky) * k + kx];
            const std::size_t x_lo = kx < r ? r - kx : 0;
            const std::size_t x_hi = std::min(W, W + r - kx);
            for (std::size_t y = 0; y < H; ++y) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(r);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              const double* src = x + static_cast<std::size_t>(iy) * W + kx - r;
              double* dst = o + y * W;
              for (std::size_t xx = x_lo; xx < x_hi; ++xx) dst[xx] += w * src[xx];
            }
          }
        }
      }
    }
  }
  return input.tape().record(
      "conv2d_dense", std::move(out), {input, weight, bias},
      [=](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& in = input.value();
        const Tensor& wv = weight.value();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t co = 0; co < Co; ++co) {
            const double* go = g.values().data() + (n * Co + co) * plane;
            if (gi[2]) {
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += go[i];
              (*gi[2])[co] += acc;
            }
            for (std::size_t ci = 0; ci < Ci; ++ci) {
              const double* x = in.values().data() + (n * Ci + ci) * plane;
              double* gx = gi[0] ? gi[0]->values().data() + (n * Ci + ci) * plane : nullptr;
              for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::size_t widx = ((co * Ci + ci) * k + ky) * k + kx;
                  const double w = wv[widx];
                  const std::size_t x_lo = kx < r ? r - kx : 0;
                  const std::size_t x_hi = std::min(W, W + r - kx);
                  double acc = 0.0;
                  for (std::size_t y = 0; y < H; ++y) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(r);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    const std::size_t base = static_cast<std::size_t>(iy) * W + kx - r;
                    const double* gy = go + y * W;
                    if (gi[1]) {
                      const double* src = x + base;
                      for (std::size_t xx = x_lo; xx < x_hi; ++xx) acc += gy[xx] * src[xx];
                    }
                    if (gx) {
                      double* dst = gx + base;
                      for (std::size_t xx = x_lo; xx < x_hi; ++xx) dst[xx] += w * gy[xx];
                    }
                  }
                  if (gi[1]) (*gi[1])[widx] += acc;
                }
              }
            }
          }
        }
      });
}

Var max_pool2(Var input) {
  const Planes p = planes_of(input.shape(), "max_pool2");
  if (p.h % 2 || p.w % 2) fail(ErrorCode::Shape, "max_pool2: spatial size must be even");
  const std::size_t oh = p.h / 2, ow = p.w / 2;
  const Tensor& in = input.value();
  Shape shape = input.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  Tensor out(shape, in.dtype());
  std::vector<std::uint32_t> argmax(out.size());
  for (std::size_t pl = 0; pl < p.n * p.c; ++pl) {
    const double* x = in.values().data() + pl * p.plane();
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (2 * y) * p.w + 2 * xx;
        for (std::size_t cand : {best + 1, best + p.w, best + p.w + 1}) {
          if (x[cand] > x[best]) best = cand;
        }
        const std::size_t o = pl * oh * ow + y * ow + xx;
        out[o] = x[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return input.tape().record(
      "max_pool2", std::move(out), {input},
      [p, oh, ow, argmax = std::move(argmax)](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t pl = 0; pl < p.n * p.c; ++pl) {
          double* gx = gi[0]->values().data() + pl * p.plane();
          for (std::size_t i = 0; i < oh * ow; ++i) gx[argmax[pl * oh * ow + i]] += g[pl * oh * ow + i];
        }
      });
}

Var global_avg_pool(Var input) {
  const Planes p = planes_of(input.shape(), "global_avg_pool");
  const Tensor& in = input.value();
  Tensor out(Shape{p.n, p.c}, in.dtype());
  const auto plane = static_cast<double>(p.plane());
  for (std::size_t pl = 0; pl < p.n * p.c; ++pl) {
    double acc = 0.0;
    const double* x = in.values().data() + pl * p.plane();
    for (std::size_t i = 0; i < p.plane(); ++i) acc += x[i];
    out[pl] = acc / plane;
  }
  return input.tape().record("global_avg_pool", std::move(out), {input},
                             [p, plane](const Tensor& g, std::span<Tensor* const> gi) {
                               for (std::size_t pl = 0; pl < p.n * p.c; ++pl) {
                                 double* gx = gi[0]->values().data() + pl * p.plane();
                                 for (std::size_t i = 0; i < p.plane(); ++i) gx[i] += g[pl] / plane;
                               }
                             });
}

Var linear(Var input, Var weight, Var bias) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (is.size() != 2 || ws.size() != 2 || ws[1] != is[1] || bias.value().size() != ws[0]) {
    fail(ErrorCode::Shape, "linear: input " + shape_string(is) + ", weight " + shape_string(ws));
  }
  const std::size_t N = is[0], F = is[1], K = ws[0];
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  Tensor out(Shape{N, K}, x.dtype());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t k = 0; k < K; ++k) {
      double acc = b[k];
      for (std::size_t f = 0; f < F; ++f) acc += w[k * F + f] * x[n * F + f];
      out[n * K + k] = acc;
    }
  }
  return input.tape().record(
      "linear", std::move(out), {input, weight, bias},
      [input, weight, N, F, K](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& x = input.value();
        const Tensor& w = weight.value();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t k = 0; k < K; ++k) {
            const double go = g[n * K + k];
            if (gi[2]) (*gi[2])[k] += go;
            for (std::size_t f = 0; f < F; ++f) {
              if (gi[0]) (*gi[0])[n * F + f] += go * w[k * F + f];
              if (gi[1]) (*gi[1])[k * F + f] += go * x[n * F + f];
            }
          }
        }
      });
}

Var upsample2(Var input) {
  const Planes p = planes_of(input.shape(), "upsample2");
  const std::size_t oh = 2 * p.h, ow = 2 * p.w;
  const Tensor& in = input.value();
  Shape shape = input.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  Tensor out(shape, in.dtype());
  for (std::size_t pl = 0; pl < p.n * p.c; ++pl) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        out[pl * oh * ow + y * ow + x] = in[pl * p.plane() + (y / 2) * p.w + x / 2];
      }
    }
  }
  return input.tape().record("upsample2", std::move(out), {input},
                             [p, oh, ow](const Tensor& g, std::span<Tensor* const> gi) {
                               for (std::size_t pl = 0; pl < p.n * p.c; ++pl) {
                                 for (std::size_t y = 0; y < oh; ++y) {
                                   for (std::size_t x = 0; x < ow; ++x) {
                                     (*gi[0])[pl * p.plane() + (y / 2) * p.w + x / 2] +=
                                         g[pl * oh * ow + y * ow + x];
                                   }
                                 }
                               }
                             });
}

Var concat_channels(Var a, Var b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3]) {
    fail(ErrorCode::Shape, "concat_channels: " + shape_string(as) + " vs " + shape_string(bs));
  }
  const std::size_t N = as[0], Ca = as[1], Cb = bs[1], plane = as[2] * as[3];
  Tensor out(Shape{N, Ca + Cb, as[2], as[3]}, a.value().dtype());
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.value().values().data() + n * Ca * plane, Ca * plane,
                out.values().data() + n * (Ca + Cb) * plane);
    std::copy_n(b.value().values().data() + n * Cb * plane, Cb * plane,
                out.values().data() + (n * (Ca + Cb) + Ca) * plane);
  }
  return a.tape().record("concat_channels", std::move(out), {a, b},
                         [N, Ca, Cb, plane](const Tensor& g, std::span<Tensor* const> gi) {
                           for (std::size_t n = 0; n < N; ++n) {
                             const double* src = g.values().data() + n * (Ca + Cb) * plane;
                             if (gi[0]) {
                               double* dst = gi[0]->values().data() + n * Ca * plane;
                               for (std::size_t i = 0; i < Ca * plane; ++i) dst[i] += src[i];
                             }
                             if (gi[1]) {
                               double* dst = gi[1]->values().data() + n * Cb * plane;
                               for (std::size_t i = 0; i < Cb * plane; ++i) dst[i] += src[Ca * plane + i];
                             }
                           }
                         });
}

Var reshape(Var input, Shape shape) {
  if (element_count(shape) != input.value().size()) {
    fail(ErrorCode::Shape, "reshape: " + shape_string(input.shape()) + " to " + shape_string(shape));
  }
  return input.tape().record("reshape", input.value().reshaped(std::move(shape)), {input},
                             [](const Tensor& g, std::span<Tensor* const> gi) {
                               auto dst = gi[0]->values();
                               for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
                             });
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.size() != 2 || s[0] != labels.size()) {
    fail(ErrorCode::Shape, "softmax_cross_entropy: logits " + shape_string(s) + " for " +
                               std::to_string(labels.size()) + " labels");
  }
  const std::size_t N = s[0], K = s[1];
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      fail(ErrorCode::Domain, "softmax_cross_entropy: target " + std::to_string(y) + " out of range");
    }
  }
  const Tensor& z = logits.value();
  Tensor probs(Shape{N, K});
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double* zr = z.values().data() + n * K;
    const double zmax = *std::max_element(zr, zr + K);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(zr[k] - zmax);
    for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(zr[k] - zmax) / denom;
    loss += -(zr[labels[n]] - zmax - std::log(denom));
  }
  loss /= static_cast<double>(N);
  std::vector<int> targets(labels.begin(), labels.end());
  return logits.tape().record(
      "softmax_cross_entropy", Tensor::scalar(loss), {logits},
      [probs = std::move(probs), targets = std::move(targets), N, K](const Tensor& g,
                                                                     std::span<Tensor* const> gi) {
        const double scale = g[0] / static_cast<double>(N);
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t k = 0; k < K; ++k) {
            const double onehot = static_cast<std::size_t>(targets[n]) == k ? 1.0 : 0.0;
            (*gi[0])[n * K + k] += scale * (probs[n * K + k] - onehot);
          }
        }
      });
}

Var bce_dice(Var logits, const Tensor& mask, double smooth) {
  if (logits.value().size() != mask.size()) {
    fail(ErrorCode::Shape, "bce_dice: logits " + shape_string(logits.shape()) + " vs mask " +
                               shape_string(mask.shape()));
  }
  for (double t : mask.values()) {
    if (t != 0.0 && t != 1.0) fail(ErrorCode::Domain, "bce_dice: mask values must be 0 or 1");
  }
  const Tensor& z = logits.value();
  const std::size_t M = z.size();
  std::vector<double> prob(M);
  double bce = 0.0, inter = 0.0, psum = 0.0, tsum = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    const double zi = z[i];
    prob[i] = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
    bce += std::max(zi, 0.0) - zi * mask[i] + std::log1p(std::exp(-std::abs(zi)));
    inter += prob[i] * mask[i];
    psum += prob[i];
    tsum += mask[i];
  }
  bce /= static_cast<double>(M);
  const double uni = psum + tsum + smooth;
  const double dice = (2.0 * inter + smooth) / uni;
  const double loss = bce + (1.0 - dice);
  return logits.tape().record(
      "bce_dice", Tensor::scalar(loss), {logits},
      [prob = std::move(prob), mask, M, inter, uni, smooth](const Tensor& g,
                                                            std::span<Tensor* const> gi) {
        const double num = 2.0 * inter + smooth;
        for (std::size_t i = 0; i < M; ++i) {
          const double dbce = (prob[i] - mask[i]) / static_cast<double>(M);
          const double ddice_dp = (2.0 * mask[i] * uni - num) / (uni * uni);
          const double dp_dz = prob[i] * (1.0 - prob[i]);
          (*gi[0])[i] += g[0] * (dbce - ddice_dp * dp_dz);
        }
      });
}

}  // namespace rawdrift::ops
