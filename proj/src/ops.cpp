#include "crispdec/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "crispdec/check.hpp"

namespace crispdec {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using detail::Node;

// Gradient buffer of input i, or nullptr if that input is not tracked.
double* input_grad(Node& self, size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

const std::vector<double>& input_value(Node& self, size_t i) { return self.inputs[i]->value; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require_shape(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                            shape_to_string(a.shape()) + " vs " +
                                            shape_to_string(b.shape()));
}

void require_map(const Tensor& t, const char* op) {
  require_shape(t.defined() && t.rank() == 4,
                std::string(op) + ": expected an N x C x H x W tensor");
}

// Applies f pointwise and records df(x, y) as the local derivative.
template <typename F, typename DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  auto in = a.data();
  std::vector<double> out(in.size());
  for (size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return make_op_result(op, a.shape(), std::move(out), {a}, [df](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& x = input_value(self, 0);
    for (size_t i = 0; i < x.size(); ++i) gx[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

struct AxisSplit {
  int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, int axis) {
  int rank = static_cast<int>(shape.size());
  if (axis < 0) axis += rank;
  require_shape(axis >= 0 && axis < rank, "softmax: axis out of range");
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (int i = axis + 1; i < rank; ++i) s.inner *= shape[i];
  return s;
}

// Source index pair and blend factor for each output coordinate.
struct InterpAxis {
  std::vector<int64_t> i0, i1;
  std::vector<double> frac;
};

InterpAxis interp_axis(int64_t in, int64_t out) {
  InterpAxis ax;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int64_t lo = std::min<int64_t>(static_cast<int64_t>(std::floor(src)), in - 1);
    ax.i0[o] = lo;
    ax.i1[o] = std::min<int64_t>(lo + 1, in - 1);
    ax.frac[o] = src - static_cast<double>(lo);
  }
  return ax;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_op_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (size_t k = 0; k < 2; ++k)
      if (double* g = input_grad(self, k))
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_op_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = input_grad(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = input_grad(self, 1))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_op_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = input_value(self, 0);
    const auto& y = input_value(self, 1);
    if (double* g = input_grad(self, 0))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    if (double* g = input_grad(self, 1))
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary("mul_scalar", a, [s](double x) { return x * s; },
               [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) {
  return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double x : a.data())
    if (!(x > 0)) throw DomainError("log: non-positive input " + std::to_string(x));
  return unary("log", a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double s = 0;
  for (double x : a.data()) s += x;
  return make_op_result("sum", {}, {s}, {a}, [](Node& self) {
    if (double* g = input_grad(self, 0)) {
      const size_t n = self.inputs[0]->value.size();
      for (size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  require_shape(a.numel() > 0, "mean of an empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& a, int axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  auto x = a.data();
  std::vector<double> out(x.size());
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < s.inner; ++i) {
      const int64_t base = o * s.len * s.inner + i;
      double mx = x[base];
      for (int64_t k = 1; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0;
      for (int64_t k = 0; k < s.len; ++k) {
        double e = std::exp(x[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (int64_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= z;
    }
  }
  return make_op_result("softmax", a.shape(), std::move(out), {a}, [s](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t i = 0; i < s.inner; ++i) {
        const int64_t base = o * s.len * s.inner + i;
        double dot = 0;
        for (int64_t k = 0; k < s.len; ++k) dot += gy[base + k * s.inner] * y[base + k * s.inner];
        for (int64_t k = 0; k < s.len; ++k) {
          const int64_t j = base + k * s.inner;
          gx[j] += y[j] * (gy[j] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, int axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  auto x = a.data();
  std::vector<double> out(x.size());
  for (int64_t o = 0; o < s.outer; ++o) {
    for (int64_t i = 0; i < s.inner; ++i) {
      const int64_t base = o * s.len * s.inner + i;
      double mx = x[base];
      for (int64_t k = 1; k < s.len; ++k) mx = std::max(mx, x[base + k * s.inner]);
      double z = 0;
      for (int64_t k = 0; k < s.len; ++k) z += std::exp(x[base + k * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (int64_t k = 0; k < s.len; ++k) out[base + k * s.inner] = x[base + k * s.inner] - lse;
    }
  }
  return make_op_result("log_softmax", a.shape(), std::move(out), {a}, [s](Node& self) {
    double* gx = input_grad(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    const auto& gy = self.grad;
    for (int64_t o = 0; o < s.outer; ++o) {
      for (int64_t i = 0; i < s.inner; ++i) {
        const int64_t base = o * s.len * s.inner + i;
        double total = 0;
        for (int64_t k = 0; k < s.len; ++k) total += gy[base + k * s.inner];
        for (int64_t k = 0; k < s.len; ++k) {
          const int64_t j = base + k * s.inner;
          gx[j] += gy[j] - std::exp(y[j]) * total;
        }
      }
    }
  });
}

Tensor bilinear_upsample(const Tensor& t, int64_t target_h, int64_t target_w) {
  require_map(t, "bilinear_upsample");
  const int64_t n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  require_shape(h > 0 && w > 0, "bilinear_upsample: zero-sized spatial dims");
  require_shape(target_h >= h && target_w >= w,
                "bilinear_upsample: target must not be smaller than the input");
  auto ay = std::make_shared<InterpAxis>(interp_axis(h, target_h));
  auto ax = std::make_shared<InterpAxis>(interp_axis(w, target_w));
  auto x = t.data();
  std::vector<double> out(n * c * target_h * target_w);
  for (int64_t p = 0; p < n * c; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * target_h * target_w;
    for (int64_t oy = 0; oy < target_h; ++oy) {
      const double ly = ay->frac[oy];
      const double* r0 = src + ay->i0[oy] * w;
      const double* r1 = src + ay->i1[oy] * w;
      for (int64_t ox = 0; ox < target_w; ++ox) {
        const double lx = ax->frac[ox];
        const int64_t x0 = ax->i0[ox], x1 = ax->i1[ox];
        dst[oy * target_w + ox] = (1 - ly) * ((1 - lx) * r0[x0] + lx * r0[x1]) +
                                  ly * ((1 - lx) * r1[x0] + lx * r1[x1]);
      }
    }
  }
  return make_op_result(
      "bilinear_upsample", {n, c, target_h, target_w}, std::move(out), {t},
      [ay, ax, n, c, h, w, target_h, target_w](Node& self) {
        double* gx = input_grad(self, 0);
        if (!gx) return;
        for (int64_t p = 0; p < n * c; ++p) {
          double* g = gx + p * h * w;
          const double* gy = self.grad.data() + p * target_h * target_w;
          for (int64_t oy = 0; oy < target_h; ++oy) {
            const double ly = ay->frac[oy];
            double* r0 = g + ay->i0[oy] * w;
            double* r1 = g + ay->i1[oy] * w;
            for (int64_t ox = 0; ox < target_w; ++ox) {
              const double lx = ax->frac[ox];
              const double v = gy[oy * target_w + ox];
              const int64_t x0 = ax->i0[ox], x1 = ax->i1[ox];
              r0[x0] += (1 - ly) * (1 - lx) * v;
              r0[x1] += (1 - ly) * lx * v;
              r1[x0] += ly * (1 - lx) * v;
              r1[x1] += ly * lx * v;
            }
          }
        }
      });
}

namespace {

struct ConvGeometry {
  int64_t n, cin, h, w, cout, k, stride, pad, ho, wo;
  int64_t patch() const { return cin * k * k; }
  int64_t pixels() const { return ho * wo; }
  bool direct() const { return k == 1 && stride == 1; }
};

void im2col(const ConvGeometry& g, const double* x, double* col) {
  for (int64_t ci = 0; ci < g.cin; ++ci) {
    for (int64_t ky = 0; ky < g.k; ++ky) {
      for (int64_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((ci * g.k + ky) * g.k + kx) * g.pixels();
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride + ky - g.pad;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride + kx - g.pad;
            row[oy * g.wo + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w)
                                      ? x[(ci * g.h + iy) * g.w + ix]
                                      : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* x) {
  for (int64_t ci = 0; ci < g.cin; ++ci) {
    for (int64_t ky = 0; ky < g.k; ++ky) {
      for (int64_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((ci * g.k + ky) * g.k + kx) * g.pixels();
        for (int64_t oy = 0; oy < g.ho; ++oy) {
          const int64_t iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (int64_t ox = 0; ox < g.wo; ++ox) {
            const int64_t ix = ox * g.stride + kx - g.pad;
            if (ix >= 0 && ix < g.w) x[(ci * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, Conv2dOptions options) {
  require_map(x, "conv2d");
  require_shape(kernel.defined() && kernel.rank() == 4, "conv2d: kernel must be rank 4");
  ConvGeometry g{};
  g.n = x.dim(0);
  g.cin = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.cout = kernel.dim(0);
  g.k = kernel.dim(2);
  require_shape(kernel.dim(1) == g.cin,
                "conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                    " input channels, got " + std::to_string(g.cin));
  require_shape(kernel.dim(3) == g.k && (g.k == 1 || g.k == 3), "conv2d: kernel must be 1x1 or 3x3");
  require_shape(options.stride == 1 || options.stride == 2, "conv2d: stride must be 1 or 2");
  g.stride = options.stride;
  g.pad = options.padding < 0 ? g.k / 2 : options.padding;
  require_shape(g.pad == g.k / 2, "conv2d: padding must be 0 for 1x1 and 1 for 3x3");
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias)
    require_shape(bias.numel() == g.cout, "conv2d: bias must have Cout elements");

  // Keep the unfolded patches for the backward pass.
  auto cols = std::make_shared<std::vector<double>>();
  if (!g.direct()) cols->resize(g.n * g.patch() * g.pixels());
  auto xd = x.data();
  ConstMapMat wm(kernel.data().data(), g.cout, g.patch());
  std::vector<double> out(g.n * g.cout * g.pixels());
  for (int64_t b = 0; b < g.n; ++b) {
    const double* xb = xd.data() + b * g.cin * g.h * g.w;
    const double* colp = xb;
    if (!g.direct()) {
      double* c = cols->data() + b * g.patch() * g.pixels();
      im2col(g, xb, c);
      colp = c;
    }
    ConstMapMat col(colp, g.patch(), g.pixels());
    MapMat ob(out.data() + b * g.cout * g.pixels(), g.cout, g.pixels());
    ob.noalias() = wm * col;
    if (has_bias) {
      auto bd = bias.data();
      for (int64_t co = 0; co < g.cout; ++co) ob.row(co).array() += bd[co];
    }
  }

  std::vector<Tensor> inputs{x, kernel};
  if (has_bias) inputs.push_back(bias);
  return make_op_result(
      "conv2d", {g.n, g.cout, g.ho, g.wo}, std::move(out), std::move(inputs),
      [g, cols, has_bias](Node& self) {
        double* gx = input_grad(self, 0);
        double* gk = input_grad(self, 1);
        double* gb = has_bias ? input_grad(self, 2) : nullptr;
        const auto& xv = input_value(self, 0);
        ConstMapMat wm(input_value(self, 1).data(), g.cout, g.patch());
        std::vector<double> dcol(gx && !g.direct() ? g.patch() * g.pixels() : 0);
        for (int64_t b = 0; b < g.n; ++b) {
          ConstMapMat gout(self.grad.data() + b * g.cout * g.pixels(), g.cout, g.pixels());
          const double* colp = g.direct() ? xv.data() + b * g.cin * g.h * g.w
                                          : cols->data() + b * g.patch() * g.pixels();
          ConstMapMat col(colp, g.patch(), g.pixels());
          if (gk) {
            MapMat gkm(gk, g.cout, g.patch());
            gkm.noalias() += gout * col.transpose();
          }
          if (gb)
            for (int64_t co = 0; co < g.cout; ++co) gb[co] += gout.row(co).sum();
          if (gx) {
            if (g.direct()) {
              MapMat gxb(gx + b * g.cin * g.h * g.w, g.cin, g.pixels());
              gxb.noalias() += wm.transpose() * gout;
            } else {
              MapMat dc(dcol.data(), g.patch(), g.pixels());
              dc.noalias() = wm.transpose() * gout;
              col2im_add(g, dcol.data(), gx + b * g.cin * g.h * g.w);
            }
          }
        }
      });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  require_shape(!parts.empty(), "concat_channels: no inputs");
  for (const auto& p : parts) require_map(p, "concat_channels");
  const int64_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::vector<int64_t> chans;
  int64_t total = 0;
  for (const auto& p : parts) {
    require_shape(p.dim(0) == n && p.dim(2) == h && p.dim(3) == w,
                  "concat_channels: batch/spatial extents differ");
    chans.push_back(p.dim(1));
    total += p.dim(1);
  }
  const int64_t hw = h * w;
  std::vector<double> out(n * total * hw);
  for (int64_t b = 0; b < n; ++b) {
    int64_t offset = 0;
    for (size_t i = 0; i < parts.size(); ++i) {
      auto src = parts[i].data().subspan(b * chans[i] * hw, chans[i] * hw);
      std::copy(src.begin(), src.end(), out.begin() + (b * total + offset) * hw);
      offset += chans[i];
    }
  }
  return make_op_result("concat_channels", {n, total, h, w}, std::move(out), parts,
                        [chans, n, total, hw](Node& self) {
                          int64_t offset = 0;
                          for (size_t i = 0; i < chans.size(); ++i) {
                            if (double* g = input_grad(self, i)) {
                              for (int64_t b = 0; b < n; ++b) {
                                const double* src = self.grad.data() + (b * total + offset) * hw;
                                double* dst = g + b * chans[i] * hw;
                                for (int64_t j = 0; j < chans[i] * hw; ++j) dst[j] += src[j];
                              }
                            }
                            offset += chans[i];
                          }
                        });
}

Tensor slice_channels(const Tensor& t, int64_t begin, int64_t count) {
  require_map(t, "slice_channels");
  const int64_t n = t.dim(0), c = t.dim(1), hw = t.dim(2) * t.dim(3);
  require_shape(begin >= 0 && count > 0 && begin + count <= c, "slice_channels: range out of bounds");
  std::vector<double> out(n * count * hw);
  auto x = t.data();
  for (int64_t b = 0; b < n; ++b)
    std::copy_n(x.begin() + (b * c + begin) * hw, count * hw, out.begin() + b * count * hw);
  return make_op_result("slice_channels", {n, count, t.dim(2), t.dim(3)}, std::move(out), {t},
                        [n, c, hw, begin, count](Node& self) {
                          double* g = input_grad(self, 0);
                          if (!g) return;
                          for (int64_t b = 0; b < n; ++b) {
                            double* dst = g + (b * c + begin) * hw;
                            const double* src = self.grad.data() + b * count * hw;
                            for (int64_t j = 0; j < count * hw; ++j) dst[j] += src[j];
                          }
                        });
}

Tensor scale_by_map(const Tensor& x, const Tensor& m) {
  require_map(x, "scale_by_map");
  require_map(m, "scale_by_map");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require_shape(m.dim(0) == n && m.dim(1) == 1 && m.dim(2) == x.dim(2) && m.dim(3) == x.dim(3),
                "scale_by_map: map must be N x 1 x H x W matching x");
  auto xv = x.data(), mv = m.data();
  std::vector<double> out(xv.size());
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t j = 0; j < hw; ++j)
        out[(b * c + ch) * hw + j] = xv[(b * c + ch) * hw + j] * mv[b * hw + j];
  return make_op_result("scale_by_map", x.shape(), std::move(out), {x, m},
                        [n, c, hw](Node& self) {
                          const auto& xv = input_value(self, 0);
                          const auto& mv = input_value(self, 1);
                          double* gx = input_grad(self, 0);
                          double* gm = input_grad(self, 1);
                          for (int64_t b = 0; b < n; ++b)
                            for (int64_t ch = 0; ch < c; ++ch)
                              for (int64_t j = 0; j < hw; ++j) {
                                const int64_t i = (b * c + ch) * hw + j;
                                if (gx) gx[i] += self.grad[i] * mv[b * hw + j];
                                if (gm) gm[b * hw + j] += self.grad[i] * xv[i];
                              }
                        });
}

Tensor channel_mean(const Tensor& x) {
  require_map(x, "channel_mean");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto xv = x.data();
  std::vector<double> out(n * hw, 0.0);
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t j = 0; j < hw; ++j) out[b * hw + j] += xv[(b * c + ch) * hw + j];
    for (int64_t j = 0; j < hw; ++j) out[b * hw + j] /= static_cast<double>(c);
  }
  return make_op_result("channel_mean", {n, 1, x.dim(2), x.dim(3)}, std::move(out), {x},
                        [n, c, hw](Node& self) {
                          double* g = input_grad(self, 0);
                          if (!g) return;
                          const double inv = 1.0 / static_cast<double>(c);
                          for (int64_t b = 0; b < n; ++b)
                            for (int64_t ch = 0; ch < c; ++ch)
                              for (int64_t j = 0; j < hw; ++j)
                                g[(b * c + ch) * hw + j] += self.grad[b * hw + j] * inv;
                        });
}

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_map(x, "layer_norm_channels");
  const int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require_shape(gamma.numel() == c && beta.numel() == c,
                "layer_norm_channels: gamma/beta must have C elements");
  auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  // Normalised activations and inverse std are kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(n * hw);
  std::vector<double> out(xv.size());
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t j = 0; j < hw; ++j) {
      double mu = 0;
      for (int64_t ch = 0; ch < c; ++ch) mu += xv[(b * c + ch) * hw + j];
      mu /= static_cast<double>(c);
      double var = 0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double d = xv[(b * c + ch) * hw + j] - mu;
        var += d * d;
      }
      var /= static_cast<double>(c);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[b * hw + j] = is;
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t i = (b * c + ch) * hw + j;
        (*xhat)[i] = (xv[i] - mu) * is;
        out[i] = gv[ch] * (*xhat)[i] + bv[ch];
      }
    }
  }
  return make_op_result(
      "layer_norm_channels", x.shape(), std::move(out), {x, gamma, beta},
      [n, c, hw, xhat, inv_std](Node& self) {
        double* gx = input_grad(self, 0);
        double* gg = input_grad(self, 1);
        double* gb = input_grad(self, 2);
        const auto& gv = input_value(self, 1);
        const auto& dy = self.grad;
        for (int64_t b = 0; b < n; ++b) {
          for (int64_t j = 0; j < hw; ++j) {
            double mean_dxhat = 0, mean_dxhat_xhat = 0;
            for (int64_t ch = 0; ch < c; ++ch) {
              const int64_t i = (b * c + ch) * hw + j;
              if (gg) gg[ch] += dy[i] * (*xhat)[i];
              if (gb) gb[ch] += dy[i];
              const double dxh = dy[i] * gv[ch];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * (*xhat)[i];
            }
            if (!gx) continue;
            mean_dxhat /= static_cast<double>(c);
            mean_dxhat_xhat /= static_cast<double>(c);
            const double is = (*inv_std)[b * hw + j];
            for (int64_t ch = 0; ch < c; ++ch) {
              const int64_t i = (b * c + ch) * hw + j;
              gx[i] += is * (dy[i] * gv[ch] - mean_dxhat - (*xhat)[i] * mean_dxhat_xhat);
            }
          }
        }
      });
}

}  // namespace crispdec
