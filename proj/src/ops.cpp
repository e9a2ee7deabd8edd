#include "tdrd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "tdrd/errors.hpp"
#include "tdrd/flops.hpp"

namespace tdrd::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatMap = Eigen::Map<const RowMat>;
using MatMap = Eigen::Map<RowMat>;

struct ConvGeom {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, pad, dil, groups;
  int cin_g, cout_g;
  int ho, wo;

  int patch() const { return cin_g * kh * kw; }
  int out_area() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  bool depthwise() const { return cin_g == 1 && cout_g == 1; }
};

// Rows are (channel, ky, kx), columns are output positions.
void im2col(const double* x, const ConvGeom& g, double* col) {
  const int area = g.out_area();
  for (int ci = 0; ci < g.cin_g; ++ci) {
    const double* xc = x + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        double* row = col + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * area;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          double* dst = row + oy * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* dx) {
  const int area = g.out_area();
  for (int ci = 0; ci < g.cin_g; ++ci) {
    double* xc = dx + static_cast<std::size_t>(ci) * g.h * g.w;
    for (int ky = 0; ky < g.kh; ++ky) {
      for (int kx = 0; kx < g.kw; ++kx) {
        const double* row = col + static_cast<std::size_t>((ci * g.kh + ky) * g.kw + kx) * area;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          double* dst = xc + static_cast<std::size_t>(iy) * g.w;
          const double* src = row + oy * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void depthwise_forward(const double* x, const double* w, const ConvGeom& g, double* out) {
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      double acc = 0.0;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad + ky * g.dil;
        if (iy < 0 || iy >= g.h) continue;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad + kx * g.dil;
          if (ix < 0 || ix >= g.w) continue;
          acc += w[ky * g.kw + kx] * x[iy * g.w + ix];
        }
      }
      out[oy * g.wo + ox] = acc;
    }
  }
}

void depthwise_backward(const double* x, const double* w, const double* dout, const ConvGeom& g, double* dx,
                        double* dw) {
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      const double go = dout[oy * g.wo + ox];
      if (go == 0.0) continue;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad + ky * g.dil;
        if (iy < 0 || iy >= g.h) continue;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad + kx * g.dil;
          if (ix < 0 || ix >= g.w) continue;
          if (dx) dx[iy * g.w + ix] += w[ky * g.kw + kx] * go;
          if (dw) dw[ky * g.kw + kx] += x[iy * g.w + ix] * go;
        }
      }
    }
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  auto in = x.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Tensor::from_op(x.shape(), std::move(out), {x}, [df](detail::Node& self) {
    auto& src = *self.inputs[0];
    auto& gx = src.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i] * df(src.value[i], self.value[i]);
  });
}

double stable_sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions o) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(o.groups >= 1 && o.stride >= 1 && o.dilation >= 1 && o.padding >= 0, "conv2d: invalid options");
  require(xs.c % o.groups == 0 && ws.n % o.groups == 0, "conv2d: channels not divisible by groups");
  require(ws.c == xs.c / o.groups,
          "conv2d: weight " + ws.str() + " expects " + std::to_string(ws.c * o.groups) + " input channels, got " +
              std::to_string(xs.c));
  ConvGeom g{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, ws.w, o.stride, o.padding, o.dilation, o.groups,
             xs.c / o.groups, ws.n / o.groups, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.dil * (g.kh - 1) - 1) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.dil * (g.kw - 1) - 1) / g.stride + 1;
  require(g.ho >= 1 && g.wo >= 1, "conv2d: kernel larger than padded input " + xs.str());
  if (bias.defined()) require(bias.numel() == static_cast<std::size_t>(g.cout), "conv2d: bias size mismatch");

  LayerRecord rec;
  rec.kind = g.depthwise() && g.groups > 1 ? LayerKind::DepthwiseConv2d : LayerKind::Conv2d;
  rec.in_channels = g.cin_g;
  rec.out_channels = g.cout;
  rec.kernel_h = g.kh;
  rec.kernel_w = g.kw;
  rec.out_h = g.ho;
  rec.out_w = g.wo;
  FlopRecorder::record(rec);

  const int area = g.out_area();
  const std::size_t in_img = static_cast<std::size_t>(g.cin) * g.h * g.w;
  const std::size_t out_img = static_cast<std::size_t>(g.cout) * area;
  std::vector<double> out(static_cast<std::size_t>(g.n) * out_img, 0.0);
  const double* xv = x.values().data();
  const double* wv = weight.values().data();
  std::vector<double> col;
  if (!g.pointwise() && !g.depthwise()) col.resize(static_cast<std::size_t>(g.patch()) * area);

  for (int n = 0; n < g.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const double* xg = xv + n * in_img + static_cast<std::size_t>(grp) * g.cin_g * g.h * g.w;
      double* og = out.data() + n * out_img + static_cast<std::size_t>(grp) * g.cout_g * area;
      const double* wg = wv + static_cast<std::size_t>(grp) * g.cout_g * g.patch();
      if (g.depthwise()) {
        depthwise_forward(xg, wg, g, og);
        continue;
      }
      const double* colp = xg;
      if (!g.pointwise()) {
        im2col(xg, g, col.data());
        colp = col.data();
      }
      MatMap(og, g.cout_g, area).noalias() = ConstMatMap(wg, g.cout_g, g.patch()) * ConstMatMap(colp, g.patch(), area);
    }
    if (bias.defined()) {
      const double* bv = bias.values().data();
      for (int c = 0; c < g.cout; ++c) {
        double* oc = out.data() + n * out_img + static_cast<std::size_t>(c) * area;
        for (int i = 0; i < area; ++i) oc[i] += bv[c];
      }
    }
  }

  return Tensor::from_op(Shape{g.n, g.cout, g.ho, g.wo}, std::move(out), {x, weight, bias}, [g](detail::Node& self) {
    detail::Node* xn = self.inputs[0].get();
    detail::Node* wn = self.inputs[1].get();
    detail::Node* bn = self.inputs[2].get();
    const bool need_x = xn->requires_grad;
    const bool need_w = wn->requires_grad;
    const int area = g.out_area();
    const std::size_t in_img = static_cast<std::size_t>(g.cin) * g.h * g.w;
    const std::size_t out_img = static_cast<std::size_t>(g.cout) * area;
    double* dx = need_x ? xn->ensure_grad().data() : nullptr;
    double* dw = need_w ? wn->ensure_grad().data() : nullptr;
    std::vector<double> col;
    std::vector<double> dcol;
    if (!g.pointwise() && !g.depthwise()) {
      if (need_w) col.resize(static_cast<std::size_t>(g.patch()) * area);
      if (need_x) dcol.resize(static_cast<std::size_t>(g.patch()) * area);
    }
    for (int n = 0; n < g.n; ++n) {
      for (int grp = 0; grp < g.groups; ++grp) {
        const std::size_t xoff = n * in_img + static_cast<std::size_t>(grp) * g.cin_g * g.h * g.w;
        const double* xg = xn->value.data() + xoff;
        const double* gg = self.grad.data() + n * out_img + static_cast<std::size_t>(grp) * g.cout_g * area;
        const std::size_t woff = static_cast<std::size_t>(grp) * g.cout_g * g.patch();
        const double* wg = wn->value.data() + woff;
        if (g.depthwise()) {
          depthwise_backward(xg, wg, gg, g, dx ? dx + xoff : nullptr, dw ? dw + woff : nullptr);
          continue;
        }
        ConstMatMap gout(gg, g.cout_g, area);
        if (need_x) {
          if (g.pointwise()) {
            MatMap(dx + xoff, g.cin_g, area).noalias() += ConstMatMap(wg, g.cout_g, g.patch()).transpose() * gout;
          } else {
            MatMap(dcol.data(), g.patch(), area).noalias() = ConstMatMap(wg, g.cout_g, g.patch()).transpose() * gout;
            col2im_add(dcol.data(), g, dx + xoff);
          }
        }
        if (need_w) {
          const double* colp = xg;
          if (!g.pointwise()) {
            im2col(xg, g, col.data());
            colp = col.data();
          }
          MatMap(dw + woff, g.cout_g, g.patch()).noalias() += gout * ConstMatMap(colp, g.patch(), area).transpose();
        }
      }
    }
    if (bn && bn->requires_grad) {
      auto& db = bn->ensure_grad();
      for (int n = 0; n < g.n; ++n) {
        for (int c = 0; c < g.cout; ++c) {
          const double* gc = self.grad.data() + n * out_img + static_cast<std::size_t>(c) * area;
          double s = 0.0;
          for (int i = 0; i < area; ++i) s += gc[i];
          db[c] += s;
        }
      }
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.h == 1 && xs.w == 1, "linear: input must be (n, c, 1, 1), got " + xs.str());
  require(ws.h == 1 && ws.w == 1 && ws.c == xs.c,
          "linear: weight " + ws.str() + " does not accept " + std::to_string(xs.c) + " inputs");
  if (bias.defined()) require(bias.numel() == static_cast<std::size_t>(ws.n), "linear: bias size mismatch");
  const int batch = xs.n;
  const int in = xs.c;
  const int outc = ws.n;

  LayerRecord rec;
  rec.kind = LayerKind::Linear;
  rec.in_channels = in;
  rec.out_channels = outc;
  FlopRecorder::record(rec);

  std::vector<double> out(static_cast<std::size_t>(batch) * outc);
  MatMap(out.data(), batch, outc).noalias() =
      ConstMatMap(x.values().data(), batch, in) * ConstMatMap(weight.values().data(), outc, in).transpose();
  if (bias.defined()) {
    for (int n = 0; n < batch; ++n)
      for (int o = 0; o < outc; ++o) out[n * outc + o] += bias.values()[o];
  }
  return Tensor::from_op(Shape{batch, outc, 1, 1}, std::move(out), {x, weight, bias},
                         [batch, in, outc](detail::Node& self) {
                           detail::Node* xn = self.inputs[0].get();
                           detail::Node* wn = self.inputs[1].get();
                           detail::Node* bn = self.inputs[2].get();
                           ConstMatMap gout(self.grad.data(), batch, outc);
                           if (xn->requires_grad) {
                             MatMap(xn->ensure_grad().data(), batch, in).noalias() +=
                                 gout * ConstMatMap(wn->value.data(), outc, in);
                           }
                           if (wn->requires_grad) {
                             MatMap(wn->ensure_grad().data(), outc, in).noalias() +=
                                 gout.transpose() * ConstMatMap(xn->value.data(), batch, in);
                           }
                           if (bn && bn->requires_grad) {
                             auto& db = bn->ensure_grad();
                             for (int n = 0; n < batch; ++n)
                               for (int o = 0; o < outc; ++o) db[o] += self.grad[n * outc + o];
                           }
                         });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool broadcast = bs.n == 1 && as.n > 1;
  require(as.c == bs.c && as.h == bs.h && as.w == bs.w && (as.n == bs.n || broadcast),
          "add: shapes " + as.str() + " and " + bs.str() + " do not match");
  const std::size_t item = static_cast<std::size_t>(as.c) * as.h * as.w;
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[broadcast ? i % item : i];
  return Tensor::from_op(as, std::move(out), {a, b}, [broadcast, item](detail::Node& self) {
    for (int k = 0; k < 2; ++k) {
      detail::Node* in = self.inputs[k].get();
      if (!in->requires_grad) continue;
      auto& g = in->ensure_grad();
      const bool wrap = k == 1 && broadcast;
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[wrap ? i % item : i] += self.grad[i];
    }
  });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps) {
  const Shape& xs = x.shape();
  require(groups > 0 && xs.c % groups == 0, "group_norm: " + std::to_string(groups) + " groups do not divide " + xs.str());
  require(gamma.shape() == Shape{1, xs.c, 1, 1} && beta.shape() == Shape{1, xs.c, 1, 1},
          "group_norm: affine parameters do not fit " + xs.str());
  const std::size_t plane = xs.plane();
  const int per = xs.c / groups;
  const std::size_t span = per * plane;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<double> out(xv.size());
  // Normalized values and 1 / sigma per (n, group), kept for the backward pass.
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(static_cast<std::size_t>(xs.n) * groups);
  for (int n = 0; n < xs.n; ++n)
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = (static_cast<std::size_t>(n) * xs.c + g * per) * plane;
      double mean = 0.0;
      for (std::size_t i = 0; i < span; ++i) mean += xv[base + i];
      mean /= span;
      double var = 0.0;
      for (std::size_t i = 0; i < span; ++i) var += (xv[base + i] - mean) * (xv[base + i] - mean);
      const double inv = 1.0 / std::sqrt(var / span + eps);
      inv_std[n * groups + g] = inv;
      for (std::size_t i = 0; i < span; ++i) {
        const int c = g * per + static_cast<int>(i / plane);
        xhat[base + i] = (xv[base + i] - mean) * inv;
        out[base + i] = gv[c] * xhat[base + i] + bv[c];
      }
    }
  return Tensor::from_op(xs, std::move(out), {x, gamma, beta},
                         [xs, plane, per, groups, span, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                             detail::Node& self) {
    detail::Node* xn = self.inputs[0].get();
    detail::Node* gn = self.inputs[1].get();
    detail::Node* bn = self.inputs[2].get();
    for (int n = 0; n < xs.n; ++n)
      for (int g = 0; g < groups; ++g) {
        const std::size_t base = (static_cast<std::size_t>(n) * xs.c + g * per) * plane;
        double sum_d = 0.0, sum_dx = 0.0;  // over d = dL/dxhat
        for (std::size_t i = 0; i < span; ++i) {
          const int c = g * per + static_cast<int>(i / plane);
          const double dy = self.grad[base + i];
          if (gn->requires_grad) gn->ensure_grad()[c] += dy * xhat[base + i];
          if (bn->requires_grad) bn->ensure_grad()[c] += dy;
          const double d = dy * gn->value[c];
          sum_d += d;
          sum_dx += d * xhat[base + i];
        }
        if (!xn->requires_grad) continue;
        auto& gx = xn->ensure_grad();
        const double inv = inv_std[n * groups + g];
        const double mean_d = sum_d / span, mean_dx = sum_dx / span;
        for (std::size_t i = 0; i < span; ++i) {
          const int c = g * per + static_cast<int>(i / plane);
          const double d = self.grad[base + i] * gn->value[c];
          gx[base + i] += inv * (d - mean_d - xhat[base + i] * mean_dx);
        }
      }
  });
}

Tensor mul_channel(const Tensor& x, const Tensor& gate) {
  const Shape& xs = x.shape();
  const Shape& gs = gate.shape();
  require(gs.h == 1 && gs.w == 1 && gs.c == xs.c && (gs.n == xs.n || gs.n == 1),
          "mul_channel: gate " + gs.str() + " does not fit " + xs.str());
  const std::size_t plane = xs.plane();
  const bool per_item = gs.n == xs.n;
  auto xv = x.values();
  auto gv = gate.values();
  std::vector<double> out(xv.size());
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const double s = gv[(per_item ? n : 0) * xs.c + c];
      const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = xv[base + i] * s;
    }
  return Tensor::from_op(xs, std::move(out), {x, gate}, [xs, plane, per_item](detail::Node& self) {
    detail::Node* xn = self.inputs[0].get();
    detail::Node* gn = self.inputs[1].get();
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t gi = (per_item ? n : 0) * xs.c + c;
        const std::size_t base = (static_cast<std::size_t>(n) * xs.c + c) * plane;
        if (xn->requires_grad) {
          auto& gx = xn->ensure_grad();
          const double s = gn->value[gi];
          for (std::size_t i = 0; i < plane; ++i) gx[base + i] += self.grad[base + i] * s;
        }
        if (gn->requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) acc += self.grad[base + i] * xn->value[base + i];
          gn->ensure_grad()[gi] += acc;
        }
      }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0 ? v : 0.0; }, [](double in, double) { return in > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, stable_sigmoid, [](double, double out) { return out * (1.0 - out); });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v * stable_sigmoid(v); },
      [](double in, double) {
        const double s = stable_sigmoid(in);
        return s * (1.0 + in * (1.0 - s));
      });
}

Tensor global_avg_pool(const Tensor& x) {
  const Shape& xs = x.shape();
  const std::size_t plane = xs.plane();
  auto xv = x.values();
  std::vector<double> out(static_cast<std::size_t>(xs.n) * xs.c);
  for (std::size_t nc = 0; nc < out.size(); ++nc) {
    double s = 0.0;
    for (std::size_t i = 0; i < plane; ++i) s += xv[nc * plane + i];
    out[nc] = s / static_cast<double>(plane);
  }
  return Tensor::from_op(Shape{xs.n, xs.c, 1, 1}, std::move(out), {x}, [plane](detail::Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t nc = 0; nc < self.grad.size(); ++nc)
      for (std::size_t i = 0; i < plane; ++i) gx[nc * plane + i] += self.grad[nc] * inv;
  });
}

namespace {

struct BilinearTap {
  int i0, i1;
  double w1;
};

std::vector<BilinearTap> bilinear_taps(int in, int factor) {
  std::vector<BilinearTap> taps(static_cast<std::size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Tensor upsample(const Tensor& x, int factor, UpsampleMode mode) {
  require(factor >= 1, "upsample: factor must be >= 1");
  const Shape& xs = x.shape();
  const Shape os{xs.n, xs.c, xs.h * factor, xs.w * factor};
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  auto xv = x.values();
  std::vector<double> out(os.numel());
  if (mode == UpsampleMode::Nearest) {
    for (std::size_t p = 0; p < planes; ++p)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx)
          out[(p * os.h + y) * os.w + xx] = xv[(p * xs.h + y / factor) * xs.w + xx / factor];
    return Tensor::from_op(os, std::move(out), {x}, [xs, os, planes, factor](detail::Node& self) {
      auto& gx = self.inputs[0]->ensure_grad();
      for (std::size_t p = 0; p < planes; ++p)
        for (int y = 0; y < os.h; ++y)
          for (int xx = 0; xx < os.w; ++xx)
            gx[(p * xs.h + y / factor) * xs.w + xx / factor] += self.grad[(p * os.h + y) * os.w + xx];
    });
  }
  auto ty = bilinear_taps(xs.h, factor);
  auto tx = bilinear_taps(xs.w, factor);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * xs.plane();
    for (int y = 0; y < os.h; ++y) {
      const auto& a = ty[y];
      for (int xx = 0; xx < os.w; ++xx) {
        const auto& b = tx[xx];
        const double top = src[a.i0 * xs.w + b.i0] * (1 - b.w1) + src[a.i0 * xs.w + b.i1] * b.w1;
        const double bot = src[a.i1 * xs.w + b.i0] * (1 - b.w1) + src[a.i1 * xs.w + b.i1] * b.w1;
        out[(p * os.h + y) * os.w + xx] = top * (1 - a.w1) + bot * a.w1;
      }
    }
  }
  return Tensor::from_op(os, std::move(out), {x}, [xs, os, planes, ty, tx](detail::Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p) {
      double* dst = gx.data() + p * xs.plane();
      for (int y = 0; y < os.h; ++y) {
        const auto& a = ty[y];
        for (int xx = 0; xx < os.w; ++xx) {
          const auto& b = tx[xx];
          const double g = self.grad[(p * os.h + y) * os.w + xx];
          dst[a.i0 * xs.w + b.i0] += g * (1 - a.w1) * (1 - b.w1);
          dst[a.i0 * xs.w + b.i1] += g * (1 - a.w1) * b.w1;
          dst[a.i1 * xs.w + b.i0] += g * a.w1 * (1 - b.w1);
          dst[a.i1 * xs.w + b.i1] += g * a.w1 * b.w1;
        }
      }
    }
  });
}

Tensor avg_pool(const Tensor& x, int k) {
  const Shape& xs = x.shape();
  require(k >= 1 && xs.h % k == 0 && xs.w % k == 0, "avg_pool: extents not divisible by window");
  const Shape os{xs.n, xs.c, xs.h / k, xs.w / k};
  Tensor out(os);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx) {
          double s = 0.0;
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) s += x.at(n, c, y * k + dy, xx * k + dx);
          out.at(n, c, y, xx) = s / (k * k);
        }
  return out;
}

Tensor window_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& tap_logits,
                        const WindowAttentionOptions& o) {
  const Shape& s = q.shape();
  require(k.shape() == s && v.shape() == s, "window_attention: q, k, v shapes differ");
  require(o.heads >= 1 && s.c % o.heads == 0, "window_attention: channels not divisible by heads");
  require(o.window >= 1 && o.window % 2 == 1, "window_attention: window must be odd");
  require(static_cast<int>(o.head_rates.size()) == o.heads, "window_attention: one rate per head required");
  require(tap_logits.shape() == (Shape{1, o.heads, 1, o.window}), "window_attention: tap logits must be (1, heads, 1, window)");

  const int heads = o.heads;
  const int hd = s.c / heads;
  const int win = o.window;
  const int taps = win * win;
  const int center = win / 2;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  const std::size_t plane = s.plane();
  const std::vector<int> rates = o.head_rates;

  LayerRecord rec;
  rec.kind = LayerKind::WindowAttention;
  rec.in_channels = s.c;
  rec.out_channels = s.c;
  rec.out_h = s.h;
  rec.out_w = s.w;
  rec.window = win;
  FlopRecorder::record(rec);

  auto qv = q.values();
  auto kv = k.values();
  auto vv = v.values();
  auto tv = tap_logits.values();
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s.n) * heads * plane * taps);
  std::vector<double> out(s.numel(), 0.0);
  std::vector<double> logits(taps);

  for (int n = 0; n < s.n; ++n) {
    for (int h = 0; h < heads; ++h) {
      const int r = rates[h];
      const std::size_t cbase = (static_cast<std::size_t>(n) * s.c + h * hd) * plane;
      for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * s.w + x;
          double mx = -1e300;
          for (int i = 0; i < win; ++i) {
            const int yy = y + (i - center) * r;
            for (int j = 0; j < win; ++j) {
              const int xx = x + (j - center) * r;
              double dot = 0.0;
              if (yy >= 0 && yy < s.h && xx >= 0 && xx < s.w) {
                const std::size_t pk = static_cast<std::size_t>(yy) * s.w + xx;
                for (int c = 0; c < hd; ++c) dot += qv[cbase + c * plane + p] * kv[cbase + c * plane + pk];
              }
              const double l = dot * inv_sqrt + tv[h * win + i] + tv[h * win + j];
              logits[i * win + j] = l;
              mx = std::max(mx, l);
            }
          }
          double z = 0.0;
          for (double& l : logits) {
            l = std::exp(l - mx);
            z += l;
          }
          double* a = probs->data() + ((static_cast<std::size_t>(n) * heads + h) * plane + p) * taps;
          for (int t = 0; t < taps; ++t) a[t] = logits[t] / z;
          for (int i = 0; i < win; ++i) {
            const int yy = y + (i - center) * r;
            if (yy < 0 || yy >= s.h) continue;
            for (int j = 0; j < win; ++j) {
              const int xx = x + (j - center) * r;
              if (xx < 0 || xx >= s.w) continue;
              const std::size_t pk = static_cast<std::size_t>(yy) * s.w + xx;
              const double at = a[i * win + j];
              for (int c = 0; c < hd; ++c) out[cbase + c * plane + p] += at * vv[cbase + c * plane + pk];
            }
          }
        }
      }
    }
  }

  return Tensor::from_op(s, std::move(out), {q, k, v, tap_logits},
                         [s, heads, hd, win, taps, center, inv_sqrt, plane, rates, probs](detail::Node& self) {
    detail::Node* qn = self.inputs[0].get();
    detail::Node* kn = self.inputs[1].get();
    detail::Node* vn = self.inputs[2].get();
    detail::Node* tn = self.inputs[3].get();
    double* dq = qn->requires_grad ? qn->ensure_grad().data() : nullptr;
    double* dk = kn->requires_grad ? kn->ensure_grad().data() : nullptr;
    double* dv = vn->requires_grad ? vn->ensure_grad().data() : nullptr;
    double* dt = tn->requires_grad ? tn->ensure_grad().data() : nullptr;
    const double* qv = qn->value.data();
    const double* kv = kn->value.data();
    const double* vv = vn->value.data();
    std::vector<double> da(taps);
    for (int n = 0; n < s.n; ++n) {
      for (int h = 0; h < heads; ++h) {
        const int r = rates[h];
        const std::size_t cbase = (static_cast<std::size_t>(n) * s.c + h * hd) * plane;
        for (int y = 0; y < s.h; ++y) {
          for (int x = 0; x < s.w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * s.w + x;
            const double* a = probs->data() + ((static_cast<std::size_t>(n) * heads + h) * plane + p) * taps;
            double weighted = 0.0;
            for (int i = 0; i < win; ++i) {
              const int yy = y + (i - center) * r;
              for (int j = 0; j < win; ++j) {
                const int xx = x + (j - center) * r;
                const int t = i * win + j;
                double d = 0.0;
                if (yy >= 0 && yy < s.h && xx >= 0 && xx < s.w) {
                  const std::size_t pk = static_cast<std::size_t>(yy) * s.w + xx;
                  for (int c = 0; c < hd; ++c) {
                    const double go = self.grad[cbase + c * plane + p];
                    d += go * vv[cbase + c * plane + pk];
                    if (dv) dv[cbase + c * plane + pk] += a[t] * go;
                  }
                }
                da[t] = d;
                weighted += a[t] * d;
              }
            }
            for (int i = 0; i < win; ++i) {
              const int yy = y + (i - center) * r;
              for (int j = 0; j < win; ++j) {
                const int xx = x + (j - center) * r;
                const int t = i * win + j;
                const double dl = a[t] * (da[t] - weighted);
                if (dt) {
                  dt[h * win + i] += dl;
                  dt[h * win + j] += dl;
                }
                if (yy < 0 || yy >= s.h || xx < 0 || xx >= s.w) continue;
                const std::size_t pk = static_cast<std::size_t>(yy) * s.w + xx;
                const double sdl = dl * inv_sqrt;
                for (int c = 0; c < hd; ++c) {
                  if (dq) dq[cbase + c * plane + p] += sdl * kv[cbase + c * plane + pk];
                  if (dk) dk[cbase + c * plane + pk] += sdl * qv[cbase + c * plane + p];
                }
              }
            }
          }
        }
      }
    }
  });
}

}  // namespace tdrd::ops
