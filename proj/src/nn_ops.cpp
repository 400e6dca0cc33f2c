#include "dfdam/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dfdam/errors.hpp"
#include "dfdam/interp.hpp"

namespace dfdam {

namespace {

struct ConvDims {
  std::size_t n, c, h, w, o, kh, kw, oh, ow;
  long long stride, pad;
};

// Output range [lo, hi] with 0 <= o*stride + k - pad <= in_size - 1.
inline void tap_range(long long k, long long pad, long long stride,
                      long long in_size, long long out_size, long long& lo,
                      long long& hi) {
  const long long a = pad - k;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const long long b = in_size - 1 + pad - k;
  hi = b < 0 ? -1 : b / stride;
  if (hi > out_size - 1) hi = out_size - 1;
}

void conv_forward(const double* x, const double* w, const double* bias,
                  double* out, const ConvDims& d) {
  const std::size_t plane_in = d.h * d.w;
  const std::size_t plane_out = d.oh * d.ow;
  const std::size_t ksz = d.kh * d.kw;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.o; ++co) {
      double* op = out + (n * d.o + co) * plane_out;
      const double b = bias ? bias[co] : 0.0;
      std::fill(op, op + plane_out, b);
      for (std::size_t ci = 0; ci < d.c; ++ci) {
        const double* ip = x + (n * d.c + ci) * plane_in;
        const double* wp = w + (co * d.c + ci) * ksz;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          long long ylo, yhi;
          tap_range((long long)ky, d.pad, d.stride, (long long)d.h,
                    (long long)d.oh, ylo, yhi);
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            long long xlo, xhi;
            tap_range((long long)kx, d.pad, d.stride, (long long)d.w,
                      (long long)d.ow, xlo, xhi);
            if (xlo > xhi || ylo > yhi) continue;
            const double wv = wp[ky * d.kw + kx];
            const long long xoff = (long long)kx - d.pad;
            for (long long oy = ylo; oy <= yhi; ++oy) {
              const long long iy = oy * d.stride + (long long)ky - d.pad;
              const double* irow = ip + iy * (long long)d.w;
              double* orow = op + oy * (long long)d.ow;
              if (d.stride == 1) {
                for (long long ox = xlo; ox <= xhi; ++ox)
                  orow[ox] += wv * irow[ox + xoff];
              } else {
                for (long long ox = xlo; ox <= xhi; ++ox)
                  orow[ox] += wv * irow[ox * d.stride + xoff];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_input(double* gx, const double* w, const double* gout,
                         const ConvDims& d) {
  const std::size_t plane_in = d.h * d.w;
  const std::size_t plane_out = d.oh * d.ow;
  const std::size_t ksz = d.kh * d.kw;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.o; ++co) {
      const double* gop = gout + (n * d.o + co) * plane_out;
      for (std::size_t ci = 0; ci < d.c; ++ci) {
        double* gip = gx + (n * d.c + ci) * plane_in;
        const double* wp = w + (co * d.c + ci) * ksz;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          long long ylo, yhi;
          tap_range((long long)ky, d.pad, d.stride, (long long)d.h,
                    (long long)d.oh, ylo, yhi);
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            long long xlo, xhi;
            tap_range((long long)kx, d.pad, d.stride, (long long)d.w,
                      (long long)d.ow, xlo, xhi);
            if (xlo > xhi || ylo > yhi) continue;
            const double wv = wp[ky * d.kw + kx];
            const long long xoff = (long long)kx - d.pad;
            for (long long oy = ylo; oy <= yhi; ++oy) {
              const long long iy = oy * d.stride + (long long)ky - d.pad;
              double* girow = gip + iy * (long long)d.w;
              const double* gorow = gop + oy * (long long)d.ow;
              if (d.stride == 1) {
                for (long long ox = xlo; ox <= xhi; ++ox)
                  girow[ox + xoff] += wv * gorow[ox];
              } else {
                for (long long ox = xlo; ox <= xhi; ++ox)
                  girow[ox * d.stride + xoff] += wv * gorow[ox];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_weight(const double* x, double* gw, const double* gout,
                          const ConvDims& d) {
  const std::size_t plane_in = d.h * d.w;
  const std::size_t plane_out = d.oh * d.ow;
  const std::size_t ksz = d.kh * d.kw;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t co = 0; co < d.o; ++co) {
      const double* gop = gout + (n * d.o + co) * plane_out;
      for (std::size_t ci = 0; ci < d.c; ++ci) {
        const double* ip = x + (n * d.c + ci) * plane_in;
        double* gwp = gw + (co * d.c + ci) * ksz;
        for (std::size_t ky = 0; ky < d.kh; ++ky) {
          long long ylo, yhi;
          tap_range((long long)ky, d.pad, d.stride, (long long)d.h,
                    (long long)d.oh, ylo, yhi);
          for (std::size_t kx = 0; kx < d.kw; ++kx) {
            long long xlo, xhi;
            tap_range((long long)kx, d.pad, d.stride, (long long)d.w,
                      (long long)d.ow, xlo, xhi);
            if (xlo > xhi || ylo > yhi) continue;
            const long long xoff = (long long)kx - d.pad;
            double acc = 0.0;
            for (long long oy = ylo; oy <= yhi; ++oy) {
              const long long iy = oy * d.stride + (long long)ky - d.pad;
              const double* irow = ip + iy * (long long)d.w;
              const double* gorow = gop + oy * (long long)d.ow;
              if (d.stride == 1) {
                for (long long ox = xlo; ox <= xhi; ++ox)
                  acc += gorow[ox] * irow[ox + xoff];
              } else {
                for (long long ox = xlo; ox <= xhi; ++ox)
                  acc += gorow[ox] * irow[ox * d.stride + xoff];
              }
            }
            gwp[ky * d.kw + kx] += acc;
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& x, const Conv2dParams& p) {
  if (x.rank() != 4)
    throw ShapeError("conv2d: input must be NxCxHxW, got " + shape_str(x.shape()));
  if (p.weight.rank() != 4)
    throw ShapeError("conv2d: weight must be OxIxKHxKW, got " +
                     shape_str(p.weight.shape()));
  if (p.stride < 1 || p.padding < 0)
    throw ContractError("conv2d: stride must be >= 1 and padding >= 0");

  ConvDims d;
  d.n = x.dim(0);
  d.c = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.o = p.weight.dim(0);
  d.kh = p.weight.dim(2);
  d.kw = p.weight.dim(3);
  d.stride = p.stride;
  d.pad = p.padding;
  if (d.kh < 1 || d.kw < 1)
    throw ShapeError("conv2d: kernel dims must be >= 1, got " +
                     shape_str(p.weight.shape()));
  if (p.weight.dim(1) != d.c)
    throw ShapeError("conv2d: input channels " + std::to_string(d.c) +
                     " do not match weight input channels " +
                     std::to_string(p.weight.dim(1)));
  const long long oh =
      ((long long)d.h + 2 * d.pad - (long long)d.kh) / d.stride + 1;
  const long long ow =
      ((long long)d.w + 2 * d.pad - (long long)d.kw) / d.stride + 1;
  if (oh < 1 || ow < 1)
    throw ShapeError("conv2d: non-positive output size for input " +
                     shape_str(x.shape()) + " with kernel " +
                     shape_str(p.weight.shape()) + ", stride " +
                     std::to_string(p.stride) + ", padding " +
                     std::to_string(p.padding));
  d.oh = (std::size_t)oh;
  d.ow = (std::size_t)ow;
  const bool has_bias = p.bias.defined();
  if (has_bias && (p.bias.rank() != 1 || p.bias.dim(0) != d.o))
    throw ShapeError("conv2d: bias shape " + shape_str(p.bias.shape()) +
                     " does not match " + std::to_string(d.o) + " outputs");

  Tensor out = Tensor::zeros({d.n, d.o, d.oh, d.ow});
  conv_forward(x.data(), p.weight.data(), has_bias ? p.bias.data() : nullptr,
               out.data(), d);

  const bool rg = tape.recording() &&
                  (x.requires_grad() || p.weight.requires_grad() ||
                   (has_bias && p.bias.requires_grad()));
  out.set_requires_grad(rg);
  if (rg) {
    auto xd = x.impl(), wd = p.weight.impl(), od = out.impl();
    auto bd = has_bias ? p.bias.impl() : nullptr;
    tape.record([xd, wd, bd, od, d]() {
      if (od->grad.empty()) return;
      const double* g = od->grad.data();
      if (xd->requires_grad) {
        if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
        conv_backward_input(xd->grad.data(), wd->values.data(), g, d);
      }
      if (wd->requires_grad) {
        if (wd->grad.empty()) wd->grad.assign(wd->values.size(), 0.0);
        conv_backward_weight(xd->values.data(), wd->grad.data(), g, d);
      }
      if (bd && bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), 0.0);
        const std::size_t plane = d.oh * d.ow;
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t co = 0; co < d.o; ++co) {
            const double* gp = g + (n * d.o + co) * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
            bd->grad[co] += acc;
          }
      }
    });
  }
  detail::check_finite(out, "conv2d");
  return out;
}

Tensor max_pool2d(Tape& tape, const Tensor& x, int k, int stride) {
  if (x.rank() != 4)
    throw ShapeError("max_pool2d: input must be NxCxHxW, got " +
                     shape_str(x.shape()));
  if (k < 1 || stride < 1)
    throw ContractError("max_pool2d: window and stride must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if ((std::size_t)k > H || (std::size_t)k > W)
    throw ShapeError("max_pool2d: window " + std::to_string(k) + "x" +
                     std::to_string(k) + " larger than input " +
                     std::to_string(H) + "x" + std::to_string(W));
  const std::size_t OH = (H - (std::size_t)k) / (std::size_t)stride + 1;
  const std::size_t OW = (W - (std::size_t)k) / (std::size_t)stride + 1;

  Tensor out = Tensor::zeros({N, C, OH, OW});
  std::vector<std::size_t> argmax(N * C * OH * OW);
  {
    const double* xv = x.data();
    double* ov = out.data();
    std::size_t oi = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const double* plane = xv + nc * H * W;
      for (std::size_t oy = 0; oy < OH; ++oy) {
        for (std::size_t ox = 0; ox < OW; ++ox, ++oi) {
          const std::size_t y0 = oy * (std::size_t)stride;
          const std::size_t x0 = ox * (std::size_t)stride;
          double best = plane[y0 * W + x0];
          std::size_t best_i = y0 * W + x0;
          for (std::size_t ky = 0; ky < (std::size_t)k; ++ky)
            for (std::size_t kx = 0; kx < (std::size_t)k; ++kx) {
              const std::size_t i = (y0 + ky) * W + (x0 + kx);
              if (plane[i] > best) {  // ties keep the first in row-major scan
                best = plane[i];
                best_i = i;
              }
            }
          ov[oi] = best;
          argmax[oi] = nc * H * W + best_i;
        }
      }
    }
  }

  const bool rg = tape.recording() && x.requires_grad();
  out.set_requires_grad(rg);
  if (rg) {
    auto xd = x.impl(), od = out.impl();
    tape.record([xd, od, argmax = std::move(argmax)]() {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      const double* g = od->grad.data();
      double* gx = xd->grad.data();
      for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
    });
  }
  detail::check_finite(out, "max_pool2d");
  return out;
}

Tensor global_avg_pool(Tape& tape, const Tensor& x) {
  if (x.rank() != 4)
    throw ShapeError("global_avg_pool: input must be NxCxHxW, got " +
                     shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t plane = H * W;
  Tensor out = Tensor::zeros({N, C, 1, 1});
  {
    const double* xv = x.data();
    double* ov = out.data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      double acc = 0.0;
      const double* p = xv + nc * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      ov[nc] = acc / (double)plane;
    }
  }
  const bool rg = tape.recording() && x.requires_grad();
  out.set_requires_grad(rg);
  if (rg) {
    auto xd = x.impl(), od = out.impl();
    tape.record([xd, od, plane]() {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      const double* g = od->grad.data();
      double* gx = xd->grad.data();
      const double inv = 1.0 / (double)plane;
      for (std::size_t nc = 0; nc < od->values.size(); ++nc) {
        const double gv = g[nc] * inv;
        double* p = gx + nc * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += gv;
      }
    });
  }
  detail::check_finite(out, "global_avg_pool");
  return out;
}

Tensor bilinear_resize(Tape& tape, const Tensor& x, std::size_t out_h,
                       std::size_t out_w) {
  if (x.rank() != 4)
    throw ShapeError("bilinear_resize: input must be NxCxHxW, got " +
                     shape_str(x.shape()));
  if (out_h < 1 || out_w < 1)
    throw ContractError("bilinear_resize: output size must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const BilinearAxis ay = bilinear_axis(H, out_h);
  const BilinearAxis ax = bilinear_axis(W, out_w);

  Tensor out = Tensor::zeros({N, C, out_h, out_w});
  {
    const double* xv = x.data();
    double* ov = out.data();
    for (std::size_t nc = 0; nc < N * C; ++nc)
      bilinear_resize_plane(xv + nc * H * W, H, W, ov + nc * out_h * out_w, ay,
                            ax);
  }

  const bool rg = tape.recording() && x.requires_grad();
  out.set_requires_grad(rg);
  if (rg) {
    auto xd = x.impl(), od = out.impl();
    tape.record([xd, od, ay, ax, H, W, out_h, out_w]() {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      const double* g = od->grad.data();
      double* gx = xd->grad.data();
      const std::size_t planes = xd->values.size() / (H * W);
      for (std::size_t nc = 0; nc < planes; ++nc) {
        const double* gp = g + nc * out_h * out_w;
        double* gxp = gx + nc * H * W;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const double fy = ay.frac[oy];
          const std::size_t y0 = ay.lo[oy], y1 = ay.hi[oy];
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const double fx = ax.frac[ox];
            const std::size_t x0 = ax.lo[ox], x1 = ax.hi[ox];
            const double gv = gp[oy * out_w + ox];
            gxp[y0 * W + x0] += gv * (1.0 - fy) * (1.0 - fx);
            gxp[y0 * W + x1] += gv * (1.0 - fy) * fx;
            gxp[y1 * W + x0] += gv * fy * (1.0 - fx);
            gxp[y1 * W + x1] += gv * fy * fx;
          }
        }
      }
    });
  }
  detail::check_finite(out, "bilinear_resize");
  return out;
}

Tensor normalize(Tape& tape, const Tensor& x, NormParams& p, bool training) {
  if (x.rank() != 4)
    throw ShapeError("normalize: input must be NxCxHxW, got " +
                     shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (p.scale.numel() != C || p.shift.numel() != C)
    throw ShapeError("normalize: scale/shift length " +
                     std::to_string(p.scale.numel()) + " does not match " +
                     std::to_string(C) + " channels");
  if (p.epsilon <= 0.0) throw ContractError("normalize: epsilon must be > 0");

  const std::size_t plane = H * W;
  const double M = (double)(N * plane);
  Tensor out = Tensor::zeros({N, C, H, W});
  const double* xv = x.data();
  const double* gam = p.scale.data();
  const double* del = p.shift.data();
  double* ov = out.data();

  const bool rg = tape.recording() &&
                  (x.requires_grad() || p.scale.requires_grad() ||
                   p.shift.requires_grad());
  out.set_requires_grad(rg);

  auto record_affine = [&](std::vector<double> center,
                           std::vector<double> inv_std) {
    // Shared backward for the per-channel affine cases (disabled mode and
    // batch-mode inference), where center/inv_std are treated as constants.
    if (!rg) return;
    auto xd = x.impl(), sd = p.scale.impl(), hd = p.shift.impl(), od = out.impl();
    tape.record([xd, sd, hd, od, center = std::move(center),
                 inv_std = std::move(inv_std), N, C, plane]() {
      if (od->grad.empty()) return;
      const double* g = od->grad.data();
      const double* xv = xd->values.data();
      const double* gam = sd->values.data();
      const bool nx = xd->requires_grad, ns = sd->requires_grad,
                 nh = hd->requires_grad;
      if (nx && xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      if (ns && sd->grad.empty()) sd->grad.assign(sd->values.size(), 0.0);
      if (nh && hd->grad.empty()) hd->grad.assign(hd->values.size(), 0.0);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t base = (n * C + c) * plane;
          const double k = gam[c] * inv_std[c];
          double gs = 0.0, gh = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const double gv = g[base + i];
            if (nx) xd->grad[base + i] += gv * k;
            gs += gv * (xv[base + i] - center[c]) * inv_std[c];
            gh += gv;
          }
          if (ns) sd->grad[c] += gs;
          if (nh) hd->grad[c] += gh;
        }
    });
  };

  if (p.mode == NormMode::kDisabled) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i)
          ov[base + i] = gam[c] * xv[base + i] + del[c];
      }
    record_affine(std::vector<double>(C, 0.0), std::vector<double>(C, 1.0));
  } else if (!training) {
    const double* rm = p.running_mean.data();
    const double* rv = p.running_var.data();
    std::vector<double> inv_std(C);
    for (std::size_t c = 0; c < C; ++c)
      inv_std[c] = 1.0 / std::sqrt(rv[c] + p.epsilon);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * plane;
        const double k = gam[c] * inv_std[c];
        const double b = del[c] - k * rm[c];
        for (std::size_t i = 0; i < plane; ++i) ov[base + i] = k * xv[base + i] + b;
      }
    record_affine(std::vector<double>(p.running_mean.values().begin(),
                                      p.running_mean.values().end()),
                  std::move(inv_std));
  } else {
    // Batch statistics (population variance) per channel over N*H*W.
    std::vector<double> mean(C, 0.0), var(C, 0.0), inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* px = xv + (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += px[i];
      }
      mean[c] = acc / M;
      double vacc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* px = xv + (n * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double dlt = px[i] - mean[c];
          vacc += dlt * dlt;
        }
      }
      var[c] = vacc / M;
      inv_std[c] = 1.0 / std::sqrt(var[c] + p.epsilon);
    }
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (n * C + c) * plane;
        const double k = gam[c] * inv_std[c];
        const double b = del[c] - k * mean[c];
        for (std::size_t i = 0; i < plane; ++i) ov[base + i] = k * xv[base + i] + b;
      }
    // Running statistics update.
    {
      double* rm = p.running_mean.data();
      double* rv = p.running_var.data();
      for (std::size_t c = 0; c < C; ++c) {
        rm[c] = (1.0 - p.momentum) * rm[c] + p.momentum * mean[c];
        rv[c] = (1.0 - p.momentum) * rv[c] + p.momentum * var[c];
      }
    }
    if (rg) {
      auto xd = x.impl(), sd = p.scale.impl(), hd = p.shift.impl(),
           od = out.impl();
      tape.record([xd, sd, hd, od, mean = std::move(mean),
                   inv_std = std::move(inv_std), N, C, plane, M]() {
        if (od->grad.empty()) return;
        const double* g = od->grad.data();
        const double* xv = xd->values.data();
        const double* gam = sd->values.data();
        const bool nx = xd->requires_grad, ns = sd->requires_grad,
                   nh = hd->requires_grad;
        if (nx && xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
        if (ns && sd->grad.empty()) sd->grad.assign(sd->values.size(), 0.0);
        if (nh && hd->grad.empty()) hd->grad.assign(hd->values.size(), 0.0);
        for (std::size_t c = 0; c < C; ++c) {
          double sum_g = 0.0, sum_gx = 0.0, gh = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double gv = g[base + i];
              const double xh = (xv[base + i] - mean[c]) * inv_std[c];
              sum_g += gv;
              sum_gx += gv * xh;
              gh += gv;
            }
          }
          if (ns) sd->grad[c] += sum_gx;
          if (nh) hd->grad[c] += gh;
          if (nx) {
            const double k = gam[c] * inv_std[c];
            const double mg = sum_g / M;
            const double mgx = sum_gx / M;
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * C + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (xv[base + i] - mean[c]) * inv_std[c];
                xd->grad[base + i] += k * (g[base + i] - mg - xh * mgx);
              }
            }
          }
        }
      });
    }
  }
  detail::check_finite(out, "normalize");
  return out;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4)
    throw ShapeError("concat_channels: inputs must be NxCxHxW, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: batch/spatial mismatch between " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t N = a.dim(0), C1 = a.dim(1), C2 = b.dim(1), H = a.dim(2),
                    W = a.dim(3);
  const std::size_t plane = H * W;
  Tensor out = Tensor::zeros({N, C1 + C2, H, W});
  {
    const double* av = a.data();
    const double* bv = b.data();
    double* ov = out.data();
    for (std::size_t n = 0; n < N; ++n) {
      std::memcpy(ov + n * (C1 + C2) * plane, av + n * C1 * plane,
                  C1 * plane * sizeof(double));
      std::memcpy(ov + (n * (C1 + C2) + C1) * plane, bv + n * C2 * plane,
                  C2 * plane * sizeof(double));
    }
  }
  const bool rg = tape.recording() && (a.requires_grad() || b.requires_grad());
  out.set_requires_grad(rg);
  if (rg) {
    auto ad = a.impl(), bd = b.impl(), od = out.impl();
    tape.record([ad, bd, od, N, C1, C2, plane]() {
      if (od->grad.empty()) return;
      const double* g = od->grad.data();
      if (ad->requires_grad) {
        if (ad->grad.empty()) ad->grad.assign(ad->values.size(), 0.0);
        for (std::size_t n = 0; n < N; ++n) {
          const double* gp = g + n * (C1 + C2) * plane;
          double* ga = ad->grad.data() + n * C1 * plane;
          for (std::size_t i = 0; i < C1 * plane; ++i) ga[i] += gp[i];
        }
      }
      if (bd->requires_grad) {
        if (bd->grad.empty()) bd->grad.assign(bd->values.size(), 0.0);
        for (std::size_t n = 0; n < N; ++n) {
          const double* gp = g + (n * (C1 + C2) + C1) * plane;
          double* gb = bd->grad.data() + n * C2 * plane;
          for (std::size_t i = 0; i < C2 * plane; ++i) gb[i] += gp[i];
        }
      }
    });
  }
  detail::check_finite(out, "concat_channels");
  return out;
}

Tensor slice_channels(Tape& tape, const Tensor& x, std::size_t c_begin,
                      std::size_t c_end) {
  if (x.rank() != 4)
    throw ShapeError("slice_channels: input must be NxCxHxW, got " +
                     shape_str(x.shape()));
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (c_begin > c_end || c_end > C)
    throw ContractError("slice_channels: range [" + std::to_string(c_begin) +
                        ", " + std::to_string(c_end) + ") invalid for " +
                        std::to_string(C) + " channels");
  const std::size_t CS = c_end - c_begin;
  const std::size_t plane = H * W;
  Tensor out = Tensor::zeros({N, CS, H, W});
  for (std::size_t n = 0; n < N; ++n)
    std::memcpy(out.data() + n * CS * plane,
                x.data() + (n * C + c_begin) * plane, CS * plane * sizeof(double));
  const bool rg = tape.recording() && x.requires_grad();
  out.set_requires_grad(rg);
  if (rg) {
    auto xd = x.impl(), od = out.impl();
    tape.record([xd, od, N, C, CS, c_begin, plane]() {
      if (od->grad.empty()) return;
      if (xd->grad.empty()) xd->grad.assign(xd->values.size(), 0.0);
      const double* g = od->grad.data();
      for (std::size_t n = 0; n < N; ++n) {
        double* gx = xd->grad.data() + (n * C + c_begin) * plane;
        const double* gp = g + n * CS * plane;
        for (std::size_t i = 0; i < CS * plane; ++i) gx[i] += gp[i];
      }
    });
  }
  return out;
}

Tensor softmax_ce_loss(Tape& tape, const Tensor& logits, const LabelMap& labels,
                       int ignore) {
  if (logits.rank() != 4)
    throw ShapeError("softmax_ce_loss: logits must be NxKxHxW, got " +
                     shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2),
                    W = logits.dim(3);
  if (labels.n != N || labels.h != H || labels.w != W)
    throw ShapeError("softmax_ce_loss: labels " + std::to_string(labels.n) +
                     "x" + std::to_string(labels.h) + "x" +
                     std::to_string(labels.w) + " do not match logits " +
                     shape_str(logits.shape()));

  const std::size_t plane = H * W;
  const double* z = logits.data();
  std::size_t valid = 0;
  std::vector<double> lse(N * plane, 0.0);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < plane; ++i) {
      const int lab = labels.v[n * plane + i];
      if (lab == ignore) continue;
      if (lab < 0 || (std::size_t)lab >= K)
        throw ContractError("softmax_ce_loss: label " + std::to_string(lab) +
                            " outside [0, " + std::to_string(K) + ")");
      const double* zp = z + n * K * plane + i;
      double m = zp[0];
      std::size_t km = 0;
      for (std::size_t k = 1; k < K; ++k) {
        const double v = zp[k * plane];
        if (v > m) {
          m = v;
          km = k;
        }
      }
      double s = 0.0;
      for (std::size_t k = 0; k < K; ++k)
        if (k != km) s += std::exp(zp[k * plane] - m);
      const double l = m + std::log1p(s);
      lse[n * plane + i] = l;
      total += l - zp[(std::size_t)lab * plane];
      ++valid;
    }
  }
  if (valid == 0) throw ContractError("softmax_ce_loss: no valid pixels");
  Tensor out = Tensor::scalar(total / (double)valid);

  const bool rg = tape.recording() && logits.requires_grad();
  out.set_requires_grad(rg);
  if (rg) {
    auto zd = logits.impl(), od = out.impl();
    tape.record([zd, od, lab = labels.v, lse = std::move(lse), N, K, plane,
                 valid, ignore]() {
      if (od->grad.empty()) return;
      if (zd->grad.empty()) zd->grad.assign(zd->values.size(), 0.0);
      const double g = od->grad[0] / (double)valid;
      const double* z = zd->values.data();
      double* gz = zd->grad.data();
      for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t i = 0; i < plane; ++i) {
          const int l = lab[n * plane + i];
          if (l == ignore) continue;
          const double lsev = lse[n * plane + i];
          const double* zp = z + n * K * plane + i;
          double* gp = gz + n * K * plane + i;
          for (std::size_t k = 0; k < K; ++k) {
            const double p = std::exp(zp[k * plane] - lsev);
            gp[k * plane] += g * (p - (k == (std::size_t)l ? 1.0 : 0.0));
          }
        }
      }
    });
  }
  detail::check_finite(out, "softmax_ce_loss");
  return out;
}

}  // namespace dfdam
