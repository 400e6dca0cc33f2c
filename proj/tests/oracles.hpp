#pragma once

// Independent reference implementations used as test oracles. These stay
// deliberately naive and separate from the library code paths they check.

#include <cmath>
#include <cstddef>
#include <vector>

#include "dfdam/tensor.hpp"

namespace oracle {

// Quadruple-loop cross-correlation with zero padding.
inline dfdam::Tensor naive_conv2d(const dfdam::Tensor& x, const dfdam::Tensor& w,
                                  const dfdam::Tensor& bias, int stride,
                                  int pad) {
  const long long N = (long long)x.dim(0), C = (long long)x.dim(1),
                  H = (long long)x.dim(2), W = (long long)x.dim(3);
  const long long O = (long long)w.dim(0), KH = (long long)w.dim(2),
                  KW = (long long)w.dim(3);
  const long long OH = (H + 2 * pad - KH) / stride + 1;
  const long long OW = (W + 2 * pad - KW) / stride + 1;
  dfdam::Tensor out = dfdam::Tensor::zeros(
      {(std::size_t)N, (std::size_t)O, (std::size_t)OH, (std::size_t)OW});
  for (long long n = 0; n < N; ++n)
    for (long long o = 0; o < O; ++o)
      for (long long oy = 0; oy < OH; ++oy)
        for (long long ox = 0; ox < OW; ++ox) {
          double acc = bias.defined() ? bias.values()[(std::size_t)o] : 0.0;
          for (long long c = 0; c < C; ++c)
            for (long long ky = 0; ky < KH; ++ky)
              for (long long kx = 0; kx < KW; ++kx) {
                const long long iy = oy * stride + ky - pad;
                const long long ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += w.values()[(std::size_t)(((o * C + c) * KH + ky) * KW + kx)] *
                       x.values()[(std::size_t)(((n * C + c) * H + iy) * W + ix)];
              }
          out.data()[(std::size_t)(((n * O + o) * OH + oy) * OW + ox)] = acc;
        }
  return out;
}

// Direct evaluation of one bilinear sample with half-pixel centers.
inline double bilinear_sample(const std::vector<double>& plane, std::size_t h,
                              std::size_t w, std::size_t oh, std::size_t ow,
                              std::size_t oy, std::size_t ox) {
  auto src = [](std::size_t d, std::size_t in, std::size_t out) {
    double s = (d + 0.5) * (double)in / (double)out - 0.5;
    if (s < 0) s = 0;
    if (s > (double)(in - 1)) s = (double)(in - 1);
    return s;
  };
  const double sy = src(oy, h, oh), sx = src(ox, w, ow);
  const std::size_t y0 = (std::size_t)sy, x0 = (std::size_t)sx;
  const std::size_t y1 = y0 + 1 < h ? y0 + 1 : h - 1;
  const std::size_t x1 = x0 + 1 < w ? x0 + 1 : w - 1;
  const double fy = sy - (double)y0, fx = sx - (double)x0;
  return (1 - fy) * (1 - fx) * plane[y0 * w + x0] +
         (1 - fy) * fx * plane[y0 * w + x1] +
         fy * (1 - fx) * plane[y1 * w + x0] + fy * fx * plane[y1 * w + x1];
}

}  // namespace oracle
