#include "dfdam/interp.hpp"

#include <cmath>

namespace dfdam {

BilinearAxis bilinear_axis(std::size_t in, std::size_t out) {
  BilinearAxis ax;
  ax.lo.resize(out);
  ax.hi.resize(out);
  ax.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (s < 0.0) s = 0.0;
    const double max_s = static_cast<double>(in - 1);
    if (s > max_s) s = max_s;
    std::size_t lo = static_cast<std::size_t>(s);
    if (lo > in - 1) lo = in - 1;
    std::size_t hi = lo + 1 < in ? lo + 1 : in - 1;
    ax.lo[d] = lo;
    ax.hi[d] = hi;
    ax.frac[d] = s - static_cast<double>(lo);
  }
  return ax;
}

void bilinear_resize_plane(const double* in, std::size_t ih, std::size_t iw,
                           double* out, const BilinearAxis& ay,
                           const BilinearAxis& ax) {
  (void)ih;
  const std::size_t oh = ay.lo.size(), ow = ax.lo.size();
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const double fy = ay.frac[oy];
    const double* r0 = in + ay.lo[oy] * iw;
    const double* r1 = in + ay.hi[oy] * iw;
    double* orow = out + oy * ow;
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const double fx = ax.frac[ox];
      const std::size_t x0 = ax.lo[ox], x1 = ax.hi[ox];
      const double top = r0[x0] + fx * (r0[x1] - r0[x0]);
      const double bot = r1[x0] + fx * (r1[x1] - r1[x0]);
      orow[ox] = top + fy * (bot - top);
    }
  }
}

std::vector<std::size_t> nearest_axis(std::size_t in, std::size_t out) {
  std::vector<std::size_t> idx(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double s = (static_cast<double>(d) + 0.5) * scale;
    std::size_t i = static_cast<std::size_t>(s);
    if (i >= in) i = in - 1;
    idx[d] = i;
  }
  return idx;
}

}  // namespace dfdam
