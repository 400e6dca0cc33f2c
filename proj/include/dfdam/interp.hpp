#pragma once

#include <cstddef>
#include <vector>

namespace dfdam {

// Half-pixel-center bilinear sampling shared by the tensor op, image
// augmentation, and evaluation-time probability resizing: the source
// coordinate of output index d is (d + 0.5) * (in / out) - 0.5, clamped to
// [0, in - 1].
struct BilinearAxis {
  std::vector<std::size_t> lo, hi;  // neighbor indices
  std::vector<double> frac;         // blend toward hi
};

BilinearAxis bilinear_axis(std::size_t in, std::size_t out);

void bilinear_resize_plane(const double* in, std::size_t ih, std::size_t iw,
                           double* out, const BilinearAxis& ay,
                           const BilinearAxis& ax);

// Nearest-neighbor index per output position: floor((d + 0.5) * in / out),
// clamped. Used for label maps.
std::vector<std::size_t> nearest_axis(std::size_t in, std::size_t out);

}  // namespace dfdam
