#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace dfdam {

// Planar RGB image, values are doubles (raw pixels live in [0,255]; after
// mean subtraction they may be negative).
struct Image {
  std::size_t h = 0, w = 0;
  std::vector<double> v;  // 3 planes, row-major

  static Image zeros(std::size_t h, std::size_t w) {
    Image im;
    im.h = h;
    im.w = w;
    im.v.assign(3 * h * w, 0.0);
    return im;
  }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return v[(c * h + y) * w + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return v[(c * h + y) * w + x];
  }
};

// Integer class-label maps; n > 1 for stacked batches.
struct LabelMap {
  std::size_t n = 1, h = 0, w = 0;
  std::vector<int> v;

  static LabelMap filled(std::size_t n, std::size_t h, std::size_t w, int value) {
    LabelMap m;
    m.n = n;
    m.h = h;
    m.w = w;
    m.v.assign(n * h * w, value);
    return m;
  }

  int& at(std::size_t i, std::size_t y, std::size_t x) {
    return v[(i * h + y) * w + x];
  }
  int at(std::size_t i, std::size_t y, std::size_t x) const {
    return v[(i * h + y) * w + x];
  }
};

struct Sample {
  std::string id;
  Image image;
  LabelMap labels;
};

}  // namespace dfdam
