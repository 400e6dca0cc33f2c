#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dfdam/tensor.hpp"

namespace dfdam {

struct GradcheckOptions {
  double h = 1e-5;
  // Coordinates probed per tensor; tensors at most this size are probed
  // exhaustively, larger ones on a seeded random subset.
  std::size_t max_coords_per_tensor = 64;
  std::uint64_t coord_seed = 0x5eedULL;
};

// Compares analytic gradients of the scalar-valued f against central
// differences (f(x+h e_i) - f(x-h e_i)) / (2h) for every tensor in `inputs`.
// Relative error uses a max(1, |numeric|) denominator. Returns the maximum
// relative error over all probed coordinates.
double gradcheck_many(const std::function<Tensor(Tape&)>& f,
                      const std::vector<Tensor>& inputs,
                      const GradcheckOptions& opts = {});

// Single-input form.
double gradcheck(const std::function<Tensor(Tape&, const Tensor&)>& f,
                 const Tensor& x, double h = 1e-5);

}  // namespace dfdam
