#pragma once

#include <cstdint>
#include <optional>

#include "dfdam/image.hpp"
#include "dfdam/tensor.hpp"

namespace dfdam {

// Learnable 2D convolution parameters. Convolution is cross-correlation
// (no kernel flip) with zero padding.
struct Conv2dParams {
  Tensor weight;  // O x I x kh x kw
  Tensor bias;    // O; undefined tensor means no bias
  int stride = 1;
  int padding = 0;
};

Tensor conv2d(Tape& tape, const Tensor& x, const Conv2dParams& p);

Tensor max_pool2d(Tape& tape, const Tensor& x, int k = 2, int stride = 2);

Tensor global_avg_pool(Tape& tape, const Tensor& x);

Tensor bilinear_resize(Tape& tape, const Tensor& x, std::size_t out_h,
                       std::size_t out_w);

enum class NormMode { kBatch, kDisabled };

struct NormParams {
  Tensor scale;  // gamma, per channel
  Tensor shift;  // delta, per channel
  Tensor running_mean;
  Tensor running_var;
  NormMode mode = NormMode::kBatch;
  double epsilon = 1e-5;
  double momentum = 0.1;  // running <- (1-m) running + m batch
};

// Batch mode standardizes per channel over N*H*W with batch statistics while
// training and with the running statistics at inference; disabled mode is the
// per-channel affine map alone.
Tensor normalize(Tape& tape, const Tensor& x, NormParams& p, bool training);

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);

Tensor slice_channels(Tape& tape, const Tensor& x, std::size_t c_begin,
                      std::size_t c_end);

// Mean over valid pixels of -log softmax(logits)[label]; pixels whose label
// equals `ignore` contribute to neither the loss nor the gradient.
Tensor softmax_ce_loss(Tape& tape, const Tensor& logits, const LabelMap& labels,
                       int ignore);

}  // namespace dfdam
