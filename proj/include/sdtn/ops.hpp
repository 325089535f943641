#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "sdtn/tensor.hpp"

// Differentiable operations. Every op here registers a backward function;
// this is the complete set the detector graphs and losses are built from.
namespace sdtn::ops {

struct ConvParams {
    Tensor weight;  // (out_channels, in_channels, k, k)
    Tensor bias;    // (1, out_channels, 1, 1); may be undefined
    int stride = 1;
    int padding = 0;
};

// Running statistics for batch normalisation. Updated only in training mode.
struct BatchNormStats {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;

    explicit BatchNormStats(int channels = 0)
        : running_mean(static_cast<std::size_t>(channels), 0.0),
          running_var(static_cast<std::size_t>(channels), 1.0) {}
};

Tensor conv2d(const Tensor& input, const ConvParams& params, std::string_view layer = {});

// -inf padding: padded positions never win.
Tensor maxpool2d(const Tensor& input, int kernel, int stride, int padding);

Tensor silu(const Tensor& input);

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormStats& stats, double eps, bool training,
                   std::string_view layer = {});

Tensor concat_channels(std::span<const Tensor> inputs);
Tensor slice_channels(const Tensor& input, int begin, int count);

Tensor add(const Tensor& a, const Tensor& b);

Tensor upsample_nearest2x(const Tensor& input);

// Output channel block (i*scale + j) holds the input pixels at
// (row % scale == i, col % scale == j), each block in input channel order.
Tensor space_to_depth(const Tensor& input, int scale, std::string_view layer = {});
Tensor depth_to_space(const Tensor& input, int scale);

// Scalar (1x1x1x1) sum of all elements.
Tensor sum(const Tensor& input);

}  // namespace sdtn::ops
