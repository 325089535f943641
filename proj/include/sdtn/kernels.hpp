#pragma once

#include <cstddef>
#include <cstdint>

// Raw NCHW compute kernels. The parallel versions in `sdtn::kernels` split
// work only across independent output elements (or disjoint gradient rows),
// so every reduction runs in a fixed order and results do not depend on the
// thread count. `sdtn::reference` holds plain serial loops used as test
// oracles and as the benchmark baseline.

namespace sdtn {

struct ConvGeometry {
    int batch = 0;
    int in_channels = 0;
    int in_h = 0;
    int in_w = 0;
    int out_channels = 0;
    int kernel = 1;
    int stride = 1;
    int padding = 0;

    int out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
    std::size_t patch_size() const { return static_cast<std::size_t>(in_channels) * kernel * kernel; }
};

struct PoolGeometry {
    int batch = 0;
    int channels = 0;
    int in_h = 0;
    int in_w = 0;
    int kernel = 1;
    int stride = 1;
    int padding = 0;

    int out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
};

namespace kernels {

// out = conv(in, weight) + bias; bias may be null.
template <class T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out);

// grad_in += d(out)/d(in)^T grad_out
template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_out, const T* weight, T* grad_in);

// grad_weight += ..., grad_bias += ... (grad_bias may be null)
template <class T>
void conv2d_backward_params(const ConvGeometry& g, const T* grad_out, const T* in, T* grad_weight,
                            T* grad_bias);

// Window maximum with -inf padding. argmax receives the flat input index of
// the winning element (first maximum in row-major window order).
template <class T>
void maxpool2d_forward(const PoolGeometry& g, const T* in, T* out, std::int64_t* argmax);

template <class T>
void maxpool2d_backward(const PoolGeometry& g, const T* grad_out, const std::int64_t* argmax,
                        T* grad_in);

}  // namespace kernels

namespace reference {

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out);

template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_out, const T* weight, T* grad_in);

template <class T>
void conv2d_backward_params(const ConvGeometry& g, const T* grad_out, const T* in, T* grad_weight,
                            T* grad_bias);

template <class T>
void maxpool2d_forward(const PoolGeometry& g, const T* in, T* out, std::int64_t* argmax);

}  // namespace reference

}  // namespace sdtn
