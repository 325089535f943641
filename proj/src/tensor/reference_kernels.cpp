#include <limits>

#include "sdtn/kernels.hpp"

namespace sdtn::reference {

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int n = 0; n < g.batch; ++n)
        for (int oc = 0; oc < g.out_channels; ++oc)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    T acc = bias ? bias[oc] : T(0);
                    for (int ic = 0; ic < g.in_channels; ++ic)
                        for (int ky = 0; ky < g.kernel; ++ky)
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int iy = y * g.stride - g.padding + ky;
                                const int ix = x * g.stride - g.padding + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                acc += in[((n * g.in_channels + ic) * g.in_h + iy) * g.in_w + ix] *
                                       weight[((oc * g.in_channels + ic) * g.kernel + ky) * g.kernel + kx];
                            }
                    out[((n * g.out_channels + oc) * oh + y) * ow + x] = acc;
                }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_out, const T* weight, T* grad_in) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int n = 0; n < g.batch; ++n)
        for (int oc = 0; oc < g.out_channels; ++oc)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const T go = grad_out[((n * g.out_channels + oc) * oh + y) * ow + x];
                    for (int ic = 0; ic < g.in_channels; ++ic)
                        for (int ky = 0; ky < g.kernel; ++ky)
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int iy = y * g.stride - g.padding + ky;
                                const int ix = x * g.stride - g.padding + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                grad_in[((n * g.in_channels + ic) * g.in_h + iy) * g.in_w + ix] +=
                                    go * weight[((oc * g.in_channels + ic) * g.kernel + ky) * g.kernel + kx];
                            }
                }
}

template <class T>
void conv2d_backward_params(const ConvGeometry& g, const T* grad_out, const T* in, T* grad_weight,
                            T* grad_bias) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int n = 0; n < g.batch; ++n)
        for (int oc = 0; oc < g.out_channels; ++oc)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    const T go = grad_out[((n * g.out_channels + oc) * oh + y) * ow + x];
                    if (grad_bias) grad_bias[oc] += go;
                    for (int ic = 0; ic < g.in_channels; ++ic)
                        for (int ky = 0; ky < g.kernel; ++ky)
                            for (int kx = 0; kx < g.kernel; ++kx) {
                                const int iy = y * g.stride - g.padding + ky;
                                const int ix = x * g.stride - g.padding + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                grad_weight[((oc * g.in_channels + ic) * g.kernel + ky) * g.kernel + kx] +=
                                    go * in[((n * g.in_channels + ic) * g.in_h + iy) * g.in_w + ix];
                            }
                }
}

template <class T>
void maxpool2d_forward(const PoolGeometry& g, const T* in, T* out, std::int64_t* argmax) {
    const int oh = g.out_h(), ow = g.out_w();
    for (int n = 0; n < g.batch; ++n)
        for (int c = 0; c < g.channels; ++c)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int64_t best_idx = -1;
                    for (int ky = 0; ky < g.kernel; ++ky)
                        for (int kx = 0; kx < g.kernel; ++kx) {
                            const int iy = y * g.stride - g.padding + ky;
                            const int ix = x * g.stride - g.padding + kx;
                            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                            const std::int64_t idx = ((static_cast<std::int64_t>(n) * g.channels + c) * g.in_h + iy) * g.in_w + ix;
                            if (best_idx < 0 || in[idx] > best) {
                                best = in[idx];
                                best_idx = idx;
                            }
                        }
                    const std::int64_t o = ((static_cast<std::int64_t>(n) * g.channels + c) * oh + y) * ow + x;
                    out[o] = best;
                    if (argmax) argmax[o] = best_idx;
                }
}

#define SDTN_INSTANTIATE(T)                                                                           \
    template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);          \
    template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);             \
    template void conv2d_backward_params<T>(const ConvGeometry&, const T*, const T*, T*, T*);        \
    template void maxpool2d_forward<T>(const PoolGeometry&, const T*, T*, std::int64_t*);

SDTN_INSTANTIATE(float)
SDTN_INSTANTIATE(double)
#undef SDTN_INSTANTIATE

}  // namespace sdtn::reference
