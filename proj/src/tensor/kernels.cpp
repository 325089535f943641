#include "sdtn/kernels.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace sdtn::kernels {

namespace {

constexpr int kColumnBlock = 256;

bool is_pointwise(const ConvGeometry& g) {
    return g.kernel == 1 && g.stride == 1 && g.padding == 0;
}

// cols[(ic*k + ky)*k + kx][y*ow + x] = in[ic][y*s - p + ky][x*s - p + kx] (zero outside)
template <class T>
void im2col(const ConvGeometry& g, const T* in, T* cols) {
    const int oh = g.out_h(), ow = g.out_w();
    const int rows = static_cast<int>(g.patch_size());
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const int kx = r % g.kernel;
        const int ky = (r / g.kernel) % g.kernel;
        const int ic = r / (g.kernel * g.kernel);
        const T* src = in + static_cast<std::size_t>(ic) * g.in_h * g.in_w;
        T* dst = cols + r * plane;
        for (int y = 0; y < oh; ++y) {
            const int iy = y * g.stride - g.padding + ky;
            T* row = dst + static_cast<std::size_t>(y) * ow;
            if (iy < 0 || iy >= g.in_h) {
                std::fill(row, row + ow, T(0));
                continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * g.in_w;
            for (int x = 0; x < ow; ++x) {
                const int ix = x * g.stride - g.padding + kx;
                row[x] = (ix >= 0 && ix < g.in_w) ? srow[ix] : T(0);
            }
        }
    }
}

// Inverse scatter of im2col; one thread per input channel keeps writes disjoint.
template <class T>
void col2im_add(const ConvGeometry& g, const T* cols, T* grad_in) {
    const int oh = g.out_h(), ow = g.out_w();
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    const int kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
    for (int ic = 0; ic < g.in_channels; ++ic) {
        T* dst = grad_in + static_cast<std::size_t>(ic) * g.in_h * g.in_w;
        for (int k = 0; k < kk; ++k) {
            const int ky = k / g.kernel, kx = k % g.kernel;
            const T* src = cols + (static_cast<std::size_t>(ic) * kk + k) * plane;
            for (int y = 0; y < oh; ++y) {
                const int iy = y * g.stride - g.padding + ky;
                if (iy < 0 || iy >= g.in_h) continue;
                T* drow = dst + static_cast<std::size_t>(iy) * g.in_w;
                const T* srow = src + static_cast<std::size_t>(y) * ow;
                for (int x = 0; x < ow; ++x) {
                    const int ix = x * g.stride - g.padding + kx;
                    if (ix >= 0 && ix < g.in_w) drow[ix] += srow[x];
                }
            }
        }
    }
}

}  // namespace

template <class T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* weight, const T* bias, T* out) {
    const int plane = g.out_h() * g.out_w();
    const int rows = static_cast<int>(g.patch_size());
    const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
    const int oc_blocks = (g.out_channels + 3) / 4;
    std::vector<T> buffer;
    if (!is_pointwise(g)) buffer.resize(static_cast<std::size_t>(rows) * plane);

    for (int n = 0; n < g.batch; ++n) {
        const T* cols = in + n * in_stride;
        if (!is_pointwise(g)) {
            im2col(g, cols, buffer.data());
            cols = buffer.data();
        }
        T* out_n = out + static_cast<std::size_t>(n) * g.out_channels * plane;

#pragma omp parallel for schedule(static)
        for (int ob = 0; ob < oc_blocks; ++ob) {
            const int oc0 = ob * 4;
            const int count = std::min(4, g.out_channels - oc0);
            for (int j = 0; j < count; ++j) {
                T* o = out_n + static_cast<std::size_t>(oc0 + j) * plane;
                std::fill(o, o + plane, bias ? bias[oc0 + j] : T(0));
            }
            for (int p0 = 0; p0 < plane; p0 += kColumnBlock) {
                const int p1 = std::min(plane, p0 + kColumnBlock);
                if (count == 4) {
                    T* o0 = out_n + static_cast<std::size_t>(oc0) * plane;
                    T* o1 = o0 + plane;
                    T* o2 = o1 + plane;
                    T* o3 = o2 + plane;
                    const T* w0 = weight + static_cast<std::size_t>(oc0) * rows;
                    const T* w1 = w0 + rows;
                    const T* w2 = w1 + rows;
                    const T* w3 = w2 + rows;
                    for (int r = 0; r < rows; ++r) {
                        const T* c = cols + static_cast<std::size_t>(r) * plane;
                        const T a0 = w0[r], a1 = w1[r], a2 = w2[r], a3 = w3[r];
#pragma omp simd
                        for (int p = p0; p < p1; ++p) {
                            const T v = c[p];
                            o0[p] += a0 * v;
                            o1[p] += a1 * v;
                            o2[p] += a2 * v;
                            o3[p] += a3 * v;
                        }
                    }
                } else {
                    for (int j = 0; j < count; ++j) {
                        T* o = out_n + static_cast<std::size_t>(oc0 + j) * plane;
                        const T* w = weight + static_cast<std::size_t>(oc0 + j) * rows;
                        for (int r = 0; r < rows; ++r) {
                            const T* c = cols + static_cast<std::size_t>(r) * plane;
                            const T a = w[r];
#pragma omp simd
                            for (int p = p0; p < p1; ++p) o[p] += a * c[p];
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_out, const T* weight, T* grad_in) {
    const int plane = g.out_h() * g.out_w();
    const int rows = static_cast<int>(g.patch_size());
    const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
    const int row_blocks = (rows + 3) / 4;
    std::vector<T> buffer;
    if (!is_pointwise(g)) buffer.resize(static_cast<std::size_t>(rows) * plane);

    for (int n = 0; n < g.batch; ++n) {
        const T* go = grad_out + static_cast<std::size_t>(n) * g.out_channels * plane;
        T* dcols = grad_in + n * in_stride;
        if (!is_pointwise(g)) {
            std::fill(buffer.begin(), buffer.end(), T(0));
            dcols = buffer.data();
        }

#pragma omp parallel for schedule(static)
        for (int rb = 0; rb < row_blocks; ++rb) {
            const int r0 = rb * 4;
            const int count = std::min(4, rows - r0);
            for (int p0 = 0; p0 < plane; p0 += kColumnBlock) {
                const int p1 = std::min(plane, p0 + kColumnBlock);
                for (int oc = 0; oc < g.out_channels; ++oc) {
                    const T* gorow = go + static_cast<std::size_t>(oc) * plane;
                    const T* w = weight + static_cast<std::size_t>(oc) * rows + r0;
                    if (count == 4) {
                        T* d0 = dcols + static_cast<std::size_t>(r0) * plane;
                        T* d1 = d0 + plane;
                        T* d2 = d1 + plane;
                        T* d3 = d2 + plane;
                        const T a0 = w[0], a1 = w[1], a2 = w[2], a3 = w[3];
#pragma omp simd
                        for (int p = p0; p < p1; ++p) {
                            const T v = gorow[p];
                            d0[p] += a0 * v;
                            d1[p] += a1 * v;
                            d2[p] += a2 * v;
                            d3[p] += a3 * v;
                        }
                    } else {
                        for (int j = 0; j < count; ++j) {
                            T* d = dcols + static_cast<std::size_t>(r0 + j) * plane;
                            const T a = w[j];
#pragma omp simd
                            for (int p = p0; p < p1; ++p) d[p] += a * gorow[p];
                        }
                    }
                }
            }
        }
        if (!is_pointwise(g)) col2im_add(g, buffer.data(), grad_in + n * in_stride);
    }
}

template <class T>
void conv2d_backward_params(const ConvGeometry& g, const T* grad_out, const T* in, T* grad_weight,
                            T* grad_bias) {
    const int plane = g.out_h() * g.out_w();
    const int rows = static_cast<int>(g.patch_size());
    const std::size_t in_stride = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
    const int oc_blocks = (g.out_channels + 3) / 4;
    std::vector<T> buffer;
    if (!is_pointwise(g)) buffer.resize(static_cast<std::size_t>(rows) * plane);

    for (int n = 0; n < g.batch; ++n) {
        const T* go = grad_out + static_cast<std::size_t>(n) * g.out_channels * plane;
        const T* cols = in + n * in_stride;
        if (!is_pointwise(g)) {
            im2col(g, cols, buffer.data());
            cols = buffer.data();
        }

#pragma omp parallel for schedule(static)
        for (int ob = 0; ob < oc_blocks; ++ob) {
            const int oc0 = ob * 4;
            const int count = std::min(4, g.out_channels - oc0);
            if (grad_bias) {
                for (int j = 0; j < count; ++j) {
                    const T* gorow = go + static_cast<std::size_t>(oc0 + j) * plane;
                    T acc = 0;
#pragma omp simd reduction(+ : acc)
                    for (int p = 0; p < plane; ++p) acc += gorow[p];
                    grad_bias[oc0 + j] += acc;
                }
            }
            if (count == 4) {
                const T* g0 = go + static_cast<std::size_t>(oc0) * plane;
                const T* g1 = g0 + plane;
                const T* g2 = g1 + plane;
                const T* g3 = g2 + plane;
                T* w0 = grad_weight + static_cast<std::size_t>(oc0) * rows;
                T* w1 = w0 + rows;
                T* w2 = w1 + rows;
                T* w3 = w2 + rows;
                for (int r = 0; r < rows; ++r) {
                    const T* c = cols + static_cast<std::size_t>(r) * plane;
                    T a0 = 0, a1 = 0, a2 = 0, a3 = 0;
#pragma omp simd reduction(+ : a0, a1, a2, a3)
                    for (int p = 0; p < plane; ++p) {
                        const T v = c[p];
                        a0 += g0[p] * v;
                        a1 += g1[p] * v;
                        a2 += g2[p] * v;
                        a3 += g3[p] * v;
                    }
                    w0[r] += a0;
                    w1[r] += a1;
                    w2[r] += a2;
                    w3[r] += a3;
                }
            } else {
                for (int j = 0; j < count; ++j) {
                    const T* gorow = go + static_cast<std::size_t>(oc0 + j) * plane;
                    T* w = grad_weight + static_cast<std::size_t>(oc0 + j) * rows;
                    for (int r = 0; r < rows; ++r) {
                        const T* c = cols + static_cast<std::size_t>(r) * plane;
                        T acc = 0;
#pragma omp simd reduction(+ : acc)
                        for (int p = 0; p < plane; ++p) acc += gorow[p] * c[p];
                        w[r] += acc;
                    }
                }
            }
        }
    }
}

template <class T>
void maxpool2d_forward(const PoolGeometry& g, const T* in, T* out, std::int64_t* argmax) {
    const int oh = g.out_h(), ow = g.out_w();
    const int planes = g.batch * g.channels;
#pragma omp parallel for schedule(static)
    for (int pl = 0; pl < planes; ++pl) {
        const std::int64_t in_base = static_cast<std::int64_t>(pl) * g.in_h * g.in_w;
        const std::int64_t out_base = static_cast<std::int64_t>(pl) * oh * ow;
        const T* src = in + in_base;
        for (int y = 0; y < oh; ++y) {
            const int y0 = std::max(0, y * g.stride - g.padding);
            const int y1 = std::min(g.in_h, y * g.stride - g.padding + g.kernel);
            for (int x = 0; x < ow; ++x) {
                const int x0 = std::max(0, x * g.stride - g.padding);
                const int x1 = std::min(g.in_w, x * g.stride - g.padding + g.kernel);
                T best = -std::numeric_limits<T>::infinity();
                std::int64_t best_idx = -1;
                for (int iy = y0; iy < y1; ++iy)
                    for (int ix = x0; ix < x1; ++ix) {
                        const std::int64_t idx = static_cast<std::int64_t>(iy) * g.in_w + ix;
                        if (best_idx < 0 || src[idx] > best) {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                out[out_base + static_cast<std::int64_t>(y) * ow + x] = best;
                if (argmax) argmax[out_base + static_cast<std::int64_t>(y) * ow + x] = in_base + best_idx;
            }
        }
    }
}

template <class T>
void maxpool2d_backward(const PoolGeometry& g, const T* grad_out, const std::int64_t* argmax,
                        T* grad_in) {
    const std::int64_t out_plane = static_cast<std::int64_t>(g.out_h()) * g.out_w();
    const int planes = g.batch * g.channels;
#pragma omp parallel for schedule(static)
    for (int pl = 0; pl < planes; ++pl) {
        const std::int64_t base = pl * out_plane;
        for (std::int64_t i = 0; i < out_plane; ++i) grad_in[argmax[base + i]] += grad_out[base + i];
    }
}

#define SDTN_INSTANTIATE(T)                                                                           \
    template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);          \
    template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);             \
    template void conv2d_backward_params<T>(const ConvGeometry&, const T*, const T*, T*, T*);        \
    template void maxpool2d_forward<T>(const PoolGeometry&, const T*, T*, std::int64_t*);            \
    template void maxpool2d_backward<T>(const PoolGeometry&, const T*, const std::int64_t*, T*);

SDTN_INSTANTIATE(float)
SDTN_INSTANTIATE(double)
#undef SDTN_INSTANTIATE

}  // namespace sdtn::kernels
