#include "sdtn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>

#include "sdtn/kernels.hpp"

namespace sdtn::ops {

namespace {

std::string where(std::string_view layer) {
    return layer.empty() ? std::string() : " in layer " + std::string(layer);
}

void require_same_precision(const Tensor& a, const Tensor& b, std::string_view op) {
    if (a.precision() != b.precision())
        throw ContractError(std::string(op) + ": mixed tensor precision");
}

template <class T>
T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

Tensor conv2d(const Tensor& input, const ConvParams& params, std::string_view layer) {
    const Shape& in = input.shape();
    const Shape& ws = params.weight.shape();
    if (ws.h != ws.w) throw ConfigError("conv2d: non-square kernel" + where(layer));
    if (in.c != ws.c)
        throw ConfigError("conv2d: input has " + std::to_string(in.c) + " channels, weight expects " +
                          std::to_string(ws.c) + where(layer));
    if (params.stride < 1 || params.padding < 0)
        throw ConfigError("conv2d: invalid stride/padding" + where(layer));
    if (params.bias.defined() && params.bias.numel() != static_cast<std::size_t>(ws.n))
        throw ConfigError("conv2d: bias length mismatch" + where(layer));
    require_same_precision(input, params.weight, "conv2d");

    ConvGeometry g;
    g.batch = in.n;
    g.in_channels = in.c;
    g.in_h = in.h;
    g.in_w = in.w;
    g.out_channels = ws.n;
    g.kernel = ws.h;
    g.stride = params.stride;
    g.padding = params.padding;
    if (in.h + 2 * g.padding < g.kernel || in.w + 2 * g.padding < g.kernel || g.out_h() <= 0 || g.out_w() <= 0)
        throw ShapeError("conv2d: non-positive output size for input " + in.str() + where(layer));

    const Shape out_shape{in.n, ws.n, g.out_h(), g.out_w()};
    Tensor weight = params.weight;
    Tensor bias = params.bias;
    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);

    BackwardFn backward = [input, weight, bias, g](const Tensor& grad_out) {
        dispatch(grad_out.precision(), [&](auto tag) {
            using T = decltype(tag);
            const T* go = grad_out.data<T>().data();
            if (input.requires_grad())
                kernels::conv2d_backward_input(g, go, weight.data<T>().data(), input.grad_buffer<T>().data());
            const bool want_w = weight.requires_grad();
            const bool want_b = bias.defined() && bias.requires_grad();
            if (want_w || want_b) {
                std::vector<T> scratch_w;
                T* gw = nullptr;
                if (want_w) {
                    gw = weight.grad_buffer<T>().data();
                } else {
                    scratch_w.assign(weight.numel(), T(0));
                    gw = scratch_w.data();
                }
                kernels::conv2d_backward_params(g, go, input.data<T>().data(), gw,
                                                want_b ? bias.grad_buffer<T>().data() : nullptr);
            }
        });
    };

    Tensor out = Tensor::make_result(out_shape, input.precision(), "conv2d", std::move(inputs), std::move(backward));
    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        T* dst = out.result_data<T>().data();
        kernels::conv2d_forward(g, input.data<T>().data(), weight.data<T>().data(),
                                bias.defined() ? bias.data<T>().data() : nullptr, dst);
    });
    return out;
}

Tensor maxpool2d(const Tensor& input, int kernel, int stride, int padding) {
    const Shape& in = input.shape();
    if (kernel < 1 || stride < 1 || padding < 0 || padding >= kernel)
        throw ShapeError("maxpool2d: invalid window k=" + std::to_string(kernel) + " s=" +
                         std::to_string(stride) + " p=" + std::to_string(padding));
    PoolGeometry g;
    g.batch = in.n;
    g.channels = in.c;
    g.in_h = in.h;
    g.in_w = in.w;
    g.kernel = kernel;
    g.stride = stride;
    g.padding = padding;
    if (in.h + 2 * padding < kernel || in.w + 2 * padding < kernel)
        throw ShapeError("maxpool2d: window larger than padded input " + in.str());
    const Shape out_shape{in.n, in.c, g.out_h(), g.out_w()};

    auto argmax = std::make_shared<std::vector<std::int64_t>>(out_shape.numel());
    BackwardFn backward = [input, argmax, g](const Tensor& grad_out) {
        dispatch(grad_out.precision(), [&](auto tag) {
            using T = decltype(tag);
            kernels::maxpool2d_backward(g, grad_out.data<T>().data(), argmax->data(),
                                        input.grad_buffer<T>().data());
        });
    };
    Tensor out = Tensor::make_result(out_shape, input.precision(), "maxpool2d", {input}, std::move(backward));
    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        kernels::maxpool2d_forward(g, input.data<T>().data(), out.result_data<T>().data(),
                                   argmax->data());
    });
    return out;
}

Tensor silu(const Tensor& input) {
    BackwardFn backward = [input](const Tensor& grad_out) {
        dispatch(input.precision(), [&](auto tag) {
            using T = decltype(tag);
            auto x = input.data<T>();
            auto go = grad_out.data<T>();
            auto gi = input.grad_buffer<T>();
            for (std::size_t i = 0; i < x.size(); ++i) {
                const T s = sigmoid(x[i]);
                gi[i] += go[i] * s * (T(1) + x[i] * (T(1) - s));
            }
        });
    };
    Tensor out = Tensor::make_result(input.shape(), input.precision(), "silu", {input}, std::move(backward));
    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        T* y = out.result_data<T>().data();
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * sigmoid(x[i]);
    });
    return out;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                   double eps, bool training, std::string_view layer) {
    const Shape& s = input.shape();
    const auto c = static_cast<std::size_t>(s.c);
    if (gamma.numel() != c || beta.numel() != c || stats.running_mean.size() != c ||
        stats.running_var.size() != c)
        throw ConfigError("batchnorm2d: parameter length does not match " + std::to_string(s.c) +
                          " channels" + where(layer));
    require_same_precision(input, gamma, "batchnorm2d");

    const std::size_t plane = s.plane();
    const std::size_t count = static_cast<std::size_t>(s.n) * plane;
    auto mean = std::make_shared<std::vector<double>>(c);
    auto inv_std = std::make_shared<std::vector<double>>(c);

    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        for (std::size_t ch = 0; ch < c; ++ch) {
            double m, v;
            if (training) {
                double acc = 0.0;
                for (int n = 0; n < s.n; ++n) {
                    const T* p = x.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) acc += p[i];
                }
                m = acc / static_cast<double>(count);
                double sq = 0.0;
                for (int n = 0; n < s.n; ++n) {
                    const T* p = x.data() + (static_cast<std::size_t>(n) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
                }
                v = sq / static_cast<double>(count);
                const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : v;
                stats.running_mean[ch] = (1.0 - stats.momentum) * stats.running_mean[ch] + stats.momentum * m;
                stats.running_var[ch] = (1.0 - stats.momentum) * stats.running_var[ch] + stats.momentum * unbiased;
            } else {
                m = stats.running_mean[ch];
                v = stats.running_var[ch];
            }
            (*mean)[ch] = m;
            (*inv_std)[ch] = 1.0 / std::sqrt(v + eps);
        }
    });

    BackwardFn backward = [input, gamma, beta, mean, inv_std, training, count](const Tensor& grad_out) {
        dispatch(input.precision(), [&](auto tag) {
            using T = decltype(tag);
            const Shape& s = input.shape();
            const std::size_t c = static_cast<std::size_t>(s.c);
            const std::size_t plane = s.plane();
            auto x = input.data<T>();
            auto go = grad_out.data<T>();
            auto gm = gamma.data<T>();
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double m = (*mean)[ch];
                const double is = (*inv_std)[ch];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int n = 0; n < s.n; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double xhat = (x[base + i] - m) * is;
                        sum_dy += go[base + i];
                        sum_dy_xhat += go[base + i] * xhat;
                    }
                }
                if (gamma.requires_grad()) gamma.grad_buffer<T>()[ch] += static_cast<T>(sum_dy_xhat);
                if (beta.requires_grad()) beta.grad_buffer<T>()[ch] += static_cast<T>(sum_dy);
                if (!input.requires_grad()) continue;
                auto gi = input.grad_buffer<T>();
                const double g = gm[ch];
                const double inv_count = 1.0 / static_cast<double>(count);
                for (int n = 0; n < s.n; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        if (training) {
                            const double xhat = (x[base + i] - m) * is;
                            gi[base + i] += static_cast<T>(
                                g * is * (go[base + i] - sum_dy * inv_count - xhat * sum_dy_xhat * inv_count));
                        } else {
                            gi[base + i] += static_cast<T>(g * is * go[base + i]);
                        }
                    }
                }
            }
        });
    };

    Tensor out = Tensor::make_result(s, input.precision(), "batchnorm2d", {input, gamma, beta}, std::move(backward));
    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        auto gm = gamma.data<T>();
        auto bt = beta.data<T>();
        T* y = out.result_data<T>().data();
        for (int n = 0; n < s.n; ++n)
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t base = (static_cast<std::size_t>(n) * c + ch) * plane;
                const double m = (*mean)[ch], is = (*inv_std)[ch];
                const double g = gm[ch], b = bt[ch];
                for (std::size_t i = 0; i < plane; ++i)
                    y[base + i] = static_cast<T>(g * ((x[base + i] - m) * is) + b);
            }
    });
    return out;
}

Tensor concat_channels(std::span<const Tensor> inputs) {
    if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& first = inputs[0].shape();
    int channels = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Shape& s = inputs[i].shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw ShapeError("concat_channels: input " + std::to_string(i) + " (" + s.str() +
                             ") does not match input 0 (" + first.str() + ")");
        require_same_precision(inputs[0], inputs[i], "concat_channels");
        channels += s.c;
    }
    const Shape out_shape{first.n, channels, first.h, first.w};
    std::vector<Tensor> ins(inputs.begin(), inputs.end());

    BackwardFn backward = [ins, out_shape](const Tensor& grad_out) {
        dispatch(grad_out.precision(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_out.data<T>();
            const std::size_t plane = out_shape.plane();
            int offset = 0;
            for (const Tensor& t : ins) {
                const int c = t.shape().c;
                if (t.requires_grad()) {
                    auto gi = t.grad_buffer<T>();
                    for (int n = 0; n < out_shape.n; ++n) {
                        const T* src = go.data() + (static_cast<std::size_t>(n) * out_shape.c + offset) * plane;
                        T* dst = gi.data() + static_cast<std::size_t>(n) * c * plane;
                        for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
                    }
                }
                offset += c;
            }
        });
    };

    Tensor out = Tensor::make_result(out_shape, inputs[0].precision(), "concat_channels", ins, std::move(backward));
    dispatch(out.precision(), [&](auto tag) {
        using T = decltype(tag);
        T* dst = out.result_data<T>().data();
        const std::size_t plane = out_shape.plane();
        int offset = 0;
        for (const Tensor& t : inputs) {
            const int c = t.shape().c;
            auto src = t.data<T>();
            for (int n = 0; n < out_shape.n; ++n)
                std::copy_n(src.data() + static_cast<std::size_t>(n) * c * plane, c * plane,
                            dst + (static_cast<std::size_t>(n) * out_shape.c + offset) * plane);
            offset += c;
        }
    });
    return out;
}

Tensor slice_channels(const Tensor& input, int begin, int count) {
    const Shape& s = input.shape();
    if (begin < 0 || count < 1 || begin + count > s.c)
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + std::to_string(s.c) + " channels");
    const Shape out_shape{s.n, count, s.h, s.w};
    BackwardFn backward = [input, begin, count](const Tensor& grad_out) {
        dispatch(grad_out.precision(), [&](auto tag) {
            using T = decltype(tag);
            const Shape& s = input.shape();
            const std::size_t plane = s.plane();
            auto go = grad_out.data<T>();
            auto gi = input.grad_buffer<T>();
            for (int n = 0; n < s.n; ++n) {
                const T* src = go.data() + static_cast<std::size_t>(n) * count * plane;
                T* dst = gi.data() + (static_cast<std::size_t>(n) * s.c + begin) * plane;
                for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
            }
        });
    };
    Tensor out = Tensor::make_result(out_shape, input.precision(), "slice_channels", {input}, std::move(backward));
    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        auto src = input.data<T>();
        T* dst = out.result_data<T>().data();
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n)
            std::copy_n(src.data() + (static_cast<std::size_t>(n) * s.c + begin) * plane, count * plane,
                        dst + static_cast<std::size_t>(n) * count * plane);
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shape " + a.shape().str() + " vs " + b.shape().str());
    require_same_precision(a, b, "add");
    BackwardFn backward = [a, b](const Tensor& grad_out) {
        dispatch(grad_out.precision(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_out.data<T>();
            for (const Tensor* t : {&a, &b}) {
                if (!t->requires_grad()) continue;
                auto gi = t->grad_buffer<T>();
                for (std::size_t i = 0; i < go.size(); ++i) gi[i] += go[i];
            }
        });
    };
    Tensor out = Tensor::make_result(a.shape(), a.precision(), "add", {a, b}, std::move(backward));
    dispatch(a.precision(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.data<T>();
        auto y = b.data<T>();
        T* dst = out.result_data<T>().data();
        for (std::size_t i = 0; i < x.size(); ++i) dst[i] = x[i] + y[i];
    });
    return out;
}

Tensor upsample_nearest2x(const Tensor& input) {
    const Shape& s = input.shape();
    const Shape out_shape{s.n, s.c, 2 * s.h, 2 * s.w};
    BackwardFn backward = [input](const Tensor& grad_out) {
        dispatch(grad_out.precision(), [&](auto tag) {
            using T = decltype(tag);
            const Shape& s = input.shape();
            auto go = grad_out.data<T>();
            auto gi = input.grad_buffer<T>();
            const int ow = 2 * s.w;
            for (std::size_t pl = 0; pl < static_cast<std::size_t>(s.n) * s.c; ++pl) {
                const T* src = go.data() + pl * 4 * s.plane();
                T* dst = gi.data() + pl * s.plane();
                for (int y = 0; y < s.h; ++y)
                    for (int x = 0; x < s.w; ++x) {
                        const T* q = src + static_cast<std::size_t>(2 * y) * ow + 2 * x;
                        dst[static_cast<std::size_t>(y) * s.w + x] += q[0] + q[1] + q[ow] + q[ow + 1];
                    }
            }
        });
    };
    Tensor out = Tensor::make_result(out_shape, input.precision(), "upsample_nearest2x", {input}, std::move(backward));
    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        auto src = input.data<T>();
        T* dst = out.result_data<T>().data();
        const int ow = 2 * s.w;
        for (std::size_t pl = 0; pl < static_cast<std::size_t>(s.n) * s.c; ++pl) {
            const T* in = src.data() + pl * s.plane();
            T* o = dst + pl * 4 * s.plane();
            for (int y = 0; y < 2 * s.h; ++y)
                for (int x = 0; x < ow; ++x)
                    o[static_cast<std::size_t>(y) * ow + x] = in[static_cast<std::size_t>(y / 2) * s.w + x / 2];
        }
    });
    return out;
}

namespace {

// Calls f(input_offset, output_offset) for every element of the space-to-depth mapping.
template <class F>
void for_each_s2d(const Shape& in, int scale, F&& f) {
    const int oh = in.h / scale, ow = in.w / scale;
    const int oc = in.c * scale * scale;
    for (int n = 0; n < in.n; ++n)
        for (int i = 0; i < scale; ++i)
            for (int j = 0; j < scale; ++j)
                for (int c = 0; c < in.c; ++c) {
                    const int out_c = (i * scale + j) * in.c + c;
                    for (int y = 0; y < oh; ++y)
                        for (int x = 0; x < ow; ++x) {
                            const std::size_t src = in.offset(n, c, y * scale + i, x * scale + j);
                            const std::size_t dst =
                                ((static_cast<std::size_t>(n) * oc + out_c) * oh + y) * ow + x;
                            f(src, dst);
                        }
                }
}

}  // namespace

Tensor space_to_depth(const Tensor& input, int scale, std::string_view layer) {
    const Shape& s = input.shape();
    if (scale < 1) throw ShapeError("space_to_depth: scale must be positive" + where(layer));
    if (s.h % scale != 0 || s.w % scale != 0)
        throw ShapeError("space_to_depth: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " not divisible by " + std::to_string(scale) + where(layer));
    const Shape out_shape{s.n, s.c * scale * scale, s.h / scale, s.w / scale};
    BackwardFn backward = [input, scale](const Tensor& grad_out) {
        dispatch(grad_out.precision(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_out.data<T>();
            auto gi = input.grad_buffer<T>();
            for_each_s2d(input.shape(), scale, [&](std::size_t src, std::size_t dst) { gi[src] += go[dst]; });
        });
    };
    Tensor out = Tensor::make_result(out_shape, input.precision(), "space_to_depth", {input}, std::move(backward));
    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        T* y = out.result_data<T>().data();
        for_each_s2d(s, scale, [&](std::size_t src, std::size_t dst) { y[dst] = x[src]; });
    });
    return out;
}

Tensor depth_to_space(const Tensor& input, int scale) {
    const Shape& s = input.shape();
    if (scale < 1 || s.c % (scale * scale) != 0)
        throw ShapeError("depth_to_space: " + std::to_string(s.c) + " channels not divisible by " +
                         std::to_string(scale * scale));
    const Shape out_shape{s.n, s.c / (scale * scale), s.h * scale, s.w * scale};
    BackwardFn backward = [input, scale, out_shape](const Tensor& grad_out) {
        dispatch(grad_out.precision(), [&](auto tag) {
            using T = decltype(tag);
            auto go = grad_out.data<T>();
            auto gi = input.grad_buffer<T>();
            for_each_s2d(out_shape, scale, [&](std::size_t src, std::size_t dst) { gi[dst] += go[src]; });
        });
    };
    Tensor out = Tensor::make_result(out_shape, input.precision(), "depth_to_space", {input}, std::move(backward));
    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        auto x = input.data<T>();
        T* y = out.result_data<T>().data();
        for_each_s2d(out_shape, scale, [&](std::size_t src, std::size_t dst) { y[src] = x[dst]; });
    });
    return out;
}

Tensor sum(const Tensor& input) {
    BackwardFn backward = [input](const Tensor& grad_out) {
        dispatch(grad_out.precision(), [&](auto tag) {
            using T = decltype(tag);
            const T g = grad_out.data<T>()[0];
            auto gi = input.grad_buffer<T>();
            for (T& v : gi) v += g;
        });
    };
    Tensor out = Tensor::make_result({1, 1, 1, 1}, input.precision(), "sum", {input}, std::move(backward));
    dispatch(input.precision(), [&](auto tag) {
        using T = decltype(tag);
        double acc = 0.0;
        for (T v : input.data<T>()) acc += v;
        out.result_data<T>().data()[0] = static_cast<T>(acc);
    });
    return out;
}

}  // namespace sdtn::ops
