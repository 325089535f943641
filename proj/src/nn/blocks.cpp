#include "sdtn/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace sdtn::nn {

double Initializer::uniform(double lo, double hi) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

Tensor Initializer::conv_weight(int out_channels, int in_channels, int kernel) {
    const Shape s{out_channels, in_channels, kernel, kernel};
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels) * kernel * kernel);
    std::vector<double> v(s.numel());
    for (double& x : v) x = uniform(-bound, bound);
    Tensor w = Tensor::from_values(s, v);
    w.set_requires_grad(true);
    return w;
}

namespace {

Tensor channel_param(int channels, double value) {
    Tensor t = Tensor::full({1, channels, 1, 1}, value);
    t.set_requires_grad(true);
    return t;
}

Context sub(const Context& ctx, std::string_view part) {
    Context c = ctx;
    c.layer += ctx.layer.empty() ? std::string(part) : "." + std::string(part);
    return c;
}

ops::ConvParams plain_conv(int in, int out, double bias, Initializer& init) {
    ops::ConvParams p;
    p.weight = init.conv_weight(out, in, 1);
    p.bias = channel_param(out, bias);
    return p;
}

void collect_conv(const ops::ConvParams& p, StateList& out) {
    out.params.push_back(p.weight);
    if (p.bias.defined()) out.params.push_back(p.bias);
}

}  // namespace

ConvBlock ConvBlock::create(int in, int out, int kernel, int stride, Initializer& init) {
    if (in < 1 || out < 1 || kernel < 1 || stride < 1)
        throw ConfigError("conv block: widths, kernel and stride must be positive");
    ConvBlock b;
    b.conv.weight = init.conv_weight(out, in, kernel);
    b.conv.stride = stride;
    b.conv.padding = kernel / 2;
    b.gamma = channel_param(out, 1.0);
    b.beta = channel_param(out, 0.0);
    b.stats = ops::BatchNormStats(out);
    return b;
}

Tensor ConvBlock::forward(const Tensor& x, const Context& ctx) {
    Tensor y = ops::conv2d(x, conv, ctx.layer);
    y = ops::batchnorm2d(y, gamma, beta, stats, eps, ctx.training, ctx.layer);
    return ops::silu(y);
}

void ConvBlock::collect(StateList& out) {
    collect_conv(conv, out);
    out.params.push_back(gamma);
    out.params.push_back(beta);
    out.buffers.push_back(&stats.running_mean);
    out.buffers.push_back(&stats.running_var);
}

SpdConv SpdConv::create(int in, int out, Initializer& init) {
    return SpdConv{ConvBlock::create(4 * in, out, 3, 1, init)};
}

Tensor SpdConv::forward(const Tensor& x, const Context& ctx) {
    return conv.forward(ops::space_to_depth(x, 2, ctx.layer), ctx);
}

Bottleneck Bottleneck::create(int in, int out, bool shortcut, Initializer& init) {
    if (shortcut && in != out)
        throw ConfigError("bottleneck: shortcut needs equal widths, got " + std::to_string(in) +
                          " -> " + std::to_string(out));
    Bottleneck b;
    b.cv1 = ConvBlock::create(in, out, 3, 1, init);
    b.cv2 = ConvBlock::create(out, out, 3, 1, init);
    b.shortcut = shortcut;
    return b;
}

Tensor Bottleneck::forward(const Tensor& x, const Context& ctx) {
    Tensor y = cv2.forward(cv1.forward(x, sub(ctx, "cv1")), sub(ctx, "cv2"));
    return shortcut ? ops::add(x, y) : y;
}

void Bottleneck::collect(StateList& out) {
    cv1.collect(out);
    cv2.collect(out);
}

C2f C2f::create(int in, int out, int n, bool shortcut, Initializer& init) {
    if (n < 1) throw ConfigError("c2f: repeat count must be positive");
    if (out < 2) throw ConfigError("c2f: output width must be at least 2");
    C2f b;
    b.hidden = out / 2;
    b.cv1 = ConvBlock::create(in, 2 * b.hidden, 1, 1, init);
    for (int i = 0; i < n; ++i) b.blocks.push_back(Bottleneck::create(b.hidden, b.hidden, shortcut, init));
    b.cv2 = ConvBlock::create((2 + n) * b.hidden, out, 1, 1, init);
    return b;
}

Tensor C2f::forward(const Tensor& x, const Context& ctx) {
    Tensor y = cv1.forward(x, sub(ctx, "cv1"));
    std::vector<Tensor> parts{ops::slice_channels(y, 0, hidden), ops::slice_channels(y, hidden, hidden)};
    for (std::size_t i = 0; i < blocks.size(); ++i)
        parts.push_back(blocks[i].forward(parts.back(), sub(ctx, "m" + std::to_string(i))));
    return cv2.forward(ops::concat_channels(parts), sub(ctx, "cv2"));
}

void C2f::collect(StateList& out) {
    cv1.collect(out);
    for (Bottleneck& b : blocks) b.collect(out);
    cv2.collect(out);
}

std::vector<Tensor> serial_pools(const Tensor& x) {
    std::vector<Tensor> parts{x};
    for (int i = 0; i < 3; ++i) parts.push_back(ops::maxpool2d(parts.back(), 5, 1, 2));
    return parts;
}

Sppf Sppf::create(int in, int out, Initializer& init) {
    if (in < 2) throw ConfigError("sppf: input width must be at least 2");
    const int hidden = in / 2;
    return Sppf{ConvBlock::create(in, hidden, 1, 1, init), ConvBlock::create(4 * hidden, out, 1, 1, init)};
}

Tensor Sppf::forward(const Tensor& x, const Context& ctx) {
    const auto parts = serial_pools(cv1.forward(x, sub(ctx, "cv1")));
    return cv2.forward(ops::concat_channels(parts), sub(ctx, "cv2"));
}

void Sppf::collect(StateList& out) {
    cv1.collect(out);
    cv2.collect(out);
}

Sppfcspc Sppfcspc::create(int in, int out, Initializer& init) {
    if (out < 2) throw ConfigError("sppfcspc: output width must be at least 2");
    Sppfcspc b;
    const int h = b.hidden = out / 2;
    b.cv1 = ConvBlock::create(in, h, 1, 1, init);
    b.cv2 = ConvBlock::create(in, h, 1, 1, init);
    b.cv3 = ConvBlock::create(h, h, 3, 1, init);
    b.cv4 = ConvBlock::create(h, h, 1, 1, init);
    b.cv5 = ConvBlock::create(4 * h, h, 1, 1, init);
    b.cv6 = ConvBlock::create(h, h, 3, 1, init);
    b.cv7 = ConvBlock::create(2 * h, out, 1, 1, init);
    return b;
}

Tensor Sppfcspc::forward(const Tensor& x, const Context& ctx) {
    Tensor a = cv4.forward(cv3.forward(cv1.forward(x, sub(ctx, "cv1")), sub(ctx, "cv3")), sub(ctx, "cv4"));
    const auto pooled = serial_pools(a);
    a = cv6.forward(cv5.forward(ops::concat_channels(pooled), sub(ctx, "cv5")), sub(ctx, "cv6"));
    const Tensor both[] = {a, cv2.forward(x, sub(ctx, "cv2"))};
    return cv7.forward(ops::concat_channels(both), sub(ctx, "cv7"));
}

void Sppfcspc::collect(StateList& out) {
    for (ConvBlock* c : {&cv1, &cv2, &cv3, &cv4, &cv5, &cv6, &cv7}) c->collect(out);
}

DetectHead DetectHead::create(std::span<const int> in_channels, std::span<const int> strides,
                              int num_classes, Initializer& init) {
    if (in_channels.empty() || in_channels.size() != strides.size())
        throw ConfigError("detect: need one stride per input feature map");
    if (num_classes < 1) throw ConfigError("detect: num_classes must be positive");
    DetectHead h;
    h.num_classes = num_classes;
    h.strides.assign(strides.begin(), strides.end());
    const int c2 = std::max(16, in_channels[0] / 4);
    const int c3 = std::max(in_channels[0], std::min(num_classes, 100));
    const double prior_logit = std::log(0.01 / 0.99);
    for (int ch : in_channels) {
        Scale s;
        s.box1 = ConvBlock::create(ch, c2, 3, 1, init);
        s.box2 = ConvBlock::create(c2, c2, 3, 1, init);
        s.box_out = plain_conv(c2, 4, 0.0, init);
        s.cls1 = ConvBlock::create(ch, c3, 3, 1, init);
        s.cls2 = ConvBlock::create(c3, c3, 3, 1, init);
        s.cls_out = plain_conv(c3, num_classes, prior_logit, init);
        h.scales.push_back(std::move(s));
    }
    return h;
}

HeadOutput DetectHead::forward(std::span<const Tensor> features, int input_h, int input_w,
                               const Context& ctx) {
    if (features.size() != scales.size())
        throw ShapeError("detect: expected " + std::to_string(scales.size()) + " feature maps, got " +
                         std::to_string(features.size()) + (ctx.layer.empty() ? "" : " in layer " + ctx.layer));
    HeadOutput out;
    out.strides = strides;
    for (std::size_t i = 0; i < scales.size(); ++i) {
        const Shape& s = features[i].shape();
        if (s.h * strides[i] != input_h || s.w * strides[i] != input_w)
            throw ShapeError("detect: feature " + s.str() + " inconsistent with stride " +
                             std::to_string(strides[i]) + " for input " + std::to_string(input_h) + "x" +
                             std::to_string(input_w) + (ctx.layer.empty() ? "" : " in layer " + ctx.layer));
        Scale& sc = scales[i];
        const std::string tag = "s" + std::to_string(strides[i]);
        Tensor box = sc.box2.forward(sc.box1.forward(features[i], sub(ctx, tag + ".box1")), sub(ctx, tag + ".box2"));
        Tensor cls = sc.cls2.forward(sc.cls1.forward(features[i], sub(ctx, tag + ".cls1")), sub(ctx, tag + ".cls2"));
        const Tensor parts[] = {ops::conv2d(box, sc.box_out, ctx.layer), ops::conv2d(cls, sc.cls_out, ctx.layer)};
        out.maps.push_back(ops::concat_channels(parts));
    }
    return out;
}

void DetectHead::collect(StateList& out) {
    for (Scale& s : scales) {
        s.box1.collect(out);
        s.box2.collect(out);
        collect_conv(s.box_out, out);
        s.cls1.collect(out);
        s.cls2.collect(out);
        collect_conv(s.cls_out, out);
    }
}

}  // namespace sdtn::nn
