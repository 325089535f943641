#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdtn/ops.hpp"

namespace sdtn::nn {

// Seeded parameter initialiser. Uniform draws use the top 53 bits of
// mt19937_64, so the same seed gives the same parameters on every platform.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi);
    // Conv weight with U(-1/sqrt(fan_in), 1/sqrt(fan_in)) entries.
    Tensor conv_weight(int out_channels, int in_channels, int kernel);

private:
    std::mt19937_64 rng_;
};

struct Context {
    bool training = false;
    std::string layer;  // used in error messages
};

// Flat views into a block's state. Tensors are shared handles, so writing
// through them updates the block. Buffers hold batch-norm running statistics.
struct StateList {
    std::vector<Tensor> params;
    std::vector<std::vector<double>*> buffers;
};

struct ConvBlock {
    ops::ConvParams conv;
    Tensor gamma;
    Tensor beta;
    ops::BatchNormStats stats;
    double eps = 1e-3;

    static ConvBlock create(int in, int out, int kernel, int stride, Initializer& init);

    int in_channels() const { return conv.weight.shape().c; }
    int out_channels() const { return conv.weight.shape().n; }
    Tensor forward(const Tensor& x, const Context& ctx);
    void collect(StateList& out);
};

// Space-to-depth (scale 2) followed by a stride-1 3x3 ConvBlock.
struct SpdConv {
    ConvBlock conv;

    static SpdConv create(int in, int out, Initializer& init);

    int out_channels() const { return conv.out_channels(); }
    Tensor forward(const Tensor& x, const Context& ctx);
    void collect(StateList& out) { conv.collect(out); }
};

struct Bottleneck {
    ConvBlock cv1;
    ConvBlock cv2;
    bool shortcut = true;

    static Bottleneck create(int in, int out, bool shortcut, Initializer& init);

    Tensor forward(const Tensor& x, const Context& ctx);
    void collect(StateList& out);
};

struct C2f {
    ConvBlock cv1;
    std::vector<Bottleneck> blocks;
    ConvBlock cv2;
    int hidden = 0;

    static C2f create(int in, int out, int n, bool shortcut, Initializer& init);

    int out_channels() const { return cv2.out_channels(); }
    Tensor forward(const Tensor& x, const Context& ctx);
    void collect(StateList& out);
};

struct Sppf {
    ConvBlock cv1;
    ConvBlock cv2;

    static Sppf create(int in, int out, Initializer& init);

    int out_channels() const { return cv2.out_channels(); }
    Tensor forward(const Tensor& x, const Context& ctx);
    void collect(StateList& out);
};

// Cross-stage pooling block. Branch A: cv1 (1x1), cv3 (3x3), cv4 (1x1),
// three serial 5x5 pools concatenated with their input, cv5 (1x1), cv6 (3x3).
// Branch B: cv2 (1x1). cv7 (1x1) fuses [A, B].
struct Sppfcspc {
    ConvBlock cv1, cv2, cv3, cv4, cv5, cv6, cv7;
    int hidden = 0;

    static Sppfcspc create(int in, int out, Initializer& init);

    int out_channels() const { return cv7.out_channels(); }
    Tensor forward(const Tensor& x, const Context& ctx);
    void collect(StateList& out);
};

// Serial k=5 s=1 p=2 pooling; returns [x, p1, p2, p3].
std::vector<Tensor> serial_pools(const Tensor& x);

struct HeadOutput {
    std::vector<Tensor> maps;  // (n, 4 + num_classes, gh, gw) per scale
    std::vector<int> strides;
};

// Anchor-free decoupled head with independent stems per scale. Channels
// 0..3 of each map are raw left/top/right/bottom distances, the rest are
// class logits.
struct DetectHead {
    struct Scale {
        ConvBlock box1, box2;
        ops::ConvParams box_out;
        ConvBlock cls1, cls2;
        ops::ConvParams cls_out;
    };
    std::vector<Scale> scales;
    std::vector<int> strides;
    int num_classes = 0;

    static DetectHead create(std::span<const int> in_channels, std::span<const int> strides,
                             int num_classes, Initializer& init);

    HeadOutput forward(std::span<const Tensor> features, int input_h, int input_w, const Context& ctx);
    void collect(StateList& out);
};

}  // namespace sdtn::nn
