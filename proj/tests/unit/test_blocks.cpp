#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sdtn/blocks.hpp"
#include "test_util.hpp"

using namespace sdtn;
using namespace sdtn::nn;
using sdtn::testing_util::finite_difference_check;
using sdtn::testing_util::random_tensor;

namespace {

const Context kEval{false, ""};
const Context kTrain{true, ""};

void zero_weights(ConvBlock& b) {
    b.conv.weight = Tensor::zeros(b.conv.weight.shape());
}

// Hand-wired Conv -> BN -> SiLU on a copy of the block's statistics.
Tensor manual_conv_block(const ConvBlock& b, const Tensor& x, bool training) {
    ops::BatchNormStats stats = b.stats;
    return ops::silu(ops::batchnorm2d(ops::conv2d(x, b.conv), b.gamma, b.beta, stats, b.eps, training));
}

void expect_identical(const Tensor& a, const Tensor& b) {
    ASSERT_EQ(a.shape(), b.shape());
    EXPECT_EQ(a.to_vector(), b.to_vector());
}

Tensor scalar_probe(const Tensor& y) {
    return ops::sum(ops::silu(y));
}

}  // namespace

TEST(Initializer, UsesTop53BitsOfMt19937_64) {
    Initializer init(42);
    std::mt19937_64 ref(42);
    for (int i = 0; i < 5; ++i) {
        const double expected = static_cast<double>(ref() >> 11) / 9007199254740992.0;
        EXPECT_EQ(init.uniform(0.0, 1.0), expected);
    }
}

TEST(Initializer, ConvWeightBoundAndDeterminism) {
    Initializer a(7), b(7);
    Tensor wa = a.conv_weight(8, 4, 3);
    Tensor wb = b.conv_weight(8, 4, 3);
    EXPECT_EQ(wa.to_vector(), wb.to_vector());
    const double bound = 1.0 / 6.0;
    for (double v : wa.to_vector()) EXPECT_LE(std::abs(v), bound);
    EXPECT_TRUE(wa.requires_grad());
}

TEST(ConvBlock, PointwiseShape) {
    Initializer init(0);
    ConvBlock b = ConvBlock::create(4, 8, 1, 1, init);
    std::mt19937_64 rng(1);
    EXPECT_EQ(b.forward(random_tensor({1, 4, 8, 8}, rng), kEval).shape(), (Shape{1, 8, 8, 8}));
}

TEST(ConvBlock, ZeroWeightsGiveZeros) {
    Initializer init(0);
    ConvBlock b = ConvBlock::create(3, 5, 3, 2, init);
    zero_weights(b);
    std::mt19937_64 rng(2);
    for (bool training : {false, true}) {
        Tensor y = b.forward(random_tensor({2, 3, 8, 8}, rng), {training, ""});
        EXPECT_EQ(y.shape(), (Shape{2, 5, 4, 4}));
        for (double v : y.to_vector()) EXPECT_EQ(v, 0.0);
    }
}

TEST(ConvBlock, EqualsComposedPrimitives) {
    Initializer init(3);
    ConvBlock b = ConvBlock::create(3, 6, 3, 2, init);
    std::mt19937_64 rng(3);
    Tensor x = random_tensor({2, 3, 9, 9}, rng);
    for (bool training : {false, true}) {
        Tensor expected = manual_conv_block(b, x, training);
        expect_identical(b.forward(x, {training, ""}), expected);
    }
}

TEST(SpdConv, HalvesSpatialDimsWithStrideOneConv) {
    Initializer init(0);
    SpdConv b = SpdConv::create(16, 32, init);
    EXPECT_EQ(b.conv.in_channels(), 64);
    EXPECT_EQ(b.conv.conv.stride, 1);
    std::mt19937_64 rng(4);
    EXPECT_EQ(b.forward(random_tensor({1, 16, 64, 64}, rng), kEval).shape(), (Shape{1, 32, 32, 32}));
}

TEST(SpdConv, IdentityTapSelectsSpaceToDepthChannels) {
    const int c = 3;
    Initializer init(5);
    SpdConv b = SpdConv::create(c, 5, init);
    // Output channel o passes through SPD channel sel[o] at the kernel centre.
    const int sel[] = {0, 4, 7, 9, 11};
    std::vector<double> w(5 * 12 * 9, 0.0);
    for (int o = 0; o < 5; ++o) w[(o * 12 + sel[o]) * 9 + 4] = 1.0;
    b.conv.conv.weight = Tensor::from_values({5, 12, 3, 3}, w);
    b.conv.stats.running_mean.assign(5, 0.0);
    b.conv.stats.running_var.assign(5, 1.0);

    std::mt19937_64 rng(6);
    Tensor x = random_tensor({2, c, 6, 4}, rng);
    Tensor y = b.forward(x, kEval);
    ASSERT_EQ(y.shape(), (Shape{2, 5, 3, 2}));
    const double scale = 1.0 / std::sqrt(1.0 + b.conv.eps);
    for (int n = 0; n < 2; ++n)
        for (int o = 0; o < 5; ++o) {
            const int block = sel[o] / c, ch = sel[o] % c;
            const int i = block / 2, j = block % 2;
            for (int r = 0; r < 3; ++r)
                for (int q = 0; q < 2; ++q) {
                    const double v = x.at(n, ch, 2 * r + i, 2 * q + j) * scale;
                    EXPECT_NEAR(y.at(n, o, r, q), v / (1.0 + std::exp(-v)), 1e-14);
                }
        }
}

TEST(SpdConv, OddInputNamesLayer) {
    Initializer init(0);
    SpdConv b = SpdConv::create(2, 4, init);
    try {
        b.forward(Tensor::zeros({1, 2, 5, 6}), {false, "3"});
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 3"), std::string::npos);
    }
}

TEST(Bottleneck, ZeroWeightsWithShortcutIsIdentity) {
    Initializer init(0);
    Bottleneck b = Bottleneck::create(4, 4, true, init);
    zero_weights(b.cv1);
    zero_weights(b.cv2);
    std::mt19937_64 rng(7);
    Tensor x = random_tensor({1, 4, 5, 5}, rng);
    EXPECT_EQ(b.forward(x, kEval).to_vector(), x.to_vector());
    b.shortcut = false;
    for (double v : b.forward(x, kEval).to_vector()) EXPECT_EQ(v, 0.0);
}

TEST(Bottleneck, EqualsComposedPrimitives) {
    Initializer init(8);
    Bottleneck b = Bottleneck::create(4, 4, true, init);
    std::mt19937_64 rng(8);
    Tensor x = random_tensor({2, 4, 6, 6}, rng);
    Tensor expected = ops::add(x, manual_conv_block(b.cv2, manual_conv_block(b.cv1, x, true), true));
    expect_identical(b.forward(x, kTrain), expected);
}

TEST(Bottleneck, ShortcutWidthMismatchIsConfigError) {
    Initializer init(0);
    EXPECT_THROW(Bottleneck::create(4, 8, true, init), ConfigError);
    EXPECT_NO_THROW(Bottleneck::create(4, 8, false, init));
}

TEST(C2f, ChannelAccounting) {
    Initializer init(0);
    C2f one = C2f::create(32, 32, 1, true, init);
    EXPECT_EQ(one.hidden, 16);
    EXPECT_EQ(one.cv2.in_channels(), 48);
    std::mt19937_64 rng(9);
    EXPECT_EQ(one.forward(random_tensor({1, 32, 8, 8}, rng), kEval).shape(), (Shape{1, 32, 8, 8}));
    C2f two = C2f::create(16, 64, 2, false, init);
    EXPECT_EQ(two.cv2.in_channels(), 4 * two.hidden);
    EXPECT_EQ(two.forward(random_tensor({1, 16, 4, 4}, rng), kEval).shape(), (Shape{1, 64, 4, 4}));
}

TEST(C2f, EqualsComposedPrimitives) {
    Initializer init(10);
    C2f b = C2f::create(6, 8, 2, true, init);
    std::mt19937_64 rng(10);
    Tensor x = random_tensor({2, 6, 5, 5}, rng);
    Tensor y = manual_conv_block(b.cv1, x, true);
    Tensor y0 = ops::slice_channels(y, 0, 4), y1 = ops::slice_channels(y, 4, 4);
    auto bottleneck = [](const Bottleneck& m, const Tensor& t) {
        return ops::add(t, manual_conv_block(m.cv2, manual_conv_block(m.cv1, t, true), true));
    };
    Tensor b1 = bottleneck(b.blocks[0], y1);
    Tensor b2 = bottleneck(b.blocks[1], b1);
    const Tensor parts[] = {y0, y1, b1, b2};
    Tensor expected = manual_conv_block(b.cv2, ops::concat_channels(parts), true);
    expect_identical(b.forward(x, kTrain), expected);
}

TEST(Sppf, ShapeAndConcatWidth) {
    Initializer init(0);
    Sppf b = Sppf::create(64, 64, init);
    EXPECT_EQ(b.cv1.out_channels(), 32);
    EXPECT_EQ(b.cv2.in_channels(), 128);
    std::mt19937_64 rng(11);
    EXPECT_EQ(b.forward(random_tensor({1, 64, 20, 20}, rng), kEval).shape(), (Shape{1, 64, 20, 20}));
}

TEST(Sppf, ConstantInputGivesConstantOutputPerChannel) {
    Initializer init(12);
    Sppf b = Sppf::create(4, 6, init);
    Tensor y = b.forward(Tensor::full({1, 4, 7, 7}, 0.3), kEval);
    for (int c = 0; c < 6; ++c)
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < 7; ++j) EXPECT_DOUBLE_EQ(y.at(0, c, i, j), y.at(0, c, 0, 0));
}

TEST(Sppf, SerialPoolsEqualWidePools) {
    std::mt19937_64 rng(13);
    Tensor x = random_tensor({2, 3, 15, 11}, rng);
    const auto parts = serial_pools(x);
    ASSERT_EQ(parts.size(), 4u);
    EXPECT_EQ(parts[0].to_vector(), x.to_vector());
    EXPECT_EQ(parts[2].to_vector(), ops::maxpool2d(x, 9, 1, 4).to_vector());
    EXPECT_EQ(parts[3].to_vector(), ops::maxpool2d(x, 13, 1, 6).to_vector());
}

TEST(Sppf, EqualsComposedPrimitives) {
    Initializer init(14);
    Sppf b = Sppf::create(6, 5, init);
    std::mt19937_64 rng(14);
    Tensor x = random_tensor({1, 6, 7, 7}, rng);
    Tensor h = manual_conv_block(b.cv1, x, false);
    Tensor p1 = ops::maxpool2d(h, 5, 1, 2);
    Tensor p2 = ops::maxpool2d(p1, 5, 1, 2);
    Tensor p3 = ops::maxpool2d(p2, 5, 1, 2);
    const Tensor parts[] = {h, p1, p2, p3};
    expect_identical(b.forward(x, kEval), manual_conv_block(b.cv2, ops::concat_channels(parts), false));
}

TEST(Sppfcspc, ShapeAndConcatWidth) {
    Initializer init(0);
    Sppfcspc b = Sppfcspc::create(256, 256, init);
    EXPECT_EQ(b.hidden, 128);
    EXPECT_EQ(b.cv5.in_channels(), 4 * 128);
    EXPECT_EQ(b.cv7.in_channels(), 2 * 128);
    std::mt19937_64 rng(15);
    EXPECT_EQ(b.forward(random_tensor({1, 256, 8, 8}, rng), kEval).shape(), (Shape{1, 256, 8, 8}));
}

TEST(Sppfcspc, EqualsComposedPrimitives) {
    Initializer init(16);
    Sppfcspc b = Sppfcspc::create(6, 8, init);
    std::mt19937_64 rng(16);
    Tensor x = random_tensor({2, 6, 6, 6}, rng);
    auto cb = [](const ConvBlock& c, const Tensor& t) { return manual_conv_block(c, t, true); };
    Tensor a = cb(b.cv4, cb(b.cv3, cb(b.cv1, x)));
    Tensor p1 = ops::maxpool2d(a, 5, 1, 2);
    Tensor p2 = ops::maxpool2d(p1, 5, 1, 2);
    Tensor p3 = ops::maxpool2d(p2, 5, 1, 2);
    const Tensor pooled[] = {a, p1, p2, p3};
    Tensor branch_a = cb(b.cv6, cb(b.cv5, ops::concat_channels(pooled)));
    const Tensor both[] = {branch_a, cb(b.cv2, x)};
    expect_identical(b.forward(x, kTrain), cb(b.cv7, ops::concat_channels(both)));
}

TEST(DetectHead, GridShapesFollowStrides) {
    Initializer init(0);
    const int ch[] = {4, 6, 8};
    const int strides[] = {4, 8, 16};
    DetectHead head = DetectHead::create(ch, strides, 10, init);
    const Tensor feats[] = {Tensor::zeros({1, 4, 160, 160}), Tensor::zeros({1, 6, 80, 80}),
                            Tensor::zeros({1, 8, 40, 40})};
    HeadOutput out = head.forward(feats, 640, 640, kEval);
    ASSERT_EQ(out.maps.size(), 3u);
    EXPECT_EQ(out.maps[0].shape(), (Shape{1, 14, 160, 160}));
    EXPECT_EQ(out.maps[1].shape(), (Shape{1, 14, 80, 80}));
    EXPECT_EQ(out.maps[2].shape(), (Shape{1, 14, 40, 40}));
    EXPECT_EQ(out.strides, std::vector<int>({4, 8, 16}));
}

TEST(DetectHead, InitialClassLogitsMatchPrior) {
    Initializer init(1);
    const int ch[] = {4};
    const int strides[] = {8};
    DetectHead head = DetectHead::create(ch, strides, 3, init);
    for (double v : head.scales[0].cls_out.bias.to_vector()) EXPECT_NEAR(v, std::log(0.01 / 0.99), 1e-15);
    for (double v : head.scales[0].box_out.bias.to_vector()) EXPECT_EQ(v, 0.0);
    // Zero features -> stems output silu(beta)=0 -> logits equal the bias.
    const Tensor feats[] = {Tensor::zeros({1, 4, 2, 2})};
    Tensor m = head.forward(feats, 16, 16, kEval).maps[0];
    EXPECT_NEAR(m.at(0, 5, 1, 1), std::log(0.01 / 0.99), 1e-15);
}

TEST(DetectHead, InconsistentStrideIsShapeError) {
    Initializer init(0);
    const int ch[] = {4, 4};
    const int strides[] = {8, 16};
    DetectHead head = DetectHead::create(ch, strides, 2, init);
    const Tensor good[] = {Tensor::zeros({1, 4, 8, 8}), Tensor::zeros({1, 4, 4, 4})};
    EXPECT_NO_THROW(head.forward(good, 64, 64, kEval));
    const Tensor bad[] = {Tensor::zeros({1, 4, 8, 8}), Tensor::zeros({1, 4, 8, 8})};
    EXPECT_THROW(head.forward(bad, 64, 64, kEval), ShapeError);
    EXPECT_THROW(head.forward(std::span<const Tensor>(good, 1), 64, 64, kEval), ShapeError);
}

TEST(BlockGradients, MatchFiniteDifferences) {
    std::mt19937_64 rng(17);
    Initializer init(17);
    Tensor x = random_tensor({2, 4, 8, 8}, rng, -1, 1, true);
    auto check = [&](auto& block, const char* name) {
        StateList state;
        block.collect(state);
        std::vector<Tensor> params = state.params;
        params.push_back(x);
        const auto r = finite_difference_check([&] { return scalar_probe(block.forward(x, kTrain)); }, params);
        EXPECT_LT(r.max_rel_error, 1e-5) << name << " a=" << r.worst.analytic << " n=" << r.worst.numeric << " h=" << r.worst.step << " p=" << r.worst.param;
    };
    SpdConv spd = SpdConv::create(4, 3, init);
    check(spd, "spd_conv");
    C2f c2f = C2f::create(4, 4, 1, true, init);
    check(c2f, "c2f");
    Sppf sppf = Sppf::create(4, 3, init);
    check(sppf, "sppf");
    Sppfcspc csp = Sppfcspc::create(4, 4, init);
    check(csp, "sppfcspc");
}

TEST(BlockState, CollectCountsEveryParameter) {
    Initializer init(0);
    C2f b = C2f::create(4, 8, 2, true, init);
    StateList s;
    b.collect(s);
    // 2 + 2*2 conv blocks, each weight/gamma/beta and two buffers.
    EXPECT_EQ(s.params.size(), 18u);
    EXPECT_EQ(s.buffers.size(), 12u);
}
