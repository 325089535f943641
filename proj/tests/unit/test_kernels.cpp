#include <gtest/gtest.h>
#include <omp.h>

#include <cmath>
#include <random>
#include <vector>

#include "sdtn/kernels.hpp"

using namespace sdtn;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1, 1);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

std::size_t in_size(const ConvGeometry& g) {
    return static_cast<std::size_t>(g.batch) * g.in_channels * g.in_h * g.in_w;
}
std::size_t out_size(const ConvGeometry& g) {
    return static_cast<std::size_t>(g.batch) * g.out_channels * g.out_h() * g.out_w();
}
std::size_t weight_size(const ConvGeometry& g) {
    return static_cast<std::size_t>(g.out_channels) * g.patch_size();
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "index " << i;
}

const ConvGeometry kGeometries[] = {
    {2, 3, 9, 7, 5, 3, 1, 1}, {1, 8, 12, 12, 6, 3, 2, 1}, {3, 5, 6, 6, 7, 1, 1, 0},
    {1, 4, 10, 8, 9, 5, 1, 2}, {2, 6, 7, 7, 4, 1, 2, 0}, {1, 16, 20, 20, 13, 3, 1, 1},
};

}  // namespace

TEST(ParallelKernels, ConvForwardMatchesReference) {
    std::mt19937_64 rng(1);
    for (const ConvGeometry& g : kGeometries) {
        auto in = random_vector(in_size(g), rng);
        auto w = random_vector(weight_size(g), rng);
        auto b = random_vector(g.out_channels, rng);
        std::vector<double> fast(out_size(g)), slow(out_size(g));
        kernels::conv2d_forward(g, in.data(), w.data(), b.data(), fast.data());
        reference::conv2d_forward(g, in.data(), w.data(), b.data(), slow.data());
        expect_close(fast, slow, 1e-12);
    }
}

TEST(ParallelKernels, ConvBackwardMatchesReference) {
    std::mt19937_64 rng(2);
    for (const ConvGeometry& g : kGeometries) {
        auto in = random_vector(in_size(g), rng);
        auto w = random_vector(weight_size(g), rng);
        auto go = random_vector(out_size(g), rng);
        std::vector<double> gi_fast(in.size(), 0.5), gi_slow(in.size(), 0.5);
        kernels::conv2d_backward_input(g, go.data(), w.data(), gi_fast.data());
        reference::conv2d_backward_input(g, go.data(), w.data(), gi_slow.data());
        expect_close(gi_fast, gi_slow, 1e-11);

        std::vector<double> gw_fast(w.size(), 0.25), gw_slow(w.size(), 0.25);
        std::vector<double> gb_fast(g.out_channels, 0.0), gb_slow(g.out_channels, 0.0);
        kernels::conv2d_backward_params(g, go.data(), in.data(), gw_fast.data(), gb_fast.data());
        reference::conv2d_backward_params(g, go.data(), in.data(), gw_slow.data(), gb_slow.data());
        expect_close(gw_fast, gw_slow, 1e-11);
        expect_close(gb_fast, gb_slow, 1e-11);
    }
}

TEST(ParallelKernels, MaxPoolMatchesReference) {
    std::mt19937_64 rng(3);
    const PoolGeometry geoms[] = {{2, 3, 9, 9, 5, 1, 2}, {1, 4, 8, 6, 2, 2, 0}, {1, 2, 7, 7, 3, 2, 1}};
    for (const PoolGeometry& g : geoms) {
        const std::size_t n_in = static_cast<std::size_t>(g.batch) * g.channels * g.in_h * g.in_w;
        const std::size_t n_out = static_cast<std::size_t>(g.batch) * g.channels * g.out_h() * g.out_w();
        auto in = random_vector(n_in, rng);
        std::vector<double> fast(n_out), slow(n_out);
        std::vector<std::int64_t> am_fast(n_out), am_slow(n_out);
        kernels::maxpool2d_forward(g, in.data(), fast.data(), am_fast.data());
        reference::maxpool2d_forward(g, in.data(), slow.data(), am_slow.data());
        EXPECT_EQ(fast, slow);
        EXPECT_EQ(am_fast, am_slow);
    }
}

TEST(ParallelKernels, ResultsIndependentOfThreadCount) {
    std::mt19937_64 rng(4);
    const ConvGeometry g{3, 8, 12, 12, 10, 3, 1, 1};
    auto in = random_vector(in_size(g), rng);
    auto w = random_vector(weight_size(g), rng);
    auto go = random_vector(out_size(g), rng);
    auto run = [&](int threads) {
        omp_set_num_threads(threads);
        std::vector<double> out(out_size(g)), gi(in.size()), gw(w.size()), gb(g.out_channels);
        kernels::conv2d_forward(g, in.data(), w.data(), static_cast<const double*>(nullptr), out.data());
        kernels::conv2d_backward_input(g, go.data(), w.data(), gi.data());
        kernels::conv2d_backward_params(g, go.data(), in.data(), gw.data(), gb.data());
        out.insert(out.end(), gi.begin(), gi.end());
        out.insert(out.end(), gw.begin(), gw.end());
        out.insert(out.end(), gb.begin(), gb.end());
        return out;
    };
    const int saved = omp_get_max_threads();
    const auto one = run(1);
    const auto four = run(4);
    omp_set_num_threads(saved);
    EXPECT_EQ(one, four);
}

TEST(ParallelKernels, SinglePrecisionAgreesWithDouble) {
    std::mt19937_64 rng(5);
    const ConvGeometry g{2, 6, 10, 10, 8, 3, 2, 1};
    auto in = random_vector(in_size(g), rng);
    auto w = random_vector(weight_size(g), rng);
    std::vector<float> inf(in.begin(), in.end()), wf(w.begin(), w.end()), outf(out_size(g));
    std::vector<double> outd(out_size(g));
    kernels::conv2d_forward(g, inf.data(), wf.data(), static_cast<const float*>(nullptr), outf.data());
    kernels::conv2d_forward(g, in.data(), w.data(), static_cast<const double*>(nullptr), outd.data());
    for (std::size_t i = 0; i < outd.size(); ++i) EXPECT_NEAR(outf[i], outd[i], 1e-4);
}
