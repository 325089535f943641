#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "sdtn/tensor.hpp"

namespace sdtn {

enum class Stencil { central3, central5 };

struct GradCheckOptions {
    Stencil stencil = Stencil::central5;
    double step = 1e-3;
    // Each estimate is compared with one at half the step. If they disagree
    // by more than stability * |estimate| + noise, the stencil straddles a
    // kink and the step shrinks tenfold, at most `refinements` times.
    double stability = 1e-5;
    double noise = 1e-10;
    int refinements = 2;
    double floor = 1e-8;  // denominator floor for the relative error
};

struct GradCheckEntry {
    std::size_t param = 0;
    std::size_t element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    double step = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    GradCheckEntry worst;
    std::vector<GradCheckEntry> entries;  // in checking order
};

struct ParamElement {
    std::size_t param = 0;
    std::size_t element = 0;
};

// Compares one analytic backward pass of `loss` against finite differences.
// `loss` must rebuild the graph from the current parameter values on every
// call. An empty `sample` checks every element of every parameter.
GradCheckReport check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                const GradCheckOptions& options = {},
                                const std::vector<ParamElement>& sample = {});

}  // namespace sdtn
