#pragma once

#include <functional>
#include <random>
#include <vector>

#include "sdtn/gradcheck.hpp"
#include "sdtn/tensor.hpp"

namespace sdtn::testing_util {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape.numel());
    for (double& x : v) x = dist(rng);
    Tensor t = Tensor::from_values(shape, v);
    t.set_requires_grad(requires_grad);
    return t;
}

// Five-point stencil with kink detection; see sdtn::check_gradients.
inline GradCheckReport finite_difference_check(const std::function<Tensor()>& loss, std::vector<Tensor> params) {
    return check_gradients(loss, std::move(params));
}

}  // namespace sdtn::testing_util
