#include "sdtn/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace sdtn {

namespace {

double relative(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                const GradCheckOptions& options, const std::vector<ParamElement>& sample) {
    for (Tensor& p : params) {
        if (!p.is_leaf()) throw ContractError("check_gradients: parameters must be leaves");
        p.zero_grad();
    }
    loss().backward();

    std::vector<ParamElement> targets = sample;
    if (targets.empty())
        for (std::size_t k = 0; k < params.size(); ++k)
            for (std::size_t i = 0; i < params[k].numel(); ++i) targets.push_back({k, i});

    GradCheckReport report;
    for (const ParamElement& t : targets) {
        Tensor& p = params.at(t.param);
        const double original = p.at(t.element);
        auto value_at = [&](double offset) {
            p.set(t.element, original + offset);
            return loss().at(0);
        };
        auto estimate = [&](double h) {
            const double d1 = value_at(h) - value_at(-h);
            if (options.stencil == Stencil::central3) return d1 / (2.0 * h);
            const double d2 = value_at(2.0 * h) - value_at(-2.0 * h);
            return (8.0 * d1 - d2) / (12.0 * h);
        };

        double h = options.step;
        double numeric = estimate(h);
        for (int level = 0; level < options.refinements; ++level) {
            const double half = estimate(h / 2.0);
            if (std::abs(numeric - half) <= options.stability * std::max(std::abs(numeric), std::abs(half)) + options.noise)
                break;
            h /= 10.0;
            numeric = estimate(h);
        }
        p.set(t.element, original);

        GradCheckEntry e{t.param, t.element, p.grad_at(t.element), numeric, 0.0, h};
        e.rel_error = relative(e.analytic, e.numeric, options.floor);
        if (report.checked == 0 || e.rel_error > report.max_rel_error) {
            report.max_rel_error = e.rel_error;
            report.worst = e;
        }
        ++report.checked;
        report.entries.push_back(e);
    }
    return report;
}

}  // namespace sdtn
