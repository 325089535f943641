#include <algorithm>
#include <random>
#include <set>

#include "sdtn/train.hpp"

namespace sdtn::train {

namespace {

// Identity whose backward negates the incoming gradient.
Tensor flip_gradient(const Tensor& x) {
    BackwardFn backward = [x](const Tensor& g) {
        dispatch(g.precision(), [&](auto tag) {
            using T = decltype(tag);
            auto buf = x.template grad_buffer<T>();
            const auto src = g.template data<T>();
            for (std::size_t i = 0; i < buf.size(); ++i) buf[i] -= src[i];
        });
    };
    Tensor out = Tensor::make_result(x.shape(), x.precision(), "flip_gradient", {x}, std::move(backward));
    dispatch(x.precision(), [&](auto tag) {
        using T = decltype(tag);
        const auto src = x.template data<T>();
        std::copy(src.begin(), src.end(), out.result_data<T>().begin());
    });
    return out;
}

}  // namespace

GraphGradcheckReport gradcheck_model(const ModelConfig& config, std::uint64_t seed,
                                     const GraphGradcheckOptions& options) {
    PrecisionScope f64(Precision::f64);
    Model model = Model::build(config, seed);
    const int size = config.input_size;
    std::mt19937_64 rng(seed ^ 0xC0FFEEULL);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53; };

    const Shape in_shape{options.batch, 3, size, size};
    std::vector<double> pixels(in_shape.numel());
    for (double& v : pixels) v = uniform(0.0, 1.0);
    const Tensor input = Tensor::from_values(in_shape, pixels);

    const std::vector<int> strides = model.head_strides();
    std::vector<AssignedTargets> targets;
    for (int b = 0; b < options.batch; ++b) {
        std::vector<GroundTruthBox> gts;
        for (int k = 0; k < options.boxes_per_image; ++k) {
            const double w = uniform(3.0, size / 2.0), h = uniform(3.0, size / 2.0);
            const double x = uniform(0.0, size - w), y = uniform(0.0, size - h);
            gts.push_back({{x, y, x + w, y + h}, static_cast<int>(rng() % static_cast<std::uint64_t>(config.num_classes)), 0, 0});
        }
        targets.push_back(assign_targets(gts, strides, size, size));
    }

    auto loss = [&] {
        const Tensor total = detection_loss(model.forward(input, true), targets).total;
        return options.flip_gradient_sign ? flip_gradient(total) : total;
    };

    // Parameter index -> owning layer.
    std::vector<int> owner;
    for (std::size_t l = 0; l < model.layers().size(); ++l)
        for (std::size_t i = 0; i < model.layer_state(l).params.size(); ++i) owner.push_back(static_cast<int>(l));
    const std::vector<Tensor> params = model.state().params;

    // One element of every tensor, then uniform draws over all elements.
    std::size_t total_elements = 0;
    for (const Tensor& p : params) total_elements += p.numel();
    const std::size_t want = std::min(options.samples, total_elements);
    std::set<std::pair<std::size_t, std::size_t>> chosen;
    for (std::size_t i = 0; i < params.size() && chosen.size() < want; ++i) chosen.insert({i, rng() % params[i].numel()});
    while (chosen.size() < want) {
        std::size_t flat = rng() % total_elements, i = 0;
        while (flat >= params[i].numel()) flat -= params[i++].numel();
        chosen.insert({i, flat});
    }
    std::vector<ParamElement> sample;
    for (const auto& [p, e] : chosen) sample.push_back({p, e});

    const GradCheckReport r = check_gradients(loss, params, {}, sample);

    GraphGradcheckReport out;
    out.max_rel_error = r.max_rel_error;
    out.checked = r.checked;
    for (const GradCheckEntry& e : r.entries) {
        const int layer = owner[e.param];
        auto it = std::find_if(out.per_layer.begin(), out.per_layer.end(), [&](const LayerWorst& w) { return w.layer == layer; });
        if (it == out.per_layer.end()) {
            out.per_layer.push_back(
                {layer, std::string(kind_name(model.layers()[static_cast<std::size_t>(layer)].spec.kind)), 0, e});
            it = out.per_layer.end() - 1;
        }
        ++it->checked;
        if (e.rel_error > it->worst.rel_error) it->worst = e;
    }
    std::sort(out.per_layer.begin(), out.per_layer.end(), [](const LayerWorst& a, const LayerWorst& b) { return a.layer < b.layer; });
    return out;
}

}  // namespace sdtn::train
