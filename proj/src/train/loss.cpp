#include <cmath>
#include <memory>

#include "sdtn/error.hpp"
#include "sdtn/train.hpp"

namespace sdtn::train {

namespace {

double softplus(double x) { return x > 20.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// BCE with logits, stable form: max(x, 0) - x*y + log(1 + exp(-|x|)).
double bce(double x, double y) { return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

LossResult detection_loss(const nn::HeadOutput& preds, const std::vector<AssignedTargets>& targets,
                          const LossOptions& options) {
    const std::size_t num_scales = preds.maps.size();
    if (num_scales == 0 || preds.strides.size() != num_scales) throw ShapeError("detection_loss: empty head output");
    const int batch = preds.maps[0].shape().n;
    if (static_cast<int>(targets.size()) != batch)
        throw ShapeError("detection_loss: " + std::to_string(targets.size()) + " target sets for batch of " +
                         std::to_string(batch));

    std::vector<std::vector<double>> values(num_scales);
    for (std::size_t k = 0; k < num_scales; ++k) {
        const Shape& s = preds.maps[k].shape();
        if (s.n != batch || s.c < 5) throw ShapeError("detection_loss: inconsistent head map " + s.str());
        for (const AssignedTargets& t : targets) {
            if (t.scales.size() != num_scales || t.scales[k].grid_h != s.h || t.scales[k].grid_w != s.w ||
                t.scales[k].stride != preds.strides[k])
                throw ShapeError("detection_loss: targets do not match head map " + std::to_string(k));
        }
        values[k] = preds.maps[k].to_vector();
        for (double v : values[k])
            if (!std::isfinite(v)) throw NumericalError("detection_loss: non-finite prediction in head map " + std::to_string(k));
    }

    int positives = 0;
    for (const auto& t : targets) positives += t.num_positive();
    const double cls_norm = 1.0 / std::max(1, positives);
    const double box_norm = positives > 0 ? 1.0 / positives : 0.0;

    auto grads = std::make_shared<std::vector<std::vector<double>>>(num_scales);
    double cls_sum = 0.0, box_sum = 0.0;
    for (std::size_t k = 0; k < num_scales; ++k) {
        const Shape& s = preds.maps[k].shape();
        const int nc = s.c - 4;
        const double stride = preds.strides[k];
        const std::vector<double>& v = values[k];
        std::vector<double>& g = (*grads)[k];
        g.assign(v.size(), 0.0);
        for (int n = 0; n < batch; ++n) {
            const AssignedTargets& t = targets[static_cast<std::size_t>(n)];
            const ScaleTargets& st = t.scales[k];
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < s.w; ++x) {
                    const int owner = st.owner[static_cast<std::size_t>(y) * s.w + x];
                    int cls = -1;
                    if (owner >= 0) {
                        cls = t.gts[static_cast<std::size_t>(owner)].class_id;
                        if (cls < 0 || cls >= nc)
                            throw ContractError("detection_loss: ground-truth class " + std::to_string(cls) +
                                                " outside the model's " + std::to_string(nc) + " classes");
                    }
                    for (int c = 0; c < nc; ++c) {
                        const std::size_t i = s.offset(n, 4 + c, y, x);
                        const double target = c == cls ? 1.0 : 0.0;
                        cls_sum += bce(v[i], target);
                        g[i] = (sigmoid(v[i]) - target) * cls_norm;
                    }
                    if (owner < 0) continue;

                    const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
                    std::array<std::size_t, 4> idx;
                    std::array<double, 4> raw;
                    for (int j = 0; j < 4; ++j) {
                        idx[j] = s.offset(n, j, y, x);
                        raw[j] = v[idx[j]];
                    }
                    const Box pred{cx - softplus(raw[0]) * stride, cy - softplus(raw[1]) * stride,
                                   cx + softplus(raw[2]) * stride, cy + softplus(raw[3]) * stride};
                    const CiouGrad cg = ciou_with_grad(pred, t.gts[static_cast<std::size_t>(owner)].box);
                    box_sum += 1.0 - cg.value;
                    // d(1 - ciou)/d raw_j = -d ciou/d corner_j * d corner_j/d raw_j.
                    const std::array<double, 4> sign{-1.0, -1.0, 1.0, 1.0};
                    for (int j = 0; j < 4; ++j)
                        g[idx[j]] = -cg.d_pred[j] * sign[j] * stride * sigmoid(raw[j]) * box_norm * options.box_weight;
                }
        }
    }

    LossResult r;
    r.positives = positives;
    r.cls = cls_sum * cls_norm;
    r.box = box_sum * box_norm;
    if (r.cls < 0.0 || r.box < -1e-12) throw NumericalError("detection_loss: negative loss component");
    const double total = r.cls + options.box_weight * r.box;
    if (!std::isfinite(total)) throw NumericalError("detection_loss: non-finite loss");

    const Precision p = preds.maps[0].precision();
    std::vector<Tensor> inputs(preds.maps.begin(), preds.maps.end());
    BackwardFn backward = [inputs, grads](const Tensor& grad_out) {
        const double go = grad_out.at(0);
        for (std::size_t k = 0; k < inputs.size(); ++k) {
            if (!inputs[k].requires_grad()) continue;
            dispatch(inputs[k].precision(), [&](auto tag) {
                using T = decltype(tag);
                auto buf = inputs[k].template grad_buffer<T>();
                const auto& g = (*grads)[k];
                for (std::size_t i = 0; i < g.size(); ++i) buf[i] += static_cast<T>(go * g[i]);
            });
        }
    };
    r.total = Tensor::make_result({1, 1, 1, 1}, p, "detection_loss", inputs, std::move(backward));
    dispatch(p, [&](auto tag) {
        using T = decltype(tag);
        r.total.result_data<T>()[0] = static_cast<T>(total);
    });
    return r;
}

}  // namespace sdtn::train
