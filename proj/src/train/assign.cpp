#include <cmath>
#include <limits>

#include "sdtn/error.hpp"
#include "sdtn/train.hpp"

namespace sdtn::train {

int AssignedTargets::num_positive() const {
    int n = 0;
    for (const auto& s : scales)
        for (int o : s.owner) n += o >= 0;
    return n;
}

std::vector<double> scale_upper_bounds(std::span<const int> strides) {
    std::vector<double> out;
    for (std::size_t k = 0; k < strides.size(); ++k)
        out.push_back(k + 1 == strides.size() ? std::numeric_limits<double>::infinity() : 4.0 * strides[k]);
    return out;
}

AssignedTargets assign_targets(const std::vector<GroundTruthBox>& gts, std::span<const int> strides, int input_h,
                               int input_w) {
    if (strides.empty()) throw ContractError("assign_targets needs at least one stride");
    AssignedTargets t;
    t.gts = gts;
    for (int s : strides) {
        if (s <= 0 || input_h % s != 0 || input_w % s != 0)
            throw ShapeError("stride " + std::to_string(s) + " does not divide the input size");
        ScaleTargets st;
        st.stride = s;
        st.grid_h = input_h / s;
        st.grid_w = input_w / s;
        st.owner.assign(static_cast<std::size_t>(st.grid_h) * st.grid_w, -1);
        t.scales.push_back(std::move(st));
    }
    const std::vector<double> upper = scale_upper_bounds(strides);

    for (std::size_t i = 0; i < gts.size(); ++i) {
        const Box& b = gts[i].box;
        const double area = b.area();
        if (!(area > 0.0)) continue;
        const double size = std::sqrt(area);
        std::size_t k = 0;
        while (size > upper[k]) ++k;
        ScaleTargets& st = t.scales[k];
        const int gx = std::clamp(static_cast<int>(std::floor(b.cx() / st.stride)), 0, st.grid_w - 1);
        const int gy = std::clamp(static_cast<int>(std::floor(b.cy() / st.stride)), 0, st.grid_h - 1);
        int& owner = st.owner[static_cast<std::size_t>(gy) * st.grid_w + gx];
        if (owner < 0 || area < gts[static_cast<std::size_t>(owner)].box.area()) owner = static_cast<int>(i);
    }
    return t;
}

}  // namespace sdtn::train
