#pragma once

#include <algorithm>
#include <tuple>

namespace sdtn {

// Axis-aligned box in pixel coordinates, x2 >= x1 and y2 >= y1.
struct Box {
    double x1 = 0.0;
    double y1 = 0.0;
    double x2 = 0.0;
    double y2 = 0.0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }

    friend bool operator==(const Box&, const Box&) = default;
    friend bool operator<(const Box& a, const Box& b) {
        return std::tie(a.x1, a.y1, a.x2, a.y2) < std::tie(b.x1, b.y1, b.x2, b.y2);
    }
};

struct GroundTruthBox {
    Box box;
    int class_id = 0;
    int occlusion = 0;   // 0 none, 1 partial, 2 heavy
    int truncation = 0;  // 0 none, 1 partial

    friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

struct Detection {
    Box box;
    int class_id = 0;
    double score = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

// Total order used everywhere detections are ranked: score descending,
// then class ascending, then box lexicographic ascending.
inline bool ranks_before(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    return a.box < b.box;
}

// Intersection over union; 0 when the union is empty.
inline double iou(const Box& a, const Box& b) {
    const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace sdtn
