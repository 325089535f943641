#pragma once

// Independent brute-force reference implementations used by unit and
// acceptance tests. They favour the literal definition over efficiency and
// share no code with the library beyond the Box/Detection types.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "sdtn/boxes.hpp"

namespace sdtn::oracle {

inline double box_iou(const Box& a, const Box& b) {
    const double ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
    const double ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
    const double inter = (ix2 > ix1 && iy2 > iy1) ? (ix2 - ix1) * (iy2 - iy1) : 0.0;
    const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline bool before(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.class_id != b.class_id) return a.class_id < b.class_id;
    if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
    if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
    if (a.box.x2 != b.box.x2) return a.box.x2 < b.box.x2;
    return a.box.y2 < b.box.y2;
}

// Repeatedly takes the best remaining detection and deletes every
// same-class detection overlapping it at or above the threshold.
inline std::vector<Detection> nms(std::vector<Detection> pool, double thresh) {
    std::vector<Detection> kept;
    while (!pool.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pool.size(); ++i)
            if (before(pool[i], pool[best])) best = i;
        const Detection top = pool[best];
        kept.push_back(top);
        std::vector<Detection> rest;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (i == best) continue;
            if (pool[i].class_id == top.class_id && box_iou(pool[i].box, top.box) >= thresh) continue;
            rest.push_back(pool[i]);
        }
        pool = std::move(rest);
    }
    return kept;
}

struct Scores {
    double precision = 0.0;
    double recall = 0.0;
    double map50 = 0.0;
    double map5095 = 0.0;
};

// Literal AP: mean over 101 recall levels of the best precision achieved at
// any score cut whose recall reaches that level.
inline Scores evaluate(const std::vector<std::vector<Detection>>& dets,
                       const std::vector<std::vector<GroundTruthBox>>& gts, int num_classes, double conf = 0.25) {
    Scores s;
    int evaluated = 0, total_gt = 0, total_det = 0, total_tp = 0;
    for (int c = 0; c < num_classes; ++c) {
        int num_gt = 0;
        for (const auto& g : gts)
            for (const auto& b : g) num_gt += b.class_id == c;
        int num_det = 0;
        for (const auto& d : dets)
            for (const auto& b : d) num_det += b.class_id == c;
        total_gt += num_gt;
        if (num_gt == 0 && num_det == 0) continue;
        ++evaluated;

        auto tp_flags = [&](double t) {
            // (score, tp) for every detection of class c.
            std::vector<std::pair<double, bool>> out;
            for (std::size_t i = 0; i < dets.size(); ++i) {
                std::vector<Detection> mine;
                for (const auto& d : dets[i])
                    if (d.class_id == c) mine.push_back(d);
                std::sort(mine.begin(), mine.end(), before);
                std::vector<bool> taken(gts[i].size(), false);
                for (const auto& d : mine) {
                    int pick = -1;
                    double best = -1.0;
                    for (std::size_t g = 0; g < gts[i].size(); ++g) {
                        if (taken[g] || gts[i][g].class_id != c) continue;
                        const double o = box_iou(d.box, gts[i][g].box);
                        if (o >= t && o > best) {
                            best = o;
                            pick = static_cast<int>(g);
                        }
                    }
                    if (pick >= 0) taken[static_cast<std::size_t>(pick)] = true;
                    out.emplace_back(d.score, pick >= 0);
                }
            }
            return out;
        };

        const auto at50 = tp_flags(0.5);
        for (const auto& [score, tp] : at50)
            if (score >= conf) {
                ++total_det;
                total_tp += tp;
            }

        double sum_ap = 0.0, ap50 = 0.0;
        for (int k = 0; k < 10; ++k) {
            const double t = (50 + 5 * k) / 100.0;
            const auto flags = tp_flags(t);
            double ap = 0.0;
            if (num_gt > 0) {
                std::vector<std::pair<double, double>> points;  // (recall, precision) at each distinct score cut
                std::vector<double> cuts;
                for (const auto& f : flags) cuts.push_back(f.first);
                std::sort(cuts.begin(), cuts.end());
                cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
                for (double cut : cuts) {
                    int n = 0, tp = 0;
                    for (const auto& f : flags)
                        if (f.first >= cut) {
                            ++n;
                            tp += f.second;
                        }
                    points.emplace_back(static_cast<double>(tp) / num_gt, static_cast<double>(tp) / n);
                }
                for (int r = 0; r <= 100; ++r) {
                    double best = 0.0;
                    for (const auto& [rec, prec] : points)
                        if (rec >= r / 100.0) best = std::max(best, prec);
                    ap += best;
                }
                ap /= 101.0;
            }
            if (k == 0) ap50 = ap;
            sum_ap += ap;
        }
        s.map50 += ap50;
        s.map5095 += sum_ap / 10.0;
    }
    if (evaluated) {
        s.map50 /= evaluated;
        s.map5095 /= evaluated;
    }
    s.precision = total_det ? static_cast<double>(total_tp) / total_det : 0.0;
    s.recall = total_gt ? static_cast<double>(total_tp) / total_gt : 0.0;
    return s;
}

// Random scene set: ground truths plus noisy, duplicated and spurious
// detections with scores quantised to create ties.
struct RandomScenes {
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<GroundTruthBox>> gts;
};

inline RandomScenes random_scenes(std::mt19937_64& rng, int images, int max_boxes, int num_classes) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, num_classes - 1);
    auto rand_box = [&] {
        const double x = u(rng) * 80, y = u(rng) * 80, w = 4 + u(rng) * 20, h = 4 + u(rng) * 20;
        return Box{x, y, x + w, y + h};
    };
    RandomScenes s;
    for (int i = 0; i < images; ++i) {
        std::vector<GroundTruthBox> g;
        std::vector<Detection> d;
        const int n = std::uniform_int_distribution<int>(0, max_boxes / 2)(rng);
        for (int k = 0; k < n; ++k) g.push_back({rand_box(), cls(rng), 0, 0});
        for (const auto& gt : g) {
            const int copies = std::uniform_int_distribution<int>(0, 2)(rng);
            for (int c = 0; c < copies && static_cast<int>(d.size()) < max_boxes - n; ++c) {
                Box b = gt.box;
                const double j = 3.0 * u(rng);
                b.x1 += j * (u(rng) - 0.5);
                b.y1 += j * (u(rng) - 0.5);
                b.x2 += j * (u(rng) - 0.5);
                b.y2 += j * (u(rng) - 0.5);
                const int c_id = u(rng) < 0.85 ? gt.class_id : cls(rng);
                d.push_back({b, c_id, std::round(u(rng) * 10) / 10});
            }
        }
        while (static_cast<int>(d.size()) + n < max_boxes && u(rng) < 0.5)
            d.push_back({rand_box(), cls(rng), std::round(u(rng) * 10) / 10});
        s.gts.push_back(std::move(g));
        s.dets.push_back(std::move(d));
    }
    return s;
}

}  // namespace sdtn::oracle
