#include "sdtn/postprocess.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sdtn {

namespace {

double softplus(double x) {
    return x > 20.0 ? x : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    return 1.0 / (1.0 + std::exp(-x));
}

}  // namespace

std::vector<Detection> decode(const nn::HeadOutput& raw, int image, double conf_thresh, int image_w, int image_h) {
    std::vector<Detection> out;
    for (std::size_t k = 0; k < raw.maps.size(); ++k) {
        const Tensor& m = raw.maps[k];
        const Shape& s = m.shape();
        const int nc = s.c - 4;
        const double stride = raw.strides[k];
        const std::vector<double> v = m.to_vector();
        auto at = [&](int c, int y, int x) { return v[s.offset(image, c, y, x)]; };
        for (int gy = 0; gy < s.h; ++gy)
            for (int gx = 0; gx < s.w; ++gx) {
                const double cx = (gx + 0.5) * stride, cy = (gy + 0.5) * stride;
                bool have_box = false;
                Box box;
                for (int c = 0; c < nc; ++c) {
                    const double score = sigmoid(at(4 + c, gy, gx));
                    if (!(score >= conf_thresh)) continue;
                    if (!have_box) {
                        box.x1 = std::clamp(cx - softplus(at(0, gy, gx)) * stride, 0.0, double(image_w));
                        box.y1 = std::clamp(cy - softplus(at(1, gy, gx)) * stride, 0.0, double(image_h));
                        box.x2 = std::clamp(cx + softplus(at(2, gy, gx)) * stride, 0.0, double(image_w));
                        box.y2 = std::clamp(cy + softplus(at(3, gy, gx)) * stride, 0.0, double(image_h));
                        have_box = true;
                    }
                    out.push_back({box, c, score});
                }
            }
    }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
    std::sort(dets.begin(), dets.end(), ranks_before);
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        bool keep = true;
        for (const Detection& k : kept)
            if (k.class_id == d.class_id && iou(k.box, d.box) >= iou_thresh) {
                keep = false;
                break;
            }
        if (keep) kept.push_back(d);
    }
    return kept;
}

std::vector<Detection> postprocess(const nn::HeadOutput& raw, int image, int image_w, int image_h,
                                   const PostprocessOptions& o) {
    std::vector<Detection> dets = decode(raw, image, o.conf_thresh, image_w, image_h);
    std::sort(dets.begin(), dets.end(), ranks_before);
    if (static_cast<int>(dets.size()) > o.pre_nms_top_k) dets.resize(static_cast<std::size_t>(o.pre_nms_top_k));
    dets = nms(std::move(dets), o.iou_thresh);
    if (static_cast<int>(dets.size()) > o.max_det) dets.resize(static_cast<std::size_t>(o.max_det));
    return dets;
}

MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                             double iou_thresh) {
    MatchResult r{std::vector<bool>(dets.size(), false), std::vector<int>(dets.size(), -1)};
    std::vector<bool> used(gts.size(), false);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        int best = -1;
        double best_iou = iou_thresh;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (used[g] || gts[g].class_id != dets[i].class_id) continue;
            const double o = iou(dets[i].box, gts[g].box);
            if (o >= best_iou && (best < 0 || o > best_iou)) {
                best = static_cast<int>(g);
                best_iou = o;
            }
        }
        if (best >= 0) {
            used[static_cast<std::size_t>(best)] = true;
            r.tp[i] = true;
            r.matched_gt[i] = best;
        }
    }
    return r;
}

std::optional<double> average_precision(const std::vector<RankedFlag>& flags, int num_gt) {
    if (num_gt == 0) return flags.empty() ? std::nullopt : std::optional<double>(0.0);
    std::vector<double> recall, precision;
    int tp = 0;
    for (std::size_t i = 0; i < flags.size(); ++i) {
        tp += flags[i].tp;
        const bool group_end = i + 1 == flags.size() || flags[i + 1].score != flags[i].score;
        if (!group_end) continue;
        recall.push_back(static_cast<double>(tp) / num_gt);
        precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    }
    for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double sum = 0.0;
    for (int k = 0; k <= 100; ++k) {
        const double r = k / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 101.0;
}

double ClassReport::map5095() const {
    if (ap.empty()) return 0.0;
    return std::accumulate(ap.begin(), ap.end(), 0.0) / static_cast<double>(ap.size());
}

EvalReport evaluate(const std::vector<std::vector<Detection>>& dets,
                    const std::vector<std::vector<GroundTruthBox>>& gts, int num_classes, const EvalOptions& options) {
    if (dets.size() != gts.size()) throw ContractError("evaluate: detection and ground-truth image counts differ");
    EvalReport report;
    for (int k = 0; k < 10; ++k) report.iou_thresholds.push_back((50 + 5 * k) / 100.0);
    report.classes.resize(static_cast<std::size_t>(num_classes));

    // Per image, per class: detections in rank order.
    const std::size_t n_images = dets.size();
    std::vector<std::vector<std::vector<Detection>>> by_class(n_images);
    std::vector<std::vector<std::vector<GroundTruthBox>>> gt_by_class(n_images);
    int total_gt = 0;
    for (std::size_t i = 0; i < n_images; ++i) {
        by_class[i].resize(static_cast<std::size_t>(num_classes));
        gt_by_class[i].resize(static_cast<std::size_t>(num_classes));
        for (const Detection& d : dets[i]) {
            if (d.class_id < 0 || d.class_id >= num_classes) throw ContractError("evaluate: detection class out of range");
            by_class[i][static_cast<std::size_t>(d.class_id)].push_back(d);
        }
        for (const GroundTruthBox& g : gts[i]) {
            if (g.class_id < 0 || g.class_id >= num_classes) throw ContractError("evaluate: ground-truth class out of range");
            gt_by_class[i][static_cast<std::size_t>(g.class_id)].push_back(g);
            ++total_gt;
        }
        for (auto& v : by_class[i]) std::sort(v.begin(), v.end(), ranks_before);
    }
    report.empty_ground_truth = total_gt == 0;

    int all_tp = 0, all_det = 0;
    double sum50 = 0.0, sum5095 = 0.0;
    int evaluated = 0;
    for (int c = 0; c < num_classes; ++c) {
        ClassReport& cr = report.classes[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < n_images; ++i) cr.num_gt += static_cast<int>(gt_by_class[i][static_cast<std::size_t>(c)].size());

        int tp_at_conf = 0;
        for (std::size_t i = 0; i < n_images; ++i) {
            const auto& d = by_class[i][static_cast<std::size_t>(c)];
            const MatchResult m = match_detections(d, gt_by_class[i][static_cast<std::size_t>(c)], options.pr_iou);
            for (std::size_t j = 0; j < d.size(); ++j)
                if (d[j].score >= options.operating_conf) {
                    ++cr.num_det;
                    tp_at_conf += m.tp[j];
                }
        }
        cr.precision = cr.num_det ? static_cast<double>(tp_at_conf) / cr.num_det : 0.0;
        cr.recall = cr.num_gt ? static_cast<double>(tp_at_conf) / cr.num_gt : 0.0;
        all_tp += tp_at_conf;
        all_det += cr.num_det;

        for (double t : report.iou_thresholds) {
            std::vector<RankedFlag> flags;
            for (std::size_t i = 0; i < n_images; ++i) {
                const auto& d = by_class[i][static_cast<std::size_t>(c)];
                const MatchResult m = match_detections(d, gt_by_class[i][static_cast<std::size_t>(c)], t);
                for (std::size_t j = 0; j < d.size(); ++j) flags.push_back({d[j].score, m.tp[j]});
            }
            std::stable_sort(flags.begin(), flags.end(), [](const RankedFlag& a, const RankedFlag& b) { return a.score > b.score; });
            const auto ap = average_precision(flags, cr.num_gt);
            if (!ap) {
                cr.skipped = true;
                break;
            }
            cr.ap.push_back(*ap);
        }
        if (!cr.skipped) {
            sum50 += cr.map50();
            sum5095 += cr.map5095();
            ++evaluated;
        }
    }
    report.precision = all_det ? static_cast<double>(all_tp) / all_det : 0.0;
    report.recall = total_gt ? static_cast<double>(all_tp) / total_gt : 0.0;
    report.map50 = evaluated ? sum50 / evaluated : 0.0;
    report.map5095 = evaluated ? sum5095 / evaluated : 0.0;
    return report;
}

std::string report_csv(const EvalReport& report, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "class,num_gt,num_det,precision,recall,map50,map5095\n";
    int gt = 0, det = 0;
    for (std::size_t c = 0; c < report.classes.size(); ++c) {
        const ClassReport& cr = report.classes[c];
        gt += cr.num_gt;
        det += cr.num_det;
        const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
        os << name << ',' << cr.num_gt << ',' << cr.num_det << ',' << cr.precision << ',' << cr.recall << ',';
        if (cr.skipped) os << ",\n";
        else os << cr.map50() << ',' << cr.map5095() << '\n';
    }
    os << "all," << gt << ',' << det << ',' << report.precision << ',' << report.recall << ',' << report.map50 << ','
       << report.map5095 << '\n';
    return os.str();
}

std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::string out = "Methods P R mAP@0.5 mAP@0.5:0.95\n";
    char buf[128];
    for (const auto& [name, r] : rows) {
        std::snprintf(buf, sizeof buf, " %.1f %.1f %.1f %.1f\n", 100.0 * r.precision, 100.0 * r.recall, 100.0 * r.map50,
                      100.0 * r.map5095);
        out += name + buf;
    }
    return out;
}

void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write detections " + path.string());
    char buf[256];
    for (const Detection& d : dets) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", d.box.x1, d.box.y1, d.box.x2, d.box.y2,
                      d.score, d.class_id);
        f << buf;
    }
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open detections " + path.string());
    std::vector<Detection> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        Detection d;
        char tail = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%d%c", &d.box.x1, &d.box.y1, &d.box.x2, &d.box.y2, &d.score,
                        &d.class_id, &tail) != 6)
            throw ParseError(path.string() + ": malformed detection line", line_no);
        out.push_back(d);
    }
    return out;
}

}  // namespace sdtn
