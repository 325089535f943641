#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sdtn/blocks.hpp"
#include "sdtn/boxes.hpp"

namespace sdtn {

// Detections of batch item `image` with sigmoid score >= conf_thresh. Each
// cell predicts softplus-activated left/top/right/bottom distances in stride
// units around its centre; boxes are clipped to the image.
std::vector<Detection> decode(const nn::HeadOutput& raw, int image, double conf_thresh, int image_w, int image_h);

// Class-wise greedy suppression; output follows ranks_before order.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh);

struct PostprocessOptions {
    double conf_thresh = 0.001;
    double iou_thresh = 0.45;
    int pre_nms_top_k = 1000;
    int max_det = 300;
};

// decode -> keep the top pre_nms_top_k -> nms -> keep max_det.
std::vector<Detection> postprocess(const nn::HeadOutput& raw, int image, int image_w, int image_h,
                                   const PostprocessOptions& options = {});

struct MatchResult {
    std::vector<bool> tp;
    std::vector<int> matched_gt;  // -1 for false positives
};

// Detections must already be in ranks_before order. Each detection takes the
// highest-IoU unmatched ground truth of its class (lowest index on ties)
// with IoU >= iou_thresh.
MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GroundTruthBox>& gts,
                             double iou_thresh);

struct RankedFlag {
    double score = 0.0;
    bool tp = false;
};

// 101-point interpolated AP. Flags must be sorted by score descending; the
// precision/recall curve is sampled only after each group of equal scores,
// so the result does not depend on the order within ties. Returns nullopt
// (class skipped) when there are neither ground truths nor detections.
std::optional<double> average_precision(const std::vector<RankedFlag>& flags, int num_gt);

struct ClassReport {
    int num_gt = 0;
    int num_det = 0;  // detections at or above the operating threshold
    double precision = 0.0;
    double recall = 0.0;
    std::vector<double> ap;  // per IoU threshold; empty if skipped
    bool skipped = false;
    double map50() const { return ap.empty() ? 0.0 : ap.front(); }
    double map5095() const;
};

struct EvalReport {
    std::vector<double> iou_thresholds;
    std::vector<ClassReport> classes;
    double precision = 0.0;
    double recall = 0.0;
    double map50 = 0.0;
    double map5095 = 0.0;
    bool empty_ground_truth = false;
};

struct EvalOptions {
    double operating_conf = 0.25;  // for P and R
    double pr_iou = 0.5;
};

// AP uses every supplied detection; P and R are micro-averaged over classes
// at the operating confidence with IoU 0.5 matching.
EvalReport evaluate(const std::vector<std::vector<Detection>>& dets,
                    const std::vector<std::vector<GroundTruthBox>>& gts, int num_classes,
                    const EvalOptions& options = {});

// Per-class CSV plus an "all" row.
std::string report_csv(const EvalReport& report, const std::vector<std::string>& class_names);
// Plain-text table with header "Methods P R mAP@0.5 mAP@0.5:0.95"; values in percent.
std::string report_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

// Detections file: one `x1,y1,x2,y2,score,class_id` line per detection.
void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets);
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace sdtn
