#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdtn/boxes.hpp"
#include "sdtn/data.hpp"
#include "sdtn/gradcheck.hpp"
#include "sdtn/model.hpp"
#include "sdtn/postprocess.hpp"

namespace sdtn::train {

// ---- target assignment

struct ScaleTargets {
    int stride = 0;
    int grid_h = 0;
    int grid_w = 0;
    std::vector<int> owner;  // per cell (row-major): ground-truth index, or -1
};

struct AssignedTargets {
    std::vector<GroundTruthBox> gts;
    std::vector<ScaleTargets> scales;
    int num_positive() const;
};

// Upper sqrt-area bound of each scale: 4 * stride, unbounded for the last.
// A box belongs to the first scale whose bound it does not exceed.
std::vector<double> scale_upper_bounds(std::span<const int> strides);

// Centre-cell assignment. Zero-area boxes are ignored; when two boxes claim
// one cell the smaller area wins, then the lower index.
AssignedTargets assign_targets(const std::vector<GroundTruthBox>& gts, std::span<const int> strides, int input_h,
                               int input_w);

// ---- CIoU

// IoU minus the normalised centre distance minus the aspect term alpha * v.
// Lies in [-1.5, 1]; 1 only for identical boxes of positive area; 0 when
// both boxes collapse to the same point.
double ciou(const Box& pred, const Box& target);

struct CiouGrad {
    double value = 0.0;
    std::array<double, 4> d_pred{};  // d ciou / d (x1, y1, x2, y2) of pred, alpha included
};
CiouGrad ciou_with_grad(const Box& pred, const Box& target);

// ---- loss

struct LossOptions {
    double box_weight = 2.0;
};

struct LossResult {
    Tensor total;  // scalar, differentiable w.r.t. every head map
    double cls = 0.0;
    double box = 0.0;
    int positives = 0;
};

// cls: BCE-with-logits summed over every cell and class of the batch,
// divided by max(1, positives). box: mean of 1 - CIoU over positive cells,
// with boxes decoded as in postprocess (softplus ltrb * stride around the
// cell centre, no clipping). total = cls + box_weight * box.
// NaN or Inf in the predictions raises NumericalError.
LossResult detection_loss(const nn::HeadOutput& preds, const std::vector<AssignedTargets>& targets,
                          const LossOptions& options = {});

// ---- optimiser

class Sgd {
public:
    Sgd(std::vector<Tensor> params, double lr, double momentum, double weight_decay);

    // v = momentum * v + grad + weight_decay * p; p -= lr * v; grads zeroed.
    // Every parameter must hold a gradient (ContractError otherwise, with
    // nothing updated).
    void step();

    double lr() const { return lr_; }
    void set_lr(double lr);
    double momentum() const { return momentum_; }
    void set_momentum(double momentum);
    const std::vector<std::vector<double>>& velocities() const { return velocity_; }
    void set_velocities(std::vector<std::vector<double>> v);

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> velocity_;
    double lr_, momentum_, weight_decay_;
};

// ---- protocol

struct Protocol {
    int max_epochs = 300;
    int patience = 50;
    double lr = 0.01;
    double lrf = 0.01;  // final lr factor of the linear decay over max_epochs; 1 keeps lr constant
    double momentum = 0.937;
    double weight_decay = 5e-4;
    // Linear warmup over max(warmup_epochs * batches_per_epoch, warmup_min_iters)
    // optimizer steps: lr rises from 0 and momentum from warmup_momentum.
    double warmup_epochs = 3.0;
    int warmup_min_iters = 100;
    double warmup_momentum = 0.8;
    int batch_size = 8;
    std::uint64_t seed = 0;
    Precision precision = Precision::f32;
    bool shuffle = true;  // reshuffle the training set every epoch

    friend bool operator==(const Protocol&, const Protocol&) = default;
};

// Learning rate for 1-based `epoch`: lr * ((1 - (epoch-1)/max_epochs) * (1 - lrf) + lrf).
double scheduled_lr(const Protocol& p, int epoch);

struct StepHyper {
    double lr;
    double momentum;
};
// lr and momentum for optimizer step `iteration` (0-based, counted from the
// start of training) inside 1-based `epoch`.
StepHyper step_hyper(const Protocol& p, int epoch, long long iteration, long long batches_per_epoch);

// key=value lines, '#' comments; unknown keys and bad values are ParseErrors.
Protocol parse_protocol(const std::string& text, const std::string& source = "<protocol>");
Protocol load_protocol(const std::filesystem::path& path);
std::string to_text(const Protocol& p);

// ---- early stopping

class EarlyStopping {
public:
    explicit EarlyStopping(int patience);

    // Records the metric of `epoch`; returns true when training should stop
    // (patience epochs in a row without a strict improvement).
    bool update(int epoch, double metric);

    int patience() const { return patience_; }
    int best_epoch() const { return best_epoch_; }
    double best() const { return best_; }
    int counter() const { return counter_; }
    void restore(int best_epoch, double best, int counter);

private:
    int patience_;
    int best_epoch_ = 0;
    double best_ = -1.0;
    int counter_ = 0;
};

struct TrainState {
    int epoch = 0;  // last completed epoch (1-based)
    double best_map50 = -1.0;
    int best_epoch = 0;
    int patience_counter = 0;
    double lr = 0.0;
    double momentum = 0.0;
    std::uint64_t seed = 0;
    bool stopped_early = false;
};

struct EpochLosses {
    double total = 0.0;
    double cls = 0.0;
    double box = 0.0;
};

struct EpochMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double map50 = 0.0;
    double map5095 = 0.0;
};

struct EpochRecord {
    int epoch = 0;
    EpochLosses losses;
    EpochMetrics metrics;
};

struct LoopHooks {
    std::function<EpochLosses(int epoch)> train_epoch;
    std::function<EpochMetrics(int epoch)> validate;
    // Called after the stopping state is updated for the epoch.
    std::function<void(const EpochRecord&, const TrainState&, bool improved)> on_epoch_end;
};

// Runs epochs start.epoch + 1 .. max_epochs, monitoring mAP@0.5, and stops
// once patience epochs pass without improvement.
TrainState run_training_loop(const Protocol& protocol, const LoopHooks& hooks, TrainState start = {});

// Batch order of an epoch: identity without shuffling, otherwise a
// Fisher-Yates permutation seeded from (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch, bool shuffle);

// Inference over a dataset followed by evaluate().
EvalReport evaluate_model(Model& model, const data::Dataset& dataset, int batch_size,
                          const PostprocessOptions& post = {}, const EvalOptions& eval = {},
                          std::vector<std::vector<Detection>>* detections = nullptr);

inline constexpr const char* kMetricsHeader = "epoch,loss_total,loss_cls,loss_box,precision,recall,map50,map5095";

struct FitOptions {
    std::filesystem::path out_dir;  // metrics.csv, last.ckpt, best.ckpt
    std::optional<std::filesystem::path> resume_from;
    PostprocessOptions post;
    EvalOptions eval;
    LossOptions loss;
    std::function<void(const std::string&)> log;
    // Stop after this epoch as if interrupted (0: run to completion). The lr
    // schedule still follows the protocol's max_epochs.
    int stop_after_epoch = 0;
};

struct FitResult {
    TrainState state;
    std::vector<EpochRecord> history;  // epochs run by this call
};

// Trains with SGD under `protocol`, validating every epoch. The model must
// have been built in protocol.precision. last.ckpt is written every epoch
// and best.ckpt whenever validation mAP@0.5 improves; both carry the
// optimiser and stopping state so training can resume from either.
FitResult fit(Model& model, const data::Dataset& train, const data::Dataset& val, const Protocol& protocol,
              const FitOptions& options);

// Serialised TrainState plus optimiser velocities (checkpoint extra section).
std::vector<std::uint8_t> encode_resume_state(const TrainState& state, const std::vector<std::vector<double>>& velocities);
TrainState decode_resume_state(std::span<const std::uint8_t> bytes, std::vector<std::vector<double>>& velocities);

// ---- full-graph gradient check

struct GraphGradcheckOptions {
    std::size_t samples = 256;  // parameter elements checked
    int batch = 2;
    int boxes_per_image = 3;
    bool flip_gradient_sign = false;  // fault injection: negates the loss gradient
};

struct LayerWorst {
    int layer = -1;
    std::string kind;
    std::size_t checked = 0;
    GradCheckEntry worst;
};

struct GraphGradcheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::vector<LayerWorst> per_layer;  // layers with parameters, declared order
};

// Finite-difference check of detection_loss(model(x)) in f64 with random
// images and ground truths drawn from `seed`.
GraphGradcheckReport gradcheck_model(const ModelConfig& config, std::uint64_t seed,
                                     const GraphGradcheckOptions& options = {});

}  // namespace sdtn::train
