#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "sdtn/error.hpp"
#include "sdtn/train.hpp"

namespace sdtn::train {

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
    if (patience <= 0) throw ConfigError("patience must be positive");
}

bool EarlyStopping::update(int epoch, double metric) {
    if (best_epoch_ == 0 || metric > best_) {
        best_ = metric;
        best_epoch_ = epoch;
        counter_ = 0;
    } else {
        ++counter_;
    }
    return counter_ >= patience_;
}

void EarlyStopping::restore(int best_epoch, double best, int counter) {
    best_epoch_ = best_epoch;
    best_ = best;
    counter_ = counter;
}

TrainState run_training_loop(const Protocol& protocol, const LoopHooks& hooks, TrainState state) {
    if (!hooks.train_epoch || !hooks.validate) throw ContractError("training loop needs train and validate hooks");
    EarlyStopping stopper(protocol.patience);
    stopper.restore(state.best_epoch, state.best_map50, state.patience_counter);
    state.lr = protocol.lr;
    state.momentum = protocol.momentum;
    state.seed = protocol.seed;
    state.stopped_early = false;
    if (state.epoch > 0 && stopper.counter() >= protocol.patience) {
        state.stopped_early = true;
        return state;
    }
    for (int epoch = state.epoch + 1; epoch <= protocol.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.losses = hooks.train_epoch(epoch);
        rec.metrics = hooks.validate(epoch);
        const int before = stopper.best_epoch();
        const bool stop = stopper.update(epoch, rec.metrics.map50);
        state.epoch = epoch;
        state.best_epoch = stopper.best_epoch();
        state.best_map50 = stopper.best();
        state.patience_counter = stopper.counter();
        state.stopped_early = stop;
        if (hooks.on_epoch_end) hooks.on_epoch_end(rec, state, stopper.best_epoch() != before);
        if (stop) break;
    }
    return state;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch, bool shuffle) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (!shuffle) return order;
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    return order;
}

EvalReport evaluate_model(Model& model, const data::Dataset& dataset, int batch_size, const PostprocessOptions& post,
                          const EvalOptions& eval, std::vector<std::vector<Detection>>* detections) {
    if (dataset.num_classes != model.config().num_classes)
        throw ConfigError("dataset has " + std::to_string(dataset.num_classes) + " classes, model has " +
                          std::to_string(model.config().num_classes));
    const Precision p = model.state().params.front().precision();
    const int size = model.input_size();
    std::vector<std::vector<Detection>> dets;
    std::vector<std::vector<GroundTruthBox>> gts;
    const std::size_t n = dataset.samples.size();
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(batch_size)); ++i) idx.push_back(i);
        const nn::HeadOutput raw = model.forward(data::make_batch(dataset, idx, p), false);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            dets.push_back(postprocess(raw, static_cast<int>(b), size, size, post));
            gts.push_back(dataset.samples[idx[b]].boxes);
        }
    }
    EvalReport report = evaluate(dets, gts, dataset.num_classes, eval);
    if (detections) *detections = std::move(dets);
    return report;
}

namespace {

class Writer {
public:
    template <class T>
    void put(T v) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        bytes.insert(bytes.end(), b, b + sizeof(T));  // little-endian hosts only, as for checkpoints
    }
    std::vector<std::uint8_t> bytes;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
    template <class T>
    T get() {
        if (pos_ + sizeof(T) > bytes_.size()) throw FormatError("training state section is truncated");
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

constexpr std::uint32_t kResumeVersion = 1;

std::string csv_row(const EpochRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.epoch, r.losses.total, r.losses.cls,
                  r.losses.box, r.metrics.precision, r.metrics.recall, r.metrics.map50, r.metrics.map5095);
    return buf;
}

}  // namespace

std::vector<std::uint8_t> encode_resume_state(const TrainState& s, const std::vector<std::vector<double>>& velocities) {
    Writer w;
    w.put(kResumeVersion);
    w.put<std::int32_t>(s.epoch);
    w.put(s.best_map50);
    w.put<std::int32_t>(s.best_epoch);
    w.put<std::int32_t>(s.patience_counter);
    w.put(s.lr);
    w.put(s.momentum);
    w.put(s.seed);
    w.put<std::uint8_t>(s.stopped_early);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(velocities.size()));
    for (const auto& v : velocities) {
        w.put<std::uint64_t>(v.size());
        for (double x : v) w.put(x);
    }
    return w.bytes;
}

TrainState decode_resume_state(std::span<const std::uint8_t> bytes, std::vector<std::vector<double>>& velocities) {
    Reader r(bytes);
    if (r.get<std::uint32_t>() != kResumeVersion) throw FormatError("unsupported training state version");
    TrainState s;
    s.epoch = r.get<std::int32_t>();
    s.best_map50 = r.get<double>();
    s.best_epoch = r.get<std::int32_t>();
    s.patience_counter = r.get<std::int32_t>();
    s.lr = r.get<double>();
    s.momentum = r.get<double>();
    s.seed = r.get<std::uint64_t>();
    s.stopped_early = r.get<std::uint8_t>() != 0;
    const std::uint32_t count = r.get<std::uint32_t>();
    velocities.assign(count, {});
    for (auto& v : velocities) {
        const std::uint64_t len = r.get<std::uint64_t>();
        if (len > bytes.size()) throw FormatError("training state section is truncated");
        v.resize(len);
        for (double& x : v) x = r.get<double>();
    }
    if (!r.done()) throw FormatError("trailing bytes in training state section");
    return s;
}

FitResult fit(Model& model, const data::Dataset& train, const data::Dataset& val, const Protocol& protocol,
              const FitOptions& options) {
    namespace fs = std::filesystem;
    const int nc = model.config().num_classes;
    if (train.num_classes != nc || val.num_classes != nc)
        throw ConfigError("dataset class count does not match the model's " + std::to_string(nc) + " classes");
    if (train.samples.empty() || val.samples.empty()) throw ConfigError("training and validation sets must be non-empty");
    std::vector<Tensor> params = model.state().params;
    const Precision precision = params.front().precision();
    if (precision != protocol.precision) throw ConfigError("model precision differs from the protocol's");

    Sgd sgd(params, protocol.lr, protocol.momentum, protocol.weight_decay);
    TrainState state;
    if (options.resume_from) {
        const std::vector<std::uint8_t> extra = load_checkpoint(*options.resume_from, model);
        if (extra.empty()) throw FormatError(options.resume_from->string() + " carries no training state");
        std::vector<std::vector<double>> velocities;
        state = decode_resume_state(extra, velocities);
        sgd.set_velocities(std::move(velocities));
    }

    fs::create_directories(options.out_dir);
    const fs::path csv_path = options.out_dir / "metrics.csv";
    {
        std::vector<std::string> kept;
        if (options.resume_from && fs::exists(csv_path)) {
            std::ifstream in(csv_path);
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line))
                if (!line.empty() && std::stoi(line) <= state.epoch) kept.push_back(line);
        }
        std::ofstream out(csv_path, std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + csv_path.string());
        out << kMetricsHeader << '\n';
        for (const auto& l : kept) out << l << '\n';
    }

    const std::vector<int> strides = model.head_strides();
    const int size = model.input_size();
    FitResult result;

    LoopHooks hooks;
    hooks.train_epoch = [&](int epoch) {
        const auto order = epoch_order(train.samples.size(), protocol.seed, epoch, protocol.shuffle);
        const auto bs = static_cast<std::size_t>(protocol.batch_size);
        const auto batches = static_cast<long long>((order.size() + bs - 1) / bs);
        long long iteration = static_cast<long long>(epoch - 1) * batches;
        EpochLosses sum;
        for (std::size_t start = 0; start < order.size(); start += bs, ++iteration) {
            const StepHyper hyper = step_hyper(protocol, epoch, iteration, batches);
            sgd.set_lr(hyper.lr);
            sgd.set_momentum(hyper.momentum);
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(protocol.batch_size));
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<AssignedTargets> targets;
            for (std::size_t i : idx) targets.push_back(assign_targets(train.samples[i].boxes, strides, size, size));
            const nn::HeadOutput out = model.forward(data::make_batch(train, idx, precision), true);
            const LossResult loss = detection_loss(out, targets, options.loss);
            loss.total.backward();
            sgd.step();
            const double w = static_cast<double>(idx.size());
            sum.total += w * loss.total.at(0);
            sum.cls += w * loss.cls;
            sum.box += w * loss.box;
        }
        const double n = static_cast<double>(order.size());
        return EpochLosses{sum.total / n, sum.cls / n, sum.box / n};
    };
    hooks.validate = [&](int) {
        const EvalReport r = evaluate_model(model, val, protocol.batch_size, options.post, options.eval);
        return EpochMetrics{r.precision, r.recall, r.map50, r.map5095};
    };
    hooks.on_epoch_end = [&](const EpochRecord& rec, const TrainState& s, bool improved) {
        result.history.push_back(rec);
        {
            std::ofstream out(csv_path, std::ios::app);
            out << csv_row(rec) << '\n';
        }
        const std::vector<std::uint8_t> extra = encode_resume_state(s, sgd.velocities());
        save_checkpoint(options.out_dir / "last.ckpt", model, extra);
        if (improved) save_checkpoint(options.out_dir / "best.ckpt", model, extra);
        if (options.log) {
            char buf[200];
            std::snprintf(buf, sizeof buf, "epoch %d  loss %.4f (cls %.4f box %.4f)  P %.3f R %.3f mAP50 %.3f mAP50-95 %.3f%s",
                          rec.epoch, rec.losses.total, rec.losses.cls, rec.losses.box, rec.metrics.precision,
                          rec.metrics.recall, rec.metrics.map50, rec.metrics.map5095, improved ? "  *" : "");
            options.log(buf);
        }
    };

    Protocol bounded = protocol;
    if (options.stop_after_epoch > 0) bounded.max_epochs = std::min(protocol.max_epochs, options.stop_after_epoch);
    result.state = run_training_loop(bounded, hooks, state);
    return result;
}

}  // namespace sdtn::train
