#include "sdtn/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "sdtn/error.hpp"
#include "sdtn/train.hpp"

namespace sdtn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string shape_text(const Shape& s) {
    return std::to_string(s.c) + "x" + std::to_string(s.h) + "x" + std::to_string(s.w);
}

// Common knobs shared by the subcommands that take them.
struct Common {
    std::vector<std::string> configs;
    std::string protocol;
    std::string data;
    std::string val;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> size;
    double conf = 0.001;
    double iou = 0.45;
};

ModelConfig load_model_config(const std::string& path, const std::optional<int>& size) {
    ModelConfig cfg = load_config(path);
    if (size) {
        if (*size <= 0) throw ConfigError("--size must be positive");
        cfg.input_size = *size;
    }
    return cfg;
}

train::Protocol load_run_protocol(const Common& c) {
    train::Protocol p = c.protocol.empty() ? train::Protocol{} : train::load_protocol(c.protocol);
    if (c.seed) p.seed = *c.seed;
    return p;
}

// Written before any long computation so an interrupted run still records
// how it was started.
void write_manifest(const fs::path& out_dir, const std::string& command, const std::vector<std::string>& args,
                    const Common& c, const std::vector<ModelConfig>& configs, const std::optional<train::Protocol>& protocol) {
    fs::create_directories(out_dir);
    json j;
    j["command"] = command;
    j["args"] = args;
    j["tool_version"] = kToolVersion;
    j["output_dir"] = out_dir.string();
    j["config_paths"] = c.configs;
    json digests = json::array();
    for (const auto& cfg : configs) digests.push_back(hex(config_digest(cfg)));
    j["config_digests"] = digests;
    if (protocol) {
        j["seed"] = protocol->seed;
        j["protocol"] = train::to_text(*protocol);
    } else if (c.seed) {
        j["seed"] = *c.seed;
    }
    if (!c.data.empty()) j["data"] = c.data;
    if (!c.val.empty()) j["val"] = c.val;
    std::ofstream f(out_dir / "run.json");
    if (!f) throw ConfigError("cannot write " + (out_dir / "run.json").string());
    f << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << text;
}

int cmd_shapes(const Common& c, std::ostream& out) {
    ModelConfig cfg = load_model_config(c.configs.at(0), c.size);
    const auto shapes = shape_infer(cfg, cfg.input_size);
    Model model = Model::build(cfg, 0);
    const ParamCount pc = model.count_params();
    char line[256];
    std::snprintf(line, sizeof line, "%-5s %-10s %-14s %-28s %10s\n", "idx", "kind", "from", "output", "params");
    out << line;
    for (const LayerShape& s : shapes) {
        std::string from;
        for (int src : s.sources) from += (from.empty() ? "" : ",") + std::to_string(src);
        std::string shape;
        for (const Shape& o : s.outputs) shape += (shape.empty() ? "" : " ") + shape_text(o);
        std::snprintf(line, sizeof line, "%-5d %-10s %-14s %-28s %10zu\n", s.index, std::string(kind_name(s.kind)).c_str(),
                      from.c_str(), shape.c_str(), pc.per_layer[static_cast<std::size_t>(s.index)]);
        out << line;
    }
    std::string heads;
    for (const Shape& o : shapes.back().outputs) heads += " " + std::to_string(o.h) + "x" + std::to_string(o.w);
    out << "heads:" << heads << '\n';
    out << "params: total " << pc.total << ", head " << pc.head << '\n';
    return kOk;
}

int cmd_train(const Common& c, const std::string& resume, int stop_after, const std::vector<std::string>& args,
              std::ostream& out) {
    const ModelConfig cfg = load_model_config(c.configs.at(0), c.size);
    const train::Protocol protocol = load_run_protocol(c);
    write_manifest(c.out, "train", args, c, {cfg}, protocol);

    const data::Dataset train_set = data::load_dataset(c.data, cfg.input_size);
    const data::Dataset val_set = c.val.empty() ? train_set : data::load_dataset(c.val, cfg.input_size);
    PrecisionScope scope(protocol.precision);
    Model model = Model::build(cfg, protocol.seed);
    train::FitOptions opt;
    opt.out_dir = c.out;
    if (!resume.empty()) opt.resume_from = fs::path(resume);
    opt.stop_after_epoch = stop_after;
    opt.post.conf_thresh = c.conf;
    opt.post.iou_thresh = c.iou;
    opt.log = [&](const std::string& s) { out << s << std::endl; };
    const train::FitResult r = train::fit(model, train_set, val_set, protocol, opt);
    out << "stopped at epoch " << r.state.epoch << (r.state.stopped_early ? " (early stop)" : "") << ", best mAP@0.5 "
        << r.state.best_map50 << " at epoch " << r.state.best_epoch << '\n';
    return kOk;
}

void write_detection_dir(const fs::path& dir, const data::Dataset& ds, const std::vector<std::vector<Detection>>& dets) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) write_detections(dir / (ds.samples[i].name + ".txt"), dets[i]);
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& detections_dir,
             const std::vector<std::string>& args, std::ostream& out) {
    if (checkpoint.empty() == detections_dir.empty())
        throw CLI::ValidationError("eval needs exactly one of --checkpoint or --detections");
    std::vector<ModelConfig> cfgs;
    std::optional<ModelConfig> cfg;
    if (!c.configs.empty()) {
        cfg = load_model_config(c.configs[0], c.size);
        cfgs.push_back(*cfg);
    }
    if (!checkpoint.empty() && !cfg) throw CLI::ValidationError("--checkpoint needs --config");
    write_manifest(c.out, "eval", args, c, cfgs, std::nullopt);

    const int size = cfg ? cfg->input_size : (c.size ? *c.size : 640);
    const data::Dataset ds = data::load_dataset(c.data, size);
    EvalOptions eval;
    std::vector<std::vector<Detection>> dets;
    EvalReport report;
    if (!detections_dir.empty()) {
        for (const auto& s : ds.samples) {
            const fs::path p = fs::path(detections_dir) / (s.name + ".txt");
            dets.push_back(fs::exists(p) ? read_detections(p) : std::vector<Detection>{});
        }
        std::vector<std::vector<GroundTruthBox>> gts;
        for (const auto& s : ds.samples) gts.push_back(s.boxes);
        report = evaluate(dets, gts, ds.num_classes, eval);
    } else {
        PrecisionScope scope(Precision::f64);
        Model model = Model::build(*cfg, 0);
        try {
            load_checkpoint(checkpoint, model);
        } catch (const FormatError& e) {
            throw FormatError(std::string(e.what()) + " (config " + c.configs[0] + ", digest " + hex(config_digest(*cfg)) +
                              "); refusing to evaluate");
        }
        PostprocessOptions post;
        post.conf_thresh = c.conf;
        post.iou_thresh = c.iou;
        report = train::evaluate_model(model, ds, 8, post, eval, &dets);
    }
    if (report.empty_ground_truth) out << "warning: the evaluation set has no ground-truth boxes\n";
    write_detection_dir(fs::path(c.out) / "detections", ds, dets);
    write_text(fs::path(c.out) / "per_class.csv", report_csv(report, data::visdrone_class_names()));
    const std::string label = cfg ? cfg->name : std::string("detections");
    const std::string table = report_table({{label, report}});
    write_text(fs::path(c.out) / "table.txt", table);
    out << table;
    return kOk;
}

struct CompareRow {
    std::string method;
    std::string seed;  // "median" for the aggregate row
    train::EpochMetrics m;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t used = 0;
            seeds.push_back(std::stoull(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::logic_error&) {
            throw CLI::ValidationError("--seeds: bad seed '" + tok + "'");
        }
    }
    if (seeds.empty()) throw CLI::ValidationError("--seeds is empty");
    return seeds;
}

int cmd_compare(const Common& c, const std::string& seeds_text, const std::vector<std::string>& args, std::ostream& out) {
    if (c.configs.size() < 2) throw CLI::ValidationError("compare needs at least two configs");
    const std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
    std::vector<ModelConfig> cfgs;
    for (const auto& p : c.configs) cfgs.push_back(load_model_config(p, c.size));
    const train::Protocol base = load_run_protocol(c);
    write_manifest(c.out, "compare", args, c, cfgs, base);

    std::map<int, std::pair<data::Dataset, data::Dataset>> data_by_size;
    std::vector<CompareRow> rows;
    std::map<std::string, int> seen;
    for (std::size_t k = 0; k < cfgs.size(); ++k) {
        const ModelConfig& cfg = cfgs[k];
        if (!data_by_size.count(cfg.input_size)) {
            data::Dataset tr = data::load_dataset(c.data, cfg.input_size);
            data::Dataset va = c.val.empty() ? tr : data::load_dataset(c.val, cfg.input_size);
            data_by_size.emplace(cfg.input_size, std::make_pair(std::move(tr), std::move(va)));
        }
        const auto& [train_set, val_set] = data_by_size.at(cfg.input_size);
        std::string method = fs::path(c.configs[k]).stem().string();
        if (const int n = seen[method]++; n > 0) method += "#" + std::to_string(n + 1);

        std::vector<train::EpochMetrics> per_seed;
        for (std::uint64_t seed : seeds) {
            train::Protocol p = base;
            p.seed = seed;
            PrecisionScope scope(p.precision);
            Model model = Model::build(cfg, seed);
            train::FitOptions opt;
            opt.out_dir = fs::path(c.out) / method / ("seed" + std::to_string(seed));
            opt.post.conf_thresh = c.conf;
            opt.post.iou_thresh = c.iou;
            opt.log = [&](const std::string& s) { out << method << " seed " << seed << ": " << s << std::endl; };
            const train::FitResult r = train::fit(model, train_set, val_set, p, opt);
            // Metrics of the selected (best) checkpoint.
            train::EpochMetrics best;
            for (const auto& rec : r.history)
                if (rec.epoch == r.state.best_epoch) best = rec.metrics;
            per_seed.push_back(best);
            rows.push_back({method, std::to_string(seed), best});
        }
        auto med = [&](double train::EpochMetrics::*f) {
            std::vector<double> v;
            for (const auto& m : per_seed) v.push_back(m.*f);
            return median(v);
        };
        rows.push_back({method, "median",
                        {med(&train::EpochMetrics::precision), med(&train::EpochMetrics::recall),
                         med(&train::EpochMetrics::map50), med(&train::EpochMetrics::map5095)}});
    }

    // Best value per column among the median rows.
    std::array<double, 4> best{-1, -1, -1, -1};
    auto values = [](const train::EpochMetrics& m) { return std::array<double, 4>{m.precision, m.recall, m.map50, m.map5095}; };
    for (const auto& r : rows)
        if (r.seed == "median")
            for (int i = 0; i < 4; ++i) best[i] = std::max(best[i], values(r.m)[i]);

    std::ostringstream csv, table;
    csv << "method,seed,precision,recall,map50,map5095\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %-8s %9s %9s %9s %13s\n", "Methods", "seed", "P", "R", "mAP@0.5", "mAP@0.5:0.95");
    table << line;
    for (const auto& r : rows) {
        const auto v = values(r.m);
        std::snprintf(line, sizeof line, "%s,%s,%.6f,%.6f,%.6f,%.6f\n", r.method.c_str(), r.seed.c_str(), v[0], v[1], v[2], v[3]);
        csv << line;
        std::string cells[4];
        for (int i = 0; i < 4; ++i) {
            char cell[32];
            const bool mark = r.seed == "median" && v[i] == best[i];
            std::snprintf(cell, sizeof cell, "%.1f%s", 100.0 * v[i], mark ? "*" : "");
            cells[i] = cell;
        }
        std::snprintf(line, sizeof line, "%-16s %-8s %9s %9s %9s %13s\n", r.method.c_str(), r.seed.c_str(), cells[0].c_str(),
                      cells[1].c_str(), cells[2].c_str(), cells[3].c_str());
        table << line;
    }
    write_text(fs::path(c.out) / "comparison.csv", csv.str());
    write_text(fs::path(c.out) / "comparison.txt", table.str());
    out << table.str();
    return kOk;
}

int cmd_gradcheck(const Common& c, std::size_t samples, bool flip, std::ostream& out) {
    const ModelConfig cfg = load_model_config(c.configs.at(0), c.size);
    train::GraphGradcheckOptions opt;
    opt.samples = samples;
    opt.flip_gradient_sign = flip;
    const auto r = train::gradcheck_model(cfg, c.seed.value_or(0), opt);
    char line[256];
    std::snprintf(line, sizeof line, "%-5s %-10s %8s %6s %8s %12s %12s %10s\n", "layer", "kind", "checked", "param",
                  "element", "analytic", "numeric", "rel_err");
    out << line;
    for (const auto& l : r.per_layer) {
        std::snprintf(line, sizeof line, "%-5d %-10s %8zu %6zu %8zu %12.5e %12.5e %10.3e\n", l.layer, l.kind.c_str(),
                      l.checked, l.worst.param, l.worst.element, l.worst.analytic, l.worst.numeric, l.worst.rel_error);
        out << line;
    }
    constexpr double kFailAbove = 1e-3;
    const bool pass = r.max_rel_error <= kFailAbove;
    out << (pass ? "PASS" : "FAIL") << ": max relative error " << r.max_rel_error << " over " << r.checked
        << " parameters (limit " << kFailAbove << ")\n";
    return pass ? kOk : kNumerical;
}

int cmd_gen_data(const Common& c, const data::SceneSpec& spec, int count, const std::vector<std::string>& args,
                 std::ostream& out) {
    spec.validate();
    if (count <= 0) throw ConfigError("--count must be positive");
    write_manifest(c.out, "gen-data", args, c, {}, std::nullopt);
    const fs::path manifest = data::write_synthetic_dataset(c.out, count, spec);
    out << "wrote " << count << " images, manifest " << manifest.string() << '\n';
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Small-target detector toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    Common c;
    std::string resume, checkpoint, detections, seeds = "0,1,2";
    std::size_t samples = 256;
    bool flip = false;
    int stop_after = 0;
    int count = 200;
    data::SceneSpec spec;

    auto add_config = [&](CLI::App* sub, bool many) {
        if (many) sub->add_option("configs,--config", c.configs, "Model configs")->required();
        else sub->add_option("config,--config", c.configs, "Model config")->expected(1)->required();
    };

    auto* shapes = app.add_subcommand("shapes", "Per-layer output shapes and parameter counts");
    add_config(shapes, false);
    shapes->add_option("--size", c.size, "Input size");

    auto* trn = app.add_subcommand("train", "Train one config");
    add_config(trn, false);
    trn->add_option("--protocol", c.protocol, "Protocol file");
    trn->add_option("--data", c.data, "Training manifest")->required();
    trn->add_option("--val", c.val, "Validation manifest (defaults to --data)");
    trn->add_option("--out", c.out, "Output directory")->required();
    trn->add_option("--seed", c.seed, "Overrides the protocol seed");
    trn->add_option("--size", c.size, "Input size");
    trn->add_option("--conf", c.conf, "Validation confidence threshold");
    trn->add_option("--iou", c.iou, "Validation NMS IoU");
    trn->add_option("--resume", resume, "Checkpoint to continue from");
    trn->add_option("--stop-after", stop_after, "Stop after this epoch as if interrupted");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint or a detections directory");
    ev->add_option("--config", c.configs, "Model config")->expected(1);
    ev->add_option("--checkpoint", checkpoint, "Checkpoint");
    ev->add_option("--detections", detections, "Directory of per-image detection files");
    ev->add_option("--data", c.data, "Evaluation manifest")->required();
    ev->add_option("--out", c.out, "Output directory")->required();
    ev->add_option("--size", c.size, "Input size when no config is given");
    ev->add_option("--conf", c.conf, "Confidence threshold");
    ev->add_option("--iou", c.iou, "NMS IoU");

    auto* cmp = app.add_subcommand("compare", "Train several configs over several seeds");
    add_config(cmp, true);
    cmp->add_option("--protocol", c.protocol, "Shared protocol file");
    cmp->add_option("--data", c.data, "Training manifest")->required();
    cmp->add_option("--val", c.val, "Validation manifest (defaults to --data)");
    cmp->add_option("--out", c.out, "Output directory")->required();
    cmp->add_option("--seeds", seeds, "Comma-separated seeds");
    cmp->add_option("--size", c.size, "Input size for every config");
    cmp->add_option("--conf", c.conf, "Validation confidence threshold");
    cmp->add_option("--iou", c.iou, "Validation NMS IoU");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full graph and loss");
    add_config(gc, false);
    gc->add_option("--seed", c.seed, "Seed");
    gc->add_option("--size", c.size, "Input size");
    gc->add_option("--samples", samples, "Parameters to sample");
    gc->add_flag("--flip-gradient", flip, "Fault injection: negate the loss gradient");

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic small-target dataset");
    gen->add_option("--out", c.out, "Output directory")->required();
    gen->add_option("--count", count, "Number of images");
    gen->add_option("--seed", spec.seed, "Base seed");
    gen->add_option("--size", spec.width, "Image side");
    gen->add_option("--min-targets", spec.min_targets);
    gen->add_option("--max-targets", spec.max_targets);
    gen->add_option("--min-box", spec.min_size, "Smallest target side in pixels");
    gen->add_option("--max-box", spec.max_size, "Largest target side in pixels");
    gen->add_option("--occlusion", spec.occlusion_prob, "Probability a placement may overlap");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (shapes->parsed()) return cmd_shapes(c, out);
        if (trn->parsed()) return cmd_train(c, resume, stop_after, args, out);
        if (ev->parsed()) return cmd_eval(c, checkpoint, detections, args, out);
        if (cmp->parsed()) return cmd_compare(c, seeds, args, out);
        if (gc->parsed()) return cmd_gradcheck(c, samples, flip, out);
        if (gen->parsed()) {
            spec.height = spec.width;
            return cmd_gen_data(c, spec, count, args, out);
        }
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << '\n';
        return kNumerical;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsage;
}

}  // namespace sdtn::cli
