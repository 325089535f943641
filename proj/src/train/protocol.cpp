#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sdtn/error.hpp"
#include "sdtn/train.hpp"

namespace sdtn::train {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(const std::string& s, T& out) {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

Protocol parse_protocol(const std::string& text, const std::string& source) {
    Protocol p;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(source + ": expected key=value", line_no);
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        auto fail = [&](const std::string& why) { throw ParseError(source + ": " + key + ": " + why, line_no); };

        auto positive_int = [&](int& field) {
            if (!parse_number(value, field) || field <= 0) fail("expected a positive integer");
        };
        auto non_negative = [&](double& field) {
            if (!parse_number(value, field) || !(field >= 0.0)) fail("expected a non-negative number");
        };
        if (key == "max_epochs") positive_int(p.max_epochs);
        else if (key == "patience") positive_int(p.patience);
        else if (key == "batch_size") positive_int(p.batch_size);
        else if (key == "lr") non_negative(p.lr);
        else if (key == "lrf") {
            non_negative(p.lrf);
            if (p.lrf > 1.0) fail("expected a factor in [0, 1]");
        } else if (key == "momentum") non_negative(p.momentum);
        else if (key == "weight_decay") non_negative(p.weight_decay);
        else if (key == "warmup_epochs") non_negative(p.warmup_epochs);
        else if (key == "warmup_momentum") non_negative(p.warmup_momentum);
        else if (key == "warmup_min_iters") {
            if (!parse_number(value, p.warmup_min_iters) || p.warmup_min_iters < 0) fail("expected a non-negative integer");
        }
        else if (key == "seed") {
            if (!parse_number(value, p.seed)) fail("expected an unsigned integer");
        } else if (key == "precision") {
            if (value == "f32") p.precision = Precision::f32;
            else if (value == "f64") p.precision = Precision::f64;
            else fail("expected f32 or f64");
        } else if (key == "shuffle") {
            if (value == "true") p.shuffle = true;
            else if (value == "false") p.shuffle = false;
            else fail("expected true or false");
        } else {
            throw ParseError(source + ": unknown key '" + key + "'", line_no);
        }
    }
    return p;
}

double scheduled_lr(const Protocol& p, int epoch) {
    const double x = static_cast<double>(epoch - 1) / static_cast<double>(p.max_epochs);
    return p.lr * ((1.0 - x) * (1.0 - p.lrf) + p.lrf);
}

StepHyper step_hyper(const Protocol& p, int epoch, long long iteration, long long batches_per_epoch) {
    const double lr = scheduled_lr(p, epoch);
    const double warmup = std::max(std::round(p.warmup_epochs * static_cast<double>(batches_per_epoch)),
                                   static_cast<double>(p.warmup_min_iters));
    if (p.warmup_epochs <= 0.0 || static_cast<double>(iteration) >= warmup) return {lr, p.momentum};
    const double t = static_cast<double>(iteration) / warmup;
    return {t * lr, p.warmup_momentum + t * (p.momentum - p.warmup_momentum)};
}

Protocol load_protocol(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open protocol " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_protocol(ss.str(), path.string());
}

std::string to_text(const Protocol& p) {
    std::ostringstream os;
    os.precision(17);
    os << "max_epochs=" << p.max_epochs << "\npatience=" << p.patience << "\nlr=" << p.lr << "\nlrf=" << p.lrf << "\nmomentum=" << p.momentum
       << "\nweight_decay=" << p.weight_decay << "\nwarmup_epochs=" << p.warmup_epochs
       << "\nwarmup_min_iters=" << p.warmup_min_iters << "\nwarmup_momentum=" << p.warmup_momentum << "\nbatch_size=" << p.batch_size << "\nseed=" << p.seed
       << "\nprecision=" << (p.precision == Precision::f32 ? "f32" : "f64") << "\nshuffle=" << (p.shuffle ? "true" : "false")
       << '\n';
    return os.str();
}

}  // namespace sdtn::train
