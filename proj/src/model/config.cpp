#include "sdtn/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "sdtn/error.hpp"

namespace sdtn {

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::conv, "conv"},         {LayerKind::spdconv, "spdconv"},   {LayerKind::c2f, "c2f"},
    {LayerKind::sppf, "sppf"},         {LayerKind::sppfcspc, "sppfcspc"}, {LayerKind::upsample, "upsample"},
    {LayerKind::concat, "concat"},     {LayerKind::detect, "detect"},
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

class LineParser {
public:
    LineParser(std::string_view source, int line) : source_(source), line_(line) {}

    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError(std::string(source_) + ":" + std::to_string(line_) + ": " + what, line_);
    }

    int integer(const std::string& s, std::string_view what) const {
        int v = 0;
        const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) fail("expected integer for " + std::string(what) + ", got '" + s + "'");
        return v;
    }

    double real(const std::string& s, std::string_view what) const {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used == s.size() && std::isfinite(v)) return v;
        } catch (const std::exception&) {
        }
        fail("expected number for " + std::string(what) + ", got '" + s + "'");
    }

    bool boolean(const std::string& s, std::string_view what) const {
        if (s == "true") return true;
        if (s == "false") return false;
        fail("expected true/false for " + std::string(what) + ", got '" + s + "'");
    }

private:
    std::string_view source_;
    int line_;
};

LayerKind parse_kind(const std::string& s, const LineParser& p) {
    for (const auto& [k, name] : kKindNames)
        if (name == s) return k;
    p.fail("unknown layer kind '" + s + "'");
}

void apply_arg(LayerSpec& l, const std::string& key, const std::string& value, const LineParser& p) {
    auto allowed = [&](std::initializer_list<LayerKind> kinds) {
        for (LayerKind k : kinds)
            if (k == l.kind) return;
        p.fail("argument '" + key + "' not accepted by " + std::string(kind_name(l.kind)));
    };
    using K = LayerKind;
    if (key == "out") {
        allowed({K::conv, K::spdconv, K::c2f, K::sppf, K::sppfcspc});
        l.out = p.integer(value, key);
    } else if (key == "k") {
        allowed({K::conv});
        l.kernel = p.integer(value, key);
    } else if (key == "s") {
        allowed({K::conv});
        l.stride = p.integer(value, key);
    } else if (key == "n") {
        allowed({K::c2f});
        l.repeats = p.integer(value, key);
    } else if (key == "shortcut") {
        allowed({K::c2f});
        l.shortcut = p.boolean(value, key);
    } else if (key == "strides") {
        allowed({K::detect});
        for (const std::string& s : split(value, '/')) l.strides.push_back(p.integer(s, key));
    } else {
        p.fail("unknown argument '" + key + "'");
    }
}

LayerSpec parse_layer(const std::string& line, const LineParser& p) {
    static const std::regex re(R"(^(-?\d+)\s*:\s*\[([^\]]*)\]\s*([A-Za-z0-9_]+)\s*\(([^)]*)\)$)");
    std::smatch m;
    if (!std::regex_match(line, m, re)) p.fail("malformed layer line '" + line + "'");
    LayerSpec l;
    l.index = p.integer(m[1].str(), "layer index");
    for (const std::string& f : split(m[2].str(), ',')) l.from.push_back(p.integer(f, "from"));
    l.kind = parse_kind(m[3].str(), p);
    const std::string args = trim(m[4].str());
    if (!args.empty()) {
        for (const std::string& kv : split(args, ',')) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) p.fail("argument '" + kv + "' is not key=value");
            apply_arg(l, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)), p);
        }
    }
    return l;
}

std::string format_real(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::string layer_text(const LayerSpec& l) {
    std::string s = std::to_string(l.index) + ": [";
    for (std::size_t i = 0; i < l.from.size(); ++i) s += (i ? "," : "") + std::to_string(l.from[i]);
    s += "] " + std::string(kind_name(l.kind)) + "(";
    std::vector<std::string> args;
    switch (l.kind) {
        case LayerKind::conv:
            args = {"out=" + std::to_string(l.out), "k=" + std::to_string(l.kernel), "s=" + std::to_string(l.stride)};
            break;
        case LayerKind::c2f:
            args = {"out=" + std::to_string(l.out), "n=" + std::to_string(l.repeats),
                    std::string("shortcut=") + (l.shortcut ? "true" : "false")};
            break;
        case LayerKind::spdconv:
        case LayerKind::sppf:
        case LayerKind::sppfcspc:
            args = {"out=" + std::to_string(l.out)};
            break;
        case LayerKind::detect: {
            std::string st = "strides=";
            for (std::size_t i = 0; i < l.strides.size(); ++i) st += (i ? "/" : "") + std::to_string(l.strides[i]);
            args = {st};
            break;
        }
        default:
            break;
    }
    for (std::size_t i = 0; i < args.size(); ++i) s += (i ? "," : "") + args[i];
    return s + ")";
}

std::string architecture_text(const ModelConfig& c) {
    std::string s = "num_classes: " + std::to_string(c.num_classes) + "\n";
    s += "scales: depth=" + format_real(c.depth) + ",width=" + format_real(c.width) + "\n";
    for (const LayerSpec& l : c.layers) s += layer_text(l) + "\n";
    return s;
}

}  // namespace

std::string_view kind_name(LayerKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "?";
}

std::vector<int> ModelConfig::sources(int i) const {
    std::vector<int> out;
    for (int f : layers.at(static_cast<std::size_t>(i)).from) out.push_back(f < 0 ? i + f : f);
    return out;
}

int ModelConfig::scaled_out(const LayerSpec& l) const {
    if (width == 1.0) return l.out;
    return static_cast<int>(std::ceil(l.out * width / 8.0)) * 8;
}

int ModelConfig::scaled_repeats(const LayerSpec& l) const {
    if (depth == 1.0) return l.repeats;
    return std::max(static_cast<int>(std::lround(l.repeats * depth)), 1);
}

ModelConfig parse_config(std::string_view text, std::string_view source) {
    ModelConfig c;
    std::istringstream in{std::string(text)};
    std::string raw;
    int line_no = 0;
    bool seen_layer = false;
    while (std::getline(in, raw)) {
        ++line_no;
        const LineParser p(source, line_no);
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        const bool is_layer = std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '-';
        if (is_layer) {
            LayerSpec l = parse_layer(line, p);
            if (l.index != static_cast<int>(c.layers.size()))
                p.fail("layer index " + std::to_string(l.index) + " out of sequence (expected " +
                       std::to_string(c.layers.size()) + ")");
            c.layers.push_back(std::move(l));
            seen_layer = true;
            continue;
        }
        if (seen_layer) p.fail("header line after layer lines");
        const auto colon = line.find(':');
        if (colon == std::string::npos) p.fail("expected 'key: value', got '" + line + "'");
        const std::string key = trim(line.substr(0, colon));
        const std::string value = trim(line.substr(colon + 1));
        if (key == "name") {
            c.name = value;
        } else if (key == "num_classes") {
            c.num_classes = p.integer(value, key);
        } else if (key == "input_size") {
            c.input_size = p.integer(value, key);
        } else if (key == "scales") {
            for (const std::string& kv : split(value, ',')) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) p.fail("scales entry '" + kv + "' is not key=value");
                const std::string k = trim(kv.substr(0, eq));
                const double v = p.real(trim(kv.substr(eq + 1)), k);
                if (v <= 0) p.fail("scale factor " + k + " must be positive");
                if (k == "depth") c.depth = v;
                else if (k == "width") c.width = v;
                else p.fail("unknown scale '" + k + "'");
            }
        } else {
            p.fail("unknown header key '" + key + "'");
        }
    }
    if (c.layers.empty()) throw ParseError(std::string(source) + ": no layers", line_no);
    return c;
}

ModelConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::string to_text(const ModelConfig& c) {
    return "name: " + c.name + "\ninput_size: " + std::to_string(c.input_size) + "\n" + architecture_text(c);
}

std::uint64_t config_digest(const ModelConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : architecture_text(c)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool operator==(const LayerSpec& a, const LayerSpec& b) {
    return a.index == b.index && a.from == b.from && a.kind == b.kind && a.out == b.out && a.kernel == b.kernel &&
           a.stride == b.stride && a.repeats == b.repeats && a.shortcut == b.shortcut && a.strides == b.strides;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
    return a.name == b.name && a.num_classes == b.num_classes && a.input_size == b.input_size &&
           a.depth == b.depth && a.width == b.width && a.layers == b.layers;
}

}  // namespace sdtn
