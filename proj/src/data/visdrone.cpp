#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "sdtn/data.hpp"
#include "sdtn/error.hpp"

namespace sdtn::data {

namespace {

bool parse_int(std::string_view s, long& out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.empty()) return false;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

std::optional<GroundTruthBox> parse_visdrone_annotation(std::string_view line, int line_no) {
    std::string_view rest = line;
    while (!rest.empty() && (rest.back() == '\r' || rest.back() == '\n' || rest.back() == ' ')) rest.remove_suffix(1);
    if (!rest.empty() && rest.back() == ',') rest.remove_suffix(1);  // some published files end lines with a comma

    std::vector<long> f;
    while (true) {
        const std::size_t comma = rest.find(',');
        long v = 0;
        if (!parse_int(rest.substr(0, comma), v))
            throw ParseError("annotation field " + std::to_string(f.size() + 1) + " is not an integer", line_no);
        f.push_back(v);
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
    }
    if (f.size() != 8) throw ParseError("expected 8 annotation fields, got " + std::to_string(f.size()), line_no);

    const long category = f[5];
    if (category < 0 || category > 11) throw ParseError("category " + std::to_string(category) + " out of range", line_no);
    if (category == 0 || category == 11) return std::nullopt;
    if (f[2] < 0 || f[3] < 0) throw ParseError("negative box size", line_no);
    if (f[6] < 0 || f[6] > 1) throw ParseError("truncation must be 0 or 1", line_no);
    if (f[7] < 0 || f[7] > 2) throw ParseError("occlusion must be 0, 1 or 2", line_no);

    GroundTruthBox g;
    g.box = {double(f[0]), double(f[1]), double(f[0] + f[2]), double(f[1] + f[3])};
    g.class_id = static_cast<int>(category - 1);
    g.truncation = static_cast<int>(f[6]);
    g.occlusion = static_cast<int>(f[7]);
    return g;
}

std::string format_visdrone_annotation(const GroundTruthBox& g) {
    if (g.class_id < 0 || g.class_id > 9) throw ContractError("class id outside the 10-class vocabulary");
    const long l = std::lround(g.box.x1), t = std::lround(g.box.y1);
    const long w = std::lround(g.box.x2) - l, h = std::lround(g.box.y2) - t;
    return std::to_string(l) + ',' + std::to_string(t) + ',' + std::to_string(w) + ',' + std::to_string(h) + ",1," +
           std::to_string(g.class_id + 1) + ',' + std::to_string(g.truncation) + ',' + std::to_string(g.occlusion);
}

std::vector<GroundTruthBox> read_annotations(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open annotations " + path.string());
    std::vector<GroundTruthBox> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            if (auto g = parse_visdrone_annotation(line, line_no)) out.push_back(*g);
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ": " + std::string(e.what()).substr(std::string(e.what()).find(": ") + 2),
                             line_no);
        }
    }
    return out;
}

void write_annotations(const std::filesystem::path& path, const std::vector<GroundTruthBox>& boxes) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write annotations " + path.string());
    for (const auto& b : boxes) f << format_visdrone_annotation(b) << '\n';
}

const std::vector<std::string>& visdrone_class_names() {
    static const std::vector<std::string> names{"pedestrian", "people", "bicycle", "car", "van",
                                                "truck", "tricycle", "awning-tricycle", "bus", "motor"};
    return names;
}

std::vector<SplitInfo> scan_splits(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw FormatError("not a directory: " + root.string());
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    auto count_files = [](const fs::path& p) {
        int n = 0;
        if (fs::is_directory(p))
            for (const auto& e : fs::directory_iterator(p)) n += e.is_regular_file();
        return n;
    };
    auto ends_with = [](const std::string& s, const std::string& suffix) {
        return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    };

    std::vector<SplitInfo> out;
    for (const std::string name : {"train", "val", "test-dev"})
        for (const auto& d : dirs)
            if (ends_with(d.filename().string(), name)) {
                out.push_back({name, d, count_files(d / "images"), count_files(d / "annotations")});
                break;
            }
    return out;
}

}  // namespace sdtn::data
