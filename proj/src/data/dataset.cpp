#include <algorithm>
#include <fstream>
#include <sstream>

#include "sdtn/data.hpp"
#include "sdtn/error.hpp"

namespace sdtn::data {

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("cannot open manifest " + path.string());
    const std::filesystem::path base = path.parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != "image,label,seed") throw ParseError(path.string() + ": expected header image,label,seed", 1);
            continue;
        }
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 3 || cols[0].empty() || cols[1].empty())
            throw ParseError(path.string() + ": expected image,label,seed", line_no);
        ManifestEntry e;
        e.image = base / cols[0];
        e.label = base / cols[1];
        try {
            std::size_t used = 0;
            e.seed = std::stoull(cols[2], &used);
            if (used != cols[2].size()) throw std::invalid_argument("seed");
        } catch (const std::exception&) {
            throw ParseError(path.string() + ": seed is not an unsigned integer", line_no);
        }
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path);
    if (!f) throw FormatError("cannot write manifest " + path.string());
    f << "image,label,seed\n";
    for (const auto& e : entries) f << e.image.generic_string() << ',' << e.label.generic_string() << ',' << e.seed << '\n';
}

Dataset load_dataset(const std::filesystem::path& manifest, int input_size) {
    Dataset ds;
    for (const ManifestEntry& e : read_manifest(manifest)) {
        Sample s;
        s.name = e.image.stem().string();
        const RgbImage raw = read_image(e.image);
        const std::vector<GroundTruthBox> boxes = read_annotations(e.label);
        Affine affine;
        if (raw.width == input_size && raw.height == input_size) {
            s.image = raw;
        } else {
            const Letterboxed lb = letterbox(image_to_tensor(raw, Precision::f64), input_size);
            s.image = tensor_to_image(lb.image);
            affine = lb.affine;
        }
        const double lim = input_size;
        for (GroundTruthBox g : boxes) {
            g.box = affine.forward(g.box);
            g.box = {std::clamp(g.box.x1, 0.0, lim), std::clamp(g.box.y1, 0.0, lim), std::clamp(g.box.x2, 0.0, lim),
                     std::clamp(g.box.y2, 0.0, lim)};
            if (g.box.area() > 0.0) s.boxes.push_back(g);
        }
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw ConfigError("manifest " + manifest.string() + " lists no images");
    return ds;
}

Tensor make_batch(const Dataset& dataset, std::span<const std::size_t> indices, Precision p) {
    if (indices.empty()) throw ContractError("empty batch");
    const RgbImage& first = dataset.samples.at(indices[0]).image;
    const int w = first.width, h = first.height;
    const Shape shape{static_cast<int>(indices.size()), 3, h, w};
    std::vector<double> v(shape.numel());
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const RgbImage& img = dataset.samples.at(indices[b]).image;
        if (img.width != w || img.height != h) throw ShapeError("batch images differ in size");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) v[shape.offset(static_cast<int>(b), c, y, x)] = img.at(x, y, c) / 255.0;
    }
    return Tensor::from_values(shape, v, p);
}

}  // namespace sdtn::data
