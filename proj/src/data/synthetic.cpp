#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "sdtn/data.hpp"
#include "sdtn/error.hpp"

namespace sdtn::data {

namespace {

// Generator draws go through this wrapper rather than std distributions,
// whose output is implementation-defined, so scenes match across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    int integer(int lo, int hi) {  // inclusive
        return lo + static_cast<int>(std::min<double>(std::floor(uniform() * (hi - lo + 1)), hi - lo));
    }

private:
    std::mt19937_64 engine_;
};

bool inside_shape(int shape, int i, int j, int w, int h) {
    const double u = 2.0 * (i + 0.5) / w - 1.0, v = 2.0 * (j + 0.5) / h - 1.0;  // both in (-1, 1)
    const double slack = 2.0 / std::min(w, h);
    switch (shape) {
        case 0: return true;
        case 1: return u * u + v * v <= 1.0 + slack;
        case 2: return std::abs(u) <= (v + 1.0) / 2.0 + slack / 2;  // apex at the top
        case 3: return std::abs(u) <= 1.0 / 3.0 || std::abs(v) <= 1.0 / 3.0;
        default: return std::abs(u) + std::abs(v) <= 1.0 + slack;
    }
}

struct Placed {
    int x0, y0, w, h, class_id;
};

}  // namespace

std::array<std::uint8_t, 3> class_color(int class_id) {
    static const std::array<std::array<std::uint8_t, 3>, 10> colors{{{230, 40, 40},
                                                                     {40, 200, 40},
                                                                     {40, 80, 230},
                                                                     {230, 200, 40},
                                                                     {200, 40, 200},
                                                                     {40, 200, 200},
                                                                     {240, 130, 30},
                                                                     {130, 40, 230},
                                                                     {250, 250, 250},
                                                                     {20, 20, 20}}};
    if (class_id < 0 || class_id > 9) throw ContractError("class id outside the 10-class vocabulary");
    return colors[static_cast<std::size_t>(class_id)];
}

void SceneSpec::validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("scene size must be positive");
    if (min_targets < 0 || max_targets < min_targets) throw ConfigError("target count range is empty");
    if (min_size < 4) throw ConfigError("minimum target size must be at least 4 px");
    if (max_size < min_size) throw ConfigError("target size range is empty");
    if (max_size > std::min(width, height)) throw ConfigError("targets larger than the scene");
    double total = 0.0;
    for (double w : class_weights) {
        if (w < 0.0) throw ConfigError("class weights must be non-negative");
        total += w;
    }
    if (total <= 0.0) throw ConfigError("class weights sum to zero");
    if (occlusion_prob < 0.0 || occlusion_prob > 1.0) throw ConfigError("occlusion probability outside [0, 1]");
    if (texture_cell < 1 || max_retries < 1 || noise < 0.0) throw ConfigError("invalid noise or retry parameters");
}

Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const int W = spec.width, H = spec.height;
    Scene scene;
    scene.image = make_image(W, H);

    // Smooth value-noise texture plus per-pixel jitter, kept in mid grey.
    const int gw = W / spec.texture_cell + 2, gh = H / spec.texture_cell + 2;
    std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
    for (double& v : lattice) v = rng.uniform(-1.0, 1.0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double fx = double(x) / spec.texture_cell, fy = double(y) / spec.texture_cell;
            const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
            const double tx = fx - ix, ty = fy - iy;
            auto L = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * gw + a]; };
            const double smooth = (L(ix, iy) * (1 - tx) + L(ix + 1, iy) * tx) * (1 - ty) +
                                  (L(ix, iy + 1) * (1 - tx) + L(ix + 1, iy + 1) * tx) * ty;
            const double base = 128.0 + 35.0 * smooth;
            for (int c = 0; c < 3; ++c) {
                const double v = base + 255.0 * spec.noise * rng.uniform(-1.0, 1.0);
                scene.image.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 70L, 186L));
            }
        }

    double weight_total = 0.0;
    for (double w : spec.class_weights) weight_total += w;
    auto draw_class = [&] {
        double r = rng.uniform() * weight_total;
        for (int c = 0; c < 10; ++c) {
            r -= spec.class_weights[static_cast<std::size_t>(c)];
            if (r < 0.0 && spec.class_weights[static_cast<std::size_t>(c)] > 0.0) return c;
        }
        for (int c = 9; c >= 0; --c)
            if (spec.class_weights[static_cast<std::size_t>(c)] > 0.0) return c;
        return 0;
    };

    const int count = rng.integer(spec.min_targets, spec.max_targets);
    std::vector<Placed> placed;
    for (int t = 0; t < count && !scene.infeasible; ++t) {
        const int cls = draw_class();
        bool ok = false;
        for (int attempt = 0; attempt < spec.max_retries && !ok; ++attempt) {
            const int w = rng.integer(spec.min_size, spec.max_size);
            const int h = std::clamp(static_cast<int>(std::lround(w * rng.uniform(0.75, 1.33))), spec.min_size, spec.max_size);
            const int x0 = rng.integer(0, W - w), y0 = rng.integer(0, H - h);
            const bool allow_overlap = rng.uniform() < spec.occlusion_prob;
            ok = true;
            for (const Placed& p : placed) {
                const int iw = std::min(x0 + w, p.x0 + p.w) - std::max(x0, p.x0);
                const int ih = std::min(y0 + h, p.y0 + p.h) - std::max(y0, p.y0);
                if (iw <= 0 || ih <= 0) continue;
                // Overlap is allowed as occlusion but never hides more than half of either rectangle.
                if (!allow_overlap || 2 * iw * ih > std::min(w * h, p.w * p.h)) {
                    ok = false;
                    break;
                }
            }
            if (ok) placed.push_back({x0, y0, w, h, cls});
        }
        if (!ok) scene.infeasible = true;
    }

    scene.owner.assign(static_cast<std::size_t>(W) * H, -1);
    std::vector<int> full_pixels(placed.size(), 0);
    for (std::size_t k = 0; k < placed.size(); ++k) {
        const Placed& p = placed[k];
        const auto color = class_color(p.class_id);
        int minx = W, miny = H, maxx = -1, maxy = -1;
        for (int j = 0; j < p.h; ++j)
            for (int i = 0; i < p.w; ++i) {
                if (!inside_shape(p.class_id % 5, i, j, p.w, p.h)) continue;
                const int x = p.x0 + i, y = p.y0 + j;
                for (int c = 0; c < 3; ++c) scene.image.at(x, y, c) = color[static_cast<std::size_t>(c)];
                scene.owner[static_cast<std::size_t>(y) * W + x] = static_cast<int>(k);
                ++full_pixels[k];
                minx = std::min(minx, x);
                miny = std::min(miny, y);
                maxx = std::max(maxx, x);
                maxy = std::max(maxy, y);
            }
        GroundTruthBox g;
        g.box = {double(minx), double(miny), double(maxx + 1), double(maxy + 1)};
        g.class_id = p.class_id;
        scene.boxes.push_back(g);
    }

    std::vector<int> visible(placed.size(), 0);
    for (int o : scene.owner)
        if (o >= 0) ++visible[static_cast<std::size_t>(o)];
    for (std::size_t k = 0; k < placed.size(); ++k) {
        const int hidden = full_pixels[k] - visible[k];
        scene.boxes[k].occlusion = hidden == 0 ? 0 : (2 * hidden <= full_pixels[k] ? 1 : 2);
    }
    return scene;
}

std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, int count, const SceneSpec& base) {
    namespace fs = std::filesystem;
    if (count <= 0) throw ConfigError("dataset size must be positive");
    base.validate();
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "annotations");
    std::vector<ManifestEntry> entries;
    for (int i = 0; i < count; ++i) {
        SceneSpec spec = base;
        spec.seed = base.seed + static_cast<std::uint64_t>(i);
        const Scene scene = generate_scene(spec);
        char stem[32];
        std::snprintf(stem, sizeof stem, "%06d", i);
        const fs::path image = fs::path("images") / (std::string(stem) + ".sdti");
        const fs::path label = fs::path("annotations") / (std::string(stem) + ".txt");
        save_image(dir / image, scene.image);
        write_annotations(dir / label, scene.boxes);
        entries.push_back({image, label, spec.seed});
    }
    const fs::path manifest = dir / "manifest.csv";
    write_manifest(manifest, entries);
    return manifest;
}

}  // namespace sdtn::data
