#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdtn/boxes.hpp"
#include "sdtn/tensor.hpp"

namespace sdtn::data {

// 8-bit RGB, row-major, interleaved.
struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int x, int y, int ch) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
    std::uint8_t at(int x, int y, int ch) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + ch]; }
    friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

RgbImage make_image(int width, int height, std::array<std::uint8_t, 3> fill = {0, 0, 0});

// SDTI files: "SDTI", u32 width, u32 height (little-endian), RGB bytes.
void save_image(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_image(const std::filesystem::path& path);
// (1, 3, H, W) tensor with values byte/255.
Tensor load_image(const std::filesystem::path& path, Precision p = default_precision());

Tensor image_to_tensor(const RgbImage& image, Precision p = default_precision());
// Rounds and clamps to [0, 255]; the tensor must be (1, 3, H, W).
RgbImage tensor_to_image(const Tensor& t);

// x_out = x_in * scale + pad_x, likewise for y.
struct Affine {
    double scale = 1.0;
    double pad_x = 0.0;
    double pad_y = 0.0;

    Box forward(const Box& b) const;
    Box inverse(const Box& b) const;
};

struct Letterboxed {
    Tensor image;
    Affine affine;
};

// Aspect-preserving bilinear resize into a target x target canvas filled
// with 0.5, centred (padding split floor/ceil). Same-size input is copied.
Letterboxed letterbox(const Tensor& image, int target);

// VisDrone2019-DET annotation lines:
// bbox_left,bbox_top,bbox_width,bbox_height,score,category,truncation,occlusion
// Categories 1..10 become class ids 0..9; 0 (ignored region) and 11 (others)
// are skipped (nullopt).
std::optional<GroundTruthBox> parse_visdrone_annotation(std::string_view line, int line_no = 0);
std::string format_visdrone_annotation(const GroundTruthBox& box);
std::vector<GroundTruthBox> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, const std::vector<GroundTruthBox>& boxes);

// Names for class ids 0..9 in VisDrone category order.
const std::vector<std::string>& visdrone_class_names();

struct SplitInfo {
    std::string name;  // train, val or test-dev
    std::filesystem::path path;
    int images = 0;
    int annotations = 0;
};

// Finds VisDrone-style split directories (`*train`, `*val`, `*test-dev`, each
// holding images/ and annotations/) directly under root, in that order.
std::vector<SplitInfo> scan_splits(const std::filesystem::path& root);

struct SceneSpec {
    int width = 128;
    int height = 128;
    int min_targets = 4;
    int max_targets = 12;
    int min_size = 6;
    int max_size = 20;
    std::array<double, 10> class_weights{1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
    double noise = 0.06;      // per-pixel jitter amplitude, fraction of full scale
    int texture_cell = 8;     // lattice spacing of the smooth background texture
    double occlusion_prob = 0.1;
    int max_retries = 50;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Scene {
    RgbImage image;
    std::vector<GroundTruthBox> boxes;
    std::vector<int> owner;  // per pixel: index of the visible target, -1 background
    bool infeasible = false;  // placement gave up before reaching the drawn count
};

// Class c is drawn as shape c % 5 (square, disc, triangle, cross, diamond) in
// colour class_color(c). Boxes are the tight extent of each target's full
// mask, including parts later covered by other targets.
Scene generate_scene(const SceneSpec& spec);
std::array<std::uint8_t, 3> class_color(int class_id);

struct ManifestEntry {
    std::filesystem::path image;
    std::filesystem::path label;
    std::uint64_t seed = 0;
};

// CSV with header `image,label,seed`; relative paths resolve against the
// manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Writes `count` scenes (seeds base.seed + i) as SDTI images and VisDrone
// labels under dir and returns the manifest path (dir/manifest.csv).
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, int count, const SceneSpec& base);

struct Sample {
    std::string name;
    RgbImage image;  // already at network input size
    std::vector<GroundTruthBox> boxes;  // network input coordinates
};

struct Dataset {
    int num_classes = 10;
    std::vector<Sample> samples;
};

// Loads every manifest entry, letterboxed to input_size x input_size.
Dataset load_dataset(const std::filesystem::path& manifest, int input_size);

// (B, 3, S, S) batch in [0, 1].
Tensor make_batch(const Dataset& dataset, std::span<const std::size_t> indices, Precision p = default_precision());

}  // namespace sdtn::data
