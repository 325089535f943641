#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sdtn {

enum class LayerKind { conv, spdconv, c2f, sppf, sppfcspc, upsample, concat, detect };

std::string_view kind_name(LayerKind kind);

struct LayerSpec {
    int index = 0;
    std::vector<int> from;  // as written: -1 is the previous layer (or the image for layer 0)
    LayerKind kind = LayerKind::conv;
    int out = 0;            // unscaled output width
    int kernel = 3;
    int stride = 1;
    int repeats = 1;        // unscaled C2f repeat count
    bool shortcut = true;
    std::vector<int> strides;  // detect only
};

struct ModelConfig {
    std::string name;
    int num_classes = 10;
    int input_size = 640;
    double depth = 1.0;
    double width = 1.0;
    std::vector<LayerSpec> layers;

    // Absolute source indices of layer i; -1 denotes the input image.
    std::vector<int> sources(int i) const;
    int scaled_out(const LayerSpec& l) const;
    int scaled_repeats(const LayerSpec& l) const;
    const LayerSpec& head() const { return layers.back(); }
};

// Parses the plain-text config format. `source` names the input in errors.
ModelConfig parse_config(std::string_view text, std::string_view source = "<config>");
ModelConfig load_config(const std::filesystem::path& path);

// Canonical text form; parse_config(to_text(c)) == c.
std::string to_text(const ModelConfig& config);

// FNV-1a 64 of the canonical text without the name and input_size lines, so
// a checkpoint stays valid for any input size of the same architecture.
std::uint64_t config_digest(const ModelConfig& config);

bool operator==(const LayerSpec& a, const LayerSpec& b);
bool operator==(const ModelConfig& a, const ModelConfig& b);

}  // namespace sdtn
