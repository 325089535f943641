#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "sdtn/blocks.hpp"
#include "sdtn/config.hpp"

namespace sdtn {

struct LayerShape {
    int index = -1;
    LayerKind kind = LayerKind::conv;
    std::vector<int> sources;   // absolute; -1 is the image
    std::vector<Shape> outputs; // batch 1; one per head scale for detect
    int stride = 1;             // input pixels per output cell
};

// Validates the config and computes every layer's output shape without
// allocating tensors. Errors name the offending layer index.
std::vector<LayerShape> shape_infer(const ModelConfig& config, int input_size);

struct ParamCount {
    std::vector<std::size_t> per_layer;
    std::size_t total = 0;
    std::size_t head = 0;  // detect layer subtotal
};

std::size_t count_elements(const nn::StateList& state);

struct Upsample {};
struct Concat {};

using Block = std::variant<nn::ConvBlock, nn::SpdConv, nn::C2f, nn::Sppf, nn::Sppfcspc, Upsample, Concat,
                           nn::DetectHead>;

struct Layer {
    LayerSpec spec;
    std::vector<int> sources;
    Block block;
};

// Per-layer realized output shapes recorded by forward().
using ForwardTrace = std::vector<std::vector<Shape>>;

class Model {
public:
    // Deterministic initialization from `seed`; all channel and stride
    // contracts are checked here rather than on the first forward.
    static Model build(const ModelConfig& config, std::uint64_t seed);

    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    const ModelConfig& config() const { return config_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<LayerShape>& shapes() const { return shapes_; }
    std::vector<int> head_strides() const { return config_.head().strides; }
    int input_size() const { return config_.input_size; }

    // batch: (n, 3, input_size, input_size). `training` selects batch
    // statistics and running-stat updates in every batch-norm.
    nn::HeadOutput forward(const Tensor& batch, bool training, ForwardTrace* trace = nullptr);

    // Parameters and buffers in declared layer order.
    nn::StateList state();
    nn::StateList layer_state(std::size_t layer);
    ParamCount count_params();

    void zero_grad();

private:
    Model() = default;

    ModelConfig config_;
    std::vector<Layer> layers_;
    std::vector<LayerShape> shapes_;
};

// Binary checkpoint: "SDTN", u32 version, u64 config digest, u32 layer
// count, then per layer its parameter tensors and buffers as u64 length +
// little-endian f64 values. An optional trailing section carries opaque
// caller state (training progress).
void save_checkpoint(const std::filesystem::path& path, Model& model, std::span<const std::uint8_t> extra = {});
// Loads parameters into `model`; returns the trailing section (empty if none).
std::vector<std::uint8_t> load_checkpoint(const std::filesystem::path& path, Model& model);

}  // namespace sdtn
