#include "sdtn/model.hpp"

#include <algorithm>
#include <set>

namespace sdtn {

namespace {

std::string at_layer(int i) {
    return "layer " + std::to_string(i) + ": ";
}

void check_structure(const ModelConfig& c) {
    if (c.num_classes < 1) throw ConfigError("num_classes must be at least 1");
    if (c.input_size < 1) throw ConfigError("input_size must be positive");
    if (c.layers.empty()) throw ConfigError("config has no layers");
    std::set<int> used;
    const int last = static_cast<int>(c.layers.size()) - 1;
    for (int i = 0; i <= last; ++i) {
        const LayerSpec& l = c.layers[static_cast<std::size_t>(i)];
        if (l.from.empty()) throw ConfigError(at_layer(i) + "no inputs");
        for (int s : c.sources(i)) {
            if (s >= i) throw ConfigError(at_layer(i) + "references layer " + std::to_string(s) + " which is not earlier");
            if (s < -1 || (s == -1 && i != 0))
                throw ConfigError(at_layer(i) + "dangling reference " + std::to_string(s));
            used.insert(s);
        }
        const bool multi = l.kind == LayerKind::concat || l.kind == LayerKind::detect;
        if (!multi && l.from.size() != 1) throw ConfigError(at_layer(i) + std::string(kind_name(l.kind)) + " takes one input");
        if (l.kind == LayerKind::concat && l.from.size() < 2) throw ConfigError(at_layer(i) + "concat needs two or more inputs");
        if ((l.kind == LayerKind::detect) != (i == last))
            throw ConfigError(at_layer(i) + "the detect layer must be the single last layer");
        switch (l.kind) {
            case LayerKind::conv:
                if (l.kernel < 1 || l.kernel % 2 == 0) throw ConfigError(at_layer(i) + "kernel must be odd and positive");
                if (l.stride < 1) throw ConfigError(at_layer(i) + "stride must be positive");
                [[fallthrough]];
            case LayerKind::spdconv:
            case LayerKind::sppf:
            case LayerKind::sppfcspc:
                if (l.out < 1) throw ConfigError(at_layer(i) + "out must be positive");
                break;
            case LayerKind::c2f:
                if (l.out < 2) throw ConfigError(at_layer(i) + "out must be at least 2");
                if (l.repeats < 1) throw ConfigError(at_layer(i) + "n must be positive");
                break;
            case LayerKind::detect:
                if (l.strides.size() != l.from.size())
                    throw ConfigError(at_layer(i) + "need one stride per detect input");
                for (std::size_t k = 0; k < l.strides.size(); ++k) {
                    if (l.strides[k] < 1) throw ConfigError(at_layer(i) + "strides must be positive");
                    if (k > 0 && l.strides[k] <= l.strides[k - 1])
                        throw ConfigError(at_layer(i) + "head strides must be strictly increasing");
                }
                break;
            default:
                break;
        }
    }
    for (int i = 0; i < last; ++i)
        if (!used.count(i)) throw ConfigError(at_layer(i) + "output is never used");
}

}  // namespace

std::vector<LayerShape> shape_infer(const ModelConfig& c, int input_size) {
    check_structure(c);
    if (input_size < 1) throw ConfigError("input size must be positive");
    std::vector<LayerShape> out;
    const LayerShape image{-1, LayerKind::conv, {}, {{1, 3, input_size, input_size}}, 1};
    auto input = [&](int s) -> const LayerShape& { return s < 0 ? image : out[static_cast<std::size_t>(s)]; };

    for (int i = 0; i < static_cast<int>(c.layers.size()); ++i) {
        const LayerSpec& l = c.layers[static_cast<std::size_t>(i)];
        LayerShape ls;
        ls.index = i;
        ls.kind = l.kind;
        ls.sources = c.sources(i);
        const LayerShape& first = input(ls.sources[0]);
        const Shape in = first.outputs[0];
        ls.stride = first.stride;
        switch (l.kind) {
            case LayerKind::conv: {
                const int p = l.kernel / 2;
                const int oh = (in.h + 2 * p - l.kernel) / l.stride + 1;
                const int ow = (in.w + 2 * p - l.kernel) / l.stride + 1;
                if (oh < 1 || ow < 1 || in.h % l.stride || in.w % l.stride)
                    throw ShapeError(at_layer(i) + "input " + in.str() + " not divisible by stride " + std::to_string(l.stride));
                ls.outputs = {{1, c.scaled_out(l), oh, ow}};
                ls.stride *= l.stride;
                break;
            }
            case LayerKind::spdconv:
                if (in.h % 2 || in.w % 2) throw ShapeError(at_layer(i) + "space-to-depth input " + in.str() + " has odd size");
                ls.outputs = {{1, c.scaled_out(l), in.h / 2, in.w / 2}};
                ls.stride *= 2;
                break;
            case LayerKind::c2f:
            case LayerKind::sppf:
            case LayerKind::sppfcspc:
                ls.outputs = {{1, c.scaled_out(l), in.h, in.w}};
                break;
            case LayerKind::upsample:
                if (ls.stride % 2) throw ShapeError(at_layer(i) + "upsampling below stride 1");
                ls.outputs = {{1, in.c, in.h * 2, in.w * 2}};
                ls.stride /= 2;
                break;
            case LayerKind::concat: {
                Shape s = in;
                for (std::size_t k = 1; k < ls.sources.size(); ++k) {
                    const LayerShape& other = input(ls.sources[k]);
                    const Shape& o = other.outputs[0];
                    if (o.h != in.h || o.w != in.w)
                        throw ShapeError(at_layer(i) + "concat input " + std::to_string(ls.sources[k]) + " " + o.str() +
                                         " does not match " + in.str());
                    s.c += o.c;
                }
                ls.outputs = {s};
                break;
            }
            case LayerKind::detect:
                for (std::size_t k = 0; k < ls.sources.size(); ++k) {
                    const LayerShape& src = input(ls.sources[k]);
                    if (src.stride != l.strides[k])
                        throw ConfigError(at_layer(i) + "declared stride " + std::to_string(l.strides[k]) + " but layer " +
                                          std::to_string(ls.sources[k]) + " has stride " + std::to_string(src.stride));
                    const Shape& s = src.outputs[0];
                    ls.outputs.push_back({1, 4 + c.num_classes, s.h, s.w});
                }
                ls.stride = l.strides.front();
                break;
        }
        out.push_back(std::move(ls));
    }
    int max_stride = 1;
    for (const LayerShape& ls : out) max_stride = std::max(max_stride, ls.stride);
    if (input_size % max_stride)
        throw ConfigError("input size " + std::to_string(input_size) + " is not divisible by the largest stride " +
                          std::to_string(max_stride));
    return out;
}

std::size_t count_elements(const nn::StateList& state) {
    std::size_t n = 0;
    for (const Tensor& t : state.params) n += t.numel();
    return n;
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
    Model m;
    m.config_ = config;
    m.shapes_ = shape_infer(config, config.input_size);
    nn::Initializer init(seed);
    auto channels = [&](int s) { return s < 0 ? 3 : m.shapes_[static_cast<std::size_t>(s)].outputs[0].c; };

    for (int i = 0; i < static_cast<int>(config.layers.size()); ++i) {
        const LayerSpec& l = config.layers[static_cast<std::size_t>(i)];
        const std::vector<int> src = config.sources(i);
        const int in = channels(src[0]);
        const int out = config.scaled_out(l);
        Layer layer{l, src, Upsample{}};
        try {
            switch (l.kind) {
                case LayerKind::conv: layer.block = nn::ConvBlock::create(in, out, l.kernel, l.stride, init); break;
                case LayerKind::spdconv: layer.block = nn::SpdConv::create(in, out, init); break;
                case LayerKind::c2f:
                    layer.block = nn::C2f::create(in, out, config.scaled_repeats(l), l.shortcut, init);
                    break;
                case LayerKind::sppf: layer.block = nn::Sppf::create(in, out, init); break;
                case LayerKind::sppfcspc: layer.block = nn::Sppfcspc::create(in, out, init); break;
                case LayerKind::upsample: layer.block = Upsample{}; break;
                case LayerKind::concat: layer.block = Concat{}; break;
                case LayerKind::detect: {
                    std::vector<int> ch;
                    for (int s : src) ch.push_back(channels(s));
                    layer.block = nn::DetectHead::create(ch, l.strides, config.num_classes, init);
                    break;
                }
            }
        } catch (const ConfigError& e) {
            throw ConfigError(at_layer(i) + e.what());
        }
        m.layers_.push_back(std::move(layer));
    }
    return m;
}

nn::HeadOutput Model::forward(const Tensor& batch, bool training, ForwardTrace* trace) {
    const Shape& s = batch.shape();
    if (s.c != 3 || s.h != config_.input_size || s.w != config_.input_size)
        throw ShapeError("model input " + s.str() + " does not match 3x" + std::to_string(config_.input_size) + "x" +
                         std::to_string(config_.input_size));
    if (trace) trace->clear();
    std::vector<Tensor> outputs;
    outputs.reserve(layers_.size());
    auto get = [&](int src) -> const Tensor& { return src < 0 ? batch : outputs[static_cast<std::size_t>(src)]; };
    nn::HeadOutput head;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        Layer& layer = layers_[i];
        const nn::Context ctx{training, std::to_string(i)};
        const Tensor& x = get(layer.sources[0]);
        Tensor y;
        std::visit(
            [&](auto& b) {
                using B = std::decay_t<decltype(b)>;
                if constexpr (std::is_same_v<B, Upsample>) {
                    y = ops::upsample_nearest2x(x);
                } else if constexpr (std::is_same_v<B, Concat>) {
                    std::vector<Tensor> parts;
                    for (int src : layer.sources) parts.push_back(get(src));
                    y = ops::concat_channels(parts);
                } else if constexpr (std::is_same_v<B, nn::DetectHead>) {
                    std::vector<Tensor> feats;
                    for (int src : layer.sources) feats.push_back(get(src));
                    head = b.forward(feats, s.h, s.w, ctx);
                } else {
                    y = b.forward(x, ctx);
                }
            },
            layer.block);
        if (trace) {
            if (y.defined()) trace->push_back({y.shape()});
            else {
                std::vector<Shape> maps;
                for (const Tensor& t : head.maps) maps.push_back(t.shape());
                trace->push_back(maps);
            }
        }
        outputs.push_back(y);
    }
    return head;
}

nn::StateList Model::layer_state(std::size_t i) {
    nn::StateList out;
    std::visit(
        [&](auto& b) {
            using B = std::decay_t<decltype(b)>;
            if constexpr (!std::is_same_v<B, Upsample> && !std::is_same_v<B, Concat>) b.collect(out);
        },
        layers_.at(i).block);
    return out;
}

nn::StateList Model::state() {
    nn::StateList out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        nn::StateList l = layer_state(i);
        out.params.insert(out.params.end(), l.params.begin(), l.params.end());
        out.buffers.insert(out.buffers.end(), l.buffers.begin(), l.buffers.end());
    }
    return out;
}

ParamCount Model::count_params() {
    ParamCount pc;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::size_t n = count_elements(layer_state(i));
        pc.per_layer.push_back(n);
        pc.total += n;
        if (layers_[i].spec.kind == LayerKind::detect) pc.head += n;
    }
    return pc;
}

void Model::zero_grad() {
    for (Tensor& t : state().params) t.zero_grad();
}

}  // namespace sdtn
