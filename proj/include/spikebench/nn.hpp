// Model specifications for the four architecture families (MLP, LeNet,
// AlexNet, VGGNet), shape inference and parameter storage.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spikebench/common.hpp"
#include "spikebench/tensor.hpp"

namespace sb::nn {

enum class LayerKind : std::uint8_t {
    dense = 0,
    conv2d = 1,
    avgpool2x2 = 2,
    maxpool2x2 = 3,
    flatten = 4,
    dropout = 5,
    relu = 6,
    tanh = 7,
    softmax = 8,
};

inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::avgpool2x2: return "avgpool2x2";
        case LayerKind::maxpool2x2: return "maxpool2x2";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dropout: return "dropout";
        case LayerKind::relu: return "relu";
        case LayerKind::tanh: return "tanh";
        default: return "softmax";
    }
}

struct LayerSpec {
    LayerKind kind;
    std::size_t units = 0;        // dense
    std::size_t kernels = 0;      // conv2d
    std::size_t kernel_size = 0;  // conv2d, 3 or 5
    std::size_t stride = 1;       // conv2d
    bool same_padding = false;    // conv2d
    double drop_prob = 0.0;       // dropout

    static LayerSpec Dense(std::size_t units) { return {LayerKind::dense, units}; }
    static LayerSpec Conv(std::size_t kernels, std::size_t ksize, bool same, std::size_t stride = 1) {
        LayerSpec s{LayerKind::conv2d};
        s.kernels = kernels;
        s.kernel_size = ksize;
        s.stride = stride;
        s.same_padding = same;
        return s;
    }
    static LayerSpec AvgPool() { return {LayerKind::avgpool2x2}; }
    static LayerSpec MaxPool() { return {LayerKind::maxpool2x2}; }
    static LayerSpec Flatten() { return {LayerKind::flatten}; }
    static LayerSpec Dropout(double p) {
        LayerSpec s{LayerKind::dropout};
        s.drop_prob = p;
        return s;
    }
    static LayerSpec Relu() { return {LayerKind::relu}; }
    static LayerSpec Tanh() { return {LayerKind::tanh}; }
    static LayerSpec Softmax() { return {LayerKind::softmax}; }

    void validate() const {
        if (kind == LayerKind::conv2d && kernel_size != 3 && kernel_size != 5)
            throw ArgumentError("conv2d kernel size must be 3 or 5");
        if (kind == LayerKind::conv2d && (kernels == 0 || stride == 0))
            throw ArgumentError("conv2d needs kernels >= 1 and stride >= 1");
        if (kind == LayerKind::dense && units == 0) throw ArgumentError("dense needs units >= 1");
        if (kind == LayerKind::dropout && (drop_prob < 0.0 || drop_prob >= 1.0))
            throw ArgumentError("dropout probability must be in [0,1)");
    }
};

// Shape flowing between layers: spatial (h,w,c) until flatten, flat afterwards.
struct Shape {
    bool spatial = true;
    std::size_t h = 0, w = 0, c = 0;
    std::size_t flat = 0;

    std::size_t numel() const { return spatial ? h * w * c : flat; }
};

struct ModelSpec {
    std::vector<LayerSpec> layers;
    std::size_t input_h = 28, input_w = 28, input_c = 1;
    int num_classes = 0;
    std::string arch = "";
    bool constrained = false;

    bool has_kind(LayerKind k) const {
        for (const auto& l : layers)
            if (l.kind == k) return true;
        return false;
    }
};

inline Shape input_shape(const ModelSpec& m) { return Shape{true, m.input_h, m.input_w, m.input_c, 0}; }

inline Shape layer_output_shape(const LayerSpec& l, const Shape& in) {
    l.validate();
    Shape out = in;
    switch (l.kind) {
        case LayerKind::conv2d: {
            if (!in.spatial) throw ArgumentError("conv2d requires a spatial input");
            const std::size_t k = l.kernel_size, s = l.stride;
            if (l.same_padding) {
                out.h = (in.h + s - 1) / s;
                out.w = (in.w + s - 1) / s;
            } else {
                if (in.h < k || in.w < k) throw ArgumentError("conv2d kernel larger than input");
                out.h = (in.h - k) / s + 1;
                out.w = (in.w - k) / s + 1;
            }
            out.c = l.kernels;
            break;
        }
        case LayerKind::avgpool2x2:
        case LayerKind::maxpool2x2:
            if (!in.spatial) throw ArgumentError("pool requires a spatial input");
            if (in.h < 2 || in.w < 2) throw ArgumentError("pool on input smaller than 2x2");
            out.h = in.h / 2;  // non-overlapping 2x2, stride 2; odd trailing row/col dropped
            out.w = in.w / 2;
            break;
        case LayerKind::flatten:
            out.spatial = false;
            out.flat = in.numel();
            break;
        case LayerKind::dense:
            if (in.spatial) throw ArgumentError("dense requires a flat input (insert flatten)");
            out.flat = l.units;
            break;
        default:
            break;  // dropout / relu / tanh / softmax preserve shape
    }
    return out;
}

// Per-layer output shapes; validates the whole chain including the final
// softmax over num_classes.
inline std::vector<Shape> infer_shapes(const ModelSpec& m) {
    std::vector<Shape> shapes;
    shapes.reserve(m.layers.size());
    Shape cur = input_shape(m);
    for (const auto& l : m.layers) {
        cur = layer_output_shape(l, cur);
        shapes.push_back(cur);
    }
    if (m.layers.empty() || m.layers.back().kind != LayerKind::softmax)
        throw ArgumentError("model must end in softmax");
    if (cur.spatial || cur.flat != static_cast<std::size_t>(m.num_classes))
        throw ArgumentError("final layer width does not match num_classes");
    return shapes;
}

inline std::size_t layer_param_count(const LayerSpec& l, const Shape& in) {
    switch (l.kind) {
        case LayerKind::conv2d: return l.kernels * (in.c * l.kernel_size * l.kernel_size + 1);
        case LayerKind::dense: return in.flat * l.units + l.units;
        default: return 0;
    }
}

inline std::size_t param_count(const ModelSpec& m) {
    std::size_t total = 0;
    Shape cur = input_shape(m);
    for (const auto& l : m.layers) {
        total += layer_param_count(l, cur);
        cur = layer_output_shape(l, cur);
    }
    return total;
}

inline std::vector<std::size_t> per_layer_param_counts(const ModelSpec& m) {
    std::vector<std::size_t> counts;
    Shape cur = input_shape(m);
    for (const auto& l : m.layers) {
        counts.push_back(layer_param_count(l, cur));
        cur = layer_output_shape(l, cur);
    }
    return counts;
}

// ---------------------------------------------------------------------------
// build_model: the four families of Fig-style architectures. `constrained`
// swaps maxpool->avgpool and tanh->relu so the model converts cleanly;
// the MLP is already conversion-compatible and has no separate variant.
// `width_scale` multiplies convolution kernel counts.
inline ModelSpec build_model(const std::string& arch, int num_classes, bool constrained,
                             double width_scale = 1.0) {
    if (num_classes < 2) throw ArgumentError("build_model: num_classes must be >= 2");
    if (!(width_scale > 0.0)) throw ArgumentError("build_model: width_scale must be positive");
    auto scaled = [&](std::size_t k) {
        auto v = static_cast<std::size_t>(std::llround(static_cast<double>(k) * width_scale));
        return v == 0 ? std::size_t(1) : v;
    };

    ModelSpec m;
    m.num_classes = num_classes;
    m.arch = arch;
    m.constrained = constrained;
    auto& L = m.layers;

    if (arch == "mlp") {
        L = {LayerSpec::Flatten(),
             LayerSpec::Dense(512), LayerSpec::Relu(), LayerSpec::Dropout(0.2),
             LayerSpec::Dense(256), LayerSpec::Relu(), LayerSpec::Dropout(0.2),
             LayerSpec::Dense(static_cast<std::size_t>(num_classes)), LayerSpec::Softmax()};
    } else if (arch == "lenet") {
        const LayerSpec act = constrained ? LayerSpec::Relu() : LayerSpec::Tanh();
        L = {LayerSpec::Conv(scaled(6), 5, false), act, LayerSpec::AvgPool(),
             LayerSpec::Conv(scaled(16), 5, false), act, LayerSpec::AvgPool(),
             LayerSpec::Flatten(),
             LayerSpec::Dense(120), act, LayerSpec::Dropout(0.25),
             LayerSpec::Dense(84), act, LayerSpec::Dropout(0.25),
             LayerSpec::Dense(static_cast<std::size_t>(num_classes)), LayerSpec::Softmax()};
    } else if (arch == "alexnet") {
        const LayerSpec pool = constrained ? LayerSpec::AvgPool() : LayerSpec::MaxPool();
        L = {LayerSpec::Conv(scaled(6), 5, true, 1), LayerSpec::Relu(),
             LayerSpec::Conv(scaled(12), 5, true), LayerSpec::Relu(),
             LayerSpec::Conv(scaled(24), 3, true), LayerSpec::Relu(), pool,
             LayerSpec::Conv(scaled(24), 3, true), LayerSpec::Relu(), pool,
             LayerSpec::Conv(scaled(24), 3, true), LayerSpec::Relu(), pool,
             LayerSpec::Flatten(),
             LayerSpec::Dense(120), LayerSpec::Relu(), LayerSpec::Dropout(0.5),
             LayerSpec::Dense(84), LayerSpec::Relu(), LayerSpec::Dropout(0.5),
             LayerSpec::Dense(static_cast<std::size_t>(num_classes)), LayerSpec::Softmax()};
    } else if (arch == "vggnet") {
        const LayerSpec pool = constrained ? LayerSpec::AvgPool() : LayerSpec::MaxPool();
        L = {LayerSpec::Conv(scaled(6), 3, true), LayerSpec::Relu(), pool,
             LayerSpec::Conv(scaled(16), 3, true), LayerSpec::Relu(), pool,
             LayerSpec::Conv(scaled(32), 3, true), LayerSpec::Relu(),
             LayerSpec::Conv(scaled(32), 3, true), LayerSpec::Relu(), pool,
             LayerSpec::Conv(scaled(48), 3, true), LayerSpec::Relu(),
             LayerSpec::Conv(scaled(48), 3, true), LayerSpec::Relu(), pool,
             LayerSpec::Flatten(),
             LayerSpec::Dense(120), LayerSpec::Relu(),
             LayerSpec::Dense(84), LayerSpec::Relu(),
             LayerSpec::Dense(static_cast<std::size_t>(num_classes)), LayerSpec::Softmax()};
    } else {
        throw ArgumentError("build_model: unknown architecture '" + arch + "'");
    }
    infer_shapes(m);  // sanity-check the chain
    return m;
}

// ---------------------------------------------------------------------------
// Parameters. weights[i]/biases[i] belong to layers[i] and are empty for
// parameterless layers. Conv weights are stored (ky, kx, in_c, out_c),
// dense weights (in, out).
template <typename T>
struct ParamStore {
    std::vector<Tensor<T>> weights;
    std::vector<Tensor<T>> biases;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& w : weights) n += w.size();
        for (const auto& b : biases) n += b.size();
        return n;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        out.weights.reserve(weights.size());
        out.biases.reserve(biases.size());
        for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
        for (const auto& b : biases) out.biases.push_back(b.template cast<U>());
        return out;
    }
};

// Glorot-uniform weights, zero biases.
template <typename T>
ParamStore<T> init_params(const ModelSpec& m, std::uint64_t seed) {
    ParamStore<T> ps;
    ps.weights.resize(m.layers.size());
    ps.biases.resize(m.layers.size());
    Rng rng(seed);
    Shape cur = input_shape(m);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const auto& l = m.layers[i];
        if (l.kind == LayerKind::conv2d) {
            const std::size_t k = l.kernel_size;
            const std::size_t fan_in = cur.c * k * k, fan_out = l.kernels * k * k;
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            ps.weights[i] = Tensor<T>({k, k, cur.c, l.kernels});
            for (auto& v : ps.weights[i].vec()) v = static_cast<T>(rng.uniform(-limit, limit));
            ps.biases[i] = Tensor<T>({l.kernels});
        } else if (l.kind == LayerKind::dense) {
            const std::size_t fan_in = cur.flat, fan_out = l.units;
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            ps.weights[i] = Tensor<T>({fan_in, l.units});
            for (auto& v : ps.weights[i].vec()) v = static_cast<T>(rng.uniform(-limit, limit));
            ps.biases[i] = Tensor<T>({l.units});
        }
        cur = layer_output_shape(l, cur);
    }
    return ps;
}

} // namespace sb::nn
