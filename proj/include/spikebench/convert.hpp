// ANN -> SNN conversion: activation-percentile normalization, fixed-point
// quantization, regular rate input coding and network assembly, plus the
// SBSN container format.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spikebench/data.hpp"
#include "spikebench/net.hpp"
#include "spikebench/neuron.hpp"
#include "spikebench/nn.hpp"

namespace sb::convert {

struct ConversionConfig {
    double percentile = 99.9;    // activation scale percentile
    std::size_t duration = 120;  // default exposure timesteps (1 step = 1 ms of duration)
    int weight_bits = 8;
    int bias_bits = 12;
    snn::NeuronConfig neuron;

    void validate() const {
        if (!(percentile > 0.0 && percentile <= 100.0))
            throw ArgumentError("ConversionConfig: percentile must be in (0,100]");
        if (duration < 1) throw ArgumentError("ConversionConfig: duration must be >= 1");
        if (weight_bits < 2 || weight_bits > 16 || bias_bits < 2 || bias_bits > 24)
            throw ArgumentError("ConversionConfig: unsupported bit widths");
        neuron.validate();
    }
};

// Per-layer activation scales, indexed like ModelSpec::layers. Only
// parameterized layers (conv/dense) carry a scale; the rest hold 1.
struct ActivationStats {
    std::vector<double> lambda;
    std::vector<bool> present;
    std::vector<bool> degenerate;  // all-zero activations; lambda forced to 1
};

// linear-interpolation percentile over a copy of the values
inline double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw ArgumentError("percentile: empty sample");
    if (!(p > 0.0 && p <= 100.0)) throw ArgumentError("percentile: p must be in (0,100]");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    const double rank = (p / 100.0) * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = rank - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

namespace detail {

// indices of parameterized layers and, for each, the index of the relu that
// rectifies its output (or npos when none, e.g. the pre-softmax layer)
inline std::vector<std::pair<std::size_t, std::size_t>> parameterized_layers(const nn::ModelSpec& m) {
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        const auto k = m.layers[i].kind;
        if (k != nn::LayerKind::conv2d && k != nn::LayerKind::dense) continue;
        std::size_t relu = npos;
        for (std::size_t j = i + 1; j < m.layers.size(); ++j) {
            const auto kj = m.layers[j].kind;
            if (kj == nn::LayerKind::relu) {
                relu = j;
                break;
            }
            if (kj != nn::LayerKind::dropout) break;  // another rate-changing layer first
        }
        out.emplace_back(i, relu);
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// lambda_l = p-th percentile of the post-ReLU activations of layer l over the
// calibration set. Layers whose activations are all zero (or whose percentile
// collapses to a non-positive value) get lambda = 1 and a degenerate flag.
inline ActivationStats collect_activation_stats(const nn::ModelSpec& model, nn::ParamStore<float>& params,
                                                const data::Dataset& calibration, double p) {
    if (calibration.size() == 0) throw ArgumentError("collect_activation_stats: empty calibration set");
    if (model.has_kind(nn::LayerKind::maxpool2x2) || model.has_kind(nn::LayerKind::tanh))
        throw ArgumentError("collect_activation_stats: model must be constrained (no maxpool/tanh)");

    const auto plist = detail::parameterized_layers(model);
    constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::vector<std::vector<double>> samples(model.layers.size());
    nn::Net<float> net(model, params);

    const std::size_t batch = 64;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < calibration.size(); start += batch) {
        const std::size_t end = std::min(calibration.size(), start + batch);
        idx.clear();
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        const auto x = nn::make_batch<float>(calibration, idx);
        net.forward_observed(x, [&](std::size_t li, const Tensor<float>& out) {
            for (const auto& [pi, relu] : plist) {
                const std::size_t tap = (relu == npos) ? pi : relu;
                if (tap != li) continue;
                auto& dst = samples[pi];
                dst.reserve(dst.size() + out.size());
                for (const float v : out.vec()) dst.push_back(std::max(0.0, static_cast<double>(v)));
            }
        });
    }

    ActivationStats stats;
    stats.lambda.assign(model.layers.size(), 1.0);
    stats.present.assign(model.layers.size(), false);
    stats.degenerate.assign(model.layers.size(), false);
    for (const auto& [pi, relu] : plist) {
        (void)relu;
        stats.present[pi] = true;
        const double lam = percentile(samples[pi], p);
        if (lam > 0.0) {
            stats.lambda[pi] = lam;
        } else {
            stats.lambda[pi] = 1.0;
            stats.degenerate[pi] = true;
        }
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Layer-wise rescaling: weights of layer l scale by lambda_{l-1}/lambda_l and
// biases by 1/lambda_l (lambda_0 = 1 at the input). Positive per-layer
// rescaling of a ReLU network leaves every argmax unchanged.
inline nn::ParamStore<float> normalize_weights(const nn::ModelSpec& model, const nn::ParamStore<float>& params,
                                               const ActivationStats& stats) {
    if (stats.lambda.size() != model.layers.size())
        throw ArgumentError("normalize_weights: stats do not match the model");
    nn::ParamStore<float> out = params;
    double prev_lambda = 1.0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto k = model.layers[i].kind;
        if (k != nn::LayerKind::conv2d && k != nn::LayerKind::dense) continue;
        if (!stats.present[i]) throw ArgumentError("normalize_weights: missing stats for layer " + std::to_string(i));
        const double lam = stats.lambda[i];
        const double wscale = prev_lambda / lam;
        const double bscale = 1.0 / lam;
        for (auto& v : out.weights[i].vec()) v = static_cast<float>(v * wscale);
        for (auto& v : out.biases[i].vec()) v = static_cast<float>(v * bscale);
        prev_lambda = lam;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixed-point quantization with a shared per-layer power-of-two exponent:
// the smallest e with max|w| / 2^e <= 2^(bits-1)-1, round-half-even mantissas.
struct QuantizedTensor {
    std::vector<std::int32_t> values;
    int exponent = kZeroExponent;
    int bits = 8;

    static constexpr int kZeroExponent = -127;  // sentinel for all-zero tensors

    double dequant(std::size_t i) const { return static_cast<double>(values[i]) * std::ldexp(1.0, exponent); }
};

inline QuantizedTensor quantize_tensor(const std::vector<float>& w, int bits) {
    const double qmax = static_cast<double>((1 << (bits - 1)) - 1);
    double max_abs = 0.0;
    for (const float v : w) {
        if (!std::isfinite(v)) throw ArgumentError("quantize: non-finite weight");
        max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
    }
    QuantizedTensor q;
    q.bits = bits;
    q.values.resize(w.size(), 0);
    if (max_abs == 0.0) return q;  // exponent stays at the zero sentinel
    q.exponent = static_cast<int>(std::ceil(std::log2(max_abs / qmax)));
    while (max_abs / std::ldexp(1.0, q.exponent) > qmax) ++q.exponent;  // guard against log2 rounding
    while (q.exponent > QuantizedTensor::kZeroExponent + 1 && max_abs / std::ldexp(1.0, q.exponent - 1) <= qmax)
        --q.exponent;
    const double scale = std::ldexp(1.0, -q.exponent);
    for (std::size_t i = 0; i < w.size(); ++i)
        q.values[i] = static_cast<std::int32_t>(round_half_even(static_cast<double>(w[i]) * scale));
    return q;
}

// ---------------------------------------------------------------------------
// Converted network layers. Conv/pool connectivity stays in structural form
// and is unrolled to explicit synapse lists by the simulator/partitioner.
enum class Topology : std::uint8_t { dense = 0, conv = 1, avgpool = 2 };

struct QuantizedLayer {
    Topology topology = Topology::dense;
    std::string name;
    nn::Shape in_shape, out_shape;  // spatial (h,w,c) for conv/pool, flat for dense
    std::size_t kernel_size = 0, stride = 1;  // conv geometry
    long pad_y = 0, pad_x = 0;
    QuantizedTensor weights;  // conv: (ky,kx,ic,oc); dense: (in,out); empty for pools
    QuantizedTensor biases;

    std::size_t neuron_count() const { return out_shape.numel(); }
    std::size_t input_count() const { return in_shape.numel(); }
};

struct SpikingNetwork {
    ConversionConfig config;
    std::vector<QuantizedLayer> layers;
    std::vector<snn::NeuronConfig> neuron_configs;  // one per layer
    int num_classes = 0;
    std::uint64_t source_hash = 0;  // provenance: hash of source model params

    std::size_t total_neurons() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.neuron_count();
        return n;
    }
};

// ---------------------------------------------------------------------------
// Regular rate coding: pixel x spikes at step t (1-indexed) iff
// floor(x*t) > floor(x*(t-1)); the train carries floor(x*T) evenly spaced
// spikes over T steps.
inline bool spike_at(double x, std::size_t t) {
    return std::floor(x * static_cast<double>(t)) > std::floor(x * static_cast<double>(t - 1));
}

inline std::vector<std::vector<std::uint32_t>> encode_input(const data::ImageSample& image, std::size_t T) {
    if (T < 1) throw ArgumentError("encode_input: T must be >= 1");
    std::vector<std::vector<std::uint32_t>> trains(data::kPixels);
    for (std::size_t p = 0; p < data::kPixels; ++p) {
        const double x = image.pixels[p];
        for (std::size_t t = 1; t <= T; ++t)
            if (spike_at(x, t)) trains[p].push_back(static_cast<std::uint32_t>(t));
    }
    return trains;
}

// ---------------------------------------------------------------------------
// Full pipeline: validate -> calibrate -> normalize -> quantize -> assemble.
// Dropout is stripped (inference no-op), avgpool becomes fixed 1/4 weights,
// softmax becomes the spike-count readout.
inline SpikingNetwork convert(const nn::ModelSpec& model, nn::ParamStore<float>& params,
                              const data::Dataset& calibration, const ConversionConfig& cfg) {
    cfg.validate();
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto k = model.layers[i].kind;
        if (k == nn::LayerKind::maxpool2x2 || k == nn::LayerKind::tanh)
            throw ArgumentError("convert: unsupported layer " + std::to_string(i) + " (" + nn::kind_name(k) +
                                "); constrain the model first");
    }

    const auto stats = collect_activation_stats(model, params, calibration, cfg.percentile);
    const auto scaled = normalize_weights(model, params, stats);
    const auto shapes = nn::infer_shapes(model);

    SpikingNetwork net;
    net.config = cfg;
    net.num_classes = model.num_classes;
    {
        std::uint64_t h = fnv1a64(model.arch);
        for (const auto& w : params.weights)
            if (!w.empty()) h = fnv1a64(w.data(), w.size() * sizeof(float), h);
        for (const auto& b : params.biases)
            if (!b.empty()) h = fnv1a64(b.data(), b.size() * sizeof(float), h);
        net.source_hash = h;
    }

    nn::Shape cur = nn::input_shape(model);
    std::size_t conv_no = 0, pool_no = 0, fc_no = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        const auto& out_shape = shapes[i];
        switch (l.kind) {
            case nn::LayerKind::conv2d: {
                QuantizedLayer q;
                q.topology = Topology::conv;
                q.name = "conv" + std::to_string(++conv_no);
                q.in_shape = cur;
                q.out_shape = out_shape;
                q.kernel_size = l.kernel_size;
                q.stride = l.stride;
                if (l.same_padding) {
                    const long k = static_cast<long>(l.kernel_size), s = static_cast<long>(l.stride);
                    q.pad_y = std::max<long>(0, ((static_cast<long>(out_shape.h) - 1) * s + k - static_cast<long>(cur.h)) / 2);
                    q.pad_x = std::max<long>(0, ((static_cast<long>(out_shape.w) - 1) * s + k - static_cast<long>(cur.w)) / 2);
                }
                q.weights = quantize_tensor(scaled.weights[i].vec(), cfg.weight_bits);
                q.biases = quantize_tensor(scaled.biases[i].vec(), cfg.bias_bits);
                net.layers.push_back(std::move(q));
                break;
            }
            case nn::LayerKind::dense: {
                QuantizedLayer q;
                q.topology = Topology::dense;
                const bool is_output = (i + 2 == model.layers.size());  // followed only by softmax
                q.name = is_output ? "output" : "fc" + std::to_string(++fc_no);
                q.in_shape = nn::Shape{false, 0, 0, 0, cur.numel()};
                q.out_shape = out_shape;
                q.weights = quantize_tensor(scaled.weights[i].vec(), cfg.weight_bits);
                q.biases = quantize_tensor(scaled.biases[i].vec(), cfg.bias_bits);
                net.layers.push_back(std::move(q));
                break;
            }
            case nn::LayerKind::avgpool2x2: {
                QuantizedLayer q;
                q.topology = Topology::avgpool;
                q.name = "pool" + std::to_string(++pool_no);
                q.in_shape = cur;
                q.out_shape = out_shape;
                // fixed 1/4 window weights: mantissa 64 at exponent -8
                q.weights.bits = cfg.weight_bits;
                q.weights.exponent = -8;
                q.weights.values = {64};
                q.biases.bits = cfg.bias_bits;
                net.layers.push_back(std::move(q));
                break;
            }
            default: break;  // flatten/dropout/relu/softmax leave no spiking layer
        }
        cur = out_shape;
    }
    net.neuron_configs.assign(net.layers.size(), cfg.neuron);
    return net;
}

// ---------------------------------------------------------------------------
// SBSN container: "SBSN" | u16 version | config block | layers | u32 CRC32
// (CRC over every byte after the magic). A human-readable manifest of shapes
// and exponents goes to <path>.manifest.txt.
inline constexpr std::uint16_t kSnnVersion = 1;

inline void save_network(const SpikingNetwork& net, const std::string& path) {
    std::ostringstream body(std::ios::binary);
    io::write_le<std::uint16_t>(body, kSnnVersion);
    io::write_f32(body, static_cast<float>(net.config.percentile));
    io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(net.config.duration));
    body.put(static_cast<char>(net.config.weight_bits));
    body.put(static_cast<char>(net.config.bias_bits));
    const auto& nc = net.config.neuron;
    io::write_f32(body, static_cast<float>(nc.threshold_input_ratio));
    body.put(static_cast<char>(nc.bias_exponent));
    io::write_le<std::int32_t>(body, nc.vth_mantissa);
    io::write_le<std::int32_t>(body, nc.voltage_decay);
    io::write_le<std::int32_t>(body, nc.current_decay);
    io::write_le<std::int32_t>(body, nc.refractory_delay);
    body.put(static_cast<char>(nc.functional_state));
    io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(net.num_classes));
    io::write_le<std::uint64_t>(body, net.source_hash);
    io::write_le<std::uint16_t>(body, static_cast<std::uint16_t>(net.layers.size()));

    for (const auto& l : net.layers) {
        body.put(static_cast<char>(l.topology));
        body.put(static_cast<char>(l.name.size()));
        body.write(l.name.data(), static_cast<std::streamsize>(l.name.size()));
        body.put(l.in_shape.spatial ? 1 : 0);
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.in_shape.h));
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.in_shape.w));
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.in_shape.c));
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.in_shape.flat));
        body.put(l.out_shape.spatial ? 1 : 0);
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.out_shape.h));
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.out_shape.w));
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.out_shape.c));
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.out_shape.flat));
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.kernel_size));
        io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.stride));
        io::write_le<std::int32_t>(body, static_cast<std::int32_t>(l.pad_y));
        io::write_le<std::int32_t>(body, static_cast<std::int32_t>(l.pad_x));
        io::write_le<std::int32_t>(body, l.weights.exponent);
        io::write_le<std::uint64_t>(body, l.weights.values.size());
        for (const auto v : l.weights.values) io::write_le<std::int16_t>(body, static_cast<std::int16_t>(v));
        io::write_le<std::int32_t>(body, l.biases.exponent);
        io::write_le<std::uint64_t>(body, l.biases.values.size());
        for (const auto v : l.biases.values) io::write_le<std::int32_t>(body, v);
    }

    const std::string bytes = body.str();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_network: cannot open " + path);
    out.write("SBSN", 4);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    io::write_le<std::uint32_t>(out, crc32(bytes.data(), bytes.size()));
    if (!out) throw Error("save_network: write failed for " + path);

    std::ofstream man(path + ".manifest.txt");
    if (man) {
        man << "spikebench snn v" << kSnnVersion << "\n";
        man << "source_hash 0x" << std::hex << net.source_hash << std::dec << "\n";
        man << "num_classes " << net.num_classes << "\n";
        man << "percentile " << net.config.percentile << "\n";
        man << "default_duration " << net.config.duration << "\n";
        man << "weight_bits " << net.config.weight_bits << " bias_bits " << net.config.bias_bits << "\n";
        man << "vth " << net.config.neuron.vth() << " current_decay " << net.config.neuron.current_decay
            << " voltage_decay " << net.config.neuron.voltage_decay << " refractory "
            << net.config.neuron.refractory_delay << "\n";
        man << "layer topology out_shape neurons weight_exp bias_exp synapse_values\n";
        for (const auto& l : net.layers) {
            man << l.name << " ";
            man << (l.topology == Topology::dense ? "dense" : l.topology == Topology::conv ? "conv" : "avgpool") << " ";
            if (l.out_shape.spatial)
                man << l.out_shape.h << "x" << l.out_shape.w << "x" << l.out_shape.c;
            else
                man << l.out_shape.flat;
            man << " " << l.neuron_count() << " " << l.weights.exponent << " " << l.biases.exponent << " "
                << l.weights.values.size() << "\n";
        }
    }
}

inline SpikingNetwork load_network(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_network: cannot open " + path);
    std::ostringstream raw;
    raw << in.rdbuf();
    const std::string file = raw.str();
    if (file.size() < 8 || file.compare(0, 4, "SBSN") != 0)
        throw FormatError("load_network: " + path + " is not an SBSN file");
    const std::string body = file.substr(4, file.size() - 8);
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<std::uint32_t>(static_cast<unsigned char>(file[file.size() - 4 + i])) << (8 * i);
    if (crc32(body.data(), body.size()) != stored_crc)
        throw FormatError("load_network: CRC mismatch (truncated or corrupt file)");

    std::istringstream is(body, std::ios::binary);
    const auto version = io::read_le<std::uint16_t>(is);
    if (version != kSnnVersion) throw FormatError("load_network: unsupported version " + std::to_string(version));

    SpikingNetwork net;
    net.config.percentile = io::read_f32(is);
    net.config.duration = io::read_le<std::uint32_t>(is);
    net.config.weight_bits = is.get();
    net.config.bias_bits = is.get();
    auto& nc = net.config.neuron;
    nc.threshold_input_ratio = io::read_f32(is);
    nc.bias_exponent = is.get();
    nc.vth_mantissa = io::read_le<std::int32_t>(is);
    nc.voltage_decay = io::read_le<std::int32_t>(is);
    nc.current_decay = io::read_le<std::int32_t>(is);
    nc.refractory_delay = io::read_le<std::int32_t>(is);
    nc.functional_state = is.get();
    net.num_classes = static_cast<int>(io::read_le<std::uint32_t>(is));
    net.source_hash = io::read_le<std::uint64_t>(is);
    const auto layer_count = io::read_le<std::uint16_t>(is);

    auto read_shape = [&](nn::Shape& s) {
        s.spatial = is.get() != 0;
        s.h = io::read_le<std::uint32_t>(is);
        s.w = io::read_le<std::uint32_t>(is);
        s.c = io::read_le<std::uint32_t>(is);
        s.flat = io::read_le<std::uint32_t>(is);
    };

    for (std::uint16_t i = 0; i < layer_count; ++i) {
        QuantizedLayer l;
        l.topology = static_cast<Topology>(is.get());
        const int name_len = is.get();
        if (name_len < 0) throw FormatError("load_network: truncated layer header");
        l.name.resize(static_cast<std::size_t>(name_len));
        if (!is.read(l.name.data(), name_len)) throw FormatError("load_network: truncated layer name");
        read_shape(l.in_shape);
        read_shape(l.out_shape);
        l.kernel_size = io::read_le<std::uint32_t>(is);
        l.stride = io::read_le<std::uint32_t>(is);
        l.pad_y = io::read_le<std::int32_t>(is);
        l.pad_x = io::read_le<std::int32_t>(is);
        l.weights.bits = net.config.weight_bits;
        l.weights.exponent = io::read_le<std::int32_t>(is);
        l.weights.values.resize(io::read_le<std::uint64_t>(is));
        for (auto& v : l.weights.values) v = io::read_le<std::int16_t>(is);
        l.biases.bits = net.config.bias_bits;
        l.biases.exponent = io::read_le<std::int32_t>(is);
        l.biases.values.resize(io::read_le<std::uint64_t>(is));
        for (auto& v : l.biases.values) v = io::read_le<std::int32_t>(is);
        net.layers.push_back(std::move(l));
    }
    net.neuron_configs.assign(net.layers.size(), net.config.neuron);
    return net;
}

} // namespace sb::convert
