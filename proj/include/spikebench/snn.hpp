// Discrete-time simulator for converted networks: integer CUBA LIF
// compartments with soft reset, per Loihi-style parameters.
//
// Rate convention: the input encoder drives pixel rates in [0,1]; every
// spiking layer operates at half rate (activation a maps to rate a/2), which
// keeps the whole dynamic range below the 1/2 cap imposed by
// refractory_delay = 1. A quantized weight w therefore becomes the synaptic
// integer w * vTh/2 in the first layer (rate gain 1 -> 1/2) and w * vTh in
// later layers (gain 1/2 -> 1/2); biases inject w * vTh/2 per step as
// constant compartment current.
#pragma once

#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "spikebench/convert.hpp"
#include "spikebench/data.hpp"
#include "spikebench/neuron.hpp"

namespace sb::snn {

struct SimResult {
    int predicted_class = 0;
    std::vector<std::int64_t> output_counts;  // per class
    std::vector<std::int64_t> layer_spikes;   // per layer totals
    std::int64_t total_spikes = 0;            // sum of layer_spikes
    std::size_t timesteps = 0;
    std::int64_t input_spikes = 0;       // encoder events (not counted in total_spikes)
    std::int64_t saturation_events = 0;  // 32-bit accumulator clamps
};

// Eq.-style average firing rate: N_spikes / (batch * M * T).
inline double afr(const SimResult& result, std::size_t batch, std::size_t neuron_count, std::size_t duration) {
    if (batch == 0 || neuron_count == 0 || duration == 0)
        throw ArgumentError("afr: batch, neuron count and duration must be positive");
    return static_cast<double>(result.total_spikes) /
           (static_cast<double>(batch) * static_cast<double>(neuron_count) * static_cast<double>(duration));
}

class Runtime {
public:
    struct Layer {
        std::string name;
        std::size_t n_in = 0, n_out = 0;
        std::vector<std::uint32_t> row_ptr;  // per source, into col/weight
        std::vector<std::uint32_t> col;
        std::vector<std::int32_t> weight;        // effective synaptic integers
        std::vector<std::int32_t> bias_current;  // mantissa*2^bias_exp per step
        NeuronConfig neuron;
    };

    struct State {
        struct LayerState {
            std::vector<std::int32_t> u, v, refractory;
        };
        std::vector<LayerState> layers;
    };

    explicit Runtime(const convert::SpikingNetwork& net) : num_classes_(net.num_classes) {
        if (net.layers.empty()) throw ArgumentError("Runtime: network has no layers");
        layers_.reserve(net.layers.size());
        for (std::size_t li = 0; li < net.layers.size(); ++li)
            layers_.push_back(build_layer(net.layers[li], net.neuron_configs[li], li == 0));
        if (layers_.back().n_out != static_cast<std::size_t>(net.num_classes))
            throw ArgumentError("Runtime: output layer width does not match num_classes");
    }

    const std::vector<Layer>& layers() const { return layers_; }
    std::size_t total_neurons() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.n_out;
        return n;
    }

    State make_state() const {
        State s;
        s.layers.resize(layers_.size());
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            s.layers[i].u.assign(layers_[i].n_out, 0);
            s.layers[i].v.assign(layers_[i].n_out, 0);
            s.layers[i].refractory.assign(layers_[i].n_out, 0);
        }
        return s;
    }

    // One network timestep. `input_spikes` are the pixel indices spiking at
    // this step; spikes propagate through the layer chain within the step.
    // `emitted[l]` receives the indices of layer l's spikes.
    void step(State& state, const std::vector<std::uint32_t>& input_spikes,
              std::vector<std::vector<std::uint32_t>>& emitted, std::int64_t* saturations = nullptr) const {
        emitted.resize(layers_.size());
        for (auto& e : emitted) e.clear();
        for (std::size_t li = 0; li < layers_.size(); ++li) {
            const Layer& L = layers_[li];
            auto& S = state.layers[li];
            const auto& sources = (li == 0) ? input_spikes : emitted[li - 1];

            // current decay, truncation toward zero, then synaptic input
            const std::int64_t keep_u = 4096 - L.neuron.current_decay;
            for (auto& u : S.u) u = static_cast<std::int32_t>((static_cast<std::int64_t>(u) * keep_u) / 4096);
            for (const auto s : sources) {
                const std::uint32_t beg = L.row_ptr[s], end = L.row_ptr[s + 1];
                for (std::uint32_t k = beg; k < end; ++k)
                    S.u[L.col[k]] = sat_add(S.u[L.col[k]], L.weight[k], saturations);
            }

            // membrane update; spiking is suppressed while refractory but the
            // potential keeps integrating (no reset happens)
            const std::int64_t keep_v = 4096 - L.neuron.voltage_decay;
            const std::int64_t vth = L.neuron.vth();
            for (std::size_t n = 0; n < L.n_out; ++n) {
                std::int64_t v = (static_cast<std::int64_t>(S.v[n]) * keep_v) / 4096;
                v += S.u[n];
                if (!L.bias_current.empty()) v += L.bias_current[n];
                if (S.refractory[n] > 0) {
                    --S.refractory[n];
                } else if (v >= vth) {
                    v -= vth;  // soft reset
                    S.refractory[n] = L.neuron.refractory_delay;
                    emitted[li].push_back(static_cast<std::uint32_t>(n));
                }
                S.v[n] = clamp32(v, saturations);
            }
        }
    }

    // Full inference: fresh state, T steps of the regular-rate encoder, spike
    // count readout (argmax, ties to the lowest class index). `trace`, when
    // set, receives CSV rows "timestep,layer,neuron,1".
    SimResult infer(const data::ImageSample& image, std::size_t T, std::ostream* trace = nullptr) const {
        if (T < 1) throw ArgumentError("infer: T must be >= 1");
        State state = make_state();
        std::vector<std::vector<std::uint32_t>> emitted;
        std::vector<std::uint32_t> input;

        SimResult r;
        r.timesteps = T;
        r.layer_spikes.assign(layers_.size(), 0);
        r.output_counts.assign(static_cast<std::size_t>(num_classes_), 0);

        for (std::size_t t = 1; t <= T; ++t) {
            input.clear();
            for (std::uint32_t p = 0; p < data::kPixels; ++p)
                if (convert::spike_at(image.pixels[p], t)) input.push_back(p);
            r.input_spikes += static_cast<std::int64_t>(input.size());
            step(state, input, emitted, &r.saturation_events);
            for (std::size_t li = 0; li < layers_.size(); ++li) {
                r.layer_spikes[li] += static_cast<std::int64_t>(emitted[li].size());
                if (trace)
                    for (const auto n : emitted[li]) *trace << t << ',' << layers_[li].name << ',' << n << ",1\n";
            }
            for (const auto n : emitted.back()) r.output_counts[n]++;
        }
        for (const auto c : r.layer_spikes) r.total_spikes += c;
        r.predicted_class = 0;
        for (std::size_t c = 1; c < r.output_counts.size(); ++c)
            if (r.output_counts[c] > r.output_counts[static_cast<std::size_t>(r.predicted_class)])
                r.predicted_class = static_cast<int>(c);
        return r;
    }

private:
    static std::int32_t clamp32(std::int64_t v, std::int64_t* saturations) {
        if (v > std::numeric_limits<std::int32_t>::max()) {
            if (saturations) ++*saturations;
            return std::numeric_limits<std::int32_t>::max();
        }
        if (v < std::numeric_limits<std::int32_t>::min()) {
            if (saturations) ++*saturations;
            return std::numeric_limits<std::int32_t>::min();
        }
        return static_cast<std::int32_t>(v);
    }
    static std::int32_t sat_add(std::int32_t a, std::int32_t b, std::int64_t* saturations) {
        return clamp32(static_cast<std::int64_t>(a) + b, saturations);
    }

    static std::size_t spatial_index(std::size_t y, std::size_t x, std::size_t c, std::size_t w, std::size_t ch) {
        return (y * w + x) * ch + c;
    }

    Layer build_layer(const convert::QuantizedLayer& q, const NeuronConfig& nc, bool first) {
        nc.validate();
        Layer L;
        L.name = q.name;
        L.neuron = nc;
        L.n_in = q.input_count();
        L.n_out = q.neuron_count();

        const double vth = static_cast<double>(nc.vth());
        const double gain = first ? 0.5 : 1.0;
        const double wscale = std::ldexp(1.0, q.weights.exponent) * vth * gain;

        // gather (source, target, weight) triples, then pack CSR by source
        struct Edge {
            std::uint32_t src, dst;
            std::int32_t w;
        };
        std::vector<Edge> edges;
        auto eff = [&](std::int32_t mant) {
            const double w = static_cast<double>(mant) * wscale;
            return clamp32(static_cast<std::int64_t>(std::llround(w)), nullptr);
        };

        if (q.topology == convert::Topology::dense) {
            edges.reserve(q.weights.values.size());
            const std::size_t in = L.n_in, out = L.n_out;
            for (std::size_t k = 0; k < in; ++k)
                for (std::size_t o = 0; o < out; ++o) {
                    const std::int32_t w = eff(q.weights.values[k * out + o]);
                    if (w != 0)
                        edges.push_back({static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(o), w});
                }
        } else if (q.topology == convert::Topology::conv) {
            const auto& in_s = q.in_shape;
            const auto& out_s = q.out_shape;
            const std::size_t k = q.kernel_size, s = q.stride;
            for (std::size_t oy = 0; oy < out_s.h; ++oy)
                for (std::size_t ox = 0; ox < out_s.w; ++ox)
                    for (std::size_t oc = 0; oc < out_s.c; ++oc) {
                        const std::size_t dst = spatial_index(oy, ox, oc, out_s.w, out_s.c);
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const long iy = static_cast<long>(oy * s + ky) - q.pad_y;
                            if (iy < 0 || iy >= static_cast<long>(in_s.h)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long ix = static_cast<long>(ox * s + kx) - q.pad_x;
                                if (ix < 0 || ix >= static_cast<long>(in_s.w)) continue;
                                for (std::size_t ic = 0; ic < in_s.c; ++ic) {
                                    const std::int32_t mant =
                                        q.weights.values[((ky * k + kx) * in_s.c + ic) * out_s.c + oc];
                                    const std::int32_t w = eff(mant);
                                    if (w == 0) continue;
                                    const std::size_t src = spatial_index(static_cast<std::size_t>(iy),
                                                                          static_cast<std::size_t>(ix), ic, in_s.w,
                                                                          in_s.c);
                                    edges.push_back({static_cast<std::uint32_t>(src), static_cast<std::uint32_t>(dst),
                                                     w});
                                }
                            }
                        }
                    }
        } else {  // avgpool: fixed positive 1/4 weights on each 2x2 window
            const auto& in_s = q.in_shape;
            const auto& out_s = q.out_shape;
            const std::int32_t w = eff(q.weights.values.at(0));
            for (std::size_t oy = 0; oy < out_s.h; ++oy)
                for (std::size_t ox = 0; ox < out_s.w; ++ox)
                    for (std::size_t c = 0; c < out_s.c; ++c) {
                        const std::size_t dst = spatial_index(oy, ox, c, out_s.w, out_s.c);
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                const std::size_t src =
                                    spatial_index(2 * oy + dy, 2 * ox + dx, c, in_s.w, in_s.c);
                                edges.push_back({static_cast<std::uint32_t>(src), static_cast<std::uint32_t>(dst), w});
                            }
                    }
        }

        // counting sort by source keeps construction deterministic
        L.row_ptr.assign(L.n_in + 1, 0);
        for (const auto& e : edges) L.row_ptr[e.src + 1]++;
        for (std::size_t i = 1; i <= L.n_in; ++i) L.row_ptr[i] += L.row_ptr[i - 1];
        L.col.resize(edges.size());
        L.weight.resize(edges.size());
        std::vector<std::uint32_t> cursor(L.row_ptr.begin(), L.row_ptr.end() - 1);
        for (const auto& e : edges) {
            const auto pos = cursor[e.src]++;
            L.col[pos] = e.dst;
            L.weight[pos] = e.w;
        }

        // per-compartment bias: constant current mantissa*2^bias_exp per step,
        // representing deq(b) * vTh/2
        if (!q.biases.values.empty()) {
            const int be = nc.bias_exponent;
            const auto mant_max = static_cast<std::int64_t>((1 << (q.biases.bits - 1)) - 1);
            L.bias_current.resize(L.n_out, 0);
            // conv biases are one per output channel; neuron order is (y,x,c)
            const bool per_channel = (q.topology == convert::Topology::conv);
            for (std::size_t n = 0; n < L.n_out; ++n) {
                const std::size_t bi = per_channel ? n % q.out_shape.c : n;
                const double ideal = q.biases.dequant(bi) * vth * 0.5;
                std::int64_t mant = std::llround(ideal / std::ldexp(1.0, be));
                mant = std::clamp<std::int64_t>(mant, -mant_max, mant_max);
                L.bias_current[n] = static_cast<std::int32_t>(mant << be);
            }
        }
        return L;
    }

    std::vector<Layer> layers_;
    int num_classes_;
};

} // namespace sb::snn
