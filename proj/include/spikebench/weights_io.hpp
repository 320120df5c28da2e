// SBNW weight container.
//
//   "SBNW" | u16 version=1 | u16 layer_count | u32 param_total | u32 num_classes
//   per layer: u8 kind | u8 rank | rank x u32 dims | f32 payload (weights then biases)
//   trailing u32 CRC32 over every byte after the magic
//
// All multi-byte fields little-endian. Dense layers use rank 2 (in, out);
// conv layers rank 6 (ky, kx, in_c, out_c, stride, same_flag); dropout rank 1
// with a single f32 probability; the remaining kinds carry no payload.
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <utility>

#include "spikebench/nn.hpp"

namespace sb::nn {

inline constexpr std::uint16_t kWeightsVersion = 1;

template <typename T>
void save_weights(const ModelSpec& model, const ParamStore<T>& params, const std::string& path) {
    const auto shapes = infer_shapes(model);
    std::ostringstream body(std::ios::binary);
    io::write_le<std::uint16_t>(body, kWeightsVersion);
    io::write_le<std::uint16_t>(body, static_cast<std::uint16_t>(model.layers.size()));
    io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(param_count(model)));
    io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(model.num_classes));

    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        body.put(static_cast<char>(l.kind));
        switch (l.kind) {
            case LayerKind::dense: {
                body.put(2);
                const auto& w = params.weights[i];
                io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(w.dim(0)));
                io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(w.dim(1)));
                for (const auto& v : w.vec()) io::write_f32(body, static_cast<float>(v));
                for (const auto& v : params.biases[i].vec()) io::write_f32(body, static_cast<float>(v));
                break;
            }
            case LayerKind::conv2d: {
                body.put(6);
                const auto& w = params.weights[i];
                for (int d = 0; d < 4; ++d) io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(w.dim(d)));
                io::write_le<std::uint32_t>(body, static_cast<std::uint32_t>(l.stride));
                io::write_le<std::uint32_t>(body, l.same_padding ? 1u : 0u);
                for (const auto& v : w.vec()) io::write_f32(body, static_cast<float>(v));
                for (const auto& v : params.biases[i].vec()) io::write_f32(body, static_cast<float>(v));
                break;
            }
            case LayerKind::dropout: {
                body.put(1);
                io::write_le<std::uint32_t>(body, 1);
                io::write_f32(body, static_cast<float>(l.drop_prob));
                break;
            }
            default: body.put(0); break;
        }
    }

    const std::string bytes = body.str();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_weights: cannot open " + path);
    out.write("SBNW", 4);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    io::write_le<std::uint32_t>(out, crc32(bytes.data(), bytes.size()));
    if (!out) throw Error("save_weights: write failed for " + path);
}

inline std::pair<ModelSpec, ParamStore<float>> load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_weights: cannot open " + path);
    std::ostringstream raw;
    raw << in.rdbuf();
    const std::string file = raw.str();
    if (file.size() < 8 || file.compare(0, 4, "SBNW") != 0)
        throw FormatError("load_weights: " + path + " is not an SBNW file");
    const std::string body = file.substr(4, file.size() - 8);
    std::uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<std::uint32_t>(static_cast<unsigned char>(file[file.size() - 4 + i])) << (8 * i);
    if (crc32(body.data(), body.size()) != stored_crc)
        throw FormatError("load_weights: CRC mismatch (truncated or corrupt file)");

    std::istringstream is(body, std::ios::binary);
    const auto version = io::read_le<std::uint16_t>(is);
    if (version != kWeightsVersion)
        throw FormatError("load_weights: unsupported version " + std::to_string(version));
    const auto layer_count = io::read_le<std::uint16_t>(is);
    const auto param_total = io::read_le<std::uint32_t>(is);
    const auto num_classes = io::read_le<std::uint32_t>(is);

    ModelSpec model;
    model.num_classes = static_cast<int>(num_classes);
    ParamStore<float> params;
    params.weights.resize(layer_count);
    params.biases.resize(layer_count);

    for (std::uint16_t i = 0; i < layer_count; ++i) {
        int kc = is.get();
        if (kc == EOF) throw FormatError("load_weights: truncated at layer " + std::to_string(i));
        const auto kind = static_cast<LayerKind>(kc);
        int rank = is.get();
        if (rank == EOF) throw FormatError("load_weights: truncated at layer " + std::to_string(i));
        std::vector<std::uint32_t> dims(static_cast<std::size_t>(rank));
        for (auto& d : dims) d = io::read_le<std::uint32_t>(is);

        LayerSpec l{kind};
        switch (kind) {
            case LayerKind::dense: {
                if (rank != 2) throw FormatError("load_weights: dense layer needs rank 2");
                l.units = dims[1];
                Tensor<float> w({dims[0], dims[1]});
                for (auto& v : w.vec()) v = io::read_f32(is);
                Tensor<float> b({dims[1]});
                for (auto& v : b.vec()) v = io::read_f32(is);
                params.weights[i] = std::move(w);
                params.biases[i] = std::move(b);
                break;
            }
            case LayerKind::conv2d: {
                if (rank != 6) throw FormatError("load_weights: conv layer needs rank 6");
                l.kernel_size = dims[0];
                l.kernels = dims[3];
                l.stride = dims[4];
                l.same_padding = dims[5] != 0;
                Tensor<float> w({dims[0], dims[1], dims[2], dims[3]});
                for (auto& v : w.vec()) v = io::read_f32(is);
                Tensor<float> b({dims[3]});
                for (auto& v : b.vec()) v = io::read_f32(is);
                params.weights[i] = std::move(w);
                params.biases[i] = std::move(b);
                break;
            }
            case LayerKind::dropout:
                if (rank != 1) throw FormatError("load_weights: dropout layer needs rank 1");
                l.drop_prob = io::read_f32(is);
                break;
            case LayerKind::avgpool2x2:
            case LayerKind::maxpool2x2:
            case LayerKind::flatten:
            case LayerKind::relu:
            case LayerKind::tanh:
            case LayerKind::softmax: break;
            default: throw FormatError("load_weights: unknown layer kind " + std::to_string(kc));
        }
        model.layers.push_back(l);
    }

    infer_shapes(model);
    if (param_count(model) != param_total)
        throw FormatError("load_weights: header parameter total does not match layer contents");
    model.constrained = !model.has_kind(LayerKind::maxpool2x2) && !model.has_kind(LayerKind::tanh);
    return {std::move(model), std::move(params)};
}

} // namespace sb::nn
