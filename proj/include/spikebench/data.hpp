// Gesture image datasets: CSV/IDX loaders, train/validation splitting,
// augmentation, Sobel sparsification and raw-RGB preprocessing.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "spikebench/common.hpp"

namespace sb::data {

inline constexpr std::size_t kSide = 28;
inline constexpr std::size_t kPixels = kSide * kSide;

enum class Split { train, validation, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        default: return "test";
    }
}

struct ImageSample {
    std::vector<float> pixels;  // kPixels values in [0,1], row-major
    int label = 0;

    float at(std::size_t y, std::size_t x) const { return pixels[y * kSide + x]; }
    float& at(std::size_t y, std::size_t x) { return pixels[y * kSide + x]; }
};

struct Dataset {
    std::vector<ImageSample> samples;
    int num_classes = 0;
    Split split = Split::train;

    std::size_t size() const { return samples.size(); }

    std::vector<std::size_t> class_histogram() const {
        std::vector<std::size_t> h(static_cast<std::size_t>(num_classes), 0);
        for (const auto& s : samples) h[static_cast<std::size_t>(s.label)]++;
        return h;
    }
};

struct AugmentConfig {
    double max_rotation_deg = 10.0;
    double max_shift_frac = 0.10;
    double max_zoom_frac = 0.10;
    std::uint64_t seed = 0;

    void validate() const {
        if (max_shift_frac < 0.0 || max_shift_frac >= 1.0 || max_zoom_frac < 0.0 || max_zoom_frac >= 1.0)
            throw ArgumentError("AugmentConfig: fractions must be in [0,1)");
        if (max_rotation_deg < 0.0 || max_rotation_deg > 45.0)
            throw ArgumentError("AugmentConfig: rotation must be in [0,45] degrees");
    }
};

inline void check_sample(const ImageSample& s, int num_classes, const std::string& where) {
    if (s.pixels.size() != kPixels) throw FormatError(where + ": expected " + std::to_string(kPixels) + " pixels");
    if (s.label < 0 || s.label >= num_classes)
        throw FormatError(where + ": label " + std::to_string(s.label) + " out of range [0," +
                          std::to_string(num_classes) + ")");
}

// ---------------------------------------------------------------------------
// CSV loader. Kaggle sign-mnist layout: label,pixel0..pixel783 with integer
// cells in [0,255]; a header row is skipped when the first cell is not a
// number. Pixel scaling is 1/255, row order preserved.
inline Dataset load_csv(const std::string& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw Error("load_csv: cannot open " + path);

    Dataset ds;
    ds.num_classes = num_classes;
    std::string line;
    std::size_t row = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (first) {
            first = false;
            // optional header: first cell not parseable as an integer
            char c = line[0];
            if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+')) continue;
        }
        ImageSample s;
        s.pixels.resize(kPixels);
        const char* p = line.c_str();
        const char* end = p + line.size();
        for (std::size_t col = 0; col <= kPixels; ++col) {
            if (p >= end) throw ParseError("load_csv: row " + std::to_string(row) + ": expected 785 columns");
            char* next = nullptr;
            long v = std::strtol(p, &next, 10);
            if (next == p) throw ParseError("load_csv: row " + std::to_string(row) + ": bad integer in column " +
                                            std::to_string(col));
            p = next;
            if (p < end) {
                if (*p != ',') throw ParseError("load_csv: row " + std::to_string(row) + ": expected ',' after column " +
                                                std::to_string(col));
                ++p;
            }
            if (col == 0) {
                if (v < 0 || v >= num_classes)
                    throw FormatError("load_csv: row " + std::to_string(row) + ": label " + std::to_string(v) +
                                      " out of range [0," + std::to_string(num_classes) + ")");
                s.label = static_cast<int>(v);
            } else {
                if (v < 0 || v > 255)
                    throw ParseError("load_csv: row " + std::to_string(row) + ": pixel value " + std::to_string(v) +
                                     " outside [0,255]");
                s.pixels[col - 1] = static_cast<float>(v) / 255.0f;
            }
        }
        if (p != end) throw ParseError("load_csv: row " + std::to_string(row) + ": trailing data after 785 columns");
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.empty()) throw FormatError("load_csv: " + path + " holds no samples");
    return ds;
}

// ---------------------------------------------------------------------------
// IDX loader (MNIST container): big-endian magics 0x00000803 (images) and
// 0x00000801 (labels).
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw Error("load_idx: cannot open " + images_path);
    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) throw Error("load_idx: cannot open " + labels_path);

    const std::uint32_t img_magic = io::read_be<std::uint32_t>(imgs);
    if (img_magic != 0x00000803u)
        throw FormatError("load_idx: bad image magic 0x" + [&] {
            std::ostringstream os;
            os << std::hex << img_magic;
            return os.str();
        }());
    const std::uint32_t n_images = io::read_be<std::uint32_t>(imgs);
    const std::uint32_t rows = io::read_be<std::uint32_t>(imgs);
    const std::uint32_t cols = io::read_be<std::uint32_t>(imgs);
    if (rows != kSide || cols != kSide)
        throw FormatError("load_idx: expected 28x28 images, got " + std::to_string(rows) + "x" + std::to_string(cols));

    const std::uint32_t lab_magic = io::read_be<std::uint32_t>(labs);
    if (lab_magic != 0x00000801u) throw FormatError("load_idx: bad label magic");
    const std::uint32_t n_labels = io::read_be<std::uint32_t>(labs);
    if (n_images != n_labels)
        throw FormatError("load_idx: image count " + std::to_string(n_images) + " != label count " +
                          std::to_string(n_labels));
    if (n_images == 0) throw FormatError("load_idx: empty dataset");

    Dataset ds;
    ds.samples.resize(n_images);
    int max_label = 0;
    std::vector<unsigned char> buf(kPixels);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(buf.data()), kPixels))
            throw FormatError("load_idx: image file truncated at sample " + std::to_string(i));
        int lab = labs.get();
        if (lab == EOF) throw FormatError("load_idx: label file truncated at sample " + std::to_string(i));
        auto& s = ds.samples[i];
        s.pixels.resize(kPixels);
        for (std::size_t p = 0; p < kPixels; ++p) s.pixels[p] = static_cast<float>(buf[p]) / 255.0f;
        s.label = lab;
        max_label = std::max(max_label, lab);
    }
    ds.num_classes = max_label + 1;
    return ds;
}

inline void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw Error("save_idx: cannot open " + images_path);
    std::ofstream labs(labels_path, std::ios::binary);
    if (!labs) throw Error("save_idx: cannot open " + labels_path);

    io::write_be<std::uint32_t>(imgs, 0x00000803u);
    io::write_be<std::uint32_t>(imgs, static_cast<std::uint32_t>(ds.size()));
    io::write_be<std::uint32_t>(imgs, kSide);
    io::write_be<std::uint32_t>(imgs, kSide);
    io::write_be<std::uint32_t>(labs, 0x00000801u);
    io::write_be<std::uint32_t>(labs, static_cast<std::uint32_t>(ds.size()));
    for (const auto& s : ds.samples) {
        for (float v : s.pixels) {
            const double q = std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0;
            imgs.put(static_cast<char>(static_cast<unsigned char>(std::lround(q))));
        }
        labs.put(static_cast<char>(static_cast<unsigned char>(s.label)));
    }
}

inline void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("save_csv: cannot open " + path);
    for (const auto& s : ds.samples) {
        out << s.label;
        for (float v : s.pixels)
            out << ',' << std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0);
        out << '\n';
    }
}

// ---------------------------------------------------------------------------
// Seed-deterministic train/validation split. The validation size is
// round(val_fraction * n); the two parts are disjoint and cover the input.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ArgumentError("split: val_fraction must be in (0,1)");
    const std::size_t n = ds.size();
    const std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    if (n_val == 0) throw ArgumentError("split: val_fraction rounds to an empty validation set");
    if (n_val >= n) throw ArgumentError("split: val_fraction rounds to an empty training set");

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);

    Dataset train, val;
    train.num_classes = val.num_classes = ds.num_classes;
    train.split = Split::train;
    val.split = Split::validation;
    val.samples.reserve(n_val);
    train.samples.reserve(n - n_val);
    for (std::size_t i = 0; i < n; ++i) {
        (i < n_val ? val : train).samples.push_back(ds.samples[idx[i]]);
    }
    return {std::move(train), std::move(val)};
}

inline Dataset subset(const Dataset& ds, std::size_t count, std::uint64_t seed) {
    if (count == 0 || count > ds.size()) throw ArgumentError("subset: bad count");
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx);
    Dataset out;
    out.num_classes = ds.num_classes;
    out.split = ds.split;
    out.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.samples.push_back(ds.samples[idx[i]]);
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation: rotation, then shift, then zoom, each drawn uniformly from
// the configured bounds (draw order: angle, shift_x, shift_y, zoom). The
// composed affine map is inverted per output pixel and sampled bilinearly;
// out-of-frame regions read as 0.
inline ImageSample augment(const ImageSample& sample, const AugmentConfig& cfg, Rng& draw) {
    cfg.validate();
    const double angle = draw.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) * (3.14159265358979323846 / 180.0);
    const double shift_x = draw.uniform(-cfg.max_shift_frac, cfg.max_shift_frac) * static_cast<double>(kSide);
    const double shift_y = draw.uniform(-cfg.max_shift_frac, cfg.max_shift_frac) * static_cast<double>(kSide);
    const double zoom = draw.uniform(1.0 - cfg.max_zoom_frac, 1.0 + cfg.max_zoom_frac);

    const double cx = (static_cast<double>(kSide) - 1.0) / 2.0;
    const double ca = std::cos(angle), sa = std::sin(angle);

    ImageSample out;
    out.label = sample.label;
    out.pixels.assign(kPixels, 0.0f);
    for (std::size_t oy = 0; oy < kSide; ++oy) {
        for (std::size_t ox = 0; ox < kSide; ++ox) {
            // invert zoom about the centre, undo the shift, invert the rotation
            double px = (static_cast<double>(ox) - cx) / zoom + cx - shift_x;
            double py = (static_cast<double>(oy) - cx) / zoom + cx - shift_y;
            const double rx = ca * (px - cx) + sa * (py - cx) + cx;
            const double ry = -sa * (px - cx) + ca * (py - cx) + cx;

            const double fx = std::floor(rx), fy = std::floor(ry);
            const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
            const double wx = rx - fx, wy = ry - fy;
            auto pix = [&](long y, long x) -> double {
                if (x < 0 || y < 0 || x >= static_cast<long>(kSide) || y >= static_cast<long>(kSide)) return 0.0;
                return sample.pixels[static_cast<std::size_t>(y) * kSide + static_cast<std::size_t>(x)];
            };
            const double v = (1.0 - wy) * ((1.0 - wx) * pix(y0, x0) + wx * pix(y0, x0 + 1)) +
                             wy * ((1.0 - wx) * pix(y0 + 1, x0) + wx * pix(y0 + 1, x0 + 1));
            out.pixels[oy * kSide + ox] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sparsification: 3x3 Sobel gradient magnitude with zero-padded borders,
// normalized by its maximum (all-zero output when the maximum is 0), then
// binarized at `threshold`.
inline ImageSample edge_detect(const ImageSample& sample, double threshold) {
    if (threshold < 0.0 || threshold > 1.0) throw ArgumentError("edge_detect: threshold must be in [0,1]");
    auto pix = [&](long y, long x) -> double {
        if (x < 0 || y < 0 || x >= static_cast<long>(kSide) || y >= static_cast<long>(kSide)) return 0.0;
        return sample.pixels[static_cast<std::size_t>(y) * kSide + static_cast<std::size_t>(x)];
    };
    std::vector<double> mag(kPixels);
    double max_mag = 0.0;
    for (long y = 0; y < static_cast<long>(kSide); ++y) {
        for (long x = 0; x < static_cast<long>(kSide); ++x) {
            const double gx = (pix(y - 1, x + 1) + 2.0 * pix(y, x + 1) + pix(y + 1, x + 1)) -
                              (pix(y - 1, x - 1) + 2.0 * pix(y, x - 1) + pix(y + 1, x - 1));
            const double gy = (pix(y + 1, x - 1) + 2.0 * pix(y + 1, x) + pix(y + 1, x + 1)) -
                              (pix(y - 1, x - 1) + 2.0 * pix(y - 1, x) + pix(y - 1, x + 1));
            const double m = std::sqrt(gx * gx + gy * gy);
            mag[static_cast<std::size_t>(y) * kSide + static_cast<std::size_t>(x)] = m;
            max_mag = std::max(max_mag, m);
        }
    }
    ImageSample out;
    out.label = sample.label;
    out.pixels.resize(kPixels);
    for (std::size_t i = 0; i < kPixels; ++i)
        out.pixels[i] = (max_mag > 0.0 && mag[i] / max_mag >= threshold) ? 1.0f : 0.0f;
    return out;
}

inline Dataset edge_detect_all(const Dataset& ds, double threshold) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.split = ds.split;
    out.samples.reserve(ds.size());
    for (const auto& s : ds.samples) out.samples.push_back(edge_detect(s, threshold));
    return out;
}

inline double sparsity(const ImageSample& s) {
    std::size_t zeros = 0;
    for (float v : s.pixels)
        if (v == 0.0f) ++zeros;
    return static_cast<double>(zeros) / static_cast<double>(kPixels);
}

// ---------------------------------------------------------------------------
// Raw planar RGB dumps (u32 LE width, u32 LE height, then R/G/B planes of
// width*height bytes each). Used by the prepare-data subcommand so no image
// codec is required.
struct RawRgb {
    std::size_t width = 0, height = 0;
    std::vector<unsigned char> r, g, b;
};

inline RawRgb load_raw_rgb(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_raw_rgb: cannot open " + path);
    RawRgb img;
    img.width = io::read_le<std::uint32_t>(in);
    img.height = io::read_le<std::uint32_t>(in);
    if (img.width == 0 || img.height == 0) throw FormatError("load_raw_rgb: zero dimensions in " + path);
    const std::size_t plane = img.width * img.height;
    img.r.resize(plane);
    img.g.resize(plane);
    img.b.resize(plane);
    for (auto* p : {&img.r, &img.g, &img.b})
        if (!in.read(reinterpret_cast<char*>(p->data()), static_cast<std::streamsize>(plane)))
            throw FormatError("load_raw_rgb: truncated plane data in " + path);
    return img;
}

inline void save_raw_rgb(const RawRgb& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_raw_rgb: cannot open " + path);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.width));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(img.height));
    for (const auto* p : {&img.r, &img.g, &img.b})
        out.write(reinterpret_cast<const char*>(p->data()), static_cast<std::streamsize>(p->size()));
}

// Luminance (0.299/0.587/0.114) then area-average downsampling to 28x28.
inline ImageSample rgb_to_sample(const RawRgb& img, int label) {
    const std::size_t w = img.width, h = img.height;
    std::vector<double> gray(w * h);
    for (std::size_t i = 0; i < w * h; ++i)
        gray[i] = (0.299 * img.r[i] + 0.587 * img.g[i] + 0.114 * img.b[i]) / 255.0;

    ImageSample out;
    out.label = label;
    out.pixels.resize(kPixels);
    const double sy = static_cast<double>(h) / kSide;
    const double sx = static_cast<double>(w) / kSide;
    for (std::size_t oy = 0; oy < kSide; ++oy) {
        for (std::size_t ox = 0; ox < kSide; ++ox) {
            // integrate the source box [ox*sx,(ox+1)*sx) x [oy*sy,(oy+1)*sy)
            const double x0 = ox * sx, x1 = (ox + 1) * sx;
            const double y0 = oy * sy, y1 = (oy + 1) * sy;
            double acc = 0.0;
            for (std::size_t yy = static_cast<std::size_t>(y0); yy < h && yy < y1; ++yy) {
                const double fy = std::min<double>(y1, yy + 1) - std::max<double>(y0, yy);
                for (std::size_t xx = static_cast<std::size_t>(x0); xx < w && xx < x1; ++xx) {
                    const double fx = std::min<double>(x1, xx + 1) - std::max<double>(x0, xx);
                    acc += fx * fy * gray[yy * w + xx];
                }
            }
            out.pixels[oy * kSide + ox] = static_cast<float>(std::clamp(acc / (sx * sy), 0.0, 1.0));
        }
    }
    return out;
}

} // namespace sb::data
