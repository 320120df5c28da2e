// Runtime network: forward/backward kernels for every layer kind plus the
// fused softmax/cross-entropy training head. Batches are NHWC until flatten.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "spikebench/data.hpp"
#include "spikebench/nn.hpp"
#include "spikebench/tensor.hpp"

namespace sb::nn {

namespace detail {

template <typename T>
struct LayerRt {
    virtual ~LayerRt() = default;
    virtual Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng) = 0;
    virtual Tensor<T> backward(const Tensor<T>& dy) = 0;

    Tensor<T>* w = nullptr;  // null for parameterless layers
    Tensor<T>* b = nullptr;
    Tensor<T> gw, gb;
};

template <typename T>
struct DenseRt final : LayerRt<T> {
    Tensor<T> x_;

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        const std::size_t n = x.dim(0), in = x.dim(1), out = this->b->size();
        x_ = x;
        Tensor<T> y({n, out});
        const T* wp = this->w->data();
        for (std::size_t i = 0; i < n; ++i) {
            T* yp = &y.at(i, 0);
            for (std::size_t o = 0; o < out; ++o) yp[o] = (*this->b)[o];
            const T* xp = &x.at(i, 0);
            for (std::size_t k = 0; k < in; ++k) {
                const T xv = xp[k];
                if (xv == T(0)) continue;
                const T* wrow = wp + k * out;
                for (std::size_t o = 0; o < out; ++o) yp[o] += xv * wrow[o];
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const std::size_t n = x_.dim(0), in = x_.dim(1), out = dy.dim(1);
        Tensor<T> dx({n, in});
        const T* wp = this->w->data();
        T* gwp = this->gw.data();
        for (std::size_t i = 0; i < n; ++i) {
            const T* dyp = &dy.at(i, 0);
            const T* xp = &x_.at(i, 0);
            T* dxp = &dx.at(i, 0);
            for (std::size_t k = 0; k < in; ++k) {
                const T* wrow = wp + k * out;
                T* gwrow = gwp + k * out;
                const T xv = xp[k];
                T acc = 0;
                for (std::size_t o = 0; o < out; ++o) {
                    acc += dyp[o] * wrow[o];
                    gwrow[o] += xv * dyp[o];
                }
                dxp[k] = acc;
            }
            for (std::size_t o = 0; o < out; ++o) this->gb[o] += dyp[o];
        }
        return dx;
    }
};

template <typename T>
struct ConvRt final : LayerRt<T> {
    LayerSpec spec;
    Shape in_shape, out_shape;
    long pad_y = 0, pad_x = 0;
    Tensor<T> x_;

    void configure() {
        if (spec.same_padding) {
            const long k = static_cast<long>(spec.kernel_size), s = static_cast<long>(spec.stride);
            const long pad_h = std::max<long>(0, (static_cast<long>(out_shape.h) - 1) * s + k - static_cast<long>(in_shape.h));
            const long pad_w = std::max<long>(0, (static_cast<long>(out_shape.w) - 1) * s + k - static_cast<long>(in_shape.w));
            pad_y = pad_h / 2;
            pad_x = pad_w / 2;
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        x_ = x;
        const std::size_t n = x.dim(0);
        const std::size_t ih = in_shape.h, iw = in_shape.w, ic = in_shape.c;
        const std::size_t oh = out_shape.h, ow = out_shape.w, oc = out_shape.c;
        const std::size_t k = spec.kernel_size, s = spec.stride;
        Tensor<T> y({n, oh, ow, oc});
        const T* wp = this->w->data();
        for (std::size_t b0 = 0; b0 < n; ++b0) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    T* yp = &y.at(b0, oy, ox, 0);
                    for (std::size_t o = 0; o < oc; ++o) yp[o] = (*this->b)[o];
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const long iy = static_cast<long>(oy * s + ky) - pad_y;
                        if (iy < 0 || iy >= static_cast<long>(ih)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long ix = static_cast<long>(ox * s + kx) - pad_x;
                            if (ix < 0 || ix >= static_cast<long>(iw)) continue;
                            const T* xp = &x.at(b0, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
                            const T* wk = wp + ((ky * k + kx) * ic) * oc;
                            for (std::size_t c0 = 0; c0 < ic; ++c0) {
                                const T xv = xp[c0];
                                if (xv == T(0)) continue;
                                const T* wrow = wk + c0 * oc;
                                for (std::size_t o = 0; o < oc; ++o) yp[o] += xv * wrow[o];
                            }
                        }
                    }
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const std::size_t n = x_.dim(0);
        const std::size_t ih = in_shape.h, iw = in_shape.w, ic = in_shape.c;
        const std::size_t oh = out_shape.h, ow = out_shape.w, oc = out_shape.c;
        const std::size_t k = spec.kernel_size, s = spec.stride;
        Tensor<T> dx({n, ih, iw, ic});
        const T* wp = this->w->data();
        T* gwp = this->gw.data();
        for (std::size_t b0 = 0; b0 < n; ++b0) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const T* dyp = &dy.at(b0, oy, ox, 0);
                    for (std::size_t o = 0; o < oc; ++o) this->gb[o] += dyp[o];
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const long iy = static_cast<long>(oy * s + ky) - pad_y;
                        if (iy < 0 || iy >= static_cast<long>(ih)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long ix = static_cast<long>(ox * s + kx) - pad_x;
                            if (ix < 0 || ix >= static_cast<long>(iw)) continue;
                            const T* xp = &x_.at(b0, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
                            T* dxp = &dx.at(b0, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), 0);
                            const T* wk = wp + ((ky * k + kx) * ic) * oc;
                            T* gwk = gwp + ((ky * k + kx) * ic) * oc;
                            for (std::size_t c0 = 0; c0 < ic; ++c0) {
                                const T* wrow = wk + c0 * oc;
                                T* gwrow = gwk + c0 * oc;
                                const T xv = xp[c0];
                                T acc = 0;
                                for (std::size_t o = 0; o < oc; ++o) {
                                    acc += dyp[o] * wrow[o];
                                    gwrow[o] += xv * dyp[o];
                                }
                                dxp[c0] += acc;
                            }
                        }
                    }
                }
            }
        }
        return dx;
    }
};

template <typename T>
struct AvgPoolRt final : LayerRt<T> {
    Shape in_shape, out_shape;

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        const std::size_t n = x.dim(0), oh = out_shape.h, ow = out_shape.w, c = out_shape.c;
        Tensor<T> y({n, oh, ow, c});
        for (std::size_t b0 = 0; b0 < n; ++b0)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    T* yp = &y.at(b0, oy, ox, 0);
                    for (std::size_t c0 = 0; c0 < c; ++c0) {
                        yp[c0] = (x.at(b0, 2 * oy, 2 * ox, c0) + x.at(b0, 2 * oy, 2 * ox + 1, c0) +
                                  x.at(b0, 2 * oy + 1, 2 * ox, c0) + x.at(b0, 2 * oy + 1, 2 * ox + 1, c0)) /
                                 T(4);
                    }
                }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const std::size_t n = dy.dim(0), oh = out_shape.h, ow = out_shape.w, c = out_shape.c;
        Tensor<T> dx({n, in_shape.h, in_shape.w, c});
        for (std::size_t b0 = 0; b0 < n; ++b0)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox)
                    for (std::size_t c0 = 0; c0 < c; ++c0) {
                        const T g = dy.at(b0, oy, ox, c0) / T(4);
                        dx.at(b0, 2 * oy, 2 * ox, c0) += g;
                        dx.at(b0, 2 * oy, 2 * ox + 1, c0) += g;
                        dx.at(b0, 2 * oy + 1, 2 * ox, c0) += g;
                        dx.at(b0, 2 * oy + 1, 2 * ox + 1, c0) += g;
                    }
        return dx;
    }
};

template <typename T>
struct MaxPoolRt final : LayerRt<T> {
    Shape in_shape, out_shape;
    std::vector<std::uint8_t> argmax_;  // window slot 0..3 per output element

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        const std::size_t n = x.dim(0), oh = out_shape.h, ow = out_shape.w, c = out_shape.c;
        Tensor<T> y({n, oh, ow, c});
        argmax_.assign(y.size(), 0);
        std::size_t oi = 0;
        for (std::size_t b0 = 0; b0 < n; ++b0)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox)
                    for (std::size_t c0 = 0; c0 < c; ++c0, ++oi) {
                        T best = x.at(b0, 2 * oy, 2 * ox, c0);
                        std::uint8_t slot = 0;
                        const T cands[3] = {x.at(b0, 2 * oy, 2 * ox + 1, c0), x.at(b0, 2 * oy + 1, 2 * ox, c0),
                                            x.at(b0, 2 * oy + 1, 2 * ox + 1, c0)};
                        for (std::uint8_t s = 0; s < 3; ++s)
                            if (cands[s] > best) {
                                best = cands[s];
                                slot = static_cast<std::uint8_t>(s + 1);
                            }
                        y[oi] = best;
                        argmax_[oi] = slot;
                    }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const std::size_t n = dy.dim(0), oh = out_shape.h, ow = out_shape.w, c = out_shape.c;
        Tensor<T> dx({n, in_shape.h, in_shape.w, c});
        std::size_t oi = 0;
        for (std::size_t b0 = 0; b0 < n; ++b0)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox)
                    for (std::size_t c0 = 0; c0 < c; ++c0, ++oi) {
                        const std::uint8_t s = argmax_[oi];
                        dx.at(b0, 2 * oy + (s >> 1), 2 * ox + (s & 1), c0) += dy[oi];
                    }
        return dx;
    }
};

template <typename T>
struct FlattenRt final : LayerRt<T> {
    std::vector<std::size_t> in_dims_;

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        in_dims_ = x.shape();
        Tensor<T> y = x;
        y.reshape({x.dim(0), x.size() / x.dim(0)});
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx = dy;
        dx.reshape(in_dims_);
        return dx;
    }
};

// Inverted dropout: surviving activations are scaled by 1/(1-p) at train
// time so inference needs no rescale.
template <typename T>
struct DropoutRt final : LayerRt<T> {
    double p = 0.0;
    std::vector<std::uint8_t> mask_;

    Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng) override {
        if (!training) {
            mask_.clear();
            return x;
        }
        if (!rng) throw ArgumentError("dropout: training forward requires a random draw state");
        const T scale = static_cast<T>(1.0 / (1.0 - p));
        Tensor<T> y = x;
        mask_.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const bool keep = rng->uniform() >= p;
            mask_[i] = keep;
            y[i] = keep ? x[i] * scale : T(0);
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        if (mask_.empty()) return dy;
        const T scale = static_cast<T>(1.0 / (1.0 - p));
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = mask_[i] ? dx[i] * scale : T(0);
        return dx;
    }
};

template <typename T>
struct ReluRt final : LayerRt<T> {
    std::vector<std::uint8_t> pos_;

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        Tensor<T> y = x;
        pos_.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            pos_[i] = x[i] > T(0);
            if (!pos_[i]) y[i] = T(0);
        }
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i)
            if (!pos_[i]) dx[i] = T(0);
        return dx;
    }
};

template <typename T>
struct TanhRt final : LayerRt<T> {
    Tensor<T> y_;

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        Tensor<T> y = x;
        for (auto& v : y.vec()) v = std::tanh(v);
        y_ = y;
        return y;
    }
    Tensor<T> backward(const Tensor<T>& dy) override {
        Tensor<T> dx = dy;
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= (T(1) - y_[i] * y_[i]);
        return dx;
    }
};

template <typename T>
struct SoftmaxRt final : LayerRt<T> {
    Tensor<T> y_;

    Tensor<T> forward(const Tensor<T>& x, bool, Rng*) override {
        const std::size_t n = x.dim(0), k = x.dim(1);
        Tensor<T> y({n, k});
        for (std::size_t i = 0; i < n; ++i) {
            const T* xp = &x.at(i, 0);
            T* yp = &y.at(i, 0);
            T mx = xp[0];
            for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xp[j]);
            T sum = 0;
            for (std::size_t j = 0; j < k; ++j) {
                yp[j] = std::exp(xp[j] - mx);
                sum += yp[j];
            }
            for (std::size_t j = 0; j < k; ++j) yp[j] /= sum;
        }
        y_ = y;
        return y;
    }

    Tensor<T> backward(const Tensor<T>& dy) override {
        const std::size_t n = dy.dim(0), k = dy.dim(1);
        Tensor<T> dx({n, k});
        for (std::size_t i = 0; i < n; ++i) {
            const T* yp = &y_.at(i, 0);
            const T* dyp = &dy.at(i, 0);
            T dot = 0;
            for (std::size_t j = 0; j < k; ++j) dot += yp[j] * dyp[j];
            for (std::size_t j = 0; j < k; ++j) dx.at(i, j) = yp[j] * (dyp[j] - dot);
        }
        return dx;
    }
};

} // namespace detail

// ---------------------------------------------------------------------------
template <typename T>
class Net {
public:
    Net(const ModelSpec& spec, ParamStore<T>& params) : spec_(spec), params_(&params) {
        shapes_ = infer_shapes(spec);
        Shape cur = input_shape(spec);
        for (std::size_t i = 0; i < spec.layers.size(); ++i) {
            const auto& l = spec.layers[i];
            std::unique_ptr<detail::LayerRt<T>> rt;
            switch (l.kind) {
                case LayerKind::dense: {
                    auto d = std::make_unique<detail::DenseRt<T>>();
                    rt = std::move(d);
                    break;
                }
                case LayerKind::conv2d: {
                    auto c = std::make_unique<detail::ConvRt<T>>();
                    c->spec = l;
                    c->in_shape = cur;
                    c->out_shape = shapes_[i];
                    c->configure();
                    rt = std::move(c);
                    break;
                }
                case LayerKind::avgpool2x2: {
                    auto p = std::make_unique<detail::AvgPoolRt<T>>();
                    p->in_shape = cur;
                    p->out_shape = shapes_[i];
                    rt = std::move(p);
                    break;
                }
                case LayerKind::maxpool2x2: {
                    auto p = std::make_unique<detail::MaxPoolRt<T>>();
                    p->in_shape = cur;
                    p->out_shape = shapes_[i];
                    rt = std::move(p);
                    break;
                }
                case LayerKind::flatten: rt = std::make_unique<detail::FlattenRt<T>>(); break;
                case LayerKind::dropout: {
                    auto d = std::make_unique<detail::DropoutRt<T>>();
                    d->p = l.drop_prob;
                    rt = std::move(d);
                    break;
                }
                case LayerKind::relu: rt = std::make_unique<detail::ReluRt<T>>(); break;
                case LayerKind::tanh: rt = std::make_unique<detail::TanhRt<T>>(); break;
                case LayerKind::softmax: rt = std::make_unique<detail::SoftmaxRt<T>>(); break;
            }
            if (!params.weights[i].empty()) {
                rt->w = &params.weights[i];
                rt->b = &params.biases[i];
                rt->gw = Tensor<T>(params.weights[i].shape());
                rt->gb = Tensor<T>(params.biases[i].shape());
            }
            layers_.push_back(std::move(rt));
            cur = shapes_[i];
        }
    }

    const ModelSpec& spec() const { return spec_; }

    // full forward including the softmax head; rows are probabilities
    Tensor<T> forward(const Tensor<T>& x, bool training = false, Rng* rng = nullptr) {
        return run(x, layers_.size(), training, rng);
    }

    // forward pass invoking `observe(layer_index, output)` after every layer;
    // used for activation calibration
    template <typename Fn>
    Tensor<T> forward_observed(const Tensor<T>& x, Fn&& observe) {
        check_input(x);
        Tensor<T> cur = x;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            cur = layers_[i]->forward(cur, false, nullptr);
            observe(i, cur);
        }
        return cur;
    }

    // forward up to (excluding) the final softmax; used by the fused loss
    Tensor<T> forward_logits(const Tensor<T>& x, bool training, Rng* rng) {
        return run(x, layers_.size() - 1, training, rng);
    }

    // mean cross-entropy over the batch plus d(loss)/d(logits)
    static T softmax_xent(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>& dlogits) {
        const std::size_t n = logits.dim(0), k = logits.dim(1);
        dlogits = Tensor<T>({n, k});
        T loss = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const T* zp = &logits.at(i, 0);
            T* dp = &dlogits.at(i, 0);
            T mx = zp[0];
            for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, zp[j]);
            T sum = 0;
            for (std::size_t j = 0; j < k; ++j) sum += std::exp(zp[j] - mx);
            const T log_z = std::log(sum) + mx;
            loss += log_z - zp[static_cast<std::size_t>(labels[i])];
            const T inv_n = T(1) / static_cast<T>(n);
            for (std::size_t j = 0; j < k; ++j) dp[j] = std::exp(zp[j] - log_z) * inv_n;
            dp[static_cast<std::size_t>(labels[i])] -= inv_n;
        }
        return loss / static_cast<T>(n);
    }

    // backpropagate from d(loss)/d(logits); gradients accumulate into gw/gb
    void backward_from_logits(const Tensor<T>& dlogits) {
        Tensor<T> g = dlogits;
        for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
    }

    void zero_grads() {
        for (auto& l : layers_) {
            l->gw.fill(T(0));
            l->gb.fill(T(0));
        }
    }

    std::vector<detail::LayerRt<T>*> param_layers() {
        std::vector<detail::LayerRt<T>*> out;
        for (auto& l : layers_)
            if (l->w) out.push_back(l.get());
        return out;
    }

private:
    Tensor<T> run(const Tensor<T>& x, std::size_t upto, bool training, Rng* rng) {
        check_input(x);
        Tensor<T> cur = x;
        for (std::size_t i = 0; i < upto; ++i) {
            const std::size_t want = (i == 0 ? input_shape(spec_).numel() : shapes_[i - 1].numel());
            if (cur.size() != cur.dim(0) * want)
                throw Error("forward: shape mismatch entering layer " + std::to_string(i) + " (" +
                            kind_name(spec_.layers[i].kind) + ")");
            cur = layers_[i]->forward(cur, training, rng);
        }
        return cur;
    }

    void check_input(const Tensor<T>& x) const {
        if (x.rank() != 4 || x.dim(1) != spec_.input_h || x.dim(2) != spec_.input_w || x.dim(3) != spec_.input_c)
            throw Error("forward: input batch must be (n, " + std::to_string(spec_.input_h) + ", " +
                        std::to_string(spec_.input_w) + ", " + std::to_string(spec_.input_c) + ")");
    }

    ModelSpec spec_;
    ParamStore<T>* params_;
    std::vector<Shape> shapes_;
    std::vector<std::unique_ptr<detail::LayerRt<T>>> layers_;
};

// Batch assembly from a dataset.
template <typename T>
Tensor<T> make_batch(const data::Dataset& ds, const std::vector<std::size_t>& idx) {
    Tensor<T> x({idx.size(), data::kSide, data::kSide, 1});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& s = ds.samples[idx[i]];
        for (std::size_t p = 0; p < data::kPixels; ++p) x[i * data::kPixels + p] = static_cast<T>(s.pixels[p]);
    }
    return x;
}

template <typename T>
Tensor<T> make_batch(const data::Dataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    return make_batch<T>(ds, idx);
}

// Spec-level forward: class probabilities for a batch.
template <typename T>
Tensor<T> forward(const ModelSpec& model, ParamStore<T>& params, const Tensor<T>& batch, bool training = false,
                  Rng* rng = nullptr) {
    Net<T> net(model, params);
    return net.forward(batch, training, rng);
}

// argmax with ties resolved to the lowest class index
template <typename T>
int argmax_row(const Tensor<T>& probs, std::size_t row) {
    const std::size_t k = probs.dim(1);
    int best = 0;
    T bv = probs.at(row, 0);
    for (std::size_t j = 1; j < k; ++j)
        if (probs.at(row, j) > bv) {
            bv = probs.at(row, j);
            best = static_cast<int>(j);
        }
    return best;
}

} // namespace sb::nn
