// Training (Adam + categorical cross-entropy, lowest-validation-loss
// checkpointing) and evaluation metrics.
#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "spikebench/data.hpp"
#include "spikebench/net.hpp"
#include "spikebench/nn.hpp"

namespace sb::nn {

struct TrainConfig {
    std::size_t batch_size = 128;
    double learning_rate = 0.001;
    std::size_t epochs = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 0;
    // augmentation applied on the fly when set; draws come from the training seed
    std::optional<data::AugmentConfig> augment;

    void validate() const {
        if (batch_size == 0) throw ArgumentError("TrainConfig: batch_size must be positive");
        if (!(learning_rate > 0.0)) throw ArgumentError("TrainConfig: learning_rate must be positive");
    }
};

struct EpochStats {
    double train_loss = 0.0, train_accuracy = 0.0;
    double val_loss = 0.0, val_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;  // 1-based; 0 when epochs == 0
};

struct Metrics {
    double accuracy = 0.0;
    std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
    std::vector<double> precision, recall, f1;
};

namespace detail {

template <typename T>
struct Adam {
    double lr, beta1, beta2, eps;
    std::vector<Tensor<T>> m, v;
    std::uint64_t t = 0;

    Adam(const TrainConfig& cfg, const std::vector<LayerRt<T>*>& layers)
        : lr(cfg.learning_rate), beta1(cfg.beta1), beta2(cfg.beta2), eps(cfg.epsilon) {
        for (auto* l : layers) {
            m.emplace_back(l->w->shape());
            v.emplace_back(l->w->shape());
            m.emplace_back(l->b->shape());
            v.emplace_back(l->b->shape());
        }
    }

    void step(const std::vector<LayerRt<T>*>& layers) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        std::size_t slot = 0;
        for (auto* l : layers) {
            update(*l->w, l->gw, m[slot], v[slot], bc1, bc2);
            ++slot;
            update(*l->b, l->gb, m[slot], v[slot], bc1, bc2);
            ++slot;
        }
    }

    void update(Tensor<T>& p, const Tensor<T>& g, Tensor<T>& mi, Tensor<T>& vi, double bc1, double bc2) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mn = beta1 * static_cast<double>(mi[i]) + (1.0 - beta1) * gi;
            const double vn = beta2 * static_cast<double>(vi[i]) + (1.0 - beta2) * gi * gi;
            mi[i] = static_cast<T>(mn);
            vi[i] = static_cast<T>(vn);
            p[i] -= static_cast<T>(lr * (mn / bc1) / (std::sqrt(vn / bc2) + eps));
        }
    }
};

} // namespace detail

// Mean loss and accuracy without gradient work.
template <typename T>
std::pair<double, double> loss_accuracy(Net<T>& net, const data::Dataset& ds, std::size_t batch_size) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        const std::size_t end = std::min(ds.size(), start + batch_size);
        idx.clear();
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        Tensor<T> x = make_batch<T>(ds, idx);
        Tensor<T> logits = net.forward_logits(x, false, nullptr);
        std::vector<int> labels(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = ds.samples[idx[i]].label;
        Tensor<T> dz;
        loss_sum += static_cast<double>(Net<T>::softmax_xent(logits, labels, dz)) * static_cast<double>(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            if (argmax_row(logits, i) == labels[i]) ++correct;
    }
    return {loss_sum / static_cast<double>(ds.size()), static_cast<double>(correct) / static_cast<double>(ds.size())};
}

// Seed-deterministic minibatch training. Returns the checkpoint from the
// epoch with the lowest validation loss (ties keep the earlier epoch);
// epochs == 0 returns the initial parameters unchanged.
template <typename T>
TrainResult train(const ModelSpec& model, ParamStore<T>& params, const data::Dataset& train_ds,
                  const data::Dataset& val_ds, const TrainConfig& cfg) {
    cfg.validate();
    if (train_ds.num_classes != model.num_classes || val_ds.num_classes != model.num_classes)
        throw ArgumentError("train: dataset classes do not match the model");
    if (train_ds.size() == 0 || val_ds.size() == 0) throw ArgumentError("train: empty dataset");

    TrainResult result;
    if (cfg.epochs == 0) return result;

    Net<T> net(model, params);
    auto pl = net.param_layers();
    detail::Adam<T> adam(cfg, pl);
    Rng rng(derive_seed(cfg.seed, 0x7261'696e));

    ParamStore<T> best = params;
    double best_val_loss = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train_ds.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t epoch_correct = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            Tensor<T> x;
            if (cfg.augment) {
                data::Dataset tmp;
                tmp.num_classes = train_ds.num_classes;
                tmp.samples.reserve(idx.size());
                for (auto i : idx) tmp.samples.push_back(data::augment(train_ds.samples[i], *cfg.augment, rng));
                x = make_batch<T>(tmp);
            } else {
                x = make_batch<T>(train_ds, idx);
            }
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train_ds.samples[idx[i]].label;

            net.zero_grads();
            Tensor<T> logits = net.forward_logits(x, true, &rng);
            Tensor<T> dlogits;
            const T loss = Net<T>::softmax_xent(logits, labels, dlogits);
            if (!std::isfinite(static_cast<double>(loss)))
                throw Error("train: loss diverged to a non-finite value at epoch " + std::to_string(epoch));
            net.backward_from_logits(dlogits);
            adam.step(pl);

            epoch_loss += static_cast<double>(loss) * static_cast<double>(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i)
                if (argmax_row(logits, i) == labels[i]) ++epoch_correct;
        }

        EpochStats es;
        es.train_loss = epoch_loss / static_cast<double>(train_ds.size());
        es.train_accuracy = static_cast<double>(epoch_correct) / static_cast<double>(train_ds.size());
        auto [vl, va] = loss_accuracy(net, val_ds, cfg.batch_size);
        es.val_loss = vl;
        es.val_accuracy = va;
        result.history.push_back(es);

        if (vl < best_val_loss) {
            best_val_loss = vl;
            best = params;
            result.best_epoch = epoch;
        }
    }

    params = best;
    return result;
}

template <typename T>
Metrics evaluate(const ModelSpec& model, ParamStore<T>& params, const data::Dataset& ds,
                 std::size_t batch_size = 128) {
    if (ds.size() == 0) throw ArgumentError("evaluate: empty dataset");
    const auto k = static_cast<std::size_t>(model.num_classes);
    Metrics m;
    m.confusion.assign(k, std::vector<std::int64_t>(k, 0));

    Net<T> net(model, params);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        const std::size_t end = std::min(ds.size(), start + batch_size);
        idx.clear();
        for (std::size_t i = start; i < end; ++i) idx.push_back(i);
        Tensor<T> probs = net.forward(make_batch<T>(ds, idx), false, nullptr);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const int truth = ds.samples[idx[i]].label;
            const int pred = argmax_row(probs, i);
            m.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)]++;
        }
    }

    std::int64_t trace = 0;
    for (std::size_t c = 0; c < k; ++c) trace += m.confusion[c][c];
    m.accuracy = static_cast<double>(trace) / static_cast<double>(ds.size());

    m.precision.assign(k, 0.0);
    m.recall.assign(k, 0.0);
    m.f1.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
        std::int64_t tp = m.confusion[c][c], support = 0, predicted = 0;
        for (std::size_t j = 0; j < k; ++j) {
            support += m.confusion[c][j];
            predicted += m.confusion[j][c];
        }
        m.precision[c] = predicted > 0 ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
        m.recall[c] = support > 0 ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
        const double pr = m.precision[c] + m.recall[c];
        m.f1[c] = pr > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / pr : 0.0;
    }
    return m;
}

} // namespace sb::nn
