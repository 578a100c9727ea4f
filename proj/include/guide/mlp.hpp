#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "guide/common.hpp"
#include "guide/rng.hpp"

namespace guide {

struct DenseLayer {
    Mat weight;  // out x in
    Vec bias;    // out
};

// Plain feed-forward net: ReLU on hidden layers, linear output. An identity
// mode stands in for a frozen/pass-through encoder (no parameters).
struct Mlp {
    int identity_dim = 0;
    std::vector<DenseLayer> layers;

    bool is_identity() const { return identity_dim > 0; }

    int in_dim() const {
        if (is_identity()) return identity_dim;
        return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
    }

    int out_dim() const {
        if (is_identity()) return identity_dim;
        return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
    }

    Vec forward(const Eigen::Ref<const Vec>& x) const {
        if (is_identity()) {
            require(x.size() == identity_dim, ErrorCode::WidthMismatch,
                    "identity encoder expects " + std::to_string(identity_dim) + " dims, got " +
                        std::to_string(x.size()));
            return x;
        }
        require(!layers.empty() && x.size() == in_dim(), ErrorCode::WidthMismatch,
                "net expects " + std::to_string(in_dim()) + " dims, got " + std::to_string(x.size()));
        Vec a = x;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            a = layers[l].weight * a + layers[l].bias;
            if (l + 1 < layers.size()) a = a.cwiseMax(0.0);
        }
        return a;
    }
};

struct MlpGrads {
    std::vector<DenseLayer> layers;  // same shapes as the net, zero-initialized
};

inline MlpGrads make_grads(const Mlp& net) {
    MlpGrads g;
    g.layers.reserve(net.layers.size());
    for (const auto& l : net.layers)
        g.layers.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
    return g;
}

// widths = [in, hidden..., out]. Hidden and output layers get uniform Xavier
// init; zero_last zeroes the final layer (used for classifier heads so the
// initial logits are exactly zero).
inline Mlp make_mlp(const std::vector<int>& widths, Rng& rng, bool zero_last = false) {
    require(widths.size() >= 2, ErrorCode::ConfigError, "an mlp needs at least input and output widths");
    for (int w : widths) require(w >= 1, ErrorCode::ConfigError, "layer widths must be >= 1");
    Mlp net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int fan_in = widths[l], fan_out = widths[l + 1];
        DenseLayer layer{Mat(fan_out, fan_in), Vec::Zero(fan_out)};
        const bool zero = zero_last && l + 2 == widths.size();
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
            layer.weight.data()[i] = zero ? 0.0 : rng.uniform(-bound, bound);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline Mlp make_identity_encoder(int dim) {
    require(dim >= 1, ErrorCode::ConfigError, "identity encoder needs dim >= 1");
    Mlp net;
    net.identity_dim = dim;
    return net;
}

struct MlpCache {
    std::vector<Vec> acts;  // acts[0] = input; acts[l+1] = output of layer l (post-ReLU on hidden)
};

inline Vec forward_cached(const Mlp& net, const Eigen::Ref<const Vec>& x, MlpCache& cache) {
    cache.acts.clear();
    cache.acts.push_back(x);
    if (net.is_identity()) return x;
    Vec a = x;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        a = net.layers[l].weight * a + net.layers[l].bias;
        if (l + 1 < net.layers.size()) a = a.cwiseMax(0.0);
        cache.acts.push_back(a);
    }
    return a;
}

// Accumulates parameter gradients for one sample into `grads` and returns the
// gradient with respect to the input. ReLU uses the zero subgradient at 0.
inline Vec backward(const Mlp& net, const MlpCache& cache, const Eigen::Ref<const Vec>& d_out, MlpGrads& grads) {
    if (net.is_identity()) return d_out;
    Vec delta = d_out;
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        if (l + 1 < net.layers.size()) {
            const Vec& act = cache.acts[l + 1];
            for (Eigen::Index i = 0; i < delta.size(); ++i)
                if (act[i] <= 0.0) delta[i] = 0.0;
        }
        grads.layers[l].weight += delta * cache.acts[l].transpose();
        grads.layers[l].bias += delta;
        delta = net.layers[l].weight.transpose() * delta;
    }
    return delta;
}

inline Vec softmax(const Eigen::Ref<const Vec>& logits) {
    const double m = logits.maxCoeff();
    Vec e = (logits.array() - m).exp();
    return e / e.sum();
}

// -log softmax(logits)[y], stabilized by max subtraction.
inline double cross_entropy_loss(const Eigen::Ref<const Vec>& logits, int y) {
    require(y >= 0 && y < logits.size(), ErrorCode::ConfigError,
            "label " + std::to_string(y) + " outside [0, " + std::to_string(logits.size()) + ")");
    const double m = logits.maxCoeff();
    const double lse = std::log((logits.array() - m).exp().sum());
    return lse - (logits[y] - m);
}

inline Vec cross_entropy_grad(const Eigen::Ref<const Vec>& logits, int y) {
    Vec g = softmax(logits);
    g[y] -= 1.0;
    return g;
}

// p <- p - lr * (g + weight_decay * p), elementwise.
inline void sgd_step(Mlp& net, const MlpGrads& grads, double lr, double weight_decay) {
    require(grads.layers.size() == net.layers.size(), ErrorCode::DimensionMismatch,
            "gradient structure does not match the net");
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        net.layers[l].weight -= lr * (grads.layers[l].weight + weight_decay * net.layers[l].weight);
        net.layers[l].bias -= lr * (grads.layers[l].bias + weight_decay * net.layers[l].bias);
    }
}

inline Vec concat_features(const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b) {
    Vec out(a.size() + b.size());
    if (a.size() > 0) out.head(a.size()) = a;
    if (b.size() > 0) out.tail(b.size()) = b;
    return out;
}

// Classifier forward pass: logits = head(concat(encoder(x), psi_prime)).
// Passing psi_prime to an ERM-width head (or omitting it for a GUIDE-width
// head) is a width mismatch.
inline Vec classifier_forward(const Mlp& encoder, const Mlp& head, const Eigen::Ref<const Vec>& x,
                              const Vec* psi_prime) {
    Vec feats = encoder.forward(x);
    if (psi_prime != nullptr) feats = concat_features(feats, *psi_prime);
    require(head.in_dim() == feats.size(), ErrorCode::WidthMismatch,
            "head expects " + std::to_string(head.in_dim()) + " dims, got " + std::to_string(feats.size()));
    return head.forward(feats);
}

// One forward/backward pass over a mini-batch; returns the mean loss and
// leaves mean gradients in enc_grads / head_grads.
inline double classifier_batch_grads(const Mlp& encoder, const Mlp& head, const Mat& inputs,
                                     const Mat* psi_prime_rows, const std::vector<int>& labels,
                                     const std::vector<int>& batch, MlpGrads& enc_grads, MlpGrads& head_grads) {
    require(!batch.empty(), ErrorCode::ConfigError, "empty batch");
    const double inv = 1.0 / static_cast<double>(batch.size());
    double loss = 0;
    MlpCache enc_cache, head_cache;
    for (int idx : batch) {
        const Vec x = inputs.row(idx).transpose();
        Vec feats = forward_cached(encoder, x, enc_cache);
        const int d_enc = static_cast<int>(feats.size());
        if (psi_prime_rows != nullptr) feats = concat_features(feats, psi_prime_rows->row(idx).transpose());
        require(head.in_dim() == feats.size(), ErrorCode::WidthMismatch,
                "head expects " + std::to_string(head.in_dim()) + " dims, got " + std::to_string(feats.size()));
        const Vec logits = forward_cached(head, feats, head_cache);
        const int y = labels[static_cast<std::size_t>(idx)];
        loss += inv * cross_entropy_loss(logits, y);
        const Vec d_logits = inv * cross_entropy_grad(logits, y);
        const Vec d_feats = backward(head, head_cache, d_logits, head_grads);
        if (!encoder.is_identity()) backward(encoder, enc_cache, d_feats.head(d_enc), enc_grads);
    }
    return loss;
}

}  // namespace guide
