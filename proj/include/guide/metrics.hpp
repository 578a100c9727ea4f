#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "guide/common.hpp"
#include "guide/mlp.hpp"
#include "guide/rng.hpp"

namespace guide {

// Shannon entropy of the empirical label distribution, in nats.
inline double entropy(const std::vector<int>& labels) {
    require(!labels.empty(), ErrorCode::ConfigError, "entropy of an empty labeling");
    std::map<int, std::size_t> counts;
    for (int l : labels) {
        require(l >= 0, ErrorCode::ConfigError, "labels must be non-negative");
        ++counts[l];
    }
    const double n = static_cast<double>(labels.size());
    double h = 0;
    for (const auto& [label, count] : counts) {
        const double p = static_cast<double>(count) / n;
        h -= p * std::log(p);
    }
    return h < 0 ? 0.0 : h;
}

inline double mutual_information(const std::vector<int>& u, const std::vector<int>& v) {
    require(u.size() == v.size(), ErrorCode::LengthMismatch,
            std::to_string(u.size()) + " vs " + std::to_string(v.size()) + " labels");
    require(!u.empty(), ErrorCode::ConfigError, "mutual information of empty labelings");
    const double n = static_cast<double>(u.size());
    std::map<std::pair<int, int>, std::size_t> joint;
    std::map<int, std::size_t> mu, mv;
    for (std::size_t i = 0; i < u.size(); ++i) {
        require(u[i] >= 0 && v[i] >= 0, ErrorCode::ConfigError, "labels must be non-negative");
        ++joint[{u[i], v[i]}];
        ++mu[u[i]];
        ++mv[v[i]];
    }
    double info = 0;
    for (const auto& [cell, count] : joint) {
        const double p = static_cast<double>(count) / n;
        const double pu = static_cast<double>(mu[cell.first]) / n;
        const double pv = static_cast<double>(mv[cell.second]) / n;
        info += p * std::log(p / (pu * pv));
    }
    return info < 0 ? 0.0 : info;
}

// NMI(U, V) = 2 I(U, V) / (H(U) + H(V)). Two constant labelings agree
// perfectly (1.0); exactly one constant labeling shares no information (0.0).
inline double nmi(const std::vector<int>& u, const std::vector<int>& v) {
    require(u.size() == v.size(), ErrorCode::LengthMismatch,
            std::to_string(u.size()) + " vs " + std::to_string(v.size()) + " labels");
    const double hu = entropy(u);
    const double hv = entropy(v);
    if (hu == 0.0 && hv == 0.0) return 1.0;
    if (hu == 0.0 || hv == 0.0) return 0.0;
    // Summation order is canonicalized so nmi(u, v) == nmi(v, u) bit-exactly.
    const bool swap = std::lexicographical_compare(v.begin(), v.end(), u.begin(), u.end());
    const double info = swap ? mutual_information(v, u) : mutual_information(u, v);
    const double score = 2.0 * info / (hu + hv);
    if (score < 0) return 0.0;
    return score > 1.0 ? 1.0 : score;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    require(pred.size() == truth.size(), ErrorCode::LengthMismatch,
            std::to_string(pred.size()) + " vs " + std::to_string(truth.size()) + " labels");
    require(!pred.empty(), ErrorCode::ConfigError, "accuracy of empty labelings");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

struct ProbeConfig {
    int n_splits = 3;
    double train_frac = 0.8;
    int probe_hidden = 256;  // 0 selects a purely linear probe
    int steps = 600;
    int batch_size = 32;
    double learning_rate = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        require(n_splits >= 1, ErrorCode::ConfigError, "n_splits must be >= 1");
        require(train_frac > 0 && train_frac < 1, ErrorCode::ConfigError, "train_frac must be in (0, 1)");
        require(probe_hidden >= 0, ErrorCode::ConfigError, "probe_hidden must be >= 0");
        require(steps >= 1 && batch_size >= 1, ErrorCode::ConfigError, "steps and batch_size must be >= 1");
        require(learning_rate > 0, ErrorCode::ConfigError, "learning_rate must be > 0");
    }
};

// How well a small probe can predict domain labels from features: mean test
// accuracy of a one-hidden-layer MLP over seeded 80-20 splits.
inline double domain_predictability(const Mat& features, const std::vector<int>& domains, const ProbeConfig& cfg) {
    cfg.validate();
    require(!domains.empty(), ErrorCode::MissingDomainLabels, "probe needs domain labels");
    require(static_cast<Eigen::Index>(domains.size()) == features.rows(), ErrorCode::LengthMismatch,
            std::to_string(domains.size()) + " labels for " + std::to_string(features.rows()) + " rows");
    const int n = static_cast<int>(features.rows());
    require(n >= 5, ErrorCode::ConfigError, "probe needs at least 5 samples");
    int n_domains = 0;
    for (int d : domains) {
        require(d >= 0, ErrorCode::ConfigError, "domain labels must be non-negative");
        n_domains = std::max(n_domains, d + 1);
    }

    const int d_feat = static_cast<int>(features.cols());
    const int n_train = std::max(1, std::min(n - 1, static_cast<int>(std::lround(cfg.train_frac * n))));

    double total = 0;
    for (int split = 0; split < cfg.n_splits; ++split) {
        Rng rng = Rng(cfg.seed).derive(static_cast<std::uint64_t>(split) + 101);
        std::vector<int> perm = identity_permutation(n);
        rng.shuffle(perm);

        std::vector<int> widths{d_feat};
        if (cfg.probe_hidden > 0) widths.push_back(cfg.probe_hidden);
        widths.push_back(n_domains);
        Mlp probe = make_mlp(widths, rng, /*zero_last=*/true);

        MlpGrads grads = make_grads(probe);
        std::vector<int> batch(static_cast<std::size_t>(cfg.batch_size));
        int pos = 0;
        std::vector<int> train_perm(perm.begin(), perm.begin() + n_train);
        for (int step = 0; step < cfg.steps; ++step) {
            for (int b = 0; b < cfg.batch_size; ++b) {
                if (pos == n_train) {
                    rng.shuffle(train_perm);
                    pos = 0;
                }
                batch[static_cast<std::size_t>(b)] = train_perm[static_cast<std::size_t>(pos++)];
            }
            for (auto& l : grads.layers) {
                l.weight.setZero();
                l.bias.setZero();
            }
            MlpCache cache;
            const double inv = 1.0 / cfg.batch_size;
            for (int idx : batch) {
                const Vec logits = forward_cached(probe, features.row(idx).transpose(), cache);
                const Vec d_logits = inv * cross_entropy_grad(logits, domains[static_cast<std::size_t>(idx)]);
                backward(probe, cache, d_logits, grads);
            }
            sgd_step(probe, grads, cfg.learning_rate, 0.0);
        }

        int hits = 0;
        for (int i = n_train; i < n; ++i) {
            const int idx = perm[static_cast<std::size_t>(i)];
            const Vec logits = probe.forward(features.row(idx).transpose());
            int best = 0;
            for (Eigen::Index c = 1; c < logits.size(); ++c)
                if (logits[c] > logits[best]) best = static_cast<int>(c);
            if (best == domains[static_cast<std::size_t>(idx)]) ++hits;
        }
        total += static_cast<double>(hits) / static_cast<double>(n - n_train);
    }
    return total / cfg.n_splits;
}

}  // namespace guide
