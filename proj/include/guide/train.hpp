#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "guide/common.hpp"
#include "guide/dataset.hpp"
#include "guide/kmeans.hpp"
#include "guide/mlp.hpp"
#include "guide/rng.hpp"
#include "guide/transform.hpp"

namespace guide {

enum class TrainMode { Erm, Guide };

// Where the augmentation vector comes from in GUIDE mode: the centroid of the
// sample's pseudo-domain (default), or the sample's own raw psi (the
// no-clustering ablation).
enum class PsiSource { Centroid, Raw };

struct TrainConfig {
    int steps = 2000;
    int batch_size = 32;
    double learning_rate = 1e-2;  // paper-scale reference is 5e-5 with 5001 steps
    double weight_decay = 0.0;
    double schedule_base = 2.0;
    TrainMode mode = TrainMode::Guide;
    TransformVariant variant = TransformVariant::RbfKrr;
    PsiSource psi_source = PsiSource::Centroid;
    double ridge_lambda = 1e-3;
    std::vector<int> encoder_hidden = {32};
    int d_phi = 16;
    bool identity_encoder = false;
    int head_hidden = 0;
    std::uint64_t seed = 0;

    void validate() const {
        require(steps >= 1, ErrorCode::ConfigError, "steps must be >= 1");
        require(batch_size >= 1, ErrorCode::ConfigError, "batch_size must be >= 1");
        // lr = 0 is allowed: a frozen run is a useful diagnostic fixed point.
        require(learning_rate >= 0, ErrorCode::ConfigError, "learning_rate must be >= 0");
        require(weight_decay >= 0, ErrorCode::ConfigError, "weight_decay must be >= 0");
        require(schedule_base > 1, ErrorCode::ConfigError, "schedule_base must be > 1");
        require(ridge_lambda >= 0, ErrorCode::ConfigError, "ridge_lambda must be >= 0");
        require(head_hidden >= 0, ErrorCode::ConfigError, "head_hidden must be >= 0");
        require(psi_source == PsiSource::Centroid || variant == TransformVariant::Identity, ErrorCode::ConfigError,
                "raw psi source only combines with the identity transform");
        if (!identity_encoder) {
            require(d_phi >= 1, ErrorCode::ConfigError, "d_phi must be >= 1");
            for (int h : encoder_hidden) require(h >= 1, ErrorCode::ConfigError, "encoder widths must be >= 1");
        }
    }
};

// Steps at which the transform is refit: {0} plus ceil(base^j) below
// total_steps. Decreasing refit frequency as training progresses; step 0 is
// always present so the transform exists before the first forward pass.
inline std::vector<int> log_schedule(int total_steps, double base) {
    require(total_steps >= 1, ErrorCode::ConfigError, "total_steps must be >= 1");
    require(base > 1, ErrorCode::ConfigError, "base must be > 1");
    std::set<int> steps{0};
    double power = 1.0;
    for (;;) {
        const double v = std::ceil(power);
        if (v >= static_cast<double>(total_steps)) break;
        steps.insert(static_cast<int>(v));
        power *= base;
    }
    return {steps.begin(), steps.end()};
}

struct TrainHistory {
    std::vector<double> loss;     // one entry per step
    std::vector<int> refit_steps;
};

struct TrainedModel {
    Mlp encoder;
    Mlp head;
    TransformModel transform;  // meaningful in GUIDE mode
    ClusterModel clusters;     // meaningful in GUIDE mode with centroid source
    TrainConfig cfg;
    int n_classes = 0;
    int d_in = 0;
    int d_psi = 0;
    TrainHistory history;
    double train_accuracy = 0.0;
    int held_out = -1;  // recorded for reporting only
};

namespace detail {

inline Mat encode_all(const Mlp& encoder, const Mat& inputs) {
    if (encoder.is_identity()) return inputs;
    Mat out(inputs.rows(), encoder.out_dim());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i)
        out.row(i) = encoder.forward(inputs.row(i).transpose()).transpose();
    return out;
}

inline int argmax_lowest(const Eigen::Ref<const Vec>& v) {
    int best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace detail

// One schedule event: recompute per-cluster classifier-space means with the
// current encoder and refit the transform on centroid -> mean pairs. The rbf
// bandwidth comes from the median heuristic over the centroids each time.
inline TransformModel refit_transform(const Mlp& encoder, const Mat& inputs, const ClusterModel& clusters,
                                      TransformVariant variant, double ridge_lambda) {
    if (variant == TransformVariant::Identity) return make_identity(clusters.dim());
    const Mat phi = detail::encode_all(encoder, inputs);
    const PhiTargets targets = phi_cluster_means(phi, clusters.assignments, clusters.k);
    switch (variant) {
        case TransformVariant::ClusterReplace:
            return make_cluster_replace(clusters.centroids, targets.means);
        case TransformVariant::Linear:
            return fit_linear(clusters.centroids, targets.means);
        case TransformVariant::RbfKrr: {
            const double gamma = clusters.k >= 2 ? median_gamma(clusters.centroids) : 1.0;
            return fit_rbf(clusters.centroids, targets.means, gamma, ridge_lambda);
        }
        case TransformVariant::Identity:
            break;
    }
    fail(ErrorCode::ConfigError, "corrupt transform variant");
}

inline TrainedModel train(const Dataset& train_set, const ClusterModel& clusters, const TrainConfig& cfg) {
    cfg.validate();
    train_set.validate();
    const int n = train_set.n();
    require(n >= 1, ErrorCode::ConfigError, "empty training set");
    const bool guide = cfg.mode == TrainMode::Guide;
    const bool clustered = guide && cfg.psi_source == PsiSource::Centroid;
    if (clustered) {
        require(static_cast<int>(clusters.assignments.size()) == n, ErrorCode::DimensionMismatch,
                "cluster model was fit on " + std::to_string(clusters.assignments.size()) + " samples, not " +
                    std::to_string(n));
        require(clusters.dim() == train_set.psi.cols(), ErrorCode::DimensionMismatch,
                "cluster dim does not match psi dim");
    }

    TrainedModel model;
    model.cfg = cfg;
    model.n_classes = train_set.n_classes;
    model.d_in = static_cast<int>(train_set.inputs.cols());
    model.d_psi = static_cast<int>(train_set.psi.cols());
    if (clustered) model.clusters = clusters;

    Rng rng_init = Rng(cfg.seed).derive(1);
    Rng rng_batch = Rng(cfg.seed).derive(2);

    if (cfg.identity_encoder) {
        model.encoder = make_identity_encoder(model.d_in);
    } else {
        std::vector<int> widths{model.d_in};
        widths.insert(widths.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
        widths.push_back(cfg.d_phi);
        model.encoder = make_mlp(widths, rng_init);
    }
    const int d_enc = model.encoder.out_dim();
    int d_aug = 0;
    if (guide) d_aug = cfg.variant == TransformVariant::Identity ? model.d_psi : d_enc;

    std::vector<int> head_widths{d_enc + d_aug};
    if (cfg.head_hidden > 0) head_widths.push_back(cfg.head_hidden);
    head_widths.push_back(model.n_classes);
    model.head = make_mlp(head_widths, rng_init, /*zero_last=*/true);

    const std::vector<int> schedule = guide && clustered ? log_schedule(cfg.steps, cfg.schedule_base)
                                                         : std::vector<int>{};
    std::size_t next_refit = 0;

    Mat psi_prime_rows;  // n x d_aug, refreshed at each refit
    if (guide && cfg.psi_source == PsiSource::Raw) {
        model.transform = make_identity(model.d_psi);
        psi_prime_rows = train_set.psi;
    }

    std::vector<int> perm = identity_permutation(n);
    rng_batch.shuffle(perm);
    int perm_pos = 0;
    const auto next_index = [&]() {
        if (perm_pos == n) {
            rng_batch.shuffle(perm);
            perm_pos = 0;
        }
        return perm[static_cast<std::size_t>(perm_pos++)];
    };

    MlpGrads enc_grads = make_grads(model.encoder);
    MlpGrads head_grads = make_grads(model.head);
    std::vector<int> batch(static_cast<std::size_t>(cfg.batch_size));

    model.history.loss.reserve(static_cast<std::size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        if (next_refit < schedule.size() && schedule[next_refit] == step) {
            ++next_refit;
            model.transform = refit_transform(model.encoder, train_set.inputs, clusters, cfg.variant,
                                              cfg.ridge_lambda);
            model.history.refit_steps.push_back(step);
            Mat per_cluster(clusters.k, d_aug);
            for (int c = 0; c < clusters.k; ++c)
                per_cluster.row(c) = apply(model.transform, clusters.centroids.row(c).transpose()).transpose();
            psi_prime_rows.resize(n, d_aug);
            for (int i = 0; i < n; ++i)
                psi_prime_rows.row(i) = per_cluster.row(clusters.assignments[static_cast<std::size_t>(i)]);
        }

        for (int b = 0; b < cfg.batch_size; ++b) batch[static_cast<std::size_t>(b)] = next_index();
        for (auto& l : enc_grads.layers) {
            l.weight.setZero();
            l.bias.setZero();
        }
        for (auto& l : head_grads.layers) {
            l.weight.setZero();
            l.bias.setZero();
        }
        const double loss =
            classifier_batch_grads(model.encoder, model.head, train_set.inputs, guide ? &psi_prime_rows : nullptr,
                                   train_set.class_labels, batch, enc_grads, head_grads);
        require(std::isfinite(loss), ErrorCode::DivergedLoss,
                "loss became non-finite at step " + std::to_string(step));
        model.history.loss.push_back(loss);
        if (!model.encoder.is_identity()) sgd_step(model.encoder, enc_grads, cfg.learning_rate, cfg.weight_decay);
        sgd_step(model.head, head_grads, cfg.learning_rate, cfg.weight_decay);
    }

    // Final training accuracy through the inference path.
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        Vec logits;
        if (!guide) {
            logits = classifier_forward(model.encoder, model.head, train_set.inputs.row(i).transpose(), nullptr);
        } else {
            Vec psi_prime;
            if (cfg.psi_source == PsiSource::Raw) {
                psi_prime = apply(model.transform, train_set.psi.row(i).transpose());
            } else {
                const auto [c, dist] = assign_nearest(model.clusters, train_set.psi.row(i).transpose());
                (void)dist;
                psi_prime = apply(model.transform, model.clusters.centroids.row(c).transpose());
            }
            logits = classifier_forward(model.encoder, model.head, train_set.inputs.row(i).transpose(), &psi_prime);
        }
        if (detail::argmax_lowest(logits) == train_set.class_labels[static_cast<std::size_t>(i)]) ++correct;
    }
    model.train_accuracy = static_cast<double>(correct) / n;
    return model;
}

inline TrainedModel train(const Dataset& train_set, const TrainConfig& cfg) {
    require(cfg.mode == TrainMode::Erm || cfg.psi_source == PsiSource::Raw, ErrorCode::ConfigError,
            "GUIDE training with centroid source needs a cluster model");
    return train(train_set, ClusterModel{}, cfg);
}

struct Prediction {
    int label = 0;
    Vec probabilities;
    Vec logits;
};

// Inference for clustered GUIDE: nearest centroid in psi space, transform of
// that centroid, concatenated forward pass. Uses only x and psi.
inline Prediction predict(const Mlp& encoder, const Mlp& head, const TransformModel& transform,
                          const ClusterModel& clusters, const Eigen::Ref<const Vec>& x,
                          const Eigen::Ref<const Vec>& psi) {
    const auto [c, dist] = assign_nearest(clusters, psi);
    (void)dist;
    const Vec psi_prime = apply(transform, clusters.centroids.row(c).transpose());
    Prediction p;
    p.logits = classifier_forward(encoder, head, x, &psi_prime);
    p.probabilities = softmax(p.logits);
    p.label = detail::argmax_lowest(p.logits);
    return p;
}

inline Prediction predict_raw_psi(const Mlp& encoder, const Mlp& head, const TransformModel& transform,
                                  const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& psi) {
    const Vec psi_prime = apply(transform, psi);
    Prediction p;
    p.logits = classifier_forward(encoder, head, x, &psi_prime);
    p.probabilities = softmax(p.logits);
    p.label = detail::argmax_lowest(p.logits);
    return p;
}

inline Prediction predict_erm(const Mlp& encoder, const Mlp& head, const Eigen::Ref<const Vec>& x) {
    Prediction p;
    p.logits = classifier_forward(encoder, head, x, nullptr);
    p.probabilities = softmax(p.logits);
    p.label = detail::argmax_lowest(p.logits);
    return p;
}

inline Prediction predict_sample(const TrainedModel& model, const Eigen::Ref<const Vec>& x,
                                 const Eigen::Ref<const Vec>& psi) {
    if (model.cfg.mode == TrainMode::Erm) return predict_erm(model.encoder, model.head, x);
    if (model.cfg.psi_source == PsiSource::Raw)
        return predict_raw_psi(model.encoder, model.head, model.transform, x, psi);
    return predict(model.encoder, model.head, model.transform, model.clusters, x, psi);
}

inline double evaluate_accuracy(const TrainedModel& model, const Dataset& ds) {
    require(ds.n() >= 1, ErrorCode::ConfigError, "empty evaluation set");
    int correct = 0;
    for (int i = 0; i < ds.n(); ++i) {
        const Prediction p = predict_sample(model, ds.inputs.row(i).transpose(), ds.psi.row(i).transpose());
        if (p.label == ds.class_labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / ds.n();
}

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

inline std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    if (s.empty()) return out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ','))
        out.push_back(static_cast<int>(parse_int(tok, "integer list")));
    return out;
}

inline void write_vec_block(std::ostream& os, const Vec& v) {
    Mat m(v.size(), 1);
    m.col(0) = v;
    write_matrix(os, m, Dtype::f64);
}

inline Vec read_vec_block(std::istream& is) {
    const Mat m = read_matrix(is);
    require(m.cols() == 1, ErrorCode::DimensionMismatch, "expected a column block");
    return m.col(0);
}

}  // namespace detail

// Trained bundle container: a `key = value` text manifest terminated by a
// `%%` line, then one GFT1 block per parameter tensor, then the embedded
// cluster and transform models for clustered GUIDE bundles.
inline void save_bundle(const std::filesystem::path& path, const TrainedModel& model) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.is_open(), ErrorCode::IoError, "cannot open for writing: " + path.string());
    const TrainConfig& cfg = model.cfg;
    os << "GUIDE-BUNDLE v1\n";
    os << "mode = " << (cfg.mode == TrainMode::Erm ? "erm" : "guide") << "\n";
    os << "variant = " << transform_variant_name(cfg.variant) << "\n";
    os << "psi_source = " << (cfg.psi_source == PsiSource::Raw ? "raw" : "centroid") << "\n";
    os << "steps = " << cfg.steps << "\n";
    os << "batch_size = " << cfg.batch_size << "\n";
    os << "learning_rate = " << fmt_double(cfg.learning_rate) << "\n";
    os << "weight_decay = " << fmt_double(cfg.weight_decay) << "\n";
    os << "schedule_base = " << fmt_double(cfg.schedule_base) << "\n";
    os << "ridge_lambda = " << fmt_double(cfg.ridge_lambda) << "\n";
    os << "encoder_hidden = " << detail::join_ints(cfg.encoder_hidden) << "\n";
    os << "d_phi = " << cfg.d_phi << "\n";
    os << "identity_encoder = " << (cfg.identity_encoder ? 1 : 0) << "\n";
    os << "head_hidden = " << cfg.head_hidden << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "n_classes = " << model.n_classes << "\n";
    os << "d_in = " << model.d_in << "\n";
    os << "d_psi = " << model.d_psi << "\n";
    os << "refit_steps = " << detail::join_ints(model.history.refit_steps) << "\n";
    os << "train_accuracy = " << fmt_double(model.train_accuracy) << "\n";
    os << "held_out = " << model.held_out << "\n";
    os << "enc_layers = " << model.encoder.layers.size() << "\n";
    os << "head_layers = " << model.head.layers.size() << "\n";
    os << "%%\n";
    for (const auto& l : model.encoder.layers) {
        write_matrix(os, l.weight, Dtype::f64);
        detail::write_vec_block(os, l.bias);
    }
    for (const auto& l : model.head.layers) {
        write_matrix(os, l.weight, Dtype::f64);
        detail::write_vec_block(os, l.bias);
    }
    if (cfg.mode == TrainMode::Guide) {
        if (cfg.psi_source == PsiSource::Centroid) save_cluster_model(os, model.clusters);
        save_transform(os, model.transform);
    }
    require(os.good(), ErrorCode::IoError, "write failed: " + path.string());
}

inline TrainedModel load_bundle(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.is_open(), ErrorCode::IoError, "cannot open for reading: " + path.string());
    std::string line;
    require(static_cast<bool>(std::getline(is, line)) && line == "GUIDE-BUNDLE v1", ErrorCode::BadMagic,
            "not a bundle file: " + path.string());
    std::map<std::string, std::string> kv;
    while (std::getline(is, line) && line != "%%") {
        const auto eq = line.find(" = ");
        require(eq != std::string::npos, ErrorCode::MalformedCsv, "bad manifest line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    require(line == "%%", ErrorCode::TruncatedPayload, "manifest not terminated");
    const auto get = [&](const std::string& key) -> const std::string& {
        const auto it = kv.find(key);
        require(it != kv.end(), ErrorCode::MalformedCsv, "manifest missing key '" + key + "'");
        return it->second;
    };

    TrainedModel model;
    TrainConfig& cfg = model.cfg;
    cfg.mode = get("mode") == "erm" ? TrainMode::Erm : TrainMode::Guide;
    cfg.variant = transform_variant_from_name(get("variant"));
    cfg.psi_source = get("psi_source") == "raw" ? PsiSource::Raw : PsiSource::Centroid;
    cfg.steps = static_cast<int>(parse_int(get("steps"), "steps"));
    cfg.batch_size = static_cast<int>(parse_int(get("batch_size"), "batch_size"));
    cfg.learning_rate = parse_double(get("learning_rate"), "learning_rate");
    cfg.weight_decay = parse_double(get("weight_decay"), "weight_decay");
    cfg.schedule_base = parse_double(get("schedule_base"), "schedule_base");
    cfg.ridge_lambda = parse_double(get("ridge_lambda"), "ridge_lambda");
    cfg.encoder_hidden = detail::split_ints(get("encoder_hidden"));
    cfg.d_phi = static_cast<int>(parse_int(get("d_phi"), "d_phi"));
    cfg.identity_encoder = parse_int(get("identity_encoder"), "identity_encoder") != 0;
    cfg.head_hidden = static_cast<int>(parse_int(get("head_hidden"), "head_hidden"));
    cfg.seed = static_cast<std::uint64_t>(parse_int(get("seed"), "seed"));
    model.n_classes = static_cast<int>(parse_int(get("n_classes"), "n_classes"));
    model.d_in = static_cast<int>(parse_int(get("d_in"), "d_in"));
    model.d_psi = static_cast<int>(parse_int(get("d_psi"), "d_psi"));
    model.history.refit_steps = detail::split_ints(get("refit_steps"));
    model.train_accuracy = parse_double(get("train_accuracy"), "train_accuracy");
    model.held_out = static_cast<int>(parse_int(get("held_out"), "held_out"));
    const int enc_layers = static_cast<int>(parse_int(get("enc_layers"), "enc_layers"));
    const int head_layers = static_cast<int>(parse_int(get("head_layers"), "head_layers"));

    if (cfg.identity_encoder && enc_layers == 0) model.encoder = make_identity_encoder(model.d_in);
    for (int l = 0; l < enc_layers; ++l) {
        DenseLayer layer;
        layer.weight = read_matrix(is);
        layer.bias = detail::read_vec_block(is);
        model.encoder.layers.push_back(std::move(layer));
    }
    for (int l = 0; l < head_layers; ++l) {
        DenseLayer layer;
        layer.weight = read_matrix(is);
        layer.bias = detail::read_vec_block(is);
        model.head.layers.push_back(std::move(layer));
    }
    if (cfg.mode == TrainMode::Guide) {
        if (cfg.psi_source == PsiSource::Centroid) model.clusters = load_cluster_model(is);
        model.transform = load_transform(is);
    }
    return model;
}

}  // namespace guide
