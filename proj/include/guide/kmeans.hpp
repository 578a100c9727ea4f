#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "guide/common.hpp"
#include "guide/matrix_io.hpp"
#include "guide/rng.hpp"

namespace guide {

struct ClusterConfig {
    int k = 1;
    int max_iter = 100;
    double tol = 1e-6;  // relative inertia improvement threshold
    int n_restarts = 10;
    std::uint64_t seed = 0;

    void validate() const {
        require(k >= 1, ErrorCode::ConfigError, "k must be >= 1");
        require(max_iter >= 1, ErrorCode::ConfigError, "max_iter must be >= 1");
        require(tol > 0, ErrorCode::ConfigError, "tol must be > 0");
        require(n_restarts >= 1, ErrorCode::ConfigError, "n_restarts must be >= 1");
    }
};

struct ClusterModel {
    Mat centroids;  // k x d
    std::vector<int> assignments;
    double inertia = 0.0;
    int k = 0;
    std::uint64_t seed = 0;

    // Per-restart Lloyd inertia traces, diagnostic only (not persisted).
    std::vector<std::vector<double>> restart_traces;

    int dim() const { return static_cast<int>(centroids.cols()); }
};

// Cluster-count heuristic: candidate counts are multiplier * n_classes,
// capped to keep over-clustering in check.
inline std::vector<int> choose_k(int n_classes, const std::vector<int>& multipliers, int cap) {
    require(n_classes >= 1, ErrorCode::ConfigError, "n_classes must be >= 1");
    require(!multipliers.empty(), ErrorCode::ConfigError, "multipliers must be non-empty");
    require(cap >= 1, ErrorCode::ConfigError, "cap must be >= 1");
    std::set<int> ks;
    for (int m : multipliers) {
        require(m >= 1, ErrorCode::ConfigError, "multipliers must be >= 1");
        const long long raw = static_cast<long long>(m) * n_classes;
        ks.insert(static_cast<int>(std::min<long long>(raw, cap)));
    }
    return {ks.begin(), ks.end()};
}

namespace detail {

// Index and distance of the nearest row of `centroids`; ties go to the
// lowest index (strict < keeps the first minimum).
inline std::pair<int, double> nearest_centroid(const Mat& centroids, const Eigen::Ref<const Vec>& point) {
    int best = 0;
    double best_sq = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        const double d2 = (centroids.row(c).transpose() - point).squaredNorm();
        if (d2 < best_sq) {
            best_sq = d2;
            best = static_cast<int>(c);
        }
    }
    return {best, best_sq};
}

inline Mat kmeanspp_seed(const Mat& X, int k, Rng& rng) {
    const Eigen::Index n = X.rows();
    Mat centroids(k, X.cols());
    std::vector<char> chosen(static_cast<std::size_t>(n), 0);

    const Eigen::Index first = static_cast<Eigen::Index>(rng.bounded(static_cast<std::uint64_t>(n)));
    centroids.row(0) = X.row(first);
    chosen[static_cast<std::size_t>(first)] = 1;

    std::vector<double> dist_sq(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        dist_sq[static_cast<std::size_t>(i)] = (X.row(i) - centroids.row(0)).squaredNorm();

    for (int c = 1; c < k; ++c) {
        double total = 0;
        for (double d : dist_sq) total += d;
        Eigen::Index pick = -1;
        if (total > 0) {
            const double r = rng.uniform01() * total;
            double acc = 0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += dist_sq[static_cast<std::size_t>(i)];
                if (acc >= r) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0) pick = n - 1;
        } else {
            // All mass on already-chosen points (duplicates); take the first
            // unchosen point so k centroids always exist.
            for (Eigen::Index i = 0; i < n; ++i)
                if (!chosen[static_cast<std::size_t>(i)]) {
                    pick = i;
                    break;
                }
            if (pick < 0) pick = 0;
        }
        centroids.row(c) = X.row(pick);
        chosen[static_cast<std::size_t>(pick)] = 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double d2 = (X.row(i) - centroids.row(c)).squaredNorm();
            auto& cur = dist_sq[static_cast<std::size_t>(i)];
            if (d2 < cur) cur = d2;
        }
    }
    return centroids;
}

struct LloydResult {
    Mat centroids;
    std::vector<int> assignments;
    double inertia = 0;
    std::vector<double> trace;
};

inline LloydResult lloyd_run(const Mat& X, int k, int max_iter, double tol, Rng& rng) {
    const Eigen::Index n = X.rows();
    LloydResult res;
    res.centroids = kmeanspp_seed(X, k, rng);
    res.assignments.assign(static_cast<std::size_t>(n), 0);

    double prev_inertia = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iter; ++iter) {
        // Assign.
        double inertia = 0;
        bool changed = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto [c, d2] = nearest_centroid(res.centroids, X.row(i).transpose());
            if (res.assignments[static_cast<std::size_t>(i)] != c) {
                res.assignments[static_cast<std::size_t>(i)] = c;
                changed = true;
            }
            inertia += d2;
        }
        res.trace.push_back(inertia);
        res.inertia = inertia;

        const double improvement = prev_inertia - inertia;
        if (iter > 0 && (!changed || improvement < tol * std::max(prev_inertia, 1e-300))) break;
        prev_inertia = inertia;

        // Update.
        Mat sums = Mat::Zero(k, X.cols());
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(res.assignments[static_cast<std::size_t>(i)]) += X.row(i);
            ++counts[static_cast<std::size_t>(res.assignments[static_cast<std::size_t>(i)])];
        }
        std::vector<int> empty;
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0)
                res.centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
            else
                empty.push_back(c);
        }
        if (!empty.empty()) {
            // Reseed each empty cluster at the point currently farthest from
            // its assigned centroid, never reusing a point.
            std::vector<std::pair<double, Eigen::Index>> far;
            far.reserve(static_cast<std::size_t>(n));
            for (Eigen::Index i = 0; i < n; ++i) {
                const int a = res.assignments[static_cast<std::size_t>(i)];
                far.emplace_back((X.row(i) - res.centroids.row(a)).squaredNorm(), i);
            }
            std::sort(far.begin(), far.end(), [](const auto& l, const auto& r) {
                if (l.first != r.first) return l.first > r.first;
                return l.second < r.second;
            });
            std::size_t next = 0;
            for (int c : empty) {
                if (next < far.size()) res.centroids.row(c) = X.row(far[next++].second);
            }
            prev_inertia = std::numeric_limits<double>::infinity();
        }
    }

    // Final assignment against the final centroids so the stored assignment
    // is exactly nearest-centroid and inertia matches a recomputation.
    for (int pass = 0; pass < 16; ++pass) {
        double inertia = 0;
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (Eigen::Index i = 0; i < n; ++i) {
            auto [c, d2] = nearest_centroid(res.centroids, X.row(i).transpose());
            res.assignments[static_cast<std::size_t>(i)] = c;
            ++counts[static_cast<std::size_t>(c)];
            inertia += d2;
        }
        res.inertia = inertia;
        std::vector<int> empty;
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] == 0) empty.push_back(c);
        if (empty.empty()) break;
        std::vector<std::pair<double, Eigen::Index>> far;
        for (Eigen::Index i = 0; i < n; ++i) {
            const int a = res.assignments[static_cast<std::size_t>(i)];
            far.emplace_back((X.row(i) - res.centroids.row(a)).squaredNorm(), i);
        }
        std::sort(far.begin(), far.end(), [](const auto& l, const auto& r) {
            if (l.first != r.first) return l.first > r.first;
            return l.second < r.second;
        });
        std::size_t next = 0;
        for (int c : empty)
            if (next < far.size()) res.centroids.row(c) = X.row(far[next++].second);
    }
    return res;
}

}  // namespace detail

// k-means++ seeding, Lloyd iterations, best of n_restarts by inertia.
// Deterministic for a given seed; restart seeds derive from cfg.seed.
inline ClusterModel kmeans_fit(const Mat& X, const ClusterConfig& cfg) {
    cfg.validate();
    require(X.allFinite(), ErrorCode::NonFiniteInput, "clustering input contains NaN or infinite values");
    require(X.rows() >= cfg.k, ErrorCode::TooFewSamples,
            std::to_string(X.rows()) + " samples for k=" + std::to_string(cfg.k));

    Rng base(cfg.seed);
    ClusterModel best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < cfg.n_restarts; ++r) {
        Rng rng = base.derive(static_cast<std::uint64_t>(r));
        detail::LloydResult run = detail::lloyd_run(X, cfg.k, cfg.max_iter, cfg.tol, rng);
        best.restart_traces.push_back(run.trace);
        if (run.inertia < best.inertia) {
            best.centroids = std::move(run.centroids);
            best.assignments = std::move(run.assignments);
            best.inertia = run.inertia;
        }
    }
    best.k = cfg.k;
    best.seed = cfg.seed;
    return best;
}

inline std::pair<int, double> assign_nearest(const ClusterModel& model, const Eigen::Ref<const Vec>& psi) {
    require(psi.size() == model.centroids.cols(), ErrorCode::DimensionMismatch,
            "query has " + std::to_string(psi.size()) + " dims, centroids have " +
                std::to_string(model.centroids.cols()));
    require(psi.allFinite(), ErrorCode::NonFiniteInput, "query contains NaN or infinite values");
    auto [c, d2] = detail::nearest_centroid(model.centroids, psi);
    return {c, std::sqrt(d2)};
}

inline std::vector<int> cluster_sizes(const ClusterModel& model) {
    std::vector<int> sizes(static_cast<std::size_t>(model.k), 0);
    for (int a : model.assignments) ++sizes[static_cast<std::size_t>(a)];
    return sizes;
}

// Container format: one text header line, then centroids and assignments as
// GFT1 blocks (assignments stored as an n x 1 f64 block).
inline void save_cluster_model(std::ostream& os, const ClusterModel& model) {
    os << "GUIDE-CLUSTER v1 k=" << model.k << " dim=" << model.dim() << " seed=" << model.seed
       << " inertia=" << fmt_double(model.inertia) << "\n";
    write_matrix(os, model.centroids, Dtype::f64);
    Mat asg(static_cast<Eigen::Index>(model.assignments.size()), 1);
    for (std::size_t i = 0; i < model.assignments.size(); ++i)
        asg(static_cast<Eigen::Index>(i), 0) = static_cast<double>(model.assignments[i]);
    write_matrix(os, asg, Dtype::f64);
}

inline void save_cluster_model(const std::filesystem::path& path, const ClusterModel& model) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.is_open(), ErrorCode::IoError, "cannot open for writing: " + path.string());
    save_cluster_model(os, model);
    require(os.good(), ErrorCode::IoError, "write failed: " + path.string());
}

inline ClusterModel load_cluster_model(std::istream& is) {
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), ErrorCode::TruncatedPayload, "missing cluster header");
    std::istringstream hs(line);
    std::string tag, ver;
    hs >> tag >> ver;
    require(tag == "GUIDE-CLUSTER" && ver == "v1", ErrorCode::BadMagic, "not a cluster model: '" + line + "'");
    ClusterModel model;
    std::string field;
    double inertia = 0;
    int dim = -1;
    while (hs >> field) {
        const auto eq = field.find('=');
        require(eq != std::string::npos, ErrorCode::MalformedCsv, "bad header field '" + field + "'");
        const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
        if (key == "k")
            model.k = static_cast<int>(parse_int(val, "k"));
        else if (key == "dim")
            dim = static_cast<int>(parse_int(val, "dim"));
        else if (key == "seed")
            model.seed = static_cast<std::uint64_t>(parse_int(val, "seed"));
        else if (key == "inertia")
            inertia = parse_double(val, "inertia");
        else
            fail(ErrorCode::MalformedCsv, "unknown cluster header field '" + key + "'");
    }
    model.centroids = read_matrix(is);
    require(model.centroids.rows() == model.k, ErrorCode::DimensionMismatch, "centroid count != k");
    require(dim == static_cast<int>(model.centroids.cols()), ErrorCode::DimensionMismatch,
            "centroid dim mismatch with header");
    const Mat asg = read_matrix(is);
    require(asg.cols() == 1, ErrorCode::DimensionMismatch, "assignments block must be n x 1");
    model.assignments.reserve(static_cast<std::size_t>(asg.rows()));
    for (Eigen::Index i = 0; i < asg.rows(); ++i) {
        const double v = asg(i, 0);
        const int a = static_cast<int>(v);
        require(static_cast<double>(a) == v && a >= 0 && a < model.k, ErrorCode::DimensionMismatch,
                "assignment out of range");
        model.assignments.push_back(a);
    }
    model.inertia = inertia;
    return model;
}

inline ClusterModel load_cluster_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.is_open(), ErrorCode::IoError, "cannot open for reading: " + path.string());
    return load_cluster_model(is);
}

}  // namespace guide
