#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "guide/common.hpp"
#include "guide/kmeans.hpp"
#include "guide/matrix_io.hpp"

namespace guide {

// The map from frozen-space centroids to classifier-space cluster means.
// Four variants, ordered by expressiveness: Identity (direct concatenation),
// ClusterReplace (nearest support's target), Linear, RbfKrr.
enum class TransformVariant { Identity, ClusterReplace, Linear, RbfKrr };

inline const char* transform_variant_name(TransformVariant v) {
    switch (v) {
        case TransformVariant::Identity: return "identity";
        case TransformVariant::ClusterReplace: return "replace";
        case TransformVariant::Linear: return "linear";
        case TransformVariant::RbfKrr: return "rbf";
    }
    return "?";
}

inline TransformVariant transform_variant_from_name(const std::string& s) {
    if (s == "identity" || s == "concat") return TransformVariant::Identity;
    if (s == "replace") return TransformVariant::ClusterReplace;
    if (s == "linear") return TransformVariant::Linear;
    if (s == "rbf") return TransformVariant::RbfKrr;
    fail(ErrorCode::ConfigError, "unknown transform variant '" + s + "'");
}

struct TransformModel {
    TransformVariant variant = TransformVariant::Identity;
    int d_in = 0;
    int d_out = 0;
    Mat supports;    // RbfKrr, ClusterReplace: K x d_in
    Mat dual_coefs;  // RbfKrr: K x d_out
    Mat targets;     // ClusterReplace: K x d_out
    Mat weight;      // Linear: d_out x d_in
    Vec bias;        // Linear: d_out
    double gamma = 0.0;
    double lambda = 0.0;
};

struct PhiTargets {
    Mat means;  // K x d_phi
    std::vector<int> counts;
};

// Per-cluster arithmetic means of classifier features.
inline PhiTargets phi_cluster_means(const Mat& phi, const std::vector<int>& assignments, int k) {
    require(static_cast<Eigen::Index>(assignments.size()) == phi.rows(), ErrorCode::DimensionMismatch,
            std::to_string(assignments.size()) + " assignments for " + std::to_string(phi.rows()) + " rows");
    require(k >= 1, ErrorCode::ConfigError, "k must be >= 1");
    PhiTargets out;
    out.means = Mat::Zero(k, phi.cols());
    out.counts.assign(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
        const int a = assignments[static_cast<std::size_t>(i)];
        require(a >= 0 && a < k, ErrorCode::DimensionMismatch,
                "assignment " + std::to_string(a) + " outside [0, " + std::to_string(k) + ")");
        out.means.row(a) += phi.row(i);
        ++out.counts[static_cast<std::size_t>(a)];
    }
    for (int c = 0; c < k; ++c) {
        require(out.counts[static_cast<std::size_t>(c)] >= 1, ErrorCode::EmptyCluster,
                "cluster " + std::to_string(c) + " has no samples");
        out.means.row(c) /= out.counts[static_cast<std::size_t>(c)];
    }
    return out;
}

// Median-heuristic bandwidth: gamma = 1 / (2 * median(pairwise distances)^2),
// even-count median taken as the midpoint of the two middle order statistics.
inline double median_gamma(const Mat& supports) {
    const Eigen::Index k = supports.rows();
    require(k >= 2, ErrorCode::ConfigError, "median heuristic needs at least 2 supports");
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(k * (k - 1) / 2));
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = i + 1; j < k; ++j) dists.push_back((supports.row(i) - supports.row(j)).norm());
    std::sort(dists.begin(), dists.end());
    const std::size_t m = dists.size();
    const double median = (m % 2 == 1) ? dists[m / 2] : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
    require(median > 0, ErrorCode::DegenerateSupports, "median pairwise distance is zero");
    return 1.0 / (2.0 * median * median);
}

namespace detail {

inline Mat rbf_gram(const Mat& a, const Mat& b, double gamma) {
    Mat g(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j)
            g(i, j) = std::exp(-gamma * (a.row(i) - b.row(j)).squaredNorm());
    return g;
}

}  // namespace detail

// Kernel ridge regression in dual form: solve (G + lambda I) alpha = Y with
// an SPD factorization. On failure the ridge is nudged by
// 1e-8 * trace(G) / K once, reported on stderr; a second failure raises
// SingularKernel.
inline TransformModel fit_rbf(const Mat& supports, const Mat& targets, double gamma, double lambda) {
    require(supports.rows() == targets.rows(), ErrorCode::DimensionMismatch,
            std::to_string(supports.rows()) + " supports vs " + std::to_string(targets.rows()) + " targets");
    require(supports.rows() >= 1, ErrorCode::ConfigError, "need at least one support");
    require(gamma > 0, ErrorCode::ConfigError, "gamma must be > 0");
    require(lambda >= 0, ErrorCode::ConfigError, "lambda must be >= 0");

    const Eigen::Index k = supports.rows();
    const Mat gram = detail::rbf_gram(supports, supports, gamma);
    const double y_norm = targets.norm();

    // Factorize once, then polish with iterative refinement: the dual system
    // can be badly conditioned when supports nearly coincide, and refinement
    // pulls the residual back to the 1e-8 * ||Y|| contract.
    const auto solve_with = [&](double lam, Mat& alpha) -> bool {
        Mat sys = gram;
        sys.diagonal().array() += lam;
        const Eigen::MatrixXd sys_cm = sys;
        Eigen::LLT<Eigen::MatrixXd> llt{sys_cm};
        if (llt.info() != Eigen::Success) return false;
        alpha = llt.solve(Eigen::MatrixXd(targets));
        const double gate = 1e-8 * std::max(y_norm, 1e-300);
        for (int refine = 0; refine < 4; ++refine) {
            const Mat residual = targets - sys * alpha;
            if (residual.norm() <= 0.125 * gate) break;
            alpha += Mat(llt.solve(Eigen::MatrixXd(residual)));
        }
        return (sys * alpha - targets).norm() <= gate;
    };

    TransformModel model;
    model.variant = TransformVariant::RbfKrr;
    model.d_in = static_cast<int>(supports.cols());
    model.d_out = static_cast<int>(targets.cols());
    model.supports = supports;
    model.gamma = gamma;

    Mat alpha;
    if (solve_with(lambda, alpha)) {
        model.lambda = lambda;
    } else {
        const double bumped = lambda + 1e-8 * gram.trace() / static_cast<double>(k);
        std::cerr << "[guide] rbf solve needed a perturbed ridge: lambda " << fmt_double(lambda) << " -> "
                  << fmt_double(bumped) << "\n";
        require(solve_with(bumped, alpha), ErrorCode::SingularKernel,
                "kernel system is singular even after perturbation (lambda=" + fmt_double(lambda) + ")");
        model.lambda = bumped;
    }
    model.dual_coefs = alpha;
    return model;
}

// Least squares with intercept, fit on centered data; the weight solution is
// minimum-norm when the centered system is rank-deficient (so a single
// support yields weight 0 and bias = target).
inline TransformModel fit_linear(const Mat& supports, const Mat& targets) {
    require(supports.rows() == targets.rows(), ErrorCode::DimensionMismatch,
            std::to_string(supports.rows()) + " supports vs " + std::to_string(targets.rows()) + " targets");
    require(supports.rows() >= 1, ErrorCode::DimensionMismatch, "need at least one support");

    const Vec x_mean = supports.colwise().mean().transpose();
    const Vec y_mean = targets.colwise().mean().transpose();
    const Mat xc = supports.rowwise() - x_mean.transpose();
    const Mat yc = targets.rowwise() - y_mean.transpose();

    const Eigen::MatrixXd xc_cm = xc;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod{xc_cm};
    const Eigen::MatrixXd wt = cod.solve(Eigen::MatrixXd(yc));  // d_in x d_out, min-norm

    TransformModel model;
    model.variant = TransformVariant::Linear;
    model.d_in = static_cast<int>(supports.cols());
    model.d_out = static_cast<int>(targets.cols());
    model.weight = wt.transpose();
    model.bias = y_mean - model.weight * x_mean;
    return model;
}

inline TransformModel make_cluster_replace(const Mat& supports, const Mat& targets) {
    require(supports.rows() == targets.rows(), ErrorCode::DimensionMismatch,
            std::to_string(supports.rows()) + " supports vs " + std::to_string(targets.rows()) + " targets");
    TransformModel model;
    model.variant = TransformVariant::ClusterReplace;
    model.d_in = static_cast<int>(supports.cols());
    model.d_out = static_cast<int>(targets.cols());
    model.supports = supports;
    model.targets = targets;
    return model;
}

inline TransformModel make_identity(int dim) {
    TransformModel model;
    model.variant = TransformVariant::Identity;
    model.d_in = dim;
    model.d_out = dim;
    return model;
}

inline Vec apply(const TransformModel& model, const Eigen::Ref<const Vec>& psi) {
    require(psi.size() == model.d_in, ErrorCode::DimensionMismatch,
            "input has " + std::to_string(psi.size()) + " dims, transform expects " + std::to_string(model.d_in));
    switch (model.variant) {
        case TransformVariant::Identity:
            return psi;
        case TransformVariant::ClusterReplace: {
            auto [c, d2] = detail::nearest_centroid(model.supports, psi);
            (void)d2;
            return model.targets.row(c).transpose();
        }
        case TransformVariant::Linear:
            return model.weight * psi + model.bias;
        case TransformVariant::RbfKrr: {
            Vec out = Vec::Zero(model.d_out);
            for (Eigen::Index i = 0; i < model.supports.rows(); ++i) {
                const double kv = std::exp(-model.gamma * (model.supports.row(i).transpose() - psi).squaredNorm());
                out += kv * model.dual_coefs.row(i).transpose();
            }
            return out;
        }
    }
    fail(ErrorCode::ConfigError, "corrupt transform variant");
}

inline void save_transform(std::ostream& os, const TransformModel& model) {
    os << "GUIDE-TRANSFORM v1 variant=" << transform_variant_name(model.variant) << " d_in=" << model.d_in
       << " d_out=" << model.d_out << " gamma=" << fmt_double(model.gamma) << " lambda=" << fmt_double(model.lambda)
       << "\n";
    switch (model.variant) {
        case TransformVariant::Identity:
            break;
        case TransformVariant::ClusterReplace:
            write_matrix(os, model.supports, Dtype::f64);
            write_matrix(os, model.targets, Dtype::f64);
            break;
        case TransformVariant::Linear: {
            write_matrix(os, model.weight, Dtype::f64);
            Mat b(model.bias.size(), 1);
            b.col(0) = model.bias;
            write_matrix(os, b, Dtype::f64);
            break;
        }
        case TransformVariant::RbfKrr:
            write_matrix(os, model.supports, Dtype::f64);
            write_matrix(os, model.dual_coefs, Dtype::f64);
            break;
    }
}

inline void save_transform(const std::filesystem::path& path, const TransformModel& model) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.is_open(), ErrorCode::IoError, "cannot open for writing: " + path.string());
    save_transform(os, model);
    require(os.good(), ErrorCode::IoError, "write failed: " + path.string());
}

inline TransformModel load_transform(std::istream& is) {
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), ErrorCode::TruncatedPayload, "missing transform header");
    std::istringstream hs(line);
    std::string tag, ver;
    hs >> tag >> ver;
    require(tag == "GUIDE-TRANSFORM" && ver == "v1", ErrorCode::BadMagic, "not a transform model: '" + line + "'");
    TransformModel model;
    std::string field;
    while (hs >> field) {
        const auto eq = field.find('=');
        require(eq != std::string::npos, ErrorCode::MalformedCsv, "bad header field '" + field + "'");
        const std::string key = field.substr(0, eq), val = field.substr(eq + 1);
        if (key == "variant")
            model.variant = transform_variant_from_name(val);
        else if (key == "d_in")
            model.d_in = static_cast<int>(parse_int(val, "d_in"));
        else if (key == "d_out")
            model.d_out = static_cast<int>(parse_int(val, "d_out"));
        else if (key == "gamma")
            model.gamma = parse_double(val, "gamma");
        else if (key == "lambda")
            model.lambda = parse_double(val, "lambda");
        else
            fail(ErrorCode::MalformedCsv, "unknown transform header field '" + key + "'");
    }
    switch (model.variant) {
        case TransformVariant::Identity:
            break;
        case TransformVariant::ClusterReplace:
            model.supports = read_matrix(is);
            model.targets = read_matrix(is);
            break;
        case TransformVariant::Linear: {
            model.weight = read_matrix(is);
            const Mat b = read_matrix(is);
            require(b.cols() == 1, ErrorCode::DimensionMismatch, "bias block must be d x 1");
            model.bias = b.col(0);
            break;
        }
        case TransformVariant::RbfKrr:
            model.supports = read_matrix(is);
            model.dual_coefs = read_matrix(is);
            break;
    }
    return model;
}

inline TransformModel load_transform(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.is_open(), ErrorCode::IoError, "cannot open for reading: " + path.string());
    return load_transform(is);
}

}  // namespace guide
