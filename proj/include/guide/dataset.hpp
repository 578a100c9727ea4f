#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "guide/common.hpp"
#include "guide/matrix_io.hpp"

namespace guide {

// A dataset is raw inputs, frozen-space features psi, class labels and ids,
// plus optional domain labels. Domain labels exist for splitting and
// reporting only; anything on the training path gets a stripped view.
struct Dataset {
    Mat inputs;
    Mat psi;
    std::vector<int> class_labels;
    std::optional<std::vector<int>> domain_labels;
    std::vector<std::string> ids;
    int n_classes = 0;
    int n_domains = 0;

    int n() const { return static_cast<int>(inputs.rows()); }

    Dataset without_domain_labels() const {
        Dataset d = *this;
        d.domain_labels.reset();
        d.n_domains = 0;
        return d;
    }

    void validate() const {
        const auto rows = inputs.rows();
        require(psi.rows() == rows, ErrorCode::RowCountMismatch,
                "inputs has " + std::to_string(rows) + " rows, psi has " + std::to_string(psi.rows()));
        require(static_cast<Eigen::Index>(class_labels.size()) == rows, ErrorCode::RowCountMismatch,
                "class labels: " + std::to_string(class_labels.size()) + " for " + std::to_string(rows) + " rows");
        require(static_cast<Eigen::Index>(ids.size()) == rows, ErrorCode::RowCountMismatch,
                "ids: " + std::to_string(ids.size()) + " for " + std::to_string(rows) + " rows");
        if (domain_labels) {
            require(static_cast<Eigen::Index>(domain_labels->size()) == rows, ErrorCode::RowCountMismatch,
                    "domain labels: " + std::to_string(domain_labels->size()) + " for " + std::to_string(rows) +
                        " rows");
        }
        require(inputs.allFinite() && psi.allFinite(), ErrorCode::NonFiniteValue,
                "dataset matrices contain NaN or infinite values");
        for (int c : class_labels)
            require(c >= 0 && c < n_classes, ErrorCode::UnknownClassLabel,
                    "class " + std::to_string(c) + " outside [0, " + std::to_string(n_classes) + ")");
        if (domain_labels) {
            for (int d : *domain_labels)
                require(d >= 0 && d < n_domains, ErrorCode::ConfigError,
                        "domain " + std::to_string(d) + " outside [0, " + std::to_string(n_domains) + ")");
        }
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace detail

struct MetaRows {
    std::vector<std::string> ids;
    std::vector<int> class_labels;
    std::optional<std::vector<int>> domain_labels;
};

// Meta CSV: header `id,class,domain`; the domain column is either filled on
// every row or empty on every row. Row order is authoritative.
inline MetaRows read_meta_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(is.is_open(), ErrorCode::IoError, "cannot open meta file: " + path.string());
    std::string line;
    require(static_cast<bool>(std::getline(is, line)), ErrorCode::MalformedCsv, "meta file is empty");
    require(detail::strip_cr(line) == "id,class,domain", ErrorCode::MalformedCsv,
            "meta header must be 'id,class,domain', got '" + line + "'");

    MetaRows meta;
    std::vector<int> domains;
    bool any_domain = false, any_empty = false;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        line = detail::strip_cr(line);
        if (line.empty() && is.peek() == EOF) break;  // trailing newline
        const auto f = detail::split_csv_line(line);
        require(f.size() == 3, ErrorCode::MalformedCsv,
                "line " + std::to_string(line_no) + ": expected 3 fields, got " + std::to_string(f.size()));
        require(!f[0].empty(), ErrorCode::MalformedCsv, "line " + std::to_string(line_no) + ": empty id");
        meta.ids.push_back(f[0]);

        long long cls = -1;
        {
            auto res = std::from_chars(f[1].data(), f[1].data() + f[1].size(), cls);
            require(res.ec == std::errc() && res.ptr == f[1].data() + f[1].size() && cls >= 0,
                    ErrorCode::UnknownClassLabel,
                    "line " + std::to_string(line_no) + ": bad class label '" + f[1] + "'");
        }
        meta.class_labels.push_back(static_cast<int>(cls));

        if (f[2].empty()) {
            any_empty = true;
            domains.push_back(0);
        } else {
            any_domain = true;
            long long dom = -1;
            auto res = std::from_chars(f[2].data(), f[2].data() + f[2].size(), dom);
            require(res.ec == std::errc() && res.ptr == f[2].data() + f[2].size() && dom >= 0,
                    ErrorCode::MalformedCsv, "line " + std::to_string(line_no) + ": bad domain label '" + f[2] + "'");
            domains.push_back(static_cast<int>(dom));
        }
    }
    require(!(any_domain && any_empty), ErrorCode::MalformedCsv,
            "domain column must be empty on all rows or on none");
    if (any_domain) meta.domain_labels = std::move(domains);
    return meta;
}

inline void write_meta_csv(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::trunc);
    require(os.is_open(), ErrorCode::IoError, "cannot open meta file for writing: " + path.string());
    os << "id,class,domain\n";
    for (int i = 0; i < ds.n(); ++i) {
        os << ds.ids[static_cast<std::size_t>(i)] << ',' << ds.class_labels[static_cast<std::size_t>(i)] << ',';
        if (ds.domain_labels) os << (*ds.domain_labels)[static_cast<std::size_t>(i)];
        os << '\n';
    }
    require(os.good(), ErrorCode::IoError, "write failed: " + path.string());
}

inline Dataset load_dataset(const std::filesystem::path& inputs_path, const std::filesystem::path& psi_path,
                            const std::filesystem::path& meta_path) {
    Dataset ds;
    ds.inputs = read_matrix(inputs_path);
    ds.psi = read_matrix(psi_path);
    MetaRows meta = read_meta_csv(meta_path);

    const auto n_meta = static_cast<Eigen::Index>(meta.ids.size());
    require(ds.inputs.rows() == ds.psi.rows(), ErrorCode::RowCountMismatch,
            "inputs has " + std::to_string(ds.inputs.rows()) + " rows, psi has " + std::to_string(ds.psi.rows()));
    require(ds.inputs.rows() == n_meta, ErrorCode::RowCountMismatch,
            "matrices have " + std::to_string(ds.inputs.rows()) + " rows, meta has " + std::to_string(n_meta));

    ds.ids = std::move(meta.ids);
    ds.class_labels = std::move(meta.class_labels);
    ds.domain_labels = std::move(meta.domain_labels);
    ds.n_classes = ds.class_labels.empty() ? 0 : *std::max_element(ds.class_labels.begin(), ds.class_labels.end()) + 1;
    ds.n_domains =
        ds.domain_labels ? *std::max_element(ds.domain_labels->begin(), ds.domain_labels->end()) + 1 : 0;
    ds.validate();
    return ds;
}

inline Dataset select_rows(const Dataset& ds, const std::vector<int>& rows) {
    Dataset out;
    out.inputs.resize(static_cast<Eigen::Index>(rows.size()), ds.inputs.cols());
    out.psi.resize(static_cast<Eigen::Index>(rows.size()), ds.psi.cols());
    out.class_labels.reserve(rows.size());
    out.ids.reserve(rows.size());
    if (ds.domain_labels) out.domain_labels.emplace();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int r = rows[i];
        out.inputs.row(static_cast<Eigen::Index>(i)) = ds.inputs.row(r);
        out.psi.row(static_cast<Eigen::Index>(i)) = ds.psi.row(r);
        out.class_labels.push_back(ds.class_labels[static_cast<std::size_t>(r)]);
        out.ids.push_back(ds.ids[static_cast<std::size_t>(r)]);
        if (ds.domain_labels) out.domain_labels->push_back((*ds.domain_labels)[static_cast<std::size_t>(r)]);
    }
    out.n_classes = ds.n_classes;
    out.n_domains = ds.n_domains;
    return out;
}

// Leave-one-domain-out split. Test gets exactly the held-out domain; train
// keeps domain labels for reporting only.
inline std::pair<Dataset, Dataset> lodo_split(const Dataset& ds, int held_out) {
    require(ds.domain_labels.has_value(), ErrorCode::MissingDomainLabels, "lodo_split needs domain labels");
    require(held_out >= 0 && held_out < ds.n_domains, ErrorCode::ConfigError,
            "held-out domain " + std::to_string(held_out) + " outside [0, " + std::to_string(ds.n_domains) + ")");
    std::vector<int> train_rows, test_rows;
    for (int i = 0; i < ds.n(); ++i) {
        if ((*ds.domain_labels)[static_cast<std::size_t>(i)] == held_out)
            test_rows.push_back(i);
        else
            train_rows.push_back(i);
    }
    require(!test_rows.empty(), ErrorCode::EmptySplit,
            "held-out domain " + std::to_string(held_out) + " has no samples");
    require(!train_rows.empty(), ErrorCode::EmptySplit, "no training samples left");
    return {select_rows(ds, train_rows), select_rows(ds, test_rows)};
}

// Unit-norm rows (optional preprocessing ahead of clustering; off by default).
inline Mat l2_normalize_rows(const Mat& m) {
    Mat out = m;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double norm = out.row(i).norm();
        if (norm > 0) out.row(i) /= norm;
    }
    return out;
}

}  // namespace guide
