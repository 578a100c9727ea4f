#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "guide/common.hpp"
#include "guide/config.hpp"
#include "guide/dataset.hpp"
#include "guide/kmeans.hpp"
#include "guide/metrics.hpp"
#include "guide/synthetic.hpp"
#include "guide/train.hpp"
#include "guide/version.hpp"

namespace guide {

enum class ExpVariant { Erm, GuideRbf, GuideLinear, GuideClusterReplace, GuideDirectConcat, GuideNoClustering };

inline const char* exp_variant_name(ExpVariant v) {
    switch (v) {
        case ExpVariant::Erm: return "erm";
        case ExpVariant::GuideRbf: return "guide-rbf";
        case ExpVariant::GuideLinear: return "guide-linear";
        case ExpVariant::GuideClusterReplace: return "guide-replace";
        case ExpVariant::GuideDirectConcat: return "guide-concat";
        case ExpVariant::GuideNoClustering: return "guide-noclustering";
    }
    return "?";
}

inline ExpVariant exp_variant_from_name(const std::string& s) {
    if (s == "erm") return ExpVariant::Erm;
    if (s == "guide-rbf") return ExpVariant::GuideRbf;
    if (s == "guide-linear") return ExpVariant::GuideLinear;
    if (s == "guide-replace") return ExpVariant::GuideClusterReplace;
    if (s == "guide-concat") return ExpVariant::GuideDirectConcat;
    if (s == "guide-noclustering") return ExpVariant::GuideNoClustering;
    fail(ErrorCode::ConfigError, "unknown variant '" + s + "'");
}

inline bool variant_uses_clusters(ExpVariant v) {
    return v != ExpVariant::Erm && v != ExpVariant::GuideNoClustering;
}

struct ExperimentConfig {
    std::optional<SynthSpec> synth;
    std::optional<std::string> data_dir;
    std::vector<int> multipliers = {1, 3, 5};
    int k_cap = 200;
    TrainConfig train_template;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::vector<ExpVariant> variants = {ExpVariant::Erm, ExpVariant::GuideRbf};
    int cluster_restarts = 10;
    int jobs = 1;
    bool psi_normalize = false;
    ProbeConfig probe;

    void validate() const {
        require(synth.has_value() != data_dir.has_value(), ErrorCode::ConfigError,
                "exactly one dataset source (synthetic spec or data_dir) must be set");
        require(!seeds.empty(), ErrorCode::ConfigError, "seeds must be non-empty");
        require(!variants.empty(), ErrorCode::ConfigError, "variants must be non-empty");
        std::set<ExpVariant> uniq(variants.begin(), variants.end());
        require(uniq.size() == variants.size(), ErrorCode::ConfigError, "variants must be distinct");
        require(jobs >= 1, ErrorCode::ConfigError, "jobs must be >= 1");
        require(cluster_restarts >= 1, ErrorCode::ConfigError, "cluster_restarts must be >= 1");
    }
};

struct EvalCell {
    ExpVariant variant = ExpVariant::Erm;
    int held_out = 0;
    int k = 0;
    std::uint64_t seed = 0;
    double test_accuracy = std::numeric_limits<double>::quiet_NaN();
    double domain_nmi = std::numeric_limits<double>::quiet_NaN();
    double class_nmi = std::numeric_limits<double>::quiet_NaN();
    bool has_nmi = false;
    std::string status = "ok";

    bool ok() const { return status == "ok"; }
};

struct DomainAggregate {
    ExpVariant variant = ExpVariant::Erm;
    int held_out = 0;
    int best_k = -1;
    double mean_accuracy = std::numeric_limits<double>::quiet_NaN();
    double std_accuracy = std::numeric_limits<double>::quiet_NaN();
    int n_seeds = 0;
};

struct EvalReport {
    std::string version;
    std::map<std::string, std::string> config_echo;
    double psi_domain_predictability = std::numeric_limits<double>::quiet_NaN();
    std::vector<EvalCell> cells;
    std::vector<DomainAggregate> aggregates;
    std::vector<std::pair<std::string, double>> variant_means;  // variant order of the config
    bool partial = false;
};

namespace detail {

inline Dataset resolve_dataset(const ExperimentConfig& cfg) {
    Dataset ds;
    if (cfg.synth) {
        ds = generate_synthetic(*cfg.synth);
    } else {
        const std::filesystem::path dir(*cfg.data_dir);
        ds = load_dataset(dir / "inputs.gft", dir / "psi.gft", dir / "meta.csv");
    }
    if (cfg.psi_normalize) ds.psi = l2_normalize_rows(ds.psi);
    return ds;
}

inline std::map<std::string, std::string> echo_config(const ExperimentConfig& cfg) {
    std::map<std::string, std::string> e;
    if (cfg.data_dir) e["data_dir"] = *cfg.data_dir;
    if (cfg.synth) {
        const SynthSpec& s = *cfg.synth;
        e["synth_classes"] = std::to_string(s.n_classes);
        e["synth_domains"] = std::to_string(s.n_domains);
        e["synth_per_cell"] = std::to_string(s.samples_per_cell);
        e["synth_input_dim"] = std::to_string(s.input_dim);
        e["synth_psi_dim"] = std::to_string(s.psi_dim);
        e["synth_class_sep"] = fmt_double(s.class_sep);
        e["synth_shift"] = fmt_double(s.domain_shift_scale);
        e["synth_snr"] = fmt_double(s.psi_domain_snr);
        e["synth_leakage"] = fmt_double(s.psi_class_leakage);
        e["synth_noise"] = fmt_double(s.noise_sigma);
        e["synth_nonlinear"] = s.nonlinear_domain_map ? "1" : "0";
        e["synth_seed"] = std::to_string(s.seed);
    }
    std::string mult;
    for (std::size_t i = 0; i < cfg.multipliers.size(); ++i)
        mult += (i ? "," : "") + std::to_string(cfg.multipliers[i]);
    e["multipliers"] = mult;
    e["k_cap"] = std::to_string(cfg.k_cap);
    std::string seeds;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) seeds += (i ? "," : "") + std::to_string(cfg.seeds[i]);
    e["seeds"] = seeds;
    std::string vars;
    for (std::size_t i = 0; i < cfg.variants.size(); ++i)
        vars += (i ? std::string(",") : std::string()) + exp_variant_name(cfg.variants[i]);
    e["variants"] = vars;
    e["cluster_restarts"] = std::to_string(cfg.cluster_restarts);
    e["jobs"] = std::to_string(cfg.jobs);
    e["psi_normalize"] = cfg.psi_normalize ? "1" : "0";
    const TrainConfig& t = cfg.train_template;
    e["steps"] = std::to_string(t.steps);
    e["batch_size"] = std::to_string(t.batch_size);
    e["learning_rate"] = fmt_double(t.learning_rate);
    e["weight_decay"] = fmt_double(t.weight_decay);
    e["schedule_base"] = fmt_double(t.schedule_base);
    e["ridge_lambda"] = fmt_double(t.ridge_lambda);
    std::string hidden;
    for (std::size_t i = 0; i < t.encoder_hidden.size(); ++i)
        hidden += (i ? "," : "") + std::to_string(t.encoder_hidden[i]);
    e["encoder_hidden"] = hidden;
    e["d_phi"] = std::to_string(t.d_phi);
    e["identity_encoder"] = t.identity_encoder ? "1" : "0";
    e["head_hidden"] = std::to_string(t.head_hidden);
    e["probe_hidden"] = std::to_string(cfg.probe.probe_hidden);
    e["probe_steps"] = std::to_string(cfg.probe.steps);
    e["probe_splits"] = std::to_string(cfg.probe.n_splits);
    e["probe_lr"] = fmt_double(cfg.probe.learning_rate);
    e["probe_seed"] = std::to_string(cfg.probe.seed);
    return e;
}

inline void apply_variant(TrainConfig& tc, ExpVariant v) {
    switch (v) {
        case ExpVariant::Erm:
            tc.mode = TrainMode::Erm;
            break;
        case ExpVariant::GuideRbf:
            tc.mode = TrainMode::Guide;
            tc.variant = TransformVariant::RbfKrr;
            tc.psi_source = PsiSource::Centroid;
            break;
        case ExpVariant::GuideLinear:
            tc.mode = TrainMode::Guide;
            tc.variant = TransformVariant::Linear;
            tc.psi_source = PsiSource::Centroid;
            break;
        case ExpVariant::GuideClusterReplace:
            tc.mode = TrainMode::Guide;
            tc.variant = TransformVariant::ClusterReplace;
            tc.psi_source = PsiSource::Centroid;
            break;
        case ExpVariant::GuideDirectConcat:
            tc.mode = TrainMode::Guide;
            tc.variant = TransformVariant::Identity;
            tc.psi_source = PsiSource::Centroid;
            break;
        case ExpVariant::GuideNoClustering:
            tc.mode = TrainMode::Guide;
            tc.variant = TransformVariant::Identity;
            tc.psi_source = PsiSource::Raw;
            break;
    }
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// Full leave-one-domain-out sweep: every variant x held-out domain x cluster
// count x seed. Domain labels feed only the split and the diagnostics; the
// training path sees a stripped view. Cells run independently (slot-indexed,
// so concurrency cannot change the output); a failed cell marks the report
// partial instead of aborting the sweep.
inline EvalReport run_lodo(const ExperimentConfig& cfg) {
    cfg.validate();
    cfg.train_template.validate();
    const Dataset ds = detail::resolve_dataset(cfg);
    require(ds.domain_labels.has_value(), ErrorCode::MissingDomainLabels,
            "leave-one-domain-out evaluation needs domain labels");
    const int n_domains = ds.n_domains;
    const std::vector<int> ks = choose_k(ds.n_classes, cfg.multipliers, cfg.k_cap);

    EvalReport report;
    report.version = kVersion;
    report.config_echo = detail::echo_config(cfg);
    report.psi_domain_predictability = domain_predictability(ds.psi, *ds.domain_labels, cfg.probe);

    // Splits are shared read-only across cells.
    std::vector<std::pair<Dataset, Dataset>> splits;
    splits.reserve(static_cast<std::size_t>(n_domains));
    for (int d = 0; d < n_domains; ++d) splits.push_back(lodo_split(ds, d));

    for (ExpVariant v : cfg.variants)
        for (int d = 0; d < n_domains; ++d)
            for (int k : ks)
                for (std::uint64_t s : cfg.seeds) {
                    EvalCell cell;
                    cell.variant = v;
                    cell.held_out = d;
                    cell.k = k;
                    cell.seed = s;
                    report.cells.push_back(cell);
                }

    // K-independent variants are computed once per (domain, seed) and copied
    // across the K grid.
    std::vector<std::size_t> work;
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        const EvalCell& c = report.cells[i];
        if (variant_uses_clusters(c.variant) || c.k == ks.front()) work.push_back(i);
    }

    const auto run_cell = [&](EvalCell& cell) {
        try {
            const auto& [train_full, test_set] = splits[static_cast<std::size_t>(cell.held_out)];
            const Dataset train_view = train_full.without_domain_labels();
            Rng cell_rng(cell.seed);
            TrainConfig tc = cfg.train_template;
            detail::apply_variant(tc, cell.variant);
            tc.seed = cell_rng.derive(12).seed();

            TrainedModel model;
            if (variant_uses_clusters(cell.variant)) {
                ClusterConfig cc;
                cc.k = cell.k;
                cc.n_restarts = cfg.cluster_restarts;
                cc.seed = cell_rng.derive(11).seed();
                const ClusterModel clusters = kmeans_fit(train_view.psi, cc);
                cell.domain_nmi = nmi(clusters.assignments, *train_full.domain_labels);
                cell.class_nmi = nmi(clusters.assignments, train_full.class_labels);
                cell.has_nmi = true;
                model = train(train_view, clusters, tc);
            } else {
                model = train(train_view, tc);
            }
            model.held_out = cell.held_out;
            cell.test_accuracy = evaluate_accuracy(model, test_set);
        } catch (const Error& e) {
            cell.status = std::string("failed: ") + e.what();
        }
    };

    const int jobs = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(work.size())));
    if (jobs == 1) {
        for (std::size_t idx : work) run_cell(report.cells[idx]);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(jobs));
        for (int t = 0; t < jobs; ++t)
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t w = next.fetch_add(1);
                    if (w >= work.size()) return;
                    run_cell(report.cells[work[w]]);
                }
            });
        for (auto& t : pool) t.join();
    }

    // Replicate K-independent results across the K grid.
    std::map<std::tuple<int, int, std::uint64_t>, const EvalCell*> base;
    for (const EvalCell& c : report.cells)
        if (!variant_uses_clusters(c.variant) && c.k == ks.front())
            base[{static_cast<int>(c.variant), c.held_out, c.seed}] = &c;
    for (EvalCell& c : report.cells) {
        if (variant_uses_clusters(c.variant) || c.k == ks.front()) continue;
        const EvalCell* src = base.at({static_cast<int>(c.variant), c.held_out, c.seed});
        c.test_accuracy = src->test_accuracy;
        c.status = src->status;
    }
    for (const EvalCell& c : report.cells)
        if (!c.ok()) report.partial = true;

    // Best K per (variant, domain) by mean test accuracy over seeds, then
    // mean and sample std over seeds at that K. This mirrors a test-accuracy
    // model selection protocol; reports carry selection=test-best.
    for (ExpVariant v : cfg.variants) {
        std::vector<double> domain_means;
        for (int d = 0; d < n_domains; ++d) {
            DomainAggregate agg;
            agg.variant = v;
            agg.held_out = d;
            double best_mean = -std::numeric_limits<double>::infinity();
            for (int k : ks) {
                std::vector<double> accs;
                for (const EvalCell& c : report.cells)
                    if (c.variant == v && c.held_out == d && c.k == k && c.ok()) accs.push_back(c.test_accuracy);
                if (accs.empty()) continue;
                const double m = detail::mean_of(accs);
                if (m > best_mean) {
                    best_mean = m;
                    agg.best_k = k;
                    agg.mean_accuracy = m;
                    agg.std_accuracy = detail::sample_std(accs);
                    agg.n_seeds = static_cast<int>(accs.size());
                }
            }
            report.aggregates.push_back(agg);
            if (agg.best_k >= 0) domain_means.push_back(agg.mean_accuracy);
        }
        report.variant_means.emplace_back(exp_variant_name(v), domain_means.empty()
                                                                   ? std::numeric_limits<double>::quiet_NaN()
                                                                   : detail::mean_of(domain_means));
    }
    return report;
}

// The transformation ablation ladder: the four transform variants plus the
// ERM baseline, in the documented row order.
inline EvalReport run_ablation(const ExperimentConfig& cfg) {
    ExperimentConfig ablate = cfg;
    ablate.variants = {ExpVariant::Erm, ExpVariant::GuideDirectConcat, ExpVariant::GuideClusterReplace,
                       ExpVariant::GuideLinear, ExpVariant::GuideRbf};
    return run_lodo(ablate);
}

enum class ReportFormat { Csv, Json };

namespace detail {

inline std::string csv_safe(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

inline std::string report_csv(const EvalReport& report) {
    std::string out = "variant,held_out_domain,k,seed,test_accuracy,domain_nmi,class_nmi,status\n";
    for (const EvalCell& c : report.cells) {
        out += exp_variant_name(c.variant);
        out += ',' + std::to_string(c.held_out) + ',' + std::to_string(c.k) + ',' + std::to_string(c.seed) + ',';
        if (c.ok()) out += fmt_double(c.test_accuracy);
        out += ',';
        if (c.has_nmi) out += fmt_double(c.domain_nmi);
        out += ',';
        if (c.has_nmi) out += fmt_double(c.class_nmi);
        out += ',' + csv_safe(c.status) + '\n';
    }
    return out;
}

inline nlohmann::ordered_json report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["version"] = report.version;
    j["selection"] = "test-best";
    j["partial"] = report.partial;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.config_echo) cfg[k] = v;
    j["config"] = cfg;
    j["psi_domain_predictability"] = report.psi_domain_predictability;
    nlohmann::ordered_json cells = nlohmann::ordered_json::array();
    for (const EvalCell& c : report.cells) {
        nlohmann::ordered_json jc;
        jc["variant"] = exp_variant_name(c.variant);
        jc["held_out_domain"] = c.held_out;
        jc["k"] = c.k;
        jc["seed"] = c.seed;
        jc["test_accuracy"] = c.test_accuracy;
        if (c.has_nmi) {
            jc["domain_nmi"] = c.domain_nmi;
            jc["class_nmi"] = c.class_nmi;
        }
        jc["status"] = c.status;
        cells.push_back(jc);
    }
    j["cells"] = cells;
    nlohmann::ordered_json per_domain = nlohmann::ordered_json::array();
    for (const DomainAggregate& a : report.aggregates) {
        nlohmann::ordered_json ja;
        ja["variant"] = exp_variant_name(a.variant);
        ja["held_out_domain"] = a.held_out;
        ja["best_k"] = a.best_k;
        ja["mean_accuracy"] = a.mean_accuracy;
        ja["std_accuracy"] = a.std_accuracy;
        ja["n_seeds"] = a.n_seeds;
        per_domain.push_back(ja);
    }
    nlohmann::ordered_json means = nlohmann::ordered_json::object();
    for (const auto& [name, value] : report.variant_means) means[name] = value;
    j["aggregates"] = {{"per_domain", per_domain}, {"variant_means", means}};
    return j;
}

}  // namespace detail

inline std::string render_report(const EvalReport& report, ReportFormat format) {
    if (format == ReportFormat::Csv) return detail::report_csv(report);
    return detail::report_json(report).dump(2) + "\n";
}

inline void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.is_open(), ErrorCode::IoError, "cannot open report for writing: " + path.string());
    os << render_report(report, format);
    require(os.good(), ErrorCode::IoError, "write failed: " + path.string());
}

// Experiment configuration from flat key = value text (CLI flags override by
// re-setting keys before this parse).
inline ExperimentConfig parse_experiment_config(const KeyValueConfig& kv) {
    static const std::set<std::string> known{
        "data_dir",        "synth_profile",   "synth_classes",  "synth_domains",  "synth_per_cell",
        "synth_input_dim", "synth_psi_dim",   "synth_class_sep", "synth_shift",   "synth_snr",
        "synth_leakage",   "synth_noise",     "synth_nonlinear", "synth_seed",    "multipliers",
        "k_cap",           "seeds",           "variants",        "cluster_restarts", "jobs",
        "psi_normalize",   "steps",           "batch_size",      "learning_rate", "weight_decay",
        "schedule_base",   "ridge_lambda",    "encoder_hidden",  "d_phi",         "identity_encoder",
        "head_hidden",     "probe_hidden",    "probe_steps",     "probe_splits",  "probe_lr",
        "probe_seed"};
    kv.check_known(known);

    ExperimentConfig cfg;
    const bool has_synth = kv.has("synth_profile") || kv.has("synth_classes");
    if (kv.has("data_dir")) {
        require(!has_synth, ErrorCode::ConfigError, "choose either data_dir or a synthetic spec, not both");
        cfg.data_dir = kv.get_required("data_dir");
    } else {
        require(has_synth, ErrorCode::ConfigError, "config needs data_dir or a synthetic spec");
        SynthSpec s;
        if (kv.has("synth_profile")) {
            const std::string profile = kv.get_required("synth_profile");
            require(profile == "benchmark-v1", ErrorCode::ConfigError, "unknown synth profile '" + profile + "'");
            s = benchmark_v1();
        }
        s.n_classes = static_cast<int>(kv.get_int("synth_classes", s.n_classes));
        s.n_domains = static_cast<int>(kv.get_int("synth_domains", s.n_domains));
        s.samples_per_cell = static_cast<int>(kv.get_int("synth_per_cell", s.samples_per_cell));
        s.input_dim = static_cast<int>(kv.get_int("synth_input_dim", s.input_dim));
        s.psi_dim = static_cast<int>(kv.get_int("synth_psi_dim", s.psi_dim));
        s.class_sep = kv.get_double("synth_class_sep", s.class_sep);
        s.domain_shift_scale = kv.get_double("synth_shift", s.domain_shift_scale);
        s.psi_domain_snr = kv.get_double("synth_snr", s.psi_domain_snr);
        s.psi_class_leakage = kv.get_double("synth_leakage", s.psi_class_leakage);
        s.noise_sigma = kv.get_double("synth_noise", s.noise_sigma);
        s.nonlinear_domain_map = kv.get_bool("synth_nonlinear", s.nonlinear_domain_map);
        s.seed = static_cast<std::uint64_t>(kv.get_int("synth_seed", static_cast<long long>(s.seed)));
        cfg.synth = s;
    }

    cfg.multipliers.clear();
    for (long long m : kv.get_int_list("multipliers", {1, 3, 5})) cfg.multipliers.push_back(static_cast<int>(m));
    cfg.k_cap = static_cast<int>(kv.get_int("k_cap", 200));
    cfg.seeds.clear();
    for (long long s : kv.get_int_list("seeds", {1, 2, 3})) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    cfg.variants.clear();
    for (const std::string& v : kv.get_string_list("variants", {"erm", "guide-rbf"}))
        cfg.variants.push_back(exp_variant_from_name(v));
    cfg.cluster_restarts = static_cast<int>(kv.get_int("cluster_restarts", 10));
    cfg.jobs = static_cast<int>(kv.get_int("jobs", 1));
    cfg.psi_normalize = kv.get_bool("psi_normalize", false);

    TrainConfig& t = cfg.train_template;
    t.steps = static_cast<int>(kv.get_int("steps", t.steps));
    t.batch_size = static_cast<int>(kv.get_int("batch_size", t.batch_size));
    t.learning_rate = kv.get_double("learning_rate", t.learning_rate);
    t.weight_decay = kv.get_double("weight_decay", t.weight_decay);
    t.schedule_base = kv.get_double("schedule_base", t.schedule_base);
    t.ridge_lambda = kv.get_double("ridge_lambda", t.ridge_lambda);
    if (kv.has("encoder_hidden")) {
        t.encoder_hidden.clear();
        for (long long h : kv.get_int_list("encoder_hidden", {})) t.encoder_hidden.push_back(static_cast<int>(h));
    }
    t.d_phi = static_cast<int>(kv.get_int("d_phi", t.d_phi));
    t.identity_encoder = kv.get_bool("identity_encoder", t.identity_encoder);
    t.head_hidden = static_cast<int>(kv.get_int("head_hidden", t.head_hidden));

    cfg.probe.probe_hidden = static_cast<int>(kv.get_int("probe_hidden", cfg.probe.probe_hidden));
    cfg.probe.steps = static_cast<int>(kv.get_int("probe_steps", cfg.probe.steps));
    cfg.probe.n_splits = static_cast<int>(kv.get_int("probe_splits", cfg.probe.n_splits));
    cfg.probe.learning_rate = kv.get_double("probe_lr", cfg.probe.learning_rate);
    cfg.probe.seed = static_cast<std::uint64_t>(kv.get_int("probe_seed", 0));

    cfg.validate();
    return cfg;
}

}  // namespace guide
