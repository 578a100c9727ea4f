// Command-line surface for the pseudo-domain guided-classifier pipeline:
// dataset synthesis, clustering, training, evaluation, LODO sweeps, the
// transform ablation, and the NMI / domain-predictability probes.
//
// Exit codes: 0 success, 2 usage or config error, 3 I/O error, 4 numerical
// failure. Human-readable output goes to stdout, diagnostics to stderr;
// --json switches stdout to machine-readable output only.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "guide/guide.hpp"

namespace fs = std::filesystem;
using guide::ErrorCode;
using guide::KeyValueConfig;

namespace {

void print_config_digest(const std::map<std::string, std::string>& resolved) {
    std::string line = "config:";
    for (const auto& [k, v] : resolved) line += " " + k + "=" + v;
    std::cerr << line << "\n";
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

std::vector<int> read_label_column(const fs::path& path) {
    std::ifstream is(path);
    guide::require(is.is_open(), ErrorCode::IoError, "cannot open label file: " + path.string());
    std::vector<int> labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        labels.push_back(static_cast<int>(guide::parse_int(line, "label at line " + std::to_string(line_no))));
        guide::require(labels.back() >= 0, ErrorCode::ConfigError,
                       "label at line " + std::to_string(line_no) + " must be non-negative");
    }
    guide::require(!labels.empty(), ErrorCode::ConfigError, "label file is empty: " + path.string());
    return labels;
}

guide::SynthSpec parse_synth_spec(const KeyValueConfig& kv) {
    static const std::set<std::string> known{"profile",   "classes",   "domains", "per_cell", "input_dim",
                                             "psi_dim",   "class_sep", "shift",   "snr",      "leakage",
                                             "noise",     "nonlinear", "seed"};
    kv.check_known(known);
    guide::SynthSpec s;
    if (kv.has("profile")) {
        const std::string profile = kv.get_required("profile");
        guide::require(profile == "benchmark-v1", ErrorCode::ConfigError, "unknown profile '" + profile + "'");
        s = guide::benchmark_v1();
    }
    s.n_classes = static_cast<int>(kv.get_int("classes", s.n_classes));
    s.n_domains = static_cast<int>(kv.get_int("domains", s.n_domains));
    s.samples_per_cell = static_cast<int>(kv.get_int("per_cell", s.samples_per_cell));
    s.input_dim = static_cast<int>(kv.get_int("input_dim", s.input_dim));
    s.psi_dim = static_cast<int>(kv.get_int("psi_dim", s.psi_dim));
    s.class_sep = kv.get_double("class_sep", s.class_sep);
    s.domain_shift_scale = kv.get_double("shift", s.domain_shift_scale);
    s.psi_domain_snr = kv.get_double("snr", s.psi_domain_snr);
    s.psi_class_leakage = kv.get_double("leakage", s.psi_class_leakage);
    s.noise_sigma = kv.get_double("noise", s.noise_sigma);
    s.nonlinear_domain_map = kv.get_bool("nonlinear", s.nonlinear_domain_map);
    s.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(s.seed)));
    s.validate();
    return s;
}

std::map<std::string, std::string> echo_synth(const guide::SynthSpec& s) {
    return {
        {"classes", std::to_string(s.n_classes)},
        {"domains", std::to_string(s.n_domains)},
        {"per_cell", std::to_string(s.samples_per_cell)},
        {"input_dim", std::to_string(s.input_dim)},
        {"psi_dim", std::to_string(s.psi_dim)},
        {"class_sep", guide::fmt_double(s.class_sep)},
        {"shift", guide::fmt_double(s.domain_shift_scale)},
        {"snr", guide::fmt_double(s.psi_domain_snr)},
        {"leakage", guide::fmt_double(s.psi_class_leakage)},
        {"noise", guide::fmt_double(s.noise_sigma)},
        {"nonlinear", s.nonlinear_domain_map ? "1" : "0"},
        {"seed", std::to_string(s.seed)},
    };
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    const guide::SynthSpec spec = parse_synth_spec(KeyValueConfig::from_file(spec_path));
    auto digest = echo_synth(spec);
    digest["command"] = "synth";
    digest["out_dir"] = out_dir;
    print_config_digest(digest);

    const guide::Dataset ds = guide::generate_synthetic(spec);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    guide::require(!ec, ErrorCode::IoError, "cannot create output directory: " + out_dir);
    guide::write_matrix(fs::path(out_dir) / "inputs.gft", ds.inputs, guide::Dtype::f64);
    guide::write_matrix(fs::path(out_dir) / "psi.gft", ds.psi, guide::Dtype::f64);
    guide::write_meta_csv(fs::path(out_dir) / "meta.csv", ds);
    std::cout << "wrote " << ds.n() << " samples (" << ds.n_classes << " classes, " << ds.n_domains
              << " domains) to " << out_dir << "\n";
    return 0;
}

int cmd_cluster(const std::string& psi_path, int k, std::uint64_t seed, const std::string& out_path, int restarts,
                int max_iter, double tol) {
    print_config_digest({{"command", "cluster"},
                         {"psi", psi_path},
                         {"k", std::to_string(k)},
                         {"seed", std::to_string(seed)},
                         {"restarts", std::to_string(restarts)},
                         {"max_iter", std::to_string(max_iter)},
                         {"tol", guide::fmt_double(tol)},
                         {"out", out_path}});
    const guide::Mat psi = guide::read_matrix(psi_path);
    guide::ClusterConfig cfg;
    cfg.k = k;
    cfg.seed = seed;
    cfg.n_restarts = restarts;
    cfg.max_iter = max_iter;
    cfg.tol = tol;
    const guide::ClusterModel model = guide::kmeans_fit(psi, cfg);
    guide::save_cluster_model(out_path, model);
    std::cout << "inertia: " << guide::fmt_double(model.inertia) << "\n";
    std::cout << "sizes:";
    for (int s : guide::cluster_sizes(model)) std::cout << " " << s;
    std::cout << "\n";
    return 0;
}

guide::TrainConfig parse_train_config(const KeyValueConfig& kv) {
    static const std::set<std::string> known{"steps",         "batch_size",       "learning_rate",
                                             "weight_decay",  "schedule_base",    "ridge_lambda",
                                             "encoder_hidden", "d_phi",           "identity_encoder",
                                             "head_hidden",   "seed",             "holdout"};
    kv.check_known(known);
    guide::TrainConfig tc;
    tc.steps = static_cast<int>(kv.get_int("steps", tc.steps));
    tc.batch_size = static_cast<int>(kv.get_int("batch_size", tc.batch_size));
    tc.learning_rate = kv.get_double("learning_rate", tc.learning_rate);
    tc.weight_decay = kv.get_double("weight_decay", tc.weight_decay);
    tc.schedule_base = kv.get_double("schedule_base", tc.schedule_base);
    tc.ridge_lambda = kv.get_double("ridge_lambda", tc.ridge_lambda);
    if (kv.has("encoder_hidden")) {
        tc.encoder_hidden.clear();
        for (long long h : kv.get_int_list("encoder_hidden", {}))
            tc.encoder_hidden.push_back(static_cast<int>(h));
    }
    tc.d_phi = static_cast<int>(kv.get_int("d_phi", tc.d_phi));
    tc.identity_encoder = kv.get_bool("identity_encoder", tc.identity_encoder);
    tc.head_hidden = static_cast<int>(kv.get_int("head_hidden", tc.head_hidden));
    return tc;
}

int cmd_train(const std::string& data_dir, const std::string& clusters_path, const std::string& mode,
              const std::string& variant, const std::string& config_path, const std::string& out_path,
              std::optional<std::uint64_t> seed_flag, std::string history_path, int holdout_flag) {
    KeyValueConfig kv;
    if (!config_path.empty()) kv = KeyValueConfig::from_file(config_path);
    guide::TrainConfig tc = parse_train_config(kv);

    if (seed_flag) {
        tc.seed = *seed_flag;
    } else {
        guide::require(kv.has("seed"), ErrorCode::ConfigError,
                       "training needs an explicit seed (--seed or a 'seed' config key)");
        tc.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
    }
    const int holdout = holdout_flag >= 0 ? holdout_flag : static_cast<int>(kv.get_int("holdout", -1));

    tc.mode = mode == "erm" ? guide::TrainMode::Erm : guide::TrainMode::Guide;
    tc.variant = guide::transform_variant_from_name(variant);
    if (history_path.empty()) history_path = out_path + ".history.csv";

    std::map<std::string, std::string> digest{{"command", "train"},
                                              {"data_dir", data_dir},
                                              {"mode", mode},
                                              {"variant", variant},
                                              {"steps", std::to_string(tc.steps)},
                                              {"batch_size", std::to_string(tc.batch_size)},
                                              {"learning_rate", guide::fmt_double(tc.learning_rate)},
                                              {"weight_decay", guide::fmt_double(tc.weight_decay)},
                                              {"schedule_base", guide::fmt_double(tc.schedule_base)},
                                              {"ridge_lambda", guide::fmt_double(tc.ridge_lambda)},
                                              {"d_phi", std::to_string(tc.d_phi)},
                                              {"identity_encoder", tc.identity_encoder ? "1" : "0"},
                                              {"head_hidden", std::to_string(tc.head_hidden)},
                                              {"seed", std::to_string(tc.seed)},
                                              {"holdout", std::to_string(holdout)},
                                              {"out", out_path}};
    std::string hidden;
    for (std::size_t i = 0; i < tc.encoder_hidden.size(); ++i)
        hidden += (i ? "," : "") + std::to_string(tc.encoder_hidden[i]);
    digest["encoder_hidden"] = hidden;
    if (!clusters_path.empty()) digest["clusters"] = clusters_path;
    print_config_digest(digest);

    const fs::path dir(data_dir);
    guide::Dataset full = guide::load_dataset(dir / "inputs.gft", dir / "psi.gft", dir / "meta.csv");
    guide::Dataset train_view = full;
    if (holdout >= 0) {
        auto [train_part, test_part] = guide::lodo_split(full, holdout);
        train_view = std::move(train_part);
    }
    train_view = train_view.without_domain_labels();

    guide::TrainedModel model;
    if (tc.mode == guide::TrainMode::Erm) {
        if (!clusters_path.empty()) std::cerr << "warning: --clusters is ignored in erm mode\n";
        model = guide::train(train_view, tc);
    } else {
        guide::require(!clusters_path.empty(), ErrorCode::ConfigError, "guide mode needs --clusters");
        const guide::ClusterModel clusters = guide::load_cluster_model(clusters_path);
        model = guide::train(train_view, clusters, tc);
    }
    model.held_out = holdout;
    guide::save_bundle(out_path, model);

    std::ofstream hist(history_path, std::ios::trunc);
    guide::require(hist.is_open(), ErrorCode::IoError, "cannot open history file: " + history_path);
    hist << "step,loss,refit\n";
    std::set<int> refits(model.history.refit_steps.begin(), model.history.refit_steps.end());
    for (std::size_t i = 0; i < model.history.loss.size(); ++i)
        hist << i << "," << guide::fmt_double(model.history.loss[i]) << ","
             << (refits.count(static_cast<int>(i)) ? 1 : 0) << "\n";
    guide::require(hist.good(), ErrorCode::IoError, "write failed: " + history_path);

    std::cout << "train accuracy: " << fmt6(model.train_accuracy) << "\n";
    std::cout << "bundle: " << out_path << "\n";
    return 0;
}

int cmd_eval(const std::string& bundle_path, const std::string& data_dir, const std::string& split, bool json) {
    print_config_digest({{"command", "eval"}, {"bundle", bundle_path}, {"data_dir", data_dir}, {"split", split}});
    const guide::TrainedModel model = guide::load_bundle(bundle_path);
    const fs::path dir(data_dir);
    const guide::Dataset full = guide::load_dataset(dir / "inputs.gft", dir / "psi.gft", dir / "meta.csv");

    guide::Dataset subset = full;
    if (split == "test") {
        guide::require(model.held_out >= 0, ErrorCode::ConfigError,
                       "bundle records no held-out domain; --split test is undefined");
        auto [train_part, test_part] = guide::lodo_split(full, model.held_out);
        subset = std::move(test_part);
    } else if (model.held_out >= 0) {
        auto [train_part, test_part] = guide::lodo_split(full, model.held_out);
        subset = std::move(train_part);
    }

    std::vector<int> pred, truth;
    for (int i = 0; i < subset.n(); ++i) {
        pred.push_back(
            guide::predict_sample(model, subset.inputs.row(i).transpose(), subset.psi.row(i).transpose()).label);
        truth.push_back(subset.class_labels[static_cast<std::size_t>(i)]);
    }
    const double acc = guide::accuracy(pred, truth);

    std::vector<int> per_class_n(static_cast<std::size_t>(model.n_classes), 0);
    std::vector<int> per_class_hit(static_cast<std::size_t>(model.n_classes), 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ++per_class_n[static_cast<std::size_t>(truth[i])];
        if (pred[i] == truth[i]) ++per_class_hit[static_cast<std::size_t>(truth[i])];
    }

    if (json) {
        nlohmann::ordered_json j;
        j["accuracy"] = acc;
        j["n"] = subset.n();
        j["split"] = split;
        nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
        for (int c = 0; c < model.n_classes; ++c) {
            const int total = per_class_n[static_cast<std::size_t>(c)];
            nlohmann::ordered_json jc;
            jc["class"] = c;
            jc["n"] = total;
            jc["accuracy"] =
                total > 0 ? static_cast<double>(per_class_hit[static_cast<std::size_t>(c)]) / total : 0.0;
            per_class.push_back(jc);
        }
        j["per_class"] = per_class;
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "accuracy: " << fmt6(acc) << " (" << subset.n() << " samples)\n";
        for (int c = 0; c < model.n_classes; ++c) {
            const int total = per_class_n[static_cast<std::size_t>(c)];
            std::cout << "class " << c << ": " << per_class_hit[static_cast<std::size_t>(c)] << "/" << total;
            if (total > 0)
                std::cout << " (" << fmt6(static_cast<double>(per_class_hit[static_cast<std::size_t>(c)]) / total)
                          << ")";
            std::cout << "\n";
        }
    }
    return 0;
}

int run_sweep(bool ablation, const std::string& config_path, const std::string& out_path,
              const std::string& format, int jobs_flag) {
    const KeyValueConfig kv = KeyValueConfig::from_file(config_path);
    guide::require(kv.has("seeds"), ErrorCode::ConfigError,
                   "sweep configs must list explicit seeds (no silent nondeterminism)");
    guide::ExperimentConfig cfg = guide::parse_experiment_config(kv);
    if (jobs_flag > 0) cfg.jobs = jobs_flag;

    auto digest = guide::detail::echo_config(cfg);
    digest["command"] = ablation ? "ablate" : "lodo";
    digest["format"] = format;
    digest["out_report"] = out_path;
    print_config_digest(digest);

    const guide::EvalReport report = ablation ? guide::run_ablation(cfg) : guide::run_lodo(cfg);
    const guide::ReportFormat fmt = format == "csv" ? guide::ReportFormat::Csv : guide::ReportFormat::Json;
    guide::emit_report(report, out_path, fmt);

    for (const auto& [name, value] : report.variant_means)
        std::cout << name << ": " << (std::isnan(value) ? "n/a" : fmt6(value)) << "\n";
    if (report.partial) std::cerr << "warning: some cells failed; report is partial\n";
    std::cout << "report: " << out_path << "\n";
    return 0;
}

int cmd_nmi(const std::string& a_path, const std::string& b_path) {
    print_config_digest({{"command", "nmi"}, {"labels_a", a_path}, {"labels_b", b_path}});
    const std::vector<int> a = read_label_column(a_path);
    const std::vector<int> b = read_label_column(b_path);
    guide::require(a.size() == b.size(), ErrorCode::LengthMismatch,
                   std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " labels");
    std::cout << fmt6(guide::nmi(a, b)) << "\n";
    return 0;
}

int cmd_probe(const std::string& features_path, const std::string& meta_path, std::uint64_t seed, int hidden,
              int steps, int splits) {
    print_config_digest({{"command", "probe"},
                         {"features", features_path},
                         {"meta", meta_path},
                         {"seed", std::to_string(seed)},
                         {"hidden", std::to_string(hidden)},
                         {"steps", std::to_string(steps)},
                         {"splits", std::to_string(splits)}});
    const guide::Mat features = guide::read_matrix(features_path);
    const guide::MetaRows meta = guide::read_meta_csv(meta_path);
    guide::require(meta.domain_labels.has_value(), ErrorCode::MissingDomainLabels,
                   "meta file has no domain labels");
    guide::require(static_cast<Eigen::Index>(meta.ids.size()) == features.rows(), ErrorCode::LengthMismatch,
                   std::to_string(meta.ids.size()) + " meta rows for " + std::to_string(features.rows()) +
                       " feature rows");
    guide::ProbeConfig cfg;
    cfg.seed = seed;
    cfg.probe_hidden = hidden;
    cfg.steps = steps;
    cfg.n_splits = splits;
    std::cout << fmt6(guide::domain_predictability(features, *meta.domain_labels, cfg)) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pseudo-domain guided domain-generalization pipeline"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_spec, synth_out;
    synth->add_option("--spec", synth_spec, "spec file (key = value)")->required();
    synth->add_option("--out-dir", synth_out, "output directory")->required();

    auto* cluster = app.add_subcommand("cluster", "fit k-means pseudo-domains on a psi matrix");
    std::string cl_psi, cl_out;
    int cl_k = 0, cl_restarts = 10, cl_max_iter = 100;
    double cl_tol = 1e-6;
    std::uint64_t cl_seed = 0;
    cluster->add_option("--psi", cl_psi, "psi matrix (GFT1)")->required();
    cluster->add_option("--k", cl_k, "number of clusters")->required();
    cluster->add_option("--seed", cl_seed, "clustering seed")->required();
    cluster->add_option("--out", cl_out, "output model path")->required();
    cluster->add_option("--restarts", cl_restarts, "number of restarts");
    cluster->add_option("--max-iter", cl_max_iter, "Lloyd iteration cap");
    cluster->add_option("--tol", cl_tol, "relative inertia improvement threshold");

    auto* train = app.add_subcommand("train", "train a classifier bundle");
    std::string tr_data, tr_clusters, tr_mode = "guide", tr_variant = "rbf", tr_config, tr_out, tr_history;
    std::optional<std::uint64_t> tr_seed;
    int tr_holdout = -1;
    train->add_option("--data-dir", tr_data, "dataset directory")->required();
    train->add_option("--clusters", tr_clusters, "cluster model file");
    train->add_option("--mode", tr_mode, "erm|guide")->check(CLI::IsMember({"erm", "guide"}));
    train->add_option("--variant", tr_variant, "rbf|linear|replace|concat")
        ->check(CLI::IsMember({"rbf", "linear", "replace", "concat"}));
    train->add_option("--config", tr_config, "training config file");
    train->add_option("--out", tr_out, "output bundle path")->required();
    train->add_option("--seed", tr_seed, "training seed (overrides config)");
    train->add_option("--history", tr_history, "history CSV path (default <out>.history.csv)");
    train->add_option("--holdout", tr_holdout, "held-out domain index (trains on the rest)");

    auto* eval = app.add_subcommand("eval", "evaluate a bundle on a dataset");
    std::string ev_bundle, ev_data, ev_split = "test";
    bool ev_json = false;
    eval->add_option("--bundle", ev_bundle, "bundle path")->required();
    eval->add_option("--data-dir", ev_data, "dataset directory")->required();
    eval->add_option("--split", ev_split, "test|train")->check(CLI::IsMember({"test", "train"}));
    eval->add_flag("--json", ev_json, "machine-readable stdout");

    auto* lodo = app.add_subcommand("lodo", "leave-one-domain-out sweep");
    auto* ablate = app.add_subcommand("ablate", "transform-variant ablation ladder");
    std::string lo_config, lo_out, lo_format = "json";
    std::string ab_config, ab_out, ab_format = "json";
    int lo_jobs = 0, ab_jobs = 0;
    lodo->add_option("--config", lo_config, "experiment config file")->required();
    lodo->add_option("--out-report", lo_out, "report output path")->required();
    lodo->add_option("--format", lo_format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
    lodo->add_option("--jobs", lo_jobs, "max concurrent cells");
    ablate->add_option("--config", ab_config, "experiment config file")->required();
    ablate->add_option("--out-report", ab_out, "report output path")->required();
    ablate->add_option("--format", ab_format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
    ablate->add_option("--jobs", ab_jobs, "max concurrent cells");

    auto* nmi = app.add_subcommand("nmi", "normalized mutual information of two labelings");
    std::string nmi_a, nmi_b;
    nmi->add_option("--labels-a", nmi_a, "label file, one integer per line")->required();
    nmi->add_option("--labels-b", nmi_b, "label file, one integer per line")->required();

    auto* probe = app.add_subcommand("probe", "domain predictability of a feature matrix");
    std::string pr_features, pr_meta;
    std::uint64_t pr_seed = 0;
    int pr_hidden = 256, pr_steps = 600, pr_splits = 3;
    probe->add_option("--features", pr_features, "feature matrix (GFT1)")->required();
    probe->add_option("--meta", pr_meta, "meta CSV with domain labels")->required();
    probe->add_option("--seed", pr_seed, "probe seed");
    probe->add_option("--hidden", pr_hidden, "probe hidden width (0 = linear)");
    probe->add_option("--steps", pr_steps, "probe training steps");
    probe->add_option("--splits", pr_splits, "number of random splits");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_synth(synth_spec, synth_out);
        if (*cluster) return cmd_cluster(cl_psi, cl_k, cl_seed, cl_out, cl_restarts, cl_max_iter, cl_tol);
        if (*train)
            return cmd_train(tr_data, tr_clusters, tr_mode, tr_variant, tr_config, tr_out, tr_seed, tr_history,
                             tr_holdout);
        if (*eval) return cmd_eval(ev_bundle, ev_data, ev_split, ev_json);
        if (*lodo) return run_sweep(false, lo_config, lo_out, lo_format, lo_jobs);
        if (*ablate) return run_sweep(true, ab_config, ab_out, ab_format, ab_jobs);
        if (*nmi) return cmd_nmi(nmi_a, nmi_b);
        if (*probe) return cmd_probe(pr_features, pr_meta, pr_seed, pr_hidden, pr_steps, pr_splits);
    } catch (const guide::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
