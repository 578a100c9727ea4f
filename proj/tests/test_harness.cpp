#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "guide/harness.hpp"
#include "test_util.hpp"

using guide::EvalCell;
using guide::EvalReport;
using guide::ExperimentConfig;
using guide::ExpVariant;
using guide::SynthSpec;

namespace {

ExperimentConfig tiny_config() {
    SynthSpec spec;
    spec.n_classes = 2;
    spec.n_domains = 4;
    spec.samples_per_cell = 6;
    spec.input_dim = 4;
    spec.psi_dim = 3;
    spec.psi_domain_snr = 3.0;
    spec.noise_sigma = 0.3;
    spec.seed = 77;

    ExperimentConfig cfg;
    cfg.synth = spec;
    cfg.multipliers = {1, 3, 5};
    cfg.k_cap = 200;
    cfg.seeds = {1, 2, 3};
    cfg.variants = {ExpVariant::Erm, ExpVariant::GuideRbf};
    cfg.train_template.steps = 12;
    cfg.train_template.batch_size = 8;
    cfg.train_template.encoder_hidden = {6};
    cfg.train_template.d_phi = 4;
    cfg.probe.steps = 60;
    cfg.probe.probe_hidden = 16;
    return cfg;
}

double mean_at_k(const EvalReport& report, ExpVariant v, int domain, int k) {
    std::vector<double> accs;
    for (const EvalCell& c : report.cells)
        if (c.variant == v && c.held_out == domain && c.k == k && c.ok()) accs.push_back(c.test_accuracy);
    double s = 0;
    for (double a : accs) s += a;
    return s / static_cast<double>(accs.size());
}

}  // namespace

TEST(Harness, CellCountIsFullGrid) {
    const EvalReport report = guide::run_lodo(tiny_config());
    // 2 variants x 4 domains x 3 K-candidates x 3 seeds.
    EXPECT_EQ(report.cells.size(), 72u);
    for (const EvalCell& c : report.cells) EXPECT_TRUE(c.ok()) << c.status;
    EXPECT_FALSE(report.partial);
}

TEST(Harness, ErmCellsCarryNoClusteringDiagnostics) {
    ExperimentConfig cfg = tiny_config();
    cfg.variants = {ExpVariant::Erm};
    cfg.seeds = {1};
    const EvalReport report = guide::run_lodo(cfg);
    ASSERT_FALSE(report.cells.empty());
    for (const EvalCell& c : report.cells) {
        EXPECT_FALSE(c.has_nmi);
        EXPECT_TRUE(std::isnan(c.domain_nmi));
    }
}

TEST(Harness, GuideCellsCarryClusteringDiagnostics) {
    ExperimentConfig cfg = tiny_config();
    cfg.variants = {ExpVariant::GuideRbf};
    cfg.seeds = {1};
    cfg.multipliers = {3};
    const EvalReport report = guide::run_lodo(cfg);
    for (const EvalCell& c : report.cells) {
        EXPECT_TRUE(c.has_nmi);
        EXPECT_GE(c.domain_nmi, 0.0);
        EXPECT_LE(c.domain_nmi, 1.0);
    }
}

TEST(Harness, AggregatesRecomputeFromCells) {
    const EvalReport report = guide::run_lodo(tiny_config());
    for (const auto& agg : report.aggregates) {
        ASSERT_GE(agg.best_k, 0);
        const double recomputed = mean_at_k(report, agg.variant, agg.held_out, agg.best_k);
        EXPECT_NEAR(agg.mean_accuracy, recomputed, 1e-12);
        // best_k is the argmax over the K grid by mean accuracy.
        for (int k : {2, 6, 10})
            EXPECT_LE(mean_at_k(report, agg.variant, agg.held_out, k), agg.mean_accuracy + 1e-12);
    }
    for (const auto& [name, value] : report.variant_means) {
        double sum = 0;
        int count = 0;
        for (const auto& agg : report.aggregates)
            if (std::string(guide::exp_variant_name(agg.variant)) == name) {
                sum += agg.mean_accuracy;
                ++count;
            }
        EXPECT_NEAR(value, sum / count, 1e-12);
    }
}

TEST(Harness, SeedPermutationLeavesAggregatesUnchanged) {
    ExperimentConfig cfg = tiny_config();
    const EvalReport a = guide::run_lodo(cfg);
    cfg.seeds = {3, 1, 2};
    const EvalReport b = guide::run_lodo(cfg);
    ASSERT_EQ(a.aggregates.size(), b.aggregates.size());
    for (std::size_t i = 0; i < a.aggregates.size(); ++i) {
        EXPECT_EQ(a.aggregates[i].best_k, b.aggregates[i].best_k);
        EXPECT_NEAR(a.aggregates[i].mean_accuracy, b.aggregates[i].mean_accuracy, 1e-12);
        EXPECT_NEAR(a.aggregates[i].std_accuracy, b.aggregates[i].std_accuracy, 1e-12);
    }
}

TEST(Harness, RenderedReportsAreDeterministic) {
    ExperimentConfig cfg = tiny_config();
    cfg.seeds = {1};
    cfg.multipliers = {1};
    const EvalReport a = guide::run_lodo(cfg);
    const EvalReport b = guide::run_lodo(cfg);
    EXPECT_EQ(guide::render_report(a, guide::ReportFormat::Csv), guide::render_report(b, guide::ReportFormat::Csv));
    EXPECT_EQ(guide::render_report(a, guide::ReportFormat::Json),
              guide::render_report(b, guide::ReportFormat::Json));
    // Re-emission of the same report object is byte-identical too.
    EXPECT_EQ(guide::render_report(a, guide::ReportFormat::Json),
              guide::render_report(a, guide::ReportFormat::Json));
}

TEST(Harness, CsvHasDocumentedHeaderAndOneRowPerCell) {
    ExperimentConfig cfg = tiny_config();
    cfg.seeds = {1};
    const EvalReport report = guide::run_lodo(cfg);
    const std::string csv = guide::render_report(report, guide::ReportFormat::Csv);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "variant,held_out_domain,k,seed,test_accuracy,domain_nmi,class_nmi,status");
    EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), report.cells.size() + 1);
}

TEST(Harness, AblationEmitsFiveVariantsInDocumentedOrder) {
    ExperimentConfig cfg = tiny_config();
    cfg.seeds = {1};
    cfg.multipliers = {1};
    cfg.train_template.steps = 8;
    const EvalReport report = guide::run_ablation(cfg);
    ASSERT_EQ(report.variant_means.size(), 5u);
    EXPECT_EQ(report.variant_means[0].first, "erm");
    EXPECT_EQ(report.variant_means[1].first, "guide-concat");
    EXPECT_EQ(report.variant_means[2].first, "guide-replace");
    EXPECT_EQ(report.variant_means[3].first, "guide-linear");
    EXPECT_EQ(report.variant_means[4].first, "guide-rbf");
}

TEST(Harness, NoClusteringVariantUsesRawPsi) {
    ExperimentConfig cfg = tiny_config();
    cfg.variants = {ExpVariant::GuideNoClustering};
    cfg.seeds = {1};
    cfg.multipliers = {1};
    const EvalReport report = guide::run_lodo(cfg);
    for (const EvalCell& c : report.cells) {
        EXPECT_TRUE(c.ok()) << c.status;
        EXPECT_FALSE(c.has_nmi);
    }
}

TEST(Harness, JobsDoNotChangeTheReport) {
    ExperimentConfig cfg = tiny_config();
    cfg.seeds = {1, 2};
    cfg.multipliers = {1, 3};
    const EvalReport serial = guide::run_lodo(cfg);
    cfg.jobs = 4;
    EvalReport parallel = guide::run_lodo(cfg);
    // jobs is echoed in the config, so normalize before comparing bytes.
    parallel.config_echo["jobs"] = "1";
    EXPECT_EQ(guide::render_report(serial, guide::ReportFormat::Csv),
              guide::render_report(parallel, guide::ReportFormat::Csv));
}

TEST(Harness, PsiPredictabilityDiagnosticIsPresent) {
    const EvalReport report = guide::run_lodo(tiny_config());
    EXPECT_GE(report.psi_domain_predictability, 0.0);
    EXPECT_LE(report.psi_domain_predictability, 1.0);
}

TEST(Harness, ConfigParserRoundTrip) {
    const std::string text =
        "# benchmark run\n"
        "synth_profile = benchmark-v1\n"
        "synth_per_cell = 10\n"
        "seeds = 5, 6\n"
        "variants = erm, guide-rbf\n"
        "multipliers = 1\n"
        "steps = 15\n"
        "jobs = 2\n";
    const ExperimentConfig cfg = guide::parse_experiment_config(guide::KeyValueConfig::from_string(text));
    ASSERT_TRUE(cfg.synth.has_value());
    EXPECT_EQ(cfg.synth->samples_per_cell, 10);
    EXPECT_EQ(cfg.synth->n_classes, 4);  // from the profile
    EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{5, 6}));
    EXPECT_EQ(cfg.train_template.steps, 15);
    EXPECT_EQ(cfg.jobs, 2);

    try {
        guide::parse_experiment_config(guide::KeyValueConfig::from_string("nonsense_key = 3\n"));
        FAIL() << "expected ConfigError";
    } catch (const guide::Error& e) {
        EXPECT_EQ(e.code(), guide::ErrorCode::ConfigError);
    }
}
