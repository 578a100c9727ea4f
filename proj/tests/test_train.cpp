#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "guide/kmeans.hpp"
#include "guide/synthetic.hpp"
#include "guide/train.hpp"
#include "test_util.hpp"

using guide::ClusterConfig;
using guide::ClusterModel;
using guide::Dataset;
using guide::Error;
using guide::ErrorCode;
using guide::Mat;
using guide::TrainConfig;
using guide::TrainedModel;
using guide::TrainMode;
using guide::TransformVariant;
using guide::Vec;

namespace {

Dataset toy_separable(int per_class, double margin, std::uint64_t seed) {
    guide::Rng rng(seed);
    Dataset ds;
    const int n = 2 * per_class;
    ds.inputs.resize(n, 2);
    ds.psi.resize(n, 2);
    for (int i = 0; i < n; ++i) {
        const int cls = i < per_class ? 0 : 1;
        ds.inputs(i, 0) = (cls == 0 ? -margin : margin) + 0.3 * rng.normal();
        ds.inputs(i, 1) = 0.3 * rng.normal();
        ds.psi(i, 0) = rng.normal();
        ds.psi(i, 1) = rng.normal();
        ds.class_labels.push_back(cls);
        ds.ids.push_back("t" + std::to_string(i));
    }
    ds.n_classes = 2;
    return ds;
}

Dataset small_guide_set() {
    guide::SynthSpec spec;
    spec.n_classes = 3;
    spec.n_domains = 3;
    spec.samples_per_cell = 8;
    spec.input_dim = 4;
    spec.psi_dim = 3;
    spec.noise_sigma = 0.2;
    spec.seed = 11;
    return guide::generate_synthetic(spec).without_domain_labels();
}

TrainConfig small_guide_cfg() {
    TrainConfig cfg;
    cfg.steps = 30;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.05;
    cfg.encoder_hidden = {8};
    cfg.d_phi = 5;
    cfg.seed = 3;
    return cfg;
}

bool same_params(const guide::Mlp& a, const guide::Mlp& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (a.layers[l].weight != b.layers[l].weight) return false;
        if (a.layers[l].bias != b.layers[l].bias) return false;
    }
    return true;
}

}  // namespace

TEST(LogSchedule, HandComputedAndBoundary) {
    EXPECT_EQ(guide::log_schedule(20, 2.0), (std::vector<int>{0, 1, 2, 4, 8, 16}));
    EXPECT_EQ(guide::log_schedule(1, 2.0), (std::vector<int>{0}));
    EXPECT_EQ(guide::log_schedule(1, 7.5), (std::vector<int>{0}));
    EXPECT_EQ(guide::log_schedule(5, 2.0), (std::vector<int>{0, 1, 2, 4}));
}

TEST(LogSchedule, GapsNonDecreasing) {
    for (double base : {1.3, 2.0, 3.0, 10.0}) {
        const auto steps = guide::log_schedule(5000, base);
        ASSERT_GE(steps.size(), 2u);
        EXPECT_EQ(steps.front(), 0);
        for (std::size_t i = 2; i < steps.size(); ++i)
            EXPECT_GE(steps[i] - steps[i - 1], steps[i - 1] - steps[i - 2]) << "base " << base << " at " << i;
        for (int s : steps) EXPECT_LT(s, 5000);
    }
}

TEST(Train, SingleStepRunRefitsOnceAndHasHistoryLengthOne) {
    const Dataset ds = small_guide_set();
    ClusterConfig cc;
    cc.k = 3;
    cc.seed = 1;
    const ClusterModel clusters = guide::kmeans_fit(ds.psi, cc);
    TrainConfig cfg = small_guide_cfg();
    cfg.steps = 1;
    const TrainedModel model = guide::train(ds, clusters, cfg);
    EXPECT_EQ(model.history.loss.size(), 1u);
    EXPECT_EQ(model.history.refit_steps, (std::vector<int>{0}));
}

TEST(Train, ZeroLearningRateIsAFixedPoint) {
    const Dataset ds = small_guide_set();
    ClusterConfig cc;
    cc.k = 3;
    cc.seed = 1;
    const ClusterModel clusters = guide::kmeans_fit(ds.psi, cc);
    TrainConfig cfg = small_guide_cfg();
    cfg.learning_rate = 0.0;
    cfg.steps = 25;
    const TrainedModel model = guide::train(ds, clusters, cfg);

    // Parameters never moved: they equal a fresh init with the same seed.
    guide::Rng rng_init = guide::Rng(cfg.seed).derive(1);
    const guide::Mlp enc0 = guide::make_mlp({4, 8, 5}, rng_init);
    const guide::Mlp head0 = guide::make_mlp({5 + 5, 3}, rng_init, true);
    EXPECT_TRUE(same_params(model.encoder, enc0));
    EXPECT_TRUE(same_params(model.head, head0));

    // Zero-initialized head makes every batch loss exactly ln(n_classes).
    for (double loss : model.history.loss) EXPECT_DOUBLE_EQ(loss, std::log(3.0));
}

TEST(Train, LinearlySeparableToyReachesPerfectTrainAccuracy) {
    const Dataset ds = toy_separable(20, 2.0, 5);
    TrainConfig cfg;
    cfg.mode = TrainMode::Erm;
    cfg.identity_encoder = true;
    cfg.steps = 500;
    cfg.learning_rate = 0.1;
    cfg.batch_size = 8;
    cfg.seed = 9;
    const TrainedModel model = guide::train(ds, cfg);
    EXPECT_DOUBLE_EQ(model.train_accuracy, 1.0);
    EXPECT_DOUBLE_EQ(guide::evaluate_accuracy(model, ds), 1.0);
}

TEST(Train, DeterministicGivenSeed) {
    const Dataset ds = small_guide_set();
    ClusterConfig cc;
    cc.k = 4;
    cc.seed = 7;
    const ClusterModel clusters = guide::kmeans_fit(ds.psi, cc);
    const TrainConfig cfg = small_guide_cfg();
    const TrainedModel a = guide::train(ds, clusters, cfg);
    const TrainedModel b = guide::train(ds, clusters, cfg);
    EXPECT_TRUE(same_params(a.encoder, b.encoder));
    EXPECT_TRUE(same_params(a.head, b.head));
    ASSERT_EQ(a.history.loss.size(), b.history.loss.size());
    for (std::size_t i = 0; i < a.history.loss.size(); ++i) EXPECT_EQ(a.history.loss[i], b.history.loss[i]);
    EXPECT_EQ(a.history.refit_steps, b.history.refit_steps);
}

TEST(Train, RefitInterpolatesClusterMeansAtLambdaZero) {
    const Dataset ds = small_guide_set();
    ClusterConfig cc;
    cc.k = 4;
    cc.seed = 2;
    const ClusterModel clusters = guide::kmeans_fit(ds.psi, cc);
    TrainConfig cfg = small_guide_cfg();
    cfg.ridge_lambda = 0.0;
    const TrainedModel model = guide::train(ds, clusters, cfg);

    // Re-run the refit procedure with the final encoder: with lambda = 0 the
    // transform must reproduce each cluster's current phi mean at its
    // centroid.
    const guide::TransformModel t =
        guide::refit_transform(model.encoder, ds.inputs, clusters, TransformVariant::RbfKrr, 0.0);
    Mat phi(ds.n(), model.encoder.out_dim());
    for (int i = 0; i < ds.n(); ++i) phi.row(i) = model.encoder.forward(ds.inputs.row(i).transpose()).transpose();
    const guide::PhiTargets targets = guide::phi_cluster_means(phi, clusters.assignments, clusters.k);
    for (int c = 0; c < clusters.k; ++c) {
        const Vec out = guide::apply(t, clusters.centroids.row(c).transpose());
        EXPECT_LT((out - targets.means.row(c).transpose()).lpNorm<Eigen::Infinity>(), 1e-8) << "cluster " << c;
    }
}

TEST(Train, PredictMatchesTrainingForwardOnTrainingSamples) {
    const Dataset ds = small_guide_set();
    ClusterConfig cc;
    cc.k = 4;
    cc.seed = 3;
    const ClusterModel clusters = guide::kmeans_fit(ds.psi, cc);
    const TrainedModel model = guide::train(ds, clusters, small_guide_cfg());

    for (int i = 0; i < ds.n(); ++i) {
        // Training-time forward: stored assignment, transform of centroid.
        const int a = clusters.assignments[static_cast<std::size_t>(i)];
        const Vec psi_prime = guide::apply(model.transform, clusters.centroids.row(a).transpose());
        const Vec train_logits =
            guide::classifier_forward(model.encoder, model.head, ds.inputs.row(i).transpose(), &psi_prime);
        // Inference path: nearest centroid from raw psi.
        const auto pred = guide::predict(model.encoder, model.head, model.transform, model.clusters,
                                         ds.inputs.row(i).transpose(), ds.psi.row(i).transpose());
        EXPECT_LT((train_logits - pred.logits).lpNorm<Eigen::Infinity>(), 1e-12) << "row " << i;
    }
}

TEST(Predict, ZeroHeadTieBreaksToClassZeroWithUniformProbabilities) {
    guide::Rng rng(1);
    const guide::Mlp enc = guide::make_identity_encoder(2);
    guide::Mlp head = guide::make_mlp({2, 4}, rng, /*zero_last=*/true);
    Vec x(2);
    x << 3, -1;
    const auto pred = guide::predict_erm(enc, head, x);
    EXPECT_EQ(pred.label, 0);
    for (Eigen::Index i = 0; i < pred.probabilities.size(); ++i)
        EXPECT_NEAR(pred.probabilities[i], 0.25, 1e-12);
}

TEST(Train, DivergesWithAbsurdLearningRate) {
    const Dataset ds = toy_separable(10, 2.0, 6);
    TrainConfig cfg;
    cfg.mode = TrainMode::Erm;
    cfg.encoder_hidden = {8};
    cfg.d_phi = 4;
    cfg.steps = 200;
    cfg.learning_rate = 1e18;
    cfg.batch_size = 4;
    cfg.seed = 1;
    try {
        guide::train(ds, cfg);
        FAIL() << "expected DivergedLoss";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DivergedLoss);
    }
}

TEST(Bundle, RoundTripPreservesModelAndAccuracy) {
    const Dataset ds = small_guide_set();
    ClusterConfig cc;
    cc.k = 3;
    cc.seed = 5;
    const ClusterModel clusters = guide::kmeans_fit(ds.psi, cc);
    TrainedModel model = guide::train(ds, clusters, small_guide_cfg());
    model.held_out = 1;

    testutil::TempDir tmp;
    guide::save_bundle(tmp.file("model.bundle"), model);
    const TrainedModel back = guide::load_bundle(tmp.file("model.bundle"));
    EXPECT_TRUE(same_params(model.encoder, back.encoder));
    EXPECT_TRUE(same_params(model.head, back.head));
    EXPECT_EQ(back.held_out, 1);
    EXPECT_EQ(back.train_accuracy, model.train_accuracy);
    EXPECT_EQ(back.history.refit_steps, model.history.refit_steps);
    EXPECT_EQ(guide::evaluate_accuracy(back, ds), guide::evaluate_accuracy(model, ds));
}

TEST(Bundle, ErmBundleHasNoClusterOrTransformBlocks) {
    const Dataset ds = toy_separable(10, 2.0, 7);
    TrainConfig cfg;
    cfg.mode = TrainMode::Erm;
    cfg.identity_encoder = true;
    cfg.steps = 20;
    cfg.learning_rate = 0.05;
    cfg.seed = 4;
    const TrainedModel model = guide::train(ds, cfg);
    testutil::TempDir tmp;
    guide::save_bundle(tmp.file("erm.bundle"), model);
    const TrainedModel back = guide::load_bundle(tmp.file("erm.bundle"));
    EXPECT_EQ(back.cfg.mode, TrainMode::Erm);
    EXPECT_EQ(guide::evaluate_accuracy(back, ds), guide::evaluate_accuracy(model, ds));
}
