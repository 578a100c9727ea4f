#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "guide/mlp.hpp"
#include "test_util.hpp"

using guide::Error;
using guide::ErrorCode;
using guide::Mat;
using guide::Mlp;
using guide::Vec;

TEST(Forward, ZeroHeadGivesZeroLogits) {
    const Mlp enc = guide::make_identity_encoder(3);
    guide::Rng rng(1);
    Mlp head = guide::make_mlp({3, 4}, rng, /*zero_last=*/true);
    Vec x(3);
    x << 5, -2, 0.5;
    const Vec logits = guide::classifier_forward(enc, head, x, nullptr);
    for (Eigen::Index i = 0; i < logits.size(); ++i) EXPECT_EQ(logits[i], 0.0);
}

TEST(Forward, ErmHeadRejectsPsiPrime) {
    const Mlp enc = guide::make_identity_encoder(3);
    guide::Rng rng(2);
    Mlp head = guide::make_mlp({3, 2}, rng);
    Vec x(3);
    x << 1, 2, 3;
    Vec psi(2);
    psi << 1, 1;
    try {
        guide::classifier_forward(enc, head, x, &psi);
        FAIL() << "expected WidthMismatch";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::WidthMismatch);
    }
}

TEST(Forward, IdentityCompositionPassesConcatThrough) {
    const Mlp enc = guide::make_identity_encoder(2);
    Mlp head;
    head.layers.push_back({Mat::Identity(5, 5), Vec::Zero(5)});
    Vec x(2);
    x << 1, 2;
    Vec psi(3);
    psi << 3, 4, 5;
    const Vec logits = guide::classifier_forward(enc, head, x, &psi);
    ASSERT_EQ(logits.size(), 5);
    for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(logits[i], i + 1.0);
}

TEST(CrossEntropy, KnownValues) {
    Vec uniform(4);
    uniform.setConstant(3.25);
    EXPECT_NEAR(guide::cross_entropy_loss(uniform, 1), std::log(4.0), 1e-12);
    EXPECT_NEAR(guide::cross_entropy_loss(uniform, 1), 1.386294, 1e-6);

    Vec big(2);
    big << 1000, 0;  // stability: no overflow
    EXPECT_NEAR(guide::cross_entropy_loss(big, 0), 0.0, 1e-12);

    Vec asc(3);
    asc << 1, 2, 3;
    // Direct evaluation: ln(e^1 + e^2 + e^3) - 3.
    const double direct = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
    EXPECT_NEAR(guide::cross_entropy_loss(asc, 2), direct, 1e-12);
    EXPECT_NEAR(guide::cross_entropy_loss(asc, 2), 0.40761, 1e-5);
}

TEST(Softmax, SumsToOneAndLossNonNegative) {
    guide::Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.bounded(6));
        Vec logits(n);
        for (int i = 0; i < n; ++i) logits[i] = rng.uniform(-50, 50);
        const Vec p = guide::softmax(logits);
        EXPECT_NEAR(p.sum(), 1.0, 1e-12);
        for (int i = 0; i < n; ++i) EXPECT_GE(p[i], 0.0);
        EXPECT_GE(guide::cross_entropy_loss(logits, static_cast<int>(rng.bounded(n))), 0.0);
    }
}

TEST(SgdStep, ElementwiseUpdateRule) {
    Mlp net;
    net.layers.push_back({Mat::Constant(1, 1, 1.0), Vec::Constant(1, 2.0)});
    guide::MlpGrads grads = guide::make_grads(net);
    grads.layers[0].weight(0, 0) = 0.5;
    grads.layers[0].bias[0] = 0.0;
    guide::sgd_step(net, grads, 0.1, 0.0);
    EXPECT_DOUBLE_EQ(net.layers[0].weight(0, 0), 0.95);
    EXPECT_DOUBLE_EQ(net.layers[0].bias[0], 2.0);  // zero grad, zero decay: fixed point

    net.layers[0].weight(0, 0) = 2.0;
    grads.layers[0].weight(0, 0) = 0.0;
    guide::sgd_step(net, grads, 0.1, 1.0);
    EXPECT_DOUBLE_EQ(net.layers[0].weight(0, 0), 1.8);  // decay-only
}

namespace {

double loss_of(const Mlp& enc, const Mlp& head, const Mat& inputs, const Mat* psi, const std::vector<int>& labels,
               const std::vector<int>& batch) {
    double total = 0;
    for (int idx : batch) {
        Vec feats = enc.forward(inputs.row(idx).transpose());
        if (psi) feats = guide::concat_features(feats, psi->row(idx).transpose());
        total += guide::cross_entropy_loss(head.forward(feats), labels[static_cast<std::size_t>(idx)]);
    }
    return total / static_cast<double>(batch.size());
}

// Central finite differences against the analytic batch gradients. Returns
// the worst relative error over every parameter of both nets.
double max_grad_rel_error(Mlp& enc, Mlp& head, const Mat& inputs, const Mat* psi, const std::vector<int>& labels,
                          const std::vector<int>& batch) {
    guide::MlpGrads enc_grads = guide::make_grads(enc);
    guide::MlpGrads head_grads = guide::make_grads(head);
    guide::classifier_batch_grads(enc, head, inputs, psi, labels, batch, enc_grads, head_grads);

    const double h = 1e-5;
    double worst = 0;
    const auto check_net = [&](Mlp& net, const guide::MlpGrads& grads) {
        for (std::size_t l = 0; l < net.layers.size(); ++l) {
            for (int part = 0; part < 2; ++part) {
                double* data = part == 0 ? net.layers[l].weight.data() : net.layers[l].bias.data();
                const double* gdata = part == 0 ? grads.layers[l].weight.data() : grads.layers[l].bias.data();
                const Eigen::Index count = part == 0 ? net.layers[l].weight.size() : net.layers[l].bias.size();
                for (Eigen::Index i = 0; i < count; ++i) {
                    const double saved = data[i];
                    data[i] = saved + h;
                    const double up = loss_of(enc, head, inputs, psi, labels, batch);
                    data[i] = saved - h;
                    const double down = loss_of(enc, head, inputs, psi, labels, batch);
                    data[i] = saved;
                    const double fd = (up - down) / (2 * h);
                    const double denom = std::max({std::abs(fd), std::abs(gdata[i]), 1e-6});
                    worst = std::max(worst, std::abs(fd - gdata[i]) / denom);
                }
            }
        }
    };
    check_net(enc, enc_grads);
    check_net(head, head_grads);
    return worst;
}

}  // namespace

TEST(Gradients, MatchCentralFiniteDifferences) {
    guide::Rng rng(2024);
    for (int instance = 0; instance < 12; ++instance) {
        const int d_in = 2 + static_cast<int>(rng.bounded(7));
        const int n_classes = 2 + static_cast<int>(rng.bounded(4));
        const int n_hidden = static_cast<int>(rng.bounded(3));
        std::vector<int> widths{d_in};
        for (int l = 0; l < n_hidden; ++l) widths.push_back(2 + static_cast<int>(rng.bounded(5)));
        const int d_phi = 2 + static_cast<int>(rng.bounded(4));
        widths.push_back(d_phi);
        Mlp enc = guide::make_mlp(widths, rng);
        const bool with_psi = instance % 2 == 0;
        const int d_aug = with_psi ? 1 + static_cast<int>(rng.bounded(3)) : 0;
        Mlp head = guide::make_mlp({d_phi + d_aug, n_classes}, rng);
        // Evaluate at a generic point: zero biases can park a ReLU input
        // exactly on the kink, where finite differences disagree with the
        // subgradient convention.
        for (auto* net : {&enc, &head})
            for (auto& layer : net->layers)
                for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = rng.uniform(-0.1, 0.1);

        const int n = 3;
        const Mat inputs = testutil::random_matrix(n, d_in, rng);
        const Mat psi = testutil::random_matrix(n, std::max(1, d_aug), rng);
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) labels.push_back(static_cast<int>(rng.bounded(n_classes)));
        const std::vector<int> batch{0, 1, 2};

        const double err =
            max_grad_rel_error(enc, head, inputs, with_psi ? &psi : nullptr, labels, batch);
        EXPECT_LT(err, 1e-4) << "instance " << instance;
    }
}

TEST(Forward, ErmEqualsGuideWithWidthZeroAugmentation) {
    guide::Rng rng_a(9), rng_b(9);
    Mlp enc_a = guide::make_mlp({4, 6, 3}, rng_a);
    Mlp head_a = guide::make_mlp({3, 2}, rng_a, true);
    Mlp enc_b = guide::make_mlp({4, 6, 3}, rng_b);
    Mlp head_b = guide::make_mlp({3, 2}, rng_b, true);

    guide::Rng data_rng(10);
    const Mat inputs = testutil::random_matrix(5, 4, data_rng);
    const Vec empty(0);
    for (int i = 0; i < 5; ++i) {
        const Vec x = inputs.row(i).transpose();
        const Vec erm = guide::classifier_forward(enc_a, head_a, x, nullptr);
        const Vec guided = guide::classifier_forward(enc_b, head_b, x, &empty);
        ASSERT_EQ(erm.size(), guided.size());
        for (Eigen::Index j = 0; j < erm.size(); ++j) EXPECT_EQ(erm[j], guided[j]);
    }

    // Training-step equivalence: identical batch gradients either way.
    std::vector<int> labels{0, 1, 0, 1, 0};
    const std::vector<int> batch{0, 1, 2, 3, 4};
    const Mat zero_width(5, 0);
    guide::MlpGrads ea = guide::make_grads(enc_a), ha = guide::make_grads(head_a);
    guide::MlpGrads eb = guide::make_grads(enc_b), hb = guide::make_grads(head_b);
    const double la = guide::classifier_batch_grads(enc_a, head_a, inputs, nullptr, labels, batch, ea, ha);
    const double lb = guide::classifier_batch_grads(enc_b, head_b, inputs, &zero_width, labels, batch, eb, hb);
    EXPECT_EQ(la, lb);
    for (std::size_t l = 0; l < ea.layers.size(); ++l)
        for (Eigen::Index i = 0; i < ea.layers[l].weight.size(); ++i)
            EXPECT_EQ(ea.layers[l].weight.data()[i], eb.layers[l].weight.data()[i]);
}
