#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssda/pseudo_label.hpp"
#include "ssda/rng.hpp"

using namespace ssda;

namespace {

Matrix random_prob_matrix(Rng& rng, std::size_t n, std::size_t c) {
    Matrix m(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            m(i, j) = rng.uniform(0.01, 1.0);
            sum += m(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) m(i, j) /= sum;
    }
    return m;
}

TransportPlan random_plan(Rng& rng, std::size_t c, std::size_t n) {
    TransportPlan plan;
    plan.plan = Matrix(c, n);
    for (double& v : plan.plan.data()) v = rng.uniform(0.0, 1.0);
    plan.converged = true;
    return plan;
}

} // namespace

TEST_CASE("three-way decide") {
    const PseudoLabelConfig cfg{0.95, 0.4};

    const Vec confident{0.01, 0.97, 0.02};
    const auto a = decide(confident, nullptr, cfg);
    CHECK(a.branch == PseudoLabelBranch::Confident);
    CHECK(a.label == 1);
    CHECK(a.confidence == doctest::Approx(0.97));

    const Vec middling{0.50, 0.30, 0.20};
    const Vec column{0.1, 0.7, 0.2};
    const auto b = decide(middling, &column, cfg);
    CHECK(b.branch == PseudoLabelBranch::OtPlan);
    CHECK(b.label == 1);

    const Vec low_conf{0.20, 0.20, 0.20, 0.20, 0.20};
    const Vec low_col{0.2, 0.2, 0.2, 0.2, 0.2};
    const auto c = decide(low_conf, &low_col, cfg);
    CHECK(c.branch == PseudoLabelBranch::Abstain);
    CHECK(c.label == -1);
}

TEST_CASE("decide edge cases") {
    const PseudoLabelConfig cfg{0.95, 0.4};
    const Vec probs{0.5, 0.3, 0.2};

    const Vec wrong_len{0.5, 0.5};
    CHECK_THROWS_AS(decide(probs, &wrong_len, cfg), std::invalid_argument);

    const Vec zero_col{0.0, 0.0, 0.0};
    CHECK(decide(probs, &zero_col, cfg).branch == PseudoLabelBranch::Abstain);

    CHECK(decide(probs, nullptr, cfg).branch == PseudoLabelBranch::Abstain);

    // argmax ties break to the lowest class index in both branches
    const Vec tie{0.5, 0.5};
    const auto t = decide(tie, nullptr, PseudoLabelConfig{0.4, 0.1});
    CHECK(t.branch == PseudoLabelBranch::Confident);
    CHECK(t.label == 0);
    const Vec tied_col{0.5, 0.5};
    const auto u = decide(Vec{0.6, 0.4}, &tied_col, PseudoLabelConfig{0.8, 0.1});
    CHECK(u.branch == PseudoLabelBranch::OtPlan);
    CHECK(u.label == 0);

    CHECK_THROWS_AS(decide(probs, nullptr, PseudoLabelConfig{0.4, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(decide(probs, nullptr, PseudoLabelConfig{1.2, 0.1}), std::invalid_argument);
}

TEST_CASE("batch decide") {
    const PseudoLabelConfig cfg{0.95, 0.4};

    // Uniform rows over ten classes all abstain (max 0.1 < tau2).
    Matrix uniform(4, 10, 0.1);
    const auto all_abstain = batch_decide(uniform, nullptr, cfg);
    for (const auto& d : all_abstain) CHECK(d.branch == PseudoLabelBranch::Abstain);

    // One-hot rows are all confident.
    Matrix onehot(3, 4);
    onehot(0, 2) = 1.0;
    onehot(1, 0) = 1.0;
    onehot(2, 3) = 1.0;
    const auto all_conf = batch_decide(onehot, nullptr, cfg);
    CHECK(all_conf[0].label == 2);
    CHECK(all_conf[1].label == 0);
    CHECK(all_conf[2].label == 3);
    for (const auto& d : all_conf) CHECK(d.branch == PseudoLabelBranch::Confident);

    // Mixed batch reproduces the three per-sample outcomes.
    Matrix mixed = Matrix::from_rows({{0.01, 0.97, 0.02}, {0.50, 0.30, 0.20}, {0.34, 0.33, 0.33}});
    TransportPlan plan;
    plan.plan = Matrix::from_rows({{0.2, 0.1, 0.1}, {0.2, 0.7, 0.1}, {0.2, 0.2, 0.1}});
    plan.converged = true;
    const auto mixed_out = batch_decide(mixed, &plan, PseudoLabelConfig{0.95, 0.4});
    CHECK(mixed_out[0].branch == PseudoLabelBranch::Confident);
    CHECK(mixed_out[1].branch == PseudoLabelBranch::OtPlan);
    CHECK(mixed_out[1].label == 1);
    CHECK(mixed_out[2].branch == PseudoLabelBranch::Abstain);

    // Unconverged plans degrade the middle branch to abstention.
    plan.converged = false;
    const auto degraded = batch_decide(mixed, &plan, PseudoLabelConfig{0.95, 0.4});
    CHECK(degraded[1].branch == PseudoLabelBranch::Abstain);

    plan.converged = true;
    plan.plan = Matrix(3, 2); // wrong column count
    CHECK_THROWS_AS(batch_decide(mixed, &plan, cfg), std::invalid_argument);
}

TEST_CASE("pseudo-label accuracy and coverage") {
    PseudoLabelDecision conf{PseudoLabelBranch::Confident, 1, 0.99};
    PseudoLabelDecision ot{PseudoLabelBranch::OtPlan, 0, 0.5};
    PseudoLabelDecision abstain{PseudoLabelBranch::Abstain, -1, 0.2};

    const auto perfect = pseudo_label_accuracy({conf, conf}, {1, 1});
    CHECK(perfect.accuracy == doctest::Approx(1.0));
    CHECK(perfect.coverage == doctest::Approx(1.0));

    const auto vacuous = pseudo_label_accuracy({abstain, abstain}, {0, 1});
    CHECK(vacuous.accuracy == doctest::Approx(1.0));
    CHECK(vacuous.coverage == doctest::Approx(0.0));

    // 2 correct of 4 decided, 4 of 8 abstained -> (0.5, 0.5)
    const std::vector<PseudoLabelDecision> decisions{conf, conf, ot,      ot,
                                                     abstain, abstain, abstain, abstain};
    const std::vector<int> truths{1, 1, 1, 1, 0, 0, 0, 0};
    const auto half = pseudo_label_accuracy(decisions, truths);
    CHECK(half.accuracy == doctest::Approx(0.5));
    CHECK(half.coverage == doctest::Approx(0.5));

    CHECK_THROWS_AS(pseudo_label_accuracy({conf}, {1, 0}), std::invalid_argument);
}

TEST_CASE("threshold monotonicity") {
    Rng rng(301);
    const std::size_t n = 40, c = 5;
    const Matrix probs = random_prob_matrix(rng, n, c);
    const TransportPlan plan = random_plan(rng, c, n);

    for (int rep = 0; rep < 50; ++rep) {
        double t1a = rng.uniform(0.2, 0.9);
        double t1b = rng.uniform(t1a, 1.0);
        const double t2 = rng.uniform(0.0, t1a);
        const auto low = batch_decide(probs, &plan, PseudoLabelConfig{t1a, t2});
        const auto high = batch_decide(probs, &plan, PseudoLabelConfig{t1b, t2});
        for (std::size_t i = 0; i < n; ++i) {
            // raising tau1 never turns an abstention into a confident label
            if (low[i].branch == PseudoLabelBranch::Abstain) {
                CHECK(high[i].branch != PseudoLabelBranch::Confident);
            }
            // a sample that keeps its branch keeps its class (a Confident
            // sample may legitimately drop into the OT branch and be
            // relabeled by the plan)
            if (low[i].branch == high[i].branch && low[i].assigned()) {
                CHECK(low[i].label == high[i].label);
            }
            // confidence never moves against the threshold: a high-tau1
            // Confident sample must already be Confident at the lower tau1
            if (high[i].branch == PseudoLabelBranch::Confident) {
                CHECK(low[i].branch == PseudoLabelBranch::Confident);
            }
        }

        double t2a = rng.uniform(0.0, t1a);
        double t2b = rng.uniform(t2a, t1a);
        const auto loose = batch_decide(probs, &plan, PseudoLabelConfig{t1a, t2a});
        const auto tight = batch_decide(probs, &plan, PseudoLabelConfig{t1a, t2b});
        std::size_t cov_loose = 0, cov_tight = 0;
        for (std::size_t i = 0; i < n; ++i) {
            cov_loose += loose[i].assigned() ? 1 : 0;
            cov_tight += tight[i].assigned() ? 1 : 0;
        }
        CHECK(cov_tight <= cov_loose);
    }
}

TEST_CASE("degenerate threshold settings") {
    Rng rng(307);
    const std::size_t n = 30, c = 4;
    const Matrix probs = random_prob_matrix(rng, n, c);
    const TransportPlan plan = random_plan(rng, c, n);

    // tau2 == tau1: the OT branch is unreachable.
    const auto fixmatch = batch_decide(probs, &plan, PseudoLabelConfig{0.7, 0.7});
    for (const auto& d : fixmatch) CHECK(d.branch != PseudoLabelBranch::OtPlan);

    // tau2 == 0: every non-confident sample with a usable plan gets an OT label.
    const auto full = batch_decide(probs, &plan, PseudoLabelConfig{0.7, 0.0});
    for (const auto& d : full) CHECK(d.branch != PseudoLabelBranch::Abstain);

    // determinism: identical inputs, identical outcomes
    const auto again = batch_decide(probs, &plan, PseudoLabelConfig{0.7, 0.0});
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(full[i].branch == again[i].branch);
        CHECK(full[i].label == again[i].label);
        CHECK(full[i].confidence == again[i].confidence);
    }
}
