#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssda/linalg.hpp"
#include "ssda/losses.hpp"
#include "ssda/rng.hpp"

#include "fd_util.hpp"

#include <cmath>

using namespace ssda;

namespace {

Matrix random_probs(Rng& rng, std::size_t n, std::size_t c) {
    Matrix logits(n, c);
    for (double& v : logits.data()) v = rng.normal();
    Matrix p = row_softmax(logits, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) p(i, j) = 0.9 * p(i, j) + 0.1 / static_cast<double>(c);
    }
    return p;
}

TransportPlan plan_of(Matrix m) {
    TransportPlan plan;
    plan.plan = std::move(m);
    plan.converged = true;
    return plan;
}

} // namespace

TEST_CASE("total loss composition") {
    LossComponents comps{1.0, 2.0, 3.0, 4.0};
    const auto all_one = total_loss(comps, LossWeights{1.0, 1.0, 1.0});
    CHECK(all_one.total == doctest::Approx(10.0));
    CHECK(all_one.base == doctest::Approx(1.0));
    CHECK(all_one.batch == doctest::Approx(4.0));

    const auto zeros = total_loss(comps, LossWeights{0.0, 0.0, 0.0});
    CHECK(zeros.total == doctest::Approx(comps.base));

    const auto tenth = total_loss(comps, LossWeights{1.0, 1.0, 0.1});
    CHECK(tenth.total == doctest::Approx(1.0 + 2.0 + 3.0 + 0.4));

    CHECK_THROWS_AS(total_loss(comps, LossWeights{-1.0, 0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("total loss ledger invariant and lambda linearity") {
    Rng rng(401);
    for (int rep = 0; rep < 200; ++rep) {
        LossComponents comps{rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0), rng.uniform(0.0, 3.0),
                             rng.uniform(0.0, 3.0)};
        LossWeights w{rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0), rng.uniform(0.0, 2.0)};
        const auto report = total_loss(comps, w);
        CHECK(std::abs(report.total - (report.base + w.lambda_intra * report.intra +
                                       w.lambda_inter * report.inter + w.lambda_batch * report.batch)) <
              1e-10);
        // doubling one lambda moves the total by exactly that component
        LossWeights w2 = w;
        w2.lambda_inter *= 2.0;
        const auto report2 = total_loss(comps, w2);
        CHECK(report2.total - report.total ==
              doctest::Approx(w.lambda_inter * comps.inter).epsilon(1e-12));
    }
}

TEST_CASE("base loss closed forms") {
    // Perfect one-hot predictions everywhere -> 0.
    Matrix onehot(2, 3);
    onehot(0, 1) = 1.0;
    onehot(1, 2) = 1.0;
    Matrix strong_onehot(1, 3);
    strong_onehot(0, 0) = 1.0;
    Matrix weak_onehot(1, 3);
    weak_onehot(0, 0) = 1.0;
    const auto zero = base_loss(onehot, {1, 2}, onehot, {1, 2}, weak_onehot, strong_onehot, 0.95);
    CHECK(zero.value == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(zero.masked_in == 1);

    // Uniform predictions on labeled data only, nothing passes tau1 -> ln C.
    const std::size_t c = 7;
    Matrix uniform(3, c, 1.0 / static_cast<double>(c));
    const auto lnc = base_loss(uniform, {0, 3, 6}, Matrix(0, c), {}, uniform, uniform, 0.95);
    CHECK(lnc.value == doctest::Approx(std::log(static_cast<double>(c))).epsilon(1e-12));
    CHECK(lnc.masked_in == 0);

    // Single labeled sample with probability one half on the true class -> ln 2.
    const Matrix half = Matrix::from_rows({{0.5, 0.5}});
    const auto ln2 = base_loss(half, {0}, Matrix(0, 2), {}, Matrix(0, 2), Matrix(0, 2), 0.95);
    CHECK(ln2.value == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("base loss equals plain supervised CE when the mask is off") {
    Rng rng(409);
    const std::size_t ns = 6, nl = 4, c = 5;
    const Matrix ps = random_probs(rng, ns, c);
    const Matrix pl = random_probs(rng, nl, c);
    std::vector<int> ys(ns), yl(nl);
    for (auto& y : ys) y = static_cast<int>(rng.uniform_index(c));
    for (auto& y : yl) y = static_cast<int>(rng.uniform_index(c));
    const Matrix pw = random_probs(rng, 3, c); // maxima < 0.95 by construction (mixed toward uniform)
    const Matrix pu = random_probs(rng, 3, c);

    const auto res = base_loss(ps, ys, pl, yl, pw, pu, 0.9999);
    double ce = 0.0;
    for (std::size_t i = 0; i < ns; ++i) ce -= std::log(ps(i, static_cast<std::size_t>(ys[i])));
    for (std::size_t i = 0; i < nl; ++i) ce -= std::log(pl(i, static_cast<std::size_t>(yl[i])));
    ce /= static_cast<double>(ns + nl);
    CHECK(res.value == doctest::Approx(ce).epsilon(1e-12));
    CHECK(res.masked_in == 0);
}

TEST_CASE("intra loss closed forms") {
    const auto zero = intra_loss_from_cost(plan_of(Matrix::from_rows({{0.5, 0.0}, {0.0, 0.5}})),
                                           Matrix(2, 2));
    CHECK(zero.value == doctest::Approx(0.0));

    Matrix uniform_plan(2, 3, 1.0 / 6.0);
    const auto ones = intra_loss_from_cost(plan_of(uniform_plan), Matrix(2, 3, 1.0));
    CHECK(ones.value == doctest::Approx(1.0).epsilon(1e-12));

    const auto frozen = intra_loss_from_cost(plan_of(Matrix::from_rows({{0.5, 0.0}, {0.0, 0.5}})),
                                             Matrix::from_rows({{0.2, 1.8}, {1.8, 0.2}}));
    CHECK(frozen.value == doctest::Approx(0.2).epsilon(1e-9));

    CHECK_THROWS_AS(intra_loss_from_cost(plan_of(Matrix(2, 2)), Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("inter loss closed forms") {
    // Single source sample: the sample-axis softmax is 1, so the loss is 0.
    Matrix single(2, 1, 1.0);
    const auto zero = inter_loss(single, {0});
    CHECK(zero.value == doctest::Approx(0.0).epsilon(1e-12));

    // Two same-class samples equidistant from the prototype: ln 2 per sample.
    Matrix halves(1, 2, 0.5);
    const auto ln2 = inter_loss(halves, {0, 0});
    CHECK(ln2.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    CHECK_THROWS_AS(inter_loss(halves, {0, 5}), std::invalid_argument);
}

TEST_CASE("inter alignment on the stated geometry") {
    // Prototypes e0, e1; samples f0 = e0, f1 = e1; labels (0, 1); T1 = 0.05.
    const Matrix protos = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const auto store = PrototypeSet::init(protos, {0, 1}, 2, 0.9);
    const Matrix feats = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const auto res = inter_alignment_loss(feats, {0, 1}, store, SimilarityConfig{0.05});

    // Direct evaluation: each correct entry is e^20/(e^20+1).
    const double e20 = std::exp(20.0);
    const double expected = -std::log(e20 / (e20 + 1.0)); // per sample, twice, averaged
    CHECK(res.value == doctest::Approx(expected).epsilon(1e-9));
    CHECK(res.value == doctest::Approx(2.0611536e-9).epsilon(1e-3));
}

TEST_CASE("dual consistency closed forms") {
    // One one-hot sample per class, weak == strong: R = I/..., phi(R) = I, loss 0.
    const Matrix onehot = Matrix::identity(3);
    const auto zero = dual_consistency_loss(onehot, onehot, onehot, onehot);
    CHECK(zero.value == doctest::Approx(0.0).epsilon(1e-12));

    // Single uniform sample with C = 2 in all four roles: loss = 2.
    const Matrix half = Matrix::from_rows({{0.5, 0.5}});
    const auto two = dual_consistency_loss(half, half, half, half);
    CHECK(two.value == doctest::Approx(2.0).epsilon(1e-9));

    // A class absent from the batch: the zero correlation row falls back to
    // uniform and contributes 2(C-1)/C per norm term.
    const Matrix only0 = Matrix::from_rows({{1.0, 0.0}});
    const auto absent = dual_consistency_loss(only0, only0, only0, only0);
    // R = [[1,0],[0,0]]: phi rows (1,0) and (0.5,0.5) -> |phi(R)-I| = 0 + 1;
    // same for the transpose and the prototype half: (1/4) * 4 * 1 = 1.
    CHECK(absent.value == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(dual_consistency_loss(half, half, half, Matrix(2, 2)), std::invalid_argument);
}

TEST_CASE("dual consistency symmetry, bounds and halves") {
    Rng rng(419);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 1 + rng.uniform_index(6);
        const std::size_t c = 2 + rng.uniform_index(4);
        const Matrix pw = random_probs(rng, n, c);
        const Matrix ps = random_probs(rng, n, c);
        const Matrix sw = random_probs(rng, n, c);
        const Matrix ss = random_probs(rng, n, c);
        const auto fwd = dual_consistency_loss(pw, ps, sw, ss);
        const auto swapped = dual_consistency_loss(ps, pw, ss, sw);
        CHECK(fwd.value >= 0.0);
        CHECK(fwd.value <= 4.0);
        CHECK(std::abs(fwd.value - swapped.value) < 1e-12);

        const auto linear = dual_consistency_loss(pw, ps, sw, ss, true, false);
        const auto proto = dual_consistency_loss(pw, ps, sw, ss, false, true);
        CHECK(linear.value + proto.value == doctest::Approx(fwd.value).epsilon(1e-12));
        CHECK(frobenius_inner(proto.d_weak_sharpened, proto.d_weak_sharpened) == doctest::Approx(0.0));
    }
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(421);
    const std::size_t c = 3, n = 5, d = 4;

    // base loss over its three prob inputs
    const Matrix ps = random_probs(rng, 4, c);
    const Matrix pl = random_probs(rng, 3, c);
    const Matrix pw = random_probs(rng, n, c);
    const Matrix pu = random_probs(rng, n, c);
    const std::vector<int> ys{0, 1, 2, 0};
    const std::vector<int> yl{2, 1, 0};
    const double tau1 = 0.5;
    const auto base = base_loss(ps, ys, pl, yl, pw, pu, tau1);
    CHECK(testutil::max_rel_err(base.d_source_probs,
                                testutil::central_difference(ps, [&](const Matrix& x) {
                                    return base_loss(x, ys, pl, yl, pw, pu, tau1).value;
                                })) < 1e-5);
    CHECK(testutil::max_rel_err(base.d_strong_probs,
                                testutil::central_difference(pu, [&](const Matrix& x) {
                                    return base_loss(ps, ys, pl, yl, pw, x, tau1).value;
                                })) < 1e-5);

    // intra loss over features and prototypes
    Matrix plan_m(c, n);
    for (double& v : plan_m.data()) v = rng.uniform(0.01, 1.0);
    double total = 0.0;
    for (double v : plan_m.data()) total += v;
    for (double& v : plan_m.data()) v /= total;
    const TransportPlan plan = plan_of(plan_m);
    Matrix feats(n, d), protos(c, d);
    for (double& v : feats.data()) v = rng.normal();
    for (double& v : protos.data()) v = rng.normal();
    const auto intra = intra_loss(plan, feats, protos);
    CHECK(testutil::max_rel_err(intra.d_strong_features,
                                testutil::central_difference(feats, [&](const Matrix& x) {
                                    return intra_loss(plan, x, protos).value;
                                })) < 1e-6);
    CHECK(testutil::max_rel_err(intra.d_prototypes,
                                testutil::central_difference(protos, [&](const Matrix& x) {
                                    return intra_loss(plan, feats, x).value;
                                })) < 1e-6);

    // inter loss at the similarity-matrix level
    const Matrix sim = random_probs(rng, n, c).transposed(); // columns per sample
    const std::vector<int> labels{0, 1, 2, 1, 0};
    const auto inter = inter_loss(sim, labels);
    CHECK(testutil::max_rel_err(inter.d_similarity,
                                testutil::central_difference(sim, [&](const Matrix& x) {
                                    return inter_loss(x, labels).value;
                                })) < 1e-5);

    // dual consistency over all four inputs
    const Matrix a = random_probs(rng, n, c), b = random_probs(rng, n, c);
    const Matrix e = random_probs(rng, n, c), f = random_probs(rng, n, c);
    const auto dual = dual_consistency_loss(a, b, e, f);
    CHECK(testutil::max_rel_err(dual.d_weak_sharpened,
                                testutil::central_difference(a, [&](const Matrix& x) {
                                    return dual_consistency_loss(x, b, e, f).value;
                                })) < 1e-5);
    CHECK(testutil::max_rel_err(dual.d_strong_similarity,
                                testutil::central_difference(f, [&](const Matrix& x) {
                                    return dual_consistency_loss(a, b, e, x).value;
                                })) < 1e-5);
}
