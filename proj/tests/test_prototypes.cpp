#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssda/linalg.hpp"
#include "ssda/prototypes.hpp"
#include "ssda/rng.hpp"

#include "fd_util.hpp"

#include <cmath>

using namespace ssda;

namespace {

Matrix random_unit_rows(Rng& rng, std::size_t n, std::size_t d) {
    Matrix m(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        while (norm < 1e-6) {
            for (std::size_t j = 0; j < d; ++j) m(i, j) = rng.normal();
            norm = l2_norm(m.row(i));
        }
        for (std::size_t j = 0; j < d; ++j) m(i, j) /= norm;
    }
    return m;
}

} // namespace

TEST_CASE("prototype initialization") {
    // 1-shot: the prototype is the single labeled feature.
    const Matrix one = Matrix::from_rows({{0.6, 0.8}, {0.0, 1.0}});
    const auto store1 = PrototypeSet::init(one, {0, 1}, 2, 0.9);
    CHECK(store1.prototype(0)[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(store1.prototype(0)[1] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(store1.all_initialized());

    // Two identical features per class keep the feature.
    const Matrix dup = Matrix::from_rows({{1.0, 0.0}, {1.0, 0.0}});
    const auto store2 = PrototypeSet::init(dup, {0, 0}, 1, 0.9);
    CHECK(store2.prototype(0)[0] == doctest::Approx(1.0));

    // Mean of (1,0) and (0,1) renormalizes to (1,1)/sqrt(2).
    const Matrix mix = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const auto store3 = PrototypeSet::init(mix, {0, 0}, 1, 0.9);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(store3.prototype(0)[0] == doctest::Approx(inv_sqrt2).epsilon(1e-12));
    CHECK(store3.prototype(0)[1] == doctest::Approx(inv_sqrt2).epsilon(1e-12));
    CHECK(store3.prototype(0)[0] == doctest::Approx(0.7071).epsilon(1e-4));

    CHECK_THROWS_AS(PrototypeSet::init(mix, {0, 0}, 2, 0.9), std::invalid_argument); // class 1 empty
    CHECK_THROWS_AS(PrototypeSet::init(mix, {0, 0}, 1, 1.0), std::invalid_argument); // bad momentum
}

TEST_CASE("EMA update") {
    const Matrix feats = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    auto store = PrototypeSet::init(feats, {0, 1}, 2, 0.9);

    // Fixed point: batch mean equal to the prototype leaves it unchanged.
    const auto same = ema_update(store, Matrix::from_rows({{1.0, 0.0}}), {0});
    CHECK(same.prototype(0)[0] == doctest::Approx(1.0).epsilon(1e-12));

    // Classes absent from the batch keep their prototype bit for bit.
    CHECK(same.prototype(1)[0] == store.prototype(1)[0]);
    CHECK(same.prototype(1)[1] == store.prototype(1)[1]);

    // Blend (1,0) with (0,1) at alpha 0.9: (0.9,0.1) renormalized.
    const auto blended = ema_update(store, Matrix::from_rows({{0.0, 1.0}}), {0});
    const double norm = std::sqrt(0.9 * 0.9 + 0.1 * 0.1);
    CHECK(blended.prototype(0)[0] == doctest::Approx(0.9 / norm).epsilon(1e-12));
    CHECK(blended.prototype(0)[1] == doctest::Approx(0.1 / norm).epsilon(1e-12));
    CHECK(blended.prototype(0)[0] == doctest::Approx(0.9939).epsilon(1e-4));
    CHECK(blended.prototype(0)[1] == doctest::Approx(0.1104).epsilon(1e-4));

    CHECK_THROWS_AS(ema_update(store, Matrix::from_rows({{1.0, 0.0}}), {7}), std::invalid_argument);
}

TEST_CASE("prototypes remain unit norm under arbitrary update sequences") {
    Rng rng(211);
    const std::size_t c = 3, d = 6;
    auto store = PrototypeSet::init(random_unit_rows(rng, c, d), {0, 1, 2}, c, 0.9);
    for (int step = 0; step < 200; ++step) {
        const std::size_t n = 1 + rng.uniform_index(5);
        const Matrix batch = random_unit_rows(rng, n, d);
        std::vector<int> labels(n);
        for (auto& y : labels) y = static_cast<int>(rng.uniform_index(c));
        store = ema_update(store, batch, labels);
        for (std::size_t k = 0; k < c; ++k) {
            CHECK(std::abs(l2_norm(store.prototype(k)) - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("repeated updates with a fixed mean contract geometrically") {
    const Matrix init = Matrix::from_rows({{1.0, 0.0}});
    auto store = PrototypeSet::init(init, {0}, 1, 0.9);
    const Matrix target = Matrix::from_rows({{0.0, 1.0}}); // orthogonal target mean

    double initial = 1.0 - cosine_similarity(store.prototype(0), target.row(0));
    double previous = initial;
    for (int step = 0; step < 50; ++step) {
        store = ema_update(store, target, {0});
        const double dist = 1.0 - cosine_similarity(store.prototype(0), target.row(0));
        CHECK(dist <= previous + 1e-15);
        previous = dist;
    }
    CHECK(previous <= 1e-2 * initial);
}

TEST_CASE("similarity softmax over the sample axis") {
    const Matrix protos = Matrix::from_rows({{1.0, 0.0}});
    auto store = PrototypeSet::init(protos, {0}, 1, 0.9);
    const SimilarityConfig cfg{0.05};

    // Single sample: a one-element softmax is 1.
    const Matrix single = similarity_softmax_over_samples(store, Matrix::from_rows({{0.3, 0.7}}), cfg);
    CHECK(single(0, 0) == doctest::Approx(1.0));

    // Two samples equidistant from the prototype split the row evenly.
    const Matrix equi = similarity_softmax_over_samples(
        store, Matrix::from_rows({{0.6, 0.8}, {0.6, -0.8}}), cfg);
    CHECK(equi(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(equi(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

    // Similarities (1, 0) at T1=0.05: e^20 / (e^20 + 1) per direct evaluation.
    const Matrix far = similarity_softmax_over_samples(
        store, Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}}), cfg);
    const double e20 = std::exp(20.0);
    CHECK(far(0, 0) == doctest::Approx(e20 / (e20 + 1.0)).epsilon(1e-12));
    CHECK(far(0, 1) == doctest::Approx(1.0 / (e20 + 1.0)).epsilon(1e-9));
    CHECK(far(0, 1) == doctest::Approx(2.0611536e-9).epsilon(1e-3));

    CHECK_THROWS_AS(similarity_softmax_over_samples(store, Matrix(0, 2), cfg), std::invalid_argument);
}

TEST_CASE("similarity softmax over the class axis") {
    const Matrix protos = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    auto store = PrototypeSet::init(protos, {0, 1}, 2, 0.9);
    const SimilarityConfig cfg{0.05};

    const Matrix s = similarity_softmax_over_classes(store, Matrix::from_rows({{1.0, 0.0}}), cfg);
    const double e20 = std::exp(20.0);
    CHECK(s(0, 0) == doctest::Approx(e20 / (e20 + 1.0)).epsilon(1e-12));
    CHECK(s(0, 1) == doctest::Approx(1.0 / (e20 + 1.0)).epsilon(1e-9));

    // Equidistant feature gives the uniform row.
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    const Matrix u = similarity_softmax_over_classes(
        store, Matrix::from_rows({{inv_sqrt2, inv_sqrt2}}), cfg);
    CHECK(u(0, 0) == doctest::Approx(0.5).epsilon(1e-12));

    // One class: every row is (1.0).
    auto store1 = PrototypeSet::init(Matrix::from_rows({{1.0, 0.0}}), {0}, 1, 0.9);
    const Matrix ones = similarity_softmax_over_classes(store1, Matrix::from_rows({{0.0, 1.0}}), cfg);
    CHECK(ones(0, 0) == doctest::Approx(1.0));

    PrototypeSet uninit(2, 2, 0.9);
    CHECK_THROWS_AS(similarity_softmax_over_classes(uninit, Matrix::from_rows({{1.0, 0.0}}), cfg),
                    std::invalid_argument);
}

TEST_CASE("class-axis argmax matches nearest prototype for any temperature") {
    Rng rng(223);
    const std::size_t c = 4, d = 5, n = 12;
    auto store = PrototypeSet::init(random_unit_rows(rng, c, d), {0, 1, 2, 3}, c, 0.9);
    const Matrix feats = random_unit_rows(rng, n, d);
    std::vector<std::size_t> nearest(n);
    for (std::size_t i = 0; i < n; ++i) {
        double best = -2.0;
        for (std::size_t k = 0; k < c; ++k) {
            const double sim = cosine_similarity(feats.row(i), store.prototype(k));
            if (sim > best) {
                best = sim;
                nearest[i] = k;
            }
        }
    }
    for (double t1 : {0.05, 0.5, 5.0}) {
        const Matrix s = similarity_softmax_over_classes(store, feats, SimilarityConfig{t1});
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t arg = 0;
            double row_sum = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                row_sum += s(i, k);
                if (s(i, k) > s(i, arg)) arg = k;
            }
            CHECK(arg == nearest[i]);
            CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("sample-axis rows are stochastic") {
    Rng rng(227);
    auto store = PrototypeSet::init(random_unit_rows(rng, 3, 4), {0, 1, 2}, 3, 0.9);
    const Matrix feats = random_unit_rows(rng, 9, 4);
    const Matrix s = similarity_softmax_over_samples(store, feats, SimilarityConfig{0.05});
    for (std::size_t k = 0; k < 3; ++k) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 9; ++i) sum += s(k, i);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("similarity backward passes agree with finite differences") {
    Rng rng(229);
    const std::size_t c = 3, d = 4, n = 5;
    auto store = PrototypeSet::init(random_unit_rows(rng, c, d), {0, 1, 2}, c, 0.9);
    const SimilarityConfig cfg{0.3};
    const Matrix feats = random_unit_rows(rng, n, d);

    Matrix up_samples(c, n);
    for (double& v : up_samples.data()) v = rng.normal();
    const Matrix out_s = similarity_softmax_over_samples(store, feats, cfg);
    const auto back_s = similarity_softmax_over_samples_backward(store, feats, cfg, out_s, up_samples);
    const Matrix fd_s = testutil::central_difference(feats, [&](const Matrix& x) {
        return frobenius_inner(similarity_softmax_over_samples(store, x, cfg), up_samples);
    });
    CHECK(testutil::max_rel_err(back_s.d_features, fd_s) < 1e-5);

    Matrix up_classes(n, c);
    for (double& v : up_classes.data()) v = rng.normal();
    const Matrix out_c = similarity_softmax_over_classes(store, feats, cfg);
    const auto back_c = similarity_softmax_over_classes_backward(store, feats, cfg, out_c, up_classes);
    const Matrix fd_c = testutil::central_difference(feats, [&](const Matrix& x) {
        return frobenius_inner(similarity_softmax_over_classes(store, x, cfg), up_classes);
    });
    CHECK(testutil::max_rel_err(back_c.d_features, fd_c) < 1e-5);
}
