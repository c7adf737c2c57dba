#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ssda/linalg.hpp"
#include "ssda/rng.hpp"
#include "ssda/sinkhorn.hpp"

#include <cmath>
#include <limits>

using namespace ssda;

namespace {

TransportProblem make_problem(Matrix cost, Vec row, Vec col, double eps, std::size_t iters = 20000,
                              double tol = 1e-9) {
    TransportProblem p;
    p.cost = std::move(cost);
    p.row_marginal = std::move(row);
    p.col_marginal = std::move(col);
    p.epsilon = eps;
    p.max_iters = iters;
    p.tolerance = tol;
    return p;
}

Vec uniform(std::size_t n) { return Vec(n, 1.0 / static_cast<double>(n)); }

Vec random_marginal(Rng& rng, std::size_t n) {
    Vec m(n);
    double sum = 0.0;
    for (double& v : m) {
        v = rng.uniform(0.4, 1.6);
        sum += v;
    }
    for (double& v : m) v /= sum;
    return m;
}

} // namespace

TEST_CASE("cost matrix from unit vectors") {
    const Matrix protos = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const Matrix feats = Matrix::from_rows({{1.0, 0.0}, {-1.0, 0.0}});
    const Matrix cost = build_cost_matrix(protos, feats);
    CHECK(cost(0, 0) == doctest::Approx(0.0)); // identical
    CHECK(cost(1, 0) == doctest::Approx(1.0)); // orthogonal
    CHECK(cost(0, 1) == doctest::Approx(2.0)); // antipodal
    CHECK_THROWS_AS(build_cost_matrix(protos, Matrix(1, 3)), std::invalid_argument);
}

TEST_CASE("sinkhorn on the zero-cost instance returns the product coupling") {
    const auto plan = solve_sinkhorn(make_problem(Matrix(2, 3), uniform(2), uniform(3), 0.5));
    CHECK(plan.converged);
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(plan.plan(i, j) == doctest::Approx(1.0 / 6.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("single-row problem is forced by the column marginal") {
    Matrix cost(1, 4);
    cost.data() = {0.3, 0.9, 0.1, 0.5};
    const Vec nu{0.1, 0.2, 0.3, 0.4};
    const auto plan = solve_sinkhorn(make_problem(cost, Vec{1.0}, nu, 0.05));
    CHECK(plan.converged);
    for (std::size_t j = 0; j < 4; ++j) CHECK(plan.plan(0, j) == doctest::Approx(nu[j]).epsilon(1e-8));
}

TEST_CASE("small-epsilon plan approaches the exact LP vertex") {
    const Matrix cost = Matrix::from_rows({{0.0, 1.0}, {1.0, 0.0}});
    const auto sink = solve_sinkhorn(make_problem(cost, uniform(2), uniform(2), 0.01));
    const auto exact = solve_exact_lp(cost, uniform(2), uniform(2));
    CHECK(sink.converged);
    CHECK(exact.plan(0, 0) == doctest::Approx(0.5));
    CHECK(exact.plan(1, 1) == doctest::Approx(0.5));
    CHECK(exact.plan(0, 1) == doctest::Approx(0.0));
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(sink.plan.data()[i] - exact.plan.data()[i]) < 1e-3);
    }
}

TEST_CASE("sinkhorn rejects degenerate problems") {
    const Matrix cost(2, 2);
    CHECK_THROWS_AS(solve_sinkhorn(make_problem(cost, uniform(2), uniform(2), 0.0)),
                    std::invalid_argument);
    CHECK_THROWS_AS(solve_sinkhorn(make_problem(cost, Vec{0.5, 0.6}, uniform(2), 0.1)),
                    std::invalid_argument); // sums differ
    CHECK_THROWS_AS(solve_sinkhorn(make_problem(cost, Vec{1.0, 0.0}, uniform(2), 0.1)),
                    std::invalid_argument); // zero marginal entry
    Matrix bad(2, 2);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(solve_sinkhorn(make_problem(bad, uniform(2), uniform(2), 0.1)),
                    std::invalid_argument);

    // marginal relaxation is a reserved hook, not a silent fallback
    TransportProblem relaxed = make_problem(Matrix(2, 2), uniform(2), uniform(2), 0.1);
    relaxed.unbalanced = true;
    CHECK_THROWS_AS(solve_sinkhorn(relaxed), std::invalid_argument);
}

TEST_CASE("non-convergence is flagged, not thrown") {
    // asymmetric instance, one iteration, impossible tolerance
    const Matrix cost = Matrix::from_rows({{0.0, 0.9}, {0.3, 0.2}});
    const auto plan =
        solve_sinkhorn(make_problem(cost, Vec{0.2, 0.8}, Vec{0.7, 0.3}, 0.05, 1, 1e-14));
    CHECK_FALSE(plan.converged);
    CHECK(plan.iterations_used == 1);
    CHECK(plan.plan.all_finite());
}

TEST_CASE("exact LP oracle basics") {
    const auto one = solve_exact_lp(Matrix::from_rows({{0.7}}), Vec{1.0}, Vec{1.0});
    CHECK(one.plan(0, 0) == doctest::Approx(1.0));

    const auto zero = solve_exact_lp(Matrix(2, 2), uniform(2), uniform(2));
    CHECK(frobenius_inner(zero.plan, Matrix(2, 2)) == doctest::Approx(0.0)); // objective 0

    const auto diag = solve_exact_lp(Matrix::from_rows({{0.0, 1.0}, {1.0, 0.0}}), uniform(2), uniform(2));
    CHECK(diag.plan(0, 0) == doctest::Approx(0.5));
    CHECK(diag.plan(1, 1) == doctest::Approx(0.5));

    CHECK_THROWS_AS(solve_exact_lp(Matrix(5, 4), uniform(5), uniform(4)), std::invalid_argument);
}

TEST_CASE("converged plans satisfy their marginal certificates") {
    Rng rng(101);
    for (int rep = 0; rep < 40; ++rep) {
        const std::size_t k = 1 + rng.uniform_index(4);
        const std::size_t m = 1 + rng.uniform_index(4);
        Matrix cost(k, m);
        for (double& v : cost.data()) v = rng.uniform(0.0, 2.0);
        const Vec mu_row = random_marginal(rng, k);
        const Vec mu_col = random_marginal(rng, m);
        const auto plan = solve_sinkhorn(make_problem(cost, mu_row, mu_col, 0.1, 50000, 1e-8));
        REQUIRE(plan.converged);
        for (std::size_t i = 0; i < k; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                CHECK(plan.plan(i, j) >= 0.0);
                s += plan.plan(i, j);
            }
            CHECK(std::abs(s - mu_row[i]) <= 1e-8);
        }
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += plan.plan(i, j);
            CHECK(std::abs(s - mu_col[j]) <= 1e-8);
        }
    }
}

TEST_CASE("entropic objective dominates the exact optimum and the gap shrinks with epsilon") {
    Rng rng(103);
    for (int rep = 0; rep < 5; ++rep) {
        Matrix cost(3, 4);
        for (double& v : cost.data()) v = rng.uniform(0.0, 2.0);
        const Vec mu_row = random_marginal(rng, 3);
        const Vec mu_col = random_marginal(rng, 4);
        const auto exact = solve_exact_lp(cost, mu_row, mu_col);
        const double exact_cost = frobenius_inner(exact.plan, cost);

        double previous_gap = std::numeric_limits<double>::infinity();
        for (double eps : {1.0, 0.1, 0.01}) {
            const auto plan = solve_sinkhorn(make_problem(cost, mu_row, mu_col, eps, 100000, 1e-9));
            REQUIRE(plan.converged);
            const double cost_sink = frobenius_inner(plan.plan, cost);
            CHECK(cost_sink >= exact_cost - 1e-9);
            const double gap = cost_sink - exact_cost;
            CHECK(gap <= previous_gap + 1e-9);
            previous_gap = gap;
        }
        CHECK(previous_gap < 0.05); // epsilon = 0.01 sits close to the vertex
    }
}

TEST_CASE("permuting cost rows permutes the plan rows identically") {
    Rng rng(107);
    Matrix cost(3, 4);
    for (double& v : cost.data()) v = rng.uniform(0.0, 2.0);
    const Vec mu_row = random_marginal(rng, 3);
    const Vec mu_col = random_marginal(rng, 4);
    const std::size_t perm[3] = {2, 0, 1};

    Matrix cost_p(3, 4);
    Vec mu_row_p(3);
    for (std::size_t i = 0; i < 3; ++i) {
        mu_row_p[i] = mu_row[perm[i]];
        for (std::size_t j = 0; j < 4; ++j) cost_p(i, j) = cost(perm[i], j);
    }
    const auto a = solve_sinkhorn(make_problem(cost, mu_row, mu_col, 0.1, 50000, 1e-10));
    const auto b = solve_sinkhorn(make_problem(cost_p, mu_row_p, mu_col, 0.1, 50000, 1e-10));
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(std::abs(b.plan(i, j) - a.plan(perm[i], j)) < 1e-12);
        }
    }
}

TEST_CASE("scaling cost and epsilon together leaves the plan unchanged") {
    Rng rng(109);
    Matrix cost(3, 3);
    for (double& v : cost.data()) v = rng.uniform(0.0, 2.0);
    const double s = 7.3;
    Matrix scaled = cost;
    for (double& v : scaled.data()) v *= s;
    const auto a = solve_sinkhorn(make_problem(cost, uniform(3), uniform(3), 0.05, 50000, 1e-10));
    const auto b = solve_sinkhorn(make_problem(scaled, uniform(3), uniform(3), 0.05 * s, 50000, 1e-10));
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    for (std::size_t i = 0; i < a.plan.size(); ++i) {
        CHECK(std::abs(a.plan.data()[i] - b.plan.data()[i]) < 1e-9);
    }
}

TEST_CASE("plan column argmax with tie-breaks") {
    TransportPlan plan;
    plan.plan = Matrix::from_rows({{0.1, 0.5}, {0.7, 0.5}, {0.2, 0.0}});
    plan.converged = true;
    CHECK(plan_column_argmax(plan, 0) == 1);
    CHECK(plan_column_argmax(plan, 1) == 0); // tie breaks to the lowest index

    TransportPlan uniform_plan;
    uniform_plan.plan = Matrix::from_rows({{0.25, 0.25}, {0.25, 0.25}});
    CHECK(plan_column_argmax(uniform_plan, 1) == 0);

    TransportPlan degenerate;
    degenerate.plan = Matrix(2, 2);
    CHECK_THROWS_AS(plan_column_argmax(degenerate, 0), std::invalid_argument);
    CHECK_THROWS_AS(plan_column_argmax(uniform_plan, 2), std::invalid_argument);
}
