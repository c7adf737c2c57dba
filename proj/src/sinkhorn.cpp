#include "ssda/sinkhorn.hpp"

#include "ssda/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ssda {

Matrix build_cost_matrix(const Matrix& prototypes, const Matrix& features) {
    if (prototypes.cols() != features.cols()) {
        throw std::invalid_argument("build_cost_matrix: feature dimension mismatch");
    }
    Matrix cost(prototypes.rows(), features.rows());
    for (std::size_t k = 0; k < prototypes.rows(); ++k) {
        for (std::size_t j = 0; j < features.rows(); ++j) {
            cost(k, j) = 1.0 - dot(prototypes.row(k), features.row(j));
        }
    }
    return cost;
}

Matrix build_cost_matrix(const PrototypeSet& prototypes, const Matrix& features) {
    return build_cost_matrix(prototypes.matrix(), features);
}

namespace {

void check_marginals(const Vec& row_marginal, const Vec& col_marginal, std::size_t k,
                     std::size_t m, const char* what) {
    if (row_marginal.size() != k || col_marginal.size() != m) {
        throw std::invalid_argument(std::string(what) + ": marginal lengths do not match the cost");
    }
    double row_sum = 0.0;
    double col_sum = 0.0;
    for (double v : row_marginal) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument(std::string(what) + ": degenerate row marginal");
        }
        row_sum += v;
    }
    for (double v : col_marginal) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw std::invalid_argument(std::string(what) + ": degenerate column marginal");
        }
        col_sum += v;
    }
    if (std::abs(row_sum - 1.0) > 1e-9 || std::abs(col_sum - 1.0) > 1e-9) {
        throw std::invalid_argument(std::string(what) + ": marginals must each sum to 1");
    }
}

double log_sum_exp(const Vec& v) {
    const double mx = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

struct Residuals {
    double row = 0.0;
    double col = 0.0;
    double max() const { return std::max(row, col); }
};

Residuals marginal_residuals(const Matrix& plan, const Vec& row_marginal, const Vec& col_marginal) {
    Residuals r;
    for (std::size_t i = 0; i < plan.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < plan.cols(); ++j) s += plan(i, j);
        r.row = std::max(r.row, std::abs(s - row_marginal[i]));
    }
    for (std::size_t j = 0; j < plan.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < plan.rows(); ++i) s += plan(i, j);
        r.col = std::max(r.col, std::abs(s - col_marginal[j]));
    }
    return r;
}

} // namespace

TransportPlan solve_sinkhorn(const TransportProblem& problem) {
    const std::size_t k = problem.cost.rows();
    const std::size_t m = problem.cost.cols();
    if (k == 0 || m == 0) throw std::invalid_argument("solve_sinkhorn: empty cost matrix");
    if (problem.unbalanced) {
        throw std::invalid_argument("solve_sinkhorn: unbalanced marginals are not implemented");
    }
    if (!(problem.epsilon > 0.0)) throw std::invalid_argument("solve_sinkhorn: epsilon must be > 0");
    if (!problem.cost.all_finite()) throw std::invalid_argument("solve_sinkhorn: non-finite cost");
    check_marginals(problem.row_marginal, problem.col_marginal, k, m, "solve_sinkhorn");

    // Gibbs kernel in log space: log K = -C/eps; scaling vectors log u, log v.
    Matrix log_kernel(k, m);
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < m; ++j) log_kernel(i, j) = -problem.cost(i, j) / problem.epsilon;
    }
    Vec log_mu_row(k), log_mu_col(m);
    for (std::size_t i = 0; i < k; ++i) log_mu_row[i] = std::log(problem.row_marginal[i]);
    for (std::size_t j = 0; j < m; ++j) log_mu_col[j] = std::log(problem.col_marginal[j]);

    Vec log_u(k, 0.0), log_v(m, 0.0);
    Vec scratch_row(m), scratch_col(k);

    auto materialize = [&](Matrix& plan) {
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
                plan(i, j) = std::exp(log_u[i] + log_kernel(i, j) + log_v[j]);
            }
        }
    };

    TransportPlan best;
    best.plan = Matrix(k, m);
    double best_residual = std::numeric_limits<double>::infinity();
    Matrix plan(k, m);

    std::size_t iter = 0;
    for (iter = 1; iter <= problem.max_iters; ++iter) {
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < m; ++j) scratch_row[j] = log_kernel(i, j) + log_v[j];
            log_u[i] = log_mu_row[i] - log_sum_exp(scratch_row);
        }
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t i = 0; i < k; ++i) scratch_col[i] = log_kernel(i, j) + log_u[i];
            log_v[j] = log_mu_col[j] - log_sum_exp(scratch_col);
        }
        materialize(plan);
        const Residuals res = marginal_residuals(plan, problem.row_marginal, problem.col_marginal);
        if (res.max() < best_residual) {
            best_residual = res.max();
            best.plan = plan;
            best.row_residual = res.row;
            best.col_residual = res.col;
            best.iterations_used = iter;
        }
        if (res.max() <= problem.tolerance) {
            best.converged = true;
            break;
        }
    }
    if (!best.converged) best.iterations_used = problem.max_iters;
    return best;
}

namespace {

// Solve the flow on a spanning-tree basis by repeated leaf elimination.
// Returns false when any basic variable turns negative (infeasible vertex).
bool solve_tree_basis(const std::vector<std::size_t>& cells, std::size_t k, std::size_t m,
                      const Vec& row_marginal, const Vec& col_marginal, Vec& values) {
    const std::size_t nodes = k + m;
    std::vector<int> degree(nodes, 0);
    std::vector<std::vector<std::size_t>> incident(nodes);
    for (std::size_t e = 0; e < cells.size(); ++e) {
        const std::size_t r = cells[e] / m;
        const std::size_t c = k + cells[e] % m;
        ++degree[r];
        ++degree[c];
        incident[r].push_back(e);
        incident[c].push_back(e);
    }
    Vec remaining(nodes);
    for (std::size_t i = 0; i < k; ++i) remaining[i] = row_marginal[i];
    for (std::size_t j = 0; j < m; ++j) remaining[k + j] = col_marginal[j];

    values.assign(cells.size(), 0.0);
    std::vector<bool> edge_done(cells.size(), false);
    std::vector<std::size_t> leaves;
    for (std::size_t n = 0; n < nodes; ++n) {
        if (degree[n] == 1) leaves.push_back(n);
    }
    std::size_t processed = 0;
    while (!leaves.empty()) {
        const std::size_t leaf = leaves.back();
        leaves.pop_back();
        if (degree[leaf] != 1) continue;
        std::size_t edge = 0;
        bool found = false;
        for (std::size_t e : incident[leaf]) {
            if (!edge_done[e]) {
                edge = e;
                found = true;
                break;
            }
        }
        if (!found) continue;
        const std::size_t r = cells[edge] / m;
        const std::size_t c = k + cells[edge] % m;
        const std::size_t other = (leaf == r) ? c : r;
        const double x = remaining[leaf];
        if (x < -1e-12) return false;
        values[edge] = std::max(x, 0.0);
        remaining[leaf] = 0.0;
        remaining[other] -= values[edge];
        edge_done[edge] = true;
        --degree[leaf];
        --degree[other];
        ++processed;
        if (degree[other] == 1) leaves.push_back(other);
    }
    if (processed != cells.size()) return false; // cycle: not a tree basis
    for (double rem : remaining) {
        if (std::abs(rem) > 1e-9) return false;
    }
    return true;
}

} // namespace

TransportPlan solve_exact_lp(const Matrix& cost, const Vec& row_marginal, const Vec& col_marginal) {
    const std::size_t k = cost.rows();
    const std::size_t m = cost.cols();
    if (k == 0 || m == 0) throw std::invalid_argument("solve_exact_lp: empty cost matrix");
    if (k * m > 16) {
        throw std::invalid_argument("solve_exact_lp: instance too large (rows*cols must be <= 16)");
    }
    if (!cost.all_finite()) throw std::invalid_argument("solve_exact_lp: non-finite cost");
    check_marginals(row_marginal, col_marginal, k, m, "solve_exact_lp");

    const std::size_t cells = k * m;
    const std::size_t basis_size = k + m - 1;

    std::vector<std::size_t> combo(basis_size);
    std::iota(combo.begin(), combo.end(), 0);

    double best_objective = std::numeric_limits<double>::infinity();
    Matrix best_plan(k, m);
    std::size_t vertices_checked = 0;
    Vec values;

    auto evaluate = [&](const std::vector<std::size_t>& basis) {
        if (!solve_tree_basis(basis, k, m, row_marginal, col_marginal, values)) return;
        ++vertices_checked;
        double objective = 0.0;
        for (std::size_t e = 0; e < basis.size(); ++e) {
            objective += values[e] * cost.data()[basis[e]];
        }
        if (objective < best_objective) {
            best_objective = objective;
            best_plan = Matrix(k, m);
            for (std::size_t e = 0; e < basis.size(); ++e) {
                best_plan.data()[basis[e]] = values[e];
            }
        }
    };

    // Enumerate all cell subsets of size k+m-1 in lexicographic order.
    while (true) {
        evaluate(combo);
        std::size_t i = basis_size;
        while (i > 0 && combo[i - 1] == cells - basis_size + i - 1) --i;
        if (i == 0) break;
        ++combo[i - 1];
        for (std::size_t j = i; j < basis_size; ++j) combo[j] = combo[j - 1] + 1;
    }

    TransportPlan result;
    result.plan = best_plan;
    const auto res = marginal_residuals(best_plan, row_marginal, col_marginal);
    result.row_residual = res.row;
    result.col_residual = res.col;
    result.iterations_used = vertices_checked;
    result.converged = true;
    return result;
}

std::size_t plan_column_argmax(const Matrix& plan, std::size_t column) {
    if (column >= plan.cols()) throw std::invalid_argument("plan_column_argmax: column out of range");
    std::size_t arg = 0;
    double best = -std::numeric_limits<double>::infinity();
    bool any_positive = false;
    for (std::size_t i = 0; i < plan.rows(); ++i) {
        const double v = plan(i, column);
        if (v > 0.0) any_positive = true;
        if (v > best) {
            best = v;
            arg = i;
        }
    }
    if (!any_positive) throw std::invalid_argument("plan_column_argmax: all-zero column (degenerate plan)");
    return arg;
}

std::size_t plan_column_argmax(const TransportPlan& plan, std::size_t column) {
    return plan_column_argmax(plan.plan, column);
}

} // namespace ssda
