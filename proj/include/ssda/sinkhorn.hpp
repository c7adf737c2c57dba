#pragma once

#include "ssda/matrix.hpp"
#include "ssda/prototypes.hpp"

#include <cstddef>

namespace ssda {

/// Entropic OT instance: cost (K×M), strictly positive marginals summing to
/// 1 on both sides, regularization strength and iteration budget.
struct TransportProblem {
    Matrix cost;
    Vec row_marginal;
    Vec col_marginal;
    double epsilon = 0.05;
    std::size_t max_iters = 1000;
    double tolerance = 1e-6;
    /// Reserved: marginal-relaxed solving is not implemented; the solver
    /// rejects problems that request it.
    bool unbalanced = false;
};

/// Coupling plan with marginal-residual certificates. `converged == false`
/// means the iteration budget ran out; the best iterate is still returned.
struct TransportPlan {
    Matrix plan;
    double row_residual = 0.0;
    double col_residual = 0.0;
    std::size_t iterations_used = 0;
    bool converged = false;
};

/// Prototype-to-sample cost: C[k][j] = 1 - c_kᵀ f_j. With unit-norm inputs
/// every entry lies in [0,2].
Matrix build_cost_matrix(const Matrix& prototypes, const Matrix& features);
Matrix build_cost_matrix(const PrototypeSet& prototypes, const Matrix& features);

/// Entropically regularized OT via Sinkhorn-Knopp scaling in log space.
/// Minimizes <plan,cost>_F + epsilon*KL(plan || row⊗col) over couplings with
/// the prescribed marginals. Throws on invalid epsilon, non-finite costs or
/// degenerate marginals; returns converged=false when max_iters runs out.
TransportPlan solve_sinkhorn(const TransportProblem& problem);

/// Exact unregularized optimum by enumerating the basic feasible solutions
/// (spanning-tree bases) of the transportation polytope. Test oracle;
/// restricted to instances with rows*cols <= 16.
TransportPlan solve_exact_lp(const Matrix& cost, const Vec& row_marginal, const Vec& col_marginal);

/// Argmax over classes of one plan column; ties break to the lowest class
/// index. Throws on an all-zero column (degenerate plan).
std::size_t plan_column_argmax(const TransportPlan& plan, std::size_t column);
std::size_t plan_column_argmax(const Matrix& plan, std::size_t column);

} // namespace ssda
