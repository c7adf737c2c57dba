#include "ssda/gradcheck.hpp"

#include "ssda/config.hpp"
#include "ssda/linalg.hpp"
#include "ssda/losses.hpp"
#include "ssda/model.hpp"
#include "ssda/prototypes.hpp"
#include "ssda/rng.hpp"
#include "ssda/sinkhorn.hpp"
#include "ssda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace ssda {

namespace {

// Per-component relative error with an absolute guard for near-zero pairs.
double relative_error(const Matrix& analytic, const Matrix& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic.data()[i];
        const double f = numeric.data()[i];
        const double scale = std::max(std::abs(a), std::abs(f));
        if (scale < 1e-6) {
            if (std::abs(a - f) > 1e-7) worst = std::max(worst, 1.0);
            continue;
        }
        worst = std::max(worst, std::abs(a - f) / scale);
    }
    return worst;
}

// Central finite differences of a scalar function over one matrix input.
Matrix finite_difference(Matrix x, const std::function<double(const Matrix&)>& value, double h) {
    Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + h;
        const double up = value(x);
        x.data()[i] = keep - h;
        const double down = value(x);
        x.data()[i] = keep;
        g.data()[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Row-stochastic matrix with entries bounded away from 0 and from the
// tau-mask boundary used by the base loss checks.
Matrix random_probs(Rng& rng, std::size_t n, std::size_t c) {
    Matrix logits(n, c);
    for (double& v : logits.data()) v = rng.normal();
    Matrix p = row_softmax(logits, 1.0);
    const double mix = 0.1;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
            p(i, j) = (1.0 - mix) * p(i, j) + mix / static_cast<double>(c);
        }
    }
    return p;
}

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

std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t c) {
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(i < c ? i : rng.uniform_index(c)); // cover every class first
    }
    return y;
}

PrototypeSet random_prototypes(Rng& rng, std::size_t c, std::size_t d) {
    const Matrix feats = random_unit_rows(rng, c, d);
    std::vector<int> labels(c);
    for (std::size_t k = 0; k < c; ++k) labels[k] = static_cast<int>(k);
    return PrototypeSet::init(feats, labels, c, 0.9);
}

double max_prob_distance_to(const Matrix& probs, double tau) {
    double dist = 1.0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const auto row = probs.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        dist = std::min(dist, std::abs(mx - tau));
    }
    return dist;
}

struct Checker {
    GradCheckReport report;
    double h;

    void record(const std::string& name, const Matrix& analytic, const Matrix& numeric) {
        const double err = relative_error(analytic, numeric);
        report.entries.push_back({name, err});
        report.worst = std::max(report.worst, err);
    }
};

void check_base_loss(Checker& chk, Rng& rng) {
    const std::size_t c = 3 + rng.uniform_index(2);
    const std::size_t ns = 4, nl = 3, nu = 5;
    const Matrix ps = random_probs(rng, ns, c);
    const Matrix pl = random_probs(rng, nl, c);
    Matrix pw = random_probs(rng, nu, c);
    const Matrix pu = random_probs(rng, nu, c);
    const std::vector<int> ys = random_labels(rng, ns, c);
    const std::vector<int> yl = random_labels(rng, nl, c);
    const double tau1 = 0.5;
    while (max_prob_distance_to(pw, tau1) < 1e-3) pw = random_probs(rng, nu, c);

    const BaseLossResult res = base_loss(ps, ys, pl, yl, pw, pu, tau1);
    chk.record("base_loss/d_source_probs",
               res.d_source_probs,
               finite_difference(ps, [&](const Matrix& x) {
                   return base_loss(x, ys, pl, yl, pw, pu, tau1).value;
               }, chk.h));
    chk.record("base_loss/d_target_probs",
               res.d_target_probs,
               finite_difference(pl, [&](const Matrix& x) {
                   return base_loss(ps, ys, x, yl, pw, pu, tau1).value;
               }, chk.h));
    chk.record("base_loss/d_strong_probs",
               res.d_strong_probs,
               finite_difference(pu, [&](const Matrix& x) {
                   return base_loss(ps, ys, pl, yl, pw, x, tau1).value;
               }, chk.h));
}

void check_intra_loss(Checker& chk, Rng& rng) {
    const std::size_t c = 3, m = 5, d = 4;
    TransportPlan plan;
    plan.plan = Matrix(c, m);
    double total = 0.0;
    for (double& v : plan.plan.data()) {
        v = rng.uniform(0.05, 1.0);
        total += v;
    }
    for (double& v : plan.plan.data()) v /= total;
    plan.converged = true;

    const Matrix feats = random_unit_rows(rng, m, d);
    const Matrix protos = random_unit_rows(rng, c, d);
    const IntraLossResult res = intra_loss(plan, feats, protos);
    chk.record("intra_loss/d_strong_features",
               res.d_strong_features,
               finite_difference(feats, [&](const Matrix& x) {
                   return intra_loss(plan, x, protos).value;
               }, chk.h));
    chk.record("intra_loss/d_prototypes",
               res.d_prototypes,
               finite_difference(protos, [&](const Matrix& x) {
                   return intra_loss(plan, feats, x).value;
               }, chk.h));

    Matrix cost = build_cost_matrix(protos, feats);
    const CostLossResult raw = intra_loss_from_cost(plan, cost);
    chk.record("intra_loss/d_cost",
               raw.d_cost,
               finite_difference(cost, [&](const Matrix& x) {
                   return intra_loss_from_cost(plan, x).value;
               }, chk.h));
}

void check_inter_loss(Checker& chk, Rng& rng) {
    const std::size_t c = 3, n = 5, d = 4;
    const PrototypeSet store = random_prototypes(rng, c, d);
    const SimilarityConfig cfg{0.25}; // moderate temperature keeps FD well-conditioned
    const Matrix feats = random_unit_rows(rng, n, d);
    const std::vector<int> labels = random_labels(rng, n, c);

    const Matrix sim = similarity_softmax_over_samples(store, feats, cfg);
    const InterLossResult on_matrix = inter_loss(sim, labels);
    chk.record("inter_loss/d_similarity",
               on_matrix.d_similarity,
               finite_difference(sim, [&](const Matrix& x) {
                   return inter_loss(x, labels).value;
               }, chk.h));

    const InterAlignmentResult res = inter_alignment_loss(feats, labels, store, cfg);
    chk.record("inter_loss/d_source_features",
               res.d_source_features,
               finite_difference(feats, [&](const Matrix& x) {
                   return inter_alignment_loss(x, labels, store, cfg).value;
               }, chk.h));
}

void check_dual_loss(Checker& chk, Rng& rng) {
    const std::size_t c = 4, n = 6;
    const Matrix pw = random_probs(rng, n, c);
    const Matrix ps = random_probs(rng, n, c);
    const Matrix sw = random_probs(rng, n, c);
    const Matrix ss = random_probs(rng, n, c);
    const DualConsistencyResult res = dual_consistency_loss(pw, ps, sw, ss);
    const auto value_of = [&](const Matrix& a, const Matrix& b, const Matrix& cm, const Matrix& dm) {
        return dual_consistency_loss(a, b, cm, dm).value;
    };
    chk.record("dual_consistency/d_weak_sharpened", res.d_weak_sharpened,
               finite_difference(pw, [&](const Matrix& x) { return value_of(x, ps, sw, ss); }, chk.h));
    chk.record("dual_consistency/d_strong_sharpened", res.d_strong_sharpened,
               finite_difference(ps, [&](const Matrix& x) { return value_of(pw, x, sw, ss); }, chk.h));
    chk.record("dual_consistency/d_weak_similarity", res.d_weak_similarity,
               finite_difference(sw, [&](const Matrix& x) { return value_of(pw, ps, x, ss); }, chk.h));
    chk.record("dual_consistency/d_strong_similarity", res.d_strong_similarity,
               finite_difference(ss, [&](const Matrix& x) { return value_of(pw, ps, sw, x); }, chk.h));
}

// The composite objective against every model parameter, prototypes and the
// transport plan held constant, for one ablation mask.
void check_composite(Checker& chk, Rng& rng, const AblationMask& mask, const std::string& tag) {
    RunConfig cfg;
    cfg.mask = mask;
    cfg.mlp = {3, 6, 4};
    cfg.sim.temperature_t1 = 0.25;
    cfg.sharpen.temperature_t2 = 0.5;
    cfg.weights = {1.0, 1.0, 1.0};

    const std::size_t c = 3;
    StepBatch batch;
    batch.source_inputs = Matrix(8, 3);
    batch.labeled_inputs = Matrix(6, 3);
    batch.weak_inputs = Matrix(8, 3);
    batch.strong_inputs = Matrix(8, 3);
    for (double& v : batch.source_inputs.data()) v = rng.normal();
    for (double& v : batch.labeled_inputs.data()) v = rng.normal();
    for (double& v : batch.weak_inputs.data()) v = rng.normal();
    for (double& v : batch.strong_inputs.data()) v = rng.normal();
    batch.source_labels = random_labels(rng, 8, c);
    batch.labeled_labels = random_labels(rng, 6, c);

    Rng model_rng(rng.next_u64());
    Model model(cfg.mlp, c, model_rng);
    const PrototypeSet prototypes = PrototypeSet::init(
        model.extractor.forward(batch.labeled_inputs), batch.labeled_labels, c, 0.9);

    // Freeze the plan from the current weak view.
    TransportProblem problem;
    problem.cost = build_cost_matrix(prototypes, model.extractor.forward(batch.weak_inputs));
    problem.row_marginal = Vec(c, 1.0 / static_cast<double>(c));
    problem.col_marginal = Vec(8, 1.0 / 8.0);
    problem.epsilon = 0.1;
    problem.max_iters = 5000;
    problem.tolerance = 1e-9;
    const TransportPlan plan = solve_sinkhorn(problem);

    // Put tau1 between two observed weak max-probs so the mask is locally
    // constant under the finite-difference perturbations.
    const Matrix weak_probs = model.classifier.forward(model.extractor.forward(batch.weak_inputs));
    Vec maxima(weak_probs.rows());
    for (std::size_t i = 0; i < weak_probs.rows(); ++i) {
        const auto row = weak_probs.row(i);
        maxima[i] = *std::max_element(row.begin(), row.end());
    }
    std::sort(maxima.begin(), maxima.end());
    cfg.pseudo.tau1 = std::min(1.0, (maxima[maxima.size() / 2] + maxima[maxima.size() / 2 + 1]) / 2.0);
    cfg.pseudo.tau2 = cfg.pseudo.tau1 / 2.0;
    if (max_prob_distance_to(weak_probs, cfg.pseudo.tau1) < 1e-3) {
        cfg.pseudo.tau1 = 0.999; // degenerate spacing: fall back to an empty mask
        cfg.pseudo.tau2 = 0.4;
    }

    const StepLossResult analytic = compute_step_loss(model, prototypes, batch, &plan, cfg, true);

    const auto value_at = [&](Model& m) {
        return compute_step_loss(m, prototypes, batch, &plan, cfg, false).report.total;
    };

    Model probe = model;
    auto probe_blocks = probe.param_blocks();
    const auto grad_blocks = analytic.grads.blocks();
    static const char* block_names[] = {"w1", "b1", "w2", "b2", "wc", "bc"};
    for (std::size_t b = 0; b < probe_blocks.size(); ++b) {
        Matrix numeric(1, probe_blocks[b].size());
        Matrix exact(1, grad_blocks[b].size());
        for (std::size_t i = 0; i < probe_blocks[b].size(); ++i) {
            const double keep = probe_blocks[b][i];
            probe_blocks[b][i] = keep + chk.h;
            const double up = value_at(probe);
            probe_blocks[b][i] = keep - chk.h;
            const double down = value_at(probe);
            probe_blocks[b][i] = keep;
            numeric(0, i) = (up - down) / (2.0 * chk.h);
            exact(0, i) = grad_blocks[b][i];
        }
        chk.record("composite[" + tag + "]/" + block_names[b], exact, numeric);
    }
}

} // namespace

GradCheckReport run_gradient_checks(std::uint64_t base_seed, std::size_t seeds, double fd_step) {
    Checker chk;
    chk.h = fd_step;
    for (std::size_t s = 0; s < seeds; ++s) {
        Rng rng(derive_seed({base_seed, s, 0x9cbe}));
        check_base_loss(chk, rng);
        check_intra_loss(chk, rng);
        check_inter_loss(chk, rng);
        check_dual_loss(chk, rng);

        AblationMask base_only{false, false, false, true, true, true};
        AblationMask intra_only{true, false, false, true, true, true};
        AblationMask inter_only{false, true, false, true, true, true};
        AblationMask batch_only{false, false, true, true, true, true};
        AblationMask all{true, true, true, true, true, true};
        check_composite(chk, rng, base_only, "base");
        check_composite(chk, rng, intra_only, "intra");
        check_composite(chk, rng, inter_only, "inter");
        check_composite(chk, rng, batch_only, "batch");
        check_composite(chk, rng, all, "all");
    }
    return chk.report;
}

} // namespace ssda
