#include "ssda/losses.hpp"

#include "ssda/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace ssda {

namespace {

constexpr double kLogFloor = 1e-12; // numerical floor inside every CE-style log

double safe_log(double p) { return std::log(p < kLogFloor ? kLogFloor : p); }

// d/dp of -log(max(p, floor)): zero below the floor where the value is flat.
double neg_log_grad(double p) { return p < kLogFloor ? 0.0 : -1.0 / p; }

void check_prob_labels(const Matrix& probs, const std::vector<int>& labels, const char* what) {
    if (probs.rows() != labels.size()) {
        throw std::invalid_argument(std::string(what) + ": row/label count mismatch");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= probs.cols()) {
            throw std::invalid_argument(std::string(what) + ": label out of range");
        }
    }
}

std::size_t argmax_lowest_tie(std::span<const double> v) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[arg]) arg = i;
    }
    return arg;
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

} // namespace

void validate(const LossWeights& w) {
    if (!(w.lambda_intra >= 0.0 && w.lambda_inter >= 0.0 && w.lambda_batch >= 0.0) ||
        !std::isfinite(w.lambda_intra) || !std::isfinite(w.lambda_inter) ||
        !std::isfinite(w.lambda_batch)) {
        throw std::invalid_argument("LossWeights: lambdas must be finite and >= 0");
    }
}

LossReport total_loss(const LossComponents& c, const LossWeights& w) {
    validate(w);
    if (!std::isfinite(c.base) || !std::isfinite(c.intra) || !std::isfinite(c.inter) ||
        !std::isfinite(c.batch)) {
        throw std::invalid_argument("total_loss: non-finite component");
    }
    LossReport report;
    report.base = c.base;
    report.intra = c.intra;
    report.inter = c.inter;
    report.batch = c.batch;
    report.total = c.base + w.lambda_intra * c.intra + w.lambda_inter * c.inter +
                   w.lambda_batch * c.batch;
    return report;
}

BaseLossResult base_loss(const Matrix& source_probs, const std::vector<int>& source_labels,
                         const Matrix& target_probs, const std::vector<int>& target_labels,
                         const Matrix& weak_probs, const Matrix& strong_probs, double tau1) {
    check_prob_labels(source_probs, source_labels, "base_loss(source)");
    check_prob_labels(target_probs, target_labels, "base_loss(target)");
    require_same_shape(weak_probs, strong_probs, "base_loss(views)");
    if (!(tau1 > 0.0 && tau1 <= 1.0)) throw std::invalid_argument("base_loss: tau1 must be in (0,1]");

    BaseLossResult result;
    result.d_source_probs = Matrix(source_probs.rows(), source_probs.cols());
    result.d_target_probs = Matrix(target_probs.rows(), target_probs.cols());
    result.d_strong_probs = Matrix(strong_probs.rows(), strong_probs.cols());

    const std::size_t n_labeled = source_probs.rows() + target_probs.rows();
    double supervised = 0.0;
    if (n_labeled > 0) {
        const double inv = 1.0 / static_cast<double>(n_labeled);
        for (std::size_t i = 0; i < source_probs.rows(); ++i) {
            const auto y = static_cast<std::size_t>(source_labels[i]);
            supervised -= safe_log(source_probs(i, y)) * inv;
            result.d_source_probs(i, y) = neg_log_grad(source_probs(i, y)) * inv;
        }
        for (std::size_t i = 0; i < target_probs.rows(); ++i) {
            const auto y = static_cast<std::size_t>(target_labels[i]);
            supervised -= safe_log(target_probs(i, y)) * inv;
            result.d_target_probs(i, y) = neg_log_grad(target_probs(i, y)) * inv;
        }
    }

    // Confidence-masked consistency: strong view against the weak argmax.
    std::vector<std::size_t> masked_rows;
    std::vector<std::size_t> masked_targets;
    for (std::size_t i = 0; i < weak_probs.rows(); ++i) {
        const auto row = weak_probs.row(i);
        const std::size_t arg = argmax_lowest_tie(row);
        if (row[arg] >= tau1) {
            masked_rows.push_back(i);
            masked_targets.push_back(arg);
        }
    }
    double consistency = 0.0;
    if (!masked_rows.empty()) {
        const double inv = 1.0 / static_cast<double>(masked_rows.size());
        for (std::size_t n = 0; n < masked_rows.size(); ++n) {
            const std::size_t i = masked_rows[n];
            const std::size_t t = masked_targets[n];
            consistency -= safe_log(strong_probs(i, t)) * inv;
            result.d_strong_probs(i, t) = neg_log_grad(strong_probs(i, t)) * inv;
        }
    }

    result.masked_in = masked_rows.size();
    result.value = supervised + consistency;
    return result;
}

CostLossResult intra_loss_from_cost(const TransportPlan& plan, const Matrix& strong_cost) {
    require_same_shape(plan.plan, strong_cost, "intra_loss");
    CostLossResult result;
    result.value = frobenius_inner(plan.plan, strong_cost);
    result.d_cost = plan.plan;
    return result;
}

IntraLossResult intra_loss(const TransportPlan& plan, const Matrix& strong_features,
                           const Matrix& prototypes) {
    const Matrix cost = build_cost_matrix(prototypes, strong_features);
    require_same_shape(plan.plan, cost, "intra_loss");
    IntraLossResult result;
    result.value = frobenius_inner(plan.plan, cost);
    // d/df_j <plan, 1 - c^T f> = -sum_k plan[k,j] c_k ; symmetric for prototypes
    result.d_strong_features = Matrix(strong_features.rows(), strong_features.cols());
    result.d_prototypes = Matrix(prototypes.rows(), prototypes.cols());
    for (std::size_t k = 0; k < prototypes.rows(); ++k) {
        for (std::size_t j = 0; j < strong_features.rows(); ++j) {
            const double g = plan.plan(k, j);
            if (g == 0.0) continue;
            for (std::size_t dju = 0; dju < strong_features.cols(); ++dju) {
                result.d_strong_features(j, dju) -= g * prototypes(k, dju);
                result.d_prototypes(k, dju) -= g * strong_features(j, dju);
            }
        }
    }
    return result;
}

InterLossResult inter_loss(const Matrix& similarity, const std::vector<int>& source_labels) {
    if (similarity.cols() != source_labels.size()) {
        throw std::invalid_argument("inter_loss: similarity columns must match the label count");
    }
    for (int y : source_labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= similarity.rows()) {
            throw std::invalid_argument("inter_loss: label out of range");
        }
    }
    InterLossResult result;
    result.d_similarity = Matrix(similarity.rows(), similarity.cols());
    const std::size_t n = source_labels.size();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(source_labels[i]);
        result.value -= safe_log(similarity(k, i)) * inv;
        result.d_similarity(k, i) = neg_log_grad(similarity(k, i)) * inv;
    }
    return result;
}

InterAlignmentResult inter_alignment_loss(const Matrix& source_features,
                                          const std::vector<int>& source_labels,
                                          const PrototypeSet& store, const SimilarityConfig& cfg,
                                          SimilarityAxis axis) {
    InterAlignmentResult result;
    if (axis == SimilarityAxis::Samples) {
        const Matrix similarity = similarity_softmax_over_samples(store, source_features, cfg);
        const InterLossResult on_matrix = inter_loss(similarity, source_labels);
        const SimilarityBackward chain = similarity_softmax_over_samples_backward(
            store, source_features, cfg, similarity, on_matrix.d_similarity);
        result.value = on_matrix.value;
        result.d_source_features = chain.d_features;
        result.d_prototypes = chain.d_prototypes;
        return result;
    }
    // Class-axis CE against the prototype classifier prediction.
    const Matrix similarity = similarity_softmax_over_classes(store, source_features, cfg);
    if (similarity.rows() != source_labels.size()) {
        throw std::invalid_argument("inter_alignment_loss: feature/label count mismatch");
    }
    Matrix upstream(similarity.rows(), similarity.cols());
    const double inv = 1.0 / static_cast<double>(source_labels.size());
    for (std::size_t i = 0; i < similarity.rows(); ++i) {
        const int y = source_labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= similarity.cols()) {
            throw std::invalid_argument("inter_alignment_loss: label out of range");
        }
        result.value -= safe_log(similarity(i, static_cast<std::size_t>(y))) * inv;
        upstream(i, static_cast<std::size_t>(y)) =
            neg_log_grad(similarity(i, static_cast<std::size_t>(y))) * inv;
    }
    const SimilarityBackward chain = similarity_softmax_over_classes_backward(
        store, source_features, cfg, similarity, upstream);
    result.d_source_features = chain.d_features;
    result.d_prototypes = chain.d_prototypes;
    return result;
}

namespace {

// Gradient of |phi(R) - I|_1 with respect to R. Uniform-fallback rows are
// locally constant.
Matrix phi_identity_l1_grad(const Matrix& r) {
    Matrix grad(r.rows(), r.cols());
    for (std::size_t i = 0; i < r.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < r.cols(); ++j) sum += r(i, j);
        if (sum == 0.0) continue;
        double pull = 0.0;
        for (std::size_t j = 0; j < r.cols(); ++j) {
            const double y = r(i, j) / sum;
            pull += sign(y - (i == j ? 1.0 : 0.0)) * y;
        }
        for (std::size_t j = 0; j < r.cols(); ++j) {
            const double y = r(i, j) / sum;
            grad(i, j) = (sign(y - (i == j ? 1.0 : 0.0)) - pull) / sum;
        }
    }
    return grad;
}

double phi_identity_l1(const Matrix& r) {
    const Matrix phi = row_normalize_phi(r);
    double v = 0.0;
    for (std::size_t i = 0; i < r.rows(); ++i) {
        for (std::size_t j = 0; j < r.cols(); ++j) {
            v += std::abs(phi(i, j) - (i == j ? 1.0 : 0.0));
        }
    }
    return v;
}

} // namespace

DualConsistencyResult dual_consistency_loss(const Matrix& weak_sharpened,
                                            const Matrix& strong_sharpened,
                                            const Matrix& weak_similarity,
                                            const Matrix& strong_similarity,
                                            bool linear_half, bool prototype_half) {
    require_same_shape(weak_sharpened, strong_sharpened, "dual_consistency_loss");
    require_same_shape(weak_sharpened, weak_similarity, "dual_consistency_loss");
    require_same_shape(weak_sharpened, strong_similarity, "dual_consistency_loss");
    const std::size_t c = weak_sharpened.cols();
    if (c == 0) throw std::invalid_argument("dual_consistency_loss: zero classes");
    const double scale = 1.0 / (2.0 * static_cast<double>(c));

    DualConsistencyResult result;
    result.d_weak_sharpened = Matrix(weak_sharpened.rows(), c);
    result.d_strong_sharpened = Matrix(weak_sharpened.rows(), c);
    result.d_weak_similarity = Matrix(weak_sharpened.rows(), c);
    result.d_strong_similarity = Matrix(weak_sharpened.rows(), c);

    auto add_half = [&](const Matrix& weak, const Matrix& strong, Matrix& d_weak, Matrix& d_strong) {
        const Matrix r = transpose_matmul(weak, strong); // C × C cross-correlation
        const Matrix rt = r.transposed();
        result.value += scale * (phi_identity_l1(r) + phi_identity_l1(rt));
        // dL/dR combines the direct term and the transposed term.
        Matrix d_r = phi_identity_l1_grad(r);
        const Matrix d_rt = phi_identity_l1_grad(rt);
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                d_r(i, j) = scale * (d_r(i, j) + d_rt(j, i));
            }
        }
        // R = weakᵀ strong: d_weak += strong d_rᵀ, d_strong += weak d_r
        const Matrix dw = matmul_transpose(strong, d_r);
        const Matrix ds = matmul(weak, d_r);
        for (std::size_t i = 0; i < dw.size(); ++i) d_weak.data()[i] += dw.data()[i];
        for (std::size_t i = 0; i < ds.size(); ++i) d_strong.data()[i] += ds.data()[i];
    };

    if (linear_half) {
        add_half(weak_sharpened, strong_sharpened, result.d_weak_sharpened,
                 result.d_strong_sharpened);
    }
    if (prototype_half) {
        add_half(weak_similarity, strong_similarity, result.d_weak_similarity,
                 result.d_strong_similarity);
    }
    return result;
}

} // namespace ssda
