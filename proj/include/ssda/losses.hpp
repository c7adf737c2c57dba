#pragma once

#include "ssda/matrix.hpp"
#include "ssda/prototypes.hpp"
#include "ssda/sinkhorn.hpp"

#include <map>
#include <string>
#include <vector>

namespace ssda {

/// Balance weights of the composite objective.
struct LossWeights {
    double lambda_intra = 1.0;
    double lambda_inter = 1.0;
    double lambda_batch = 1.0;
};

void validate(const LossWeights& w);

struct LossComponents {
    double base = 0.0;
    double intra = 0.0;
    double inter = 0.0;
    double batch = 0.0;
};

/// Scalar ledger of the composite loss plus (optionally) gradient blocks
/// keyed by the name of the input tensor they belong to.
struct LossReport {
    double base = 0.0;
    double intra = 0.0;
    double inter = 0.0;
    double batch = 0.0;
    double total = 0.0;
    std::map<std::string, Matrix> gradients;
};

/// total = base + li*intra + le*inter + lb*batch; components stay unweighted.
LossReport total_loss(const LossComponents& components, const LossWeights& weights);

/// Supervised CE over source ∪ labeled-target plus the confidence-masked
/// strong-vs-weak consistency term. Each of the two terms is averaged over
/// its own contributing samples; the weak view acts as a constant target.
struct BaseLossResult {
    double value = 0.0;
    Matrix d_source_probs;
    Matrix d_target_probs;
    Matrix d_strong_probs;
    std::size_t masked_in = 0; // unlabeled samples that passed the tau1 mask
};

BaseLossResult base_loss(const Matrix& source_probs, const std::vector<int>& source_labels,
                         const Matrix& target_probs, const std::vector<int>& target_labels,
                         const Matrix& weak_probs, const Matrix& strong_probs, double tau1);

/// <plan, strong_cost>_F with the plan held constant; gradient w.r.t. the
/// cost matrix (the plan itself).
struct CostLossResult {
    double value = 0.0;
    Matrix d_cost;
};

CostLossResult intra_loss_from_cost(const TransportPlan& plan, const Matrix& strong_cost);

/// Same loss expressed against strong-view features: the cost is rebuilt
/// from the prototypes internally and the gradient flows into the features
/// (and into the prototypes, which callers normally discard).
struct IntraLossResult {
    double value = 0.0;
    Matrix d_strong_features;
    Matrix d_prototypes;
};

IntraLossResult intra_loss(const TransportPlan& plan, const Matrix& strong_features,
                           const Matrix& prototypes);

/// Cross-domain prototype alignment on a sample-axis similarity matrix
/// (class_count × N), averaged per source sample.
struct InterLossResult {
    double value = 0.0;
    Matrix d_similarity;
};

InterLossResult inter_loss(const Matrix& similarity, const std::vector<int>& source_labels);

/// inter_loss composed with the prototype similarity softmax, yielding
/// gradients w.r.t. the source features (and prototypes). The axis selects
/// the printed sample-axis form or the conventional class-axis softmax.
struct InterAlignmentResult {
    double value = 0.0;
    Matrix d_source_features;
    Matrix d_prototypes;
};

InterAlignmentResult inter_alignment_loss(const Matrix& source_features,
                                          const std::vector<int>& source_labels,
                                          const PrototypeSet& store, const SimilarityConfig& cfg,
                                          SimilarityAxis axis = SimilarityAxis::Samples);

/// Batch-wise dual consistency: cross-correlation matrices of the sharpened
/// linear predictions and of the prototype similarities, each pulled toward
/// the identity after row normalization:
///   (1/2C)(|phi(Rl)-I|_1 + |phi(Rlᵀ)-I|_1 + |phi(Rp)-I|_1 + |phi(Rpᵀ)-I|_1).
/// The two halves can be masked independently for ablations.
struct DualConsistencyResult {
    double value = 0.0;
    Matrix d_weak_sharpened;
    Matrix d_strong_sharpened;
    Matrix d_weak_similarity;
    Matrix d_strong_similarity;
};

DualConsistencyResult dual_consistency_loss(const Matrix& weak_sharpened,
                                            const Matrix& strong_sharpened,
                                            const Matrix& weak_similarity,
                                            const Matrix& strong_similarity,
                                            bool linear_half = true, bool prototype_half = true);

} // namespace ssda
