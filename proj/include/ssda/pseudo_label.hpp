#pragma once

#include "ssda/matrix.hpp"
#include "ssda/sinkhorn.hpp"

#include <span>
#include <vector>

namespace ssda {

/// Confidence thresholds of the three-way strategy: tau1 gates the
/// confident branch, [tau2, tau1) gates the OT-plan branch.
struct PseudoLabelConfig {
    double tau1 = 0.95;
    double tau2 = 0.4;
};

void validate(const PseudoLabelConfig& cfg);

enum class PseudoLabelBranch { Confident, OtPlan, Abstain };

const char* to_string(PseudoLabelBranch branch);

/// Outcome per unlabeled sample. `label` is -1 for Abstain; `confidence`
/// always carries the weak-view max probability.
struct PseudoLabelDecision {
    PseudoLabelBranch branch = PseudoLabelBranch::Abstain;
    int label = -1;
    double confidence = 0.0;

    bool assigned() const { return branch != PseudoLabelBranch::Abstain; }
};

/// Three-way rule for one sample. `plan_column` may be null (no usable OT
/// plan); an all-zero column counts as unusable. Argmax ties break to the
/// lowest class index.
PseudoLabelDecision decide(std::span<const double> weak_probs, const Vec* plan_column,
                           const PseudoLabelConfig& cfg);

/// Elementwise decide over a batch. A null or unconverged plan degrades the
/// OT branch to Abstain. The plan, when used, must have one column per row
/// of weak_probs.
std::vector<PseudoLabelDecision> batch_decide(const Matrix& weak_probs, const TransportPlan* plan,
                                              const PseudoLabelConfig& cfg);

struct PseudoLabelScore {
    double accuracy = 1.0; // over non-abstained samples; vacuously 1 when all abstain
    double coverage = 0.0; // non-abstained / total
};

PseudoLabelScore pseudo_label_accuracy(const std::vector<PseudoLabelDecision>& decisions,
                                       const std::vector<int>& true_labels);

} // namespace ssda
