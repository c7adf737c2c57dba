#include "ssda/pseudo_label.hpp"

#include <cmath>
#include <stdexcept>

namespace ssda {

void validate(const PseudoLabelConfig& cfg) {
    // tau2 == tau1 is allowed: the OT branch becomes unreachable, which is
    // exactly the no-OT control configuration used by the tau2 sweep.
    if (!(cfg.tau1 > 0.0 && cfg.tau1 <= 1.0 && cfg.tau2 >= 0.0 && cfg.tau2 <= cfg.tau1)) {
        throw std::invalid_argument("PseudoLabelConfig: need 0 <= tau2 <= tau1 <= 1 and tau1 > 0");
    }
}

const char* to_string(PseudoLabelBranch branch) {
    switch (branch) {
        case PseudoLabelBranch::Confident: return "confident";
        case PseudoLabelBranch::OtPlan: return "ot_plan";
        case PseudoLabelBranch::Abstain: return "abstain";
    }
    return "?";
}

namespace {

std::size_t argmax_lowest_tie(std::span<const double> v) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[arg]) arg = i;
    }
    return arg;
}

} // namespace

PseudoLabelDecision decide(std::span<const double> weak_probs, const Vec* plan_column,
                           const PseudoLabelConfig& cfg) {
    validate(cfg);
    if (weak_probs.empty()) throw std::invalid_argument("decide: empty probability row");
    if (plan_column != nullptr && plan_column->size() != weak_probs.size()) {
        throw std::invalid_argument("decide: plan column length does not match class count");
    }
    const std::size_t arg = argmax_lowest_tie(weak_probs);
    const double confidence = weak_probs[arg];

    PseudoLabelDecision decision;
    decision.confidence = confidence;
    if (confidence >= cfg.tau1) {
        decision.branch = PseudoLabelBranch::Confident;
        decision.label = static_cast<int>(arg);
        return decision;
    }
    if (confidence >= cfg.tau2 && plan_column != nullptr) {
        bool any_positive = false;
        for (double v : *plan_column) {
            if (v > 0.0) any_positive = true;
        }
        if (any_positive) {
            decision.branch = PseudoLabelBranch::OtPlan;
            decision.label = static_cast<int>(
                argmax_lowest_tie(std::span<const double>(plan_column->data(), plan_column->size())));
            return decision;
        }
    }
    return decision; // Abstain
}

std::vector<PseudoLabelDecision> batch_decide(const Matrix& weak_probs, const TransportPlan* plan,
                                              const PseudoLabelConfig& cfg) {
    const bool usable = plan != nullptr && plan->converged;
    if (usable && plan->plan.cols() != weak_probs.rows()) {
        throw std::invalid_argument("batch_decide: plan column count does not match batch size");
    }
    if (usable && plan->plan.rows() != weak_probs.cols()) {
        throw std::invalid_argument("batch_decide: plan row count does not match class count");
    }
    std::vector<PseudoLabelDecision> out;
    out.reserve(weak_probs.rows());
    Vec column(weak_probs.cols());
    for (std::size_t i = 0; i < weak_probs.rows(); ++i) {
        if (usable) {
            for (std::size_t k = 0; k < weak_probs.cols(); ++k) column[k] = plan->plan(k, i);
            out.push_back(decide(weak_probs.row(i), &column, cfg));
        } else {
            out.push_back(decide(weak_probs.row(i), nullptr, cfg));
        }
    }
    return out;
}

PseudoLabelScore pseudo_label_accuracy(const std::vector<PseudoLabelDecision>& decisions,
                                       const std::vector<int>& true_labels) {
    if (decisions.size() != true_labels.size()) {
        throw std::invalid_argument("pseudo_label_accuracy: length mismatch");
    }
    std::size_t assigned = 0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        if (!decisions[i].assigned()) continue;
        ++assigned;
        if (decisions[i].label == true_labels[i]) ++correct;
    }
    PseudoLabelScore score;
    score.coverage = decisions.empty() ? 0.0
                                       : static_cast<double>(assigned) / static_cast<double>(decisions.size());
    score.accuracy = assigned == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(assigned);
    return score;
}

} // namespace ssda
