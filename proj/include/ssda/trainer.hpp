#pragma once

#include "ssda/config.hpp"
#include "ssda/data.hpp"
#include "ssda/losses.hpp"
#include "ssda/model.hpp"
#include "ssda/prototypes.hpp"
#include "ssda/pseudo_label.hpp"
#include "ssda/sinkhorn.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ssda {

struct MetricsRecord {
    std::size_t step = 0;
    double base = 0.0, intra = 0.0, inter = 0.0, batch = 0.0, total = 0.0;
    double overall_accuracy = 0.0;
    double mean_class_accuracy = 0.0;
    double pl_coverage_confident = 0.0, pl_accuracy_confident = 1.0;
    double pl_coverage_ot = 0.0, pl_accuracy_ot = 1.0;
    double pl_coverage_total = 0.0, pl_accuracy_total = 1.0;
    double prototype_drift = 0.0;
};

struct TrainResult {
    MetricsRecord final_metrics;
    std::string checkpoint_path;
    std::string metrics_path;
    std::string summary_path;
    std::string pseudo_labels_path;
};

/// One optimization step's minibatches (inputs, not features).
struct StepBatch {
    Matrix source_inputs;
    std::vector<int> source_labels;
    Matrix labeled_inputs;
    std::vector<int> labeled_labels;
    Matrix weak_inputs;
    Matrix strong_inputs;
};

/// Forward + losses + (optionally) the full reverse pass for one step.
/// When `frozen_plan` is null the transport plan is solved internally from
/// the weak-view features; either way the plan is a constant under
/// differentiation, as are the prototypes and the weak-view mask/targets.
struct StepLossResult {
    LossReport report;
    ModelGradients grads;
    Matrix weak_probs;
    Matrix weak_features;
    Matrix strong_features;
    TransportPlan plan;
    Matrix d_prototypes; // lambda-weighted; consumed only by the routing hook
    std::size_t fixmatch_passed = 0;
};

StepLossResult compute_step_loss(const Model& model, const PrototypeSet& prototypes,
                                 const StepBatch& batch, const TransportPlan* frozen_plan,
                                 const RunConfig& cfg, bool with_gradients = true);

/// Everything a step observer may need for audits and studies. References
/// are valid only during the callback.
struct StepObservation {
    std::size_t step = 0;
    std::size_t epoch = 0;
    const std::vector<std::size_t>& unlabeled_indices;
    const std::vector<PseudoLabelDecision>& decisions;
    const Matrix& weak_probs;
    const Matrix& weak_features;
    const TransportPlan& plan;
    const PrototypeSet& prototypes;
};

using StepObserver = std::function<void(const StepObservation&)>;

/// Full training protocol: per step, sample batches, forward both unlabeled
/// views plus the labeled batches, solve the OT plan, assign pseudo-labels,
/// EMA-update the prototypes, compute the composite loss, backprop and step.
/// Emits metrics.csv / pseudo_labels.csv / summary.json / checkpoint.bin
/// under cfg.out_dir.
TrainResult train(const RunConfig& cfg, const SsdaSplit& split, const StepObserver& observer = {});

/// Convenience: generates (or loads) the data split, then trains.
TrainResult train(const RunConfig& cfg, const StepObserver& observer = {});

struct EvalScores {
    double overall = 0.0;
    double mean_class_accuracy = 0.0;
};

EvalScores evaluate_model(const Model& model, const Matrix& inputs, const std::vector<int>& labels);

/// Spec-level evaluate: checkpoint against the unlabeled target split.
MetricsRecord evaluate(const std::string& checkpoint_path, const Matrix& unlabeled_inputs,
                       const EvalLabels& eval_labels);

struct SuiteRow {
    std::string label;
    AblationMask mask;
    double mean_mca = 0.0;
    double std_mca = 0.0;
    double mean_overall = 0.0;
    double std_overall = 0.0;
    std::string config_hash;
};

/// Table of the 8 loss-mask combinations plus the prototype-branch masks,
/// each trained across the given seeds (mean ± sample stddev).
std::vector<SuiteRow> ablation_suite(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds);

struct Tau2Point {
    double tau2 = 0.0;
    bool control = false; // tau2 == tau1, the no-OT configuration
    std::uint64_t seed = 0;
    double mca = 0.0;
    double overall = 0.0;
};

std::vector<Tau2Point> tau2_sweep(const RunConfig& cfg, const std::vector<double>& values,
                                  const std::vector<std::uint64_t>& seeds);

struct ShotsPoint {
    std::size_t shots = 0;
    std::uint64_t seed = 0;
    double mca = 0.0;
    double overall = 0.0;
};

struct ShotsSweepResult {
    std::vector<ShotsPoint> points;
    double spearman_rho = 0.0; // of mean MCA against shots
};

ShotsSweepResult shots_sweep(const RunConfig& cfg, const std::vector<std::size_t>& shot_counts,
                             const std::vector<std::uint64_t>& seeds);

/// Label quality of the three-way strategy against the two single-source
/// rules (linear argmax / nearest prototype) run at the same thresholds on
/// the same trajectory, accumulated over all steps and seeds.
struct StrategyScore {
    double accuracy = 1.0;
    double coverage = 0.0;
};

struct PseudoStrategyStudy {
    StrategyScore ours;
    StrategyScore linear_only;
    StrategyScore prototype_only;
};

PseudoStrategyStudy pseudo_label_strategy_study(const RunConfig& cfg,
                                                const std::vector<std::uint64_t>& seeds);

/// Spearman rank correlation with average ranks on ties.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

} // namespace ssda
