#pragma once

#include "ssda/data.hpp"
#include "ssda/linalg.hpp"
#include "ssda/losses.hpp"
#include "ssda/model.hpp"
#include "ssda/prototypes.hpp"
#include "ssda/pseudo_label.hpp"

#include <cstdint>
#include <string>

namespace ssda {

/// Per-term switches for the ablation studies. Loss switches zero the term
/// and its gradients; prototype_ema freezes the store at its initial value;
/// the two branch switches mask the halves of the dual consistency loss.
struct AblationMask {
    bool intra = true;
    bool inter = true;
    bool batch = true;
    bool prototype_ema = true;
    bool prototype_branch = true;
    bool linear_branch = true;
};

/// Everything a training run needs. Field defaults follow the reference
/// operating point: tau1 0.95, momentum 0.9, T1 0.05, T2 0.1, unit intra /
/// inter weights.
struct RunConfig {
    std::string csv_path;       // when set, data comes from this file
    DomainScenario scenario;    // otherwise generated from here

    PseudoLabelConfig pseudo;   // tau1, tau2
    SimilarityConfig sim;       // T1
    SharpenConfig sharpen;      // T2
    double prototype_momentum = 0.9;

    /// Axis of the similarity softmax feeding the alignment loss. The
    /// sample axis is the batch-contrastive form; the class axis is the
    /// conventional prototype-classifier reading.
    SimilarityAxis inter_norm_axis = SimilarityAxis::Samples;

    double ot_epsilon = 0.05;
    std::size_t ot_max_iters = 1000;
    double ot_tolerance = 1e-6;
    bool ot_full_dataset = false; // offline whole-split plan instead of per batch

    LossWeights weights;
    AugmentPolicy augment;
    AblationMask mask;

    SgdConfig sgd;
    std::size_t steps = 500;
    /// Supervised-only steps before the adaptation terms activate; the
    /// prototypes are initialized from the warmed-up features (the
    /// desk-scale stand-in for starting from a pretrained backbone).
    std::size_t warmup_steps = 150;
    std::size_t batch_source = 32;
    std::size_t batch_labeled = 15;
    std::size_t batch_unlabeled = 64;
    std::size_t metrics_every = 50;

    MlpConfig mlp; // input_dim is overwritten by the data at run time

    bool route_prototype_gradients = false;

    std::uint64_t seed = 0;
    std::string out_dir = "runs/out";
};

/// Re-validates every owning module's invariants; throws ConfigError.
void validate(const RunConfig& cfg);

/// Flat TOML-style file: `key = value` lines, '#' comments, optional quotes
/// around strings. Unknown keys are rejected.
RunConfig load_config(const std::string& path);

/// Applies one `key=value` override (same key space as the file).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

/// Canonical sorted key=value serialization; stable across runs.
std::string serialize_config(const RunConfig& cfg);

/// FNV-1a 64-bit hash of the canonical serialization, as fixed-width hex.
std::string config_hash(const RunConfig& cfg);

} // namespace ssda
