#pragma once

#include "ssda/matrix.hpp"
#include "ssda/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ssda {

struct MlpConfig {
    std::size_t input_dim = 2;
    std::size_t hidden_dim = 64;
    std::size_t feature_dim = 16;
};

/// Two-layer tanh MLP whose output rows are L2-normalized to unit norm.
/// The normalization is part of the forward graph and is differentiated
/// through; a zero pre-normalization row is nudged by 1e-8 on its first
/// coordinate (counted in the cache) before normalizing.
class FeatureExtractor {
public:
    FeatureExtractor() = default;
    FeatureExtractor(const MlpConfig& cfg, Rng& rng);

    struct Cache {
        const FeatureExtractor* owner = nullptr;
        Matrix inputs;
        Matrix hidden;      // tanh activations
        Matrix prenorm;     // after the zero-row nudge
        Vec norms;
        Matrix features;
        std::size_t perturbed_rows = 0;
    };

    Matrix forward(const Matrix& inputs, Cache* cache = nullptr) const;

    struct Gradients {
        Matrix w1;
        Vec b1;
        Matrix w2;
        Vec b2;
    };

    /// Exact reverse pass; requires the cache produced by this extractor.
    Gradients backward(const Cache& cache, const Matrix& d_features) const;

    const MlpConfig& config() const { return cfg_; }

    Matrix w1, w2;
    Vec b1, b2;

private:
    MlpConfig cfg_;
};

/// Linear classifier with a row softmax head.
class LinearClassifier {
public:
    LinearClassifier() = default;
    LinearClassifier(std::size_t class_count, std::size_t feature_dim, Rng& rng);

    struct Cache {
        const LinearClassifier* owner = nullptr;
        Matrix features;
        Matrix probs;
    };

    Matrix forward(const Matrix& features, Cache* cache = nullptr) const;

    struct Gradients {
        Matrix w;
        Vec b;
        Matrix d_features; // gradient flowing back into the feature stream
    };

    Gradients backward(const Cache& cache, const Matrix& d_probs) const;

    std::size_t class_count() const { return w.rows(); }

    Matrix w;
    Vec b;
};

/// Extractor + classifier pair; the artifact's whole trainable state.
struct Model {
    FeatureExtractor extractor;
    LinearClassifier classifier;

    Model() = default;
    Model(const MlpConfig& cfg, std::size_t class_count, Rng& rng);

    std::vector<std::span<double>> param_blocks();
    std::vector<std::span<const double>> param_blocks() const;
    std::size_t parameter_count() const;
};

/// Mirror of the model parameters holding accumulated gradients.
struct ModelGradients {
    FeatureExtractor::Gradients extractor;
    LinearClassifier::Gradients classifier;

    static ModelGradients zeros_like(const Model& model);
    void accumulate(const FeatureExtractor::Gradients& g);
    void accumulate_classifier(const Matrix& dw, const Vec& db);
    std::vector<std::span<const double>> blocks() const;
};

struct SgdConfig {
    double learning_rate = 0.01;
    double momentum = 0.9;
    /// The classifier head tracks a feature space that the alignment terms
    /// keep reshaping, so it trains at a multiple of the extractor rate
    /// (the usual two-group schedule for this family of protocols).
    double classifier_lr_scale = 10.0;
    /// Inverse-decay schedule eta(t) = eta0 * (1 + gamma*t)^(-power);
    /// both zero by default (constant rate).
    double lr_decay_gamma = 0.0;
    double lr_decay_power = 0.0;
};

/// SGD with momentum: v <- m*v + g ; theta <- theta - eta*v, with an
/// optional per-block learning-rate scale. Throws NumericError on
/// non-finite gradients (the step is aborted).
class SgdOptimizer {
public:
    explicit SgdOptimizer(const SgdConfig& cfg) : cfg_(cfg) {}

    void step(std::vector<std::span<double>> params, std::vector<std::span<const double>> grads,
              const std::vector<double>* per_block_lr_scale = nullptr);

    const SgdConfig& config() const { return cfg_; }

private:
    SgdConfig cfg_;
    std::vector<Vec> velocities_;
    std::size_t steps_taken_ = 0;
};

/// Versioned little-endian checkpoint: magic, dims header, row-major 64-bit
/// parameter blocks, trailing CRC32 of everything before it.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

std::uint32_t crc32(const unsigned char* data, std::size_t len);

} // namespace ssda
