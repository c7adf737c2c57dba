#pragma once

#include "ssda/matrix.hpp"

#include <vector>

namespace ssda {

/// Temperature for prototype similarity softmaxes. Default 0.05.
struct SimilarityConfig {
    double temperature_t1 = 0.05;
};

/// Which axis the prototype similarity softmax normalizes over. The
/// inter-domain alignment uses the sample axis (one distribution over the
/// batch per class); the prototype-based classifier uses the class axis.
enum class SimilarityAxis { Samples, Classes };

/// Per-class unit-norm target prototypes with EMA momentum state.
class PrototypeSet {
public:
    PrototypeSet() = default;

    /// Uninitialized store: all class flags false until the first init.
    PrototypeSet(std::size_t class_count, std::size_t feature_dim, double momentum);

    /// Class means of unit-norm labeled features, renormalized to unit norm.
    /// Every class must own at least one labeled sample.
    static PrototypeSet init(const Matrix& labeled_features, const std::vector<int>& labels,
                             std::size_t class_count, double momentum);

    const Matrix& matrix() const { return prototypes_; }
    double momentum() const { return momentum_; }
    std::size_t class_count() const { return prototypes_.rows(); }
    std::size_t feature_dim() const { return prototypes_.cols(); }
    bool initialized(std::size_t k) const { return initialized_[k]; }
    bool all_initialized() const;

    std::span<const double> prototype(std::size_t k) const { return prototypes_.row(k); }

    /// Direct overwrite of one prototype row (renormalized). Used by the
    /// optional gradient-routing ablation hook; EMA updates go through
    /// ema_update.
    void set_prototype(std::size_t k, std::span<const double> value);

private:
    friend PrototypeSet ema_update(const PrototypeSet&, const Matrix&, const std::vector<int>&);

    Matrix prototypes_;
    std::vector<bool> initialized_;
    double momentum_ = 0.9;
};

/// EMA blend of per-class batch means into the store (new value object).
/// Classes absent from the batch keep their previous prototype. Every
/// resulting prototype is renormalized to unit norm.
PrototypeSet ema_update(const PrototypeSet& store, const Matrix& batch_features,
                        const std::vector<int>& batch_labels);

/// exp(cos(f_i, c_k)/T1) normalized over the sample axis: row k of the
/// result is a distribution over the batch. Shape class_count × N.
Matrix similarity_softmax_over_samples(const PrototypeSet& store, const Matrix& features,
                                       const SimilarityConfig& cfg);

/// Prototype-based classifier prediction: softmax over classes of
/// cos(f_i, c_k)/T1. Shape N × class_count, rows sum to 1.
Matrix similarity_softmax_over_classes(const PrototypeSet& store, const Matrix& features,
                                       const SimilarityConfig& cfg);

struct SimilarityBackward {
    Matrix d_features;
    Matrix d_prototypes;
};

/// VJP through similarity_softmax_over_samples (recomputes the cosine
/// geometry; `output` is the forward result).
SimilarityBackward similarity_softmax_over_samples_backward(const PrototypeSet& store,
                                                            const Matrix& features,
                                                            const SimilarityConfig& cfg,
                                                            const Matrix& output,
                                                            const Matrix& upstream);

/// VJP through similarity_softmax_over_classes.
SimilarityBackward similarity_softmax_over_classes_backward(const PrototypeSet& store,
                                                            const Matrix& features,
                                                            const SimilarityConfig& cfg,
                                                            const Matrix& output,
                                                            const Matrix& upstream);

} // namespace ssda
