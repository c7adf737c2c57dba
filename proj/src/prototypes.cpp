#include "ssda/prototypes.hpp"

#include "ssda/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ssda {

namespace {

void check_labels(const std::vector<int>& labels, std::size_t n_rows, std::size_t class_count,
                  const char* what) {
    if (labels.size() != n_rows) {
        throw std::invalid_argument(std::string(what) + ": feature/label count mismatch");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
            throw std::invalid_argument(std::string(what) + ": label out of range");
        }
    }
}

void renormalize_row(Matrix& m, std::size_t k, const char* what) {
    const double n = l2_norm(m.row(k));
    if (n == 0.0) {
        throw std::invalid_argument(std::string(what) + ": class " + std::to_string(k) +
                                    " collapsed to a zero-norm prototype");
    }
    for (std::size_t j = 0; j < m.cols(); ++j) m(k, j) /= n;
}

void check_momentum(double momentum) {
    if (!(momentum > 0.0 && momentum < 1.0)) {
        throw std::invalid_argument("PrototypeSet: momentum must lie in (0,1)");
    }
}

} // namespace

PrototypeSet::PrototypeSet(std::size_t class_count, std::size_t feature_dim, double momentum)
    : prototypes_(class_count, feature_dim), initialized_(class_count, false), momentum_(momentum) {
    check_momentum(momentum);
}

PrototypeSet PrototypeSet::init(const Matrix& labeled_features, const std::vector<int>& labels,
                                std::size_t class_count, double momentum) {
    check_momentum(momentum);
    check_labels(labels, labeled_features.rows(), class_count, "init_prototypes");
    PrototypeSet store(class_count, labeled_features.cols(), momentum);
    std::vector<std::size_t> counts(class_count, 0);
    for (std::size_t i = 0; i < labeled_features.rows(); ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        for (std::size_t j = 0; j < labeled_features.cols(); ++j) {
            store.prototypes_(k, j) += labeled_features(i, j);
        }
        ++counts[k];
    }
    for (std::size_t k = 0; k < class_count; ++k) {
        if (counts[k] == 0) {
            throw std::invalid_argument("init_prototypes: class " + std::to_string(k) +
                                        " has no labeled sample");
        }
        for (std::size_t j = 0; j < store.prototypes_.cols(); ++j) {
            store.prototypes_(k, j) /= static_cast<double>(counts[k]);
        }
        renormalize_row(store.prototypes_, k, "init_prototypes");
        store.initialized_[k] = true;
    }
    return store;
}

bool PrototypeSet::all_initialized() const {
    for (bool b : initialized_) {
        if (!b) return false;
    }
    return true;
}

void PrototypeSet::set_prototype(std::size_t k, std::span<const double> value) {
    if (k >= prototypes_.rows() || value.size() != prototypes_.cols()) {
        throw std::invalid_argument("set_prototype: bad index or dimension");
    }
    for (std::size_t j = 0; j < prototypes_.cols(); ++j) prototypes_(k, j) = value[j];
    renormalize_row(prototypes_, k, "set_prototype");
    initialized_[k] = true;
}

PrototypeSet ema_update(const PrototypeSet& store, const Matrix& batch_features,
                        const std::vector<int>& batch_labels) {
    if (batch_features.cols() != store.feature_dim()) {
        throw std::invalid_argument("ema_update: feature dimension mismatch");
    }
    check_labels(batch_labels, batch_features.rows(), store.class_count(), "ema_update");

    const std::size_t c = store.class_count();
    const std::size_t d = store.feature_dim();
    Matrix sums(c, d);
    std::vector<std::size_t> counts(c, 0);
    for (std::size_t i = 0; i < batch_features.rows(); ++i) {
        const auto k = static_cast<std::size_t>(batch_labels[i]);
        for (std::size_t j = 0; j < d; ++j) sums(k, j) += batch_features(i, j);
        ++counts[k];
    }

    PrototypeSet next = store;
    const double alpha = store.momentum();
    for (std::size_t k = 0; k < c; ++k) {
        if (counts[k] == 0) continue; // absent class: prototype unchanged
        for (std::size_t j = 0; j < d; ++j) {
            const double batch_mean = sums(k, j) / static_cast<double>(counts[k]);
            next.prototypes_(k, j) = alpha * store.matrix()(k, j) + (1.0 - alpha) * batch_mean;
        }
        renormalize_row(next.prototypes_, k, "ema_update");
    }
    return next;
}

namespace {

// cos(f_i, c_k) / T1 for all pairs, class-major (class_count × N).
Matrix similarity_logits(const PrototypeSet& store, const Matrix& features,
                         const SimilarityConfig& cfg, const char* what) {
    if (cfg.temperature_t1 <= 0.0) {
        throw std::invalid_argument(std::string(what) + ": temperature must be > 0");
    }
    if (features.rows() == 0) throw std::invalid_argument(std::string(what) + ": empty batch");
    if (features.cols() != store.feature_dim()) {
        throw std::invalid_argument(std::string(what) + ": feature dimension mismatch");
    }
    for (std::size_t k = 0; k < store.class_count(); ++k) {
        if (!store.initialized(k)) {
            throw std::invalid_argument(std::string(what) + ": class " + std::to_string(k) +
                                        " prototype is uninitialized");
        }
    }
    Matrix z(store.class_count(), features.rows());
    for (std::size_t k = 0; k < store.class_count(); ++k) {
        for (std::size_t i = 0; i < features.rows(); ++i) {
            z(k, i) = cosine_similarity(features.row(i), store.prototype(k)) / cfg.temperature_t1;
        }
    }
    return z;
}

} // namespace

Matrix similarity_softmax_over_samples(const PrototypeSet& store, const Matrix& features,
                                       const SimilarityConfig& cfg) {
    const Matrix z = similarity_logits(store, features, cfg, "similarity_softmax_over_samples");
    return row_softmax(z, 1.0); // z already carries 1/T1; normalize each class row over samples
}

Matrix similarity_softmax_over_classes(const PrototypeSet& store, const Matrix& features,
                                       const SimilarityConfig& cfg) {
    const Matrix z = similarity_logits(store, features, cfg, "similarity_softmax_over_classes");
    return row_softmax(z.transposed(), 1.0); // N × C, softmax over the class axis
}

namespace {

// Distribute dL/dz (class-major C × N logit gradients) through the cosine
// geometry into features and prototypes.
SimilarityBackward chain_logit_grads(const PrototypeSet& store, const Matrix& features,
                                     const SimilarityConfig& cfg, const Matrix& d_logits) {
    SimilarityBackward out;
    out.d_features = Matrix(features.rows(), features.cols());
    out.d_prototypes = Matrix(store.class_count(), store.feature_dim());
    const double inv_t = 1.0 / cfg.temperature_t1;
    for (std::size_t k = 0; k < store.class_count(); ++k) {
        const auto c_k = store.prototype(k);
        for (std::size_t i = 0; i < features.rows(); ++i) {
            const double g = d_logits(k, i) * inv_t;
            if (g == 0.0) continue;
            const Vec df = cosine_similarity_grad_a(features.row(i), c_k);
            const Vec dc = cosine_similarity_grad_a(c_k, features.row(i));
            for (std::size_t j = 0; j < features.cols(); ++j) {
                out.d_features(i, j) += g * df[j];
                out.d_prototypes(k, j) += g * dc[j];
            }
        }
    }
    return out;
}

} // namespace

SimilarityBackward similarity_softmax_over_samples_backward(const PrototypeSet& store,
                                                            const Matrix& features,
                                                            const SimilarityConfig& cfg,
                                                            const Matrix& output,
                                                            const Matrix& upstream) {
    require_same_shape(output, upstream, "similarity_softmax_over_samples_backward");
    const Matrix d_logits = row_softmax_backward(output, upstream, 1.0);
    return chain_logit_grads(store, features, cfg, d_logits);
}

SimilarityBackward similarity_softmax_over_classes_backward(const PrototypeSet& store,
                                                            const Matrix& features,
                                                            const SimilarityConfig& cfg,
                                                            const Matrix& output,
                                                            const Matrix& upstream) {
    require_same_shape(output, upstream, "similarity_softmax_over_classes_backward");
    const Matrix d_logits_nc = row_softmax_backward(output, upstream, 1.0);
    return chain_logit_grads(store, features, cfg, d_logits_nc.transposed());
}

} // namespace ssda
