#pragma once

#include "ssda/matrix.hpp"

#include <span>

namespace ssda {

/// Temperature for the probability sharpening transform. Default 0.1.
struct SharpenConfig {
    double temperature_t2 = 0.1;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// Cosine similarity of two nonzero vectors, clamped to [-1,1] against
/// rounding. Throws on zero-norm or mismatched inputs.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// d cos(a,b) / d a, valid for any nonzero a,b (not just unit norm).
Vec cosine_similarity_grad_a(std::span<const double> a, std::span<const double> b);

/// Row-wise softmax(x / temperature) with per-row max subtraction.
/// Throws on non-finite input or temperature <= 0.
Matrix row_softmax(const Matrix& m, double temperature);

/// VJP of row_softmax: given y = row_softmax(x, T) and dL/dy, returns dL/dx.
Matrix row_softmax_backward(const Matrix& y, const Matrix& upstream, double temperature);

/// Entropy sharpening: p_i^{1/T2} / sum_j p_j^{1/T2}. Powers are taken in
/// log space so tiny probabilities cannot underflow to an all-zero row.
/// Throws on negative entries or an all-zero input.
Vec sharpen(std::span<const double> p, const SharpenConfig& cfg);
Matrix sharpen_rows(const Matrix& p, const SharpenConfig& cfg);

/// VJP of sharpen_rows: given input p, output y and dL/dy, returns dL/dp.
/// Zero entries receive zero gradient.
Matrix sharpen_rows_backward(const Matrix& p, const Matrix& y, const Matrix& upstream,
                             const SharpenConfig& cfg);

/// Row normalization that keeps each row total at 1. All-zero rows map to
/// the uniform row 1/cols. Throws on negative entries.
Matrix row_normalize_phi(const Matrix& m);

/// VJP of row_normalize_phi. Rows that hit the uniform fallback are locally
/// constant and receive zero gradient.
Matrix row_normalize_phi_backward(const Matrix& input, const Matrix& upstream);

/// Frobenius inner product sum_ij a_ij b_ij. Throws on shape mismatch.
double frobenius_inner(const Matrix& a, const Matrix& b);

/// Shannon entropy of a probability row (natural log); zero entries contribute 0.
double shannon_entropy(std::span<const double> p);

} // namespace ssda
