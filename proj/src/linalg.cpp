#include "ssda/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ssda {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm input");
    const double c = dot(a, b) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

Vec cosine_similarity_grad_a(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero-norm input");
    const double c = dot(a, b) / (na * nb);
    Vec g(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        g[i] = b[i] / (na * nb) - c * a[i] / (na * na);
    }
    return g;
}

Matrix row_softmax(const Matrix& m, double temperature) {
    if (temperature <= 0.0) throw std::invalid_argument("row_softmax: temperature must be > 0");
    if (!m.all_finite()) throw std::invalid_argument("row_softmax: non-finite input entry");
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto row = m.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double e = std::exp((row[j] - mx) / temperature);
            out(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

Matrix row_softmax_backward(const Matrix& y, const Matrix& upstream, double temperature) {
    require_same_shape(y, upstream, "row_softmax_backward");
    Matrix dx(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < y.cols(); ++j) s += upstream(i, j) * y(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j) {
            dx(i, j) = y(i, j) * (upstream(i, j) - s) / temperature;
        }
    }
    return dx;
}

namespace {

void sharpen_row(std::span<const double> p, std::span<double> out, double inv_t) {
    double max_log = -std::numeric_limits<double>::infinity();
    bool any_positive = false;
    for (double v : p) {
        if (v < 0.0) throw std::invalid_argument("sharpen: negative entry");
        if (!std::isfinite(v)) throw std::invalid_argument("sharpen: non-finite entry");
        if (v > 0.0) {
            any_positive = true;
            max_log = std::max(max_log, inv_t * std::log(v));
        }
    }
    if (!any_positive) throw std::invalid_argument("sharpen: all-zero input has no distribution");
    double sum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        const double w = p[j] > 0.0 ? std::exp(inv_t * std::log(p[j]) - max_log) : 0.0;
        out[j] = w;
        sum += w;
    }
    for (std::size_t j = 0; j < p.size(); ++j) out[j] /= sum;
}

} // namespace

Vec sharpen(std::span<const double> p, const SharpenConfig& cfg) {
    if (cfg.temperature_t2 <= 0.0) throw std::invalid_argument("sharpen: temperature must be > 0");
    Vec out(p.size());
    sharpen_row(p, out, 1.0 / cfg.temperature_t2);
    return out;
}

Matrix sharpen_rows(const Matrix& p, const SharpenConfig& cfg) {
    if (cfg.temperature_t2 <= 0.0) throw std::invalid_argument("sharpen: temperature must be > 0");
    Matrix out(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.rows(); ++i) {
        sharpen_row(p.row(i), out.row(i), 1.0 / cfg.temperature_t2);
    }
    return out;
}

Matrix sharpen_rows_backward(const Matrix& p, const Matrix& y, const Matrix& upstream,
                             const SharpenConfig& cfg) {
    require_same_shape(p, y, "sharpen_rows_backward");
    require_same_shape(p, upstream, "sharpen_rows_backward");
    const double a = 1.0 / cfg.temperature_t2;
    Matrix dp(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.rows(); ++i) {
        // log of the unnormalized mass log S = max + log sum exp(a log p - max)
        double max_log = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (p(i, j) > 0.0) max_log = std::max(max_log, a * std::log(p(i, j)));
        }
        double z = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (p(i, j) > 0.0) z += std::exp(a * std::log(p(i, j)) - max_log);
        }
        const double log_s = max_log + std::log(z);
        double pull = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) pull += upstream(i, j) * y(i, j);
        for (std::size_t j = 0; j < p.cols(); ++j) {
            if (p(i, j) <= 0.0) {
                dp(i, j) = 0.0;
                continue;
            }
            // dL/dp_j = a p_j^{a-1} / S * (up_j - sum_i up_i y_i)
            const double coef = a * std::exp((a - 1.0) * std::log(p(i, j)) - log_s);
            dp(i, j) = coef * (upstream(i, j) - pull);
        }
    }
    return dp;
}

Matrix row_normalize_phi(const Matrix& m) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            if (v < 0.0) throw std::invalid_argument("row_normalize_phi: negative entry");
            if (!std::isfinite(v)) throw std::invalid_argument("row_normalize_phi: non-finite entry");
            sum += v;
        }
        if (sum == 0.0) {
            const double u = 1.0 / static_cast<double>(m.cols());
            for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = u;
        } else {
            for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j) / sum;
        }
    }
    return out;
}

Matrix row_normalize_phi_backward(const Matrix& input, const Matrix& upstream) {
    require_same_shape(input, upstream, "row_normalize_phi_backward");
    Matrix dx(input.rows(), input.cols());
    for (std::size_t i = 0; i < input.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < input.cols(); ++j) sum += input(i, j);
        if (sum == 0.0) continue; // uniform fallback row: locally constant
        double pull = 0.0;
        for (std::size_t j = 0; j < input.cols(); ++j) pull += upstream(i, j) * input(i, j) / sum;
        for (std::size_t j = 0; j < input.cols(); ++j) {
            dx(i, j) = (upstream(i, j) - pull) / sum;
        }
    }
    return dx;
}

double frobenius_inner(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "frobenius_inner");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
}

double shannon_entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

} // namespace ssda
