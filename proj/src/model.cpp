#include "ssda/model.hpp"

#include "ssda/errors.hpp"
#include "ssda/linalg.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ssda {

namespace {

Matrix init_weight(std::size_t rows, std::size_t cols, Rng& rng) {
    Matrix w(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double& v : w.data()) v = rng.normal(0.0, scale);
    return w;
}

} // namespace

FeatureExtractor::FeatureExtractor(const MlpConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.input_dim == 0 || cfg.hidden_dim == 0 || cfg.feature_dim == 0) {
        throw std::invalid_argument("FeatureExtractor: dimensions must be positive");
    }
    w1 = init_weight(cfg.hidden_dim, cfg.input_dim, rng);
    b1.assign(cfg.hidden_dim, 0.0);
    w2 = init_weight(cfg.feature_dim, cfg.hidden_dim, rng);
    b2.assign(cfg.feature_dim, 0.0);
}

Matrix FeatureExtractor::forward(const Matrix& inputs, Cache* cache) const {
    if (inputs.cols() != cfg_.input_dim) {
        throw std::invalid_argument("FeatureExtractor::forward: input dimension mismatch");
    }
    if (!inputs.all_finite()) {
        throw std::invalid_argument("FeatureExtractor::forward: non-finite input");
    }
    const std::size_t n = inputs.rows();
    Matrix hidden(n, cfg_.hidden_dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t h = 0; h < cfg_.hidden_dim; ++h) {
            double z = b1[h];
            for (std::size_t d = 0; d < cfg_.input_dim; ++d) z += w1(h, d) * inputs(i, d);
            hidden(i, h) = std::tanh(z);
        }
    }
    Matrix prenorm(n, cfg_.feature_dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < cfg_.feature_dim; ++f) {
            double z = b2[f];
            for (std::size_t h = 0; h < cfg_.hidden_dim; ++h) z += w2(f, h) * hidden(i, h);
            prenorm(i, f) = z;
        }
    }
    std::size_t perturbed = 0;
    Vec norms(n);
    Matrix features(n, cfg_.feature_dim);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = l2_norm(prenorm.row(i));
        if (norm == 0.0) {
            prenorm(i, 0) += 1e-8;
            norm = 1e-8;
            ++perturbed;
        }
        norms[i] = norm;
        for (std::size_t f = 0; f < cfg_.feature_dim; ++f) features(i, f) = prenorm(i, f) / norm;
    }
    if (cache != nullptr) {
        cache->owner = this;
        cache->inputs = inputs;
        cache->hidden = std::move(hidden);
        cache->prenorm = std::move(prenorm);
        cache->norms = std::move(norms);
        cache->features = features;
        cache->perturbed_rows = perturbed;
    }
    return features;
}

FeatureExtractor::Gradients FeatureExtractor::backward(const Cache& cache,
                                                       const Matrix& d_features) const {
    if (cache.owner != this || cache.features.rows() != d_features.rows() ||
        cache.features.cols() != d_features.cols() || cache.hidden.cols() != cfg_.hidden_dim) {
        throw std::invalid_argument("FeatureExtractor::backward: stale or foreign cache");
    }
    const std::size_t n = cache.inputs.rows();
    Gradients g;
    g.w1 = Matrix(cfg_.hidden_dim, cfg_.input_dim);
    g.b1.assign(cfg_.hidden_dim, 0.0);
    g.w2 = Matrix(cfg_.feature_dim, cfg_.hidden_dim);
    g.b2.assign(cfg_.feature_dim, 0.0);

    Matrix d_hidden(n, cfg_.hidden_dim);
    for (std::size_t i = 0; i < n; ++i) {
        // Through the row normalization: d_pre = (d_f - (d_f . f) f) / norm
        const double norm = cache.norms[i];
        double pull = 0.0;
        for (std::size_t f = 0; f < cfg_.feature_dim; ++f) {
            pull += d_features(i, f) * cache.features(i, f);
        }
        for (std::size_t f = 0; f < cfg_.feature_dim; ++f) {
            const double d_pre = (d_features(i, f) - pull * cache.features(i, f)) / norm;
            g.b2[f] += d_pre;
            for (std::size_t h = 0; h < cfg_.hidden_dim; ++h) {
                g.w2(f, h) += d_pre * cache.hidden(i, h);
                d_hidden(i, h) += d_pre * w2(f, h);
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t h = 0; h < cfg_.hidden_dim; ++h) {
            const double a = cache.hidden(i, h);
            const double d_z = d_hidden(i, h) * (1.0 - a * a); // tanh'
            g.b1[h] += d_z;
            for (std::size_t d = 0; d < cfg_.input_dim; ++d) {
                g.w1(h, d) += d_z * cache.inputs(i, d);
            }
        }
    }
    return g;
}

LinearClassifier::LinearClassifier(std::size_t class_count, std::size_t feature_dim, Rng& rng) {
    if (class_count == 0 || feature_dim == 0) {
        throw std::invalid_argument("LinearClassifier: dimensions must be positive");
    }
    w = init_weight(class_count, feature_dim, rng);
    b.assign(class_count, 0.0);
}

Matrix LinearClassifier::forward(const Matrix& features, Cache* cache) const {
    if (features.cols() != w.cols()) {
        throw std::invalid_argument("LinearClassifier::forward: feature dimension mismatch");
    }
    const std::size_t n = features.rows();
    Matrix logits(n, w.rows());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < w.rows(); ++k) {
            double z = b[k];
            for (std::size_t f = 0; f < w.cols(); ++f) z += w(k, f) * features(i, f);
            logits(i, k) = z;
        }
    }
    Matrix probs = row_softmax(logits, 1.0);
    if (cache != nullptr) {
        cache->owner = this;
        cache->features = features;
        cache->probs = probs;
    }
    return probs;
}

LinearClassifier::Gradients LinearClassifier::backward(const Cache& cache,
                                                       const Matrix& d_probs) const {
    if (cache.owner != this || cache.probs.rows() != d_probs.rows() ||
        cache.probs.cols() != d_probs.cols() || cache.features.cols() != w.cols()) {
        throw std::invalid_argument("LinearClassifier::backward: stale or foreign cache");
    }
    const Matrix d_logits = row_softmax_backward(cache.probs, d_probs, 1.0);
    Gradients g;
    g.w = transpose_matmul(d_logits, cache.features); // C × d
    g.b.assign(w.rows(), 0.0);
    for (std::size_t i = 0; i < d_logits.rows(); ++i) {
        for (std::size_t k = 0; k < w.rows(); ++k) g.b[k] += d_logits(i, k);
    }
    g.d_features = matmul(d_logits, w);
    return g;
}

Model::Model(const MlpConfig& cfg, std::size_t class_count, Rng& rng)
    : extractor(cfg, rng), classifier(class_count, cfg.feature_dim, rng) {}

std::vector<std::span<double>> Model::param_blocks() {
    return {
        {extractor.w1.data().data(), extractor.w1.size()},
        {extractor.b1.data(), extractor.b1.size()},
        {extractor.w2.data().data(), extractor.w2.size()},
        {extractor.b2.data(), extractor.b2.size()},
        {classifier.w.data().data(), classifier.w.size()},
        {classifier.b.data(), classifier.b.size()},
    };
}

std::vector<std::span<const double>> Model::param_blocks() const {
    return {
        {extractor.w1.data().data(), extractor.w1.size()},
        {extractor.b1.data(), extractor.b1.size()},
        {extractor.w2.data().data(), extractor.w2.size()},
        {extractor.b2.data(), extractor.b2.size()},
        {classifier.w.data().data(), classifier.w.size()},
        {classifier.b.data(), classifier.b.size()},
    };
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& block : param_blocks()) n += block.size();
    return n;
}

ModelGradients ModelGradients::zeros_like(const Model& model) {
    ModelGradients g;
    g.extractor.w1 = Matrix(model.extractor.w1.rows(), model.extractor.w1.cols());
    g.extractor.b1.assign(model.extractor.b1.size(), 0.0);
    g.extractor.w2 = Matrix(model.extractor.w2.rows(), model.extractor.w2.cols());
    g.extractor.b2.assign(model.extractor.b2.size(), 0.0);
    g.classifier.w = Matrix(model.classifier.w.rows(), model.classifier.w.cols());
    g.classifier.b.assign(model.classifier.b.size(), 0.0);
    return g;
}

void ModelGradients::accumulate(const FeatureExtractor::Gradients& g) {
    for (std::size_t i = 0; i < extractor.w1.size(); ++i) extractor.w1.data()[i] += g.w1.data()[i];
    for (std::size_t i = 0; i < extractor.b1.size(); ++i) extractor.b1[i] += g.b1[i];
    for (std::size_t i = 0; i < extractor.w2.size(); ++i) extractor.w2.data()[i] += g.w2.data()[i];
    for (std::size_t i = 0; i < extractor.b2.size(); ++i) extractor.b2[i] += g.b2[i];
}

void ModelGradients::accumulate_classifier(const Matrix& dw, const Vec& db) {
    for (std::size_t i = 0; i < classifier.w.size(); ++i) classifier.w.data()[i] += dw.data()[i];
    for (std::size_t i = 0; i < classifier.b.size(); ++i) classifier.b[i] += db[i];
}

std::vector<std::span<const double>> ModelGradients::blocks() const {
    return {
        {extractor.w1.data().data(), extractor.w1.size()},
        {extractor.b1.data(), extractor.b1.size()},
        {extractor.w2.data().data(), extractor.w2.size()},
        {extractor.b2.data(), extractor.b2.size()},
        {classifier.w.data().data(), classifier.w.size()},
        {classifier.b.data(), classifier.b.size()},
    };
}

void SgdOptimizer::step(std::vector<std::span<double>> params,
                        std::vector<std::span<const double>> grads,
                        const std::vector<double>* per_block_lr_scale) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("SgdOptimizer::step: block count mismatch");
    }
    if (per_block_lr_scale != nullptr && per_block_lr_scale->size() != params.size()) {
        throw std::invalid_argument("SgdOptimizer::step: lr scale count mismatch");
    }
    if (velocities_.empty()) {
        velocities_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) velocities_[i].assign(params[i].size(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size() || velocities_[i].size() != params[i].size()) {
            throw std::invalid_argument("SgdOptimizer::step: block shape mismatch");
        }
        for (double g : grads[i]) {
            if (!std::isfinite(g)) throw NumericError("SgdOptimizer::step: non-finite gradient");
        }
    }
    double decayed = cfg_.learning_rate;
    if (cfg_.lr_decay_gamma > 0.0 && cfg_.lr_decay_power > 0.0) {
        decayed *= std::pow(1.0 + cfg_.lr_decay_gamma * static_cast<double>(steps_taken_),
                            -cfg_.lr_decay_power);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double lr = decayed * (per_block_lr_scale != nullptr ? (*per_block_lr_scale)[i] : 1.0);
        for (std::size_t j = 0; j < params[i].size(); ++j) {
            velocities_[i][j] = cfg_.momentum * velocities_[i][j] + grads[i][j];
            params[i][j] -= lr * velocities_[i][j];
        }
    }
    ++steps_taken_;
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<unsigned char, 8> kMagic = {'S', 'S', 'D', 'A', 'C', 'K', 'P', '1'};

std::uint32_t crc_table_entry(std::uint32_t i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    return c;
}

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

void append_f64(std::vector<unsigned char>& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::vector<unsigned char>& in, std::size_t& pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos++]) << (8 * i);
    return v;
}

double read_f64(const std::vector<unsigned char>& in, std::size_t& pos) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(in[pos++]) << (8 * i);
    return std::bit_cast<double>(bits);
}

} // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) t[i] = crc_table_entry(i);
        return t;
    }();
    std::uint32_t c = 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void save_checkpoint(const std::string& path, const Model& model) {
    std::vector<unsigned char> bytes;
    bytes.insert(bytes.end(), kMagic.begin(), kMagic.end());
    append_u32(bytes, 1); // format version
    const auto& cfg = model.extractor.config();
    append_u32(bytes, static_cast<std::uint32_t>(cfg.input_dim));
    append_u32(bytes, static_cast<std::uint32_t>(cfg.hidden_dim));
    append_u32(bytes, static_cast<std::uint32_t>(cfg.feature_dim));
    append_u32(bytes, static_cast<std::uint32_t>(model.classifier.class_count()));
    for (const auto& block : model.param_blocks()) {
        for (double v : block) append_f64(bytes, v);
    }
    append_u32(bytes, crc32(bytes.data(), bytes.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("save_checkpoint: cannot open " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_checkpoint: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < kMagic.size() + 5 * 4 + 4) throw IoError("load_checkpoint: truncated file");

    const std::uint32_t stored_crc =
        static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
        static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
        static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
        static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
    if (crc32(bytes.data(), bytes.size() - 4) != stored_crc) {
        throw IoError("load_checkpoint: CRC mismatch (corrupt checkpoint)");
    }

    std::size_t pos = 0;
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw IoError("load_checkpoint: bad magic");
    }
    pos += kMagic.size();
    const std::uint32_t version = read_u32(bytes, pos);
    if (version != 1) throw IoError("load_checkpoint: unsupported version");

    MlpConfig cfg;
    cfg.input_dim = read_u32(bytes, pos);
    cfg.hidden_dim = read_u32(bytes, pos);
    cfg.feature_dim = read_u32(bytes, pos);
    const std::uint32_t class_count = read_u32(bytes, pos);

    Rng dummy(0);
    Model model(cfg, class_count, dummy);
    const std::size_t expected = pos + model.parameter_count() * 8 + 4;
    if (bytes.size() != expected) throw IoError("load_checkpoint: parameter block size mismatch");
    for (auto block : model.param_blocks()) {
        for (double& v : block) v = read_f64(bytes, pos);
    }
    return model;
}

} // namespace ssda
