#include "ssda/data.hpp"

#include "ssda/errors.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssda {

void validate(const DomainScenario& s) {
    if (s.class_count < 2) throw ConfigError("scenario: need at least 2 classes");
    if (s.input_dim < 1) throw ConfigError("scenario: input_dim must be >= 1");
    if (s.shots < 1) throw ConfigError("scenario: shots must be >= 1");
    if (s.shots * s.class_count > s.target_count) {
        throw ConfigError("scenario: shots * class_count exceeds the target sample budget");
    }
    if (s.source_count % s.class_count != 0 || s.target_count % s.class_count != 0) {
        throw ConfigError("scenario: source_count and target_count must divide by class_count "
                          "(uniform class priors are asserted by exact count)");
    }
    if (!s.class_means.empty()) {
        if (s.class_means.size() != s.class_count) {
            throw ConfigError("scenario: class_means must list one mean per class");
        }
        for (const auto& m : s.class_means) {
            if (m.size() != s.input_dim) throw ConfigError("scenario: class mean dimension mismatch");
        }
    }
    if (!s.class_sigmas.empty() && s.class_sigmas.size() != s.class_count) {
        throw ConfigError("scenario: class_sigmas must list one sigma per class");
    }
    if (!s.translation.empty() && s.translation.size() > s.input_dim) {
        throw ConfigError("scenario: translation has more coordinates than input_dim");
    }
    if (s.class_sigma <= 0.0) throw ConfigError("scenario: class_sigma must be > 0");
    if (s.scale <= 0.0) throw ConfigError("scenario: scale must be > 0");
}

void validate(const AugmentPolicy& p) {
    if (p.weak_noise_sigma < 0.0 || p.strong_noise_sigma < 0.0) {
        throw ConfigError("augment: noise sigmas must be >= 0");
    }
    if (!(p.strong_noise_sigma > p.weak_noise_sigma)) {
        throw ConfigError("augment: the strong policy must be strictly stronger "
                          "(strong_noise_sigma > weak_noise_sigma)");
    }
    if (p.strong_dropout_prob < 0.0 || p.strong_dropout_prob > 1.0) {
        throw ConfigError("augment: dropout probability must lie in [0,1]");
    }
}

namespace {

Vec default_mean(const DomainScenario& s, std::size_t k) {
    Vec m(s.input_dim, 0.0);
    if (s.input_dim == 1) {
        const double t = s.class_count == 1
                             ? 0.0
                             : 2.0 * static_cast<double>(k) / static_cast<double>(s.class_count - 1) - 1.0;
        m[0] = s.class_radius * t;
    } else {
        const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(k) /
                             static_cast<double>(s.class_count);
        m[0] = s.class_radius * std::cos(angle);
        m[1] = s.class_radius * std::sin(angle);
    }
    return m;
}

Vec sample_point(const DomainScenario& s, std::size_t k, Rng& rng) {
    const Vec mean = s.class_means.empty() ? default_mean(s, k) : s.class_means[k];
    const double sigma = s.class_sigmas.empty() ? s.class_sigma : s.class_sigmas[k];
    Vec x(s.input_dim);
    for (std::size_t d = 0; d < s.input_dim; ++d) x[d] = mean[d] + sigma * rng.normal();
    return x;
}

// Rotation in the (0,1) plane, then uniform scale, then translation.
Vec apply_domain_transform(const DomainScenario& s, Vec x) {
    if (s.input_dim >= 2 && s.rotation_degrees != 0.0) {
        const double theta = s.rotation_degrees * 3.14159265358979323846 / 180.0;
        const double c = std::cos(theta);
        const double sn = std::sin(theta);
        const double x0 = x[0];
        const double x1 = x[1];
        x[0] = c * x0 - sn * x1;
        x[1] = sn * x0 + c * x1;
    }
    for (double& v : x) v *= s.scale;
    for (std::size_t d = 0; d < s.translation.size() && d < x.size(); ++d) x[d] += s.translation[d];
    return x;
}

} // namespace

SsdaSplit generate(const DomainScenario& s) {
    validate(s);
    SsdaSplit split;

    Rng source_rng(derive_seed({s.seed, 0xd5a7a}));
    const std::size_t per_class_src = s.source_count / s.class_count;
    split.source.features = Matrix(s.source_count, s.input_dim);
    split.source.labels.resize(s.source_count);
    std::size_t row = 0;
    for (std::size_t k = 0; k < s.class_count; ++k) {
        for (std::size_t i = 0; i < per_class_src; ++i, ++row) {
            const Vec x = sample_point(s, k, source_rng);
            for (std::size_t d = 0; d < s.input_dim; ++d) split.source.features(row, d) = x[d];
            split.source.labels[row] = static_cast<int>(k);
        }
    }

    // Target pool: base points drawn from the source conditionals with an
    // independent stream, then pushed through the domain transform. The
    // first `shots` of each class become the labeled split.
    Rng target_rng(derive_seed({s.seed, 0x7a49e7}));
    const std::size_t per_class_tgt = s.target_count / s.class_count;
    const std::size_t labeled_count = s.shots * s.class_count;
    const std::size_t unlabeled_count = s.target_count - labeled_count;

    split.target_labeled.features = Matrix(labeled_count, s.input_dim);
    split.target_labeled.labels.resize(labeled_count);
    split.target_unlabeled = Matrix(unlabeled_count, s.input_dim);
    std::vector<int> eval_labels(unlabeled_count);

    std::size_t labeled_row = 0;
    std::size_t unlabeled_row = 0;
    for (std::size_t k = 0; k < s.class_count; ++k) {
        for (std::size_t i = 0; i < per_class_tgt; ++i) {
            const Vec x = apply_domain_transform(s, sample_point(s, k, target_rng));
            if (i < s.shots) {
                for (std::size_t d = 0; d < s.input_dim; ++d) {
                    split.target_labeled.features(labeled_row, d) = x[d];
                }
                split.target_labeled.labels[labeled_row] = static_cast<int>(k);
                ++labeled_row;
            } else {
                for (std::size_t d = 0; d < s.input_dim; ++d) {
                    split.target_unlabeled(unlabeled_row, d) = x[d];
                }
                eval_labels[unlabeled_row] = static_cast<int>(k);
                ++unlabeled_row;
            }
        }
    }
    split.target_eval = EvalLabels(std::move(eval_labels));
    return split;
}

Matrix augment(const Matrix& batch, const AugmentPolicy& policy, AugmentStrength strength,
               std::uint64_t seed) {
    Rng rng(seed);
    Matrix out = batch;
    const double sigma =
        strength == AugmentStrength::Weak ? policy.weak_noise_sigma : policy.strong_noise_sigma;
    if (sigma > 0.0) {
        for (double& v : out.data()) v += sigma * rng.normal();
    }
    if (strength == AugmentStrength::Strong && policy.strong_dropout_prob > 0.0) {
        for (double& v : out.data()) {
            if (rng.uniform() < policy.strong_dropout_prob) v = 0.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& s, const std::string& path, std::size_t line_no) {
    double v = 0.0;
    const char* begin = s.data();
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) {
        throw IoError(path + ":" + std::to_string(line_no) + ": non-numeric feature '" + s + "'");
    }
    return v;
}

int parse_label(const std::string& s, const std::string& path, std::size_t line_no) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v < 0) {
        throw IoError(path + ":" + std::to_string(line_no) + ": bad label '" + s + "'");
    }
    return v;
}

} // namespace

SsdaSplit load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("load_csv: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw IoError(path + ":1: missing header row");
    const auto header = split_fields(line);
    if (header.size() < 3 || header[0] != "split" || header[1] != "label") {
        throw IoError(path + ":1: header must be 'split,label,f0,..'");
    }
    const std::size_t dim = header.size() - 2;
    for (std::size_t d = 0; d < dim; ++d) {
        if (header[d + 2] != "f" + std::to_string(d)) {
            throw IoError(path + ":1: feature columns must be named f0..f" + std::to_string(dim - 1));
        }
    }

    std::vector<Vec> src, lab, unl;
    std::vector<int> src_y, lab_y, unl_y;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw IoError(path + ":" + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields, got " +
                          std::to_string(fields.size()));
        }
        const int y = parse_label(fields[1], path, line_no);
        Vec x(dim);
        for (std::size_t d = 0; d < dim; ++d) x[d] = parse_double(fields[d + 2], path, line_no);
        if (fields[0] == "source") {
            src.push_back(std::move(x));
            src_y.push_back(y);
        } else if (fields[0] == "target_labeled") {
            lab.push_back(std::move(x));
            lab_y.push_back(y);
        } else if (fields[0] == "target_unlabeled") {
            unl.push_back(std::move(x));
            unl_y.push_back(y);
        } else {
            throw IoError(path + ":" + std::to_string(line_no) + ": unknown split token '" +
                          fields[0] + "'");
        }
    }
    if (lab.empty()) {
        throw IoError(path + ": target_labeled split is empty (the setting requires labeled "
                      "target samples for every class)");
    }

    auto pack = [dim](const std::vector<Vec>& rows) {
        Matrix m(rows.size(), dim);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t d = 0; d < dim; ++d) m(i, d) = rows[i][d];
        }
        return m;
    };
    SsdaSplit split;
    split.source = {pack(src), std::move(src_y)};
    split.target_labeled = {pack(lab), std::move(lab_y)};
    split.target_unlabeled = pack(unl);
    split.target_eval = EvalLabels(std::move(unl_y));
    return split;
}

namespace {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_rows(std::ostream& out, const char* split, const Matrix& features,
                const std::vector<int>& labels) {
    for (std::size_t i = 0; i < features.rows(); ++i) {
        out << split << ',' << labels[i];
        for (std::size_t d = 0; d < features.cols(); ++d) out << ',' << format_double(features(i, d));
        out << '\n';
    }
}

} // namespace

void write_csv(const std::string& path, const SsdaSplit& split) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_csv: cannot open " + path);
    out << "split,label";
    for (std::size_t d = 0; d < split.input_dim(); ++d) out << ",f" << d;
    out << '\n';
    write_rows(out, "source", split.source.features, split.source.labels);
    write_rows(out, "target_labeled", split.target_labeled.features, split.target_labeled.labels);
    write_rows(out, "target_unlabeled", split.target_unlabeled, split.target_eval.for_evaluation_only());
    if (!out) throw IoError("write_csv: write failed for " + path);
}

} // namespace ssda
