#pragma once

#include "ssda/matrix.hpp"
#include "ssda/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ssda {

/// Synthetic SSDA scenario: Gaussian class clusters in the source domain and
/// a rigid transform (rotation in the first two dims, then scale, then
/// translation) defining the shifted target domain. Labels are shared; the
/// class-conditional densities move.
struct DomainScenario {
    std::size_t class_count = 5;
    std::size_t input_dim = 2;
    double class_radius = 2.0;   // default class means sit on this circle
    double class_sigma = 0.35;   // isotropic within-class stddev
    std::vector<Vec> class_means;     // optional explicit means (overrides the circle)
    std::vector<double> class_sigmas; // optional per-class sigma

    double rotation_degrees = 30.0;
    Vec translation = {0.5, 0.0};
    double scale = 1.0;

    std::size_t source_count = 500;
    std::size_t target_count = 515; // labeled shots are carved out of this pool
    std::size_t shots = 3;          // labeled target samples per class

    std::uint64_t seed = 0;
};

void validate(const DomainScenario& scenario);

struct LabeledSet {
    Matrix features;
    std::vector<int> labels;
};

/// Ground-truth labels of the unlabeled target split. They exist only for
/// evaluation; training code paths receive the bare feature matrix and have
/// no way to reach these.
class EvalLabels {
public:
    EvalLabels() = default;
    explicit EvalLabels(std::vector<int> labels) : labels_(std::move(labels)) {}

    const std::vector<int>& for_evaluation_only() const { return labels_; }
    std::size_t size() const { return labels_.size(); }

private:
    std::vector<int> labels_;
};

struct SsdaSplit {
    LabeledSet source;
    LabeledSet target_labeled;
    Matrix target_unlabeled;
    EvalLabels target_eval;

    std::size_t input_dim() const { return source.features.cols(); }
};

/// Deterministic given the seed; class priors are exactly uniform in both
/// domains (counts divide evenly by construction).
SsdaSplit generate(const DomainScenario& scenario);

/// Vector-space stand-ins for image augmentation: weak = additive Gaussian
/// noise, strong = stronger noise followed by random coordinate dropout.
struct AugmentPolicy {
    double weak_noise_sigma = 0.05;
    double strong_noise_sigma = 0.25;
    double strong_dropout_prob = 0.2;
};

/// Checks the weak<strong ordering; generation-time degenerate policies are
/// still accepted by `augment` itself (sigma 0 / dropout 0 is the identity).
void validate(const AugmentPolicy& policy);

enum class AugmentStrength { Weak, Strong };

Matrix augment(const Matrix& batch, const AugmentPolicy& policy, AugmentStrength strength,
               std::uint64_t seed);

/// CSV schema: header "split,label,f0,..,f{d-1}"; split is one of source /
/// target_labeled / target_unlabeled; unlabeled rows carry their hidden
/// evaluation label in the label column. Errors name the offending line.
SsdaSplit load_csv(const std::string& path);
void write_csv(const std::string& path, const SsdaSplit& split);

} // namespace ssda
