#pragma once

#include "ssda/matrix.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ssda {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst = 0.0;

    bool passed(double tolerance) const { return worst <= tolerance; }
};

/// Central finite-difference checks (step `fd_step`) of every loss operation
/// against its analytic gradients, plus the composite objective against all
/// model parameters with each term enabled in isolation and all together.
/// Runs `seeds` independent random instances per check.
GradCheckReport run_gradient_checks(std::uint64_t base_seed, std::size_t seeds,
                                    double fd_step = 1e-5);

} // namespace ssda
