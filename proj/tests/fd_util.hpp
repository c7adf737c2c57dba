#pragma once

// Test-side central finite-difference oracle. Lives in test code only and
// never calls any analytic-gradient path.

#include "ssda/matrix.hpp"

#include <cmath>
#include <functional>

namespace testutil {

inline ssda::Matrix central_difference(ssda::Matrix x,
                                       const std::function<double(const ssda::Matrix&)>& value,
                                       double h = 1e-5) {
    ssda::Matrix g(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + h;
        const double up = value(x);
        x.data()[i] = keep - h;
        const double down = value(x);
        x.data()[i] = keep;
        g.data()[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_rel_err(const ssda::Matrix& a, const ssda::Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a.data()[i];
        const double y = b.data()[i];
        const double scale = std::max(std::abs(x), std::abs(y));
        if (scale < 1e-6) {
            if (std::abs(x - y) > 1e-7) worst = std::max(worst, 1.0);
            continue;
        }
        worst = std::max(worst, std::abs(x - y) / scale);
    }
    return worst;
}

} // namespace testutil
