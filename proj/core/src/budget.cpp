#include "atnlab/budget.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "atnlab/error.hpp"

namespace atnlab {

void project_linf(std::span<const float> clean, std::span<float> candidate, float eps) {
    require(clean.size() == candidate.size(), ErrorCode::ShapeMismatch, "projection size mismatch");
    require(eps > 0.0f, ErrorCode::InvalidArgument, "epsilon must be positive");
    const double e = eps;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const double x = clean[i];
        const double lo = std::max<double>(kPixelMin, x - e);
        const double hi = std::min<double>(kPixelMax, x + e);
        float f = static_cast<float>(std::clamp(static_cast<double>(candidate[i]), lo, hi));
        // Rounding back to float can step one ulp outside the box.
        if (static_cast<double>(f) > hi) {
            f = std::nextafter(f, -std::numeric_limits<float>::infinity());
        } else if (static_cast<double>(f) < lo) {
            f = std::nextafter(f, std::numeric_limits<float>::infinity());
        }
        candidate[i] = f;
    }
}

double linf_distance(std::span<const float> clean, std::span<const float> adv) {
    require(clean.size() == adv.size(), ErrorCode::ShapeMismatch, "distance size mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        d = std::max(d, std::abs(static_cast<double>(adv[i]) - static_cast<double>(clean[i])));
    }
    return d;
}

bool within_budget(std::span<const float> clean, std::span<const float> adv, float eps) {
    if (clean.size() != adv.size()) {
        return false;
    }
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const double d = std::abs(static_cast<double>(adv[i]) - static_cast<double>(clean[i]));
        if (!(d <= static_cast<double>(eps)) || !(adv[i] >= kPixelMin && adv[i] <= kPixelMax)) {
            return false;
        }
    }
    return true;
}

void validate_budget(const Tensor& clean, const Tensor& adv, float eps) {
    require(clean.shape() == adv.shape(), ErrorCode::ShapeMismatch,
            "budget check: " + clean.shape().to_string() + " vs " + adv.shape().to_string());
    if (!within_budget(clean.data(), adv.data(), eps)) {
        std::ostringstream msg;
        msg << "budget violation: L-inf distance " << linf_distance(clean.data(), adv.data())
            << " exceeds epsilon " << eps << " or pixels leave [0, 255]";
        fail(ErrorCode::BudgetViolation, msg.str());
    }
}

}  // namespace atnlab
