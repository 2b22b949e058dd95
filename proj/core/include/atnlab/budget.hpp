#pragma once

#include <span>

#include "atnlab/tensor.hpp"

namespace atnlab {

inline constexpr float kPixelMin = 0.0f;
inline constexpr float kPixelMax = 255.0f;

/// Moves every element of `candidate` into [x - eps, x + eps] ∩ [0, 255].
/// The bound holds exactly: |double(x') - double(x)| <= eps for every element.
void project_linf(std::span<const float> clean, std::span<float> candidate, float eps);

/// Largest |adv - clean| computed in double precision.
double linf_distance(std::span<const float> clean, std::span<const float> adv);

bool within_budget(std::span<const float> clean, std::span<const float> adv, float eps);

/// Throws ErrorCode::BudgetViolation when `adv` leaves the eps-ball or pixel range.
void validate_budget(const Tensor& clean, const Tensor& adv, float eps);

}  // namespace atnlab
