#pragma once

#include <cmath>
#include <cstddef>

#include "foepnr/errors.hpp"
#include "foepnr/image.hpp"

namespace foepnr {

namespace vst {

inline const double kSqrt3Over2 = std::sqrt(1.5);

// Image of a zero count under the forward transform; lower clamp for the
// unbiased inverse.
inline const double kMinTransformed = kSqrt3Over2;

inline double forward(double y) {
  require(y >= 0.0, "anscombe_forward: input must be non-negative");
  return 2.0 * std::sqrt(y + 0.375);
}

inline double inverse_algebraic(double z) { return 0.25 * z * z - 0.375; }

// Closed-form approximation of the exact unbiased inverse, evaluated without
// clamping. Requires z > 0.
inline double inverse_unbiased_raw(double z) {
  const double zi = 1.0 / z;
  const double zi2 = zi * zi;
  const double zi3 = zi2 * zi;
  return 0.25 * z * z + 0.25 * kSqrt3Over2 * zi - 1.375 * zi2 + 0.625 * kSqrt3Over2 * zi3 - 0.125;
}

inline double inverse_unbiased(double z) {
  if (!(z > kMinTransformed)) z = kMinTransformed;
  return std::max(0.0, inverse_unbiased_raw(z));
}

inline double inverse_unbiased_derivative(double z) {
  require(z > 0.0, "anscombe_inverse_derivative: z must be positive");
  const double zi = 1.0 / z;
  const double zi2 = zi * zi;
  const double zi3 = zi2 * zi;
  const double zi4 = zi2 * zi2;
  return 0.5 * z - 0.25 * kSqrt3Over2 * zi2 + 2.75 * zi3 - 1.875 * kSqrt3Over2 * zi4;
}

// Derivative of the clamped inverse: zero where the lower clamp is active.
inline double inverse_unbiased_clamped_derivative(double z) {
  if (!(z > kMinTransformed)) return 0.0;
  return inverse_unbiased_derivative(z);
}

}  // namespace vst

inline Image anscombe_forward(const Image& y) {
  return map_pixels(y, [](double v) { return vst::forward(v); });
}

inline Image anscombe_inverse_algebraic(const Image& z) {
  return map_pixels(z, [](double v) { return vst::inverse_algebraic(v); });
}

struct InverseDiagnostics {
  std::size_t clamped = 0;  // pixels raised to the zero-count level first
};

inline Image anscombe_inverse_exact_unbiased(const Image& z, InverseDiagnostics* diag = nullptr) {
  std::size_t clamped = 0;
  Image out = map_pixels(z, [&](double v) {
    if (!(v > vst::kMinTransformed)) ++clamped;
    return vst::inverse_unbiased(v);
  });
  if (diag) diag->clamped = clamped;
  return out;
}

inline double anscombe_inverse_derivative(double z) { return vst::inverse_unbiased_derivative(z); }

}  // namespace foepnr
