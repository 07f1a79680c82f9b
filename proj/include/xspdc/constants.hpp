#pragma once

#include <numbers>

namespace xspdc {

/// h*c in keV*Angstrom.
inline constexpr double kHcKevAngstrom = 12.39842;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kMmToAngstrom = 1.0e7;

constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Gaussian sigma from a full width at half maximum.
inline constexpr double kFwhmToSigma = 0.42466090014400953;  // 1 / (2 sqrt(2 ln 2))

}  // namespace xspdc
