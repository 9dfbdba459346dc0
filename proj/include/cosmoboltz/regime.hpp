#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "cosmoboltz/common.hpp"

namespace cosmoboltz {

/// The four (E_a, gamma) ranges for which decay envelopes are known, plus
/// everything else.
enum class Regime { I, II, III, IV, Uncovered };

/// Tolerance used when deciding E_a == 0 or gamma equal to a boundary value.
inline constexpr double regime_tolerance = 1e-9;

inline std::string_view to_string(Regime r) {
    switch (r) {
        case Regime::I: return "I";
        case Regime::II: return "II";
        case Regime::III: return "III";
        case Regime::IV: return "IV";
        case Regime::Uncovered: return "UNCOVERED";
    }
    return "UNCOVERED";
}

inline Regime regime_from_string(std::string_view s) {
    if (s == "I") return Regime::I;
    if (s == "II") return Regime::II;
    if (s == "III") return Regime::III;
    if (s == "IV") return Regime::IV;
    if (s == "UNCOVERED") return Regime::Uncovered;
    throw ContractError("unknown regime tag '" + std::string(s) + "'");
}

/// Partition of {E_a >= 0} x (-3, 0):
///   I   E_a = 0, gamma = -3/2        II  E_a = 0, -3 < gamma < -3/2
///   III E_a > 0, gamma = -2          IV  E_a > 0, -3 < gamma < -2
/// "= 0" and "= -3/2", "= -2" are decided within regime_tolerance.
inline Regime classify_regime(double energy, double gamma) {
    require(std::isfinite(energy) && energy >= -regime_tolerance,
            "classify_regime: E_a must be non-negative (expanding universe)");
    require_soft_gamma(gamma);
    const bool flat = std::abs(energy) <= regime_tolerance;
    if (flat) {
        if (std::abs(gamma + 1.5) <= regime_tolerance) return Regime::I;
        if (gamma < -1.5) return Regime::II;
        return Regime::Uncovered;
    }
    if (std::abs(gamma + 2.0) <= regime_tolerance) return Regime::III;
    if (gamma < -2.0) return Regime::IV;
    return Regime::Uncovered;
}

}  // namespace cosmoboltz
