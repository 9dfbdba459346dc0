#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cosmoboltz {

inline constexpr double pi = std::numbers::pi;

/// Raised when a caller violates a documented precondition (bad ranges,
/// mismatched grids, inconsistent indices).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation cannot continue numerically (blow-up,
/// degenerate fit data, memory budget exceeded).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

/// Soft-potential exponent range (-3, 0).
inline void require_soft_gamma(double gamma) {
    require(gamma > -3.0 && gamma < 0.0,
            "gamma must lie in the soft-potential range (-3, 0), got " + std::to_string(gamma));
}

/// Fixed-order pairwise summation. The split points depend only on the
/// length, so the result is reproducible bit for bit.
inline double pairwise_sum(std::span<const double> x) {
    constexpr std::size_t block = 64;
    if (x.size() <= block) {
        double s = 0.0;
        for (double v : x) s += v;
        return s;
    }
    const std::size_t half = x.size() / 2;
    return pairwise_sum(x.first(half)) + pairwise_sum(x.subspan(half));
}

}  // namespace cosmoboltz
