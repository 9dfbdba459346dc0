#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "cosmoboltz/common.hpp"
#include "cosmoboltz/regime.hpp"

namespace cosmoboltz {

inline bool is_logarithmic(Regime r) { return r == Regime::I || r == Regime::III; }

/// Exponent of the envelope: the power of (1 + t) for II and IV, the power
/// of 1 + ln(1 + t) for I and III.
inline double predicted_exponent(Regime regime, int k, double gamma) {
    require(regime != Regime::Uncovered, "predicted_envelope: no envelope for UNCOVERED parameters");
    require(k >= 1, "predicted_envelope: k must be at least 1");
    require_soft_gamma(gamma);
    switch (regime) {
        case Regime::I:
        case Regime::III: return -double(k);
        case Regime::II: return k + 2.0 * gamma * k / 3.0;
        case Regime::IV: return 2.0 * k + gamma * k;
        case Regime::Uncovered: break;
    }
    return 0.0;
}

/// Constant-free envelope: (1 + ln(1+t))^-k for I and III,
/// (1+t)^(k + 2 gamma k / 3) for II, (1+t)^(2k + gamma k) for IV.
inline double predicted_envelope(Regime regime, int k, double gamma, double t) {
    const double p = predicted_exponent(regime, k, gamma);
    require(t >= 0.0, "predicted_envelope: t must be non-negative");
    return is_logarithmic(regime) ? std::pow(1.0 + std::log1p(t), p) : std::pow(1.0 + t, p);
}

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double rms_residual = 0.0;
};

inline LineFit least_squares(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw NumericalError("fit_decay: abscissae are all equal");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ss += r * r;
    }
    f.rms_residual = std::sqrt(ss / n);
    return f;
}

struct DecayFit {
    LineFit power;  // log y against log(1 + t)
    LineFit log;    // log y against log(1 + ln(1 + t))
    std::size_t first = 0, count = 0;  // tail window [first, first + count)
};

/// Tail window: samples with t >= t_min among the last `tail_fraction` of
/// the series.
inline std::pair<std::size_t, std::size_t> tail_window(std::span<const double> t, double tail_fraction, double t_min) {
    require(tail_fraction > 0.0 && tail_fraction <= 1.0, "tail fraction must lie in (0, 1]");
    std::size_t first = t.size() - static_cast<std::size_t>(std::ceil(tail_fraction * t.size()));
    while (first < t.size() && t[first] < t_min) ++first;
    return {first, t.size() - first};
}

/// Least-squares decay rates on the tail window.
inline DecayFit fit_decay(std::span<const double> t, std::span<const double> y, double tail_fraction = 0.5,
                          double t_min = 10.0) {
    require(t.size() == y.size(), "fit_decay: t and y differ in length");
    const auto [first, count] = tail_window(t, tail_fraction, t_min);
    require(count >= 10, "fit_decay: need at least 10 samples in the tail window");
    std::vector<double> lx, llx, ly;
    for (std::size_t i = first; i < first + count; ++i) {
        if (!(y[i] > std::numeric_limits<double>::min()) || !std::isfinite(y[i]))
            throw NumericalError("fit_decay: series reaches zero or the floating-point floor in the tail");
        lx.push_back(std::log1p(t[i]));
        llx.push_back(std::log1p(std::log1p(t[i])));
        ly.push_back(std::log(y[i]));
    }
    DecayFit f;
    f.power = least_squares(lx, ly);
    f.log = least_squares(llx, ly);
    f.first = first;
    f.count = count;
    return f;
}

struct DecayVerdict {
    Regime regime = Regime::Uncovered;
    int r = 1, k = 1;
    double exponent_predicted = 0.0;
    double exponent_fitted = 0.0;
    double envelope_ratio_max = 0.0;
    bool ratio_nonincreasing = true;
    bool slope_ok = true;
    bool has_verdict = false;  // false for UNCOVERED parameters: fits only
    bool pass = false;
    DecayFit fit;
};

struct VerdictOptions {
    double tail_fraction = 0.5;
    double t_min = 10.0;
    /// Power regimes also need fitted slope <= (1 - slope_slack) * predicted.
    double slope_slack = 0.4;
};

/// Compares y_r(t) with the envelope on the tail window. Pass means the
/// ratio y_r / envelope is finite and nonincreasing over the second half of
/// the window, and for power regimes the fitted slope is within the slack
/// of the predicted exponent. An identically zero series passes.
inline DecayVerdict verdict(std::span<const double> t, std::span<const double> y_r, Regime regime, double gamma,
                            int r, int k, int m, const VerdictOptions& opt = {}) {
    require(r >= 1 && k >= 1 && r + k <= m, "verdict: need 0 < r < r + k <= m");
    require(t.size() == y_r.size() && !t.empty(), "verdict: t and y_r differ in length or are empty");
    DecayVerdict v;
    v.regime = regime;
    v.r = r;
    v.k = k;
    const bool zero = std::all_of(y_r.begin(), y_r.end(), [](double x) { return x == 0.0; });
    if (regime == Regime::Uncovered) {
        if (!zero) {
            v.fit = fit_decay(t, y_r, opt.tail_fraction, opt.t_min);
            v.exponent_fitted = v.fit.power.slope;
        }
        return v;
    }
    v.has_verdict = true;
    v.exponent_predicted = predicted_exponent(regime, k, gamma);
    if (zero) {
        v.pass = true;
        return v;
    }
    v.fit = fit_decay(t, y_r, opt.tail_fraction, opt.t_min);
    v.exponent_fitted = is_logarithmic(regime) ? v.fit.log.slope : v.fit.power.slope;

    std::vector<double> ratio;
    for (std::size_t i = v.fit.first; i < v.fit.first + v.fit.count; ++i)
        ratio.push_back(y_r[i] / predicted_envelope(regime, k, gamma, t[i]));
    v.envelope_ratio_max = *std::max_element(ratio.begin(), ratio.end());
    for (std::size_t i = ratio.size() / 2 + 1; i < ratio.size(); ++i)
        if (ratio[i] > ratio[i - 1] * (1.0 + 1e-12)) v.ratio_nonincreasing = false;
    if (!is_logarithmic(regime)) v.slope_ok = v.exponent_fitted <= (1.0 - opt.slope_slack) * v.exponent_predicted;
    v.pass = std::isfinite(v.envelope_ratio_max) && v.ratio_nonincreasing && v.slope_ok;
    return v;
}

}  // namespace cosmoboltz
