#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

#include "gpad/core_types.hpp"
#include "gpad/gp.hpp"
#include "gpad/residual.hpp"

namespace gpad {

namespace detail {

// P(a, x) by its power series; converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < 1000000; ++n) {
        term *= x / (a + n);
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * 1e-17) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by the Legendre continued fraction (modified Lentz); for x >= a + 1.
inline double gamma_q_continued_fraction(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 1000000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized upper incomplete gamma function Q(a, x).
inline double gamma_q(double a, double x) {
    if (!(a > 0.0) || !(x >= 0.0)) throw DomainError("gamma_q: need a > 0 and x >= 0");
    if (x == 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    if (x < a + 1.0) return std::clamp(1.0 - detail::gamma_p_series(a, x), 0.0, 1.0);
    return std::clamp(detail::gamma_q_continued_fraction(a, x), 0.0, 1.0);
}

/// Upper tail P(X > q) of a chi-squared variable with `dof` degrees of freedom.
inline double chi2_sf(double q, long dof) {
    if (!(q >= 0.0)) throw DomainError("chi2_sf: statistic must be non-negative, got " + std::to_string(q));
    if (dof < 1) throw DomainError("chi2_sf: degrees of freedom must be at least 1, got " + std::to_string(dof));
    return gamma_q(0.5 * static_cast<double>(dof), 0.5 * q);
}

enum class Verdict { nominal, anomalous };

inline const char* to_string(Verdict v) { return v == Verdict::nominal ? "nominal" : "anomalous"; }

/// Anomalous iff p < p_thr; a tie is nominal.
inline Verdict classify(double p, double p_thr) {
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("classify: p-value outside [0, 1]");
    if (!(p_thr > 0.0 && p_thr < 1.0)) throw DomainError("classify: threshold outside (0, 1)");
    return p < p_thr ? Verdict::anomalous : Verdict::nominal;
}

inline constexpr double kDefaultPThreshold = 0.05;

struct DetectionResult {
    double p_value = 1.0;
    double p_thr = kDefaultPThreshold;
    long dof = 0;
    double mahalanobis_sq = 0.0;
    Verdict verdict = Verdict::nominal;
    long steps_used = 0;
    ResidualReport report;
};

/// Online half of the detector: residual, covariance, whitening, chi-squared
/// tail, decision. With max_steps = s only the first s transitions are used.
inline DetectionResult score_trajectory(const GpModel& m, const Trajectory& q, const NoiseSpec& noise, double p_thr,
                                        std::optional<long> max_steps = std::nullopt) {
    if (!(p_thr > 0.0 && p_thr < 1.0)) throw DomainError("score_trajectory: threshold outside (0, 1)");
    long steps = q.transitions();
    if (max_steps) {
        if (*max_steps < 1 || *max_steps > q.transitions()) {
            throw DomainError("score_trajectory: requested " + std::to_string(*max_steps) +
                              " steps but the trajectory has " + std::to_string(q.transitions()) + " transitions");
        }
        steps = *max_steps;
    }
    const Trajectory used = steps == q.transitions() ? q : q.head(steps + 1);

    DetectionResult r;
    r.report = residual_report(m, used, noise);
    r.p_thr = p_thr;
    r.dof = r.report.dof;
    r.mahalanobis_sq = r.report.mahalanobis_sq;
    r.p_value = chi2_sf(r.mahalanobis_sq, r.dof);
    r.verdict = classify(r.p_value, p_thr);
    r.steps_used = steps;
    return r;
}

}  // namespace gpad
