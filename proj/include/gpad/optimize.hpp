#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "gpad/core_types.hpp"

namespace gpad {

struct SimplexResult {
    Vector argmin;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
};

/// Nelder-Mead minimization. Stops when the spread of objective values over
/// the simplex drops below `tolerance` or after `max_iterations` iterations.
/// The returned value never exceeds objective(start).
inline SimplexResult nelder_mead(const std::function<double(const Vector&)>& objective, const Vector& start,
                                 double initial_step, int max_iterations, double tolerance) {
    const long n = start.size();
    std::vector<Vector> pts(static_cast<std::size_t>(n + 1), start);
    std::vector<double> vals(static_cast<std::size_t>(n + 1));
    for (long i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)](i) += initial_step;
    for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = objective(pts[i]);

    std::vector<std::size_t> order(pts.size());
    auto sort_simplex = [&] {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        std::vector<Vector> p2;
        std::vector<double> v2;
        for (auto i : order) {
            p2.push_back(pts[i]);
            v2.push_back(vals[i]);
        }
        pts = std::move(p2);
        vals = std::move(v2);
    };

    int it = 0;
    for (; it < max_iterations; ++it) {
        sort_simplex();
        if (std::isfinite(vals.back()) && vals.back() - vals.front() < tolerance) break;

        Vector centroid = Vector::Zero(n);
        for (long i = 0; i < n; ++i) centroid += pts[static_cast<std::size_t>(i)];
        centroid /= static_cast<double>(n);

        const Vector& worst = pts.back();
        const Vector reflected = centroid + (centroid - worst);
        const double f_r = objective(reflected);

        if (f_r < vals.front()) {
            const Vector expanded = centroid + 2.0 * (centroid - worst);
            const double f_e = objective(expanded);
            if (f_e < f_r) {
                pts.back() = expanded;
                vals.back() = f_e;
            } else {
                pts.back() = reflected;
                vals.back() = f_r;
            }
            continue;
        }
        if (f_r < vals[static_cast<std::size_t>(n - 1)]) {
            pts.back() = reflected;
            vals.back() = f_r;
            continue;
        }
        const bool outside = f_r < vals.back();
        const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                          : Vector(centroid + 0.5 * (worst - centroid));
        const double f_c = objective(contracted);
        if (f_c < (outside ? f_r : vals.back())) {
            pts.back() = contracted;
            vals.back() = f_c;
            continue;
        }
        // shrink toward the best vertex
        for (std::size_t i = 1; i < pts.size(); ++i) {
            pts[i] = pts.front() + 0.5 * (pts[i] - pts.front());
            vals[i] = objective(pts[i]);
        }
    }
    sort_simplex();
    return SimplexResult{pts.front(), vals.front(), it};
}

}  // namespace gpad
