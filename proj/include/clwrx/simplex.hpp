#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "clwrx/error.hpp"

namespace clwrx {

// Euclidean projection onto the probability simplex {x >= 0, sum x = 1}.
// Sort descending, find the largest rho with u_rho - (sum_{i<=rho} u_i - 1)/rho > 0,
// then shift by that threshold and clip at zero.
inline std::vector<double> project_simplex(std::span<const double> v) {
    if (v.empty()) throw ConfigError("project_simplex: empty vector");
    for (double x : v)
        if (!std::isfinite(x)) throw DataError("project_simplex: non-finite input");

    std::vector<double> u(v.begin(), v.end());
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumsum = 0.0;
    double theta = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        cumsum += u[j];
        const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) theta = t;
    }
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
    return out;
}

// Projects only the entries with active[i] set; inactive entries are pinned
// at zero. With no active entries the result is all zeros.
inline std::vector<double> project_simplex_masked(std::span<const double> v, const std::vector<bool>& active) {
    detail::require(v.size() == active.size(), "project_simplex_masked: mask length mismatch");
    std::vector<double> sub;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (active[i]) sub.push_back(v[i]);
    std::vector<double> out(v.size(), 0.0);
    if (sub.empty()) return out;
    const auto proj = project_simplex(sub);
    for (std::size_t i = 0, j = 0; i < v.size(); ++i)
        if (active[i]) out[i] = proj[j++];
    return out;
}

inline bool on_simplex(std::span<const double> lambda, double tol = 1e-12) {
    double s = 0.0;
    for (double x : lambda) {
        if (!(x >= 0.0)) return false;
        s += x;
    }
    return std::abs(s - 1.0) <= tol;
}

}  // namespace clwrx
