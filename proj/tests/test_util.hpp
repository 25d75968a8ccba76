#pragma once

#include <vector>

#include "mpk/rng.hpp"
#include "mpk/tensor.hpp"
#include "mpk/types.hpp"

namespace mpk::test {

// Central finite differences for in-test gradient oracles.
template <typename F>
std::vector<double> fd_gradient(F&& eval, std::vector<double>& params, double step = 1e-6) {
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double keep = params[i];
        params[i] = keep + step;
        const double hi = eval();
        params[i] = keep - step;
        const double lo = eval();
        params[i] = keep;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    return grad;
}

inline double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double max_abs = 1e-10, max_diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        max_abs = std::max({max_abs, std::abs(a[i]), std::abs(b[i])});
        max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
    }
    return max_diff / max_abs;
}

inline Points3 jitter(const Points3& base, Rng& rng, double noise) {
    Points3 out = base;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (int a = 0; a < 3; ++a) out(i, a) += noise * rng.normal();
    return out;
}

}  // namespace mpk::test
