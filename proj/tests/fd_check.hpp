#pragma once

// Test-only central finite-difference oracle. Runs on the double
// instantiation of the kernels so every accumulation is 64-bit; kept
// independent of the analytic backward paths it is used to check.

#include <cmath>
#include <cstddef>
#include <functional>

#include "sonostate/tensor.hpp"

namespace sono::test {

inline double rel_err(double a, double b) {
    const double scale = std::max({std::fabs(a), std::fabs(b), 1e-6});
    return std::fabs(a - b) / scale;
}

// d f / d x[i] by central differences, step h on a 64-bit path.
inline double fd_partial(const std::function<double()>& f, Tensor<double>& x, std::size_t i,
                         double h = 1e-4) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f();
    x[i] = orig - h;
    const double fm = f();
    x[i] = orig;
    return (fp - fm) / (2.0 * h);
}

// Max relative error between an analytic gradient tensor and finite
// differences of f with respect to x.
inline double fd_max_rel_err(const std::function<double()>& f, Tensor<double>& x,
                             const Tensor<double>& analytic, double h = 1e-4) {
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double fd = fd_partial(f, x, i, h);
        worst = std::max(worst, rel_err(fd, analytic[i]));
    }
    return worst;
}

}  // namespace sono::test
