#ifndef MEMDFA_TESTS_SUPPORT_HPP
#define MEMDFA_TESTS_SUPPORT_HPP

// Test-side oracles, independent of the library's compute paths.

#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <vector>

#include "memdfa/tensor.hpp"

namespace oracle {

/// Naive ijk triple loop, the reference for every matmul variant.
template <typename T>
memdfa::Tensor<T> naive_matmul(const memdfa::Tensor<T>& a, const memdfa::Tensor<T>& b) {
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    memdfa::Tensor<T> c(memdfa::Shape{m, n}, "oracle");
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t l = 0; l < k; ++l) acc += a(i, l) * b(l, j);
            c(i, j) = acc;
        }
    return c;
}

template <typename T>
memdfa::Tensor<T> transpose(const memdfa::Tensor<T>& a) {
    const std::size_t m = a.dim(0), n = a.dim(1);
    memdfa::Tensor<T> t(memdfa::Shape{n, m}, "oracle");
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
    return t;
}

inline bool rel_close(double a, double b, double tol, double abs_floor = 1e-9) {
    const double diff = std::abs(a - b);
    return diff <= abs_floor + tol * std::max(std::abs(a), std::abs(b));
}

/// Central finite difference of a scalar-valued function with respect to
/// one tensor entry.
template <typename T, typename F>
double fd_derivative(memdfa::Tensor<T>& t, std::size_t idx, F&& f, double h) {
    const T saved = t[idx];
    t[idx] = saved + static_cast<T>(h);
    const double up = f();
    t[idx] = saved - static_cast<T>(h);
    const double down = f();
    t[idx] = saved;
    return (up - down) / (2.0 * h);
}

/// Checks every entry of `analytic` against central differences of f with
/// respect to `params`. Returns the worst relative mismatch found.
template <typename T, typename F>
double fd_check(memdfa::Tensor<T>& params, const memdfa::Tensor<T>& analytic, F&& f,
                double h = 1e-5) {
    double worst = 0;
    for (std::size_t i = 0; i < params.numel(); ++i) {
        const double fd = fd_derivative(params, i, f, h);
        const double an = static_cast<double>(analytic[i]);
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
        worst = std::max(worst, std::abs(fd - an) / denom);
    }
    return worst;
}

template <typename T>
bool bitwise_equal(const memdfa::Tensor<T>& a, const memdfa::Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const T x = a[i], y = b[i];
        if (std::memcmp(&x, &y, sizeof(T)) != 0) return false;
    }
    return true;
}

template <typename T>
double max_rel_diff(const memdfa::Tensor<T>& a, const memdfa::Tensor<T>& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double x = a[i], y = b[i];
        const double denom = std::max({std::abs(x), std::abs(y), 1e-12});
        worst = std::max(worst, std::abs(x - y) / denom);
    }
    return worst;
}

}  // namespace oracle

#endif
