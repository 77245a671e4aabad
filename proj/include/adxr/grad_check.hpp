#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include "adxr/tensor.hpp"

namespace adxr {

// Central finite-difference audit of reverse-mode gradients.
// Returns max over coordinates of |autodiff - fd| / max(|autodiff|, |fd|, floor).
// The default step is eps_machine^(1/3) scaled per coordinate, which balances
// truncation against rounding for the scalar type in use.
template <typename S>
double grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, Tensor<S> point,
                  double eps = -1.0) {
    if (eps <= 0) eps = std::cbrt(static_cast<double>(std::numeric_limits<S>::epsilon()));

    point.set_requires_grad(true);
    point.zero_grad();
    std::vector<S> ad;
    {
        GradTape<S> tape;
        typename GradTape<S>::Scope scope(tape);
        Tensor<S> loss = f(point);
        check(loss.size() == 1, "grad_check: f must be scalar-valued");
        if (!std::isfinite(static_cast<double>(loss.item())))
            throw NumericError("grad_check: non-finite loss at base point");
        tape.backward(loss);
        ad = point.grad();
    }
    point.set_requires_grad(false);

    constexpr double kFloor = 1e-8;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const S x0 = point.data()[i];
        const S h = static_cast<S>(eps * std::max(1.0, std::abs(static_cast<double>(x0))));
        point.data()[i] = x0 + h;
        const double fp = static_cast<double>(f(point).item());
        point.data()[i] = x0 - h;
        const double fm = static_cast<double>(f(point).item());
        point.data()[i] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check: non-finite value while probing");
        const double fd = (fp - fm) / (2.0 * static_cast<double>(h));
        const double a = static_cast<double>(ad[i]);
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), kFloor});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// Variant for low-precision autodiff: the finite-difference side probes a
// double-precision twin of the same function (identical parameter values), so
// the measured error is the low-precision backward pass, not FD noise.
template <typename S>
double grad_check_vs_ref(const std::function<Tensor<S>(const Tensor<S>&)>& f,
                         const std::function<double(const std::vector<double>&)>& f_ref,
                         Tensor<S> point, double eps = -1.0) {
    if (eps <= 0) eps = std::cbrt(std::numeric_limits<double>::epsilon());

    point.set_requires_grad(true);
    point.zero_grad();
    std::vector<S> ad;
    {
        GradTape<S> tape;
        typename GradTape<S>::Scope scope(tape);
        Tensor<S> loss = f(point);
        check(loss.size() == 1, "grad_check_vs_ref: f must be scalar-valued");
        if (!std::isfinite(static_cast<double>(loss.item())))
            throw NumericError("grad_check_vs_ref: non-finite loss at base point");
        tape.backward(loss);
        ad = point.grad();
    }
    point.set_requires_grad(false);

    std::vector<double> x(point.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(point.data()[i]);

    constexpr double kFloor = 1e-8;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double x0 = x[i];
        const double h = eps * std::max(1.0, std::abs(x0));
        x[i] = x0 + h;
        const double fp = f_ref(x);
        x[i] = x0 - h;
        const double fm = f_ref(x);
        x[i] = x0;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("grad_check_vs_ref: non-finite value while probing");
        const double fd = (fp - fm) / (2.0 * h);
        const double a = static_cast<double>(ad[i]);
        const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), kFloor});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace adxr
