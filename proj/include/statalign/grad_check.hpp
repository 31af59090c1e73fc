#pragma once

#include <functional>

#include "statalign/tensor.hpp"

namespace statalign {

/// Compares the analytic gradient of a scalar-valued function against
/// central finite differences and returns the worst relative error
/// |a - n| / max(1e-8, |a| + |n|) over all elements of x. The function is
/// invoked with a tape for the analytic pass and without one for the
/// perturbed evaluations, so f must be deterministic. 64-bit only.
inline double grad_check(const std::function<Tensor<double>(Tensor<double>&, Tape<double>*)>& f,
                         Tensor<double>& x, double h = 1e-5) {
    x.set_requires_grad(true);
    Tape<double> tape;
    Tensor<double> loss = f(x, &tape);
    if (loss.size() != 1) throw TensorError("grad_check: f must be scalar-valued");
    tape.backward(loss);
    std::vector<double> analytic(x.grad(), x.grad() + x.size());

    double worst = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + h;
        const double fp = f(x, nullptr).item();
        x.data()[i] = saved - h;
        const double fm = f(x, nullptr).item();
        x.data()[i] = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        if (!std::isfinite(numeric) || !std::isfinite(analytic[i]))
            throw TensorError("grad_check: non-finite gradient value");
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace statalign
