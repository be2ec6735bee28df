#pragma once

#include <functional>
#include <string>

#include "crosslm/tensor.hpp"

namespace crosslm {

// Outcome of a central-difference check; argmax coordinate kept for
// diagnosis.
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string param;
    size_t coord = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

namespace detail {
inline double rel_err(double a, double b) {
    const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
    return std::fabs(a - b) / denom;
}
}  // namespace detail

// Checks d f / d x at `point` against (f(x+eps e) - f(x-eps e)) / 2 eps per
// coordinate. f must return a scalar tensor; it is called with a null tape
// for the probe evaluations.
template <class T>
GradCheckResult grad_check(
    const std::function<Tensor<T>(Tape<T>*, Tensor<T>&)>& f, Tensor<T> point,
    T eps = T(1e-5)) {
    point.set_requires_grad();
    point.clear_grad();
    Tape<T> tape;
    Tensor<T> loss = f(&tape, point);
    CLX_CHECK(loss.numel() == 1, "grad_check: function output is not scalar");
    tape.backward(loss);
    std::vector<T> analytic(point.grad().begin(), point.grad().end());

    GradCheckResult result;
    auto x = point.data();
    for (size_t i = 0; i < x.size(); ++i) {
        const T saved = x[i];
        x[i] = saved + eps;
        const T up = f(nullptr, point).item();
        x[i] = saved - eps;
        const T down = f(nullptr, point).item();
        x[i] = saved;
        const double numeric =
            (static_cast<double>(up) - static_cast<double>(down)) /
            (2.0 * static_cast<double>(eps));
        const double err = detail::rel_err(static_cast<double>(analytic[i]), numeric);
        if (err >= result.max_rel_err) {
            result.max_rel_err = err;
            result.coord = i;
            result.analytic = static_cast<double>(analytic[i]);
            result.numeric = numeric;
        }
    }
    return result;
}

// Same check over a set of named parameters, for whole-model verification.
// build_loss must read current parameter values on every call.
template <class T>
GradCheckResult grad_check_params(
    const std::function<Tensor<T>(Tape<T>*)>& build_loss,
    const std::vector<std::pair<std::string, Tensor<T>*>>& params,
    T eps = T(1e-5)) {
    for (auto& [name, p] : params) {
        p->set_requires_grad();
        p->clear_grad();
    }
    Tape<T> tape;
    Tensor<T> loss = build_loss(&tape);
    CLX_CHECK(loss.numel() == 1, "grad_check_params: loss is not scalar");
    tape.backward(loss);

    GradCheckResult result;
    for (auto& [name, p] : params) {
        std::vector<T> analytic(p->grad().begin(), p->grad().end());
        auto x = p->data();
        for (size_t i = 0; i < x.size(); ++i) {
            const T saved = x[i];
            x[i] = saved + eps;
            const T up = build_loss(nullptr).item();
            x[i] = saved - eps;
            const T down = build_loss(nullptr).item();
            x[i] = saved;
            const double numeric =
                (static_cast<double>(up) - static_cast<double>(down)) /
                (2.0 * static_cast<double>(eps));
            const double err =
                detail::rel_err(static_cast<double>(analytic[i]), numeric);
            if (err >= result.max_rel_err) {
                result.max_rel_err = err;
                result.param = name;
                result.coord = i;
                result.analytic = static_cast<double>(analytic[i]);
                result.numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace crosslm
