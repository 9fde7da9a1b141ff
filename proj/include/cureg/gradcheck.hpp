#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cureg/tensor.hpp"

namespace cureg::ad {

struct GradcheckReport {
    double max_rel_err = 0.0;
    bool pass = true;
    std::size_t checked = 0;
    std::size_t worst_input = 0;
    std::size_t worst_element = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

struct GradcheckOptions {
    double h = 1e-4;
    double tol = 1e-4;
    /// Upper bound on perturbed elements per input (evenly strided); 0 checks every element.
    std::size_t max_elements_per_input = 0;
};

/// Compares the analytic gradient of a scalar function with central differences, element by
/// element. Relative error is |a - n| / max(1, |a|, |n|). Failures are reported, never thrown.
inline GradcheckReport gradcheck(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                                 GradcheckOptions opt = {}) {
    for (auto& x : inputs) x.zero_grad();
    const Tensor<double> loss = f();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& x : inputs) {
        const auto g = x.grad();
        analytic.emplace_back(g.begin(), g.end());
        if (analytic.back().empty()) analytic.back().assign(x.numel(), 0.0);
    }

    GradcheckReport rep;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto vals = inputs[k].mutable_values();
        const std::size_t n = vals.size();
        const std::size_t step =
            opt.max_elements_per_input == 0 ? 1 : std::max<std::size_t>(1, n / opt.max_elements_per_input);
        for (std::size_t i = 0; i < n; i += step) {
            const double orig = vals[i];
            vals[i] = orig + opt.h;
            const double fp = f().item();
            vals[i] = orig - opt.h;
            const double fm = f().item();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * opt.h);
            const double a = analytic[k][i];
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            ++rep.checked;
            if (!std::isfinite(err) || err > rep.max_rel_err) {
                rep.max_rel_err = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
                rep.worst_input = k;
                rep.worst_element = i;
                rep.worst_analytic = a;
                rep.worst_numeric = numeric;
            }
        }
    }
    rep.pass = std::isfinite(rep.max_rel_err) && rep.max_rel_err < opt.tol;
    return rep;
}

}  // namespace cureg::ad
