#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "factguard/matrix.hpp"
#include "factguard/tape.hpp"

namespace factguard {

struct GradCheckReport {
    bool pass = true;
    Real max_rel_err = 0;
    std::string worst_param;
    std::size_t worst_index = 0;
    Real worst_analytic = 0;
    Real worst_numeric = 0;
    std::size_t entries_checked = 0;

    std::string describe() const {
        if (pass) return "pass (max rel err " + std::to_string(max_rel_err) + " over " +
                         std::to_string(entries_checked) + " entries)";
        return "FAIL at " + worst_param + "[" + std::to_string(worst_index) + "]: analytic " +
               std::to_string(worst_analytic) + " vs numeric " + std::to_string(worst_numeric) +
               " (rel err " + std::to_string(max_rel_err) + ")";
    }
};

// Runs `build` on a fresh tape and returns the scalar loss along with the
// gradient of every listed parameter. `build` must bind parameters through
// tape.param() so grad_for can find them.
template <typename Builder>
std::pair<Real, std::unordered_map<const RealMatrix*, RealMatrix>>
loss_and_grads(const std::vector<ParamRef>& params, Builder build) {
    GradientTape tape;
    Value loss = build(tape);
    tape.backward(loss);
    std::unordered_map<const RealMatrix*, RealMatrix> grads;
    for (const ParamRef& p : params) grads.emplace(p.tensor, tape.grad_for(*p.tensor));
    return {tape.value(loss)(0, 0), std::move(grads)};
}

// Central-difference check of analytic gradients. Perturbs every entry of
// every parameter in place (restoring afterwards), recomputes the loss via
// `build`, and compares (f(x+e) - f(x-e)) / 2e against the tape gradient
// using rel_err = |a - n| / max(|a|, |n|, 1e-5). The denominator floor keeps
// near-zero gradients from being judged against finite-difference rounding
// noise: differencing a loss of order one loses about machine epsilon / eps
// of absolute accuracy, so entries at the floor are effectively held to
// |a - n| <= tol * 1e-5, far below any real backpropagation defect.
template <typename Builder>
GradCheckReport gradcheck(const std::vector<ParamRef>& params, Builder build,
                          Real eps = Real(1e-5), Real tol = Real(1e-4)) {
    auto [loss0, analytic] = loss_and_grads(params, build);
    (void)loss0;

    auto forward = [&]() {
        GradientTape tape;
        Value loss = build(tape);
        return tape.value(loss)(0, 0);
    };

    GradCheckReport report;
    for (const ParamRef& p : params) {
        RealMatrix& tensor = *p.tensor;
        const RealMatrix& grad = analytic.at(p.tensor);
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const Real saved = tensor[i];
            tensor[i] = saved + eps;
            const Real f_plus = forward();
            tensor[i] = saved - eps;
            const Real f_minus = forward();
            tensor[i] = saved;

            const Real numeric = (f_plus - f_minus) / (Real(2) * eps);
            const Real a = grad[i];
            const Real denom = std::max({std::abs(a), std::abs(numeric), Real(1e-5)});
            const Real rel = std::abs(a - numeric) / denom;
            ++report.entries_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p.name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

} // namespace factguard
