#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "synb/autograd.hpp"
#include "synb/tensor.hpp"

namespace synb {

struct GradCheckReport {
    std::vector<double> max_rel_err;  // one entry per checked input
    double worst = 0.0;

    bool ok(double tol) const { return worst <= tol; }
};

// Compares reverse-mode gradients of a scalar-valued closure against central
// finite differences (64-bit only). The closure receives leaf Vars built from
// the current input values and must rebuild the computation on every call, so
// the numeric path never reuses the analytic tape.
inline GradCheckReport grad_check(
    const std::function<Var<double>(const std::vector<Var<double>>&)>& f,
    std::vector<Tensor<double>> inputs, double h = 1e-5) {
    auto run = [&](const std::vector<Tensor<double>>& vals, bool with_grad) {
        std::vector<Var<double>> leaves;
        leaves.reserve(vals.size());
        for (const auto& t : vals) leaves.push_back(Var<double>::leaf(t, with_grad));
        Var<double> out = f(leaves);
        return std::make_pair(out, leaves);
    };

    auto [root, leaves] = run(inputs, true);
    backward(root);

    GradCheckReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        double worst = 0.0;
        for (long i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k].at(i);
            inputs[k].at(i) = orig + h;
            const double fp = run(inputs, false).first.val().at(0);
            inputs[k].at(i) = orig - h;
            const double fm = run(inputs, false).first.val().at(0);
            inputs[k].at(i) = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = leaves[k].grad().at(i);
            const double scale = std::max(std::abs(numeric), std::abs(analytic));
            const double err = std::abs(numeric - analytic);
            worst = std::max(worst, scale > 1e-6 ? err / scale : err);
        }
        report.max_rel_err.push_back(worst);
        report.worst = std::max(report.worst, worst);
    }
    return report;
}

}  // namespace synb
