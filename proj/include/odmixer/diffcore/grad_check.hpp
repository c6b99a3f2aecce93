#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "odmixer/diffcore/ops.hpp"

namespace odmixer::diffcore {

struct GradCheckOptions {
    double step = 1e-5;       // scaled per coordinate by max(1, |x|)
    double tolerance = 1e-4;  // relative
    double abs_floor = 1e-8;  // differences at or below this count as exact
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t coordinates = 0;
    bool pass = true;
};

using LossBuilder = std::function<Var<double>(Tape<double>&, ParameterSet<double>&)>;

/// Compares reverse-mode gradients of a scalar function of `params` against
/// central differences, one coordinate at a time. Frozen parameters are not
/// perturbed.
inline GradCheckReport grad_check(ParameterSet<double>& params, const LossBuilder& build,
                                  const GradCheckOptions& opt = {})
{
    auto evaluate = [&]() {
        Tape<double> tape;
        const double v = tape.value(build(tape, params)).item();
        if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
        return v;
    };

    params.zero_grad();
    {
        Tape<double> tape;
        auto loss = build(tape, params);
        if (!std::isfinite(tape.value(loss).item())) throw NumericError("grad_check: loss is not finite");
        tape.backward(loss);
    }

    GradCheckReport report;
    for (auto& [name, p] : params) {
        if (!p.requires_grad) continue;
        auto& x = p.value.storage();
        const auto& g = p.grad.storage();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double analytic = g[i];
            if (!std::isfinite(analytic)) throw NumericError("grad_check: non-finite gradient in " + name);
            const double orig = x[i];
            const double h = opt.step * std::max(1.0, std::abs(orig));
            x[i] = orig + h;
            const double fp = evaluate();
            x[i] = orig - h;
            const double fm = evaluate();
            x[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double abs_err = std::abs(analytic - numeric);
            const double rel_err =
                abs_err <= opt.abs_floor ? 0.0 : abs_err / std::max(std::abs(analytic), std::abs(numeric));
            ++report.coordinates;
            report.max_abs_err = std::max(report.max_abs_err, abs_err);
            if (rel_err > report.max_rel_err) {
                report.max_rel_err = rel_err;
                report.worst_param = name;
                report.worst_index = i;
            }
        }
    }
    report.pass = report.max_rel_err <= opt.tolerance;
    return report;
}

} // namespace odmixer::diffcore
