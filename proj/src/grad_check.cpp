// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "gaitssl/errors.hpp"
#include "gaitssl/rng.hpp"

namespace gaitssl {

double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

namespace {

double checked_eval(const ScalarFn& f, const ParamSet<double>& p, const std::string& name, std::size_t index) {
    const double v = f(p);
    if (!std::isfinite(v)) {
        throw NumericalError("grad_check: non-finite function value while perturbing " + name + "[" +
                             std::to_string(index) + "]");
    }
    return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const GradFn& grad, const ParamSet<double>& params,
                           const GradCheckOptions& options) {
    checked_eval(f, params, "(none)", 0);
    const ParamSet<double> analytic = grad(params);
    ParamSet<double> probe = params;
    Rng rng(options.seed);
    GradCheckReport report;

    for (std::size_t a = 0; a < params.count(); ++a) {
        const auto& name = params.arrays()[a].name;
        const std::size_t n = params.arrays()[a].size();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (!options.exhaustive && n > options.full_check_limit) {
            rng.shuffle(std::span<std::size_t>(coords));
            coords.resize(options.samples_per_array);
            std::sort(coords.begin(), coords.end());
        }
        const auto& g = analytic.at(name).values;
        auto& values = probe.arrays()[a].values;
        for (std::size_t i : coords) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double up = checked_eval(f, probe, name, i);
            values[i] = saved - options.step;
            const double down = checked_eval(f, probe, name, i);
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double err = relative_error(g[i], numeric);
            ++report.coordinates_checked;
            if (err > report.max_rel_error || report.worst_array.empty()) {
                report.max_rel_error = std::max(report.max_rel_error, err);
                if (err >= report.max_rel_error) {
                    report.worst_array = name;
                    report.worst_index = i;
                    report.worst_analytic = g[i];
                    report.worst_numeric = numeric;
                }
            }
        }
    }
    return report;
}

}  // namespace gaitssl
