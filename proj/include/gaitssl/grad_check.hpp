// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "gaitssl/params.hpp"

namespace gaitssl {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-5;
    /// Arrays up to this size are checked exhaustively; larger ones are sampled.
    std::size_t full_check_limit = 256;
    std::size_t samples_per_array = 64;
    /// Check every coordinate regardless of size.
    bool exhaustive = false;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_array;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates_checked = 0;

    bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

using ScalarFn = std::function<double(const ParamSet<double>&)>;
using GradFn = std::function<ParamSet<double>(const ParamSet<double>&)>;

/// Central differences (f(p+h) - f(p-h)) / 2h against `grad` at `params`.
/// Throws NumericalError when f returns a non-finite value.
GradCheckReport grad_check(const ScalarFn& f, const GradFn& grad, const ParamSet<double>& params,
                           const GradCheckOptions& options = {});

}  // namespace gaitssl
