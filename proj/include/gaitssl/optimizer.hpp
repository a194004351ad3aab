// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "gaitssl/params.hpp"

namespace gaitssl {

struct AdamWConfig {
    double learning_rate = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

/// Weight decay applies to arrays whose name ends in ".weight"; layer-norm
/// affines, biases, the [CLS] token and the position table are not decayed.
bool decays(std::string_view name);

template <typename T>
struct AdamWState {
    std::uint64_t step = 0;
    ParamSet<T> m;
    ParamSet<T> v;

    static AdamWState zeros_like(const ParamSet<T>& params) { return {0, params.zeros_like(), params.zeros_like()}; }
};

/// One decoupled-decay step: p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
/// Throws NumericalError naming the array when a gradient is non-finite; the
/// parameters and state are untouched in that case.
template <typename T>
void adamw_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamWState<T>& state, const AdamWConfig& config);

}  // namespace gaitssl
