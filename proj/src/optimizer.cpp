// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/optimizer.hpp"

#include <cmath>
#include <stdexcept>

#include "gaitssl/errors.hpp"

namespace gaitssl {

bool decays(std::string_view name) {
    constexpr std::string_view suffix = ".weight";
    return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
}

template <typename T>
void adamw_step(ParamSet<T>& params, const ParamSet<T>& grads, AdamWState<T>& state, const AdamWConfig& config) {
    if (grads.count() != params.count() || state.m.count() != params.count()) {
        throw std::invalid_argument("adamw_step: parameter, gradient and state sets differ");
    }
    for (std::size_t a = 0; a < grads.count(); ++a) {
        const auto& g = grads.arrays()[a];
        if (g.name != params.arrays()[a].name || g.size() != params.arrays()[a].size()) {
            throw std::invalid_argument("adamw_step: gradient array '" + g.name + "' does not match parameters");
        }
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g.values[i])) {
                throw NumericalError("non-finite gradient in '" + g.name + "' at index " + std::to_string(i) +
                                     " (step " + std::to_string(state.step + 1) + ")");
            }
        }
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(config.beta1, t);
    const double bc2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t a = 0; a < params.count(); ++a) {
        auto& p = params.arrays()[a];
        const auto& g = grads.arrays()[a].values;
        auto& m = state.m.arrays()[a].values;
        auto& v = state.v.arrays()[a].values;
        const double decay = decays(p.name) ? 1.0 - config.learning_rate * config.weight_decay : 1.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = config.beta1 * static_cast<double>(m[i]) + (1.0 - config.beta1) * gi;
            const double vi = config.beta2 * static_cast<double>(v[i]) + (1.0 - config.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = (mi / bc1) / (std::sqrt(vi / bc2) + config.eps);
            p.values[i] = static_cast<T>(static_cast<double>(p.values[i]) * decay - config.learning_rate * update);
        }
    }
}

template void adamw_step(ParamSet<float>&, const ParamSet<float>&, AdamWState<float>&, const AdamWConfig&);
template void adamw_step(ParamSet<double>&, const ParamSet<double>&, AdamWState<double>&, const AdamWConfig&);

}  // namespace gaitssl
