// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>

#include "gaitssl/autodiff.hpp"
#include "gaitssl/data.hpp"

namespace gaitssl::losses {

/// Positive partner of anchor i in a batch laid out as [a_0..a_{N-1}, b_0..b_{N-1}].
inline std::size_t partner(std::size_t i, std::size_t n_pairs) {
    return (i + n_pairs) % (2 * n_pairs);
}

/// Mean over the 2N anchors of logsumexp_{k != i}(s_ik / tau) - s_{i,partner(i)} / tau,
/// with s the cosine similarity of unit rows of `z` (2N x P).
template <typename T>
ad::Var<T> contrastive(const ad::Var<T>& z, T temperature);

/// Mean squared error of prediction rows 0..T-2 of each window against the
/// next-step targets. `predictions` is (B*T) x J; `targets` holds B matrices
/// of (T-1) x J in standardized units.
template <typename T>
ad::Var<T> prediction(const ad::Var<T>& predictions, std::span<const data::FrameMatrix> targets);

/// L = L_contrastive + lambda * L_prediction.
inline double total(double contrastive_loss, double prediction_loss, double lambda) {
    return contrastive_loss + lambda * prediction_loss;
}

/// Value-only helpers in double precision.
double contrastive_value(std::span<const double> z, std::size_t rows, std::size_t dim, double temperature);
double prediction_value(std::span<const double> predictions, const data::FrameMatrix& target);

}  // namespace gaitssl::losses
