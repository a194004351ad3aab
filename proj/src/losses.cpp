// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "gaitssl/errors.hpp"

namespace gaitssl::losses {

template <typename T>
ad::Var<T> contrastive(const ad::Var<T>& z, T temperature) {
    if (z.shape().size() != 2 || z.shape()[0] % 2 != 0 || z.shape()[0] == 0) {
        throw std::invalid_argument("contrastive: expected an even, non-empty number of rows, got shape " +
                                    ad::shape_string(z.shape()));
    }
    if (!(temperature > T(0))) throw std::invalid_argument("contrastive: temperature must be positive");
    for (T v : z.value()) {
        if (!std::isfinite(v)) throw NumericalError("contrastive: non-finite embedding");
    }
    const std::size_t rows = z.shape()[0], n = rows / 2;
    std::vector<std::uint8_t> diag(rows * rows, 0);
    std::vector<T> positive(rows * rows, T(0));
    for (std::size_t i = 0; i < rows; ++i) {
        diag[i * rows + i] = 1;
        positive[i * rows + partner(i, n)] = T(1);
    }
    auto& tape = z.tape();
    const auto logits = ad::scale(ad::matmul_nt(z, z), T(1) / temperature);
    const auto lse = ad::logsumexp(ad::masked_fill(logits, diag, -std::numeric_limits<T>::infinity()), 1);
    const auto pos = ad::sum(ad::mul(logits, tape.constant({rows, rows}, std::move(positive))), 1);
    return ad::mean(ad::sub(lse, pos));
}

template <typename T>
ad::Var<T> prediction(const ad::Var<T>& predictions, std::span<const data::FrameMatrix> targets) {
    if (targets.empty()) throw std::invalid_argument("prediction: no targets");
    const std::size_t steps = targets[0].rows(), J = targets[0].cols(), B = targets.size();
    const std::size_t T_ = steps + 1;
    if (predictions.shape() != ad::Shape{B * T_, J}) {
        throw std::invalid_argument("prediction: predictions " + ad::shape_string(predictions.shape()) +
                                    " do not match " + std::to_string(B) + " targets of " + std::to_string(steps) +
                                    "x" + std::to_string(J));
    }
    std::vector<std::size_t> rows;
    std::vector<T> y;
    rows.reserve(B * steps);
    y.reserve(B * steps * J);
    for (std::size_t b = 0; b < B; ++b) {
        if (targets[b].rows() != steps || targets[b].cols() != J) {
            throw std::invalid_argument("prediction: target shapes differ within the batch");
        }
        for (std::size_t t = 0; t < steps; ++t) rows.push_back(b * T_ + t);
        for (double v : targets[b].values()) y.push_back(static_cast<T>(v));
    }
    const auto selected = ad::embedding_select(predictions, rows);
    const auto diff = ad::sub(selected, predictions.tape().constant({B * steps, J}, std::move(y)));
    return ad::mean(ad::mul(diff, diff));
}

double contrastive_value(std::span<const double> z, std::size_t rows, std::size_t dim, double temperature) {
    if (z.size() != rows * dim) throw std::invalid_argument("contrastive_value: size mismatch");
    ad::Tape<double> tape;
    return contrastive(tape.constant({rows, dim}, std::vector<double>(z.begin(), z.end())), temperature).item();
}

double prediction_value(std::span<const double> predictions, const data::FrameMatrix& target) {
    ad::Tape<double> tape;
    const std::size_t rows = target.rows() + 1;
    if (predictions.size() != rows * target.cols()) throw std::invalid_argument("prediction_value: size mismatch");
    const auto p = tape.constant({rows, target.cols()}, std::vector<double>(predictions.begin(), predictions.end()));
    return prediction(p, std::span<const data::FrameMatrix>(&target, 1)).item();
}

template ad::Var<float> contrastive(const ad::Var<float>&, float);
template ad::Var<double> contrastive(const ad::Var<double>&, double);
template ad::Var<float> prediction(const ad::Var<float>&, std::span<const data::FrameMatrix>);
template ad::Var<double> prediction(const ad::Var<double>&, std::span<const data::FrameMatrix>);

}  // namespace gaitssl::losses
