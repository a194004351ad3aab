// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gaitssl/autodiff.hpp"
#include "gaitssl/data.hpp"
#include "gaitssl/params.hpp"
#include "gaitssl/rng.hpp"

namespace gaitssl::model {

enum class Positional { learned, rotary };
std::string_view to_string(Positional p);
Positional parse_positional(std::string_view text);

struct ModelConfig {
    std::size_t hidden_dim = 64;
    std::size_t num_layers = 4;
    std::size_t num_heads = 4;
    std::size_t ffn_expansion = 4;
    Positional positional = Positional::learned;
    bool use_cls_token = true;
    double fcm_mask_prob = 0.0;
    double noise_aug_scale = 0.1;
    std::size_t projection_dim = 16;
    std::size_t seq_len = data::kWindowLength;
    std::size_t input_dim = data::kNumChannels;
    double temperature = 0.1;

    /// Throws ConfigError.
    void validate() const;

    std::size_t head_dim() const { return hidden_dim / num_heads; }
    /// T' = T, or T + 1 with the [CLS] token.
    std::size_t tokens() const { return seq_len + (use_cls_token ? 1 : 0); }

    bool operator==(const ModelConfig&) const = default;
};

enum class Mode { train, eval };

ParamSet<float> init_params(const ModelConfig& config, Rng& rng);

/// Shape of every array `init_params` creates, in creation order.
std::vector<std::pair<std::string, ad::Shape>> param_shapes(const ModelConfig& config);
std::size_t param_count(const ModelConfig& config);

/// Backbone arrays are everything except the two heads.
bool is_head_param(std::string_view name);

/// Parameters bound to a tape, by name.
template <typename T>
struct BoundParams {
    std::vector<std::pair<std::string, ad::Var<T>>> vars;

    const ad::Var<T>& operator[](std::string_view name) const;
};

template <typename T>
BoundParams<T> bind_params(ad::Tape<T>& tape, const ParamSet<T>& params, bool requires_grad);

/// Per-window draws made in train mode.
struct Augmentation {
    std::vector<double> noise;         // T x J, standardized units
    std::vector<std::uint8_t> masked;  // T, FCM record (1 = zeroed)
};

/// Draws in a fixed order: T*J normals, then T Bernoulli trials.
Augmentation draw_augmentation(const ModelConfig& config, Rng& rng);

/// Zeroes rows of a (T x H) token matrix; returns the per-token mask record.
std::vector<std::uint8_t> fcm_mask(std::span<double> tokens, std::size_t hidden_dim, double prob, Rng& rng);

template <typename T>
struct BatchForward {
    std::size_t batch = 0;
    ad::Var<T> states;       // (B*T') x H, after the final layer norm
    ad::Var<T> predictions;  // (B*T) x J
    ad::Var<T> pooled;       // B x H
    ad::Var<T> projected;    // B x P, unit rows
    std::vector<Augmentation> augmentations;  // empty in eval mode
};

/// Forward over a batch of standardized windows (each T x J). `rng` is
/// required in train mode and ignored in eval mode.
template <typename T>
BatchForward<T> forward_batch(ad::Tape<T>& tape, const BoundParams<T>& params, const ModelConfig& config,
                              std::span<const data::FrameMatrix> windows, Mode mode, Rng* rng);

/// Single-window forward with plain outputs.
struct ForwardOutput {
    std::vector<float> states;       // T' x H
    std::vector<float> predictions;  // T x J
    std::vector<float> pooled;       // H
    std::vector<float> projected;    // P
};

ForwardOutput forward(const ParamSet<float>& params, const ModelConfig& config, const data::FrameMatrix& window,
                      Mode mode, Rng* rng);

/// Rotates each head block of one row vector in place; see ad::rotary.
void apply_rotary(std::span<double> vec, std::size_t head_dim, std::size_t position, double base = 10000.0);

}  // namespace gaitssl::model
