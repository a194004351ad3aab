// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitssl/checkpoint.hpp"
#include "gaitssl/data.hpp"
#include "gaitssl/model.hpp"
#include "gaitssl/optimizer.hpp"
#include "gaitssl/params.hpp"
#include "gaitssl/rng.hpp"

namespace gaitssl::training {

struct TrainConfig {
    std::size_t epochs = 1000;
    std::size_t batch_trials = 32;
    AdamWConfig adamw;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> pretrain_checkpoint;
    std::size_t checkpoint_every = 100;

    /// Throws ConfigError.
    void validate() const;
};

struct Losses {
    double contrastive = 0.0;
    double prediction = 0.0;
    double total = 0.0;
};

template <typename T>
struct Objective {
    Losses losses;
    ParamSet<T> grads;  // empty unless requested
};

/// Loss of one batch of 2N standardized windows laid out [a_0..a_{N-1}, b_0..b_{N-1}],
/// with `targets[i]` the standardized next-step target of window i.
/// Gradients cover the root L_c + lambda L_p; with lambda = 0 the prediction
/// branch is evaluated but not differentiated.
template <typename T>
Objective<T> batch_objective(const ParamSet<T>& params, const model::ModelConfig& config,
                             std::span<const data::FrameMatrix> inputs, std::span<const data::FrameMatrix> targets,
                             double lambda, model::Mode mode, Rng* rng, bool want_grads);

struct EpochMetrics {
    std::size_t epoch = 0;
    double contrastive_loss = 0.0;
    double prediction_loss = 0.0;
    double total_loss = 0.0;
    double wall_time = 0.0;  // seconds since training started
};

std::string metrics_line(const EpochMetrics& m);

/// Input/target pair ready for the model.
struct PreparedWindow {
    data::FrameMatrix input;
    data::FrameMatrix target;
};

PreparedWindow prepare_window(const data::TrialWindow& window, const data::NormStats& norm);

/// Shuffle of eligible trial indices and their grouping into batches for one
/// epoch. A final group smaller than two trials is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> eligible, std::size_t batch_trials,
                                                    Rng& rng);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochMetrics> metrics;
    std::vector<data::SkipRecord> skipped;
};

struct TrainOutputs {
    /// When set: metrics.ndjson, skip_report.ndjson, model.ckpt and
    /// checkpoints/epoch_NNNN.ckpt are written here.
    std::optional<std::filesystem::path> dir;
    std::function<void(const EpochMetrics&)> on_epoch;
};

/// Pretrains from scratch, or fine-tunes when `train.pretrain_checkpoint` is
/// set: backbone arrays come from the checkpoint and both heads are
/// re-initialized.
TrainResult train(const data::Dataset& dataset, const model::ModelConfig& model_config, const TrainConfig& train,
                  const TrainOutputs& outputs = {});

/// Copies backbone arrays of `pretrained` into `params`. Throws ConfigError
/// when the backbones disagree in names or shapes.
void load_backbone(ParamSet<float>& params, const ParamSet<float>& pretrained);

/// Eval-mode losses averaged over batches of fixed seeded positive pairs.
Losses evaluate_losses(const Checkpoint& ckpt, const data::Dataset& dataset, std::size_t batch_trials,
                       std::uint64_t seed, double lambda);

}  // namespace gaitssl::training
