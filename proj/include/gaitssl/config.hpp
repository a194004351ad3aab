// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "gaitssl/biomarker.hpp"
#include "gaitssl/model.hpp"
#include "gaitssl/probe.hpp"
#include "gaitssl/synthetic.hpp"
#include "gaitssl/training.hpp"

namespace gaitssl::config {

using nlohmann::json;

struct BiomarkerConfig {
    biomarker::ReferenceMode reference = biomarker::ReferenceMode::per_trial;
    /// Held-out mode drops subjects the checkpoint was trained on.
    bool held_out = true;
    biomarker::MedianOptions median;
};

struct SweepConfig {
    /// Ordered axes: dotted config path (or "pretrain") -> list of values.
    json grid = json::object();
    std::size_t eval_batch = 32;
};

struct Paths {
    std::optional<std::filesystem::path> dataset;
    std::optional<std::filesystem::path> pretrain_dataset;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> embeddings;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::filesystem::path run_dir = "runs/latest";
    std::size_t threads = 1;
    Paths paths;
    synth::CohortSpec cohort;
    model::ModelConfig model;
    training::TrainConfig train;
    probe::ProbeConfig probe;
    BiomarkerConfig biomarker;
    SweepConfig sweep;
};

json to_json(const model::ModelConfig& c);
json to_json(const synth::CohortSpec& c);
json to_json(const training::TrainConfig& c);
json to_json(const probe::ProbeConfig& c);
json to_json(const BiomarkerConfig& c);
json to_json(const RunConfig& c);

/// Strict readers: unknown keys and type errors throw ConfigError naming the
/// JSON pointer and `file`. Missing keys keep their defaults.
model::ModelConfig model_from_json(const json& j, const std::string& pointer, const std::string& file);
synth::CohortSpec cohort_from_json(const json& j, const std::string& pointer, const std::string& file,
                                   std::uint64_t default_seed);
training::TrainConfig train_from_json(const json& j, const std::string& pointer, const std::string& file,
                                      std::uint64_t default_seed);

/// Parses and validates a full run config.
RunConfig parse_run_config(const json& j, const std::string& file);
RunConfig load_run_config(const std::filesystem::path& path);

/// FNV-1a over the compact dump of the resolved config (run_dir and threads
/// excluded), as 16 hex digits.
std::string config_hash(const RunConfig& c);

}  // namespace gaitssl::config
