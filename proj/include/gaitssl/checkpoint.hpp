// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gaitssl/data.hpp"
#include "gaitssl/model.hpp"
#include "gaitssl/optimizer.hpp"
#include "gaitssl/params.hpp"

namespace gaitssl {

/// Binary layout, little endian throughout:
///   "GAITCKPT" | u32 version | u64 n + n bytes of header JSON |
///   u32 count | count x (u32 n + name | u32 rank | rank x u64 dim | f32 values)
/// Model parameters are stored as "param/<name>", optimizer moments as
/// "adam.m/<name>" and "adam.v/<name>".
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    model::ModelConfig config;
    ParamSet<float> params;
    std::optional<data::NormStats> norm;
    std::optional<AdamWState<float>> optimizer;
    std::uint64_t epoch = 0;
    /// Subjects whose trials the model was trained on.
    std::vector<std::string> train_subjects;
};

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes, const std::string& origin = "<memory>");

/// Writes through a temporary file and renames, so readers never see a partial file.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws DataError on a malformed file or on arrays that disagree with the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gaitssl
