// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gaitssl/rng.hpp"

namespace gaitssl::data {

inline constexpr std::size_t kNumChannels = 9;
inline constexpr std::size_t kWindowLength = 90;
inline constexpr double kSampleRateHz = 30.0;

/// Canonical sagittal-plane channel order (degrees).
inline constexpr std::array<std::string_view, kNumChannels> kChannelNames = {
    "hip_flex_L",   "hip_flex_R", "knee_flex_L",  "knee_flex_R", "ankle_flex_L",
    "ankle_flex_R", "back_flex",  "elbow_flex_L", "elbow_flex_R",
};

namespace channel {
inline constexpr std::size_t kHipL = 0;
inline constexpr std::size_t kHipR = 1;
inline constexpr std::size_t kKneeL = 2;
inline constexpr std::size_t kKneeR = 3;
inline constexpr std::size_t kAnkleL = 4;
inline constexpr std::size_t kAnkleR = 5;
inline constexpr std::size_t kBack = 6;
inline constexpr std::size_t kElbowL = 7;
inline constexpr std::size_t kElbowR = 8;
}  // namespace channel

std::optional<std::size_t> channel_index(std::string_view name);

enum class Diagnosis { control, stroke, prosthesis, other };
enum class Laterality { none, left, right };

std::string_view to_string(Diagnosis d);
std::string_view to_string(Laterality l);
Diagnosis parse_diagnosis(std::string_view text);
Laterality parse_laterality(std::string_view text);

struct Subject {
    std::string subject_id;
    Diagnosis diagnosis = Diagnosis::control;
    Laterality laterality = Laterality::none;

    /// Subjects with diagnosis `other` never enter probe scoring.
    bool scoreable() const { return diagnosis != Diagnosis::other; }
};

/// Dense row-major matrix of samples (rows = frames, cols = channels).
class FrameMatrix {
public:
    FrameMatrix() = default;
    FrameMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
    FrameMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    /// Rows [begin, begin + count).
    FrameMatrix slice_rows(std::size_t begin, std::size_t count) const;

    bool operator==(const FrameMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

struct GaitTrial {
    std::string trial_id;
    std::string subject_id;
    int session_day = 0;
    std::string condition;
    FrameMatrix frames;  // len x kNumChannels, degrees
    double sample_rate_hz = kSampleRateHz;

    std::size_t length() const noexcept { return frames.rows(); }
    bool operator==(const GaitTrial&) const = default;
};

/// Fixed-length crop; `target` row t equals `data` row t + 1.
struct TrialWindow {
    std::string trial_id;
    std::size_t start_frame = 0;
    FrameMatrix data;    // length x J
    FrameMatrix target;  // (length - 1) x J
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> stddev;

    /// Per-channel z-score.
    FrameMatrix standardize(const FrameMatrix& frames) const;
};

struct Dataset {
    std::vector<Subject> subjects;  // sorted by subject_id
    std::vector<GaitTrial> trials;  // sorted by (subject_id, session_day, trial_id)

    const Subject* find_subject(std::string_view subject_id) const;
    const Subject& subject_of(const GaitTrial& trial) const;
};

/// Reads `subjects.csv` and `trials.ndjson` from a dataset directory.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the canonical layout; load(save(d)) reproduces d exactly.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Population (divide-by-count) mean and std per channel over every frame.
NormStats compute_norm_stats(std::span<const GaitTrial> trials);

TrialWindow make_window(const GaitTrial& trial, std::size_t start, std::size_t length = kWindowLength);

/// Two crops with independent uniform starts in [0, len - length]; overlap allowed.
std::pair<TrialWindow, TrialWindow> sample_positive_pair(const GaitTrial& trial, Rng& rng,
                                                         std::size_t length = kWindowLength);

/// Crop starting at floor((len - length) / 2).
TrialWindow center_window(const GaitTrial& trial, std::size_t length = kWindowLength);

struct SkipRecord {
    std::string trial_id;
    std::string reason;
};

struct Eligibility {
    std::vector<std::size_t> eligible;  // indices into the trial list
    std::vector<SkipRecord> skipped;
};

/// Trials shorter than `min_length` frames are skipped with a reason.
Eligibility partition_eligible(std::span<const GaitTrial> trials, std::size_t min_length = kWindowLength);

void write_skip_report(const std::filesystem::path& path, std::span<const SkipRecord> skipped);

struct FoldSplit {
    std::size_t k = 0;
    std::map<std::string, std::size_t> fold_of;
    std::vector<std::string> warnings;

    std::optional<std::size_t> fold(const std::string& subject_id) const;
    std::vector<std::string> members(std::size_t fold_index) const;
};

/// Shuffle each stratum, then deal round-robin with the dealing position carried
/// across strata, so per-stratum and total fold counts each differ by at most one.
FoldSplit make_stratified_folds(std::span<const std::string> subject_ids, std::span<const std::string> strata,
                                std::size_t k, Rng& rng);

/// Folds over scoreable subjects, stratified by diagnosis.
FoldSplit make_subject_folds(std::span<const Subject> subjects, std::size_t k, Rng& rng);

}  // namespace gaitssl::data
