// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitssl/checkpoint.hpp"
#include "gaitssl/data.hpp"

namespace gaitssl::probe {

struct EmbeddingRecord {
    std::string subject_id;
    std::string trial_id;
    int session_day = 0;
    std::vector<float> e;  // pooled, pre-projection
    std::vector<float> z;  // projected, unit norm
    bool operator==(const EmbeddingRecord&) const = default;
};

struct EmbedResult {
    std::vector<EmbeddingRecord> records;
    std::vector<data::SkipRecord> skipped;
};

/// Eval-mode forward of each eligible trial's center window, in dataset order.
EmbedResult embed_dataset(const Checkpoint& ckpt, const data::Dataset& dataset, std::size_t batch_size = 32);

/// Header: subject_id,trial_id,session_day,e_0..e_{H-1},z_0..z_{P-1}.
std::string embeddings_csv(std::span<const EmbeddingRecord> records);
std::vector<EmbeddingRecord> parse_embeddings_csv(const std::string& text, const std::string& origin);
void save_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records);
std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path);

/// Dense row-major design matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct LogisticFit {
    std::vector<double> w;
    double b = 0.0;
    double objective = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};

struct LogisticOptions {
    double tolerance = 1e-8;  // stop when the objective decreases by less than this
    std::size_t max_iter = 10000;
};

/// mean_i log(1 + exp(-s_i (x_i.w + b))) + l1_weight * ||w||_1, s_i = +-1.
double l1_logistic_objective(const Matrix& X, std::span<const int> y, std::span<const double> w, double b,
                             double l1_weight);

/// Proximal gradient (soft thresholding) with backtracking; the bias is not
/// penalized. Labels are 0/1. Throws DataError for single-class input.
LogisticFit fit_l1_logistic(const Matrix& X, std::span<const int> y, double l1_weight,
                            const LogisticOptions& options = {});

int predict(const LogisticFit& fit, std::span<const double> x);

enum class Task { stroke_vs_control, llpu_vs_control, laterality };
std::string_view to_string(Task t);
Task parse_task(std::string_view text);
inline constexpr Task kAllTasks[] = {Task::stroke_vs_control, Task::llpu_vs_control, Task::laterality};

/// Label of a subject under a task, or nullopt when excluded. Positive class:
/// stroke / prosthesis / right.
std::optional<int> task_label(Task task, const data::Subject& subject);

struct ProbeConfig {
    std::size_t outer_k = 3;
    std::size_t inner_k = 4;
    std::vector<double> l1_grid = {1e-6, 3.1622776601683795e-06, 1e-5, 3.1622776601683795e-05, 1e-4,
                                   3.1622776601683795e-04, 1e-3};
    std::size_t permutation_seeds = 10;
    std::size_t threads = 1;

    /// Throws ConfigError.
    void validate() const;
};

/// `count` log-spaced values from 10^lo to 10^hi.
std::vector<double> log_grid(double lo_exp, double hi_exp, std::size_t count);

struct TrialPrediction {
    std::string subject_id;
    std::string trial_id;
    std::size_t fold = 0;
    int label = 0;
    int predicted = 0;
};

struct FoldResult {
    std::size_t fold = 0;
    double accuracy = 0.0;
    double subject_accuracy = 0.0;  // majority vote per subject
    double l1_weight = 0.0;
    std::size_t train_trials = 0;
    std::size_t validation_trials = 0;
    std::vector<std::string> train_subjects;
    std::vector<std::string> validation_subjects;
    /// Inner folds: (train subjects, validation subjects).
    std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> inner_splits;
};

struct ProbeResult {
    Task task = Task::stroke_vs_control;
    std::vector<FoldResult> folds;
    double mean = 0.0;
    double std = 0.0;  // population standard deviation across folds
    double max = 0.0;
    double subject_mean = 0.0;
    std::vector<TrialPrediction> predictions;
    std::vector<std::string> warnings;
};

/// Nested subject-level cross-validation. `label_override`, when given, maps
/// subject ids to labels in place of the task rule (used for the permutation
/// control). Throws DataError when a class is absent from an outer training set.
ProbeResult nested_cv_probe(std::span<const EmbeddingRecord> records, std::span<const data::Subject> subjects,
                            Task task, const ProbeConfig& config, std::uint64_t seed,
                            const std::map<std::string, int>* label_override = nullptr);

/// Mean accuracy with subject labels shuffled; one entry per seed.
std::vector<double> permutation_control(std::span<const EmbeddingRecord> records,
                                        std::span<const data::Subject> subjects, Task task, const ProbeConfig& config,
                                        std::uint64_t seed);

struct TaskReport {
    Task task = Task::stroke_vs_control;
    std::optional<ProbeResult> result;
    std::string skipped_reason;
    std::vector<double> permutation;
};

/// Per-fold rows then a summary row:
/// task,fold,accuracy,subject_accuracy,l1_weight,train_trials,validation_trials
std::string report_csv(std::span<const TaskReport> reports);
std::string predictions_csv(std::span<const TaskReport> reports);

}  // namespace gaitssl::probe
