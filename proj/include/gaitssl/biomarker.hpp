// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gaitssl/data.hpp"
#include "gaitssl/probe.hpp"

namespace gaitssl::biomarker {

struct RowMeta {
    std::string subject_id;
    std::string trial_id;
    std::string diagnosis;
    int session_day = 0;
};

struct SimilarityMatrix {
    std::size_t n = 0;
    std::vector<RowMeta> rows;  // ordered by (diagnosis, subject, day, trial)
    std::vector<double> values;  // n x n
    std::vector<std::uint8_t> same_subject;
    std::vector<std::uint8_t> same_diagnosis;

    double operator()(std::size_t a, std::size_t b) const { return values[a * n + b]; }
};

/// Cosine similarities of projected embeddings. Throws DataError when a z is
/// not unit length within `unit_tol` or fewer than two records are given.
SimilarityMatrix similarity_matrix(std::span<const probe::EmbeddingRecord> records,
                                   std::span<const data::Subject> subjects, double unit_tol = 1e-4);

struct BlockContrast {
    double within_subject = 0.0;
    double between_subject = 0.0;
};

/// Mean off-diagonal similarity for same-subject and different-subject pairs.
BlockContrast block_contrast(const SimilarityMatrix& m);

std::string matrix_csv(const SimilarityMatrix& m);
std::string rows_csv(const SimilarityMatrix& m);
std::string indicator_csv(const SimilarityMatrix& m, const std::vector<std::uint8_t>& indicator);

struct MedianOptions {
    double tol = 1e-9;
    std::size_t max_iter = 1000;
};

struct MedianResult {
    std::vector<double> point;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> objective_trace;  // sum of distances, one entry per iterate
};

double sum_of_distances(std::span<const std::vector<double>> points, std::span<const double> m);

/// Weiszfeld iteration from the coordinate-wise mean.
MedianResult geometric_median(std::span<const std::vector<double>> points, const MedianOptions& options = {});

enum class ReferenceMode { per_trial, subject_mean };

/// Unit-length geometric median of control z vectors.
std::vector<double> control_reference(std::span<const probe::EmbeddingRecord> records,
                                      std::span<const data::Subject> subjects, ReferenceMode mode,
                                      const MedianOptions& options = {});

struct SeriesPoint {
    int session_day = 0;
    double median_similarity = 0.0;
    std::size_t trials = 0;
};

struct BiomarkerSeries {
    std::string subject_id;
    std::vector<SeriesPoint> points;  // ascending day
};

double median(std::vector<double> values);

BiomarkerSeries response_series(std::span<const probe::EmbeddingRecord> records, std::span<const double> reference,
                                const std::string& subject_id);

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

std::string series_csv(std::span<const BiomarkerSeries> series);

}  // namespace gaitssl::biomarker
