// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/biomarker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <tuple>

#include "gaitssl/errors.hpp"
#include "gaitssl/io.hpp"

namespace gaitssl::biomarker {

namespace {

double dot(std::span<const float> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

double distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace

SimilarityMatrix similarity_matrix(std::span<const probe::EmbeddingRecord> records,
                                   std::span<const data::Subject> subjects, double unit_tol) {
    if (records.size() < 2) throw DataError("similarity matrix needs at least 2 embeddings");
    std::map<std::string, data::Diagnosis> diagnosis;
    for (const auto& s : subjects) diagnosis[s.subject_id] = s.diagnosis;

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto key = [&](std::size_t i) {
        const auto& r = records[i];
        auto it = diagnosis.find(r.subject_id);
        if (it == diagnosis.end()) throw DataError("embedding references unknown subject '" + r.subject_id + "'");
        return std::make_tuple(static_cast<int>(it->second), std::cref(r.subject_id), r.session_day,
                               std::cref(r.trial_id));
    };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });

    SimilarityMatrix m;
    m.n = records.size();
    const std::size_t P = records[0].z.size();
    std::vector<std::vector<double>> z(m.n);
    for (std::size_t i = 0; i < m.n; ++i) {
        const auto& r = records[order[i]];
        if (r.z.size() != P) throw DataError("embedding dimensions differ");
        double sq = 0.0;
        for (float v : r.z) sq += static_cast<double>(v) * v;
        if (std::abs(std::sqrt(sq) - 1.0) > unit_tol) {
            throw DataError("embedding of trial " + r.trial_id + " is not unit length (norm " +
                            io::format_number(std::sqrt(sq)) + ")");
        }
        z[i].assign(r.z.begin(), r.z.end());
        m.rows.push_back({r.subject_id, r.trial_id, std::string(data::to_string(diagnosis.at(r.subject_id))),
                          r.session_day});
    }
    m.values.resize(m.n * m.n);
    m.same_subject.resize(m.n * m.n);
    m.same_diagnosis.resize(m.n * m.n);
    for (std::size_t a = 0; a < m.n; ++a) {
        for (std::size_t b = a; b < m.n; ++b) {
            double s = 0.0;
            for (std::size_t k = 0; k < P; ++k) s += z[a][k] * z[b][k];
            s = std::clamp(s, -1.0, 1.0);
            m.values[a * m.n + b] = m.values[b * m.n + a] = s;
            const std::uint8_t ss = m.rows[a].subject_id == m.rows[b].subject_id;
            const std::uint8_t sd = m.rows[a].diagnosis == m.rows[b].diagnosis;
            m.same_subject[a * m.n + b] = m.same_subject[b * m.n + a] = ss;
            m.same_diagnosis[a * m.n + b] = m.same_diagnosis[b * m.n + a] = sd;
        }
    }
    return m;
}

BlockContrast block_contrast(const SimilarityMatrix& m) {
    double within = 0.0, between = 0.0;
    std::size_t nw = 0, nb = 0;
    for (std::size_t a = 0; a < m.n; ++a) {
        for (std::size_t b = 0; b < m.n; ++b) {
            if (a == b) continue;
            if (m.same_subject[a * m.n + b]) {
                within += m(a, b);
                ++nw;
            } else {
                between += m(a, b);
                ++nb;
            }
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nw ? within / static_cast<double>(nw) : nan, nb ? between / static_cast<double>(nb) : nan};
}

std::string matrix_csv(const SimilarityMatrix& m) {
    std::string s;
    for (std::size_t a = 0; a < m.n; ++a) {
        for (std::size_t b = 0; b < m.n; ++b) {
            if (b) s += ',';
            s += io::format_number(m(a, b));
        }
        s += '\n';
    }
    return s;
}

std::string rows_csv(const SimilarityMatrix& m) {
    std::string s = "row,diagnosis,subject_id,session_day,trial_id\n";
    for (std::size_t i = 0; i < m.n; ++i) {
        const auto& r = m.rows[i];
        s += std::to_string(i) + ',' + r.diagnosis + ',' + r.subject_id + ',' + std::to_string(r.session_day) + ',' +
             r.trial_id + '\n';
    }
    return s;
}

std::string indicator_csv(const SimilarityMatrix& m, const std::vector<std::uint8_t>& indicator) {
    std::string s;
    for (std::size_t a = 0; a < m.n; ++a) {
        for (std::size_t b = 0; b < m.n; ++b) {
            if (b) s += ',';
            s += indicator[a * m.n + b] ? '1' : '0';
        }
        s += '\n';
    }
    return s;
}

double sum_of_distances(std::span<const std::vector<double>> points, std::span<const double> m) {
    double s = 0.0;
    for (const auto& p : points) s += distance(p, m);
    return s;
}

MedianResult geometric_median(std::span<const std::vector<double>> points, const MedianOptions& options) {
    if (points.empty()) throw DataError("geometric median of an empty set");
    if (!(options.tol > 0.0)) throw std::invalid_argument("geometric_median: tol must be positive");
    const std::size_t d = points[0].size();
    for (const auto& p : points) {
        if (p.size() != d) throw DataError("geometric median: points differ in dimension");
    }
    MedianResult res;
    std::vector<double> mean(d, 0.0);
    for (const auto& p : points)
        for (std::size_t k = 0; k < d; ++k) mean[k] += p[k];
    for (auto& v : mean) v /= static_cast<double>(points.size());
    res.point = mean;
    res.objective_trace.push_back(sum_of_distances(points, res.point));
    if (points.size() == 1) {
        res.point = points[0];
        res.converged = true;
        res.objective_trace.back() = 0.0;
        return res;
    }

    // Unit direction of the mean, used to step off a data point; falls back to the first axis.
    std::vector<double> nudge(d, 0.0);
    double mean_norm = std::sqrt(std::inner_product(mean.begin(), mean.end(), mean.begin(), 0.0));
    if (mean_norm > 0.0) {
        for (std::size_t k = 0; k < d; ++k) nudge[k] = mean[k] / mean_norm;
    } else {
        nudge[0] = 1.0;
    }

    std::vector<double> next(d);
    for (res.iterations = 0; res.iterations < options.max_iter;) {
        ++res.iterations;
        for (const auto& p : points) {
            if (distance(p, res.point) < 1e-12) {
                for (std::size_t k = 0; k < d; ++k) res.point[k] += 1e-9 * nudge[k];
                break;
            }
        }
        std::fill(next.begin(), next.end(), 0.0);
        double wsum = 0.0;
        for (const auto& p : points) {
            const double w = 1.0 / distance(p, res.point);
            wsum += w;
            for (std::size_t k = 0; k < d; ++k) next[k] += w * p[k];
        }
        for (auto& v : next) v /= wsum;
        const double step = distance(next, res.point);
        res.point = next;
        res.objective_trace.push_back(sum_of_distances(points, res.point));
        if (step < options.tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

std::vector<double> control_reference(std::span<const probe::EmbeddingRecord> records,
                                      std::span<const data::Subject> subjects, ReferenceMode mode,
                                      const MedianOptions& options) {
    std::map<std::string, data::Diagnosis> diagnosis;
    for (const auto& s : subjects) diagnosis[s.subject_id] = s.diagnosis;
    std::vector<std::vector<double>> points;
    std::map<std::string, std::pair<std::vector<double>, std::size_t>> per_subject;
    for (const auto& r : records) {
        auto it = diagnosis.find(r.subject_id);
        if (it == diagnosis.end() || it->second != data::Diagnosis::control) continue;
        if (mode == ReferenceMode::per_trial) {
            points.emplace_back(r.z.begin(), r.z.end());
        } else {
            auto& [acc, n] = per_subject[r.subject_id];
            if (acc.empty()) acc.assign(r.z.size(), 0.0);
            for (std::size_t k = 0; k < r.z.size(); ++k) acc[k] += r.z[k];
            ++n;
        }
    }
    for (auto& [id, entry] : per_subject) {
        for (auto& v : entry.first) v /= static_cast<double>(entry.second);
        points.push_back(entry.first);
    }
    if (points.empty()) throw DataError("no control embeddings to build a reference from");
    auto ref = geometric_median(points, options).point;
    const double norm = std::sqrt(std::inner_product(ref.begin(), ref.end(), ref.begin(), 0.0));
    if (!(norm > 0.0)) throw NumericalError("control reference has zero length");
    for (auto& v : ref) v /= norm;
    return ref;
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

BiomarkerSeries response_series(std::span<const probe::EmbeddingRecord> records, std::span<const double> reference,
                                const std::string& subject_id) {
    std::map<int, std::vector<double>> by_day;
    for (const auto& r : records) {
        if (r.subject_id != subject_id) continue;
        if (r.z.size() != reference.size()) throw DataError("reference and embedding dimensions differ");
        by_day[r.session_day].push_back(std::clamp(dot(r.z, reference), -1.0, 1.0));
    }
    if (by_day.empty()) throw DataError("subject '" + subject_id + "' has no embeddings");
    BiomarkerSeries s;
    s.subject_id = subject_id;
    for (auto& [day, sims] : by_day) s.points.push_back({day, median(sims), sims.size()});
    return s;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

std::string series_csv(std::span<const BiomarkerSeries> series) {
    std::string s = "subject_id,session_day,median_similarity\n";
    for (const auto& ser : series) {
        for (const auto& p : ser.points) {
            s += ser.subject_id + ',' + std::to_string(p.session_day) + ',' + io::format_number(p.median_similarity) +
                 '\n';
        }
    }
    return s;
}

}  // namespace gaitssl::biomarker
