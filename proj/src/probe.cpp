// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "gaitssl/errors.hpp"
#include "gaitssl/io.hpp"
#include "gaitssl/model.hpp"

namespace gaitssl::probe {

// ---- embeddings -------------------------------------------------------------

EmbedResult embed_dataset(const Checkpoint& ckpt, const data::Dataset& dataset, std::size_t batch_size) {
    if (!ckpt.norm) throw DataError("checkpoint carries no normalization statistics");
    if (ckpt.norm->mean.size() != ckpt.config.input_dim) {
        throw DataError("checkpoint normalization covers " + std::to_string(ckpt.norm->mean.size()) +
                        " channels, model expects " + std::to_string(ckpt.config.input_dim));
    }
    if (batch_size == 0) batch_size = 1;
    const auto elig = data::partition_eligible(dataset.trials, ckpt.config.seq_len);
    EmbedResult out;
    out.skipped = elig.skipped;
    const std::size_t H = ckpt.config.hidden_dim, P = ckpt.config.projection_dim;
    for (std::size_t i = 0; i < elig.eligible.size(); i += batch_size) {
        const std::size_t end = std::min(elig.eligible.size(), i + batch_size);
        std::vector<data::FrameMatrix> windows;
        for (std::size_t j = i; j < end; ++j) {
            const auto& trial = dataset.trials[elig.eligible[j]];
            if (trial.frames.cols() != ckpt.config.input_dim) {
                throw DataError("trial " + trial.trial_id + " has " + std::to_string(trial.frames.cols()) +
                                " channels, model expects " + std::to_string(ckpt.config.input_dim));
            }
            windows.push_back(ckpt.norm->standardize(data::center_window(trial, ckpt.config.seq_len).data));
        }
        ad::Tape<float> tape;
        const auto bound = model::bind_params(tape, ckpt.params, false);
        const auto fw = model::forward_batch(tape, bound, ckpt.config, windows, model::Mode::eval, nullptr);
        const auto e = fw.pooled.value();
        const auto z = fw.projected.value();
        for (std::size_t j = i; j < end; ++j) {
            const auto& trial = dataset.trials[elig.eligible[j]];
            const std::size_t r = j - i;
            out.records.push_back({trial.subject_id, trial.trial_id, trial.session_day,
                                   std::vector<float>(e.begin() + r * H, e.begin() + (r + 1) * H),
                                   std::vector<float>(z.begin() + r * P, z.begin() + (r + 1) * P)});
        }
    }
    return out;
}

std::string embeddings_csv(std::span<const EmbeddingRecord> records) {
    const std::size_t H = records.empty() ? 0 : records[0].e.size();
    const std::size_t P = records.empty() ? 0 : records[0].z.size();
    std::string s = "subject_id,trial_id,session_day";
    for (std::size_t i = 0; i < H; ++i) s += ",e_" + std::to_string(i);
    for (std::size_t i = 0; i < P; ++i) s += ",z_" + std::to_string(i);
    s += '\n';
    for (const auto& r : records) {
        if (r.e.size() != H || r.z.size() != P) throw std::invalid_argument("embeddings_csv: ragged records");
        s += r.subject_id + ',' + r.trial_id + ',' + std::to_string(r.session_day);
        for (float v : r.e) s += ',' + io::format_number(v);
        for (float v : r.z) s += ',' + io::format_number(v);
        s += '\n';
    }
    return s;
}

std::vector<EmbeddingRecord> parse_embeddings_csv(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw DataError(origin + ": empty embeddings file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = io::split(line, ',');
    if (header.size() < 3 || header[0] != "subject_id" || header[1] != "trial_id" || header[2] != "session_day") {
        throw DataError(origin + ": header must start with subject_id,trial_id,session_day");
    }
    std::size_t H = 0, P = 0;
    for (std::size_t i = 3; i < header.size(); ++i) {
        const std::string expect_e = "e_" + std::to_string(H);
        const std::string expect_z = "z_" + std::to_string(P);
        if (P == 0 && header[i] == expect_e) {
            ++H;
        } else if (header[i] == expect_z) {
            ++P;
        } else {
            throw DataError(origin + ": unexpected column '" + header[i] + "'");
        }
    }
    std::vector<EmbeddingRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = io::split(line, ',');
        if (cells.size() != header.size()) {
            throw DataError(origin + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) +
                            " columns, found " + std::to_string(cells.size()));
        }
        EmbeddingRecord r;
        r.subject_id = cells[0];
        r.trial_id = cells[1];
        try {
            r.session_day = std::stoi(cells[2]);
            for (std::size_t i = 0; i < H; ++i) r.e.push_back(static_cast<float>(io::parse_double(cells[3 + i])));
            for (std::size_t i = 0; i < P; ++i) r.z.push_back(static_cast<float>(io::parse_double(cells[3 + H + i])));
        } catch (const std::exception& e) {
            throw DataError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(std::move(r));
    }
    return out;
}

void save_embeddings(const std::filesystem::path& path, std::span<const EmbeddingRecord> records) {
    io::write_text_file(path, embeddings_csv(records));
}

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path) {
    return parse_embeddings_csv(io::read_text_file(path), path.string());
}

// ---- L1 logistic regression -----------------------------------------------

namespace {

double log1p_exp(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double soft_threshold(double v, double t) {
    if (v > t) return v - t;
    if (v < -t) return v + t;
    return 0.0;
}

/// Smooth part (mean logistic loss) and, optionally, its gradient.
double smooth_loss(const Matrix& X, std::span<const int> y, std::span<const double> w, double b,
                   std::vector<double>* gw, double* gb) {
    const double inv_n = 1.0 / static_cast<double>(X.rows);
    double loss = 0.0;
    if (gw) std::fill(gw->begin(), gw->end(), 0.0);
    if (gb) *gb = 0.0;
    for (std::size_t i = 0; i < X.rows; ++i) {
        double m = b;
        for (std::size_t j = 0; j < X.cols; ++j) m += X(i, j) * w[j];
        const double s = y[i] ? 1.0 : -1.0;
        loss += log1p_exp(-s * m);
        if (gw) {
            const double c = -s * sigmoid(-s * m) * inv_n;
            for (std::size_t j = 0; j < X.cols; ++j) (*gw)[j] += c * X(i, j);
            *gb += c;
        }
    }
    return loss * inv_n;
}

double l1_norm(std::span<const double> w) {
    double s = 0.0;
    for (double v : w) s += std::abs(v);
    return s;
}

}  // namespace

double l1_logistic_objective(const Matrix& X, std::span<const int> y, std::span<const double> w, double b,
                             double l1_weight) {
    return smooth_loss(X, y, w, b, nullptr, nullptr) + l1_weight * l1_norm(w);
}

LogisticFit fit_l1_logistic(const Matrix& X, std::span<const int> y, double l1_weight, const LogisticOptions& options) {
    if (X.rows != y.size() || X.values.size() != X.rows * X.cols) {
        throw std::invalid_argument("fit_l1_logistic: design matrix and labels disagree");
    }
    if (!(l1_weight >= 0.0)) throw std::invalid_argument("fit_l1_logistic: l1_weight must be non-negative");
    const auto positives = std::count(y.begin(), y.end(), 1);
    if (X.rows < 2 || positives == 0 || positives == static_cast<std::ptrdiff_t>(X.rows)) {
        throw DataError("fit_l1_logistic: both classes must be present (n=" + std::to_string(X.rows) +
                        ", positives=" + std::to_string(positives) + ")");
    }

    LogisticFit fit;
    fit.w.assign(X.cols, 0.0);
    std::vector<double> gw(X.cols), w_new(X.cols);
    double gb = 0.0;
    double step = 1.0;
    double f = smooth_loss(X, y, fit.w, fit.b, &gw, &gb);
    double F = f + l1_weight * l1_norm(fit.w);
    for (fit.iterations = 0; fit.iterations < options.max_iter;) {
        ++fit.iterations;
        double f_new = 0.0, b_new = 0.0;
        for (;;) {
            double lin = 0.0, sq = 0.0;
            for (std::size_t j = 0; j < X.cols; ++j) {
                w_new[j] = soft_threshold(fit.w[j] - step * gw[j], step * l1_weight);
                const double d = w_new[j] - fit.w[j];
                lin += gw[j] * d;
                sq += d * d;
            }
            b_new = fit.b - step * gb;
            const double db = b_new - fit.b;
            lin += gb * db;
            sq += db * db;
            f_new = smooth_loss(X, y, w_new, b_new, nullptr, nullptr);
            if (f_new <= f + lin + sq / (2.0 * step) + 1e-15 || step < 1e-12) break;
            step *= 0.5;
        }
        fit.w.swap(w_new);
        fit.b = b_new;
        const double F_new = f_new + l1_weight * l1_norm(fit.w);
        const double decrease = F - F_new;
        F = F_new;
        f = smooth_loss(X, y, fit.w, fit.b, &gw, &gb);
        if (decrease < options.tolerance) {
            fit.converged = true;
            break;
        }
        step *= 1.5;
    }
    fit.objective = F;
    return fit;
}

int predict(const LogisticFit& fit, std::span<const double> x) {
    double m = fit.b;
    for (std::size_t j = 0; j < fit.w.size(); ++j) m += fit.w[j] * x[j];
    return m > 0.0 ? 1 : 0;
}

// ---- tasks and nested CV ---------------------------------------------------

std::string_view to_string(Task t) {
    switch (t) {
        case Task::stroke_vs_control: return "stroke_vs_control";
        case Task::llpu_vs_control: return "llpu_vs_control";
        case Task::laterality: return "laterality";
    }
    return "?";
}

Task parse_task(std::string_view text) {
    for (Task t : kAllTasks) {
        if (to_string(t) == text) return t;
    }
    throw ConfigError("unknown probe task '" + std::string(text) + "'");
}

std::optional<int> task_label(Task task, const data::Subject& s) {
    using data::Diagnosis;
    switch (task) {
        case Task::stroke_vs_control:
            if (s.diagnosis == Diagnosis::control) return 0;
            if (s.diagnosis == Diagnosis::stroke) return 1;
            return std::nullopt;
        case Task::llpu_vs_control:
            if (s.diagnosis == Diagnosis::control) return 0;
            if (s.diagnosis == Diagnosis::prosthesis) return 1;
            return std::nullopt;
        case Task::laterality:
            if (!s.scoreable()) return std::nullopt;
            if (s.laterality == data::Laterality::left) return 0;
            if (s.laterality == data::Laterality::right) return 1;
            return std::nullopt;
    }
    return std::nullopt;
}

void ProbeConfig::validate() const {
    if (outer_k < 2 || inner_k < 2) throw ConfigError("probe: outer_k and inner_k must be at least 2");
    if (l1_grid.empty()) throw ConfigError("probe: l1_grid must not be empty");
    for (double g : l1_grid) {
        if (!(g >= 0.0)) throw ConfigError("probe: l1_grid entries must be non-negative");
    }
    if (threads == 0) throw ConfigError("probe: threads must be positive");
}

std::vector<double> log_grid(double lo_exp, double hi_exp, std::size_t count) {
    std::vector<double> g(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double t = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
        g[i] = std::pow(10.0, lo_exp + t * (hi_exp - lo_exp));
    }
    return g;
}

namespace {

struct Sample {
    std::size_t record = 0;
    std::string subject;
    int label = 0;
};

/// Standardizes `rows` of the embedding matrix with statistics of `fit_rows`.
struct Standardizer {
    std::vector<double> mean, scale;

    Standardizer(std::span<const EmbeddingRecord> recs, std::span<const Sample> samples,
                 std::span<const std::size_t> fit_rows) {
        const std::size_t H = recs[0].e.size();
        mean.assign(H, 0.0);
        scale.assign(H, 0.0);
        for (auto i : fit_rows)
            for (std::size_t j = 0; j < H; ++j) mean[j] += recs[samples[i].record].e[j];
        for (auto& m : mean) m /= static_cast<double>(fit_rows.size());
        for (auto i : fit_rows)
            for (std::size_t j = 0; j < H; ++j) {
                const double d = recs[samples[i].record].e[j] - mean[j];
                scale[j] += d * d;
            }
        for (auto& s : scale) {
            s = std::sqrt(s / static_cast<double>(fit_rows.size()));
            if (!(s > 0.0)) s = 1.0;
        }
    }

    Matrix apply(std::span<const EmbeddingRecord> recs, std::span<const Sample> samples,
                 std::span<const std::size_t> rows) const {
        Matrix X{rows.size(), mean.size(), {}};
        X.values.reserve(rows.size() * mean.size());
        for (auto i : rows)
            for (std::size_t j = 0; j < mean.size(); ++j)
                X.values.push_back((recs[samples[i].record].e[j] - mean[j]) / scale[j]);
        return X;
    }
};

Matrix select_rows(const Matrix& X, std::span<const std::size_t> rows) {
    Matrix out{rows.size(), X.cols, {}};
    out.values.reserve(rows.size() * X.cols);
    for (auto r : rows) out.values.insert(out.values.end(), X.values.begin() + r * X.cols,
                                          X.values.begin() + (r + 1) * X.cols);
    return out;
}

/// Accuracy of a fit (or of a constant prediction when training is single-class).
double fit_and_score(const Matrix& Xtr, std::span<const int> ytr, const Matrix& Xva, std::span<const int> yva,
                     double l1_weight) {
    const auto pos = std::count(ytr.begin(), ytr.end(), 1);
    std::size_t correct = 0;
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(ytr.size())) {
        const int constant = pos == 0 ? 0 : 1;
        for (int v : yva) correct += v == constant;
    } else {
        const auto fit = fit_l1_logistic(Xtr, ytr, l1_weight);
        for (std::size_t i = 0; i < Xva.rows; ++i) {
            correct += predict(fit, std::span<const double>(Xva.values).subspan(i * Xva.cols, Xva.cols)) == yva[i];
        }
    }
    return static_cast<double>(correct) / static_cast<double>(yva.size());
}

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            for (std::size_t i = t; i < n; i += threads) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

ProbeResult nested_cv_probe(std::span<const EmbeddingRecord> records, std::span<const data::Subject> subjects,
                            Task task, const ProbeConfig& config, std::uint64_t seed,
                            const std::map<std::string, int>* label_override) {
    config.validate();
    std::map<std::string, int> labels;
    for (const auto& s : subjects) {
        if (label_override) {
            auto it = label_override->find(s.subject_id);
            if (it != label_override->end()) labels[s.subject_id] = it->second;
        } else if (auto l = task_label(task, s)) {
            labels[s.subject_id] = *l;
        }
    }
    std::vector<Sample> samples;
    std::set<std::string> present;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto it = labels.find(records[i].subject_id);
        if (it == labels.end()) continue;
        samples.push_back({i, records[i].subject_id, it->second});
        present.insert(records[i].subject_id);
    }
    std::vector<std::string> ids(present.begin(), present.end());
    std::vector<std::string> strata;
    for (const auto& id : ids) strata.push_back(std::to_string(labels.at(id)));
    if (samples.empty()) throw DataError(std::string("probe ") + std::string(to_string(task)) + ": no records");

    ProbeResult result;
    result.task = task;
    Rng outer_rng(mix_seed(seed, to_string(task)));
    const auto outer = data::make_stratified_folds(ids, strata, config.outer_k, outer_rng);
    result.warnings = outer.warnings;
    result.folds.resize(config.outer_k);
    std::vector<std::vector<TrialPrediction>> fold_predictions(config.outer_k);
    std::vector<std::vector<std::string>> fold_warnings(config.outer_k);

    parallel_for(config.outer_k, config.threads, [&](std::size_t f) {
        FoldResult& fr = result.folds[f];
        fr.fold = f;
        std::vector<std::size_t> tr, va;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            (outer.fold_of.at(samples[i].subject) == f ? va : tr).push_back(i);
        }
        std::vector<std::string> tr_ids, tr_strata;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (outer.fold_of.at(ids[i]) == f) {
                fr.validation_subjects.push_back(ids[i]);
            } else {
                tr_ids.push_back(ids[i]);
                tr_strata.push_back(strata[i]);
            }
        }
        fr.train_subjects = tr_ids;
        if (std::set<std::string>(tr_strata.begin(), tr_strata.end()).size() < 2) {
            throw DataError("probe " + std::string(to_string(task)) + ": a class is absent from outer training fold " +
                            std::to_string(f));
        }
        std::map<std::string, int> val_class_counts;
        for (const auto& s : fr.validation_subjects) ++val_class_counts[std::to_string(labels.at(s))];
        for (const char* cls : {"0", "1"}) {
            if (val_class_counts[cls] < 2) {
                fold_warnings[f].push_back("outer fold " + std::to_string(f) + " holds " +
                                           std::to_string(val_class_counts[cls]) + " subject(s) of class " + cls);
            }
        }

        const Standardizer stdz(records, samples, tr);
        const Matrix Xtr = stdz.apply(records, samples, tr);
        std::vector<int> ytr;
        for (auto i : tr) ytr.push_back(samples[i].label);

        Rng inner_rng(mix_seed(mix_seed(seed, to_string(task)), f));
        const auto inner = data::make_stratified_folds(tr_ids, tr_strata, config.inner_k, inner_rng);
        // Row positions within Xtr per inner fold.
        std::vector<std::vector<std::size_t>> inner_tr(config.inner_k), inner_va(config.inner_k);
        for (std::size_t r = 0; r < tr.size(); ++r) {
            const auto g = inner.fold_of.at(samples[tr[r]].subject);
            for (std::size_t k = 0; k < config.inner_k; ++k) (k == g ? inner_va : inner_tr)[k].push_back(r);
        }
        for (std::size_t k = 0; k < config.inner_k; ++k) {
            std::vector<std::string> a, b;
            for (const auto& id : tr_ids) (inner.fold_of.at(id) == k ? b : a).push_back(id);
            fr.inner_splits.emplace_back(std::move(a), std::move(b));
        }

        double best = -1.0;
        for (double weight : config.l1_grid) {
            double acc = 0.0;
            std::size_t used = 0;
            for (std::size_t k = 0; k < config.inner_k; ++k) {
                if (inner_va[k].empty() || inner_tr[k].empty()) continue;
                const Matrix Xa = select_rows(Xtr, inner_tr[k]);
                const Matrix Xb = select_rows(Xtr, inner_va[k]);
                std::vector<int> ya, yb;
                for (auto r : inner_tr[k]) ya.push_back(ytr[r]);
                for (auto r : inner_va[k]) yb.push_back(ytr[r]);
                acc += fit_and_score(Xa, ya, Xb, yb, weight);
                ++used;
            }
            acc /= static_cast<double>(std::max<std::size_t>(used, 1));
            // Ties go to the stronger penalty; the grid is scanned in the given order.
            if (acc > best || (acc == best && weight > fr.l1_weight)) {
                best = acc;
                fr.l1_weight = weight;
            }
        }

        const auto fit = fit_l1_logistic(Xtr, ytr, fr.l1_weight);
        const Matrix Xva = stdz.apply(records, samples, va);
        std::size_t correct = 0;
        std::map<std::string, std::pair<int, int>> votes;  // subject -> (positive votes, total)
        for (std::size_t r = 0; r < va.size(); ++r) {
            const auto& s = samples[va[r]];
            const int p = predict(fit, std::span<const double>(Xva.values).subspan(r * Xva.cols, Xva.cols));
            correct += p == s.label;
            auto& v = votes[s.subject];
            v.first += p;
            v.second += 1;
            fold_predictions[f].push_back({s.subject, records[s.record].trial_id, f, s.label, p});
        }
        std::size_t subj_correct = 0;
        for (const auto& [subj, v] : votes) {
            // Even splits count as the positive class.
            const int majority = 2 * v.first >= v.second ? 1 : 0;
            subj_correct += majority == labels.at(subj);
        }
        fr.train_trials = tr.size();
        fr.validation_trials = va.size();
        fr.accuracy = va.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(va.size());
        fr.subject_accuracy = votes.empty() ? 0.0 : static_cast<double>(subj_correct) / static_cast<double>(votes.size());
    });

    for (std::size_t f = 0; f < config.outer_k; ++f) {
        result.predictions.insert(result.predictions.end(), fold_predictions[f].begin(), fold_predictions[f].end());
        result.warnings.insert(result.warnings.end(), fold_warnings[f].begin(), fold_warnings[f].end());
    }
    double sum = 0.0, ssum = 0.0, sq = 0.0;
    result.max = 0.0;
    for (const auto& fr : result.folds) {
        sum += fr.accuracy;
        ssum += fr.subject_accuracy;
        result.max = std::max(result.max, fr.accuracy);
    }
    const double k = static_cast<double>(result.folds.size());
    result.mean = sum / k;
    result.subject_mean = ssum / k;
    for (const auto& fr : result.folds) sq += (fr.accuracy - result.mean) * (fr.accuracy - result.mean);
    result.std = std::sqrt(sq / k);
    return result;
}

std::vector<double> permutation_control(std::span<const EmbeddingRecord> records,
                                        std::span<const data::Subject> subjects, Task task, const ProbeConfig& config,
                                        std::uint64_t seed) {
    std::set<std::string> present;
    for (const auto& r : records) present.insert(r.subject_id);
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const auto& s : subjects) {
        if (!present.count(s.subject_id)) continue;
        if (auto l = task_label(task, s)) {
            ids.push_back(s.subject_id);
            labels.push_back(*l);
        }
    }
    std::vector<double> out;
    for (std::size_t p = 0; p < config.permutation_seeds; ++p) {
        const std::uint64_t perm_seed = mix_seed(mix_seed(seed, "permutation"), p);
        Rng rng(perm_seed);
        auto shuffled = labels;
        rng.shuffle(std::span<int>(shuffled));
        std::map<std::string, int> override_labels;
        for (std::size_t i = 0; i < ids.size(); ++i) override_labels[ids[i]] = shuffled[i];
        out.push_back(nested_cv_probe(records, subjects, task, config, perm_seed, &override_labels).mean);
    }
    return out;
}

std::string report_csv(std::span<const TaskReport> reports) {
    std::string s = "task,fold,accuracy,subject_accuracy,l1_weight,train_trials,validation_trials,note\n";
    auto num = [](double v) { return io::format_number(v); };
    for (const auto& rep : reports) {
        const std::string task(to_string(rep.task));
        if (!rep.result) {
            s += task + ",skipped,,,,,," + rep.skipped_reason + '\n';
            continue;
        }
        const auto& r = *rep.result;
        for (const auto& f : r.folds) {
            s += task + ',' + std::to_string(f.fold) + ',' + num(f.accuracy) + ',' + num(f.subject_accuracy) + ',' +
                 num(f.l1_weight) + ',' + std::to_string(f.train_trials) + ',' + std::to_string(f.validation_trials) +
                 ",\n";
        }
        s += task + ",mean," + num(r.mean) + ',' + num(r.subject_mean) + ",,,,\n";
        s += task + ",std," + num(r.std) + ",,,,,\n";
        s += task + ",max," + num(r.max) + ",,,,,\n";
        if (!rep.permutation.empty()) {
            double m = 0.0;
            for (double v : rep.permutation) m += v;
            m /= static_cast<double>(rep.permutation.size());
            s += task + ",permutation_mean," + num(m) + ",,,,," + std::to_string(rep.permutation.size()) +
                 " label shuffles\n";
        }
    }
    return s;
}

std::string predictions_csv(std::span<const TaskReport> reports) {
    std::string s = "task,fold,subject_id,trial_id,label,predicted\n";
    for (const auto& rep : reports) {
        if (!rep.result) continue;
        for (const auto& p : rep.result->predictions) {
            s += std::string(to_string(rep.task)) + ',' + std::to_string(p.fold) + ',' + p.subject_id + ',' +
                 p.trial_id + ',' + std::to_string(p.label) + ',' + std::to_string(p.predicted) + '\n';
        }
    }
    return s;
}

}  // namespace gaitssl::probe
