// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "gaitssl/errors.hpp"
#include "gaitssl/probe.hpp"
#include "gaitssl/synthetic.hpp"
#include "gaitssl/training.hpp"
#include "oracles.hpp"

using namespace gaitssl;
using probe::Matrix;

namespace {

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
    Matrix m{rows.size(), rows[0].size(), {}};
    for (const auto& r : rows) m.values.insert(m.values.end(), r.begin(), r.end());
    return m;
}

/// Noisy linear labels, so the unpenalized optimum is finite.
void noisy_problem(std::size_t n, std::size_t d, std::uint64_t seed, std::vector<std::vector<double>>& X,
                   std::vector<int>& y) {
    Rng rng(seed);
    std::vector<double> w(d);
    for (auto& v : w) v = rng.normal();
    X.assign(n, std::vector<double>(d));
    y.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        double m = 0.3;
        for (std::size_t j = 0; j < d; ++j) {
            X[i][j] = rng.normal();
            m += w[j] * X[i][j];
        }
        y[i] = rng.uniform() < 1.0 / (1.0 + std::exp(-m)) ? 1 : 0;
    }
    y[0] = 0;
    y[1] = 1;
}

/// Subjects with a few trials each; `signal` shifts positive-class embeddings.
struct Cohort {
    std::vector<data::Subject> subjects;
    std::vector<probe::EmbeddingRecord> records;
};

Cohort embedding_cohort(std::size_t per_class, double signal, std::uint64_t seed) {
    Cohort c;
    Rng rng(seed);
    auto add = [&](const std::string& id, data::Diagnosis d, data::Laterality l) {
        c.subjects.push_back({id, d, l});
        const double shift = d == data::Diagnosis::control ? 0.0 : signal;
        const double side = l == data::Laterality::right ? signal : 0.0;
        for (int t = 0; t < 3; ++t) {
            probe::EmbeddingRecord r;
            r.subject_id = id;
            r.trial_id = id + "_t" + std::to_string(t);
            for (int k = 0; k < 6; ++k) r.e.push_back(static_cast<float>(rng.normal() + (k == 0 ? shift : 0.0) + (k == 1 ? side : 0.0)));
            r.z = {1.0f, 0.0f};
            c.records.push_back(r);
        }
    };
    for (std::size_t i = 0; i < per_class; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "control_%03zu", i);
        add(buf, data::Diagnosis::control, data::Laterality::none);
        std::snprintf(buf, sizeof buf, "stroke_%03zu", i);
        add(buf, data::Diagnosis::stroke, i % 2 ? data::Laterality::left : data::Laterality::right);
        std::snprintf(buf, sizeof buf, "prosthesis_%03zu", i);
        add(buf, data::Diagnosis::prosthesis, i % 2 ? data::Laterality::right : data::Laterality::left);
    }
    std::sort(c.subjects.begin(), c.subjects.end(),
              [](const auto& a, const auto& b) { return a.subject_id < b.subject_id; });
    return c;
}

}  // namespace

TEST(L1Logistic, HeavyPenaltyGivesLogOdds) {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    noisy_problem(30, 4, 1, X, y);
    const auto fit = probe::fit_l1_logistic(to_matrix(X), y, 1e3);
    for (double w : fit.w) EXPECT_EQ(w, 0.0);
    const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
    EXPECT_NEAR(fit.b, std::log(pos / (30 - pos)), 1e-4);
}

TEST(L1Logistic, SeparableOneDimensional) {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    for (int i = 0; i < 20; ++i) {
        X.push_back({i < 10 ? -1.0 - i * 0.1 : 1.0 + i * 0.1});
        y.push_back(i < 10 ? 0 : 1);
    }
    const auto fit = probe::fit_l1_logistic(to_matrix(X), y, 1e-6);
    for (std::size_t i = 0; i < X.size(); ++i) EXPECT_EQ(probe::predict(fit, X[i]), y[i]);
}

TEST(L1Logistic, MatchesSplitVariableOracle) {
    for (std::uint64_t seed : {2u, 3u, 4u}) {
        std::vector<std::vector<double>> X;
        std::vector<int> y;
        noisy_problem(20, 5, seed, X, y);
        for (double lambda : {1e-3, 1e-2, 5e-2}) {
            const auto fit = probe::fit_l1_logistic(to_matrix(X), y, lambda);
            const double ref = oracle::l1_logistic_split(X, y, lambda, 400000, 0.05);
            EXPECT_NEAR(fit.objective, ref, 1e-6) << "seed " << seed << " lambda " << lambda;
            EXPECT_NEAR(probe::l1_logistic_objective(to_matrix(X), y, fit.w, fit.b, lambda), fit.objective, 1e-12);
        }
    }
}

TEST(L1Logistic, SparsityNonIncreasingAlongGrid) {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    noisy_problem(60, 12, 5, X, y);
    std::size_t prev = 13;
    for (double lambda : probe::log_grid(-4, -0.5, 12)) {
        const auto fit = probe::fit_l1_logistic(to_matrix(X), y, lambda);
        const auto nnz = static_cast<std::size_t>(std::count_if(fit.w.begin(), fit.w.end(), [](double w) { return w != 0.0; }));
        EXPECT_LE(nnz, prev) << lambda;
        prev = nnz;
    }
}

TEST(L1Logistic, DecisionInvariantToPositiveRescale) {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    noisy_problem(40, 3, 6, X, y);
    const auto fit = probe::fit_l1_logistic(to_matrix(X), y, 1e-3);
    for (double c : {0.01, 3.0, 1e4}) {
        auto scaled = fit;
        for (auto& w : scaled.w) w *= c;
        scaled.b *= c;
        for (const auto& x : X) EXPECT_EQ(probe::predict(fit, x), probe::predict(scaled, x));
    }
}

TEST(L1Logistic, SingleClassIsDataError) {
    const std::vector<int> y{1, 1, 1};
    EXPECT_THROW(probe::fit_l1_logistic(to_matrix({{1.0}, {2.0}, {3.0}}), y, 1e-3), DataError);
}

TEST(Probe, GridIsSevenLogSpacedPoints) {
    const auto g = probe::log_grid(-6, -3, 7);
    ASSERT_EQ(g.size(), 7u);
    EXPECT_DOUBLE_EQ(g.front(), 1e-6);
    EXPECT_DOUBLE_EQ(g.back(), 1e-3);
    for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(g[i], probe::ProbeConfig{}.l1_grid[i], 1e-18);
}

TEST(Probe, TaskInclusionAndLabels) {
    using D = data::Diagnosis;
    using L = data::Laterality;
    const data::Subject ctl{"c", D::control, L::none}, str{"s", D::stroke, L::right}, pro{"p", D::prosthesis, L::left},
        oth{"o", D::other, L::none};
    EXPECT_EQ(probe::task_label(probe::Task::stroke_vs_control, ctl), 0);
    EXPECT_EQ(probe::task_label(probe::Task::stroke_vs_control, str), 1);
    EXPECT_FALSE(probe::task_label(probe::Task::stroke_vs_control, pro).has_value());
    EXPECT_EQ(probe::task_label(probe::Task::llpu_vs_control, pro), 1);
    EXPECT_FALSE(probe::task_label(probe::Task::llpu_vs_control, oth).has_value());
    EXPECT_EQ(probe::task_label(probe::Task::laterality, str), 1);
    EXPECT_EQ(probe::task_label(probe::Task::laterality, pro), 0);
    EXPECT_FALSE(probe::task_label(probe::Task::laterality, ctl).has_value());
}

TEST(Probe, SeparableEmbeddingsScorePerfectly) {
    const auto c = embedding_cohort(9, 6.0, 1);
    probe::ProbeConfig cfg;
    for (auto task : probe::kAllTasks) {
        const auto r = probe::nested_cv_probe(c.records, c.subjects, task, cfg, 7);
        EXPECT_EQ(r.folds.size(), 3u);
        EXPECT_DOUBLE_EQ(r.mean, 1.0) << probe::to_string(task);
        EXPECT_DOUBLE_EQ(r.subject_mean, 1.0);
    }
}

TEST(Probe, AccuraciesInRangeAndDeterministic) {
    const auto c = embedding_cohort(8, 0.5, 2);
    probe::ProbeConfig cfg;
    cfg.threads = 2;
    const auto a = probe::nested_cv_probe(c.records, c.subjects, probe::Task::stroke_vs_control, cfg, 3);
    cfg.threads = 1;
    const auto b = probe::nested_cv_probe(c.records, c.subjects, probe::Task::stroke_vs_control, cfg, 3);
    EXPECT_EQ(a.mean, b.mean);
    for (const auto& f : a.folds) {
        EXPECT_GE(f.accuracy, 0.0);
        EXPECT_LE(f.accuracy, 1.0);
        EXPECT_TRUE(std::find(cfg.l1_grid.begin(), cfg.l1_grid.end(), f.l1_weight) != cfg.l1_grid.end());
    }
    EXPECT_GE(a.max, a.mean);
}

// No subject on both sides of any split, at either CV level.
TEST(Probe, SubjectDisjointAtBothLevels) {
    const auto c = embedding_cohort(8, 1.0, 3);
    probe::ProbeConfig cfg;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto r = probe::nested_cv_probe(c.records, c.subjects, probe::Task::llpu_vs_control, cfg, seed);
        std::set<std::string> validated;
        for (const auto& f : r.folds) {
            const std::set<std::string> tr(f.train_subjects.begin(), f.train_subjects.end());
            for (const auto& v : f.validation_subjects) {
                EXPECT_EQ(tr.count(v), 0u);
                EXPECT_TRUE(validated.insert(v).second) << "validated twice: " << v;
            }
            for (const auto& [itr, iva] : f.inner_splits) {
                const std::set<std::string> inner(itr.begin(), itr.end());
                for (const auto& v : iva) {
                    EXPECT_EQ(inner.count(v), 0u);
                    EXPECT_EQ(tr.count(v), 1u) << "inner validation subject outside the outer training set";
                }
            }
        }
        for (const auto& p : r.predictions) {
            const auto& f = r.folds[p.fold];
            EXPECT_TRUE(std::find(f.validation_subjects.begin(), f.validation_subjects.end(), p.subject_id) !=
                        f.validation_subjects.end());
        }
    }
}

TEST(Probe, PermutationControlHasOneEntryPerSeed) {
    const auto c = embedding_cohort(6, 1.0, 4);
    probe::ProbeConfig cfg;
    cfg.permutation_seeds = 4;
    const auto perm = probe::permutation_control(c.records, c.subjects, probe::Task::stroke_vs_control, cfg, 1);
    EXPECT_EQ(perm.size(), 4u);
    for (double v : perm) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(Probe, MissingClassIsDataError) {
    auto c = embedding_cohort(6, 1.0, 5);
    std::erase_if(c.records, [](const auto& r) { return r.subject_id.starts_with("prosthesis"); });
    EXPECT_THROW(probe::nested_cv_probe(c.records, c.subjects, probe::Task::llpu_vs_control, probe::ProbeConfig{}, 1),
                 DataError);
}

TEST(Embeddings, CsvRoundTrip) {
    const auto c = embedding_cohort(2, 1.0, 6);
    const auto text = probe::embeddings_csv(c.records);
    EXPECT_EQ(text.substr(0, text.find('\n')), "subject_id,trial_id,session_day,e_0,e_1,e_2,e_3,e_4,e_5,z_0,z_1");
    EXPECT_EQ(probe::parse_embeddings_csv(text, "mem"), c.records);
    EXPECT_THROW(probe::parse_embeddings_csv("bad header\n", "mem"), DataError);
}

TEST(Embeddings, EmbedDatasetSkipsShortTrialsAndIsDeterministic) {
    synth::CohortSpec spec;
    spec.n_control = 2;
    spec.n_stroke = 2;
    spec.length_min = 95;
    spec.length_max = 110;
    auto ds = synth::generate_cohort(spec);
    training::TrainConfig t;
    t.epochs = 1;
    t.batch_trials = 4;
    model::ModelConfig m;
    m.hidden_dim = 16;
    m.num_layers = 1;
    const auto ckpt = training::train(ds, m, t).checkpoint;
    ds.trials[2].frames = ds.trials[2].frames.slice_rows(0, 89);
    const auto a = probe::embed_dataset(ckpt, ds, 3);
    const auto b = probe::embed_dataset(ckpt, ds, 3);
    const auto other_batch = probe::embed_dataset(ckpt, ds, 32);
    EXPECT_EQ(a.records.size(), ds.trials.size() - 1);
    ASSERT_EQ(a.skipped.size(), 1u);
    EXPECT_EQ(a.skipped[0].trial_id, ds.trials[2].trial_id);
    EXPECT_EQ(probe::embeddings_csv(a.records), probe::embeddings_csv(b.records));
    ASSERT_EQ(other_batch.records.size(), a.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i)
        for (std::size_t k = 0; k < a.records[i].e.size(); ++k)
            EXPECT_NEAR(a.records[i].e[k], other_batch.records[i].e[k], 1e-5);
    for (const auto& r : a.records) {
        double n = 0;
        for (float v : r.z) n += double(v) * v;
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
        EXPECT_EQ(r.e.size(), 16u);
    }
}
