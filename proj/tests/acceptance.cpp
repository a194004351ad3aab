// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit
// when any criterion fails. Criteria 7 and 9 reuse the models trained by 6 and 8.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gaitssl/biomarker.hpp"
#include "gaitssl/checkpoint.hpp"
#include "gaitssl/grad_check.hpp"
#include "gaitssl/io.hpp"
#include "gaitssl/losses.hpp"
#include "gaitssl/model.hpp"
#include "gaitssl/probe.hpp"
#include "gaitssl/synthetic.hpp"
#include "gaitssl/training.hpp"
#include "oracles.hpp"

using namespace gaitssl;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(4);
    s << v;
    return s.str();
}

model::ModelConfig tiny(model::Positional pos, bool cls) {
    model::ModelConfig c;
    c.hidden_dim = 8;
    c.num_layers = 1;
    c.num_heads = 2;
    c.seq_len = 6;
    c.input_dim = 2;
    c.positional = pos;
    c.use_cls_token = cls;
    return c;
}

data::FrameMatrix random_window(const model::ModelConfig& c, Rng& rng) {
    data::FrameMatrix m(c.seq_len, c.input_dim);
    for (auto& v : m.values()) v = rng.normal();
    return m;
}

std::string strip_wall_time(const std::string& ndjson) {
    std::string out;
    for (const auto& line : io::split(ndjson, '\n')) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        j.erase("wall_time");
        out += j.dump() + "\n";
    }
    return out;
}

// ---- 1 ---------------------------------------------------------------------

Outcome gradient_fidelity() {
    Stopwatch clock;
    const auto c = tiny(model::Positional::learned, true);
    Rng init(1), data_rng(2);
    const auto params = model::init_params(c, init).cast<double>();
    std::vector<data::FrameMatrix> inputs, targets;
    for (int i = 0; i < 4; ++i) {
        data::FrameMatrix full(c.seq_len + 1, c.input_dim);
        for (auto& v : full.values()) v = data_rng.normal();
        inputs.push_back(full.slice_rows(0, c.seq_len));
        targets.push_back(full.slice_rows(1, c.seq_len - 1));
    }
    auto eval = [&](const ParamSet<double>& p, bool grads) {
        Rng rng(3);
        return training::batch_objective<double>(p, c, inputs, targets, 1.0, model::Mode::train, &rng, grads);
    };
    GradCheckOptions o;
    o.exhaustive = true;
    o.step = 1e-5;
    const auto r = grad_check([&](const ParamSet<double>& p) { return eval(p, false).losses.total; },
                              [&](const ParamSet<double>& p) { return eval(p, true).grads; }, params, o);
    const double t = clock.seconds();
    const bool all = r.coordinates_checked == params.total_size();
    return {all && r.max_rel_error < 1e-5 && t < 60,
            "max rel err " + fmt(r.max_rel_error) + " at " + r.worst_array + "[" + std::to_string(r.worst_index) +
                "] (analytic " + fmt(r.worst_analytic) + ", numeric " + fmt(r.worst_numeric) + "), " +
                std::to_string(r.coordinates_checked) + " coordinates, " + fmt(t) + " s"};
}

// ---- 2 ---------------------------------------------------------------------

Outcome loss_oracles() {
    Rng rng(1);
    double worst_c = 0;
    for (int k = 0; k < 20; ++k) {
        std::vector<double> z(8 * 16);
        for (auto& v : z) v = rng.normal();
        ad::Tape<double> tape;
        const auto zn = ad::l2_normalize<double>(tape.constant({8, 16}, z), 1);
        const double got = losses::contrastive<double>(zn, 0.1).item();
        worst_c = std::max(worst_c, std::abs(got - oracle::contrastive(z, 8, 16, 0.1)));
    }

    const std::size_t B = 4, T = 90, J = 9;
    std::vector<double> preds(B * T * J), p_flat, t_flat;
    for (auto& v : preds) v = rng.normal();
    std::vector<data::FrameMatrix> targets;
    for (std::size_t b = 0; b < B; ++b) {
        data::FrameMatrix t(T - 1, J);
        for (auto& v : t.values()) v = rng.normal();
        for (std::size_t r = 0; r + 1 < T; ++r)
            for (std::size_t j = 0; j < J; ++j) {
                p_flat.push_back(preds[(b * T + r) * J + j]);
                t_flat.push_back(t(r, j));
            }
        targets.push_back(std::move(t));
    }
    ad::Tape<double> tape;
    const double pred = losses::prediction<double>(tape.constant({B * T, J}, preds), targets).item();
    const double err_p = std::abs(pred - oracle::prediction_mse(p_flat, t_flat));

    std::vector<double> pair(2 * 16);
    for (auto& v : pair) v = rng.normal();
    ad::Tape<double> t1;
    const double single = losses::contrastive<double>(ad::l2_normalize<double>(t1.constant({2, 16}, pair), 1), 0.1).item();

    return {worst_c < 1e-6 && err_p < 1e-9 && single == 0.0,
            "contrastive err " + fmt(worst_c) + ", prediction err " + fmt(err_p) + ", N=1 loss " + fmt(single)};
}

// ---- 3 ---------------------------------------------------------------------

Outcome causality() {
    std::size_t failures = 0;
    int cases = 0;
    for (auto pos : {model::Positional::learned, model::Positional::rotary}) {
        model::ModelConfig c;
        c.hidden_dim = 32;
        c.num_layers = 2;
        c.positional = pos;
        Rng init(6);
        const auto p = model::init_params(c, init);
        Rng rng(pos == model::Positional::learned ? 8 : 9);
        for (int k = 0; k < 25; ++k, ++cases) {
            const auto w = random_window(c, rng);
            const std::size_t t = rng.uniform_int(c.seq_len - 1);
            auto w2 = w;
            for (std::size_t r = t + 1; r < c.seq_len; ++r)
                for (std::size_t j = 0; j < c.input_dim; ++j) w2(r, j) += rng.normal(0.0, 5.0);
            const auto a = model::forward(p, c, w, model::Mode::eval, nullptr);
            const auto b = model::forward(p, c, w2, model::Mode::eval, nullptr);
            const std::size_t n = (t + 1) * c.hidden_dim;
            if (std::memcmp(a.states.data(), b.states.data(), n * sizeof(float)) != 0) ++failures;
        }
    }
    return {failures == 0, std::to_string(cases) + " cases, " + std::to_string(failures) + " differ"};
}

// ---- 4 ---------------------------------------------------------------------

Outcome rotary() {
    Rng rng(3);
    double worst = 0;
    for (int k = 0; k < 100; ++k) {
        std::vector<double> q(16), key(16);
        for (auto& x : q) x = rng.normal();
        for (auto& x : key) x = rng.normal();
        const std::size_t m = rng.uniform_int(200), n = rng.uniform_int(200), s = rng.uniform_int(200);
        auto dot_at = [&](std::size_t pm, std::size_t pn) {
            auto a = q, b = key;
            model::apply_rotary(a, 16, pm);
            model::apply_rotary(b, 16, pn);
            double d = 0;
            for (std::size_t i = 0; i < 16; ++i) d += a[i] * b[i];
            return d;
        };
        worst = std::max(worst, std::abs(dot_at(m, n) - dot_at(m + s, n + s)));
    }
    std::vector<double> v(16);
    for (auto& x : v) x = rng.normal();
    auto r = v;
    model::apply_rotary(r, 16, 0);
    return {worst < 1e-5 && r == v, "max shift err " + fmt(worst) + (r == v ? ", position 0 identity" : ", position 0 moved")};
}

// ---- 5 ---------------------------------------------------------------------

Outcome fcm_statistics() {
    const std::size_t n = 100000, H = 2;
    Rng rng(7);
    std::vector<double> tokens(n * H);
    for (auto& x : tokens) x = rng.normal() + 3.0;
    const auto mask = model::fcm_mask(tokens, H, 0.2, rng);
    std::size_t masked = 0;
    for (auto m : mask) masked += m;
    const double frac = static_cast<double>(masked) / static_cast<double>(n);
    const double sigma = std::sqrt(0.2 * 0.8 / static_cast<double>(n));

    auto c = tiny(model::Positional::learned, true);
    c.seq_len = 40;
    c.fcm_mask_prob = 0.2;
    Rng init(2), data_rng(3), fwd(9);
    const auto p = model::init_params(c, init);
    std::vector<data::FrameMatrix> windows, targets;
    for (int i = 0; i < 8; ++i) {
        windows.push_back(random_window(c, data_rng));
        targets.push_back(windows.back().slice_rows(1, c.seq_len - 1));
    }
    const auto before = targets;
    ad::Tape<double> tape;
    const auto bound = model::bind_params(tape, p.cast<double>(), false);
    const auto out = model::forward_batch<double>(tape, bound, c, windows, model::Mode::train, &fwd);
    std::size_t forward_masked = 0;
    for (const auto& a : out.augmentations)
        for (auto m : a.masked) forward_masked += m;
    bool untouched = targets == before;
    for (std::size_t b = 0; b < windows.size(); ++b)
        for (std::size_t t = 0; t + 1 < c.seq_len; ++t)
            for (std::size_t j = 0; j < c.input_dim; ++j) untouched = untouched && targets[b](t, j) == windows[b](t + 1, j);

    return {std::abs(frac - 0.2) <= 3 * sigma && untouched && forward_masked > 0,
            "masked fraction " + fmt(frac) + " (3 sigma " + fmt(3 * sigma) + "), targets " +
                (untouched ? "untouched" : "modified")};
}

// ---- 6 / 7 -----------------------------------------------------------------

struct SmokeRun {
    data::Dataset dataset;
    Checkpoint checkpoint;
};
std::optional<SmokeRun> g_smoke;

Outcome training_smoke(const fs::path& work) {
    synth::CohortSpec spec;
    spec.n_control = 6;
    spec.n_stroke = 6;
    spec.severity_min = spec.severity_max = 0.7;
    spec.trials_per_session = 3;
    spec.length_min = spec.length_max = 150;
    spec.seed = 601;
    auto ds = synth::generate_cohort(spec);

    model::ModelConfig mc;
    mc.hidden_dim = 32;
    mc.num_layers = 2;
    training::TrainConfig tc;
    tc.epochs = 200;
    tc.batch_trials = 8;
    tc.lambda = 1.0;
    tc.seed = 602;
    training::TrainOutputs out;
    out.dir = work / "smoke";
    Stopwatch clock;
    auto r = training::train(ds, mc, tc, out);
    const double t = clock.seconds();

    const auto& m = r.metrics;
    const double first = m.front().contrastive_loss, last = m.back().contrastive_loss;
    std::size_t comparisons = 0, decreases = 0;
    for (std::size_t e = 20; e < m.size(); ++e) {
        ++comparisons;
        decreases += m[e].prediction_loss < m[e - 1].prediction_loss;
    }
    const double frac = static_cast<double>(decreases) / static_cast<double>(comparisons);
    g_smoke = SmokeRun{std::move(ds), std::move(r.checkpoint)};
    return {last < 0.5 * first && frac >= 0.8 && t < 600,
            "contrastive " + fmt(first) + " -> " + fmt(last) + ", prediction decreasing in " + fmt(100 * frac) +
                "% of " + std::to_string(comparisons) + " comparisons, " + fmt(t) + " s"};
}

Outcome embedding_structure() {
    if (!g_smoke) return {false, "criterion 6 model unavailable"};
    const auto& ck = g_smoke->checkpoint;
    const auto& ds = g_smoke->dataset;
    // Fresh crops drawn from a stream the training run never used.
    Rng rng(mix_seed(7007, "heldout-crops"));
    std::vector<probe::EmbeddingRecord> records;
    for (const auto& trial : ds.trials) {
        const auto [a, b] = data::sample_positive_pair(trial, rng);
        int k = 0;
        for (const auto* w : {&a, &b}) {
            const auto f = model::forward(ck.params, ck.config, ck.norm->standardize(w->data), model::Mode::eval, nullptr);
            records.push_back({trial.subject_id, trial.trial_id + "#" + std::to_string(k++), trial.session_day, f.pooled,
                               f.projected});
        }
    }
    const auto m = biomarker::similarity_matrix(records, ds.subjects);
    const auto bc = biomarker::block_contrast(m);
    const double margin = bc.within_subject - bc.between_subject;
    return {margin >= 0.2, "within " + fmt(bc.within_subject) + ", between " + fmt(bc.between_subject) +
                               ", margin " + fmt(margin)};
}

// ---- 8 / 9 -----------------------------------------------------------------

std::optional<Checkpoint> g_desk;

Outcome probe_accuracy(const fs::path& work) {
    synth::CohortSpec spec;
    spec.n_control = 18;
    spec.n_stroke = 12;
    spec.n_prosthesis = 12;
    spec.severity_min = 0.5;
    spec.seed = 3;
    const auto ds = synth::generate_cohort(spec);

    model::ModelConfig mc;  // H=64, L=4
    training::TrainConfig tc;
    tc.epochs = 500;
    tc.batch_trials = 32;
    tc.seed = 3;
    training::TrainOutputs out;
    out.dir = work / "desk";
    Stopwatch clock;
    auto r = training::train(ds, mc, tc, out);
    const auto emb = probe::embed_dataset(r.checkpoint, ds);
    probe::ProbeConfig pc;
    std::string detail;
    bool ok = true;
    for (auto [task, floor] : {std::pair{probe::Task::stroke_vs_control, 0.9}, {probe::Task::llpu_vs_control, 0.8}}) {
        const auto res = probe::nested_cv_probe(emb.records, ds.subjects, task, pc, 3);
        const auto perm = probe::permutation_control(emb.records, ds.subjects, task, pc, 3);
        double pm = 0;
        for (double v : perm) pm += v;
        pm /= static_cast<double>(perm.size());
        ok = ok && res.mean >= floor && pm >= 0.35 && pm <= 0.65;
        detail += std::string(probe::to_string(task)) + " " + fmt(res.mean) + " (perm " + fmt(pm) + "), ";
    }
    const double t = clock.seconds();
    g_desk = std::move(r.checkpoint);
    return {ok && t < 1800, detail + fmt(t) + " s"};
}

Outcome biomarker_trend() {
    std::string detail;
    bool ok = true;
    if (!g_desk) {
        ok = false;
        detail = "criterion 8 model unavailable; ";
    } else {
        synth::CohortSpec spec;
        spec.n_control = 8;
        spec.n_stroke = 8;
        spec.severity_min = spec.severity_max = 0.9;
        spec.recovery = true;
        spec.recovery_final_severity = 0.1;
        spec.sessions_per_subject = 4;
        spec.trials_per_session = 3;
        spec.seed = 909;
        const auto ds = synth::generate_cohort(spec);
        const auto emb = probe::embed_dataset(*g_desk, ds);
        const auto ref = biomarker::control_reference(emb.records, ds.subjects, biomarker::ReferenceMode::per_trial);
        std::size_t positive = 0, stroke = 0;
        for (const auto& s : ds.subjects) {
            if (s.diagnosis != data::Diagnosis::stroke) continue;
            ++stroke;
            const auto series = biomarker::response_series(emb.records, ref, s.subject_id);
            std::vector<double> days, sims;
            for (const auto& p : series.points) {
                days.push_back(p.session_day);
                sims.push_back(p.median_similarity);
            }
            const double rho = biomarker::spearman(days, sims);
            positive += rho > 0;
        }
        const double frac = static_cast<double>(positive) / static_cast<double>(stroke);
        ok = frac >= 0.8;
        detail = std::to_string(positive) + "/" + std::to_string(stroke) + " positive trends; ";
    }

    const std::vector<std::vector<double>> square{{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
    const auto sq = biomarker::geometric_median(square);
    const double sq_err = std::max(std::abs(sq.point[0]), std::abs(sq.point[1]));
    Rng rng(99);
    double grid_gap = 0;
    for (int k = 0; k < 20; ++k) {
        std::vector<std::vector<double>> pts(3 + rng.uniform_int(10));
        for (auto& p : pts) p = {rng.normal(0, 2), rng.normal(0, 2)};
        const auto med = biomarker::geometric_median(pts);
        const auto grid = oracle::grid_median_2d(pts);
        grid_gap = std::max(grid_gap, std::abs(biomarker::sum_of_distances(pts, med.point) -
                                               biomarker::sum_of_distances(pts, grid)));
    }
    ok = ok && sq_err <= 1e-6 && grid_gap <= 1e-3;
    return {ok, detail + "square err " + fmt(sq_err) + ", grid objective gap " + fmt(grid_gap)};
}

// ---- 10 --------------------------------------------------------------------

Outcome reproducibility(const fs::path& work) {
    synth::CohortSpec spec;
    spec.n_control = 6;
    spec.n_stroke = 6;
    spec.n_prosthesis = 6;
    spec.trials_per_session = 2;
    spec.length_min = 100;
    spec.length_max = 160;
    spec.seed = 1010;
    const auto ds = synth::generate_cohort(spec);
    model::ModelConfig mc;
    mc.hidden_dim = 16;
    mc.num_layers = 1;
    training::TrainConfig tc;
    tc.epochs = 3;
    tc.batch_trials = 8;
    tc.seed = 1011;
    tc.checkpoint_every = 2;

    std::vector<std::string> metrics, ckpts, embeddings;
    for (const char* name : {"repro_a", "repro_b"}) {
        training::TrainOutputs out;
        out.dir = work / name;
        fs::remove_all(*out.dir);
        const auto r = training::train(ds, mc, tc, out);
        metrics.push_back(strip_wall_time(io::read_text_file(*out.dir / "metrics.ndjson")));
        ckpts.push_back(io::read_text_file(*out.dir / "model.ckpt"));
        probe::save_embeddings(*out.dir / "embeddings.csv", probe::embed_dataset(r.checkpoint, ds).records);
        embeddings.push_back(io::read_text_file(*out.dir / "embeddings.csv"));
    }
    const bool same_runs = metrics[0] == metrics[1] && ckpts[0] == ckpts[1] && embeddings[0] == embeddings[1];

    const auto loaded = load_checkpoint(work / "repro_a" / "model.ckpt");
    const auto bytes = serialize_checkpoint(loaded);
    const bool round_trip = std::string(bytes.begin(), bytes.end()) == ckpts[0];

    const auto records = probe::load_embeddings(work / "repro_a" / "embeddings.csv");
    probe::ProbeConfig pc;
    pc.l1_grid = {1e-4, 1e-3};
    std::size_t violations = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto r = probe::nested_cv_probe(records, ds.subjects, probe::Task::llpu_vs_control, pc, seed);
        for (const auto& f : r.folds) {
            const std::set<std::string> tr(f.train_subjects.begin(), f.train_subjects.end());
            for (const auto& v : f.validation_subjects) violations += tr.count(v);
            for (const auto& [itr, iva] : f.inner_splits) {
                const std::set<std::string> inner(itr.begin(), itr.end());
                for (const auto& v : iva) violations += inner.count(v) + (tr.count(v) == 0);
            }
        }
    }
    return {same_runs && round_trip && violations == 0,
            std::string("runs ") + (same_runs ? "identical" : "differ") + ", round trip " +
                (round_trip ? "exact" : "differs") + ", " + std::to_string(violations) +
                " subject leaks over 100 seeds"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gaitssl acceptance run"};
    fs::path work = fs::temp_directory_path() / "gaitssl_acceptance";
    std::vector<int> only;
    app.add_option("--work-dir", work, "scratch directory for training outputs");
    app.add_option("--only", only, "run a subset of criteria (dependencies are not run implicitly)");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient fidelity", gradient_fidelity},
        {"loss oracles", loss_oracles},
        {"causality", causality},
        {"rotary shift identity", rotary},
        {"fcm statistics", fcm_statistics},
        {"training smoke", [&] { return training_smoke(work); }},
        {"embedding structure", embedding_structure},
        {"probe accuracy", [&] { return probe_accuracy(work); }},
        {"biomarker trend", biomarker_trend},
        {"reproducibility and cv hygiene", [&] { return reproducibility(work); }},
    };

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << "criterion " << id << " " << criteria[i].first << ": " << (o.pass ? "PASS" : "FAIL") << " ("
                  << o.detail << ")" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
