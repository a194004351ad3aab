// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gaitssl/biomarker.hpp"
#include "gaitssl/checkpoint.hpp"
#include "gaitssl/config.hpp"
#include "gaitssl/data.hpp"
#include "gaitssl/errors.hpp"
#include "gaitssl/io.hpp"
#include "gaitssl/probe.hpp"
#include "gaitssl/synthetic.hpp"
#include "gaitssl/training.hpp"

namespace gaitssl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Flags {
    std::string command;
    std::string config_path;
    std::string run_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    bool noiseless = false;
    std::string dataset;
    std::string pretrain_dataset;
    std::string checkpoint;
    std::string embeddings;
};

std::string fnv_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Config file, then environment, then flags.
config::RunConfig resolve_config(const Flags& f) {
    json j = json::object();
    std::string origin = "<defaults>";
    if (!f.config_path.empty()) {
        origin = f.config_path;
        try {
            j = json::parse(io::read_text_file(f.config_path));
        } catch (const json::parse_error& e) {
            throw ConfigError("cannot parse " + f.config_path + ": " + e.what());
        } catch (const DataError& e) {
            throw ConfigError(e.what());
        }
        if (!j.is_object()) throw ConfigError("expected an object at / in " + f.config_path);
    }
    if (const char* env = std::getenv("GAITSSL_RUN_DIR"); env && *env) j["run_dir"] = env;
    if (const char* env = std::getenv("GAITSSL_THREADS"); env && *env) {
        try {
            j["threads"] = std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("GAITSSL_THREADS is not a positive integer: '") + env + "'");
        }
    }
    if (!f.run_dir.empty()) j["run_dir"] = f.run_dir;
    if (f.threads) j["threads"] = *f.threads;
    if (f.seed) {
        j["seed"] = *f.seed;
        for (const char* section : {"cohort", "train"}) {
            if (j.contains(section) && j[section].is_object() && j[section].contains("seed")) j[section]["seed"] = *f.seed;
        }
    }
    auto set_path = [&](const char* key, const std::string& value) {
        if (value.empty()) return;
        if (!j.contains("paths") || !j["paths"].is_object()) j["paths"] = json::object();
        j["paths"][key] = value;
    };
    set_path("dataset", f.dataset);
    set_path("pretrain_dataset", f.pretrain_dataset);
    set_path("checkpoint", f.checkpoint);
    set_path("embeddings", f.embeddings);
    if (f.noiseless) {
        if (!j.contains("cohort") || !j["cohort"].is_object()) j["cohort"] = json::object();
        j["cohort"]["noiseless"] = true;
    }
    return config::parse_run_config(j, origin);
}

fs::path require_path(const std::optional<fs::path>& p, const char* what, const char* flag) {
    if (!p) throw ConfigError(std::string("missing ") + what + " (set paths." + flag + " or --" + flag + ")");
    return *p;
}

/// Output staging: everything is written under a scratch directory and moved
/// into the run directory only after the command succeeds.
class Staging {
public:
    explicit Staging(fs::path run_dir) : run_dir_(std::move(run_dir)) {
        auto parent = run_dir_.has_parent_path() ? run_dir_.parent_path() : fs::path(".");
        fs::create_directories(parent);
        dir_ = parent / (run_dir_.filename().string() + ".partial");
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    ~Staging() {
        std::error_code ec;
        if (!committed_) fs::remove_all(dir_, ec);
    }
    const fs::path& dir() const { return dir_; }

    void write(const std::string& rel, const std::string& contents) { io::write_text_file(dir_ / rel, contents); }

    /// Moves staged files into the run directory; returns their relative paths.
    std::vector<std::string> commit() {
        std::vector<std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(dir_)) {
            if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir_).generic_string());
        }
        std::sort(files.begin(), files.end());
        for (const auto& rel : files) {
            const auto target = run_dir_ / rel;
            fs::create_directories(target.parent_path());
            fs::remove_all(target);
            fs::rename(dir_ / rel, target);
        }
        fs::remove_all(dir_);
        committed_ = true;
        return files;
    }

private:
    fs::path run_dir_;
    fs::path dir_;
    bool committed_ = false;
};

struct Context {
    Flags flags;
    config::RunConfig cfg;
    Staging* staging = nullptr;
    std::ostream* out = nullptr;
    json summary = json::object();
};

data::Dataset load_required_dataset(const std::optional<fs::path>& p, const char* flag = "dataset") {
    return data::load_dataset(require_path(p, "dataset directory", flag));
}

std::vector<probe::EmbeddingRecord> obtain_embeddings(Context& ctx, const data::Dataset& dataset) {
    if (ctx.cfg.paths.embeddings) return probe::load_embeddings(*ctx.cfg.paths.embeddings);
    if (!ctx.cfg.paths.checkpoint) {
        throw ConfigError("need paths.embeddings, or paths.checkpoint together with paths.dataset");
    }
    auto res = probe::embed_dataset(load_checkpoint(*ctx.cfg.paths.checkpoint), dataset);
    data::write_skip_report(ctx.staging->dir() / "skip_report.ndjson", res.skipped);
    return std::move(res.records);
}

void cmd_generate(Context& ctx) {
    const auto ds = synth::generate_cohort(ctx.cfg.cohort);
    data::save_dataset(ds, ctx.staging->dir() / "dataset");
    ctx.staging->write("cohort_summary.csv", synth::cohort_summary_csv(synth::describe_cohort(ds)));
    ctx.summary["subjects"] = ds.subjects.size();
    ctx.summary["trials"] = ds.trials.size();
    *ctx.out << "generated " << ds.subjects.size() << " subjects, " << ds.trials.size() << " trials\n";
}

training::TrainResult run_training(Context& ctx, const data::Dataset& dataset, const training::TrainConfig& tc,
                                   const fs::path& dir) {
    training::TrainOutputs outputs;
    outputs.dir = dir;
    const std::size_t every = std::max<std::size_t>(1, tc.epochs / 10);
    outputs.on_epoch = [&ctx, every, total = tc.epochs](const training::EpochMetrics& m) {
        if (m.epoch % every == 0 || m.epoch == total) {
            *ctx.out << "epoch " << m.epoch << "/" << total << " contrastive=" << io::format_number(m.contrastive_loss)
                     << " prediction=" << io::format_number(m.prediction_loss) << "\n";
        }
    };
    return training::train(dataset, ctx.cfg.model, tc, outputs);
}

void record_final(Context& ctx, const training::TrainResult& r) {
    const auto& last = r.metrics.back();
    ctx.summary["final_contrastive_loss"] = last.contrastive_loss;
    ctx.summary["final_prediction_loss"] = last.prediction_loss;
    ctx.summary["final_total_loss"] = last.total_loss;
    ctx.summary["skipped_trials"] = r.skipped.size();
}

void cmd_pretrain(Context& ctx) {
    const auto& p = ctx.cfg.paths.pretrain_dataset ? ctx.cfg.paths.pretrain_dataset : ctx.cfg.paths.dataset;
    const auto ds = load_required_dataset(p, "pretrain-dataset");
    auto tc = ctx.cfg.train;
    tc.pretrain_checkpoint.reset();
    record_final(ctx, run_training(ctx, ds, tc, ctx.staging->dir()));
}

void cmd_train(Context& ctx) {
    const auto ds = load_required_dataset(ctx.cfg.paths.dataset);
    record_final(ctx, run_training(ctx, ds, ctx.cfg.train, ctx.staging->dir()));
}

void cmd_embed(Context& ctx) {
    const auto ds = load_required_dataset(ctx.cfg.paths.dataset);
    const auto ckpt = load_checkpoint(require_path(ctx.cfg.paths.checkpoint, "checkpoint", "checkpoint"));
    const auto res = probe::embed_dataset(ckpt, ds);
    probe::save_embeddings(ctx.staging->dir() / "embeddings.csv", res.records);
    data::write_skip_report(ctx.staging->dir() / "skip_report.ndjson", res.skipped);
    ctx.summary["records"] = res.records.size();
    ctx.summary["skipped_trials"] = res.skipped.size();
}

std::vector<probe::TaskReport> run_probes(const config::RunConfig& cfg,
                                          std::span<const probe::EmbeddingRecord> records,
                                          std::span<const data::Subject> subjects, bool permutation) {
    std::vector<probe::TaskReport> reports;
    for (probe::Task task : probe::kAllTasks) {
        probe::TaskReport rep;
        rep.task = task;
        try {
            rep.result = probe::nested_cv_probe(records, subjects, task, cfg.probe, cfg.seed);
            if (permutation && cfg.probe.permutation_seeds > 0) {
                rep.permutation = probe::permutation_control(records, subjects, task, cfg.probe, cfg.seed);
            }
        } catch (const DataError& e) {
            rep.result.reset();
            rep.skipped_reason = e.what();
        }
        reports.push_back(std::move(rep));
    }
    return reports;
}

json folds_json(std::span<const probe::TaskReport> reports) {
    json j = json::object();
    for (const auto& rep : reports) {
        if (!rep.result) continue;
        json folds = json::array();
        for (const auto& f : rep.result->folds) {
            json inner = json::array();
            for (const auto& [tr, va] : f.inner_splits) inner.push_back({{"train", tr}, {"validation", va}});
            folds.push_back({{"fold", f.fold},
                             {"l1_weight", f.l1_weight},
                             {"train_subjects", f.train_subjects},
                             {"validation_subjects", f.validation_subjects},
                             {"inner", inner}});
        }
        j[std::string(probe::to_string(rep.task))] = {{"folds", folds}, {"warnings", rep.result->warnings}};
    }
    return j;
}

void cmd_probe(Context& ctx) {
    const auto ds = load_required_dataset(ctx.cfg.paths.dataset);
    const auto records = obtain_embeddings(ctx, ds);
    const auto reports = run_probes(ctx.cfg, records, ds.subjects, true);
    ctx.staging->write("probe_report.csv", probe::report_csv(reports));
    ctx.staging->write("probe_predictions.csv", probe::predictions_csv(reports));
    ctx.staging->write("probe_folds.json", folds_json(reports).dump(2) + "\n");
    for (const auto& rep : reports) {
        const std::string name(probe::to_string(rep.task));
        if (rep.result) {
            ctx.summary[name] = rep.result->mean;
            *ctx.out << name << " mean accuracy " << io::format_number(rep.result->mean) << "\n";
        } else {
            ctx.summary[name] = nullptr;
            *ctx.out << name << " skipped: " << rep.skipped_reason << "\n";
        }
    }
}

void cmd_simmatrix(Context& ctx) {
    const auto ds = load_required_dataset(ctx.cfg.paths.dataset);
    const auto records = obtain_embeddings(ctx, ds);
    const auto m = biomarker::similarity_matrix(records, ds.subjects);
    ctx.staging->write("similarity.csv", biomarker::matrix_csv(m));
    ctx.staging->write("similarity_rows.csv", biomarker::rows_csv(m));
    ctx.staging->write("same_subject.csv", biomarker::indicator_csv(m, m.same_subject));
    ctx.staging->write("same_diagnosis.csv", biomarker::indicator_csv(m, m.same_diagnosis));
    const auto bc = biomarker::block_contrast(m);
    ctx.summary["within_subject_mean"] = bc.within_subject;
    ctx.summary["between_subject_mean"] = bc.between_subject;
}

void cmd_biomarker(Context& ctx) {
    const auto ds = load_required_dataset(ctx.cfg.paths.dataset);
    auto records = obtain_embeddings(ctx, ds);
    std::set<std::string> excluded;
    if (ctx.cfg.biomarker.held_out && ctx.cfg.paths.checkpoint) {
        const auto ckpt = load_checkpoint(*ctx.cfg.paths.checkpoint);
        excluded.insert(ckpt.train_subjects.begin(), ckpt.train_subjects.end());
        std::erase_if(records, [&](const auto& r) { return excluded.count(r.subject_id) > 0; });
    }
    const auto ref = biomarker::control_reference(records, ds.subjects, ctx.cfg.biomarker.reference,
                                                  ctx.cfg.biomarker.median);
    std::vector<biomarker::BiomarkerSeries> series;
    std::string trend = "subject_id,diagnosis,sessions,spearman\n";
    std::size_t positive = 0, scored = 0;
    for (const auto& s : ds.subjects) {
        if (s.diagnosis == data::Diagnosis::control || excluded.count(s.subject_id)) continue;
        const bool present = std::any_of(records.begin(), records.end(),
                                         [&](const auto& r) { return r.subject_id == s.subject_id; });
        if (!present) continue;
        auto ser = biomarker::response_series(records, ref, s.subject_id);
        std::vector<double> days, sims;
        for (const auto& p : ser.points) {
            days.push_back(p.session_day);
            sims.push_back(p.median_similarity);
        }
        const double rho = biomarker::spearman(days, sims);
        trend += s.subject_id + ',' + std::string(data::to_string(s.diagnosis)) + ',' +
                 std::to_string(ser.points.size()) + ',' + io::format_number(rho) + '\n';
        if (std::isfinite(rho)) {
            ++scored;
            positive += rho > 0.0;
        }
        series.push_back(std::move(ser));
    }
    std::string ref_csv = "dim,value\n";
    for (std::size_t i = 0; i < ref.size(); ++i) ref_csv += std::to_string(i) + ',' + io::format_number(ref[i]) + '\n';
    ctx.staging->write("control_reference.csv", ref_csv);
    ctx.staging->write("biomarker_series.csv", biomarker::series_csv(series));
    ctx.staging->write("biomarker_trend.csv", trend);
    ctx.summary["excluded_training_subjects"] = excluded.size();
    ctx.summary["subjects_with_trend"] = scored;
    ctx.summary["positive_trend_fraction"] = scored ? static_cast<double>(positive) / static_cast<double>(scored) : 0.0;
}

/// Cartesian product of the grid axes in declaration order.
std::vector<std::vector<std::pair<std::string, json>>> expand_grid(const json& grid) {
    std::vector<std::vector<std::pair<std::string, json>>> points{{}};
    for (auto it = grid.begin(); it != grid.end(); ++it) {
        std::vector<std::vector<std::pair<std::string, json>>> next;
        for (const auto& p : points) {
            for (const auto& v : *it) {
                auto q = p;
                q.emplace_back(it.key(), v);
                next.push_back(std::move(q));
            }
        }
        points = std::move(next);
    }
    return points;
}

void cmd_sweep(Context& ctx) {
    if (ctx.cfg.sweep.grid.empty()) throw ConfigError("sweep: /sweep/grid declares no axes");
    const auto ds = load_required_dataset(ctx.cfg.paths.dataset);
    const json base = config::to_json(ctx.cfg);
    const auto points = expand_grid(ctx.cfg.sweep.grid);

    std::string header = "config_hash";
    for (auto it = ctx.cfg.sweep.grid.begin(); it != ctx.cfg.sweep.grid.end(); ++it) header += ',' + it.key();
    header += ",train_contrastive_loss,train_prediction_loss,train_total_loss,eval_contrastive_loss,"
              "eval_prediction_loss,eval_total_loss";
    for (probe::Task t : probe::kAllTasks) header += ',' + std::string(probe::to_string(t));
    std::string table = header + '\n';

    std::optional<data::Dataset> pretrain_ds;
    for (std::size_t i = 0; i < points.size(); ++i) {
        json j = base;
        bool pretrain = false;
        for (const auto& [key, value] : points[i]) {
            if (key == "pretrain") {
                if (!value.is_boolean()) throw ConfigError("sweep axis 'pretrain' takes booleans");
                pretrain = value.get<bool>();
                continue;
            }
            const auto ptr = json::json_pointer("/" + std::regex_replace(key, std::regex("\\."), "/"));
            if (!j.contains(ptr)) throw ConfigError("sweep axis '" + key + "' is not a config key");
            j[ptr] = value;
        }
        j["sweep"] = {{"grid", json::object()}, {"eval_batch", ctx.cfg.sweep.eval_batch}};
        auto point_cfg = config::parse_run_config(j, "sweep point " + std::to_string(i));
        std::string hash = config::config_hash(point_cfg);
        if (pretrain) hash = fnv_hex(hash + "+pretrain");
        const fs::path dir = ctx.staging->dir() / "points" / hash;
        *ctx.out << "sweep point " << (i + 1) << "/" << points.size() << " [" << hash << "]\n";

        Context sub = ctx;
        sub.cfg = point_cfg;
        auto tc = point_cfg.train;
        tc.pretrain_checkpoint.reset();
        if (pretrain) {
            if (!pretrain_ds) pretrain_ds = load_required_dataset(ctx.cfg.paths.pretrain_dataset, "pretrain-dataset");
            run_training(sub, *pretrain_ds, tc, dir / "pretrain");
            tc.pretrain_checkpoint = dir / "pretrain" / "model.ckpt";
        }
        const auto result = run_training(sub, ds, tc, dir / "train");
        io::write_text_file(dir / "config.resolved.json", config::to_json(point_cfg).dump(2) + "\n");
        const auto eval = training::evaluate_losses(result.checkpoint, ds, ctx.cfg.sweep.eval_batch, point_cfg.seed,
                                                    point_cfg.train.lambda);
        const auto emb = probe::embed_dataset(result.checkpoint, ds);
        probe::save_embeddings(dir / "embeddings.csv", emb.records);
        const auto reports = run_probes(point_cfg, emb.records, ds.subjects, false);
        io::write_text_file(dir / "probe_report.csv", probe::report_csv(reports));

        const auto& last = result.metrics.back();
        std::string row = hash;
        for (const auto& [key, value] : points[i]) row += ',' + (value.is_string() ? value.get<std::string>() : value.dump());
        for (double v : {last.contrastive_loss, last.prediction_loss, last.total_loss, eval.contrastive,
                         eval.prediction, eval.total}) {
            row += ',' + io::format_number(v);
        }
        for (const auto& rep : reports) row += ',' + (rep.result ? io::format_number(rep.result->mean) : std::string());
        table += row + '\n';
    }
    ctx.staging->write("sweep_results.csv", table);
    ctx.summary["points"] = points.size();
}

int fail(std::ostream& err, const std::string& kind, int code, const std::string& message) {
    err << json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump() << std::endl;
    return code;
}

}  // namespace

std::vector<std::vector<std::pair<std::string, std::string>>> expand_grid_labels(const std::string& grid_json) {
    std::vector<std::vector<std::pair<std::string, std::string>>> out;
    for (const auto& p : expand_grid(json::parse(grid_json))) {
        std::vector<std::pair<std::string, std::string>> labels;
        for (const auto& [k, v] : p) labels.emplace_back(k, v.dump());
        out.push_back(std::move(labels));
    }
    return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Flags f;
    CLI::App app{"Self-supervised gait representation toolkit", "gaitssl"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", kVersion);
    app.add_option("--config", f.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--run-dir", f.run_dir, "output directory for this invocation");
    app.add_option("--seed", f.seed, "global seed (overrides config seeds)");
    app.add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--dataset", f.dataset, "dataset directory");
    app.add_option("--pretrain-dataset", f.pretrain_dataset, "pretraining dataset directory");
    app.add_option("--checkpoint", f.checkpoint, "model checkpoint");
    app.add_option("--embeddings", f.embeddings, "embedding CSV");
    const std::map<std::string, std::string> commands = {
        {"generate", "generate a synthetic cohort"},
        {"pretrain", "train from scratch on the pretraining corpus"},
        {"train", "train (fine-tune when train.pretrain_checkpoint is set)"},
        {"embed", "embed center windows of every eligible trial"},
        {"probe", "nested cross-validated linear probes"},
        {"simmatrix", "trial similarity matrix"},
        {"biomarker", "control reference and longitudinal response series"},
        {"sweep", "hyperparameter grid"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->fallthrough();
        if (name == "generate") sub->add_flag("--noiseless", f.noiseless, "omit measurement noise");
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForVersion&) {
        out << kVersion << "\n";
        return 0;
    } catch (const CLI::ParseError& e) {
        return fail(err, "usage", 2, e.what());
    }
    f.command = app.get_subcommands().front()->get_name();

    try {
        Context ctx;
        ctx.flags = f;
        ctx.cfg = resolve_config(f);
        ctx.out = &out;
        Staging staging(ctx.cfg.run_dir);
        ctx.staging = &staging;

        if (f.command == "generate") cmd_generate(ctx);
        else if (f.command == "pretrain") cmd_pretrain(ctx);
        else if (f.command == "train") cmd_train(ctx);
        else if (f.command == "embed") cmd_embed(ctx);
        else if (f.command == "probe") cmd_probe(ctx);
        else if (f.command == "simmatrix") cmd_simmatrix(ctx);
        else if (f.command == "biomarker") cmd_biomarker(ctx);
        else if (f.command == "sweep") cmd_sweep(ctx);

        const auto resolved = config::to_json(ctx.cfg);
        staging.write("config.resolved.json", resolved.dump(2) + "\n");
        json outputs = json::object();
        for (const auto& e : fs::recursive_directory_iterator(staging.dir())) {
            if (!e.is_regular_file()) continue;
            outputs[fs::relative(e.path(), staging.dir()).generic_string()] = fnv_hex(io::read_text_file(e.path()));
        }
        json manifest = {{"tool", "gaitssl"},
                         {"version", kVersion},
                         {"command", f.command},
                         {"config_hash", config::config_hash(ctx.cfg)},
                         {"seed", ctx.cfg.seed},
                         {"summary", ctx.summary},
                         {"outputs", outputs}};
        staging.write("manifest.json", manifest.dump(2) + "\n");
        staging.commit();
        out << "wrote " << ctx.cfg.run_dir.string() << "\n";
        return 0;
    } catch (const Error& e) {
        return fail(err, e.kind(), e.exit_code(), e.what());
    } catch (const std::invalid_argument& e) {
        return fail(err, "data", 3, e.what());
    } catch (const std::exception& e) {
        return fail(err, "internal", 1, e.what());
    }
}

}  // namespace gaitssl::cli
