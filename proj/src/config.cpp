// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/config.hpp"

#include <cstdio>
#include <set>
#include <type_traits>

#include "gaitssl/errors.hpp"
#include "gaitssl/io.hpp"

namespace gaitssl::config {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "size_t config fields are read as uint64");

namespace {

/// Reads keys from one JSON object and rejects any it was not asked about.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string pointer, std::string file)
        : j_(j), pointer_(std::move(pointer)), file_(std::move(file)) {
        if (!j_.is_object()) fail(pointer_.empty() ? "/" : pointer_, "expected an object");
    }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string path(const std::string& key) const { return pointer_ + "/" + key; }

    void get(const std::string& key, bool& out) {
        if (auto* v = find(key)) {
            if (!v->is_boolean()) fail(path(key), "expected a boolean");
            out = v->get<bool>();
        }
    }
    void get(const std::string& key, double& out) {
        if (auto* v = find(key)) {
            if (!v->is_number()) fail(path(key), "expected a number");
            out = v->get<double>();
        }
    }
    void get(const std::string& key, std::uint64_t& out) {
        if (auto* v = find(key)) {
            // Built-up json stores positive literals as signed; parsed text as unsigned.
            if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
                fail(path(key), "expected a non-negative integer");
            }
            out = v->get<std::uint64_t>();
        }
    }
    void get(const std::string& key, int& out) {
        if (auto* v = find(key)) {
            if (!v->is_number_integer()) fail(path(key), "expected an integer");
            out = v->get<int>();
        }
    }
    void get(const std::string& key, std::string& out) {
        if (auto* v = find(key)) {
            if (!v->is_string()) fail(path(key), "expected a string");
            out = v->get<std::string>();
        }
    }
    void get(const std::string& key, std::optional<std::filesystem::path>& out) {
        if (auto* v = find(key)) {
            if (v->is_null()) {
                out.reset();
                return;
            }
            if (!v->is_string()) fail(path(key), "expected a path string or null");
            out = v->get<std::string>();
        }
    }
    void get(const std::string& key, std::vector<double>& out) {
        if (auto* v = find(key)) {
            if (!v->is_array()) fail(path(key), "expected an array of numbers");
            out.clear();
            for (const auto& e : *v) {
                if (!e.is_number()) fail(path(key), "expected an array of numbers");
                out.push_back(e.get<double>());
            }
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!seen_.count(it.key())) fail(path(it.key()), "unknown key");
        }
    }

    [[noreturn]] void fail(const std::string& where, const std::string& msg) const {
        throw ConfigError(msg + " at " + where + " in " + file_);
    }

private:
    const json& j_;
    std::string pointer_;
    std::string file_;
    std::set<std::string> seen_;
};

/// Runs `fn`, re-tagging a ConfigError raised by validation with the file name.
template <typename Fn>
void validated(const std::string& file, Fn fn) {
    try {
        fn();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string(e.what()) + " in " + file);
    }
}

}  // namespace

json to_json(const model::ModelConfig& c) {
    return {{"hidden_dim", c.hidden_dim},
            {"num_layers", c.num_layers},
            {"num_heads", c.num_heads},
            {"ffn_expansion", c.ffn_expansion},
            {"positional", std::string(model::to_string(c.positional))},
            {"use_cls_token", c.use_cls_token},
            {"fcm_mask_prob", c.fcm_mask_prob},
            {"noise_aug_scale", c.noise_aug_scale},
            {"projection_dim", c.projection_dim},
            {"seq_len", c.seq_len},
            {"input_dim", c.input_dim},
            {"temperature", c.temperature}};
}

model::ModelConfig model_from_json(const json& j, const std::string& pointer, const std::string& file) {
    model::ModelConfig c;
    ObjectReader r(j, pointer, file);
    r.get("hidden_dim", c.hidden_dim);
    r.get("num_layers", c.num_layers);
    r.get("num_heads", c.num_heads);
    r.get("ffn_expansion", c.ffn_expansion);
    std::string positional(model::to_string(c.positional));
    r.get("positional", positional);
    r.get("use_cls_token", c.use_cls_token);
    r.get("fcm_mask_prob", c.fcm_mask_prob);
    r.get("noise_aug_scale", c.noise_aug_scale);
    r.get("projection_dim", c.projection_dim);
    r.get("seq_len", c.seq_len);
    r.get("input_dim", c.input_dim);
    r.get("temperature", c.temperature);
    r.finish();
    validated(file, [&] {
        c.positional = model::parse_positional(positional);
        c.validate();
    });
    return c;
}

json to_json(const synth::CohortSpec& c) {
    return {{"n_control", c.n_control},
            {"n_stroke", c.n_stroke},
            {"n_prosthesis", c.n_prosthesis},
            {"n_other", c.n_other},
            {"severity_min", c.severity_min},
            {"severity_max", c.severity_max},
            {"sessions_per_subject", c.sessions_per_subject},
            {"trials_per_session", c.trials_per_session},
            {"session_spacing_days", c.session_spacing_days},
            {"length_min", c.length_min},
            {"length_max", c.length_max},
            {"cadence_min_hz", c.cadence_min_hz},
            {"cadence_max_hz", c.cadence_max_hz},
            {"harmonics", c.harmonics},
            {"noise_std_deg", c.noise_std_deg},
            {"noiseless", c.noiseless},
            {"recovery", c.recovery},
            {"recovery_final_severity", c.recovery_final_severity},
            {"stroke_knee_ankle_factor", c.stroke_knee_ankle_factor},
            {"stroke_elbow_offset_deg", c.stroke_elbow_offset_deg},
            {"prosthesis_ankle_factor", c.prosthesis_ankle_factor},
            {"other_knee_factor", c.other_knee_factor},
            {"subject_amplitude_spread", c.subject_amplitude_spread},
            {"subject_phase_spread_rad", c.subject_phase_spread_rad},
            {"subject_baseline_spread_deg", c.subject_baseline_spread_deg},
            {"trial_jitter", c.trial_jitter},
            {"seed", c.seed}};
}

synth::CohortSpec cohort_from_json(const json& j, const std::string& pointer, const std::string& file,
                                   std::uint64_t default_seed) {
    synth::CohortSpec c;
    c.seed = default_seed;
    ObjectReader r(j, pointer, file);
    r.get("n_control", c.n_control);
    r.get("n_stroke", c.n_stroke);
    r.get("n_prosthesis", c.n_prosthesis);
    r.get("n_other", c.n_other);
    r.get("severity_min", c.severity_min);
    r.get("severity_max", c.severity_max);
    r.get("sessions_per_subject", c.sessions_per_subject);
    r.get("trials_per_session", c.trials_per_session);
    r.get("session_spacing_days", c.session_spacing_days);
    r.get("length_min", c.length_min);
    r.get("length_max", c.length_max);
    r.get("cadence_min_hz", c.cadence_min_hz);
    r.get("cadence_max_hz", c.cadence_max_hz);
    r.get("harmonics", c.harmonics);
    r.get("noise_std_deg", c.noise_std_deg);
    r.get("noiseless", c.noiseless);
    r.get("recovery", c.recovery);
    r.get("recovery_final_severity", c.recovery_final_severity);
    r.get("stroke_knee_ankle_factor", c.stroke_knee_ankle_factor);
    r.get("stroke_elbow_offset_deg", c.stroke_elbow_offset_deg);
    r.get("prosthesis_ankle_factor", c.prosthesis_ankle_factor);
    r.get("other_knee_factor", c.other_knee_factor);
    r.get("subject_amplitude_spread", c.subject_amplitude_spread);
    r.get("subject_phase_spread_rad", c.subject_phase_spread_rad);
    r.get("subject_baseline_spread_deg", c.subject_baseline_spread_deg);
    r.get("trial_jitter", c.trial_jitter);
    r.get("seed", c.seed);
    r.finish();
    validated(file, [&] { c.validate(); });
    return c;
}

json to_json(const training::TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_trials", c.batch_trials},
            {"learning_rate", c.adamw.learning_rate},
            {"beta1", c.adamw.beta1},
            {"beta2", c.adamw.beta2},
            {"eps", c.adamw.eps},
            {"weight_decay", c.adamw.weight_decay},
            {"lambda", c.lambda},
            {"seed", c.seed},
            {"pretrain_checkpoint", c.pretrain_checkpoint ? json(c.pretrain_checkpoint->string()) : json(nullptr)},
            {"checkpoint_every", c.checkpoint_every}};
}

training::TrainConfig train_from_json(const json& j, const std::string& pointer, const std::string& file,
                                      std::uint64_t default_seed) {
    training::TrainConfig c;
    c.seed = default_seed;
    ObjectReader r(j, pointer, file);
    r.get("epochs", c.epochs);
    r.get("batch_trials", c.batch_trials);
    r.get("learning_rate", c.adamw.learning_rate);
    r.get("beta1", c.adamw.beta1);
    r.get("beta2", c.adamw.beta2);
    r.get("eps", c.adamw.eps);
    r.get("weight_decay", c.adamw.weight_decay);
    r.get("lambda", c.lambda);
    r.get("seed", c.seed);
    r.get("pretrain_checkpoint", c.pretrain_checkpoint);
    r.get("checkpoint_every", c.checkpoint_every);
    r.finish();
    validated(file, [&] { c.validate(); });
    return c;
}

json to_json(const probe::ProbeConfig& c) {
    return {{"outer_k", c.outer_k},
            {"inner_k", c.inner_k},
            {"l1_grid", c.l1_grid},
            {"permutation_seeds", c.permutation_seeds}};
}

json to_json(const BiomarkerConfig& c) {
    return {{"reference", c.reference == biomarker::ReferenceMode::per_trial ? "per_trial" : "subject_mean"},
            {"held_out", c.held_out},
            {"median_tol", c.median.tol},
            {"median_max_iter", c.median.max_iter}};
}

json to_json(const RunConfig& c) {
    auto path = [](const std::optional<std::filesystem::path>& p) { return p ? json(p->string()) : json(nullptr); };
    return {{"seed", c.seed},
            {"run_dir", c.run_dir.string()},
            {"threads", c.threads},
            {"paths",
             {{"dataset", path(c.paths.dataset)},
              {"pretrain_dataset", path(c.paths.pretrain_dataset)},
              {"checkpoint", path(c.paths.checkpoint)},
              {"embeddings", path(c.paths.embeddings)}}},
            {"cohort", to_json(c.cohort)},
            {"model", to_json(c.model)},
            {"train", to_json(c.train)},
            {"probe", to_json(c.probe)},
            {"biomarker", to_json(c.biomarker)},
            {"sweep", {{"grid", c.sweep.grid}, {"eval_batch", c.sweep.eval_batch}}}};
}

RunConfig parse_run_config(const json& j, const std::string& file) {
    RunConfig c;
    ObjectReader top(j, "", file);
    top.get("seed", c.seed);
    std::string run_dir = c.run_dir.string();
    top.get("run_dir", run_dir);
    c.run_dir = run_dir;
    top.get("threads", c.threads);
    if (c.threads == 0) top.fail("/threads", "threads must be positive");

    if (auto* p = top.find("paths")) {
        ObjectReader r(*p, "/paths", file);
        r.get("dataset", c.paths.dataset);
        r.get("pretrain_dataset", c.paths.pretrain_dataset);
        r.get("checkpoint", c.paths.checkpoint);
        r.get("embeddings", c.paths.embeddings);
        r.finish();
    }
    c.cohort = cohort_from_json(top.find("cohort") ? *top.find("cohort") : json::object(), "/cohort", file, c.seed);
    if (auto* p = top.find("model")) c.model = model_from_json(*p, "/model", file);
    c.train = train_from_json(top.find("train") ? *top.find("train") : json::object(), "/train", file, c.seed);
    if (auto* p = top.find("probe")) {
        ObjectReader r(*p, "/probe", file);
        r.get("outer_k", c.probe.outer_k);
        r.get("inner_k", c.probe.inner_k);
        r.get("l1_grid", c.probe.l1_grid);
        r.get("permutation_seeds", c.probe.permutation_seeds);
        r.finish();
    }
    c.probe.threads = c.threads;
    validated(file, [&] { c.probe.validate(); });
    if (auto* p = top.find("biomarker")) {
        ObjectReader r(*p, "/biomarker", file);
        std::string reference = "per_trial";
        r.get("reference", reference);
        if (reference == "per_trial") {
            c.biomarker.reference = biomarker::ReferenceMode::per_trial;
        } else if (reference == "subject_mean") {
            c.biomarker.reference = biomarker::ReferenceMode::subject_mean;
        } else {
            r.fail("/biomarker/reference", "expected per_trial or subject_mean");
        }
        r.get("held_out", c.biomarker.held_out);
        r.get("median_tol", c.biomarker.median.tol);
        r.get("median_max_iter", c.biomarker.median.max_iter);
        r.finish();
        if (!(c.biomarker.median.tol > 0.0)) r.fail("/biomarker/median_tol", "must be positive");
    }
    if (auto* p = top.find("sweep")) {
        ObjectReader r(*p, "/sweep", file);
        if (auto* g = r.find("grid")) {
            if (!g->is_object()) r.fail("/sweep/grid", "expected an object of axis -> values");
            for (auto it = g->begin(); it != g->end(); ++it) {
                if (!it->is_array() || it->empty()) {
                    r.fail("/sweep/grid/" + it.key(), "expected a non-empty array of values");
                }
            }
            c.sweep.grid = *g;
        }
        r.get("eval_batch", c.sweep.eval_batch);
        r.finish();
        if (c.sweep.eval_batch < 2) r.fail("/sweep/eval_batch", "must be at least 2");
    }
    top.finish();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(io::read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    return parse_run_config(j, path.string());
}

std::string config_hash(const RunConfig& c) {
    auto j = to_json(c);
    // Location and parallelism do not change results.
    j.erase("run_dir");
    j.erase("threads");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace gaitssl::config
