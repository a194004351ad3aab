// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/training.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "gaitssl/errors.hpp"
#include "gaitssl/io.hpp"
#include "gaitssl/losses.hpp"

namespace gaitssl::training {

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("train: " + msg); };
    if (epochs == 0) fail("epochs must be positive");
    if (batch_trials < 2) fail("batch_trials must be at least 2 (the contrastive loss needs a negative)");
    if (!(adamw.learning_rate > 0.0)) fail("learning_rate must be positive");
    if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0 && adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) {
        fail("betas must lie in [0, 1)");
    }
    if (!(adamw.eps > 0.0)) fail("eps must be positive");
    if (!(adamw.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
    if (!(lambda >= 0.0)) fail("lambda must be non-negative");
    if (checkpoint_every == 0) fail("checkpoint_every must be positive");
}

template <typename T>
Objective<T> batch_objective(const ParamSet<T>& params, const model::ModelConfig& config,
                             std::span<const data::FrameMatrix> inputs, std::span<const data::FrameMatrix> targets,
                             double lambda, model::Mode mode, Rng* rng, bool want_grads) {
    if (inputs.size() != targets.size() || inputs.size() % 2 != 0) {
        throw std::invalid_argument("batch_objective: expected 2N inputs with one target each");
    }
    ad::Tape<T> tape;
    const auto bound = model::bind_params(tape, params, want_grads);
    const auto fw = model::forward_batch(tape, bound, config, inputs, mode, rng);
    const auto lc = losses::contrastive(fw.projected, static_cast<T>(config.temperature));
    const auto lp = losses::prediction(fw.predictions, targets);

    Objective<T> out;
    out.losses.contrastive = static_cast<double>(lc.item());
    out.losses.prediction = static_cast<double>(lp.item());
    out.losses.total = losses::total(out.losses.contrastive, out.losses.prediction, lambda);
    if (!want_grads) return out;

    const auto root = lambda != 0.0 ? ad::add(lc, ad::scale(lp, static_cast<T>(lambda))) : lc;
    tape.backward(root);
    out.grads = params.zeros_like();
    for (std::size_t a = 0; a < params.count(); ++a) {
        const auto g = bound.vars[a].second.grad();
        if (!g.empty()) std::copy(g.begin(), g.end(), out.grads.arrays()[a].values.begin());
    }
    return out;
}

template Objective<float> batch_objective(const ParamSet<float>&, const model::ModelConfig&,
                                          std::span<const data::FrameMatrix>, std::span<const data::FrameMatrix>,
                                          double, model::Mode, Rng*, bool);
template Objective<double> batch_objective(const ParamSet<double>&, const model::ModelConfig&,
                                           std::span<const data::FrameMatrix>, std::span<const data::FrameMatrix>,
                                           double, model::Mode, Rng*, bool);

std::string metrics_line(const EpochMetrics& m) {
    return "{\"epoch\":" + std::to_string(m.epoch) +
           ",\"contrastive_loss\":" + io::format_number(m.contrastive_loss) +
           ",\"prediction_loss\":" + io::format_number(m.prediction_loss) +
           ",\"total_loss\":" + io::format_number(m.total_loss) + ",\"wall_time\":" + io::format_number(m.wall_time) +
           "}";
}

PreparedWindow prepare_window(const data::TrialWindow& window, const data::NormStats& norm) {
    return {norm.standardize(window.data), norm.standardize(window.target)};
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> eligible, std::size_t batch_trials,
                                                    Rng& rng) {
    std::vector<std::size_t> order(eligible.begin(), eligible.end());
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_trials) {
        const std::size_t end = std::min(order.size(), i + batch_trials);
        if (end - i < 2) break;
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

void load_backbone(ParamSet<float>& params, const ParamSet<float>& pretrained) {
    for (auto& a : params.arrays()) {
        if (model::is_head_param(a.name)) continue;
        if (!pretrained.contains(a.name)) {
            throw ConfigError("pretrained checkpoint lacks backbone array '" + a.name + "'");
        }
        const auto& src = pretrained.at(a.name);
        if (src.shape != a.shape) {
            throw ConfigError("pretrained array '" + a.name + "' has shape " + ad::shape_string(src.shape) +
                              ", model expects " + ad::shape_string(a.shape));
        }
        a.values = src.values;
    }
}

namespace {

struct PairBatch {
    std::vector<data::FrameMatrix> inputs;
    std::vector<data::FrameMatrix> targets;
};

PairBatch sample_pairs(const data::Dataset& dataset, std::span<const std::size_t> trials, const data::NormStats& norm,
                       std::size_t window, Rng& rng) {
    const std::size_t n = trials.size();
    PairBatch batch;
    batch.inputs.resize(2 * n);
    batch.targets.resize(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        auto [a, b] = data::sample_positive_pair(dataset.trials[trials[i]], rng, window);
        auto pa = prepare_window(a, norm);
        auto pb = prepare_window(b, norm);
        batch.inputs[i] = std::move(pa.input);
        batch.targets[i] = std::move(pa.target);
        batch.inputs[n + i] = std::move(pb.input);
        batch.targets[n + i] = std::move(pb.target);
    }
    return batch;
}

std::string epoch_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "epoch_%04zu.ckpt", epoch);
    return buf;
}

}  // namespace

TrainResult train(const data::Dataset& dataset, const model::ModelConfig& model_config, const TrainConfig& cfg,
                  const TrainOutputs& outputs) {
    model_config.validate();
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();

    TrainResult result;
    const auto elig = data::partition_eligible(dataset.trials, model_config.seq_len);
    result.skipped = elig.skipped;
    if (outputs.dir) {
        std::filesystem::create_directories(*outputs.dir);
        data::write_skip_report(*outputs.dir / "skip_report.ndjson", result.skipped);
    }
    if (elig.eligible.size() < 2) {
        throw DataError("training needs at least 2 trials of length >= " + std::to_string(model_config.seq_len) +
                        ", found " + std::to_string(elig.eligible.size()));
    }
    std::vector<data::GaitTrial> train_trials;
    train_trials.reserve(elig.eligible.size());
    for (auto i : elig.eligible) train_trials.push_back(dataset.trials[i]);
    const auto norm = data::compute_norm_stats(train_trials);
    std::vector<std::string> train_subjects;
    for (const auto& t : train_trials) {
        if (train_subjects.empty() || train_subjects.back() != t.subject_id) train_subjects.push_back(t.subject_id);
    }

    Rng init_rng(mix_seed(cfg.seed, "init"));
    auto params = model::init_params(model_config, init_rng);
    if (cfg.pretrain_checkpoint) {
        const auto pre = load_checkpoint(*cfg.pretrain_checkpoint);
        load_backbone(params, pre.params);
    }
    auto state = AdamWState<float>::zeros_like(params);

    std::ofstream metrics_out;
    if (outputs.dir) {
        metrics_out.open(*outputs.dir / "metrics.ndjson", std::ios::trunc);
        if (!metrics_out) throw DataError("cannot write " + (*outputs.dir / "metrics.ndjson").string());
    }

    const std::uint64_t train_seed = mix_seed(cfg.seed, "train");
    auto snapshot = [&](std::size_t epoch) {
        Checkpoint ck;
        ck.config = model_config;
        ck.params = params;
        ck.norm = norm;
        ck.optimizer = state;
        ck.epoch = epoch;
        ck.train_subjects = train_subjects;
        return ck;
    };

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(mix_seed(train_seed, epoch));
        const auto batches = epoch_batches(elig.eligible, cfg.batch_trials, rng);
        Losses sum;
        for (const auto& trials : batches) {
            const auto batch = sample_pairs(dataset, trials, norm, model_config.seq_len, rng);
            auto obj = batch_objective<float>(params, model_config, batch.inputs, batch.targets, cfg.lambda,
                                              model::Mode::train, &rng, true);
            if (!std::isfinite(obj.losses.total)) {
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch));
            }
            adamw_step(params, obj.grads, state, cfg.adamw);
            sum.contrastive += obj.losses.contrastive;
            sum.prediction += obj.losses.prediction;
            sum.total += obj.losses.total;
        }
        const double nb = static_cast<double>(batches.size());
        EpochMetrics m;
        m.epoch = epoch;
        m.contrastive_loss = sum.contrastive / nb;
        m.prediction_loss = sum.prediction / nb;
        m.total_loss = sum.total / nb;
        m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.metrics.push_back(m);
        if (outputs.dir) {
            metrics_out << metrics_line(m) << '\n';
            metrics_out.flush();
            if (epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
                save_checkpoint(snapshot(epoch), *outputs.dir / "checkpoints" / epoch_name(epoch));
            }
        }
        if (outputs.on_epoch) outputs.on_epoch(m);
    }

    result.checkpoint = snapshot(cfg.epochs);
    if (outputs.dir) {
        save_checkpoint(result.checkpoint, *outputs.dir / "checkpoints" / epoch_name(cfg.epochs));
        save_checkpoint(result.checkpoint, *outputs.dir / "model.ckpt");
    }
    return result;
}

Losses evaluate_losses(const Checkpoint& ckpt, const data::Dataset& dataset, std::size_t batch_trials,
                       std::uint64_t seed, double lambda) {
    if (!ckpt.norm) throw DataError("checkpoint carries no normalization statistics");
    const auto elig = data::partition_eligible(dataset.trials, ckpt.config.seq_len);
    Rng rng(mix_seed(seed, "eval"));
    std::vector<std::size_t> order = elig.eligible;
    Losses sum;
    std::size_t count = 0;
    for (std::size_t i = 0; i + 2 <= order.size(); i += batch_trials) {
        const std::size_t end = std::min(order.size(), i + batch_trials);
        if (end - i < 2) break;
        const auto batch = sample_pairs(dataset, std::span<const std::size_t>(order).subspan(i, end - i), *ckpt.norm,
                                        ckpt.config.seq_len, rng);
        const auto obj = batch_objective<float>(ckpt.params, ckpt.config, batch.inputs, batch.targets, lambda,
                                                model::Mode::eval, nullptr, false);
        sum.contrastive += obj.losses.contrastive;
        sum.prediction += obj.losses.prediction;
        sum.total += obj.losses.total;
        ++count;
    }
    if (count == 0) throw DataError("evaluation needs at least 2 eligible trials");
    const double n = static_cast<double>(count);
    return {sum.contrastive / n, sum.prediction / n, sum.total / n};
}

}  // namespace gaitssl::training
