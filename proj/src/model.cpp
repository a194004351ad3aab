// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "gaitssl/errors.hpp"

namespace gaitssl::model {

std::string_view to_string(Positional p) {
    return p == Positional::learned ? "learned" : "rotary";
}

Positional parse_positional(std::string_view text) {
    if (text == "learned") return Positional::learned;
    if (text == "rotary") return Positional::rotary;
    throw ConfigError("unknown positional encoding '" + std::string(text) + "' (expected learned or rotary)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model: " + msg); };
    if (hidden_dim == 0 || num_layers == 0 || num_heads == 0) fail("hidden_dim, num_layers and num_heads must be positive");
    if (hidden_dim % num_heads != 0) fail("hidden_dim must be divisible by num_heads");
    if (positional == Positional::rotary && head_dim() % 2 != 0) fail("rotary positions need an even head dimension");
    if (ffn_expansion == 0) fail("ffn_expansion must be positive");
    if (!(fcm_mask_prob >= 0.0 && fcm_mask_prob < 1.0)) fail("fcm_mask_prob must lie in [0, 1)");
    if (!(noise_aug_scale >= 0.0)) fail("noise_aug_scale must be non-negative");
    if (projection_dim == 0) fail("projection_dim must be positive");
    if (seq_len < 2) fail("seq_len must be at least 2");
    if (input_dim == 0) fail("input_dim must be positive");
    if (!(temperature > 0.0)) fail("temperature must be positive");
}

std::vector<std::pair<std::string, ad::Shape>> param_shapes(const ModelConfig& c) {
    const std::size_t H = c.hidden_dim, J = c.input_dim, F = c.ffn_expansion * H;
    std::vector<std::pair<std::string, ad::Shape>> s;
    s.push_back({"input_proj.weight", {J, H}});
    s.push_back({"input_proj.bias", {H}});
    if (c.positional == Positional::learned) s.push_back({"pos_table", {c.seq_len + 1, H}});
    if (c.use_cls_token) s.push_back({"cls_token", {H}});
    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        s.push_back({p + "ln1.gain", {H}});
        s.push_back({p + "ln1.bias", {H}});
        s.push_back({p + "attn.qkv.weight", {H, 3 * H}});
        s.push_back({p + "attn.qkv.bias", {3 * H}});
        s.push_back({p + "attn.out.weight", {H, H}});
        s.push_back({p + "attn.out.bias", {H}});
        s.push_back({p + "ln2.gain", {H}});
        s.push_back({p + "ln2.bias", {H}});
        s.push_back({p + "ffn.up.weight", {H, F}});
        s.push_back({p + "ffn.up.bias", {F}});
        s.push_back({p + "ffn.down.weight", {F, H}});
        s.push_back({p + "ffn.down.bias", {H}});
    }
    s.push_back({"final_ln.gain", {H}});
    s.push_back({"final_ln.bias", {H}});
    s.push_back({"pred_head.weight", {H, J}});
    s.push_back({"pred_head.bias", {J}});
    s.push_back({"proj_head.weight", {H, c.projection_dim}});
    s.push_back({"proj_head.bias", {c.projection_dim}});
    return s;
}

std::size_t param_count(const ModelConfig& config) {
    std::size_t n = 0;
    for (const auto& [name, shape] : param_shapes(config)) n += ad::numel(shape);
    return n;
}

bool is_head_param(std::string_view name) {
    return name.starts_with("pred_head.") || name.starts_with("proj_head.");
}

namespace {

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

ParamSet<float> init_params(const ModelConfig& config, Rng& rng) {
    config.validate();
    ParamSet<float> params;
    for (auto& [name, shape] : param_shapes(config)) {
        std::vector<float> v(ad::numel(shape), 0.0f);
        if (ends_with(name, ".gain")) {
            std::fill(v.begin(), v.end(), 1.0f);
        } else if (!ends_with(name, ".bias")) {
            for (auto& x : v) x = static_cast<float>(rng.normal(0.0, 0.02));
        }
        params.add(name, shape, std::move(v));
    }
    return params;
}

template <typename T>
const ad::Var<T>& BoundParams<T>::operator[](std::string_view name) const {
    for (const auto& [n, v] : vars) {
        if (n == name) return v;
    }
    throw std::out_of_range("parameter '" + std::string(name) + "' is not bound");
}

template <typename T>
BoundParams<T> bind_params(ad::Tape<T>& tape, const ParamSet<T>& params, bool requires_grad) {
    BoundParams<T> out;
    out.vars.reserve(params.count());
    for (const auto& a : params.arrays()) {
        out.vars.emplace_back(a.name, requires_grad ? tape.leaf(a.shape, a.values) : tape.constant(a.shape, a.values));
    }
    return out;
}

Augmentation draw_augmentation(const ModelConfig& config, Rng& rng) {
    Augmentation aug;
    aug.noise.assign(config.seq_len * config.input_dim, 0.0);
    aug.masked.assign(config.seq_len, 0);
    if (config.noise_aug_scale > 0.0) {
        for (auto& x : aug.noise) x = rng.normal(0.0, config.noise_aug_scale);
    }
    if (config.fcm_mask_prob > 0.0) {
        for (auto& m : aug.masked) m = rng.bernoulli(config.fcm_mask_prob) ? 1 : 0;
    }
    return aug;
}

std::vector<std::uint8_t> fcm_mask(std::span<double> tokens, std::size_t hidden_dim, double prob, Rng& rng) {
    if (hidden_dim == 0 || tokens.size() % hidden_dim != 0) {
        throw std::invalid_argument("fcm_mask: token buffer is not a whole number of rows");
    }
    const std::size_t rows = tokens.size() / hidden_dim;
    std::vector<std::uint8_t> masked(rows, 0);
    if (prob <= 0.0) return masked;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!rng.bernoulli(prob)) continue;
        masked[r] = 1;
        std::fill_n(tokens.begin() + static_cast<std::ptrdiff_t>(r * hidden_dim), hidden_dim, 0.0);
    }
    return masked;
}

namespace {

template <typename T>
ad::Var<T> affine(const ad::Var<T>& x, const ad::Var<T>& w, const ad::Var<T>& b) {
    return ad::add(ad::matmul(x, w), b);
}

template <typename T>
ad::Var<T> norm_affine(const ad::Var<T>& x, const ad::Var<T>& gain, const ad::Var<T>& bias) {
    return ad::add(ad::mul(ad::layer_norm(x, 1), gain), bias);
}

/// Causal multi-head attention over B windows of Tp tokens stacked row-wise.
template <typename T>
ad::Var<T> attention(const ad::Var<T>& qkv, const ModelConfig& c, std::size_t batch,
                     std::span<const std::uint8_t> causal, std::span<const std::size_t> positions) {
    const std::size_t H = c.hidden_dim, Tp = c.tokens(), d = c.head_dim();
    auto q = ad::slice(qkv, 1, 0, H);
    auto k = ad::slice(qkv, 1, H, 2 * H);
    auto v = ad::slice(qkv, 1, 2 * H, 3 * H);
    if (c.positional == Positional::rotary) {
        q = ad::rotary(q, d, positions);
        k = ad::rotary(k, d, positions);
    }
    const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(d));
    const T neg_inf = -std::numeric_limits<T>::infinity();
    std::vector<ad::Var<T>> windows;
    windows.reserve(batch);
    std::vector<ad::Var<T>> heads(c.num_heads);
    for (std::size_t b = 0; b < batch; ++b) {
        const auto qb = ad::slice(q, 0, b * Tp, (b + 1) * Tp);
        const auto kb = ad::slice(k, 0, b * Tp, (b + 1) * Tp);
        const auto vb = ad::slice(v, 0, b * Tp, (b + 1) * Tp);
        for (std::size_t h = 0; h < c.num_heads; ++h) {
            const auto qh = ad::slice(qb, 1, h * d, (h + 1) * d);
            const auto kh = ad::slice(kb, 1, h * d, (h + 1) * d);
            const auto vh = ad::slice(vb, 1, h * d, (h + 1) * d);
            auto scores = ad::masked_fill(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_d), causal, neg_inf);
            heads[h] = ad::matmul(ad::softmax(scores, 1), vh);
        }
        windows.push_back(c.num_heads == 1 ? heads[0] : ad::concat(std::span<const ad::Var<T>>(heads), 1));
    }
    return batch == 1 ? windows[0] : ad::concat(std::span<const ad::Var<T>>(windows), 0);
}

}  // namespace

template <typename T>
BatchForward<T> forward_batch(ad::Tape<T>& tape, const BoundParams<T>& P, const ModelConfig& c,
                              std::span<const data::FrameMatrix> windows, Mode mode, Rng* rng) {
    if (mode == Mode::train && rng == nullptr) {
        throw std::invalid_argument("forward: train mode requires a random generator");
    }
    if (windows.empty()) throw std::invalid_argument("forward: empty batch");
    const std::size_t B = windows.size(), T_ = c.seq_len, Tp = c.tokens(), H = c.hidden_dim, J = c.input_dim;

    BatchForward<T> out;
    out.batch = B;
    std::vector<T> x(B * T_ * J);
    std::vector<std::uint8_t> token_mask(B * T_ * H, 0);
    bool any_masked = false;
    for (std::size_t b = 0; b < B; ++b) {
        const auto& w = windows[b];
        if (w.rows() != T_ || w.cols() != J) {
            throw std::invalid_argument("forward: window " + std::to_string(b) + " has shape (" +
                                        std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + "), expected (" +
                                        std::to_string(T_) + "x" + std::to_string(J) + ")");
        }
        const auto vals = w.values();
        if (mode == Mode::train) {
            auto aug = draw_augmentation(c, *rng);
            for (std::size_t i = 0; i < T_ * J; ++i) x[b * T_ * J + i] = static_cast<T>(vals[i] + aug.noise[i]);
            for (std::size_t t = 0; t < T_; ++t) {
                if (!aug.masked[t]) continue;
                any_masked = true;
                std::fill_n(token_mask.begin() + static_cast<std::ptrdiff_t>((b * T_ + t) * H), H, 1);
            }
            out.augmentations.push_back(std::move(aug));
        } else {
            for (std::size_t i = 0; i < T_ * J; ++i) x[b * T_ * J + i] = static_cast<T>(vals[i]);
        }
    }

    auto h = affine(tape.constant({B * T_, J}, std::move(x)), P["input_proj.weight"], P["input_proj.bias"]);
    if (any_masked) h = ad::masked_fill(h, std::span<const std::uint8_t>(token_mask), T(0));
    if (c.use_cls_token) {
        const ad::Var<T> parts[] = {h, ad::reshape(P["cls_token"], {1, H})};
        const auto with_cls = ad::concat(std::span<const ad::Var<T>>(parts), 0);
        std::vector<std::size_t> order;
        order.reserve(B * Tp);
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t t = 0; t < T_; ++t) order.push_back(b * T_ + t);
            order.push_back(B * T_);
        }
        h = ad::embedding_select(with_cls, order);
    }
    if (c.positional == Positional::learned) {
        const auto pos = ad::slice(P["pos_table"], 0, 0, Tp);
        h = ad::reshape(ad::add(ad::reshape(h, {B, Tp, H}), pos), {B * Tp, H});
    }

    std::vector<std::uint8_t> causal(Tp * Tp, 0);
    for (std::size_t i = 0; i < Tp; ++i)
        for (std::size_t j = i + 1; j < Tp; ++j) causal[i * Tp + j] = 1;
    std::vector<std::size_t> positions(B * Tp);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % Tp;

    for (std::size_t l = 0; l < c.num_layers; ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        auto a = norm_affine(h, P[p + "ln1.gain"], P[p + "ln1.bias"]);
        auto qkv = affine(a, P[p + "attn.qkv.weight"], P[p + "attn.qkv.bias"]);
        auto att = attention(qkv, c, B, causal, positions);
        h = ad::add(h, affine(att, P[p + "attn.out.weight"], P[p + "attn.out.bias"]));
        a = norm_affine(h, P[p + "ln2.gain"], P[p + "ln2.bias"]);
        auto f = ad::gelu(affine(a, P[p + "ffn.up.weight"], P[p + "ffn.up.bias"]));
        h = ad::add(h, affine(f, P[p + "ffn.down.weight"], P[p + "ffn.down.bias"]));
    }
    out.states = norm_affine(h, P["final_ln.gain"], P["final_ln.bias"]);

    auto temporal = out.states;
    if (c.use_cls_token) {
        std::vector<std::size_t> rows;
        rows.reserve(B * T_);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t t = 0; t < T_; ++t) rows.push_back(b * Tp + t);
        temporal = ad::embedding_select(out.states, rows);
    }
    out.predictions = affine(temporal, P["pred_head.weight"], P["pred_head.bias"]);

    std::vector<std::size_t> last(B);
    for (std::size_t b = 0; b < B; ++b) last[b] = b * Tp + Tp - 1;
    out.pooled = ad::embedding_select(out.states, last);
    out.projected = ad::l2_normalize(
        affine(ad::l2_normalize(out.pooled, 1), P["proj_head.weight"], P["proj_head.bias"]), 1);
    return out;
}

ForwardOutput forward(const ParamSet<float>& params, const ModelConfig& config, const data::FrameMatrix& window,
                      Mode mode, Rng* rng) {
    ad::Tape<float> tape;
    const auto bound = bind_params(tape, params, false);
    const auto fw = forward_batch(tape, bound, config, std::span<const data::FrameMatrix>(&window, 1), mode, rng);
    auto copy = [](const ad::Var<float>& v) { return std::vector<float>(v.value().begin(), v.value().end()); };
    return {copy(fw.states), copy(fw.predictions), copy(fw.pooled), copy(fw.projected)};
}

void apply_rotary(std::span<double> vec, std::size_t head_dim, std::size_t position, double base) {
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw std::invalid_argument("apply_rotary: head dimension must be even, got " + std::to_string(head_dim));
    }
    if (vec.size() % head_dim != 0) {
        throw std::invalid_argument("apply_rotary: vector length is not a multiple of the head dimension");
    }
    for (std::size_t h = 0; h < vec.size(); h += head_dim) {
        for (std::size_t p = 0; p < head_dim / 2; ++p) {
            const double angle = ad::rotary_angle(position, p, head_dim, base);
            const double c = std::cos(angle), s = std::sin(angle);
            const double x0 = vec[h + 2 * p], x1 = vec[h + 2 * p + 1];
            vec[h + 2 * p] = x0 * c - x1 * s;
            vec[h + 2 * p + 1] = x0 * s + x1 * c;
        }
    }
}

template struct BoundParams<float>;
template struct BoundParams<double>;
template BoundParams<float> bind_params(ad::Tape<float>&, const ParamSet<float>&, bool);
template BoundParams<double> bind_params(ad::Tape<double>&, const ParamSet<double>&, bool);
template BatchForward<float> forward_batch(ad::Tape<float>&, const BoundParams<float>&, const ModelConfig&,
                                           std::span<const data::FrameMatrix>, Mode, Rng*);
template BatchForward<double> forward_batch(ad::Tape<double>&, const BoundParams<double>&, const ModelConfig&,
                                            std::span<const data::FrameMatrix>, Mode, Rng*);

}  // namespace gaitssl::model
