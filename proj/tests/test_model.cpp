// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "gaitssl/errors.hpp"
#include "gaitssl/losses.hpp"
#include "gaitssl/model.hpp"
#include "oracles.hpp"

using namespace gaitssl;
using model::ModelConfig;

namespace {

ModelConfig tiny(model::Positional pos = model::Positional::learned, bool cls = true) {
    ModelConfig c;
    c.hidden_dim = 8;
    c.num_layers = 1;
    c.num_heads = 2;
    c.seq_len = 6;
    c.input_dim = 2;
    c.positional = pos;
    c.use_cls_token = cls;
    return c;
}

data::FrameMatrix random_window(const ModelConfig& c, Rng& rng) {
    data::FrameMatrix m(c.seq_len, c.input_dim);
    for (auto& v : m.values()) v = rng.normal();
    return m;
}

bool same_bits(float a, float b) { return std::memcmp(&a, &b, sizeof(float)) == 0; }

}  // namespace

TEST(Model, ParamCountMatchesHandTally) {
    // input 2*8+8, pos 7*8, cls 8, block (16 + 8*24+24 + 8*8+8 + 16 + 8*32+32 + 32*8+8),
    // final ln 16, pred 8*2+2, proj 8*16+16.
    EXPECT_EQ(model::param_count(tiny()), 24u + 56 + 8 + 872 + 16 + 18 + 144);
    EXPECT_EQ(model::param_count(tiny(model::Positional::rotary, false)), 24u + 872 + 16 + 18 + 144);
    Rng rng(1);
    EXPECT_EQ(model::init_params(tiny(), rng).total_size(), model::param_count(tiny()));
}

TEST(Model, InitIsDeterministicWithUnitGains) {
    Rng a(5), b(5);
    const auto pa = model::init_params(tiny(), a);
    const auto pb = model::init_params(tiny(), b);
    EXPECT_EQ(pa, pb);
    for (const auto& arr : pa.arrays()) {
        if (arr.name.ends_with(".gain")) {
            for (float v : arr.values) EXPECT_EQ(v, 1.0f) << arr.name;
        }
        if (arr.name.ends_with(".bias")) {
            for (float v : arr.values) EXPECT_EQ(v, 0.0f) << arr.name;
        }
    }
}

TEST(Model, InitWeightsHaveGpt2Scale) {
    ModelConfig c;
    Rng rng(3);
    const auto p = model::init_params(c, rng);
    const auto& w = p.at("blocks.0.ffn.up.weight").values;
    double s = 0, s2 = 0;
    for (float v : w) {
        s += v;
        s2 += double(v) * v;
    }
    const double n = static_cast<double>(w.size());
    EXPECT_NEAR(s / n, 0.0, 0.002);
    EXPECT_NEAR(std::sqrt(s2 / n), 0.02, 0.001);
}

TEST(Model, ConfigValidation) {
    auto c = tiny();
    c.hidden_dim = 10;
    c.num_heads = 4;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.fcm_mask_prob = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny(model::Positional::rotary);
    c.hidden_dim = 6;
    c.num_heads = 2;  // head dim 3
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, EvalForwardIsDeterministicAndUnitNorm) {
    ModelConfig c;
    Rng init(2);
    const auto p = model::init_params(c, init);
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        const auto w = random_window(c, rng);
        const auto a = model::forward(p, c, w, model::Mode::eval, nullptr);
        if (i < 5) {
            const auto b = model::forward(p, c, w, model::Mode::eval, nullptr);
            EXPECT_EQ(a.states, b.states);
            EXPECT_EQ(a.projected, b.projected);
        }
        double n = 0;
        for (float v : a.projected) n += double(v) * v;
        EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
        ASSERT_EQ(a.states.size(), c.tokens() * c.hidden_dim);
        ASSERT_EQ(a.predictions.size(), c.seq_len * c.input_dim);
    }
}

TEST(Model, TrainModeRequiresRng) {
    auto c = tiny();
    Rng init(2), rng(3);
    const auto p = model::init_params(c, init);
    EXPECT_THROW(model::forward(p, c, random_window(c, rng), model::Mode::train, nullptr), std::invalid_argument);
}

TEST(Model, PooledIsClsOrLastToken) {
    for (bool cls : {true, false}) {
        auto c = tiny(model::Positional::learned, cls);
        Rng init(2), rng(3);
        const auto p = model::init_params(c, init);
        const auto out = model::forward(p, c, random_window(c, rng), model::Mode::eval, nullptr);
        const std::size_t row = c.tokens() - 1;
        for (std::size_t h = 0; h < c.hidden_dim; ++h) EXPECT_EQ(out.pooled[h], out.states[row * c.hidden_dim + h]);
    }
}

TEST(Model, BatchForwardMatchesSingleWindow) {
    auto c = tiny(model::Positional::rotary);
    Rng init(2), rng(3);
    const auto p = model::init_params(c, init);
    std::vector<data::FrameMatrix> windows{random_window(c, rng), random_window(c, rng), random_window(c, rng)};
    ad::Tape<float> tape;
    const auto bound = model::bind_params(tape, p, false);
    const auto batch = model::forward_batch<float>(tape, bound, c, windows, model::Mode::eval, nullptr);
    for (std::size_t b = 0; b < windows.size(); ++b) {
        const auto single = model::forward(p, c, windows[b], model::Mode::eval, nullptr);
        for (std::size_t i = 0; i < single.projected.size(); ++i)
            EXPECT_NEAR(batch.projected.value()[b * c.projection_dim + i], single.projected[i], 1e-6);
    }
}

// Causality: token states at positions <= t never see inputs after t.
TEST(Model, CausalInvarianceIsBitExact) {
    for (auto pos : {model::Positional::learned, model::Positional::rotary}) {
        ModelConfig c;
        c.hidden_dim = 32;
        c.num_layers = 2;
        c.positional = pos;
        Rng init(6);
        const auto p = model::init_params(c, init);
        Rng rng(8);
        for (int k = 0; k < 25; ++k) {
            const auto w = random_window(c, rng);
            const std::size_t t = rng.uniform_int(c.seq_len - 1);
            auto w2 = w;
            for (std::size_t r = t + 1; r < c.seq_len; ++r)
                for (std::size_t j = 0; j < c.input_dim; ++j) w2(r, j) += rng.normal(0.0, 5.0);
            const auto a = model::forward(p, c, w, model::Mode::eval, nullptr);
            const auto b = model::forward(p, c, w2, model::Mode::eval, nullptr);
            for (std::size_t i = 0; i <= t; ++i)
                for (std::size_t h = 0; h < c.hidden_dim; ++h)
                    ASSERT_TRUE(same_bits(a.states[i * c.hidden_dim + h], b.states[i * c.hidden_dim + h]))
                        << "t=" << t << " row " << i;
            // The [CLS] state sees everything, so it must move.
            EXPECT_NE(a.pooled, b.pooled);
        }
    }
}

TEST(Model, RemovingClsLeavesTemporalStates) {
    const auto with = tiny();
    const auto without = tiny(model::Positional::learned, false);
    Rng init(2), rng(3);
    const auto p = model::init_params(with, init);
    ParamSet<float> q;
    for (const auto& a : p.arrays())
        if (a.name != "cls_token") q.add(a.name, a.shape, a.values);
    const auto w = random_window(with, rng);
    const auto a = model::forward(p, with, w, model::Mode::eval, nullptr);
    const auto b = model::forward(q, without, w, model::Mode::eval, nullptr);
    for (std::size_t i = 0; i < with.seq_len * with.hidden_dim; ++i) EXPECT_NEAR(a.states[i], b.states[i], 1e-6);
}

TEST(Rotary, PositionZeroIsIdentity) {
    Rng rng(1);
    std::vector<double> v(16);
    for (auto& x : v) x = rng.normal();
    auto r = v;
    model::apply_rotary(r, 8, 0);
    EXPECT_EQ(r, v);
}

TEST(Rotary, MatchesScalarOracle) {
    Rng rng(2);
    for (std::size_t pos : {1u, 7u, 89u}) {
        std::vector<double> v(8);
        for (auto& x : v) x = rng.normal();
        auto r = v;
        model::apply_rotary(r, 4, pos);
        const auto ref = oracle::rotary(v, 4, pos);
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(r[i], ref[i], 1e-12);
    }
}

TEST(Rotary, RelativeShiftIdentity) {
    Rng rng(3);
    for (int k = 0; k < 100; ++k) {
        std::vector<double> q(16), key(16);
        for (auto& x : q) x = rng.normal();
        for (auto& x : key) x = rng.normal();
        const std::size_t m = rng.uniform_int(100), n = rng.uniform_int(100), s = rng.uniform_int(100);
        auto dot_at = [&](std::size_t pm, std::size_t pn) {
            auto a = q, b = key;
            model::apply_rotary(a, 16, pm);
            model::apply_rotary(b, 16, pn);
            double d = 0;
            for (std::size_t i = 0; i < 16; ++i) d += a[i] * b[i];
            return d;
        };
        EXPECT_NEAR(dot_at(m, n), dot_at(m + s, n + s), 1e-5);
    }
}

TEST(Rotary, OddHeadDimensionRejected) {
    std::vector<double> v(6, 1.0);
    EXPECT_THROW(model::apply_rotary(v, 3, 1), std::invalid_argument);
}

TEST(Rotary, TapeOpMatchesDirectRotation) {
    Rng rng(4);
    std::vector<double> v(3 * 8);
    for (auto& x : v) x = rng.normal();
    const std::vector<std::size_t> pos{0, 3, 50};
    ad::Tape<double> tape;
    const auto out = ad::rotary<double>(tape.constant({3, 8}, v), 4, pos).value();
    for (std::size_t r = 0; r < 3; ++r) {
        std::vector<double> row(v.begin() + r * 8, v.begin() + (r + 1) * 8);
        model::apply_rotary(row, 4, pos[r]);
        for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out[r * 8 + i], row[i], 1e-12);
    }
}

TEST(Fcm, ZeroProbIsIdentity) {
    Rng rng(1);
    std::vector<double> tokens(50 * 4);
    for (auto& x : tokens) x = rng.normal();
    const auto before = tokens;
    const auto mask = model::fcm_mask(tokens, 4, 0.0, rng);
    EXPECT_EQ(tokens, before);
    for (auto m : mask) EXPECT_EQ(m, 0);
}

TEST(Fcm, MaskedFractionWithinThreeSigma) {
    const std::size_t n = 100000, H = 2;
    Rng rng(7);
    std::vector<double> tokens(n * H);
    for (auto& x : tokens) x = rng.normal() + 3.0;
    const auto before = tokens;
    const auto mask = model::fcm_mask(tokens, H, 0.2, rng);
    ASSERT_EQ(mask.size(), n);
    std::size_t masked = 0;
    for (std::size_t t = 0; t < n; ++t) {
        masked += mask[t];
        for (std::size_t h = 0; h < H; ++h) {
            if (mask[t])
                ASSERT_EQ(tokens[t * H + h], 0.0);
            else
                ASSERT_EQ(tokens[t * H + h], before[t * H + h]);
        }
    }
    const double frac = static_cast<double>(masked) / n;
    EXPECT_NEAR(frac, 0.2, 3 * std::sqrt(0.2 * 0.8 / n));
}

TEST(Fcm, TrainModeMasksTokensButNotTargets) {
    auto c = tiny();
    c.seq_len = 40;
    c.fcm_mask_prob = 0.5;
    Rng init(2), rng(3);
    const auto p = model::init_params(c, init);
    std::vector<data::FrameMatrix> windows{random_window(c, rng), random_window(c, rng)};
    std::vector<data::FrameMatrix> targets;
    for (const auto& w : windows) targets.push_back(w.slice_rows(1, c.seq_len - 1));
    const auto windows_before = windows;
    const auto targets_before = targets;

    ad::Tape<double> tape;
    const auto bound = model::bind_params(tape, p.cast<double>(), false);
    Rng fwd(9);
    const auto out = model::forward_batch<double>(tape, bound, c, windows, model::Mode::train, &fwd);
    ASSERT_EQ(out.augmentations.size(), 2u);
    std::size_t masked = 0;
    for (const auto& a : out.augmentations)
        for (auto m : a.masked) masked += m;
    EXPECT_GT(masked, 0u);
    EXPECT_EQ(windows, windows_before);
    EXPECT_EQ(targets, targets_before);
    // Target row t is still the raw next input frame.
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t + 1 < c.seq_len; ++t)
            for (std::size_t j = 0; j < c.input_dim; ++j) EXPECT_EQ(targets[b](t, j), windows[b](t + 1, j));

    const double loss = losses::prediction<double>(out.predictions, targets).item();
    std::vector<double> pred, tgt;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t + 1 < c.seq_len; ++t)
            for (std::size_t j = 0; j < c.input_dim; ++j) {
                pred.push_back(out.predictions.value()[(b * c.seq_len + t) * c.input_dim + j]);
                tgt.push_back(windows_before[b](t + 1, j));
            }
    EXPECT_NEAR(loss, oracle::prediction_mse(pred, tgt), 1e-12);
}

TEST(Augmentation, DisabledInEval) {
    auto c = tiny();
    c.fcm_mask_prob = 0.5;
    c.noise_aug_scale = 1.0;
    Rng init(2), rng(3);
    const auto p = model::init_params(c, init);
    const auto w = random_window(c, rng);
    Rng r1(1), r2(2);
    EXPECT_EQ(model::forward(p, c, w, model::Mode::eval, &r1).states,
              model::forward(p, c, w, model::Mode::eval, &r2).states);
    EXPECT_NE(model::forward(p, c, w, model::Mode::train, &r1).states,
              model::forward(p, c, w, model::Mode::train, &r2).states);
}

TEST(Augmentation, NoiseHasConfiguredScale) {
    ModelConfig c;
    c.noise_aug_scale = 0.1;
    Rng rng(5);
    double s2 = 0;
    std::size_t n = 0;
    for (int k = 0; k < 50; ++k) {
        const auto a = model::draw_augmentation(c, rng);
        for (double v : a.noise) {
            s2 += v * v;
            ++n;
        }
    }
    EXPECT_NEAR(std::sqrt(s2 / n), 0.1, 0.003);
}
