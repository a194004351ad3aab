// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "gaitssl/checkpoint.hpp"
#include "gaitssl/errors.hpp"
#include "gaitssl/io.hpp"

using namespace gaitssl;

namespace {

Checkpoint sample() {
    Checkpoint c;
    c.config.hidden_dim = 8;
    c.config.num_layers = 1;
    c.config.num_heads = 2;
    c.config.positional = model::Positional::rotary;
    Rng rng(3);
    c.params = model::init_params(c.config, rng);
    // Awkward values must survive: subnormals, negative zero, extremes.
    auto& v = c.params.arrays()[0].values;
    v[0] = std::numeric_limits<float>::denorm_min();
    v[1] = -0.0f;
    v[2] = std::numeric_limits<float>::max();
    v[3] = 0.1f;
    c.norm = data::NormStats{std::vector<double>(9, 0.1), std::vector<double>(9, 1.0 / 3.0)};
    c.optimizer = AdamWState<float>::zeros_like(c.params);
    c.optimizer->step = 17;
    c.optimizer->m.arrays()[1].values[0] = 1e-30f;
    c.epoch = 42;
    c.train_subjects = {"control_000", "stroke_001"};
    return c;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto c = sample();
    const auto bytes = serialize_checkpoint(c);
    const auto back = deserialize_checkpoint(bytes);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    ASSERT_EQ(back.params.count(), c.params.count());
    for (std::size_t k = 0; k < c.params.count(); ++k) {
        const auto& a = c.params.arrays()[k].values;
        const auto& b = back.params.arrays()[k].values;
        ASSERT_EQ(a.size(), b.size());
        EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0) << c.params.arrays()[k].name;
    }
    EXPECT_EQ(back.config, c.config);
    EXPECT_EQ(back.epoch, 42u);
    EXPECT_EQ(back.train_subjects, c.train_subjects);
    ASSERT_TRUE(back.norm.has_value());
    EXPECT_EQ(back.norm->stddev, c.norm->stddev);
    ASSERT_TRUE(back.optimizer.has_value());
    EXPECT_EQ(back.optimizer->step, 17u);
    EXPECT_EQ(back.optimizer->m, c.optimizer->m);
}

TEST(Checkpoint, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "gaitssl_ckpt_test.ckpt";
    const auto c = sample();
    save_checkpoint(c, path);
    EXPECT_EQ(serialize_checkpoint(load_checkpoint(path)), serialize_checkpoint(c));
}

TEST(Checkpoint, OptionalSectionsMayBeAbsent) {
    auto c = sample();
    c.norm.reset();
    c.optimizer.reset();
    const auto back = deserialize_checkpoint(serialize_checkpoint(c));
    EXPECT_FALSE(back.norm.has_value());
    EXPECT_FALSE(back.optimizer.has_value());
}

TEST(Checkpoint, CorruptInputIsDataError) {
    auto bytes = serialize_checkpoint(sample());
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(deserialize_checkpoint(bad_magic), DataError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    EXPECT_THROW(deserialize_checkpoint(truncated), DataError);
    auto bad_version = bytes;
    bad_version[8] = 99;
    EXPECT_THROW(deserialize_checkpoint(bad_version), DataError);
}

TEST(Checkpoint, ShapeMismatchWithConfigIsDataError) {
    auto c = sample();
    c.config.hidden_dim = 16;
    c.config.num_heads = 2;
    EXPECT_THROW(deserialize_checkpoint(serialize_checkpoint(c)), DataError);
}

TEST(Checkpoint, MissingFileIsDataError) {
    EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), DataError);
}
