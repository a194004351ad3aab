// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "gaitssl/config.hpp"
#include "gaitssl/errors.hpp"

using namespace gaitssl;
using config::json;

namespace {

std::string error_of(const json& j, const std::string& file = "run.json") {
    try {
        config::parse_run_config(j, file);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
    const auto c = config::parse_run_config(json::object(), "x.json");
    EXPECT_EQ(c.model, model::ModelConfig{});
    EXPECT_EQ(c.train.epochs, 1000u);
    EXPECT_EQ(c.train.batch_trials, 32u);
    EXPECT_EQ(c.probe.outer_k, 3u);
    EXPECT_EQ(c.probe.inner_k, 4u);
    EXPECT_EQ(c.probe.l1_grid.size(), 7u);
    EXPECT_EQ(c.biomarker.reference, biomarker::ReferenceMode::per_trial);
    EXPECT_TRUE(c.biomarker.held_out);
}

TEST(Config, SectionSeedsDefaultToGlobalSeed) {
    const auto c = config::parse_run_config(json{{"seed", 77}}, "x.json");
    EXPECT_EQ(c.cohort.seed, 77u);
    EXPECT_EQ(c.train.seed, 77u);
    const auto d = config::parse_run_config(json{{"seed", 77}, {"train", {{"seed", 5}}}}, "x.json");
    EXPECT_EQ(d.train.seed, 5u);
    EXPECT_EQ(d.cohort.seed, 77u);
}

TEST(Config, UnknownKeyNamesKeyAndFile) {
    const auto msg = error_of(json{{"model", {{"hiden_dim", 8}}}}, "configs/desk.json");
    EXPECT_NE(msg.find("hiden_dim"), std::string::npos) << msg;
    EXPECT_NE(msg.find("/model/hiden_dim"), std::string::npos) << msg;
    EXPECT_NE(msg.find("configs/desk.json"), std::string::npos) << msg;
    EXPECT_NE(error_of(json{{"bogus", 1}}).find("/bogus"), std::string::npos);
}

TEST(Config, TypeErrorsNamePointer) {
    EXPECT_NE(error_of(json{{"train", {{"epochs", "many"}}}}).find("/train/epochs"), std::string::npos);
    EXPECT_NE(error_of(json{{"model", {{"use_cls_token", 1}}}}).find("/model/use_cls_token"), std::string::npos);
    EXPECT_NE(error_of(json{{"model", {{"positional", "absolute"}}}}).find("absolute"), std::string::npos);
    EXPECT_NE(error_of(json{{"train", {{"epochs", -3}}}}).find("/train/epochs"), std::string::npos);
}

TEST(Config, ValidationErrorsSurface) {
    EXPECT_FALSE(error_of(json{{"model", {{"hidden_dim", 10}}}}).empty());
    EXPECT_FALSE(error_of(json{{"train", {{"batch_trials", 1}}}}).empty());
    EXPECT_FALSE(error_of(json{{"cohort", {{"severity_min", -0.1}}}}).empty());
}

TEST(Config, ResolvedJsonRoundTrips) {
    const json in = {{"seed", 9},
                     {"model", {{"hidden_dim", 32}, {"positional", "rotary"}, {"use_cls_token", false}}},
                     {"train", {{"lambda", 0.0}, {"epochs", 10}}},
                     {"biomarker", {{"reference", "subject_mean"}}},
                     {"sweep", {{"grid", {{"model.hidden_dim", {16, 32}}}}}}};
    const auto c = config::parse_run_config(in, "a.json");
    const auto again = config::parse_run_config(config::to_json(c), "b.json");
    EXPECT_EQ(config::to_json(again), config::to_json(c));
    EXPECT_EQ(config::config_hash(again), config::config_hash(c));
    EXPECT_EQ(again.model.positional, model::Positional::rotary);
}

TEST(Config, HashIgnoresRunDirAndThreads) {
    auto a = config::parse_run_config(json{{"run_dir", "x"}, {"threads", 1}}, "a");
    auto b = config::parse_run_config(json{{"run_dir", "y"}, {"threads", 4}}, "b");
    EXPECT_EQ(config::config_hash(a), config::config_hash(b));
    auto c = config::parse_run_config(json{{"seed", 2}}, "c");
    EXPECT_NE(config::config_hash(a), config::config_hash(c));
    EXPECT_EQ(config::config_hash(a).size(), 16u);
}
