#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "tbu/config.hpp"

using namespace tbu;
using nlohmann::json;

namespace {

std::string error_of(const json& doc) {
    try {
        parse_run_config(doc);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
    const auto run = parse_run_config(json::object());
    ASSERT_EQ(run.experiments.size(), 1u);
    const auto& e = run.experiments[0];
    const auto d = default_experiment();
    EXPECT_EQ(e.method, d.method);
    EXPECT_EQ(e.acquisition, d.acquisition);
    EXPECT_EQ(e.rounds, d.rounds);
    EXPECT_EQ(e.seeds, d.seeds);
    EXPECT_EQ(e.name, "tbu_entropy");
    EXPECT_FALSE(run.out.has_value());
}

TEST(Config, DefaultDocumentRoundTrips) {
    const json doc = default_config_json();
    const auto run = parse_run_config(doc);
    ASSERT_EQ(run.experiments.size(), 1u);
    json again = to_json(run.experiments[0]);
    again["name"] = doc["name"];
    EXPECT_EQ(again, doc);
}

TEST(Config, UnknownKeysNameTheirPath) {
    EXPECT_EQ(error_of({{"roundz", 3}}), "unknown key 'roundz'");
    EXPECT_EQ(error_of({{"proxy", {{"train", {{"epoch", 3}}}}}}), "unknown key 'proxy.train.epoch'");
    EXPECT_EQ(error_of({{"data", {{"planted", {{"pool", 3}}}}}}), "unknown key 'data.planted.pool'");
    EXPECT_EQ(error_of({{"target", {{"train", {{"views", {{"blur", 1}}}}}}}}), "unknown key 'target.train.views.blur'");
}

TEST(Config, TypeErrors) {
    EXPECT_NE(error_of({{"rounds", "four"}}).find("rounds: expected an integer"), std::string::npos);
    EXPECT_NE(error_of({{"rounds", -1}}).find("non-negative"), std::string::npos);
    EXPECT_NE(error_of({{"q", "ten"}}).find("q: expected a number"), std::string::npos);
    EXPECT_NE(error_of({{"backfill", 1}}).find("backfill: expected a boolean"), std::string::npos);
    EXPECT_NE(error_of({{"seeds", {0, "x"}}}).find("seeds[1]"), std::string::npos);
    EXPECT_NE(error_of({{"method", json::array()}}).find("must not be empty"), std::string::npos);
    EXPECT_NE(error_of({{"method", "random"}}).find("unknown method"), std::string::npos);
    EXPECT_NE(error_of({{"robustness", {"blur"}}}).find("blur"), std::string::npos);
    EXPECT_NE(error_of(json::array()).find("expected an object"), std::string::npos);
}

TEST(Config, ValuesOutsideTheirRangeAreRejected) {
    EXPECT_FALSE(error_of({{"q", 150}}).empty());
    EXPECT_FALSE(error_of({{"persistence_count", 0}}).empty());
    EXPECT_FALSE(error_of({{"budget", 0}}).empty());
    EXPECT_FALSE(error_of({{"seeds", {1, 1}}}).empty());
    EXPECT_FALSE(error_of({{"data", json::object()}}).empty());
    EXPECT_FALSE(error_of({{"data", {{"csv", {{"test", 10}}}}}}).empty());
}

TEST(Config, CrossProductExpansion) {
    const auto run = parse_run_config({{"method", {"same", "tbu"}}, {"acquisition", {"entropy", "badge"}}, {"q", 20.0}});
    ASSERT_EQ(run.experiments.size(), 4u);
    std::vector<std::string> names;
    for (const auto& e : run.experiments) {
        names.push_back(e.name);
        EXPECT_EQ(e.filter.q, 20.0);
    }
    EXPECT_EQ(names, (std::vector<std::string>{"same_entropy", "same_badge", "tbu_entropy", "tbu_badge"}));
    // 'same' takes the target as its own proxy; the others keep the configured proxy.
    EXPECT_EQ(run.experiments[0].proxy.spec, run.experiments[0].target.spec);
    EXPECT_EQ(run.experiments[2].proxy.spec, default_proxy().spec);
}

TEST(Config, SameWithExplicitMismatchedProxyIsRejected) {
    EXPECT_FALSE(error_of({{"method", "same"}, {"proxy", {{"hidden_widths", {7}}}}}).empty());
    EXPECT_TRUE(error_of({{"method", "same"}}).empty());
    // In a cross product the explicit proxy belongs to the other methods.
    EXPECT_TRUE(error_of({{"method", {"same", "diff"}}, {"proxy", {{"hidden_widths", {7}}}}}).empty());
}

TEST(Config, ModelOverridesMergeOntoDefaults) {
    const auto m = parse_model_config({{"activation", "tanh"}, {"train", {{"epochs", 3}, {"views", {{"dropout_rate", 0.0}}}}}},
                                      default_proxy());
    EXPECT_EQ(m.spec.activation, Activation::tanh);
    EXPECT_EQ(m.spec.hidden_widths, default_proxy().spec.hidden_widths);
    EXPECT_EQ(m.train.epochs, 3u);
    EXPECT_EQ(m.train.views.dropout_rate, 0.0);
    EXPECT_EQ(m.train.views.weak_noise_scale, default_proxy().train.views.weak_noise_scale);
}

TEST(Config, PlantedSpecParsing) {
    const auto spec = parse_planted_spec({{"pool_size", 50}, {"seed", 9}, {"flip_p", 0.25}});
    EXPECT_EQ(spec.pool_size, 50u);
    EXPECT_EQ(spec.seed, 9u);
    EXPECT_EQ(spec.flip_p, 0.25);
    EXPECT_EQ(spec.num_classes, PlantedPoolSpec{}.num_classes);
    EXPECT_EQ(parse_planted_spec(to_json(spec)).flip_p, 0.25);
}

TEST(Config, FileErrors) {
    const auto dir = std::filesystem::temp_directory_path() / "tbu_config_files";
    std::filesystem::create_directories(dir);
    try {
        read_json_file(dir / "absent.json");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("absent.json"), std::string::npos);
    }
    std::ofstream(dir / "bad.json") << "{\"rounds\": ";
    EXPECT_THROW(read_json_file(dir / "bad.json"), ParseError);
    std::ofstream(dir / "ok.json") << R"({"name": "demo", "rounds": 2, "out": "somewhere"})";
    const auto run = load_run_config(dir / "ok.json");
    EXPECT_EQ(run.name, "demo");
    EXPECT_EQ(run.out->string(), "somewhere");
    EXPECT_EQ(run.experiments[0].rounds, 2u);
}
