#include <sstream>

#include <gtest/gtest.h>

#include "platformtrial/io.hpp"
#include "support.hpp"

using namespace platformtrial;

namespace {

TrialData parse(const std::string& text) {
    std::istringstream in(text);
    return read_dataset(in);
}

std::string error_of(const std::string& text) {
    try {
        (void)parse(text);
    } catch (const InputError& e) {
        return e.what();
    }
    return "";
}

constexpr const char* kMinimalConfig = R"({
  "scenarios": [
    {"name": "A", "theta": [0, 0.5],
     "stages": [{"mu": 0, "ratio": 1, "n_placebo": 120, "sd_placebo": 2, "sd_treatment": 2},
                {"mu": 0.3, "ratio": 0.5, "n_placebo": 120, "sd_placebo": 1, "sd_treatment": 4}]}
  ],
  "methods": ["direct", "weighted-empirical"],
  "n_iter": 1000,
  "seed": 7
})";

}  // namespace

TEST(ReadDataset, ParsesAnyColumnOrderAndExtraColumns) {
    const TrialData d = parse("id,outcome,group,stage\n1,1.5,T,1\n2,0.5,P,1\n3, 2 ,T,2\n4,1,P,2\r\n\n5,1.25,P,2\n");
    ASSERT_EQ(d.stages.size(), 2u);
    EXPECT_EQ(d.stages[0].treatment, std::vector<double>{1.5});
    EXPECT_EQ(d.stages[1].placebo, (std::vector<double>{1.0, 1.25}));
    EXPECT_EQ(d.stages[1].treatment, std::vector<double>{2.0});
}

TEST(ReadDataset, ErrorsNameTheProblem) {
    EXPECT_NE(error_of("stage,group\n1,T\n").find("header"), std::string::npos);
    EXPECT_NE(error_of("stage,group,outcome\n1,X,2.0\n").find("line 2: unknown group label 'X'"), std::string::npos);
    EXPECT_NE(error_of("stage,group,outcome\nA,T,2.0\n").find("unknown stage label 'A'"), std::string::npos);
    EXPECT_NE(error_of("stage,group,outcome\n1,T,abc\n").find("line 2"), std::string::npos);
    EXPECT_NE(error_of("stage,group,outcome\n1,T,nan\n").find("finite"), std::string::npos);
    EXPECT_NE(error_of("stage,group,outcome\n1,T\n").find("too few fields"), std::string::npos);
    EXPECT_NE(error_of("stage,group,outcome\n1,T,1\n1,P,1\n3,T,1\n3,P,1\n").find("stage 2 is missing"),
              std::string::npos);
    EXPECT_NE(error_of("stage,group,outcome\n1,T,1\n").find("missing one arm"), std::string::npos);
    EXPECT_NE(error_of("stage,group,outcome\n").find("no rows"), std::string::npos);
}

TEST(ReadDataset, WriteThenReadIsLossless) {
    std::mt19937_64 gen(3);
    const TrialData d = pt_test::random_trial(gen, 3);
    std::ostringstream out;
    write_dataset(out, d);
    const TrialData back = parse(out.str());
    ASSERT_EQ(back.stages.size(), d.stages.size());
    for (std::size_t s = 0; s < d.stages.size(); ++s) {
        EXPECT_EQ(back.stages[s].placebo, d.stages[s].placebo);
        EXPECT_EQ(back.stages[s].treatment, d.stages[s].treatment);
    }
}

TEST(RunConfig, ParsesScenarioListAndDefaults) {
    const RunConfig cfg = parse_run_config(kMinimalConfig);
    ASSERT_EQ(cfg.scenarios.size(), 1u);
    EXPECT_EQ(cfg.scenarios[0].name, "A");
    EXPECT_EQ(cfg.scenarios[0].thetas, (std::vector<double>{0.0, 0.5}));
    EXPECT_EQ(cfg.scenarios[0].stages[1].n_treatment(), 60);
    EXPECT_EQ(cfg.methods, (std::vector<Method>{Method::direct, Method::weighted_empirical}));
    EXPECT_EQ(cfg.n_iter, 1000);
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.workers, 1u);
    EXPECT_DOUBLE_EQ(cfg.scenarios[0].alpha, 0.05);
}

TEST(RunConfig, SingleScenarioAndCaseStudyForms) {
    const RunConfig cfg = parse_run_config(R"({"theta": 0.45, "alpha": 0.025, "case_study_stages": [
        {"duration_months": 2, "enrollment_rate": 100, "active_drug_count": 2, "mu": 11.08, "sd_placebo": 2, "sd_treatment": 1.4},
        {"duration_months": 6, "enrollment_rate": 100, "active_drug_count": 3, "mu": 10.3, "sd_placebo": 1.2, "sd_treatment": 2.7}]})");
    ASSERT_EQ(cfg.scenarios.size(), 1u);
    const auto& sc = cfg.scenarios[0];
    EXPECT_EQ(sc.stages[0].n_placebo, 83);
    EXPECT_EQ(sc.stages[1].n_treatment(), 127);
    EXPECT_DOUBLE_EQ(sc.alpha, 0.025);
    EXPECT_EQ(cfg.methods.size(), std::size(kSimulationMethods));
}

TEST(RunConfig, SerializeRoundTrip) {
    const RunConfig cfg = parse_run_config(kMinimalConfig);
    EXPECT_EQ(parse_run_config(serialize_run_config(cfg)), cfg);
}

TEST(RunConfig, ErrorsCarryTheFieldPath) {
    auto message = [](const std::string& text) {
        try {
            (void)parse_run_config(text);
        } catch (const InputError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    EXPECT_NE(message(R"({"scenarios": [{"theta": 0}]})").find("$.scenarios[0].stages"), std::string::npos);
    EXPECT_NE(message(R"({"scenarios": [{"stages": []}]})").find("$.scenarios[0].theta"), std::string::npos);
    EXPECT_NE(message(R"({"theta": 0, "stages": [{"mu": 0, "ratio": 1, "n_placebo": 5, "sd_placebo": 1}]})")
                  .find("$.stages[0].sd_treatment"),
              std::string::npos);
    EXPECT_NE(message(R"({"theta": 0, "stages": [{"mu": 0, "ratio": 1, "n_placebo": 5, "sd_placebo": 1, "sd_treatment": -1}]})")
                  .find("standard deviations"),
              std::string::npos);
    EXPECT_NE(message(std::string(kMinimalConfig).replace(std::string(kMinimalConfig).find("direct"), 6, "magic"))
                  .find("unknown method 'magic'"),
              std::string::npos);
    EXPECT_NE(message("{not json").find("config:"), std::string::npos);
    EXPECT_NE(message(R"({"theta": 0, "n_iter": 0, "stages": [{"mu": 0, "ratio": 1, "n_placebo": 5, "sd_placebo": 1, "sd_treatment": 1}]})")
                  .find("n_iter"),
              std::string::npos);
}

TEST(Output, ProvenanceLineAndNumberFormat) {
    EXPECT_EQ(provenance_line("simulate", 42, 1000, 0xabcdefull),
              "# platformtrial 1.0.0 command=simulate seed=42 iters=1000 config_fnv1a=0000000000abcdef");
    EXPECT_EQ(format_number(0.1), "0.1");
    EXPECT_EQ(format_number(1.0 / 3.0), "0.333333333333333");
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}
