#include "tlab/config.hpp"
#include "tlab/csv.hpp"
#include "tlab/report.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace tlab;
namespace fs = std::filesystem;

namespace {

struct Output {
    int status = -1;
    std::string text;
};

Output run(const std::string& args) {
    const std::string cmd = std::string(TLAB_CLI_PATH) + " " + args + " 2>&1";
    Output o;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return o;
    char buf[4096];
    std::size_t k;
    while ((k = fread(buf, 1, sizeof buf, p)) > 0) o.text.append(buf, k);
    const int st = pclose(p);
    o.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream f(p);
    std::string line;
    while (std::getline(f, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::stringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("tlab_cli_" + std::string(info->name()) + "_" +
                                            std::to_string(static_cast<long>(::getpid())));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write_config(const std::string& name, const Json& j) {
        const fs::path p = dir_ / name;
        std::ofstream(p) << j.dump(2);
        return p;
    }

    static Json minimal() {
        return Json{{"d", 16},
                    {"gamma_tgt", 4.0},
                    {"gamma_src_grid", {2.0}},
                    {"m_list", {1}},
                    {"noise", {{"sigma_eta_sq", 0.05}, {"sigma_xi_sq", 0.05}, {"sigma_eps_sq", 0.1}}},
                    {"runs_per_point", 1},
                    {"val_size", 40},
                    {"test_size", 40},
                    {"seed", 3},
                    {"threads", 1}};
    }

    fs::path dir_;
};

}  // namespace

TEST_F(CliTest, SweepMinimalConfigHasHeaderAndBaselineRows) {
    const auto cfg = write_config("c.json", minimal());
    const auto out = dir_ / "s.csv";
    const Output o = run("sweep --config " + cfg.string() + " --out " + out.string());
    ASSERT_EQ(o.status, 0) << o.text;
    const auto rows = read_csv(out);
    ASSERT_EQ(rows.size(), 1u + 1u + 4u);
    EXPECT_EQ(slurp(out).substr(0, slurp(out).find('\n')),
              "gamma_src,m,method,mean_error,stderr,mean_alpha,mean_rho,n_runs");
    for (const auto& r : rows) EXPECT_EQ(r.size(), 8u);
    EXPECT_EQ(rows[1][2], "transfer");
    EXPECT_EQ(rows[2][2], "min_norm");
    EXPECT_EQ(rows[5][2], "null");
    EXPECT_TRUE(fs::exists(dir_ / "s.csv.manifest.json"));
    const Json man = Json::parse(slurp(dir_ / "s.csv.manifest.json"));
    EXPECT_EQ(man.at("master_seed"), 3u);
    EXPECT_EQ(man.at("command"), "sweep");
    EXPECT_EQ(man.at("points").size(), 1u);
    EXPECT_EQ(man.at("points")[0].at("n_tilde"), 8);
    EXPECT_TRUE(man.contains("timestamp"));
    EXPECT_TRUE(man.contains("version"));
}

TEST_F(CliTest, SweepIsByteIdenticalOnRerunAndAcrossThreadCounts) {
    Json j = minimal();
    j["gamma_src_grid"] = {0.5, 2.0};
    j["runs_per_point"] = 3;
    const auto cfg = write_config("c.json", j);
    ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + (dir_ / "a.csv").string()).status, 0);
    ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + (dir_ / "b.csv").string()).status, 0);
    ASSERT_EQ(run("sweep --config " + cfg.string() + " --threads 3 --out " + (dir_ / "c.csv").string()).status, 0);
    EXPECT_EQ(slurp(dir_ / "a.csv"), slurp(dir_ / "b.csv"));
    EXPECT_EQ(slurp(dir_ / "a.csv"), slurp(dir_ / "c.csv"));
}

TEST_F(CliTest, SweepRowCountIsGridTimesMethodsPlusBaselines) {
    Json j = minimal();
    j["gamma_src_grid"] = {0.5, 2.0, 3.0};
    j["m_list"] = {1, 2};
    const auto cfg = write_config("c.json", j);
    const auto out = dir_ / "s.csv";
    ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + out.string()).status, 0);
    EXPECT_EQ(read_csv(out).size(), 1u + 3u * (2u + 4u));
}

TEST_F(CliTest, SeedAndRunsOverridesTakeEffect) {
    const auto cfg = write_config("c.json", minimal());
    ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + (dir_ / "a.csv").string()).status, 0);
    ASSERT_EQ(run("sweep --config " + cfg.string() + " --seed 99 --runs 2 --out " + (dir_ / "b.csv").string()).status,
              0);
    const auto a = read_csv(dir_ / "a.csv"), b = read_csv(dir_ / "b.csv");
    EXPECT_NE(a[1][3], b[1][3]);
    EXPECT_EQ(b[1][7], "2");
    EXPECT_EQ(Json::parse(slurp(dir_ / "b.csv.manifest.json")).at("master_seed"), 99u);
}

TEST_F(CliTest, InvalidConfigReportsEveryFieldAndFails) {
    Json j = minimal();
    j["d"] = "sixteen";
    j["relation"] = {{"kind", "subspace"}, {"r", 0}};
    j["modes"] = {"identity", "nonsense"};
    j["typo_key"] = 1;
    const auto cfg = write_config("c.json", j);
    const Output o = run("sweep --config " + cfg.string() + " --out " + (dir_ / "x.csv").string());
    EXPECT_NE(o.status, 0);
    EXPECT_NE(o.text.find("d: expected an integer"), std::string::npos) << o.text;
    EXPECT_NE(o.text.find("relation.r:"), std::string::npos) << o.text;
    EXPECT_NE(o.text.find("modes[1]:"), std::string::npos) << o.text;
    EXPECT_NE(o.text.find("typo_key: unknown key"), std::string::npos) << o.text;
    EXPECT_FALSE(fs::exists(dir_ / "x.csv"));
}

TEST_F(CliTest, MalformedJsonAndMissingFileFail) {
    std::ofstream(dir_ / "broken.json") << "{\"d\": 16,";
    EXPECT_NE(run("sweep --config " + (dir_ / "broken.json").string() + " --out " + (dir_ / "x.csv").string()).status,
              0);
    EXPECT_NE(run("sweep --config " + (dir_ / "nope.json").string() + " --out " + (dir_ / "x.csv").string()).status,
              0);
    EXPECT_NE(run("sweep --out " + (dir_ / "x.csv").string()).status, 0);
}

TEST_F(CliTest, TheoryFlagsThresholdWithEmptyError) {
    Json j = minimal();
    j["gamma_src_grid"] = {0.5, 1.0, 2.0};
    j["theory"] = {{"modes", {"simple"}}};
    const auto cfg = write_config("c.json", j);
    const auto out = dir_ / "t.csv";
    ASSERT_EQ(run("theory --config " + cfg.string() + " --out " + out.string()).status, 0);
    const auto rows = read_csv(out);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_EQ(slurp(out).substr(0, slurp(out).find('\n')), "gamma_src,m,mode,error,flag");
    EXPECT_EQ(rows[2][0], "1");
    EXPECT_EQ(rows[2][3], "");
    EXPECT_EQ(rows[2][4], "threshold");
    EXPECT_EQ(rows[1][4], "");
    EXPECT_FALSE(rows[1][3].empty());
    const std::string body = slurp(out);
    EXPECT_EQ(body.find("inf"), std::string::npos);
    EXPECT_EQ(body.find("nan"), std::string::npos);
}

TEST_F(CliTest, TheoryManyUnderparamModelsApproachNoiseFloor) {
    Json j = minimal();
    j["gamma_src_grid"] = {0.5};
    j["m_list"] = {1000000};
    j["theory"] = {{"modes", {"simple"}}};
    const auto cfg = write_config("c.json", j);
    const auto out = dir_ / "t.csv";
    ASSERT_EQ(run("theory --config " + cfg.string() + " --out " + out.string()).status, 0);
    const auto rows = read_csv(out);
    EXPECT_NEAR(std::stod(rows[1][3]), 0.1, 1e-4);
}

TEST_F(CliTest, TheoryGeneralModeFlagsThresholdBand) {
    Json j = minimal();
    j["gamma_src_grid"] = {0.5, 1.0, 2.0};
    j["theory"] = {{"modes", {"general", "debias"}}};
    const auto cfg = write_config("c.json", j);
    const auto out = dir_ / "t.csv";
    ASSERT_EQ(run("theory --config " + cfg.string() + " --out " + out.string()).status, 0);
    const auto rows = read_csv(out);
    ASSERT_EQ(rows.size(), 7u);
    EXPECT_EQ(rows[1][2], "general");
    EXPECT_EQ(rows[2][4], "threshold");
    EXPECT_EQ(rows[4][2], "debias");
    EXPECT_FALSE(rows[3][3].empty());
}

TEST_F(CliTest, BiasVarSchemaIsStable) {
    Json j = minimal();
    j["biasvar"] = {{"main_runs", 2}, {"sub_runs", 3}, {"alpha", "formula"}};
    j["modes"] = {"identity", "debias_known"};
    const auto cfg = write_config("c.json", j);
    const auto out = dir_ / "bv.csv";
    const Output o = run("biasvar --config " + cfg.string() + " --out " + out.string());
    ASSERT_EQ(o.status, 0) << o.text;
    const auto rows = read_csv(out);
    EXPECT_EQ(slurp(out).substr(0, slurp(out).find('\n')), "gamma_src,m,method,bias_sq,variance,total,residual");
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& r : rows) EXPECT_EQ(r.size(), 7u);
    EXPECT_EQ(rows[1][2], "transfer");
    EXPECT_EQ(rows[2][2], "debias_known");
}

TEST_F(CliTest, BiasVarRejectsCorrelatedInputs) {
    Json j = minimal();
    j["cov_x"] = {{"kind", "exp_decay"}, {"rate", 0.5}};
    const auto cfg = write_config("c.json", j);
    const Output o = run("biasvar --config " + cfg.string() + " --out " + (dir_ / "bv.csv").string());
    EXPECT_NE(o.status, 0);
    EXPECT_NE(o.text.find("Sigma_x"), std::string::npos) << o.text;
}

TEST_F(CliTest, TuneFactorSchemaAndBaseline) {
    Json j = minimal();
    j["gamma_src_grid"] = {0.5, 4.0};
    j["m_list"] = {3};
    j["rho_grid"] = {0.25, 0.5, 1.0};
    const auto cfg = write_config("c.json", j);
    const auto out = dir_ / "tf.csv";
    const Output o = run("tune-factor --config " + cfg.string() + " --out " + out.string());
    ASSERT_EQ(o.status, 0) << o.text;
    EXPECT_EQ(slurp(out).substr(0, slurp(out).find('\n')),
              "gamma_src,m,mean_rho,stderr_rho,baseline_rho,mean_error,stderr,n_runs");
    const auto rows = read_csv(out);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[1][4], "1");
    EXPECT_EQ(rows[2][4], "0.25");
    const double r = std::stod(rows[2][2]);
    EXPECT_TRUE(r == 0.25 || r == 0.5 || r == 1.0);
}

TEST_F(CliTest, CheckOneModelNoisySourcesIsNegativeEverywhere) {
    const Output o = run("check --d 128 --n-tilde 32 --m 1 --sigma-eta-sq 0.8 --sigma-xi-sq 0.5 --b 1");
    ASSERT_EQ(o.status, 0) << o.text;
    EXPECT_NE(o.text.find("negative transfer for all overparameterization levels"), std::string::npos) << o.text;
    // lhs = 0.8 + 128 * 0.5 / 95, rhs = 1
    EXPECT_NE(o.text.find("= 1.473684211"), std::string::npos) << o.text;
    EXPECT_NE(o.text.find("debiasing cannot be beneficial"), std::string::npos);
}

TEST_F(CliTest, CheckReportsMinimumModelsAndBothSides) {
    // d/n_tilde = 4: debiasing needs m >= 6. With noise 0.05 each:
    // lhs = (0.05 + 128 * 0.05 / 95) * (4 + 256/96) = 0.78245614035..., rhs = (m - 5) b.
    const Output o = run("check --d 128 --gamma-src 4 --m 6 --sigma-eta-sq 0.05 --sigma-xi-sq 0.05 --b 1");
    ASSERT_EQ(o.status, 0) << o.text;
    EXPECT_NE(o.text.find("minimum number of models for debiasing (m > 1 + d/n_tilde): 6"), std::string::npos)
        << o.text;
    EXPECT_NE(o.text.find("= 0.7824561404"), std::string::npos) << o.text;
    EXPECT_NE(o.text.find("verdict: debiasing is beneficial"), std::string::npos) << o.text;
    EXPECT_NE(o.text.find("smallest m for which debiasing is beneficial: 6"), std::string::npos) << o.text;
    const Output few = run("check --d 128 --gamma-src 4 --m 5 --sigma-eta-sq 0.05 --sigma-xi-sq 0.05 --b 1");
    EXPECT_NE(few.text.find("debiasing cannot be beneficial"), std::string::npos) << few.text;
}

TEST_F(CliTest, CheckFlagsThresholdAndRejectsAmbiguousInput) {
    const Output o = run("check --d 64 --n-tilde 64 --m 2 --sigma-eta-sq 0.1 --sigma-xi-sq 0.1 --b 1");
    EXPECT_EQ(o.status, 0);
    EXPECT_NE(o.text.find("flag: threshold"), std::string::npos) << o.text;
    EXPECT_NE(run("check --d 64 --m 2 --sigma-eta-sq 0.1 --sigma-xi-sq 0.1 --b 1").status, 0);
    EXPECT_NE(run("check --d 64 --n-tilde 8 --gamma-src 8 --m 2 --sigma-eta-sq 0.1 --sigma-xi-sq 0.1 --b 1").status, 0);
    EXPECT_NE(run("check --d 64 --n-tilde 8 --m 0 --sigma-eta-sq 0.1 --sigma-xi-sq 0.1 --b 1").status, 0);
}

TEST(Csv, SeventeenSignificantDigitsRoundTrip) {
    EXPECT_EQ(format_double(0.1), "0.10000000000000001");
    EXPECT_EQ(format_double(2.0), "2");
    EXPECT_EQ(format_double(-1.5e-300), "-1.5000000000000001e-300");
    for (double x : {1.0 / 3.0, 123456.789, 6.02214076e23, -2.2250738585072014e-308}) {
        EXPECT_EQ(std::strtod(format_double(x).c_str(), nullptr), x);
    }
}

TEST(Csv, NonFiniteBecomesEmptyCell) {
    EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "");
    EXPECT_EQ(format_double(std::nan("")), "");
}

TEST(Csv, WriterQuotesAndChecksWidth) {
    std::ostringstream os;
    CsvWriter w(os, {"a", "b"});
    w << "x,y" << 1.5;
    w.end_row();
    EXPECT_EQ(os.str(), "a,b\n\"x,y\",1.5\n");
    w << 1;
    EXPECT_THROW(w.end_row(), std::logic_error);
}

TEST(Config, DefaultsAndGridSpecs) {
    const ToolConfig tc = parse_config(Json::parse(R"({"alpha_grid": {"spacing": "log", "lo": 0.01, "hi": 1, "count": 3},
                                                        "relation": {"kind": "scaled", "factor": 0.5,
                                                                     "base": {"kind": "circulant", "kappa": 2}},
                                                        "modes": ["true_h", "debias_tuned"]})"));
    EXPECT_EQ(tc.sweep.d, 128);
    ASSERT_EQ(tc.sweep.alpha_grid.size(), 3u);
    EXPECT_DOUBLE_EQ(tc.sweep.alpha_grid[1], 0.1);
    EXPECT_EQ(tc.sweep.relation.kind, TaskRelationSpec::Kind::Scaled);
    EXPECT_EQ(tc.sweep.relation.base->kind, TaskRelationSpec::Kind::Circulant);
    EXPECT_EQ(tc.sweep.modes.size(), 2u);
    EXPECT_FALSE(tc.threads_given);
}

TEST(Config, CollectsAllProblems) {
    try {
        parse_config(Json::parse(R"({"m_list": [1, 0], "noise": {"sigma_eps_sq": -1}, "cov_x": {"kind": "exp_decay"},
                                     "alpha_grid": [1, 0.5], "biasvar": {"sub_runs": 1}})"));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const auto& p = e.problems();
        auto has = [&](const std::string& s) {
            for (const auto& x : p)
                if (x.rfind(s, 0) == 0) return true;
            return false;
        };
        EXPECT_TRUE(has("m_list[1]"));
        EXPECT_TRUE(has("noise.sigma_eps_sq"));
        EXPECT_TRUE(has("cov_x.rate"));
        EXPECT_TRUE(has("alpha_grid"));
        EXPECT_TRUE(has("biasvar.sub_runs"));
    }
}

TEST(Report, TheoryRowsMatchDirectFormulas) {
    SweepConfig c;
    c.gamma_src_grid = {0.5, 1.0, 3.0};
    c.m_list = {2};
    const auto simple = theory_rows(c, TheoryMode::Simple);
    const auto debias = theory_rows(c, TheoryMode::Debias);
    ASSERT_EQ(simple.size(), 3u);
    SimpleSettingParams p;
    p.gamma_tgt = c.gamma_tgt;
    p.m = 2;
    p.b = c.b;
    p.sigma_eta_sq = c.sigma_eta_sq;
    p.sigma_xi_sq = c.sigma_xi_sq;
    p.sigma_eps_sq = c.sigma_eps_sq;
    p.gamma_src = 0.5;
    EXPECT_DOUBLE_EQ(simple[0].error, error_simple_asymptotic(p));
    EXPECT_DOUBLE_EQ(debias[0].error, error_simple_asymptotic(p));
    EXPECT_EQ(simple[1].flag, "threshold");
    EXPECT_TRUE(std::isnan(simple[1].error));
    p.gamma_src = 3.0;
    EXPECT_DOUBLE_EQ(simple[2].error, error_simple_asymptotic(p));
    EXPECT_DOUBLE_EQ(debias[2].error, debias_error_asymptotic(p));
}

TEST(Report, GeneralRowIsNotAboveAnyGridValue) {
    SweepConfig c;
    c.d = 32;
    c.gamma_src_grid = {2.0};
    c.m_list = {3};
    const auto rows = theory_rows(c, TheoryMode::General);
    const Experiment ex(c);
    const auto truth = ex.draw_relations(0, 0, 0);
    const GeneralErrorModel model(ex.theory_params(truth, ex.assumed_relations(AssumedMode::Identity, truth, 0), 0));
    for (double a : c.alpha_grid) EXPECT_LE(rows[0].error, model.error(a).value() + 1e-12);
}
