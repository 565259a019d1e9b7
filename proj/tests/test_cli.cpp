#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include <sdr/sdr.hpp>

namespace fs = std::filesystem;
using namespace sdr;

namespace {

struct Run
{
    int code = -1;
    std::string output;
};

Run run(const std::string& args)
{
    const std::string cmd = std::string(SDR_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t got;
    while ((got = fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, got);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test
{
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path()
             / ("sdr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    /// Small NO data set from the simulation truths.
    fs::path write_no_csv(const std::string& response = "y")
    {
        Normal fam;
        const auto raw = gen_covariates(300, 8, 0.0, 3);
        const auto y = gen_response(fam, reference_truth(FamilyKind::NO), raw, 4);
        const fs::path p = dir_ / "data.csv";
        std::ofstream out(p);
        CsvWriter w(out);
        w.cell(response);
        for (int j = 0; j < 8; ++j) w.cell("x" + std::to_string(j + 1));
        w.end();
        for (Eigen::Index i = 0; i < raw.rows(); ++i) {
            w.cell(y[i]);
            for (Eigen::Index j = 0; j < 8; ++j) w.cell(raw(i, j));
            w.end();
        }
        return p;
    }

    fs::path write_model(const Family& fam, const std::vector<double>& intercepts,
                         std::optional<StrataConfig> strata, double zero_fraction)
    {
        Eigen::MatrixXd raw(4, 1);
        raw << 0, 1, 2, 3;
        Eigen::VectorXd y(4);
        const int zeros = static_cast<int>(zero_fraction * 4);
        for (int i = 0; i < 4; ++i) y[i] = i < zeros ? 0.0 : 1.0 + i;
        const auto d = make_dataset(y, raw, {"x"}, fam.n_params());
        FitResult r;
        r.method = "sbdr";
        r.config.strata = strata;
        r.initial = CoefficientState::intercepts_only(d, intercepts);
        r.selected_state = r.initial;
        r.selected = r.initial.selected(d);
        const fs::path p = dir_ / "model.json";
        std::ofstream(p) << fit_result_json(fam, d, r, "y", MethodOptions{}).dump(2);
        std::ofstream(dir_ / "new.csv") << "x\n0.5\n7\n-2\n";
        return p;
    }

    fs::path dir_;
};

CsvTable read_table(const fs::path& p)
{
    return read_csv_file(p.string());
}

} // namespace

TEST_F(Cli, FitWritesArtifacts)
{
    const auto data = write_no_csv();
    std::ofstream(dir_ / "cfg.json") << R"({"fit": {"T": 300}})";
    const auto r = run("fit --family NO --config " + (dir_ / "cfg.json").string() + " --out "
                       + (dir_ / "out").string() + " " + data.string());
    ASSERT_EQ(r.code, 0) << r.output;
    for (const char* f : {"result.json", "path.csv", "criterion.csv", "selected.csv"})
        EXPECT_TRUE(fs::exists(dir_ / "out" / f)) << f;
    const auto j = Json::parse(slurp(dir_ / "out" / "result.json"));
    EXPECT_EQ(j["family"], "NO");
    EXPECT_EQ(j["config"]["fit"]["T"], 300);
    EXPECT_EQ(j["provenance"]["seed"], 1);
    const auto path = read_table(dir_ / "out" / "path.csv");
    EXPECT_EQ(path.header, (std::vector<std::string>{"iteration", "parameter", "column", "value"}));
}

TEST_F(Cli, MissingResponseIsInputError)
{
    const auto data = write_no_csv("target");
    const auto r = run("fit --family NO --out " + (dir_ / "out").string() + " " + data.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("'y'"), std::string::npos) << r.output;
}

TEST_F(Cli, BadConfigIsInputError)
{
    const auto data = write_no_csv();
    std::ofstream(dir_ / "cfg.json") << R"({"fit": {"T": -4}})";
    EXPECT_EQ(run("fit --family NO --config " + (dir_ / "cfg.json").string() + " " + data.string()).code, 2);
    std::ofstream(dir_ / "cfg.json") << R"({"fit": )";
    EXPECT_EQ(run("fit --family NO --config " + (dir_ / "cfg.json").string() + " " + data.string()).code, 2);
    EXPECT_EQ(run("fit --family XX " + data.string()).code, 2);
    EXPECT_EQ(run("fit --family NO --method lasso " + data.string()).code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, ThresholdDescentRouting)
{
    const auto data = write_no_csv();
    std::ofstream(dir_ / "cfg.json") << R"({"threshold_descent": {"iters_per_level": 40}})";
    const auto r = run("fit --family NO --method thresdesc --config " + (dir_ / "cfg.json").string() + " --out "
                       + (dir_ / "out").string() + " " + data.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto j = Json::parse(slurp(dir_ / "out" / "result.json"));
    EXPECT_EQ(j["method"], "ThresDesc");
    EXPECT_EQ(j["iterations"].get<std::size_t>() % 40, 0u);
}

TEST_F(Cli, PredictInterceptOnlyIsConstant)
{
    const auto model = write_model(Normal{}, {1.5, std::log(2.0)}, std::nullopt, 0.0);
    const auto r = run("predict --model " + model.string() + " --out " + (dir_ / "pred.csv").string() + " "
                       + (dir_ / "new.csv").string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = read_table(dir_ / "pred.csv");
    ASSERT_EQ(t.rows.size(), 3u);
    for (const auto& row : t.rows) {
        EXPECT_DOUBLE_EQ(parse_number(row[1], "mu"), 1.5);
        EXPECT_DOUBLE_EQ(parse_number(row[2], "sigma"), 2.0);
    }
    EXPECT_EQ(run("predict --model " + model.string() + " --threshold 1 " + (dir_ / "new.csv").string()).code, 2);
}

TEST_F(Cli, PredictZeroExceedanceIsOneMinusNu)
{
    const double logit_nu = -0.3;
    const auto model = write_model(ZeroAdjustedNegBinomial{}, {0.4, -0.5, logit_nu}, std::nullopt, 0.5);
    const auto r = run("predict --model " + model.string() + " --threshold 1 --threshold 0 --out "
                       + (dir_ / "pred.csv").string() + " " + (dir_ / "new.csv").string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = read_table(dir_ / "pred.csv");
    ASSERT_EQ(t.header.size(), 6u);
    EXPECT_EQ(t.header[4], "P(Y>=1)");
    const double nu = 1.0 / (1.0 + std::exp(-logit_nu));
    for (const auto& row : t.rows) {
        EXPECT_NEAR(parse_number(row[3], "nu"), nu, 1e-15);
        EXPECT_NEAR(parse_number(row[4], "p"), 1.0 - nu, 1e-12);
        EXPECT_DOUBLE_EQ(parse_number(row[5], "p"), 1.0);
    }
}

TEST_F(Cli, AdjustmentShiftsLogitByAnalyticAmount)
{
    const double b = 0.2;
    const auto model = write_model(ZeroAdjustedNegBinomial{}, {0.4, -0.5, b}, StrataConfig{2, 2, false}, 0.25);
    const auto plain = run("predict --model " + model.string() + " --out " + (dir_ / "a.csv").string() + " "
                           + (dir_ / "new.csv").string());
    const auto adj = run("predict --adjust --model " + model.string() + " --out " + (dir_ / "b.csv").string() + " "
                         + (dir_ / "new.csv").string());
    ASSERT_EQ(plain.code, 0) << plain.output;
    ASSERT_EQ(adj.code, 0) << adj.output;
    const auto ta = read_table(dir_ / "a.csv");
    const auto tb = read_table(dir_ / "b.csv");
    auto logit = [](double p) { return std::log(p / (1.0 - p)); };
    const double shift = -std::log((1.0 - 0.25) / 0.25 * 0.5 / 0.5);
    for (std::size_t i = 0; i < ta.rows.size(); ++i) {
        const double la = logit(parse_number(ta.rows[i][3], "nu"));
        const double lb = logit(parse_number(tb.rows[i][3], "nu"));
        EXPECT_NEAR(lb - la, shift, 1e-12);
        EXPECT_EQ(ta.rows[i][1], tb.rows[i][1]);
        EXPECT_EQ(ta.rows[i][2], tb.rows[i][2]);
    }
    // a model without subsampling fractions cannot be adjusted
    const auto plain_model = write_model(ZeroAdjustedNegBinomial{}, {0.4, -0.5, b}, std::nullopt, 0.25);
    EXPECT_EQ(run("predict --adjust --model " + plain_model.string() + " " + (dir_ / "new.csv").string()).code, 2);
}

TEST_F(Cli, SimulateMinimalSpec)
{
    std::ofstream(dir_ / "sim.json") << R"({"family": "NO", "nobs": 500, "nnoise": 10, "reps": 1,
        "methods": ["BS+CF"], "seed": 5, "n_valid": 2000})";
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run("simulate --config " + (dir_ / "sim.json").string() + " --out " + (dir_ / "sim").string());
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_LT(secs, 60.0);
    const auto s = Json::parse(slurp(dir_ / "sim" / "summary.json"));
    const auto& m = s["scenarios"][0]["methods"][0];
    EXPECT_EQ(m["method"], "BS+CF");
    for (const char* key : {"tp", "fp", "crps", "rmse"}) EXPECT_TRUE(m.contains(key)) << key;
    EXPECT_TRUE(fs::exists(dir_ / "sim" / "metrics.csv"));
    EXPECT_TRUE(fs::exists(dir_ / "sim" / "plot_crps.csv"));
}

TEST_F(Cli, BenchNeedsSeed)
{
    EXPECT_EQ(run("bench --grid minimal").code, 2);
    EXPECT_EQ(run("bench --grid nonsense --seed 1").code, 2);
}
