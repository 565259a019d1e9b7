#include <sstream>

#include <gtest/gtest.h>

#include <sdr/serialize.hpp>

using namespace sdr;

TEST(Config, FitRoundTrip)
{
    FitConfig c;
    c.eps = 0.02;
    c.kappa = 0.12;
    c.bs = 500;
    c.strata = StrataConfig{100, 100, true};
    c.update_mode = UpdateMode::noncyclical;
    c.seed = 77;
    FitConfig back;
    apply_json(back, to_json(c));
    EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
    EXPECT_EQ(*back.kappa, 0.12);
    EXPECT_TRUE(back.strata->with_replacement);
}

TEST(Config, KappaAutoAndErrors)
{
    FitConfig c;
    c.kappa = 0.3;
    apply_json(c, Json::parse(R"({"kappa": "auto"})"));
    EXPECT_FALSE(c.kappa);
    EXPECT_THROW(apply_json(c, Json::parse(R"({"kapa": 1})")), InvalidInput);
    EXPECT_THROW(apply_json(c, Json::parse(R"({"eps": "big"})")), InvalidInput);
    EXPECT_THROW(apply_json(c, Json::parse(R"({"eps": -1})")), InvalidInput);
    EXPECT_THROW(apply_json(c, Json::parse(R"({"update_mode": "cyclic"})")), InvalidInput);
}

TEST(Config, ScenarioRoundTrip)
{
    ScenarioSpec s;
    s.family = "ZANBI";
    s.reps = 4;
    s.methods = {"BS+CF", "GB", "TM"};
    s.options.gb.folds = 5;
    s.options.td.iters_per_level = 50;
    ScenarioSpec back;
    apply_json(back, to_json(s));
    EXPECT_EQ(to_json(back).dump(), to_json(s).dump());
    EXPECT_THROW(apply_json(back, Json::parse(R"({"options": {"fitt": {}}})")), InvalidInput);
}

TEST(Model, RoundTripPredictors)
{
    ZeroAdjustedNegBinomial fam;
    Eigen::MatrixXd raw(6, 2);
    raw << 1, 0, 2, 1, 3, 5, 4, 2, 5, 2, 6, 9;
    Eigen::VectorXd y(6);
    y << 0, 1, 0, 3, 2, 0;
    const auto d = make_dataset(y, raw, {"a", "b"}, 3);
    FitResult r;
    r.method = "sbdr";
    r.config.strata = StrataConfig{3, 3, false};
    r.initial = CoefficientState::intercepts_only(d, std::vector<double>{0.1, -0.2, 0.3});
    r.selected_state = r.initial;
    r.selected_state.beta[0][2] = 0.5;
    r.selected_state.beta[2][1] = -0.25;
    r.selected = r.selected_state.selected(d);
    const auto j = fit_result_json(fam, d, r, "y", MethodOptions{});
    const auto m = load_model(Json::parse(j.dump()));
    EXPECT_EQ(m.family, "ZANBI");
    ASSERT_TRUE(m.tau0 && m.t0);
    EXPECT_DOUBLE_EQ(*m.tau0, 0.5);
    EXPECT_DOUBLE_EQ(*m.t0, 0.5);
    const Eigen::MatrixXd a = model_predictors(m, raw);
    const Eigen::MatrixXd b = r.selected_state.predictors(d, d.X);
    EXPECT_EQ(a, b);
    EXPECT_EQ(j["selected"]["mu"][0], "b");
    EXPECT_EQ(j["selected"]["nu"][0], "a");
}

TEST(Model, RejectsForeignJson)
{
    EXPECT_THROW(load_model(Json::parse(R"({"format": "other"})")), InvalidInput);
    EXPECT_THROW(load_model(Json::parse(R"({"format": "sdr-fit/1", "family": "NO"})")), InvalidInput);
}

TEST(Artifacts, PathCsvListsInitialIntercepts)
{
    Normal fam;
    Eigen::MatrixXd raw(4, 1);
    raw << 1, 2, 3, 5;
    Eigen::VectorXd y(4);
    y << 1, 2, 2, 4;
    const auto d = make_dataset(y, raw, {"x"}, 2);
    FitResult r;
    r.initial = CoefficientState::intercepts_only(d, std::vector<double>{2.25, 0.0});
    r.path.push_back({1, 0, 1, 0.01});
    std::ostringstream out;
    write_path_csv(out, fam, d, r);
    EXPECT_EQ(out.str(), "iteration,parameter,column,value\n"
                         "0,mu,(intercept),2.25\n"
                         "0,sigma,(intercept),0\n"
                         "1,mu,x,0.01\n");
}
