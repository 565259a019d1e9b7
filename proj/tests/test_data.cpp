#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include <sdr/csv.hpp>
#include <sdr/data.hpp>

using namespace sdr;

TEST(Standardize, OneTwoThreeSampleDivisor)
{
    Eigen::MatrixXd raw(3, 1);
    raw << 1, 2, 3;
    const auto X = standardize(raw);
    // sd with 1/(n-1) is exactly 1 here
    EXPECT_DOUBLE_EQ(X(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(X(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(X(2, 0), 1.0);
    // the 1/n divisor would give sqrt(3/2)
    EXPECT_NEAR(X(2, 0) * std::sqrt(3.0 / 2.0), 1.2247, 1e-4);
}

TEST(Standardize, MeanZeroUnitSd)
{
    Rng rng = make_rng(9);
    Eigen::MatrixXd raw(500, 4);
    std::normal_distribution<double> nd(3.0, 5.0);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = nd(rng);
    const auto X = standardize(raw);
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        EXPECT_NEAR(X.col(j).mean(), 0.0, 1e-12);
        EXPECT_NEAR(X.col(j).squaredNorm() / 499.0, 1.0, 1e-12);
    }
}

TEST(Standardize, Idempotent)
{
    Rng rng = make_rng(10);
    Eigen::MatrixXd raw(100, 3);
    std::uniform_real_distribution<double> u(-4.0, 9.0);
    for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = u(rng);
    const auto X = standardize(raw);
    EXPECT_LT((standardize(X) - X).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Standardize, TransformReusesTrainingStats)
{
    Eigen::MatrixXd raw(4, 1);
    raw << 0, 2, 4, 6;
    const auto s = Standardizer::fit(raw);
    Eigen::MatrixXd fresh(1, 1);
    fresh << 3;
    EXPECT_NEAR(s.transform(fresh)(0, 0), 0.0, 1e-15);
    EXPECT_THROW(s.transform(Eigen::MatrixXd(2, 2)), InvalidInput);
}

TEST(Standardize, ConstantColumnNamed)
{
    Eigen::MatrixXd raw(3, 2);
    raw << 1, 5, 2, 5, 3, 5;
    const std::vector<std::string> names{"a", "flat"};
    try {
        Standardizer::fit(raw, names);
        FAIL();
    } catch (const InvalidInput& e) {
        EXPECT_NE(std::string(e.what()).find("flat"), std::string::npos);
    }
}

TEST(Dataset, ShapeChecks)
{
    Eigen::MatrixXd raw(3, 1);
    raw << 1, 2, 3;
    EXPECT_THROW(make_dataset(Eigen::VectorXd::Zero(2), raw, {}, 2), InvalidInput);
    const auto d = make_dataset(Eigen::VectorXd::Zero(3), raw, {}, 2);
    EXPECT_EQ(d.names[0], "x1");
    EXPECT_EQ(d.n_params(), 2u);
    EXPECT_EQ(d.n_columns(1), 1u);
    EXPECT_THROW(make_dataset(Eigen::VectorXd::Zero(3), raw, {}, 2,
                              std::vector<std::vector<std::size_t>>{{0}, {1}}),
                 InvalidInput);
}

TEST(Batches, FullBatchIsPermutation)
{
    const auto s = make_batches(10, 10, 3, 1);
    ASSERT_EQ(s.size(), 3u);
    for (std::size_t t = 0; t < 3; ++t) {
        std::vector<std::uint32_t> b(s.batch(t).begin(), s.batch(t).end());
        std::sort(b.begin(), b.end());
        for (std::uint32_t i = 0; i < 10; ++i) EXPECT_EQ(b[i], i);
    }
}

TEST(Batches, Deterministic)
{
    const auto a = make_batches(1000, 100, 20, 77);
    const auto b = make_batches(1000, 100, 20, 77);
    const auto c = make_batches(1000, 100, 20, 78);
    bool differs = false;
    for (std::size_t t = 0; t < 20; ++t) {
        EXPECT_TRUE(std::ranges::equal(a.batch(t), b.batch(t)));
        differs = differs || !std::ranges::equal(a.batch(t), c.batch(t));
    }
    EXPECT_TRUE(differs);
}

TEST(Batches, NoDuplicatesWithinBatch)
{
    const auto s = make_batches(50, 40, 30, 5);
    for (std::size_t t = 0; t < s.size(); ++t) {
        std::set<std::uint32_t> u(s.batch(t).begin(), s.batch(t).end());
        EXPECT_EQ(u.size(), 40u);
        EXPECT_LT(*u.rbegin(), 50u);
    }
}

TEST(Batches, StrataFixedComposition)
{
    // 2.65% positives, balanced batches of 20000
    const std::size_t n = 400000, npos = 10600;
    std::vector<double> y(n, 0.0);
    for (std::size_t i = 0; i < npos; ++i) y[i * (n / npos)] = 1.0 + static_cast<double>(i % 4);
    const auto strata = zero_positive_strata(y, 10000, 10000);
    const auto s = make_batches(n, 0, 3, 11, &strata);
    EXPECT_TRUE(s.stratified());
    EXPECT_EQ(s.batch_size(), 20000u);
    for (std::size_t t = 0; t < 3; ++t) {
        std::size_t zeros = 0, pos = 0;
        for (auto i : s.batch(t)) (y[i] > 0.0 ? pos : zeros)++;
        EXPECT_EQ(zeros, 10000u);
        EXPECT_EQ(pos, 10000u);
    }
}

TEST(Batches, StratumTooSmallNeedsReplacementFlag)
{
    std::vector<double> y{0, 0, 0, 0, 1, 2};
    const auto strata = zero_positive_strata(y, 2, 4);
    EXPECT_THROW(make_batches(y.size(), 0, 2, 1, &strata), InvalidInput);
    const auto repl = zero_positive_strata(y, 2, 4, true);
    const auto s = make_batches(y.size(), 0, 2, 1, &repl);
    std::size_t pos = 0;
    for (auto i : s.batch(0)) pos += y[i] > 0.0;
    EXPECT_EQ(pos, 4u);
}

TEST(Batches, RejectsBadSizes)
{
    EXPECT_THROW(make_batches(10, 11, 2, 1), InvalidInput);
    EXPECT_THROW(make_batches(10, 0, 2, 1), InvalidInput);
    EXPECT_THROW(make_batches(10, 5, 0, 1), InvalidInput);
}

TEST(InterceptAdjustment, RareEventShift)
{
    const double shift = intercept_adjustment(0.0, 0.0265, 0.5);
    EXPECT_NEAR(shift, -std::log((1.0 - 0.0265) / 0.0265), 1e-14);
    EXPECT_NEAR(shift, -3.6037, 1e-4);
    EXPECT_NEAR(intercept_adjustment(1.25, 0.0265, 0.5) - 1.25, shift, 1e-14);
}

TEST(InterceptAdjustment, NoDistortion)
{
    EXPECT_DOUBLE_EQ(intercept_adjustment(-0.7, 0.3, 0.3), -0.7);
}

TEST(InterceptAdjustment, BoundaryFractions)
{
    EXPECT_THROW(intercept_adjustment(0.0, 0.0, 0.5), InvalidInput);
    EXPECT_THROW(intercept_adjustment(0.0, 1.0, 0.5), InvalidInput);
    EXPECT_THROW(intercept_adjustment(0.0, 0.2, 0.0), InvalidInput);
    EXPECT_THROW(intercept_adjustment(0.0, 0.2, 1.0), InvalidInput);
}

TEST(Csv, QuotesAndLineEndings)
{
    std::istringstream in("\xEF\xBB\xBFy,\"x, one\",z\r\n1,\"2\",\"a \"\"q\"\"\"\r\n3,4,\"multi\nline\"\n");
    const auto t = read_csv(in);
    ASSERT_EQ(t.header.size(), 3u);
    EXPECT_EQ(t.header[0], "y");
    EXPECT_EQ(t.header[1], "x, one");
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0][2], "a \"q\"");
    EXPECT_EQ(t.rows[1][2], "multi\nline");
}

TEST(Csv, FieldCountMismatch)
{
    std::istringstream in("a,b\n1,2\n3\n");
    EXPECT_THROW(read_csv(in), InvalidInput);
}

TEST(Csv, NumericColumnsAndMissingColumn)
{
    std::istringstream in("y,x\n1.5, 2\n-3e2,4\n");
    const auto t = read_csv(in);
    const auto M = numeric_columns(t, {"x", "y"});
    EXPECT_DOUBLE_EQ(M(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(M(1, 1), -300.0);
    try {
        numeric_columns(t, {"w"});
        FAIL();
    } catch (const InvalidInput& e) {
        EXPECT_NE(std::string(e.what()).find("'w'"), std::string::npos);
    }
    std::istringstream bad("y\nnan\n");
    EXPECT_THROW(numeric_columns(read_csv(bad), {"y"}), InvalidInput);
}

TEST(Csv, WriterRoundTrip)
{
    std::ostringstream out;
    CsvWriter w(out);
    w.cell("a,b").cell(0.1).cell(std::size_t{3});
    w.end();
    std::istringstream in("h1,h2,h3\n" + out.str());
    const auto t = read_csv(in);
    EXPECT_EQ(t.rows[0][0], "a,b");
    EXPECT_EQ(parse_number(t.rows[0][1], "x"), 0.1);
}
