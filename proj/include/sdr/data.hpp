#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "random.hpp"

namespace sdr {

struct ColumnStats
{
    double mean = 0.0;
    double sd = 1.0; ///< 1/(n-1) divisor
};

/// Column standardization learned on training data and reusable on new rows.
class Standardizer
{
public:
    Standardizer() = default;

    /// Learns mean and sd of every column. Requires n >= 2 and no constant column.
    static Standardizer fit(const Eigen::MatrixXd& raw, std::span<const std::string> names = {})
    {
        const auto n = raw.rows();
        if (n < 2) throw InvalidInput("standardize: need at least 2 rows, got " + std::to_string(n));
        Standardizer s;
        s.stats_.resize(static_cast<std::size_t>(raw.cols()));
        for (Eigen::Index j = 0; j < raw.cols(); ++j) {
            const double mean = raw.col(j).mean();
            const double ss = (raw.col(j).array() - mean).square().sum();
            const double sd = std::sqrt(ss / static_cast<double>(n - 1));
            if (!(sd > 0.0) || !std::isfinite(sd) || sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
                const std::string label = static_cast<std::size_t>(j) < names.size()
                                            ? "'" + names[static_cast<std::size_t>(j)] + "'"
                                            : "#" + std::to_string(j);
                throw InvalidInput("standardize: column " + label + " is constant");
            }
            s.stats_[static_cast<std::size_t>(j)] = {mean, sd};
        }
        return s;
    }

    explicit Standardizer(std::vector<ColumnStats> stats) : stats_(std::move(stats)) {}

    Eigen::MatrixXd transform(const Eigen::MatrixXd& raw) const
    {
        if (static_cast<std::size_t>(raw.cols()) != stats_.size())
            throw InvalidInput("standardize: expected " + std::to_string(stats_.size())
                               + " columns, got " + std::to_string(raw.cols()));
        Eigen::MatrixXd out(raw.rows(), raw.cols());
        for (Eigen::Index j = 0; j < raw.cols(); ++j) {
            const auto& st = stats_[static_cast<std::size_t>(j)];
            out.col(j) = (raw.col(j).array() - st.mean) / st.sd;
        }
        return out;
    }

    const std::vector<ColumnStats>& stats() const noexcept { return stats_; }

private:
    std::vector<ColumnStats> stats_;
};

inline Eigen::MatrixXd standardize(const Eigen::MatrixXd& raw)
{
    return Standardizer::fit(raw).transform(raw);
}

/// Response plus standardized covariates.
///
/// Covariates are stored once; `columns[k]` lists the columns of X entering
/// predictor k. Every predictor also has an implicit (unstandardized) intercept.
struct Dataset
{
    Eigen::VectorXd y;
    Eigen::MatrixXd X;
    std::vector<std::string> names;
    Standardizer standardizer;
    std::vector<std::vector<std::size_t>> columns;

    std::size_t n() const noexcept { return static_cast<std::size_t>(y.size()); }
    std::size_t p() const noexcept { return static_cast<std::size_t>(X.cols()); }
    std::size_t n_params() const noexcept { return columns.size(); }
    std::size_t n_columns(std::size_t k) const noexcept { return columns[k].size(); }
};

/// Builds a dataset from raw covariates. Every predictor sees all columns
/// unless `columns` is given.
inline Dataset make_dataset(Eigen::VectorXd y, const Eigen::MatrixXd& raw,
                            std::vector<std::string> names, std::size_t n_params,
                            std::optional<std::vector<std::vector<std::size_t>>> columns = {})
{
    if (raw.rows() != y.size())
        throw InvalidInput("dataset: response has " + std::to_string(y.size())
                           + " rows but covariates have " + std::to_string(raw.rows()));
    if (names.empty())
        for (Eigen::Index j = 0; j < raw.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
    if (names.size() != static_cast<std::size_t>(raw.cols()))
        throw InvalidInput("dataset: column name count does not match covariates");

    Dataset d;
    d.standardizer = Standardizer::fit(raw, names);
    d.X = d.standardizer.transform(raw);
    d.y = std::move(y);
    d.names = std::move(names);
    if (columns) {
        if (columns->size() != n_params)
            throw InvalidInput("dataset: need one column list per distribution parameter");
        for (const auto& cols : *columns)
            for (auto j : cols)
                if (j >= d.p()) throw InvalidInput("dataset: column index out of range");
        d.columns = std::move(*columns);
    } else {
        std::vector<std::size_t> all(d.p());
        std::iota(all.begin(), all.end(), std::size_t{0});
        d.columns.assign(n_params, all);
    }
    return d;
}

/// Rows `rows` of `d`; standardization stats are kept, not re-learned.
inline Dataset subset_rows(const Dataset& d, std::span<const std::size_t> rows)
{
    Dataset out;
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    out.X.resize(static_cast<Eigen::Index>(rows.size()), d.X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(rows[i]);
        out.y[static_cast<Eigen::Index>(i)] = d.y[r];
        out.X.row(static_cast<Eigen::Index>(i)) = d.X.row(r);
    }
    out.names = d.names;
    out.standardizer = d.standardizer;
    out.columns = d.columns;
    return out;
}

/// Stratified batch composition: draw `sizes[s]` rows from `groups[s]`.
struct Strata
{
    std::vector<std::vector<std::size_t>> groups;
    std::vector<std::size_t> sizes;
    bool with_replacement = false; ///< must be enabled explicitly
};

/// Two strata, zero responses and positive responses.
inline Strata zero_positive_strata(std::span<const double> y, std::size_t n_zero,
                                   std::size_t n_positive, bool with_replacement = false)
{
    Strata s;
    s.groups.resize(2);
    for (std::size_t i = 0; i < y.size(); ++i) s.groups[y[i] > 0.0 ? 1 : 0].push_back(i);
    s.sizes = {n_zero, n_positive};
    s.with_replacement = with_replacement;
    return s;
}

/// Ordered batch index sets i_1..i_T. Indices inside a batch are sorted.
class BatchSchedule
{
public:
    BatchSchedule() = default;

    /// Every batch is the full index set 0..n-1.
    static BatchSchedule full(std::size_t n, std::size_t T)
    {
        BatchSchedule s;
        s.batch_size_ = n;
        s.count_ = T;
        s.constant_ = true;
        s.batches_.resize(1);
        s.batches_[0].resize(n);
        std::iota(s.batches_[0].begin(), s.batches_[0].end(), std::uint32_t{0});
        return s;
    }

    static BatchSchedule from_batches(std::vector<std::vector<std::uint32_t>> batches)
    {
        if (batches.empty()) throw InvalidInput("batch schedule: no batches");
        BatchSchedule s;
        s.batch_size_ = batches.front().size();
        s.count_ = batches.size();
        s.batches_ = std::move(batches);
        return s;
    }

    std::size_t size() const noexcept { return count_; }
    std::size_t batch_size() const noexcept { return batch_size_; }
    bool constant() const noexcept { return constant_; }
    std::uint64_t seed() const noexcept { return seed_; }
    bool stratified() const noexcept { return stratified_; }

    /// Batch t, 0-based.
    std::span<const std::uint32_t> batch(std::size_t t) const
    {
        return constant_ ? batches_[0] : batches_.at(t);
    }

private:
    friend BatchSchedule make_batches(std::size_t, std::size_t, std::size_t, std::uint64_t,
                                      const Strata*);

    std::vector<std::vector<std::uint32_t>> batches_;
    std::size_t batch_size_ = 0;
    std::size_t count_ = 0;
    std::uint64_t seed_ = 0;
    bool constant_ = false;
    bool stratified_ = false;
};

/// T random batches of size bs from 0..n-1, each sampled without replacement
/// and independently of the others. With strata, each batch takes exactly
/// `sizes[s]` rows from stratum s.
inline BatchSchedule make_batches(std::size_t n, std::size_t bs, std::size_t T, std::uint64_t seed,
                                  const Strata* strata = nullptr)
{
    if (T == 0) throw InvalidInput("make_batches: T must be positive");
    BatchSchedule s;
    s.seed_ = seed;
    s.count_ = T;
    s.batches_.resize(T);
    Rng rng = make_rng(seed, 0xBA7C4);

    // partial Fisher-Yates on a persistent permutation; uniform for any start state
    auto draw_into = [&rng](std::vector<std::size_t>& pool, std::size_t k, bool replace,
                            std::vector<std::uint32_t>& out) {
        const std::size_t m = pool.size();
        if (replace) {
            for (std::size_t i = 0; i < k; ++i)
                out.push_back(static_cast<std::uint32_t>(pool[uniform_index(rng, m)]));
            return;
        }
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + uniform_index(rng, m - i);
            std::swap(pool[i], pool[j]);
            out.push_back(static_cast<std::uint32_t>(pool[i]));
        }
    };

    if (strata) {
        if (strata->groups.size() != strata->sizes.size())
            throw InvalidInput("make_batches: strata groups and sizes differ in length");
        std::size_t total = 0;
        for (std::size_t g = 0; g < strata->groups.size(); ++g) {
            const auto& grp = strata->groups[g];
            for (auto i : grp)
                if (i >= n) throw InvalidInput("make_batches: stratum index out of range");
            if (strata->sizes[g] > grp.size() && !strata->with_replacement)
                throw InvalidInput("make_batches: stratum " + std::to_string(g) + " has "
                                   + std::to_string(grp.size()) + " rows but "
                                   + std::to_string(strata->sizes[g])
                                   + " requested without replacement");
            if (strata->sizes[g] > 0 && grp.empty())
                throw InvalidInput("make_batches: stratum " + std::to_string(g) + " is empty");
            total += strata->sizes[g];
        }
        if (total == 0) throw InvalidInput("make_batches: strata request an empty batch");
        std::vector<std::vector<std::size_t>> pools = strata->groups;
        for (auto& b : s.batches_) {
            b.reserve(total);
            for (std::size_t g = 0; g < pools.size(); ++g) {
                const bool replace = strata->sizes[g] > pools[g].size();
                draw_into(pools[g], strata->sizes[g], replace, b);
            }
            std::sort(b.begin(), b.end());
        }
        s.batch_size_ = total;
        s.stratified_ = true;
        return s;
    }

    if (bs < 1 || bs > n)
        throw InvalidInput("make_batches: batch size " + std::to_string(bs)
                           + " outside [1, " + std::to_string(n) + "]");
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (auto& b : s.batches_) {
        b.reserve(bs);
        draw_into(pool, bs, false, b);
        std::sort(b.begin(), b.end());
    }
    s.batch_size_ = bs;
    return s;
}

/// Undo zero-class subsampling on a logit-link intercept:
/// beta0 - log((1 - tau0) / tau0 * t0 / (1 - t0)), where tau0 is the zero
/// fraction in the full data and t0 the zero fraction in each batch.
inline double intercept_adjustment(double beta0_sub, double tau0, double t0)
{
    if (!(tau0 > 0.0 && tau0 < 1.0))
        throw InvalidInput("intercept_adjustment: tau0 must lie in (0, 1)");
    if (!(t0 > 0.0 && t0 < 1.0)) throw InvalidInput("intercept_adjustment: t0 must lie in (0, 1)");
    return beta0_sub - std::log((1.0 - tau0) / tau0 * t0 / (1.0 - t0));
}

} // namespace sdr
