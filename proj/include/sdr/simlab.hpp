#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "data.hpp"
#include "engine.hpp"
#include "families.hpp"
#include "methods.hpp"
#include "random.hpp"

namespace sdr {

/// True linear predictors on the raw covariate scale.
struct Truth
{
    FamilyKind family = FamilyKind::NO;
    std::vector<double> intercept;
    std::vector<std::vector<std::pair<std::size_t, double>>> effects; ///< (column, coefficient)

    std::size_t n_true() const
    {
        std::size_t s = 0;
        for (const auto& e : effects) s += e.size();
        return s;
    }

    bool is_true(std::size_t k, std::size_t column) const
    {
        for (const auto& [c, v] : effects[k])
            if (c == column) return true;
        return false;
    }
};

/// Simulation truths on x1..x6 (0-based columns 0..5).
inline Truth reference_truth(FamilyKind kind)
{
    Truth t;
    t.family = kind;
    switch (kind) {
    case FamilyKind::NO:
        t.intercept = {0.0, 0.0};
        t.effects = {{{0, 1.0}, {1, 2.0}, {2, 0.5}, {3, -1.0}},
                     {{2, 0.5}, {3, 0.25}, {4, -0.25}, {5, -0.5}}};
        break;
    case FamilyKind::GA:
        t.intercept = {0.0, 0.0};
        t.effects = {{{0, 1.0}, {2, 2.0}, {4, 0.5}, {5, -1.0}},
                     {{2, 0.5}, {3, 0.75}, {4, -0.3}, {5, -0.5}}};
        break;
    case FamilyKind::ZANBI:
        t.intercept = {0.5, -1.0, -0.5};
        t.effects = {{{0, 0.5}, {2, -1.0}, {4, 0.75}, {5, 0.75}},
                     {{1, 1.0}, {3, -1.25}, {4, 1.0}},
                     {{2, 1.0}, {3, -1.0}, {4, -1.0}}};
        break;
    case FamilyKind::NBI:
        // ZANBI count part without the zero component
        t.intercept = {0.5, -1.0};
        t.effects = {{{0, 0.5}, {2, -1.0}, {4, 0.75}, {5, 0.75}},
                     {{1, 1.0}, {3, -1.25}, {4, 1.0}}};
        break;
    }
    return t;
}

inline std::size_t default_T(FamilyKind kind)
{
    return kind == FamilyKind::ZANBI ? 3000 : 2000;
}

/// Lower Cholesky factor of the AR(1) matrix rho^|i-j|.
inline Eigen::MatrixXd ar1_cholesky(std::size_t ncols, double rho)
{
    const auto l = static_cast<Eigen::Index>(ncols);
    Eigen::MatrixXd S(l, l);
    for (Eigen::Index i = 0; i < l; ++i)
        for (Eigen::Index j = 0; j < l; ++j) S(i, j) = std::pow(rho, std::abs(static_cast<double>(i - j)));
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw NumericError("AR(1) correlation matrix is not positive definite");
    return llt.matrixL();
}

/// Uniform(-1, 1) covariates, correlated through L' and column-permuted when
/// rho > 0. The permutation is fixed per design so validation rows share it.
class CovariateDesign
{
public:
    CovariateDesign(std::size_t ncols, double rho, std::uint64_t seed) : ncols_(ncols), rho_(rho)
    {
        if (ncols < 1) throw InvalidInput("covariates: need at least one column");
        if (!(rho >= 0.0 && rho < 1.0)) throw InvalidInput("covariates: rho must lie in [0, 1)");
        perm_.resize(ncols);
        for (std::size_t j = 0; j < ncols; ++j) perm_[j] = j;
        if (rho > 0.0) {
            Lt_ = ar1_cholesky(ncols, rho).transpose();
            Rng rng = make_rng(seed, 0x9E7);
            for (std::size_t i = ncols; i > 1; --i) std::swap(perm_[i - 1], perm_[uniform_index(rng, i)]);
        }
    }

    Eigen::MatrixXd draw(std::size_t n, Rng& rng) const
    {
        const auto l = static_cast<Eigen::Index>(ncols_);
        Eigen::MatrixXd U(static_cast<Eigen::Index>(n), l);
        for (Eigen::Index i = 0; i < U.rows(); ++i)
            for (Eigen::Index j = 0; j < l; ++j) U(i, j) = 2.0 * uniform01(rng) - 1.0;
        if (rho_ == 0.0) return U;
        const Eigen::MatrixXd Z = U * Lt_;
        Eigen::MatrixXd X(Z.rows(), l);
        for (Eigen::Index j = 0; j < l; ++j) X.col(j) = Z.col(static_cast<Eigen::Index>(perm_[static_cast<std::size_t>(j)]));
        return X;
    }

    const std::vector<std::size_t>& permutation() const noexcept { return perm_; }

private:
    std::size_t ncols_;
    double rho_;
    Eigen::MatrixXd Lt_;
    std::vector<std::size_t> perm_;
};

inline Eigen::MatrixXd gen_covariates(std::size_t n, std::size_t ncols, double rho, std::uint64_t seed)
{
    CovariateDesign design(ncols, rho, seed);
    Rng rng = make_rng(seed, 1);
    return design.draw(n, rng);
}

/// True predictor matrix (n x K) for raw covariates.
inline Eigen::MatrixXd true_predictors(const Truth& truth, const Eigen::MatrixXd& raw)
{
    const auto K = static_cast<Eigen::Index>(truth.intercept.size());
    Eigen::MatrixXd eta(raw.rows(), K);
    for (Eigen::Index k = 0; k < K; ++k) {
        eta.col(k).setConstant(truth.intercept[static_cast<std::size_t>(k)]);
        for (const auto& [c, v] : truth.effects[static_cast<std::size_t>(k)]) {
            if (static_cast<Eigen::Index>(c) >= raw.cols())
                throw InvalidInput("simulation truth needs at least " + std::to_string(c + 1) + " columns");
            eta.col(k) += v * raw.col(static_cast<Eigen::Index>(c));
        }
    }
    return eta;
}

/// Responses drawn from the family at the true predictors.
inline Eigen::VectorXd gen_response(const Family& fam, const Truth& truth, const Eigen::MatrixXd& raw,
                                    std::uint64_t seed)
{
    if (raw.cols() < 6) throw InvalidInput("simulation needs at least 6 covariate columns");
    const Eigen::MatrixXd eta = true_predictors(truth, raw);
    Rng rng = make_rng(seed, 2);
    Eigen::VectorXd y(raw.rows());
    ParamVector e{};
    const std::size_t K = fam.n_params();
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
        for (std::size_t k = 0; k < K; ++k) e[k] = eta(i, static_cast<Eigen::Index>(k));
        const auto theta = fam.theta_from_eta(std::span<const double>(e.data(), K));
        y[i] = fam.sample(std::span<const double>(theta.data(), K), rng);
    }
    return y;
}

inline Dataset gen_dataset(const Family& fam, const Truth& truth, const Eigen::MatrixXd& raw,
                           std::uint64_t seed)
{
    return make_dataset(gen_response(fam, truth, raw, seed), raw, {}, fam.n_params());
}

struct MetricsRow
{
    std::string method;
    std::size_t replication = 0;
    double crps = 0.0;
    std::vector<double> rmse; ///< per parameter
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::vector<std::size_t> tp_param;
    std::vector<std::size_t> fp_param;
    std::size_t mstop = 0;
    double seconds = 0.0;
    bool failed = false;
    std::string message;
};

/// Scores coefficients `state` (fitted on `train`) against the truth on
/// validation data.
inline MetricsRow evaluate(const Family& fam, const CoefficientState& state, const Dataset& train,
                           const Truth& truth, const Eigen::MatrixXd& raw_valid,
                           const Eigen::VectorXd& y_valid, const CrpsOptions& crps_opts = {})
{
    MetricsRow row;
    const std::size_t K = fam.n_params();
    const Eigen::MatrixXd Xv = train.standardizer.transform(raw_valid);
    const Eigen::MatrixXd eta_hat = state.predictors(train, Xv);
    const Eigen::MatrixXd eta_true = true_predictors(truth, raw_valid);
    row.rmse.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        row.rmse[k] = std::sqrt((eta_hat.col(kk) - eta_true.col(kk)).squaredNorm()
                                / static_cast<double>(raw_valid.rows()));
    }
    double crps = 0.0;
    ParamVector e{};
    for (Eigen::Index i = 0; i < Xv.rows(); ++i) {
        for (std::size_t k = 0; k < K; ++k) e[k] = eta_hat(i, static_cast<Eigen::Index>(k));
        const auto theta = fam.theta_from_eta(std::span<const double>(e.data(), K));
        CrpsOptions o = crps_opts;
        o.seed = derive_seed(crps_opts.seed, static_cast<std::uint64_t>(i));
        crps += fam.crps(std::span<const double>(theta.data(), K), y_valid[i], o);
    }
    row.crps = crps / static_cast<double>(Xv.rows());

    const auto sel = state.selected(train);
    row.tp_param.assign(K, 0);
    row.fp_param.assign(K, 0);
    for (std::size_t k = 0; k < K; ++k)
        for (auto c : sel[k]) (truth.is_true(k, c) ? row.tp_param[k] : row.fp_param[k])++;
    for (std::size_t k = 0; k < K; ++k) {
        row.tp += row.tp_param[k];
        row.fp += row.fp_param[k];
    }
    return row;
}

/// Refit restricted to the true effect columns ("TM" reference).
inline FitResult true_model_fit(const Family& fam, const Dataset& data, const Truth& truth,
                                const MethodOptions& o)
{
    const auto t0 = detail::Clock::now();
    std::vector<std::vector<std::size_t>> sets(truth.effects.size());
    for (std::size_t k = 0; k < sets.size(); ++k)
        for (const auto& [c, v] : truth.effects[k]) sets[k].push_back(c);
    FitConfig c = o.fit;
    c.bs = 0;
    c.strata.reset();
    auto rf = refit(fam, data, sets, c, o.refit);
    FitResult r;
    r.method = "TM";
    r.family = std::string(fam.name());
    r.config = c;
    r.n = data.n();
    r.initial = rf.state;
    r.selected = sets;
    r.selected_state = rf.state;
    r.refit = rf.state;
    r.refit_converged = rf.converged;
    r.refit_iterations = rf.iterations;
    r.refit_loglik = rf.loglik;
    r.refit_seconds = detail::seconds_since(t0);
    return r;
}

struct ScenarioSpec
{
    std::string family = "NO";
    std::size_t nobs = 1000;
    std::size_t nnoise = 30;
    double rho_corr = 0.0;
    std::size_t reps = 1;
    std::vector<std::string> methods{"BS+CF"};
    std::uint64_t seed = 1;
    std::size_t n_valid = 10000;
    std::size_t threads = 1;
    MethodOptions options;

    void validate() const
    {
        make_family(family);
        if (nobs < 10) throw InvalidInput("scenario: nobs must be at least 10");
        if (!(rho_corr >= 0.0 && rho_corr < 1.0)) throw InvalidInput("scenario: rho_corr must lie in [0, 1)");
        if (reps < 1) throw InvalidInput("scenario: reps must be at least 1");
        if (n_valid < 1) throw InvalidInput("scenario: n_valid must be at least 1");
        for (const auto& m : methods)
            if (m != "TM" && !is_known_method(m)) throw InvalidInput("scenario: unknown method '" + m + "'");
    }
};

/// One replication: training and validation data from disjoint seed streams.
struct Replication
{
    Truth truth;
    Dataset train;
    Eigen::MatrixXd raw_valid;
    Eigen::VectorXd y_valid;
};

inline Replication make_replication(const Family& fam, const ScenarioSpec& spec, std::size_t r)
{
    const std::uint64_t base = derive_seed(spec.seed, r);
    const std::size_t ncols = 6 + spec.nnoise;
    CovariateDesign design(ncols, spec.rho_corr, derive_seed(base, 10));
    Replication rep;
    rep.truth = reference_truth(fam.kind());
    Rng train_rng = make_rng(base, 11);
    const Eigen::MatrixXd raw = design.draw(spec.nobs, train_rng);
    rep.train = gen_dataset(fam, rep.truth, raw, derive_seed(base, 12));
    Rng valid_rng = make_rng(base, 21);
    rep.raw_valid = design.draw(spec.n_valid, valid_rng);
    rep.y_valid = gen_response(fam, rep.truth, rep.raw_valid, derive_seed(base, 22));
    return rep;
}

/// Per-replication metric rows for every method, in (replication, method) order.
inline std::vector<MetricsRow> run_scenario(const ScenarioSpec& spec)
{
    spec.validate();
    const auto fam = make_family(spec.family);
    std::vector<std::vector<MetricsRow>> per_rep(spec.reps);

    auto run_rep = [&](std::size_t r) {
        auto& rows = per_rep[r];
        Replication rep;
        std::string data_error;
        try {
            rep = make_replication(*fam, spec, r);
        } catch (const std::exception& e) {
            data_error = e.what();
        }
        MethodOptions o = spec.options;
        o.fit.seed = derive_seed(derive_seed(spec.seed, r), 30);
        o.gb.seed = derive_seed(derive_seed(spec.seed, r), 31);
        o.gb.threads = 1;
        for (const auto& m : spec.methods) {
            MetricsRow row;
            if (data_error.empty()) {
                try {
                    const FitResult fit = m == "TM" ? true_model_fit(*fam, rep.train, rep.truth, o)
                                                    : run_method(*fam, rep.train, m, o);
                    row = evaluate(*fam, fit.final_state(), rep.train, rep.truth, rep.raw_valid,
                                   rep.y_valid);
                    row.mstop = fit.mstop;
                    row.seconds = fit.select_seconds + fit.refit_seconds;
                } catch (const std::exception& e) {
                    row.failed = true;
                    row.message = e.what();
                }
            } else {
                row.failed = true;
                row.message = data_error;
            }
            row.method = m;
            row.replication = r;
            rows.push_back(std::move(row));
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(spec.threads, spec.reps));
    if (threads == 1) {
        for (std::size_t r = 0; r < spec.reps; ++r) run_rep(r);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (std::size_t r = next++; r < spec.reps; r = next++) run_rep(r);
            });
        for (auto& th : pool) th.join();
    }
    std::vector<MetricsRow> out;
    for (auto& rows : per_rep)
        for (auto& row : rows) out.push_back(std::move(row));
    return out;
}

/// Mean metrics of the non-failed rows of one method.
struct MethodSummary
{
    std::string method;
    std::size_t runs = 0;
    std::size_t failed = 0;
    double crps = 0.0;
    std::vector<double> rmse;
    double tp = 0.0;
    double fp = 0.0;
    std::vector<double> tp_param;
    std::vector<double> fp_param;
    double seconds = 0.0;
};

inline std::vector<MethodSummary> summarize(const std::vector<MetricsRow>& rows,
                                            const std::vector<std::string>& methods)
{
    std::vector<MethodSummary> out;
    for (const auto& m : methods) {
        MethodSummary s;
        s.method = m;
        for (const auto& r : rows) {
            if (r.method != m) continue;
            if (r.failed) {
                ++s.failed;
                continue;
            }
            if (s.rmse.empty()) {
                s.rmse.assign(r.rmse.size(), 0.0);
                s.tp_param.assign(r.tp_param.size(), 0.0);
                s.fp_param.assign(r.fp_param.size(), 0.0);
            }
            ++s.runs;
            s.crps += r.crps;
            s.tp += static_cast<double>(r.tp);
            s.fp += static_cast<double>(r.fp);
            s.seconds += r.seconds;
            for (std::size_t k = 0; k < r.rmse.size(); ++k) {
                s.rmse[k] += r.rmse[k];
                s.tp_param[k] += static_cast<double>(r.tp_param[k]);
                s.fp_param[k] += static_cast<double>(r.fp_param[k]);
            }
        }
        if (s.runs > 0) {
            const double n = static_cast<double>(s.runs);
            s.crps /= n;
            s.tp /= n;
            s.fp /= n;
            s.seconds /= n;
            for (auto* v : {&s.rmse, &s.tp_param, &s.fp_param})
                for (auto& x : *v) x /= n;
        }
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace sdr
