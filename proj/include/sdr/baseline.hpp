#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "data.hpp"
#include "engine.hpp"
#include "error.hpp"
#include "families.hpp"
#include "intercepts.hpp"
#include "random.hpp"

namespace sdr {

enum class GBMode { noncyclical, cyclical };

constexpr std::string_view to_string(GBMode m) noexcept
{
    return m == GBMode::noncyclical ? "noncyclical" : "cyclical";
}

struct GBConfig
{
    double eps = 0.1;          ///< step factor
    std::size_t T = 1000;
    GBMode mode = GBMode::noncyclical;
    std::size_t folds = 10;    ///< cross-validation folds for mstop
    bool use_cv = true;        ///< false: mstop = T
    double threshold = 0.01;   ///< deselection share
    std::uint64_t seed = 1;
    std::size_t threads = 1;   ///< parallel folds

    void validate() const
    {
        if (!(eps >= 0.0)) throw InvalidInput("gb config: eps must be nonnegative");
        if (folds < 2) throw InvalidInput("gb config: folds must be at least 2");
        if (!(threshold >= 0.0 && threshold < 1.0))
            throw InvalidInput("gb config: threshold must lie in [0, 1)");
    }
};

namespace detail {

/// Held-out rows tracked alongside a boosting run.
struct Holdout
{
    const Dataset* data = nullptr;
    std::vector<double> nll; ///< mean negative log-likelihood per iteration 0..T
};

/// One base-learner choice for parameter k: intercept (column -1) or a slope.
struct GBChoice
{
    long column = -1;  ///< dataset column, -1 = intercept
    std::size_t coef = 0;
    double step = 0.0; ///< eps * least-squares coefficient
};

/// Least-squares base learner with the smallest RSS against gradient g.
inline GBChoice gb_choose(const Dataset& data, std::size_t k, const std::vector<std::size_t>& allowed,
                          const Eigen::VectorXd& ip, const Eigen::Ref<const Eigen::VectorXd>& g,
                          double eps)
{
    const double n = static_cast<double>(data.n());
    const double gm = g.mean();
    // RSS reductions: intercept n * gm^2, slope (x'g)^2 / x'x with x'x = n - 1
    GBChoice best;
    best.step = eps * gm;
    double best_red = n * gm * gm;
    for (auto j : allowed) {
        const auto col = data.columns[k][j];
        const double v = ip[static_cast<Eigen::Index>(col)];
        const double red = v * v / (n - 1.0);
        if (red > best_red) {
            best_red = red;
            best.column = static_cast<long>(col);
            best.coef = j + 1;
            best.step = eps * v / (n - 1.0);
        }
    }
    return best;
}

inline double holdout_nll(const Family& fam, const Dataset& data, const Eigen::MatrixXd& eta)
{
    const auto rows = all_rows(data.n());
    return -loglik_rows(fam, data, eta, rows) / static_cast<double>(data.n());
}

inline void apply_choice(Eigen::MatrixXd& eta, const Eigen::MatrixXd& X, std::size_t k,
                         const GBChoice& c)
{
    auto col = eta.col(static_cast<Eigen::Index>(k));
    if (c.column < 0) {
        col.array() += c.step;
    } else {
        col += c.step * X.col(c.column);
    }
}

/// Component-wise gradient boosting with least-squares base learners.
inline FitResult gb_run(const Family& fam, const Dataset& data, const GBConfig& cfg,
                        const std::vector<std::vector<std::size_t>>& allowed, std::size_t T,
                        Holdout* hold = nullptr)
{
    const std::size_t K = fam.n_params();
    if (data.n_params() != K) throw InvalidInput("gb: dataset/family parameter count mismatch");

    FitResult res;
    res.method = "gb";
    res.family = std::string(fam.name());
    res.n = data.n();
    res.config.T = T;
    res.config.eps = cfg.eps;
    res.config.seed = cfg.seed;
    res.config.cf_enabled = false;
    res.initial = CoefficientState::intercepts_only(
        data, mle_intercepts(fam, std::span<const double>(data.y.data(), data.n())));
    res.kappa.assign(K, 0.0);
    res.risk_reduction.resize(K);
    for (std::size_t k = 0; k < K; ++k) res.risk_reduction[k].assign(data.n_columns(k) + 1, 0.0);

    CoefficientState state = res.initial;
    Eigen::MatrixXd eta = state.predictors(data, data.X);
    Eigen::MatrixXd eta_hold;
    if (hold) {
        eta_hold = state.predictors(*hold->data, hold->data->X);
        hold->nll.assign(1, holdout_nll(fam, *hold->data, eta_hold));
    }
    const auto rows = all_rows(data.n());
    Eigen::MatrixXd G, IP;
    std::size_t df = 0;
    double ll = loglik_rows(fam, data, eta, rows);
    if (!std::isfinite(ll)) throw NumericError("gb: non-finite initial log-likelihood", 0);
    res.loglik.push_back(ll);
    res.df.push_back(0);
    res.bic.push_back(bic(ll, 0, res.n));

    auto commit = [&](std::size_t t, std::size_t k, const GBChoice& c, double new_ll) {
        apply_choice(eta, data.X, k, c);
        if (hold) apply_choice(eta_hold, hold->data->X, k, c);
        auto& b = state.beta[k];
        const auto idx = static_cast<Eigen::Index>(c.coef);
        const double before = b[idx];
        b[idx] += c.step;
        if (c.coef > 0) {
            if (before == 0.0 && b[idx] != 0.0) ++df;
            if (before != 0.0 && b[idx] == 0.0) --df;
        }
        res.path.push_back({t, k, c.coef, b[idx]});
        res.path_gain.push_back(new_ll - ll);
        ll = new_ll;
    };

    for (std::size_t t = 1; t <= T; ++t) {
        IterationRecord rec;
        rec.t = t;
        rec.loglik_old = ll;
        if (cfg.mode == GBMode::noncyclical) {
            gradient_rows(fam, data, eta, rows, nullptr, G);
            IP.noalias() = data.X.transpose() * G;
            std::optional<std::size_t> best_k;
            GBChoice best_c;
            double best_ll = -std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k) {
                const auto c = gb_choose(data, k, allowed[k], IP.col(static_cast<Eigen::Index>(k)),
                                         G.col(static_cast<Eigen::Index>(k)), cfg.eps);
                Delta d;
                if (c.column < 0) {
                    d.intercept[k] = c.step;
                } else {
                    d.column[k] = c.column;
                    d.step[k] = c.step;
                }
                const double tll = loglik_rows(fam, data, eta, rows, &d);
                if (std::isfinite(tll) && tll > best_ll) {
                    best_ll = tll;
                    best_k = k;
                    best_c = c;
                }
            }
            if (!best_k) throw NumericError("gb: non-finite log-likelihood", t);
            rec.updated = true;
            rec.subset = 1u << *best_k;
            rec.candidate[*best_k] = best_c.column < 0 ? -1 : static_cast<long>(best_c.coef - 1);
            rec.step[*best_k] = best_c.step;
            commit(t, *best_k, best_c, best_ll);
        } else {
            for (std::size_t k = 0; k < K; ++k) {
                gradient_rows(fam, data, eta, rows, nullptr, G);
                IP.noalias() = data.X.transpose() * G;
                const auto c = gb_choose(data, k, allowed[k], IP.col(static_cast<Eigen::Index>(k)),
                                         G.col(static_cast<Eigen::Index>(k)), cfg.eps);
                Delta d;
                if (c.column < 0) {
                    d.intercept[k] = c.step;
                } else {
                    d.column[k] = c.column;
                    d.step[k] = c.step;
                }
                const double tll = loglik_rows(fam, data, eta, rows, &d);
                if (!std::isfinite(tll)) throw NumericError("gb: non-finite log-likelihood", t);
                rec.subset |= 1u << k;
                rec.candidate[k] = c.column < 0 ? -1 : static_cast<long>(c.coef - 1);
                rec.step[k] = c.step;
                commit(t, k, c, tll);
            }
            rec.updated = true;
        }
        rec.loglik_new = ll;
        res.iterations.push_back(rec);
        res.loglik.push_back(ll);
        res.df.push_back(df);
        res.bic.push_back(bic(ll, df, res.n));
        if (hold) hold->nll.push_back(holdout_nll(fam, *hold->data, eta_hold));
    }
    res.bic_smoothed = res.bic;
    res.mstop = T;
    res.selected_state = state;
    res.selected_state.iteration = T;
    res.selected = state.selected(data);
    return res;
}

inline std::vector<std::vector<std::size_t>> all_allowed(const Dataset& data)
{
    std::vector<std::vector<std::size_t>> a(data.n_params());
    for (std::size_t k = 0; k < a.size(); ++k) {
        a[k].resize(data.n_columns(k));
        std::iota(a[k].begin(), a[k].end(), std::size_t{0});
    }
    return a;
}

/// Log-likelihood gain per (param, coefficient) accumulated up to iteration m.
inline std::vector<std::vector<double>> gains_until(const FitResult& res, std::size_t m)
{
    std::vector<std::vector<double>> g(res.risk_reduction.size());
    for (std::size_t k = 0; k < g.size(); ++k) g[k].assign(res.risk_reduction[k].size(), 0.0);
    for (std::size_t i = 0; i < res.path.size() && i < res.path_gain.size(); ++i) {
        const auto& e = res.path[i];
        if (e.iteration > m) break;
        g[e.param][e.coef] += res.path_gain[i];
    }
    return g;
}

} // namespace detail

/// Fold assignment: contiguous blocks of a seeded permutation of 0..n-1.
inline std::vector<std::vector<std::size_t>> cv_folds(std::size_t n, std::size_t folds,
                                                      std::uint64_t seed)
{
    if (folds < 2 || folds > n) throw InvalidInput("cv: need 2 <= folds <= n");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng = make_rng(seed, 0xF01D5);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(rng, i)]);
    std::vector<std::vector<std::size_t>> out(folds);
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t lo = f * n / folds;
        const std::size_t hi = (f + 1) * n / folds;
        out[f].assign(perm.begin() + static_cast<long>(lo), perm.begin() + static_cast<long>(hi));
        std::sort(out[f].begin(), out[f].end());
    }
    return out;
}

/// Number of boosting iterations minimizing the mean held-out negative
/// log-likelihood over cross-validation folds (0..T).
inline std::size_t cv_mstop(const Family& fam, const Dataset& data, const GBConfig& cfg,
                            std::vector<double>* curve = nullptr)
{
    cfg.validate();
    const auto folds = cv_folds(data.n(), cfg.folds, cfg.seed);
    std::vector<std::vector<double>> nll(folds.size());
    std::vector<std::exception_ptr> errors(folds.size());

    auto run_fold = [&](std::size_t f) {
        try {
            std::vector<char> held(data.n(), 0);
            for (auto i : folds[f]) held[i] = 1;
            std::vector<std::size_t> train;
            train.reserve(data.n() - folds[f].size());
            for (std::size_t i = 0; i < data.n(); ++i)
                if (!held[i]) train.push_back(i);
            const Dataset tr = subset_rows(data, train);
            const Dataset te = subset_rows(data, folds[f]);
            detail::Holdout hold{&te, {}};
            detail::gb_run(fam, tr, cfg, detail::all_allowed(tr), cfg.T, &hold);
            nll[f] = std::move(hold.nll);
        } catch (...) {
            errors[f] = std::current_exception();
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, folds.size()));
    if (threads == 1) {
        for (std::size_t f = 0; f < folds.size(); ++f) run_fold(f);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t w = 0; w < threads; ++w)
            pool.emplace_back([&] {
                for (std::size_t f = next++; f < folds.size(); f = next++) run_fold(f);
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<double> mean(cfg.T + 1, 0.0);
    for (std::size_t t = 0; t <= cfg.T; ++t) {
        for (std::size_t f = 0; f < folds.size(); ++f) mean[t] += nll[f][t];
        mean[t] /= static_cast<double>(folds.size());
    }
    if (curve) *curve = mean;
    return argmin_first(mean);
}

/// Gradient boosting; mstop by cross-validation unless disabled.
inline FitResult gb_fit(const Family& fam, const Dataset& data, const GBConfig& cfg)
{
    cfg.validate();
    const auto t0 = detail::Clock::now();
    const std::size_t mstop = cfg.use_cv ? cv_mstop(fam, data, cfg) : cfg.T;
    FitResult res = detail::gb_run(fam, data, cfg, detail::all_allowed(data), cfg.T);
    res.method = "gb";
    res.mstop = mstop;
    res.selected_state = res.state_at(mstop);
    res.selected = res.selected_state.selected(data);
    res.risk_reduction = detail::gains_until(res, mstop);
    res.select_seconds = detail::seconds_since(t0);
    return res;
}

struct DeselectResult
{
    std::vector<std::vector<std::size_t>> selected; ///< surviving dataset columns per parameter
    std::vector<std::vector<double>> share;         ///< gain share per (param, local column)
    FitResult refit;
};

/// Variable deselection: drops variables whose share of the total slope
/// log-likelihood gain up to mstop is below `threshold`, then reruns
/// gradient boosting on the survivors for mstop iterations.
inline DeselectResult var_deselect(const Family& fam, const Dataset& data, const FitResult& fit,
                                   const GBConfig& cfg, double threshold)
{
    if (!(threshold >= 0.0 && threshold < 1.0))
        throw InvalidInput("var_deselect: threshold must lie in [0, 1)");
    const auto gains = fit.risk_reduction.empty() ? detail::gains_until(fit, fit.mstop)
                                                  : fit.risk_reduction;
    const CoefficientState at = fit.state_at(fit.mstop);
    double total = 0.0;
    for (const auto& g : gains)
        for (std::size_t c = 1; c < g.size(); ++c) total += g[c];

    DeselectResult out;
    out.selected.resize(data.n_params());
    out.share.resize(data.n_params());
    std::vector<std::vector<std::size_t>> allowed(data.n_params());
    for (std::size_t k = 0; k < data.n_params(); ++k) {
        out.share[k].assign(data.n_columns(k), 0.0);
        for (std::size_t j = 0; j < data.n_columns(k); ++j) {
            const bool touched = at.beta[k][static_cast<Eigen::Index>(j + 1)] != 0.0;
            const double sh = total > 0.0 ? gains[k][j + 1] / total : 0.0;
            out.share[k][j] = sh;
            if (touched && sh >= threshold) {
                allowed[k].push_back(j);
                out.selected[k].push_back(data.columns[k][j]);
            }
        }
    }
    const auto t0 = detail::Clock::now();
    GBConfig rc = cfg;
    rc.use_cv = false;
    out.refit = detail::gb_run(fam, data, rc, allowed, fit.mstop);
    out.refit.method = "vardes";
    out.refit.select_seconds = fit.select_seconds;
    out.refit.refit_seconds = detail::seconds_since(t0);
    return out;
}

} // namespace sdr

