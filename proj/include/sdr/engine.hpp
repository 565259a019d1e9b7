#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "data.hpp"
#include "error.hpp"
#include "families.hpp"
#include "intercepts.hpp"

namespace sdr {

enum class UpdateMode { noncyclical, best_subset };

constexpr std::string_view to_string(UpdateMode m) noexcept
{
    return m == UpdateMode::noncyclical ? "noncyclical" : "best_subset";
}

/// Zero/positive stratified batches (count families only).
struct StrataConfig
{
    std::size_t zeros = 0;
    std::size_t positives = 0;
    bool with_replacement = false;
};

struct FitConfig
{
    double eps = 0.01;            ///< maximum step length
    double nu = 0.1;              ///< lower clip as a fraction of eps
    double rho = 0.8;             ///< fraction of T with the lower clip active
    std::size_t T = 1000;         ///< iteration budget
    bool cf_enabled = true;       ///< correlation filtering
    std::optional<double> kappa;  ///< explicit threshold; automatic from alpha when empty
    double alpha = 0.05;
    bool kappa_clamp = true;
    double kappa_min = 0.075;
    double kappa_max = 0.175;
    std::size_t bs = 0;           ///< batch size; 0 or n means full batch
    std::optional<StrataConfig> strata;
    UpdateMode update_mode = UpdateMode::best_subset;
    std::size_t bic_ma_window = 10;
    std::size_t patience = 50;    ///< consecutive no-update iterations before stopping
    std::uint64_t seed = 1;

    void validate() const
    {
        if (!(eps > 0.0)) throw InvalidInput("config: eps must be positive");
        if (!(nu >= 0.0 && nu <= 1.0)) throw InvalidInput("config: nu must lie in [0, 1]");
        if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidInput("config: rho must lie in [0, 1]");
        if (T < 1) throw InvalidInput("config: T must be at least 1");
        if (kappa && !(*kappa >= 0.0)) throw InvalidInput("config: kappa must be nonnegative");
        if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("config: alpha must lie in (0, 1)");
        if (kappa_clamp && !(kappa_min >= 0.0 && kappa_min <= kappa_max))
            throw InvalidInput("config: need 0 <= kappa_min <= kappa_max");
        if (bic_ma_window < 1) throw InvalidInput("config: bic_ma_window must be at least 1");
        if (patience < 1) throw InvalidInput("config: patience must be at least 1");
    }
};

/// Coefficients per distribution parameter: entry 0 is the intercept, entry
/// j + 1 belongs to dataset column `columns[k][j]`.
struct CoefficientState
{
    std::vector<Eigen::VectorXd> beta;
    std::size_t iteration = 0;

    static CoefficientState intercepts_only(const Dataset& data, std::span<const double> intercepts)
    {
        CoefficientState s;
        s.beta.resize(data.n_params());
        for (std::size_t k = 0; k < data.n_params(); ++k) {
            s.beta[k] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.n_columns(k) + 1));
            s.beta[k][0] = intercepts[k];
        }
        return s;
    }

    /// Number of nonzero non-intercept coefficients.
    std::size_t nonzero_slopes() const
    {
        std::size_t df = 0;
        for (const auto& b : beta)
            for (Eigen::Index j = 1; j < b.size(); ++j) df += b[j] != 0.0;
        return df;
    }

    /// Dataset column indices with nonzero coefficients, per parameter.
    std::vector<std::vector<std::size_t>> selected(const Dataset& data) const
    {
        std::vector<std::vector<std::size_t>> out(beta.size());
        for (std::size_t k = 0; k < beta.size(); ++k)
            for (Eigen::Index j = 1; j < beta[k].size(); ++j)
                if (beta[k][j] != 0.0) out[k].push_back(data.columns[k][static_cast<std::size_t>(j - 1)]);
        return out;
    }

    /// Predictor matrix (n x K) for standardized covariates `X`.
    Eigen::MatrixXd predictors(const Dataset& data, const Eigen::MatrixXd& X) const
    {
        Eigen::MatrixXd eta(X.rows(), static_cast<Eigen::Index>(beta.size()));
        for (std::size_t k = 0; k < beta.size(); ++k) {
            auto col = eta.col(static_cast<Eigen::Index>(k));
            col.setConstant(beta[k][0]);
            for (Eigen::Index j = 1; j < beta[k].size(); ++j)
                if (beta[k][j] != 0.0)
                    col += beta[k][j] * X.col(static_cast<Eigen::Index>(data.columns[k][static_cast<std::size_t>(j - 1)]));
        }
        return eta;
    }
};

/// One coefficient change: at `iteration`, beta[param][coef] became `value`.
struct PathEntry
{
    std::size_t iteration = 0;
    std::size_t param = 0;
    std::size_t coef = 0; ///< 0 = intercept
    double value = 0.0;
};

/// Diagnostics of one boosting iteration.
struct IterationRecord
{
    std::size_t t = 0;
    bool updated = false;
    unsigned subset = 0;                      ///< bit k set: parameter k updated
    std::array<long, max_params> candidate{-1, -1, -1}; ///< local column index, -1 if none
    std::array<double, max_params> correlation{};
    std::array<double, max_params> dl{};      ///< normalized partial derivative
    std::array<double, max_params> step{};    ///< applied slope step
    std::array<double, max_params> intercept_step{};
    double loglik_old = 0.0;                  ///< next-batch log-likelihood before
    double loglik_new = 0.0;                  ///< next-batch log-likelihood of the accepted state
};

struct FitResult
{
    std::string method;
    std::string family;
    FitConfig config;
    std::size_t n = 0;
    std::vector<double> kappa;                ///< threshold used per parameter

    CoefficientState initial;
    std::vector<PathEntry> path;
    std::vector<IterationRecord> iterations;  ///< entry t - 1 describes iteration t
    // indexed by iteration 0..iterations.size()
    std::vector<double> loglik;
    std::vector<std::size_t> df;
    std::vector<double> bic;
    std::vector<double> bic_smoothed;

    std::size_t mstop = 0;
    CoefficientState selected_state;
    std::vector<std::vector<std::size_t>> selected;

    std::optional<CoefficientState> refit;
    bool refit_converged = false;
    std::size_t refit_iterations = 0;
    double refit_loglik = std::numeric_limits<double>::quiet_NaN();

    /// per (param, local column + 1) log-likelihood gain up to mstop; filled
    /// by the gradient-boosting baseline
    std::vector<std::vector<double>> risk_reduction;
    /// log-likelihood gain of each path entry (gradient boosting only)
    std::vector<double> path_gain;

    double select_seconds = 0.0;
    double refit_seconds = 0.0;

    /// Final coefficients: the refit when present, else the state at mstop.
    const CoefficientState& final_state() const { return refit ? *refit : selected_state; }

    /// Coefficients after iteration t, replayed from the path.
    CoefficientState state_at(std::size_t t) const
    {
        CoefficientState s = initial;
        for (const auto& e : path) {
            if (e.iteration > t) break;
            s.beta[e.param][static_cast<Eigen::Index>(e.coef)] = e.value;
        }
        s.iteration = t;
        return s;
    }
};

// ---------------------------------------------------------------------------
// Step rules

/// Magnitude of a semi-constant stagewise step for normalized derivative dl.
inline double semi_constant_step(double dl, double eps, double nu, std::size_t t, double rho,
                                 std::size_t T)
{
    const double a = std::abs(dl);
    const double floor = nu * eps;
    if (a < floor) return static_cast<double>(t) < rho * static_cast<double>(T) ? floor : a;
    if (a <= eps) return a;
    return eps;
}

/// Signed joint step for a subset of parameters: the derivative vector is
/// rescaled to Euclidean length at most eps, then each component is lifted to
/// nu * eps while t < rho * T. A zero derivative stays zero.
inline std::vector<double> best_subset_step(std::span<const double> dls, double eps, double nu,
                                            std::size_t t, double rho, std::size_t T)
{
    double norm = 0.0;
    for (double d : dls) norm += d * d;
    norm = std::sqrt(norm);
    const double scale = norm > eps ? eps / norm : 1.0;
    const bool clip_below = static_cast<double>(t) < rho * static_cast<double>(T);
    std::vector<double> out(dls.size());
    for (std::size_t s = 0; s < dls.size(); ++s) {
        double v = scale * dls[s];
        if (clip_below && v != 0.0 && std::abs(v) < nu * eps) v = std::copysign(nu * eps, v);
        out[s] = v;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Correlation filter

/// Critical |correlation| for the max over J independent columns at level
/// alpha, for m observations per correlation.
inline double kappa_auto(double alpha, std::size_t J, std::size_t m)
{
    if (J < 1) throw InvalidInput("kappa_auto: need at least one column");
    if (m < 2) throw InvalidInput("kappa_auto: need at least two observations");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("kappa_auto: alpha must lie in (0, 1)");
    const double p = 0.5 * (1.0 + std::pow(1.0 - alpha, 1.0 / static_cast<double>(J)));
    const double z = boost::math::quantile(boost::math::normal_distribution<double>(), p);
    const double md = static_cast<double>(m);
    return z * std::sqrt(md) / (md - 1.0);
}

inline double kappa_auto(double alpha, std::size_t J, std::size_t m, double lo, double hi)
{
    return std::clamp(kappa_auto(alpha, J, m), lo, hi);
}

/// Best update column for one parameter.
struct Candidate
{
    std::size_t index = 0;      ///< local column index
    double inner_product = 0.0; ///< x_j' g
    double correlation = 0.0;   ///< Pearson correlation of x_j and g
};

/// argmax_j |x_j' g| over the columns of Xk; ties go to the lowest index.
inline std::optional<Candidate> select_candidate(const Eigen::Ref<const Eigen::MatrixXd>& Xk,
                                                 const Eigen::Ref<const Eigen::VectorXd>& g)
{
    if (Xk.cols() == 0) return std::nullopt;
    const Eigen::VectorXd ip = Xk.transpose() * g;
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < ip.size(); ++j)
        if (std::abs(ip[j]) > std::abs(ip[best])) best = j;
    const auto x = Xk.col(best).array();
    const double xm = x.mean();
    const double gm = g.mean();
    const double sxx = (x - xm).square().sum();
    const double sgg = (g.array() - gm).square().sum();
    const double sxg = ((x - xm) * (g.array() - gm)).sum();
    const double c = (sxx > 0.0 && sgg > 0.0) ? sxg / std::sqrt(sxx * sgg) : 0.0;
    return Candidate{static_cast<std::size_t>(best), ip[best], c};
}

/// Drops candidates with |c| <= kappa (kappa = 0 disables the filter).
inline std::vector<std::optional<Candidate>>
correlation_filter(std::span<const std::optional<Candidate>> candidates, std::span<const double> kappa)
{
    std::vector<std::optional<Candidate>> out(candidates.begin(), candidates.end());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double kap = kappa.size() == 1 ? kappa[0] : kappa[k];
        if (out[k] && kap > 0.0 && std::abs(out[k]->correlation) <= kap) out[k].reset();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Information criterion

inline double bic(double loglik, std::size_t df, std::size_t n)
{
    return -2.0 * loglik + static_cast<double>(df) * std::log(static_cast<double>(n));
}

/// Trailing moving average with window w (shorter at the start).
inline std::vector<double> moving_average(std::span<const double> v, std::size_t w)
{
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        sum += v[i];
        if (i >= w) sum -= v[i - w];
        out[i] = sum / static_cast<double>(std::min(i + 1, w));
    }
    return out;
}

/// Index of the minimum, earliest on ties.
inline std::size_t argmin_first(std::span<const double> v)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] < v[best]) best = i;
    return best;
}

// ---------------------------------------------------------------------------
// Likelihood machinery

namespace detail {

/// Tentative change of the predictors: per parameter an intercept shift and
/// optionally one slope step on dataset column `column`.
struct Delta
{
    std::array<double, max_params> intercept{};
    std::array<long, max_params> column{-1, -1, -1};
    std::array<double, max_params> step{};

    bool any() const
    {
        for (std::size_t k = 0; k < max_params; ++k)
            if (intercept[k] != 0.0 || (column[k] >= 0 && step[k] != 0.0)) return true;
        return false;
    }
};

inline double shifted_eta(const Eigen::MatrixXd& eta, const Eigen::MatrixXd& X, Eigen::Index i,
                          std::size_t k, const Delta* d)
{
    double e = eta(i, static_cast<Eigen::Index>(k));
    if (d) {
        e = e + d->intercept[k];
        if (d->column[k] >= 0) e = e + d->step[k] * X(i, d->column[k]);
    }
    return e;
}

inline double loglik_rows(const Family& fam, const Dataset& data, const Eigen::MatrixXd& eta,
                          std::span<const std::uint32_t> rows, const Delta* d = nullptr)
{
    const std::size_t K = fam.n_params();
    ParamVector e{};
    double ll = 0.0;
    for (auto r : rows) {
        const auto i = static_cast<Eigen::Index>(r);
        for (std::size_t k = 0; k < K; ++k) e[k] = shifted_eta(eta, data.X, i, k, d);
        ll += fam.log_density_eta(data.y[i], std::span<const double>(e.data(), K));
    }
    return ll;
}

/// Gradient rows (|rows| x K) of log d_y w.r.t. the predictors.
inline void gradient_rows(const Family& fam, const Dataset& data, const Eigen::MatrixXd& eta,
                          std::span<const std::uint32_t> rows, const Delta* d, Eigen::MatrixXd& G)
{
    const std::size_t K = fam.n_params();
    G.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(K));
    ParamVector e{}, g{};
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(rows[r]);
        for (std::size_t k = 0; k < K; ++k) e[k] = shifted_eta(eta, data.X, i, k, d);
        fam.grad_eta_at_eta(data.y[i], std::span<const double>(e.data(), K),
                            std::span<double>(g.data(), K));
        for (std::size_t k = 0; k < K; ++k) {
            if (!std::isfinite(g[k]))
                throw NumericError("non-finite gradient at row " + std::to_string(rows[r]), rows[r]);
            G(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = g[k];
        }
    }
}

inline std::vector<std::uint32_t> all_rows(std::size_t n)
{
    std::vector<std::uint32_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = static_cast<std::uint32_t>(i);
    return rows;
}

} // namespace detail

/// g_k restricted to `rows`: d log d_y / d eta_k at the current coefficients.
inline Eigen::VectorXd gradient_vector(const Family& fam, const CoefficientState& state,
                                       const Dataset& data, std::size_t k,
                                       std::span<const std::uint32_t> rows)
{
    const Eigen::MatrixXd eta = state.predictors(data, data.X);
    Eigen::MatrixXd G;
    detail::gradient_rows(fam, data, eta, rows, nullptr, G);
    return G.col(static_cast<Eigen::Index>(k));
}

inline double full_loglik(const Family& fam, const Dataset& data, const CoefficientState& state)
{
    const Eigen::MatrixXd eta = state.predictors(data, data.X);
    const auto rows = detail::all_rows(data.n());
    return detail::loglik_rows(fam, data, eta, rows);
}

// ---------------------------------------------------------------------------
// The stagewise loop

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Batch schedule for a configuration.
inline BatchSchedule schedule_for(const Dataset& data, const FitConfig& cfg, std::size_t T,
                                  std::uint64_t stream)
{
    const std::size_t n = data.n();
    if (cfg.strata) {
        const auto strata = zero_positive_strata(
            std::span<const double>(data.y.data(), n), cfg.strata->zeros, cfg.strata->positives,
            cfg.strata->with_replacement);
        return make_batches(n, 0, T, derive_seed(cfg.seed, stream), &strata);
    }
    if (cfg.bs == 0 || cfg.bs >= n) return BatchSchedule::full(n, T);
    return make_batches(n, cfg.bs, T, derive_seed(cfg.seed, stream));
}

/// Stateful stagewise loop over one dataset. Supports continuation
/// across segments (threshold descent) and restricted column sets (refit).
class StagewiseLoop
{
public:
    StagewiseLoop(const Family& fam, const Dataset& data, const FitConfig& cfg,
                  CoefficientState init, BatchSchedule schedule, std::size_t nominal_T)
        : fam_(fam), data_(data), cfg_(cfg), state_(std::move(init)),
          schedule_(std::move(schedule)), nominal_T_(nominal_T), K_(fam.n_params())
    {
        if (data.n_params() != K_)
            throw InvalidInput("dataset has " + std::to_string(data.n_params())
                               + " predictors but family " + std::string(fam.name()) + " has "
                               + std::to_string(K_) + " parameters");
        eta_ = state_.predictors(data_, data_.X);
        allowed_.resize(K_);
        for (std::size_t k = 0; k < K_; ++k) {
            allowed_[k].resize(data.n_columns(k));
            for (std::size_t j = 0; j < allowed_[k].size(); ++j) allowed_[k][j] = j;
        }
        kappa_.assign(K_, 0.0);
        df_ = state_.nonzero_slopes();
        const auto first = schedule_.batch(0);
        const double ll0 = loglik_rows(fam_, data_, eta_, first);
        if (!std::isfinite(ll0)) throw NumericError("non-finite initial log-likelihood", 0);
        n_scale_ = static_cast<double>(data_.n()) / static_cast<double>(first.size());
        full_identity_ = schedule_.constant() && first.size() == data_.n();
    }

    void set_kappa(std::vector<double> kappa) { kappa_ = std::move(kappa); }
    const std::vector<double>& kappa() const { return kappa_; }

    void restrict_columns(std::vector<std::vector<std::size_t>> allowed) { allowed_ = std::move(allowed); }

    void set_backtracking(int halvings) { backtrack_ = halvings; }

    const CoefficientState& state() const { return state_; }
    std::size_t df() const { return df_; }
    std::size_t t() const { return t_; }

    /// Runs one iteration (t advances by one). Returns the iteration record.
    IterationRecord step(std::vector<PathEntry>& path)
    {
        ++t_;
        IterationRecord rec;
        rec.t = t_;
        const std::size_t T = nominal_T_;
        const std::size_t sched_len = schedule_.size();
        const auto cur = schedule_.batch((t_ - 1) % sched_len);
        const auto nxt = schedule_.batch(t_ % sched_len);
        const double bs = static_cast<double>(cur.size());

        // log-likelihood of the current coefficients on the next batch
        double ll_old;
        if (full_identity_ && cached_ll_) {
            ll_old = *cached_ll_;
        } else {
            ll_old = loglik_rows(fam_, data_, eta_, nxt);
        }
        if (!std::isfinite(ll_old))
            throw NumericError("non-finite log-likelihood at iteration " + std::to_string(t_), t_);
        rec.loglik_old = ll_old;
        rec.loglik_new = ll_old;

        // clipped intercept updates from the current-batch gradients
        gradient_rows(fam_, data_, eta_, cur, nullptr, G_);
        Delta base;
        for (std::size_t k = 0; k < K_; ++k) {
            const double d = G_.col(static_cast<Eigen::Index>(k)).sum() / bs;
            const double s = std::copysign(std::min(std::abs(d), cfg_.eps), d);
            base.intercept[k] = d == 0.0 ? 0.0 : s;
            rec.intercept_step[k] = base.intercept[k];
        }

        // candidate gradients after the intercept move
        gradient_rows(fam_, data_, eta_, cur, &base, G_);
        const Eigen::MatrixXd* Xb = &data_.X;
        if (!full_identity_) {
            Xb_.resize(static_cast<Eigen::Index>(cur.size()), data_.X.cols());
            for (std::size_t r = 0; r < cur.size(); ++r)
                Xb_.row(static_cast<Eigen::Index>(r)) = data_.X.row(static_cast<Eigen::Index>(cur[r]));
            Xb = &Xb_;
        }
        IP_.noalias() = Xb->transpose() * G_;

        std::array<long, max_params> cand_col{-1, -1, -1};
        unsigned survivors = 0;
        for (std::size_t k = 0; k < K_; ++k) {
            const auto& allowed = allowed_[k];
            if (allowed.empty()) continue;
            const auto kk = static_cast<Eigen::Index>(k);
            std::size_t best = allowed[0];
            double best_abs = std::abs(IP_(static_cast<Eigen::Index>(data_.columns[k][best]), kk));
            for (std::size_t a = 1; a < allowed.size(); ++a) {
                const std::size_t j = allowed[a];
                const double v = std::abs(IP_(static_cast<Eigen::Index>(data_.columns[k][j]), kk));
                if (v > best_abs) {
                    best = j;
                    best_abs = v;
                }
            }
            const auto col = static_cast<Eigen::Index>(data_.columns[k][best]);
            const double ip = IP_(col, kk);
            const double c = pearson(Xb->col(col), G_.col(kk));
            rec.candidate[k] = static_cast<long>(best);
            rec.correlation[k] = c;
            rec.dl[k] = ip / bs;
            const bool keep = !(kappa_[k] > 0.0 && std::abs(c) <= kappa_[k]);
            if (keep) {
                survivors |= 1u << k;
                cand_col[k] = col;
            }
        }

        if (survivors == 0) {
            note_no_update(rec, ll_old);
            return rec;
        }

        // enumerate parameter subsets; the best one must beat ll_old
        double best_ll = ll_old;
        std::optional<Delta> best_delta;
        unsigned best_mask = 0;
        const unsigned full = (1u << K_) - 1u;
        double shrink = 1.0;
        for (int attempt = 0; attempt <= backtrack_ && !best_delta; ++attempt, shrink *= 0.5) {
            for (unsigned mask = 1; mask <= full; ++mask) {
                if ((mask & survivors) != mask) continue;
                if (cfg_.update_mode == UpdateMode::noncyclical && (mask & (mask - 1u)) != 0u)
                    continue;
                std::array<double, max_params> dls{};
                std::size_t m = 0;
                for (std::size_t k = 0; k < K_; ++k)
                    if (mask & (1u << k)) dls[m++] = rec.dl[k];
                const auto steps = best_subset_step(std::span<const double>(dls.data(), m),
                                                    cfg_.eps, cfg_.nu, t_, cfg_.rho, T);
                Delta d = base;
                m = 0;
                for (std::size_t k = 0; k < K_; ++k) {
                    d.intercept[k] *= shrink;
                    if (mask & (1u << k)) {
                        d.column[k] = cand_col[k];
                        d.step[k] = shrink * steps[m++];
                    }
                }
                const double ll = loglik_rows(fam_, data_, eta_, nxt, &d);
                if (std::isfinite(ll) && ll > best_ll) {
                    best_ll = ll;
                    best_delta = d;
                    best_mask = mask;
                }
            }
        }

        if (!best_delta) {
            note_no_update(rec, ll_old);
            return rec;
        }

        commit(*best_delta, path);
        rec.updated = true;
        rec.subset = best_mask;
        for (std::size_t k = 0; k < K_; ++k) {
            rec.step[k] = best_delta->column[k] >= 0 ? best_delta->step[k] : 0.0;
            rec.intercept_step[k] = best_delta->intercept[k];
        }
        rec.loglik_new = best_ll;
        no_update_streak_ = 0;
        cached_ll_ = best_ll;
        last_criterion_ = best_ll * n_scale_;
        return rec;
    }

    std::size_t no_update_streak() const { return no_update_streak_; }

    /// Log-likelihood behind the BIC for the latest iteration: the next-batch
    /// value rescaled to n observations.
    double criterion_loglik() const { return last_criterion_; }

    double initial_criterion()
    {
        const auto nxt = schedule_.batch(0);
        last_criterion_ = loglik_rows(fam_, data_, eta_, nxt) * n_scale_;
        return last_criterion_;
    }

private:
    static double pearson(const Eigen::Ref<const Eigen::VectorXd>& x,
                          const Eigen::Ref<const Eigen::VectorXd>& g)
    {
        const double xm = x.mean();
        const double gm = g.mean();
        double sxx = 0.0, sgg = 0.0, sxg = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double a = x[i] - xm;
            const double b = g[i] - gm;
            sxx += a * a;
            sgg += b * b;
            sxg += a * b;
        }
        return (sxx > 0.0 && sgg > 0.0) ? sxg / std::sqrt(sxx * sgg) : 0.0;
    }

    void note_no_update(IterationRecord& rec, double ll_old)
    {
        ++no_update_streak_;
        rec.updated = false;
        for (auto& s : rec.intercept_step) s = 0.0;
        cached_ll_ = ll_old;
        last_criterion_ = ll_old * n_scale_;
    }

    void commit(const Delta& d, std::vector<PathEntry>& path)
    {
        for (std::size_t k = 0; k < K_; ++k) {
            const auto kk = static_cast<Eigen::Index>(k);
            auto& b = state_.beta[k];
            const bool slope = d.column[k] >= 0 && d.step[k] != 0.0;
            if (d.intercept[k] == 0.0 && !slope) continue;
            auto col = eta_.col(kk);
            if (slope) {
                const auto xc = data_.X.col(d.column[k]);
                for (Eigen::Index i = 0; i < col.size(); ++i)
                    col[i] = (col[i] + d.intercept[k]) + d.step[k] * xc[i];
            } else {
                for (Eigen::Index i = 0; i < col.size(); ++i) col[i] = col[i] + d.intercept[k];
            }
            if (d.intercept[k] != 0.0) {
                b[0] += d.intercept[k];
                path.push_back({t_, k, 0, b[0]});
            }
            if (slope) {
                const auto local = local_index(k, static_cast<std::size_t>(d.column[k]));
                const double before = b[static_cast<Eigen::Index>(local + 1)];
                const double after = before + d.step[k];
                b[static_cast<Eigen::Index>(local + 1)] = after;
                if (before == 0.0 && after != 0.0) ++df_;
                if (before != 0.0 && after == 0.0) --df_;
                path.push_back({t_, k, local + 1, after});
            }
        }
        state_.iteration = t_;
    }

    std::size_t local_index(std::size_t k, std::size_t column) const
    {
        const auto& cols = data_.columns[k];
        for (std::size_t j = 0; j < cols.size(); ++j)
            if (cols[j] == column) return j;
        return 0;
    }

    const Family& fam_;
    const Dataset& data_;
    FitConfig cfg_;
    CoefficientState state_;
    BatchSchedule schedule_;
    std::size_t nominal_T_;
    std::size_t K_;
    Eigen::MatrixXd eta_;
    Eigen::MatrixXd G_;
    Eigen::MatrixXd Xb_;
    Eigen::MatrixXd IP_;
    std::vector<std::vector<std::size_t>> allowed_;
    std::vector<double> kappa_;
    std::size_t t_ = 0;
    std::size_t df_ = 0;
    std::size_t no_update_streak_ = 0;
    std::optional<double> cached_ll_;
    double n_scale_ = 1.0;
    double last_criterion_ = 0.0;
    bool full_identity_ = false;
    int backtrack_ = 0;
};

inline std::vector<double> kappas_for(const Dataset& data, const FitConfig& cfg, std::size_t m)
{
    std::vector<double> out(data.n_params(), 0.0);
    if (!cfg.cf_enabled) return out;
    for (std::size_t k = 0; k < out.size(); ++k) {
        if (cfg.kappa) {
            out[k] = *cfg.kappa;
        } else if (data.n_columns(k) > 0) {
            out[k] = cfg.kappa_clamp
                       ? kappa_auto(cfg.alpha, data.n_columns(k), m, cfg.kappa_min, cfg.kappa_max)
                       : kappa_auto(cfg.alpha, data.n_columns(k), m);
        }
    }
    return out;
}

inline bool uses_batches(const Dataset& data, const FitConfig& cfg)
{
    return cfg.strata || (cfg.bs != 0 && cfg.bs < data.n());
}

/// Initial intercepts: full-data MLE, or the first batch's when batches are
/// stratified (the subsampled distribution is what the loop then sees).
inline CoefficientState initial_state(const Family& fam, const Dataset& data,
                                      const BatchSchedule& schedule)
{
    std::vector<double> y;
    if (schedule.stratified()) {
        const auto rows = schedule.batch(0);
        y.reserve(rows.size());
        for (auto r : rows) y.push_back(data.y[static_cast<Eigen::Index>(r)]);
    } else {
        y.assign(data.y.data(), data.y.data() + data.n());
    }
    return CoefficientState::intercepts_only(data, mle_intercepts(fam, y));
}

inline void record(FitResult& res, const IterationRecord& rec, double ll, std::size_t df)
{
    res.iterations.push_back(rec);
    res.loglik.push_back(ll);
    res.df.push_back(df);
    res.bic.push_back(bic(ll, df, res.n));
}

/// Picks mstop from the (smoothed in batch mode) BIC path and fills the
/// selected state.
inline void finish_selection(FitResult& res, const Dataset& data, bool batchwise)
{
    res.bic_smoothed = batchwise ? moving_average(res.bic, res.config.bic_ma_window) : res.bic;
    res.mstop = argmin_first(res.bic_smoothed);
    res.selected_state = res.state_at(res.mstop);
    res.selected = res.selected_state.selected(data);
}

} // namespace detail

/// Stagewise boosting for distributional regression: batch
/// candidate selection, optional correlation filter, best-subset or
/// non-cyclical semi-constant updates accepted on the next batch, BIC path.
inline FitResult sbdr_fit(const Family& fam, const Dataset& data, const FitConfig& cfg)
{
    cfg.validate();
    const auto t0 = detail::Clock::now();
    auto schedule = detail::schedule_for(data, cfg, cfg.T, 1);
    const bool batchwise = detail::uses_batches(data, cfg);
    const std::size_t m = schedule.batch_size();

    FitResult res;
    res.method = "sbdr";
    res.family = std::string(fam.name());
    res.config = cfg;
    res.n = data.n();
    res.initial = detail::initial_state(fam, data, schedule);

    detail::StagewiseLoop loop(fam, data, cfg, res.initial, std::move(schedule), cfg.T);
    res.kappa = detail::kappas_for(data, cfg, m);
    loop.set_kappa(res.kappa);

    res.loglik.push_back(loop.initial_criterion());
    res.df.push_back(loop.df());
    res.bic.push_back(bic(res.loglik.back(), res.df.back(), res.n));
    for (std::size_t t = 1; t <= cfg.T; ++t) {
        const auto rec = loop.step(res.path);
        detail::record(res, rec, loop.criterion_loglik(), loop.df());
        if (loop.no_update_streak() >= cfg.patience) break;
    }
    detail::finish_selection(res, data, batchwise);
    res.select_seconds = detail::seconds_since(t0);
    return res;
}

struct RefitOptions
{
    double grad_tol = 1e-6;          ///< best |dl| below this ...
    std::size_t grad_patience = 25;  ///< ... for this many iterations
    double rel_tol = 1e-9;           ///< relative log-likelihood change ...
    std::size_t rel_window = 100;    ///< ... over this many iterations
    std::size_t cap_factor = 50;     ///< iteration cap = cap_factor * T
    int backtrack_halvings = 10;
};

struct RefitResult
{
    CoefficientState state;
    bool converged = false;
    std::size_t iterations = 0;
    double loglik = 0.0; ///< full-data log-likelihood of `state`
};

/// Boosts only the selected columns (no correlation filter) until
/// convergence. Empty selection returns the intercept-only MLE state.
inline RefitResult refit(const Family& fam, const Dataset& data,
                         const std::vector<std::vector<std::size_t>>& selected,
                         const FitConfig& cfg, const RefitOptions& opts = {})
{
    cfg.validate();
    if (selected.size() != data.n_params())
        throw InvalidInput("refit: need one selection set per distribution parameter");

    FitConfig rc = cfg;
    rc.cf_enabled = false;
    const std::size_t cap = std::max<std::size_t>(1, opts.cap_factor * cfg.T);
    auto schedule = detail::schedule_for(data, rc, std::max<std::size_t>(cfg.T, 1), 2);
    const bool batchwise = detail::uses_batches(data, rc);

    RefitResult out;
    out.state = detail::initial_state(fam, data, schedule);
    bool any = false;
    for (const auto& s : selected) any = any || !s.empty();
    if (!any) {
        out.converged = true;
        out.loglik = full_loglik(fam, data, out.state);
        return out;
    }

    std::vector<std::vector<std::size_t>> allowed(data.n_params());
    for (std::size_t k = 0; k < data.n_params(); ++k) {
        for (auto col : selected[k]) {
            const auto& cols = data.columns[k];
            const auto it = std::find(cols.begin(), cols.end(), col);
            if (it == cols.end())
                throw InvalidInput("refit: column " + std::to_string(col)
                                   + " is not a candidate for parameter " + std::to_string(k));
            allowed[k].push_back(static_cast<std::size_t>(it - cols.begin()));
        }
        std::sort(allowed[k].begin(), allowed[k].end());
    }

    detail::StagewiseLoop loop(fam, data, rc, out.state, std::move(schedule), cfg.T);
    loop.restrict_columns(allowed);
    loop.set_backtracking(opts.backtrack_halvings);
    std::vector<PathEntry> path;
    std::vector<double> ll_hist{loop.initial_criterion()};
    std::size_t small_grad = 0;
    for (std::size_t t = 1; t <= cap; ++t) {
        const auto rec = loop.step(path);
        ll_hist.push_back(loop.criterion_loglik());
        out.iterations = t;
        double best_dl = 0.0;
        for (std::size_t k = 0; k < data.n_params(); ++k)
            if (!allowed[k].empty()) best_dl = std::max(best_dl, std::abs(rec.dl[k]));
        small_grad = best_dl < opts.grad_tol ? small_grad + 1 : 0;
        if (small_grad >= opts.grad_patience) {
            out.converged = true;
            break;
        }
        if (!batchwise && t >= opts.rel_window) {
            const double now = ll_hist.back();
            const double then = ll_hist[ll_hist.size() - 1 - opts.rel_window];
            if (std::abs(now - then) <= opts.rel_tol * std::abs(now)) {
                out.converged = true;
                break;
            }
        }
        if (batchwise && loop.no_update_streak() >= cfg.patience) {
            out.converged = true;
            break;
        }
    }
    out.state = loop.state();
    out.loglik = full_loglik(fam, data, out.state);
    return out;
}

/// Selection by sbdr_fit followed by a refit of the BIC-selected columns.
inline FitResult sbdr_fit_refit(const Family& fam, const Dataset& data, const FitConfig& cfg,
                                const RefitOptions& opts = {})
{
    FitResult res = sbdr_fit(fam, data, cfg);
    const auto t0 = detail::Clock::now();
    auto rf = refit(fam, data, res.selected, cfg, opts);
    res.refit = std::move(rf.state);
    res.refit_converged = rf.converged;
    res.refit_iterations = rf.iterations;
    res.refit_loglik = rf.loglik;
    res.refit_seconds = detail::seconds_since(t0);
    return res;
}

struct ThresholdDescentOptions
{
    double kappa_start = 0.19;
    double kappa_step = 0.02;
    std::size_t iters_per_level = 200;
};

/// Descending kappa grid kappa_start, kappa_start - step, ..., ending at 0.
inline std::vector<double> threshold_levels(double start, double step)
{
    if (!(start > 0.0)) throw InvalidInput("threshold descent: kappa_start must be positive");
    if (!(step > 0.0)) throw InvalidInput("threshold descent: kappa_step must be positive");
    std::vector<double> levels;
    for (int i = 0;; ++i) {
        const double v = start - static_cast<double>(i) * step;
        if (v <= 1e-12) break;
        levels.push_back(v);
    }
    levels.push_back(0.0);
    return levels;
}

/// Snapshot taken at the end of one threshold level.
struct ThresholdLevel
{
    double kappa = 0.0;
    std::size_t end_iteration = 0;
    std::vector<std::vector<std::size_t>> selected;
    double refit_bic = 0.0;
};

struct ThresholdDescentResult
{
    FitResult fit;
    std::vector<ThresholdLevel> levels;
    std::size_t best_level = 0;
};

/// Boosts under a descending correlation threshold, refits the selected set
/// of every level and keeps the refit with the smallest full-data BIC.
inline ThresholdDescentResult threshold_descent(const Family& fam, const Dataset& data,
                                                const FitConfig& cfg,
                                                const ThresholdDescentOptions& td = {},
                                                const RefitOptions& ropts = {})
{
    cfg.validate();
    const auto t0 = detail::Clock::now();
    const auto levels = threshold_levels(td.kappa_start, td.kappa_step);
    const std::size_t total = levels.size() * td.iters_per_level;
    auto schedule = detail::schedule_for(data, cfg, total, 1);
    const bool batchwise = detail::uses_batches(data, cfg);

    ThresholdDescentResult out;
    FitResult& res = out.fit;
    res.method = "thresdesc";
    res.family = std::string(fam.name());
    res.config = cfg;
    res.config.T = total;
    res.n = data.n();
    res.initial = detail::initial_state(fam, data, schedule);

    detail::StagewiseLoop loop(fam, data, res.config, res.initial, std::move(schedule), total);
    res.loglik.push_back(loop.initial_criterion());
    res.df.push_back(loop.df());
    res.bic.push_back(bic(res.loglik.back(), res.df.back(), res.n));

    for (double level : levels) {
        loop.set_kappa(std::vector<double>(data.n_params(), level));
        const std::size_t stop_at = loop.t() + td.iters_per_level;
        std::size_t quiet = 0;
        while (loop.t() < stop_at) {
            const auto rec = loop.step(res.path);
            detail::record(res, rec, loop.criterion_loglik(), loop.df());
            // a stalled level hands over to the next, lower threshold
            quiet = rec.updated ? 0 : quiet + 1;
            if (quiet >= cfg.patience) break;
        }
        ThresholdLevel lv;
        lv.kappa = level;
        lv.end_iteration = loop.t();
        lv.selected = loop.state().selected(data);
        out.levels.push_back(std::move(lv));
    }
    res.kappa.assign(data.n_params(), 0.0);
    detail::finish_selection(res, data, batchwise);
    res.select_seconds = detail::seconds_since(t0);

    const auto t1 = detail::Clock::now();
    std::vector<double> level_bic;
    std::vector<std::optional<RefitResult>> refits;
    for (std::size_t i = 0; i < out.levels.size(); ++i) {
        auto& lv = out.levels[i];
        // identical selections share one refit
        std::optional<std::size_t> same;
        for (std::size_t j = 0; j < i; ++j)
            if (out.levels[j].selected == lv.selected) same = j;
        RefitResult rf = same ? *refits[*same] : refit(fam, data, lv.selected, cfg, ropts);
        std::size_t df = 0;
        for (const auto& s : lv.selected) df += s.size();
        lv.refit_bic = bic(rf.loglik, df, data.n());
        level_bic.push_back(lv.refit_bic);
        refits.emplace_back(std::move(rf));
    }
    out.best_level = argmin_first(level_bic);
    const auto& best = *refits[out.best_level];
    res.selected = out.levels[out.best_level].selected;
    res.selected_state = res.state_at(out.levels[out.best_level].end_iteration);
    res.mstop = out.levels[out.best_level].end_iteration;
    res.refit = best.state;
    res.refit_converged = best.converged;
    res.refit_iterations = best.iterations;
    res.refit_loglik = best.loglik;
    res.refit_seconds = detail::seconds_since(t1);
    return out;
}

} // namespace sdr
