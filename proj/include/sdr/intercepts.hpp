#pragma once

#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "families.hpp"

namespace sdr {

struct InterceptOptions
{
    int max_iter = 100;
    double grad_tol = 1e-8;
};

namespace detail {

struct MeanVar
{
    double mean = 0.0;
    double var = 0.0; // 1/n divisor
};

inline MeanVar mean_var(std::span<const double> y)
{
    MeanVar mv;
    for (double v : y) mv.mean += v;
    mv.mean /= static_cast<double>(y.size());
    for (double v : y) mv.var += (v - mv.mean) * (v - mv.mean);
    mv.var /= static_cast<double>(y.size());
    return mv;
}

/// Mean log-likelihood and mean gradient of an intercept-only model over `y`
/// in the first `dim` predictors (the rest held at `eta`).
inline double intercept_objective(const Family& fam, std::span<const double> y,
                                  const ParamVector& eta, std::size_t dim, Eigen::VectorXd* grad)
{
    double ll = 0.0;
    ParamVector g{};
    if (grad) grad->setZero(static_cast<Eigen::Index>(dim));
    const std::span<const double> e(eta.data(), fam.n_params());
    for (double v : y) {
        ll += fam.log_density_eta(v, e);
        if (grad) {
            fam.grad_eta_at_eta(v, e, std::span<double>(g.data(), fam.n_params()));
            for (std::size_t k = 0; k < dim; ++k) (*grad)[static_cast<Eigen::Index>(k)] += g[k];
        }
    }
    const double n = static_cast<double>(y.size());
    if (grad) *grad /= n;
    return ll / n;
}

/// Damped Newton ascent over the first `dim` predictors.
inline void newton_intercepts(const Family& fam, std::span<const double> y, ParamVector& eta,
                              std::size_t dim, const InterceptOptions& opts)
{
    const auto d = static_cast<Eigen::Index>(dim);
    Eigen::VectorXd grad(d), gp(d), gm(d);
    double ll = intercept_objective(fam, y, eta, dim, &grad);
    for (int it = 0; it < opts.max_iter; ++it) {
        if (!std::isfinite(ll))
            throw NumericError(std::string(fam.name()) + ": non-finite intercept log-likelihood",
                               static_cast<std::size_t>(it),
                               std::vector<double>(eta.begin(), eta.begin() + fam.n_params()));
        if (grad.cwiseAbs().maxCoeff() < opts.grad_tol) return;

        // Hessian by central differences of the analytic gradient
        Eigen::MatrixXd hess(d, d);
        const double h = 1e-5;
        for (Eigen::Index k = 0; k < d; ++k) {
            ParamVector ep = eta, em = eta;
            ep[static_cast<std::size_t>(k)] += h;
            em[static_cast<std::size_t>(k)] -= h;
            intercept_objective(fam, y, ep, dim, &gp);
            intercept_objective(fam, y, em, dim, &gm);
            hess.col(k) = (gp - gm) / (2.0 * h);
        }
        hess = 0.5 * (hess + hess.transpose()).eval();
        Eigen::VectorXd step = -hess.ldlt().solve(grad);
        if (!step.allFinite() || step.dot(grad) <= 0.0) step = grad;

        double t = 1.0;
        bool improved = false;
        for (int half = 0; half < 40; ++half, t *= 0.5) {
            ParamVector trial = eta;
            for (Eigen::Index k = 0; k < d; ++k)
                trial[static_cast<std::size_t>(k)] += t * step[k];
            Eigen::VectorXd tg(d);
            const double tll = intercept_objective(fam, y, trial, dim, &tg);
            if (std::isfinite(tll) && tll >= ll) {
                eta = trial;
                ll = tll;
                grad = tg;
                improved = true;
                break;
            }
        }
        if (!improved) break;
    }
    if (grad.cwiseAbs().maxCoeff() < opts.grad_tol) return;
    throw NumericError(std::string(fam.name())
                           + ": intercept MLE did not converge (gradient "
                           + std::to_string(grad.cwiseAbs().maxCoeff()) + ")",
                       static_cast<std::size_t>(opts.max_iter),
                       std::vector<double>(eta.begin(), eta.begin() + fam.n_params()));
}

} // namespace detail

/// Intercept-only maximum likelihood estimates on the predictor scale.
///
/// Closed form for NO (mean and 1/n standard deviation) and for the ZANBI
/// zero probability; Newton iterations for the remaining parameters.
inline std::vector<double> mle_intercepts(const Family& fam, std::span<const double> y,
                                          const InterceptOptions& opts = {})
{
    if (y.empty()) throw InvalidInput("mle_intercepts: empty response");
    for (double v : y) fam.check_support(v);

    ParamVector eta{};
    switch (fam.kind()) {
    case FamilyKind::NO: {
        const auto mv = detail::mean_var(y);
        if (!(mv.var > 0.0)) throw InvalidInput("mle_intercepts: NO response has zero variance");
        return {mv.mean, 0.5 * std::log(mv.var)};
    }
    case FamilyKind::GA: {
        const auto mv = detail::mean_var(y);
        const double cv2 = mv.var / (mv.mean * mv.mean);
        eta = {std::log(mv.mean), 0.5 * std::log(std::max(cv2, 1e-6)), 0.0};
        detail::newton_intercepts(fam, y, eta, 2, opts);
        break;
    }
    case FamilyKind::NBI: {
        const auto mv = detail::mean_var(y);
        if (!(mv.mean > 0.0)) throw InvalidInput("mle_intercepts: NBI response is all zero");
        const double s = std::max((mv.var - mv.mean) / (mv.mean * mv.mean), 1e-2);
        eta = {std::log(mv.mean), std::log(s), 0.0};
        detail::newton_intercepts(fam, y, eta, 2, opts);
        break;
    }
    case FamilyKind::ZANBI: {
        std::vector<double> pos;
        pos.reserve(y.size());
        for (double v : y)
            if (v > 0.0) pos.push_back(v);
        const double zeros = static_cast<double>(y.size() - pos.size());
        if (pos.empty() || zeros == 0.0)
            throw InvalidInput("mle_intercepts: ZANBI needs both zero and positive responses");
        const double nu = zeros / static_cast<double>(y.size());
        const auto mv = detail::mean_var(pos);
        const double s = std::max((mv.var - mv.mean) / (mv.mean * mv.mean), 1e-2);
        eta = {std::log(std::max(mv.mean - 0.5, 0.5)), std::log(s), logit(nu)};
        // positives alone carry the (mu, sigma) likelihood
        detail::newton_intercepts(fam, pos, eta, 2, opts);
        eta[2] = logit(nu);
        break;
    }
    }
    return std::vector<double>(eta.begin(), eta.begin() + static_cast<long>(fam.n_params()));
}

} // namespace sdr
