#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "error.hpp"
#include "links.hpp"
#include "random.hpp"

namespace sdr {

enum class FamilyKind { NO, GA, NBI, ZANBI };

/// Largest parameter count of any supported family.
inline constexpr std::size_t max_params = 3;

/// Fixed-capacity parameter (or predictor) vector for one observation.
using ParamVector = std::array<double, max_params>;

struct CrpsOptions
{
    std::size_t draws = 1000;      ///< Monte Carlo draws for the sample estimator
    std::uint64_t seed = 20240917; ///< seed for the sample estimator
};

namespace detail {

inline constexpr double log_sqrt_2pi = 0.91893853320467274178;

/// lgamma(y + r) - lgamma(r) for integer y >= 0; exact product form for small y.
inline double lgamma_ratio(double y, double r)
{
    if (y < 64.0) {
        double s = 0.0;
        for (int m = 0; m < static_cast<int>(y); ++m) s += std::log(r + m);
        return s;
    }
    return std::lgamma(y + r) - std::lgamma(r);
}

/// digamma(y + r) - digamma(r) for integer y >= 0.
inline double digamma_ratio(double y, double r)
{
    if (y < 64.0) {
        double s = 0.0;
        for (int m = 0; m < static_cast<int>(y); ++m) s += 1.0 / (r + m);
        return s;
    }
    return boost::math::digamma(y + r) - boost::math::digamma(r);
}

/// sigma * mu below which NBI is evaluated through its Poisson expansion.
inline constexpr double nbi_series_cutoff = 1e-8;

/// NBI(mu, sigma) log pmf: mean mu, variance mu + sigma mu^2.
inline double nbi_logpmf(double y, double mu, double sigma)
{
    const double x = sigma * mu;
    if (x < nbi_series_cutoff) {
        const double d = y - mu;
        return y * std::log(mu) - mu - std::lgamma(y + 1.0) + 0.5 * sigma * (d * d - y);
    }
    const double r = 1.0 / sigma;
    return lgamma_ratio(y, r) - std::lgamma(y + 1.0) - std::log1p(x) / sigma
         + y * (std::log(x) - std::log1p(x));
}

/// d log NBI / d eta_mu and d eta_sigma (log links on both).
inline std::pair<double, double> nbi_grad(double y, double mu, double sigma)
{
    const double x = sigma * mu;
    const double g_mu = (y - mu) / (1.0 + x);
    if (x < nbi_series_cutoff) {
        const double d = y - mu;
        return {g_mu, 0.5 * sigma * (d * d - y)};
    }
    const double r = 1.0 / sigma;
    const double dr = digamma_ratio(y, r) - std::log1p(x) + (mu - y) / (r + mu);
    return {g_mu, -r * dr};
}

/// log P(NBI = 0) = -log(1 + sigma mu) / sigma.
inline double nbi_log_p0(double mu, double sigma)
{
    const double x = sigma * mu;
    if (x < 1e-10) return -mu * (1.0 - 0.5 * x);
    return -std::log1p(x) / sigma;
}

/// Derivatives of log P(NBI = 0) w.r.t. eta_mu and eta_sigma.
inline std::pair<double, double> nbi_log_p0_grad(double mu, double sigma)
{
    const double x = sigma * mu;
    const double d_mu = -mu / (1.0 + x);
    double d_sigma;
    if (x < 1e-3) {
        // mu * (log1p(x)/x - 1/(1+x)) expanded around x = 0
        d_sigma = mu * x * (0.5 + x * (-2.0 / 3.0 + x * (0.75 - 0.8 * x)));
    } else {
        d_sigma = std::log1p(x) / sigma - mu / (1.0 + x);
    }
    return {d_mu, d_sigma};
}

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double standard_normal_pdf(double z)
{
    return std::exp(-0.5 * z * z - log_sqrt_2pi);
}

inline bool is_count(double y) { return y >= 0.0 && std::floor(y) == y && std::isfinite(y); }

/// Ranked probability score of a count forecast given its cdf.
template <class Cdf>
double discrete_rps(double y, Cdf&& cdf)
{
    double score = 0.0;
    for (long k = 0;; ++k) {
        const double f = cdf(static_cast<double>(k));
        const double ind = (y <= static_cast<double>(k)) ? 1.0 : 0.0;
        score += (f - ind) * (f - ind);
        if (static_cast<double>(k) >= y && f > 1.0 - 1e-6) break;
        if (k > 10'000'000) break;
    }
    return score;
}

} // namespace detail

/// A K-parameter response distribution with its link functions.
///
/// Parameters are passed in natural (theta) space; the `*_eta` helpers take
/// linked predictors. Objects are immutable and safe to share across threads.
class Family
{
public:
    virtual ~Family() = default;

    virtual FamilyKind kind() const noexcept = 0;
    virtual std::string_view name() const noexcept = 0;
    virtual std::span<const Link> links() const noexcept = 0;
    virtual std::span<const std::string_view> param_names() const noexcept = 0;
    virtual bool discrete() const noexcept { return false; }

    std::size_t n_params() const noexcept { return links().size(); }

    /// Throws InvalidInput naming the first parameter outside its domain.
    virtual void check_theta(std::span<const double> theta) const = 0;
    /// Throws InvalidInput if y is outside the support.
    virtual void check_support(double y) const = 0;

    double log_density(double y, std::span<const double> theta) const
    {
        check_size(theta);
        check_theta(theta);
        check_support(y);
        return log_density_unchecked(y, theta);
    }

    /// d log d_y / d eta_k for k = 1..K, written to `out`.
    void grad_eta(double y, std::span<const double> theta, std::span<double> out) const
    {
        check_size(theta);
        check_theta(theta);
        check_support(y);
        grad_eta_unchecked(y, theta, out);
    }

    std::vector<double> grad_eta(double y, std::span<const double> theta) const
    {
        std::vector<double> out(n_params());
        grad_eta(y, theta, out);
        return out;
    }

    double sample(std::span<const double> theta, Rng& rng) const
    {
        check_size(theta);
        check_theta(theta);
        return sample_unchecked(theta, rng);
    }

    /// Distribution function P(Y <= y).
    double cdf(double y, std::span<const double> theta) const
    {
        check_size(theta);
        check_theta(theta);
        return cdf_unchecked(y, theta);
    }

    /// Continuous ranked probability score (ranked probability score for counts).
    double crps(std::span<const double> theta, double y, const CrpsOptions& opts = {}) const
    {
        check_size(theta);
        check_theta(theta);
        return crps_unchecked(theta, y, opts);
    }

    ParamVector theta_from_eta(std::span<const double> eta) const noexcept
    {
        ParamVector theta{};
        const auto l = links();
        for (std::size_t k = 0; k < l.size(); ++k) theta[k] = inverse_link(l[k], eta[k]);
        return theta;
    }

    ParamVector eta_from_theta(std::span<const double> theta) const noexcept
    {
        ParamVector eta{};
        const auto l = links();
        for (std::size_t k = 0; k < l.size(); ++k) eta[k] = link_fn(l[k], theta[k]);
        return eta;
    }

    /// log density at linked predictors; no domain checks on theta (the
    /// inverse links guarantee it) and none on y.
    double log_density_eta(double y, std::span<const double> eta) const
    {
        const ParamVector theta = theta_from_eta(eta);
        return log_density_unchecked(y, std::span<const double>(theta.data(), n_params()));
    }

    void grad_eta_at_eta(double y, std::span<const double> eta, std::span<double> out) const
    {
        const ParamVector theta = theta_from_eta(eta);
        grad_eta_unchecked(y, std::span<const double>(theta.data(), n_params()), out);
    }

    virtual double log_density_unchecked(double y, std::span<const double> theta) const = 0;
    virtual void grad_eta_unchecked(double y, std::span<const double> theta,
                                    std::span<double> out) const = 0;
    virtual double sample_unchecked(std::span<const double> theta, Rng& rng) const = 0;
    virtual double cdf_unchecked(double y, std::span<const double> theta) const = 0;
    virtual double crps_unchecked(std::span<const double> theta, double y,
                                  const CrpsOptions& opts) const = 0;

protected:
    void check_size(std::span<const double> theta) const
    {
        if (theta.size() != n_params())
            throw InvalidInput(std::string(name()) + ": expected " + std::to_string(n_params())
                               + " parameters, got " + std::to_string(theta.size()));
    }

    void require(bool ok, std::size_t k, std::string_view domain) const
    {
        if (!ok)
            throw InvalidInput(std::string(name()) + ": parameter '"
                               + std::string(param_names()[k]) + "' must be " + std::string(domain));
    }
};

/// Normal, mu identity link, sigma log link (sigma is the standard deviation).
class Normal final : public Family
{
public:
    FamilyKind kind() const noexcept override { return FamilyKind::NO; }
    std::string_view name() const noexcept override { return "NO"; }
    std::span<const Link> links() const noexcept override { return links_; }
    std::span<const std::string_view> param_names() const noexcept override { return names_; }

    void check_theta(std::span<const double> theta) const override
    {
        require(std::isfinite(theta[0]), 0, "finite");
        require(theta[1] > 0.0 && std::isfinite(theta[1]), 1, "positive and finite");
    }

    void check_support(double y) const override
    {
        if (!std::isfinite(y)) throw InvalidInput("NO: response must be finite");
    }

    double log_density_unchecked(double y, std::span<const double> theta) const override
    {
        const double z = (y - theta[0]) / theta[1];
        return -detail::log_sqrt_2pi - std::log(theta[1]) - 0.5 * z * z;
    }

    void grad_eta_unchecked(double y, std::span<const double> theta,
                            std::span<double> out) const override
    {
        const double s2 = theta[1] * theta[1];
        const double d = y - theta[0];
        out[0] = d / s2;
        out[1] = d * d / s2 - 1.0;
    }

    double sample_unchecked(std::span<const double> theta, Rng& rng) const override
    {
        std::normal_distribution<double> dist(theta[0], theta[1]);
        return dist(rng);
    }

    double cdf_unchecked(double y, std::span<const double> theta) const override
    {
        return detail::standard_normal_cdf((y - theta[0]) / theta[1]);
    }

    double crps_unchecked(std::span<const double> theta, double y,
                          const CrpsOptions&) const override
    {
        const double z = (y - theta[0]) / theta[1];
        return theta[1]
             * (z * (2.0 * detail::standard_normal_cdf(z) - 1.0)
                + 2.0 * detail::standard_normal_pdf(z) - 1.0 / std::sqrt(std::numbers::pi));
    }

private:
    static constexpr std::array<Link, 2> links_{Link::identity, Link::log};
    static constexpr std::array<std::string_view, 2> names_{"mu", "sigma"};
};

/// Gamma with mean mu and variance mu^2 sigma^2 (shape 1/sigma^2); log links.
class Gamma final : public Family
{
public:
    FamilyKind kind() const noexcept override { return FamilyKind::GA; }
    std::string_view name() const noexcept override { return "GA"; }
    std::span<const Link> links() const noexcept override { return links_; }
    std::span<const std::string_view> param_names() const noexcept override { return names_; }

    void check_theta(std::span<const double> theta) const override
    {
        require(theta[0] > 0.0 && std::isfinite(theta[0]), 0, "positive and finite");
        require(theta[1] > 0.0 && std::isfinite(theta[1]), 1, "positive and finite");
    }

    void check_support(double y) const override
    {
        if (!(y > 0.0) || !std::isfinite(y)) throw InvalidInput("GA: response must be positive");
    }

    double log_density_unchecked(double y, std::span<const double> theta) const override
    {
        const double mu = theta[0];
        const double a = 1.0 / (theta[1] * theta[1]);
        return a * (std::log(a) - std::log(mu)) + (a - 1.0) * std::log(y) - a * y / mu
             - std::lgamma(a);
    }

    void grad_eta_unchecked(double y, std::span<const double> theta,
                            std::span<double> out) const override
    {
        const double mu = theta[0];
        const double a = 1.0 / (theta[1] * theta[1]);
        out[0] = a * (y - mu) / mu;
        out[1] = -2.0 * a
               * (std::log(a) + 1.0 - std::log(mu) + std::log(y) - y / mu
                  - boost::math::digamma(a));
    }

    double sample_unchecked(std::span<const double> theta, Rng& rng) const override
    {
        const double a = 1.0 / (theta[1] * theta[1]);
        std::gamma_distribution<double> dist(a, theta[0] / a);
        return dist(rng);
    }

    double cdf_unchecked(double y, std::span<const double> theta) const override
    {
        if (y <= 0.0) return 0.0;
        const double a = 1.0 / (theta[1] * theta[1]);
        return boost::math::gamma_p(a, y * a / theta[0]);
    }

    /// Sample estimator E|Y - y| - E|Y - Y'| / 2 over `opts.draws` seeded draws.
    double crps_unchecked(std::span<const double> theta, double y,
                          const CrpsOptions& opts) const override
    {
        const std::size_t m = std::max<std::size_t>(opts.draws, 2);
        Rng rng = make_rng(opts.seed);
        std::vector<double> draws(m);
        for (auto& d : draws) d = sample_unchecked(theta, rng);
        std::sort(draws.begin(), draws.end());
        double abs_dev = 0.0;
        double spread = 0.0;
        const double md = static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            abs_dev += std::abs(draws[i] - y);
            spread += (2.0 * static_cast<double>(i + 1) - md - 1.0) * draws[i];
        }
        // sum_{i,j} |Y_i - Y_j| = 2 sum_i (2i - m - 1) Y_(i)
        return std::max(0.0, abs_dev / md - spread / (md * md));
    }

private:
    static constexpr std::array<Link, 2> links_{Link::log, Link::log};
    static constexpr std::array<std::string_view, 2> names_{"mu", "sigma"};
};

/// Negative binomial type I: mean mu, variance mu + sigma mu^2; log links.
class NegBinomial final : public Family
{
public:
    FamilyKind kind() const noexcept override { return FamilyKind::NBI; }
    std::string_view name() const noexcept override { return "NBI"; }
    std::span<const Link> links() const noexcept override { return links_; }
    std::span<const std::string_view> param_names() const noexcept override { return names_; }
    bool discrete() const noexcept override { return true; }

    void check_theta(std::span<const double> theta) const override
    {
        require(theta[0] > 0.0 && std::isfinite(theta[0]), 0, "positive and finite");
        require(theta[1] > 0.0 && std::isfinite(theta[1]), 1, "positive and finite");
    }

    void check_support(double y) const override
    {
        if (!detail::is_count(y)) throw InvalidInput("NBI: response must be a nonnegative integer");
    }

    double log_density_unchecked(double y, std::span<const double> theta) const override
    {
        return detail::nbi_logpmf(y, theta[0], theta[1]);
    }

    void grad_eta_unchecked(double y, std::span<const double> theta,
                            std::span<double> out) const override
    {
        const auto [gm, gs] = detail::nbi_grad(y, theta[0], theta[1]);
        out[0] = gm;
        out[1] = gs;
    }

    double sample_unchecked(std::span<const double> theta, Rng& rng) const override
    {
        return draw(theta[0], theta[1], rng);
    }

    double cdf_unchecked(double y, std::span<const double> theta) const override
    {
        if (y < 0.0) return 0.0;
        return nbi_cdf(std::floor(y), theta[0], theta[1]);
    }

    double crps_unchecked(std::span<const double> theta, double y,
                          const CrpsOptions&) const override
    {
        return nbi_rps(y, theta[0], theta[1], 0.0);
    }

    /// Gamma-Poisson mixture draw.
    static double draw(double mu, double sigma, Rng& rng)
    {
        double lambda = mu;
        if (sigma * mu >= detail::nbi_series_cutoff) {
            const double r = 1.0 / sigma;
            std::gamma_distribution<double> g(r, mu / r);
            lambda = g(rng);
        }
        if (!(lambda > 0.0)) return 0.0;
        std::poisson_distribution<long long> p(lambda);
        return static_cast<double>(p(rng));
    }

    /// P(NBI <= k) by the pmf recursion.
    static double nbi_cdf(double k, double mu, double sigma)
    {
        double pmf = std::exp(detail::nbi_log_p0(mu, sigma));
        double total = pmf;
        const double r = 1.0 / sigma;
        const double q = (sigma * mu < detail::nbi_series_cutoff) ? 1.0 : mu / (r + mu);
        for (double j = 0.0; j < k; j += 1.0) {
            const double ratio = (sigma * mu < detail::nbi_series_cutoff)
                                   ? mu / (j + 1.0)
                                   : q * (j + r) / (j + 1.0);
            pmf *= ratio;
            total += pmf;
            if (total >= 1.0) return 1.0;
        }
        return std::min(total, 1.0);
    }

    /// RPS of the zero-adjusted mixture nu * delta_0 + (1 - nu) * ZTNBI(mu, sigma);
    /// nu = 0 gives plain NBI.
    static double nbi_rps(double y, double mu, double sigma, double nu)
    {
        const double logp0 = detail::nbi_log_p0(mu, sigma);
        const double p0 = std::exp(logp0);
        const double one_minus_p0 = -std::expm1(logp0);
        const double r = 1.0 / sigma;
        const bool poisson = sigma * mu < detail::nbi_series_cutoff;
        double pmf = p0;
        double nb_cdf = p0;
        double score = 0.0;
        for (long k = 0;; ++k) {
            const double kd = static_cast<double>(k);
            if (k > 0) {
                const double j = kd - 1.0;
                pmf *= poisson ? mu / kd : (mu / (r + mu)) * (j + r) / kd;
                nb_cdf += pmf;
            }
            double f;
            if (nu == 0.0) {
                f = std::min(nb_cdf, 1.0);
            } else {
                f = (k == 0) ? nu
                             : nu + (1.0 - nu) * std::min(1.0, (nb_cdf - p0) / one_minus_p0);
            }
            const double ind = (y <= kd) ? 1.0 : 0.0;
            score += (f - ind) * (f - ind);
            if (kd >= y && f > 1.0 - 1e-6) break;
            if (k > 10'000'000) break;
        }
        return score;
    }

private:
    static constexpr std::array<Link, 2> links_{Link::log, Link::log};
    static constexpr std::array<std::string_view, 2> names_{"mu", "sigma"};
};

/// Zero-adjusted NBI: P(Y = 0) = nu, positives follow the zero-truncated
/// NBI(mu, sigma) scaled by 1 - nu. Links log, log, logit.
class ZeroAdjustedNegBinomial final : public Family
{
public:
    FamilyKind kind() const noexcept override { return FamilyKind::ZANBI; }
    std::string_view name() const noexcept override { return "ZANBI"; }
    std::span<const Link> links() const noexcept override { return links_; }
    std::span<const std::string_view> param_names() const noexcept override { return names_; }
    bool discrete() const noexcept override { return true; }

    void check_theta(std::span<const double> theta) const override
    {
        require(theta[0] > 0.0 && std::isfinite(theta[0]), 0, "positive and finite");
        require(theta[1] > 0.0 && std::isfinite(theta[1]), 1, "positive and finite");
        require(theta[2] > 0.0 && theta[2] < 1.0, 2, "in (0, 1)");
    }

    void check_support(double y) const override
    {
        if (!detail::is_count(y))
            throw InvalidInput("ZANBI: response must be a nonnegative integer");
    }

    double log_density_unchecked(double y, std::span<const double> theta) const override
    {
        const double nu = theta[2];
        if (y == 0.0) return std::log(nu);
        const double logp0 = detail::nbi_log_p0(theta[0], theta[1]);
        return std::log1p(-nu) + detail::nbi_logpmf(y, theta[0], theta[1])
             - std::log(-std::expm1(logp0));
    }

    void grad_eta_unchecked(double y, std::span<const double> theta,
                            std::span<double> out) const override
    {
        const double nu = theta[2];
        if (y == 0.0) {
            out[0] = 0.0;
            out[1] = 0.0;
            out[2] = 1.0 - nu;
            return;
        }
        const auto [gm, gs] = detail::nbi_grad(y, theta[0], theta[1]);
        const auto [pm, ps] = detail::nbi_log_p0_grad(theta[0], theta[1]);
        const double logp0 = detail::nbi_log_p0(theta[0], theta[1]);
        const double odds = 1.0 / std::expm1(-logp0); // p0 / (1 - p0)
        out[0] = gm + odds * pm;
        out[1] = gs + odds * ps;
        out[2] = -nu;
    }

    /// nu-coin, then a zero-truncated NBI draw (rejection, or inverse cdf when
    /// P(NBI = 0) > 0.99 makes rejection slow).
    double sample_unchecked(std::span<const double> theta, Rng& rng) const override
    {
        if (uniform01(rng) < theta[2]) return 0.0;
        const double mu = theta[0];
        const double sigma = theta[1];
        const double logp0 = detail::nbi_log_p0(mu, sigma);
        const double p0 = std::exp(logp0);
        if (p0 <= 0.99) {
            for (;;) {
                const double d = NegBinomial::draw(mu, sigma, rng);
                if (d > 0.0) return d;
            }
        }
        // inverse cdf of the truncated part: smallest k >= 1 with
        // (F(k) - p0) / (1 - p0) >= u
        const double u = uniform01(rng);
        const double one_minus_p0 = -std::expm1(logp0);
        const double r = 1.0 / sigma;
        const bool poisson = sigma * mu < detail::nbi_series_cutoff;
        double pmf = p0;
        double mass = 0.0;
        for (long k = 1;; ++k) {
            const double kd = static_cast<double>(k);
            pmf *= poisson ? mu / kd : (mu / (r + mu)) * (kd - 1.0 + r) / kd;
            mass += pmf / one_minus_p0;
            if (mass >= u || k > 10'000'000) return kd;
        }
    }

    double cdf_unchecked(double y, std::span<const double> theta) const override
    {
        if (y < 0.0) return 0.0;
        const double k = std::floor(y);
        if (k == 0.0) return theta[2];
        const double logp0 = detail::nbi_log_p0(theta[0], theta[1]);
        const double p0 = std::exp(logp0);
        const double nb = NegBinomial::nbi_cdf(k, theta[0], theta[1]);
        return theta[2]
             + (1.0 - theta[2]) * std::min(1.0, (nb - p0) / -std::expm1(logp0));
    }

    double crps_unchecked(std::span<const double> theta, double y,
                          const CrpsOptions&) const override
    {
        return NegBinomial::nbi_rps(y, theta[0], theta[1], theta[2]);
    }

private:
    static constexpr std::array<Link, 3> links_{Link::log, Link::log, Link::logit};
    static constexpr std::array<std::string_view, 3> names_{"mu", "sigma", "nu"};
};

using FamilyPtr = std::shared_ptr<const Family>;

/// Family by identifier: "NO", "GA", "NBI" or "ZANBI".
inline FamilyPtr make_family(std::string_view id)
{
    if (id == "NO") return std::make_shared<Normal>();
    if (id == "GA") return std::make_shared<Gamma>();
    if (id == "NBI") return std::make_shared<NegBinomial>();
    if (id == "ZANBI") return std::make_shared<ZeroAdjustedNegBinomial>();
    throw InvalidInput("unknown family '" + std::string(id) + "' (expected NO, GA, NBI or ZANBI)");
}

} // namespace sdr
