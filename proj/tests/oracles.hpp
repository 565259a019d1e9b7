#pragma once

// Independent reference computations used by the tests.

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <sdr/families.hpp>

namespace oracle {

/// Central finite difference of log d_y in eta_k.
inline double fd_grad(const sdr::Family& fam, double y, std::span<const double> eta, std::size_t k,
                      double h = 1e-6)
{
    std::vector<double> ep(eta.begin(), eta.end()), em(eta.begin(), eta.end());
    ep[k] += h;
    em[k] -= h;
    return (fam.log_density_eta(y, ep) - fam.log_density_eta(y, em)) / (2.0 * h);
}

/// Maximizer of a unimodal f on [lo, hi].
inline double golden_max(const std::function<double(double)>& f, double lo, double hi, int iters = 200)
{
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
    double fa = f(a), fb = f(b);
    for (int i = 0; i < iters; ++i) {
        if (fa < fb) {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        }
    }
    return 0.5 * (lo + hi);
}

/// Standard normal quantile by bisection on erfc.
inline double normal_quantile(double p)
{
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// Gamma log density with shape a and mean mu, written out directly.
inline double gamma_logpdf(double y, double mu, double sigma)
{
    const double a = 1.0 / (sigma * sigma);
    const double scale = mu / a;
    return (a - 1.0) * std::log(y) - y / scale - a * std::log(scale) - std::lgamma(a);
}

/// Closed-form CRPS of N(mu, sigma^2) at y.
inline double normal_crps(double mu, double sigma, double y)
{
    const double z = (y - mu) / sigma;
    const double Phi = 0.5 * std::erfc(-z / std::sqrt(2.0));
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    return sigma * (z * (2.0 * Phi - 1.0) + 2.0 * phi - 1.0 / std::sqrt(M_PI));
}

/// CRPS as the integral of (F(x) - 1{x >= y})^2 by composite Simpson.
inline double crps_quadrature(const std::function<double(double)>& cdf, double y, double lo, double hi,
                              int n = 200000)
{
    if (n % 2) ++n;
    const double h = (hi - lo) / n;
    auto f = [&](double x) {
        const double d = cdf(x) - (x >= y ? 1.0 : 0.0);
        return d * d;
    };
    double s = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
    return s * h / 3.0;
}

/// Random interior predictor vector for a family.
inline std::vector<double> random_eta(const sdr::Family& fam, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> eta(fam.n_params());
    switch (fam.kind()) {
    case sdr::FamilyKind::NO:
        eta = {3.0 * u(rng), u(rng)};
        break;
    case sdr::FamilyKind::GA:
        eta = {1.5 * u(rng), 0.8 * u(rng)};
        break;
    case sdr::FamilyKind::NBI:
        eta = {1.5 * u(rng), 1.5 * u(rng)};
        break;
    case sdr::FamilyKind::ZANBI:
        eta = {1.5 * u(rng), 1.5 * u(rng), 1.5 * u(rng)};
        break;
    }
    return eta;
}

/// Random observation inside the support, near the bulk of the distribution.
inline double random_y(const sdr::Family& fam, std::span<const double> eta, std::mt19937_64& rng)
{
    const auto theta = fam.theta_from_eta(eta);
    sdr::Rng r(rng());
    return fam.sample(std::span<const double>(theta.data(), fam.n_params()), r);
}

} // namespace oracle
