#pragma once

#include <cmath>
#include <string_view>

namespace sdr {

enum class Link { identity, log, logit };

constexpr std::string_view to_string(Link link) noexcept
{
    switch (link) {
    case Link::identity: return "identity";
    case Link::log: return "log";
    case Link::logit: return "logit";
    }
    return "?";
}

inline double logistic(double eta) noexcept
{
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

inline double logit(double p) noexcept { return std::log(p) - std::log1p(-p); }

/// Parameter -> predictor scale.
inline double link_fn(Link link, double theta) noexcept
{
    switch (link) {
    case Link::identity: return theta;
    case Link::log: return std::log(theta);
    case Link::logit: return logit(theta);
    }
    return theta;
}

/// Predictor -> parameter scale. Maps all of R into the parameter's domain.
inline double inverse_link(Link link, double eta) noexcept
{
    switch (link) {
    case Link::identity: return eta;
    case Link::log: return std::exp(eta);
    case Link::logit: return logistic(eta);
    }
    return eta;
}

} // namespace sdr
