#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "baseline.hpp"
#include "engine.hpp"

namespace sdr {

/// Tuning shared by all named methods.
struct MethodOptions
{
    FitConfig fit;
    GBConfig gb;
    ThresholdDescentOptions td;
    RefitOptions refit;
    double bw_fraction = 0.25; ///< batch size as a fraction of n when fit.bs is 0
};

inline const std::vector<std::string>& known_methods()
{
    static const std::vector<std::string> names{
        "Standard", "BS",       "CF",           "BS+CF",        "BW",     "BW+BS", "BW+CF",
        "BW+BS+CF", "ThresDesc", "ThresDesc+BW", "GB",          "VarDes"};
    return names;
}

inline bool is_known_method(std::string_view name)
{
    const auto& m = known_methods();
    return std::find(m.begin(), m.end(), name) != m.end();
}

namespace detail {

inline std::size_t bw_batch_size(const Dataset& data, const MethodOptions& o)
{
    if (o.fit.bs != 0 && o.fit.bs < data.n()) return o.fit.bs;
    const auto bs = static_cast<std::size_t>(std::lround(o.bw_fraction * static_cast<double>(data.n())));
    return std::clamp<std::size_t>(bs, 2, data.n());
}

} // namespace detail

/// Runs one named method (stagewise variants include their refit).
inline FitResult run_method(const Family& fam, const Dataset& data, std::string_view name,
                            const MethodOptions& o)
{
    if (!is_known_method(name)) throw InvalidInput("unknown method '" + std::string(name) + "'");

    if (name == "GB" || name == "VarDes") {
        FitResult gb = gb_fit(fam, data, o.gb);
        if (name == "GB") {
            gb.method = "GB";
            return gb;
        }
        auto vd = var_deselect(fam, data, gb, o.gb, o.gb.threshold);
        vd.refit.method = "VarDes";
        vd.refit.select_seconds = gb.select_seconds;
        return std::move(vd.refit);
    }

    FitConfig c = o.fit;
    const bool bw = name.starts_with("BW") || name == "ThresDesc+BW";
    c.bs = bw ? detail::bw_batch_size(data, o) : 0;
    if (!bw) c.strata.reset();

    if (name.starts_with("ThresDesc")) {
        c.update_mode = UpdateMode::best_subset;
        c.cf_enabled = true;
        auto td = threshold_descent(fam, data, c, o.td, o.refit);
        td.fit.method = std::string(name);
        return std::move(td.fit);
    }

    const bool bs = name == "BS" || name == "BS+CF" || name == "BW+BS" || name == "BW+BS+CF";
    const bool cf = name == "CF" || name == "BS+CF" || name == "BW+CF" || name == "BW+BS+CF";
    c.update_mode = bs ? UpdateMode::best_subset : UpdateMode::noncyclical;
    c.cf_enabled = cf;
    FitResult r = sbdr_fit_refit(fam, data, c, o.refit);
    r.method = std::string(name);
    return r;
}

} // namespace sdr
