#pragma once

#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "baseline.hpp"
#include "csv.hpp"
#include "data.hpp"
#include "engine.hpp"
#include "families.hpp"
#include "methods.hpp"
#include "simlab.hpp"

namespace sdr {

using Json = nlohmann::ordered_json;

namespace detail {

inline void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const std::string& where)
{
    if (!j.is_object()) throw InvalidInput(where + ": expected a JSON object");
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!ok.contains(k)) throw InvalidInput(where + ": unknown key '" + k + "'");
}

template <class T>
void read_key(const Json& j, const char* key, T& out, const std::string& where)
{
    if (!j.contains(key)) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>)
        if (!j.at(key).is_number_unsigned())
            throw InvalidInput(where + ": key '" + key + "' must be a non-negative integer");
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InvalidInput(where + ": key '" + key + "' has the wrong type");
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Configuration

inline Json to_json(const FitConfig& c)
{
    Json j;
    j["eps"] = c.eps;
    j["nu"] = c.nu;
    j["rho"] = c.rho;
    j["T"] = c.T;
    j["cf_enabled"] = c.cf_enabled;
    if (c.kappa) j["kappa"] = *c.kappa;
    else j["kappa"] = "auto";
    j["alpha"] = c.alpha;
    j["kappa_clamp"] = c.kappa_clamp;
    j["kappa_min"] = c.kappa_min;
    j["kappa_max"] = c.kappa_max;
    j["bs"] = c.bs;
    if (c.strata) {
        j["strata"] = {{"zeros", c.strata->zeros},
                       {"positives", c.strata->positives},
                       {"with_replacement", c.strata->with_replacement}};
    } else {
        j["strata"] = nullptr;
    }
    j["update_mode"] = std::string(to_string(c.update_mode));
    j["bic_ma_window"] = c.bic_ma_window;
    j["patience"] = c.patience;
    j["seed"] = c.seed;
    return j;
}

inline void apply_json(FitConfig& c, const Json& j)
{
    const std::string w = "config.fit";
    detail::reject_unknown(j, {"eps", "nu", "rho", "T", "cf_enabled", "kappa", "alpha", "kappa_clamp",
                               "kappa_min", "kappa_max", "bs", "strata", "update_mode", "bic_ma_window",
                               "patience", "seed"},
                           w);
    detail::read_key(j, "eps", c.eps, w);
    detail::read_key(j, "nu", c.nu, w);
    detail::read_key(j, "rho", c.rho, w);
    detail::read_key(j, "T", c.T, w);
    detail::read_key(j, "cf_enabled", c.cf_enabled, w);
    if (j.contains("kappa")) {
        const auto& k = j["kappa"];
        if (k.is_string() && k.get<std::string>() == "auto") c.kappa.reset();
        else if (k.is_number()) c.kappa = k.get<double>();
        else throw InvalidInput(w + ": kappa must be a number or \"auto\"");
    }
    detail::read_key(j, "alpha", c.alpha, w);
    detail::read_key(j, "kappa_clamp", c.kappa_clamp, w);
    detail::read_key(j, "kappa_min", c.kappa_min, w);
    detail::read_key(j, "kappa_max", c.kappa_max, w);
    detail::read_key(j, "bs", c.bs, w);
    if (j.contains("strata")) {
        if (j["strata"].is_null()) {
            c.strata.reset();
        } else {
            StrataConfig s;
            detail::reject_unknown(j["strata"], {"zeros", "positives", "with_replacement"}, w + ".strata");
            detail::read_key(j["strata"], "zeros", s.zeros, w + ".strata");
            detail::read_key(j["strata"], "positives", s.positives, w + ".strata");
            detail::read_key(j["strata"], "with_replacement", s.with_replacement, w + ".strata");
            c.strata = s;
        }
    }
    if (j.contains("update_mode")) {
        std::string m;
        detail::read_key(j, "update_mode", m, w);
        if (m == "noncyclical") c.update_mode = UpdateMode::noncyclical;
        else if (m == "best_subset") c.update_mode = UpdateMode::best_subset;
        else throw InvalidInput(w + ": update_mode must be noncyclical or best_subset");
    }
    detail::read_key(j, "bic_ma_window", c.bic_ma_window, w);
    detail::read_key(j, "patience", c.patience, w);
    detail::read_key(j, "seed", c.seed, w);
    c.validate();
}

inline Json to_json(const GBConfig& c)
{
    return Json{{"eps", c.eps},       {"T", c.T},           {"mode", std::string(to_string(c.mode))},
                {"folds", c.folds},   {"use_cv", c.use_cv}, {"threshold", c.threshold},
                {"seed", c.seed}};
}

inline void apply_json(GBConfig& c, const Json& j)
{
    const std::string w = "config.gb";
    detail::reject_unknown(j, {"eps", "T", "mode", "folds", "use_cv", "threshold", "seed"}, w);
    detail::read_key(j, "eps", c.eps, w);
    detail::read_key(j, "T", c.T, w);
    if (j.contains("mode")) {
        std::string m;
        detail::read_key(j, "mode", m, w);
        if (m == "noncyclical") c.mode = GBMode::noncyclical;
        else if (m == "cyclical") c.mode = GBMode::cyclical;
        else throw InvalidInput(w + ": mode must be noncyclical or cyclical");
    }
    detail::read_key(j, "folds", c.folds, w);
    detail::read_key(j, "use_cv", c.use_cv, w);
    detail::read_key(j, "threshold", c.threshold, w);
    detail::read_key(j, "seed", c.seed, w);
    c.validate();
}

inline Json to_json(const ThresholdDescentOptions& t)
{
    return Json{{"kappa_start", t.kappa_start},
                {"kappa_step", t.kappa_step},
                {"iters_per_level", t.iters_per_level}};
}

inline void apply_json(ThresholdDescentOptions& t, const Json& j)
{
    const std::string w = "config.threshold_descent";
    detail::reject_unknown(j, {"kappa_start", "kappa_step", "iters_per_level"}, w);
    detail::read_key(j, "kappa_start", t.kappa_start, w);
    detail::read_key(j, "kappa_step", t.kappa_step, w);
    detail::read_key(j, "iters_per_level", t.iters_per_level, w);
}

inline Json to_json(const RefitOptions& r)
{
    return Json{{"grad_tol", r.grad_tol},     {"grad_patience", r.grad_patience},
                {"rel_tol", r.rel_tol},       {"rel_window", r.rel_window},
                {"cap_factor", r.cap_factor}, {"backtrack_halvings", r.backtrack_halvings}};
}

inline void apply_json(RefitOptions& r, const Json& j)
{
    const std::string w = "config.refit";
    detail::reject_unknown(j, {"grad_tol", "grad_patience", "rel_tol", "rel_window", "cap_factor",
                               "backtrack_halvings"},
                           w);
    detail::read_key(j, "grad_tol", r.grad_tol, w);
    detail::read_key(j, "grad_patience", r.grad_patience, w);
    detail::read_key(j, "rel_tol", r.rel_tol, w);
    detail::read_key(j, "rel_window", r.rel_window, w);
    detail::read_key(j, "cap_factor", r.cap_factor, w);
    detail::read_key(j, "backtrack_halvings", r.backtrack_halvings, w);
}

inline Json to_json(const MethodOptions& o)
{
    return Json{{"fit", to_json(o.fit)},
                {"gb", to_json(o.gb)},
                {"threshold_descent", to_json(o.td)},
                {"refit", to_json(o.refit)},
                {"bw_fraction", o.bw_fraction}};
}

/// Reads the method sections of a config object, ignoring other keys.
inline void apply_method_sections(MethodOptions& o, const Json& j)
{
    if (j.contains("fit")) apply_json(o.fit, j["fit"]);
    if (j.contains("gb")) apply_json(o.gb, j["gb"]);
    if (j.contains("threshold_descent")) apply_json(o.td, j["threshold_descent"]);
    if (j.contains("refit")) apply_json(o.refit, j["refit"]);
    if (j.contains("bw_fraction")) {
        detail::read_key(j, "bw_fraction", o.bw_fraction, "config");
        if (!(o.bw_fraction > 0.0 && o.bw_fraction <= 1.0))
            throw InvalidInput("config: bw_fraction must lie in (0, 1]");
    }
}

inline Json to_json(const ScenarioSpec& s)
{
    return Json{{"family", s.family},     {"nobs", s.nobs},       {"nnoise", s.nnoise},
                {"rho_corr", s.rho_corr}, {"reps", s.reps},       {"methods", s.methods},
                {"seed", s.seed},         {"n_valid", s.n_valid}, {"options", to_json(s.options)}};
}

inline void apply_json(ScenarioSpec& s, const Json& j)
{
    const std::string w = "scenario";
    detail::reject_unknown(j, {"family", "nobs", "nnoise", "rho_corr", "reps", "methods", "seed",
                               "n_valid", "options"},
                           w);
    detail::read_key(j, "family", s.family, w);
    detail::read_key(j, "nobs", s.nobs, w);
    detail::read_key(j, "nnoise", s.nnoise, w);
    detail::read_key(j, "rho_corr", s.rho_corr, w);
    detail::read_key(j, "reps", s.reps, w);
    detail::read_key(j, "methods", s.methods, w);
    detail::read_key(j, "seed", s.seed, w);
    detail::read_key(j, "n_valid", s.n_valid, w);
    if (j.contains("options")) {
        detail::reject_unknown(j["options"], {"fit", "gb", "threshold_descent", "refit", "bw_fraction"},
                               w + ".options");
        apply_method_sections(s.options, j["options"]);
    }
}

// ---------------------------------------------------------------------------
// Fitted models

/// What `predict` needs: covariate layout, standardization, coefficients and
/// subsampling fractions for the zero-probability intercept adjustment.
struct Model
{
    std::string family;
    std::vector<std::string> covariates;
    std::vector<ColumnStats> stats;
    std::vector<std::vector<std::size_t>> columns;
    CoefficientState state;
    std::optional<double> tau0; ///< zero fraction in the full training data
    std::optional<double> t0;   ///< zero fraction in each training batch
};

inline Json coefficients_json(const Family& fam, const Dataset& data, const CoefficientState& s)
{
    Json j = Json::object();
    const auto names = fam.param_names();
    for (std::size_t k = 0; k < s.beta.size(); ++k) {
        Json p;
        p["intercept"] = s.beta[k][0];
        Json slopes = Json::array();
        for (std::size_t c = 0; c < data.n_columns(k); ++c)
            slopes.push_back(Json::array({data.names[data.columns[k][c]],
                                          s.beta[k][static_cast<Eigen::Index>(c + 1)]}));
        p["slopes"] = slopes;
        j[std::string(names[k])] = p;
    }
    return j;
}

inline Json selected_json(const Family& fam, const Dataset& data,
                          const std::vector<std::vector<std::size_t>>& sel)
{
    Json j = Json::object();
    const auto names = fam.param_names();
    for (std::size_t k = 0; k < sel.size(); ++k) {
        Json a = Json::array();
        for (auto c : sel[k]) a.push_back(data.names[c]);
        j[std::string(names[k])] = a;
    }
    return j;
}

/// Full fit artifact. Timing lives under "timing" only.
inline Json fit_result_json(const Family& fam, const Dataset& data, const FitResult& r,
                            const std::string& response, const MethodOptions& opts,
                            const Json& provenance = Json::object())
{
    Json j;
    j["format"] = "sdr-fit/1";
    j["method"] = r.method;
    j["family"] = std::string(fam.name());
    j["provenance"] = provenance;
    j["config"] = to_json(opts);

    Json d;
    d["n"] = data.n();
    d["response"] = response;
    d["covariates"] = data.names;
    Json st = Json::array();
    for (std::size_t c = 0; c < data.p(); ++c)
        st.push_back({{"name", data.names[c]},
                      {"mean", data.standardizer.stats()[c].mean},
                      {"sd", data.standardizer.stats()[c].sd}});
    d["standardization"] = st;
    Json cols = Json::object();
    for (std::size_t k = 0; k < data.n_params(); ++k) {
        Json a = Json::array();
        for (auto c : data.columns[k]) a.push_back(data.names[c]);
        cols[std::string(fam.param_names()[k])] = a;
    }
    d["columns"] = cols;
    if (fam.discrete()) {
        std::size_t zeros = 0;
        for (Eigen::Index i = 0; i < data.y.size(); ++i) zeros += data.y[i] == 0.0;
        d["zero_fraction"] = static_cast<double>(zeros) / static_cast<double>(data.n());
        if (r.config.strata) {
            const auto& s = *r.config.strata;
            d["batch_zero_fraction"] =
                static_cast<double>(s.zeros) / static_cast<double>(s.zeros + s.positives);
        }
    }
    j["data"] = d;

    Json kap = Json::object();
    for (std::size_t k = 0; k < r.kappa.size(); ++k) kap[std::string(fam.param_names()[k])] = r.kappa[k];
    j["kappa"] = kap;
    j["mstop"] = r.mstop;
    j["iterations"] = r.iterations.size();
    j["selected"] = selected_json(fam, data, r.selected);
    j["coefficients"] = coefficients_json(fam, data, r.final_state());
    j["coefficients_at_mstop"] = coefficients_json(fam, data, r.selected_state);
    j["refit"] = {{"performed", r.refit.has_value()},
                  {"converged", r.refit_converged},
                  {"iterations", r.refit_iterations}};
    if (r.refit) j["refit"]["loglik"] = r.refit_loglik;
    j["paths"] = {{"loglik", r.loglik}, {"df", r.df}, {"bic", r.bic}, {"bic_smoothed", r.bic_smoothed}};
    if (!r.risk_reduction.empty()) {
        Json rr = Json::object();
        for (std::size_t k = 0; k < r.risk_reduction.size(); ++k) {
            Json p;
            p["intercept"] = r.risk_reduction[k][0];
            Json a = Json::array();
            for (std::size_t c = 0; c + 1 < r.risk_reduction[k].size(); ++c)
                a.push_back(Json::array({data.names[data.columns[k][c]], r.risk_reduction[k][c + 1]}));
            p["slopes"] = a;
            rr[std::string(fam.param_names()[k])] = p;
        }
        j["risk_reduction"] = rr;
    }
    j["timing"] = {{"select_seconds", r.select_seconds}, {"refit_seconds", r.refit_seconds}};
    return j;
}

inline Model load_model(const Json& j)
{
    try {
        if (!j.is_object() || j.value("format", "") != "sdr-fit/1")
            throw InvalidInput("model: not an sdr fit result");
        Model m;
        m.family = j.at("family").get<std::string>();
        const auto fam = make_family(m.family);
        const auto& d = j.at("data");
        m.covariates = d.at("covariates").get<std::vector<std::string>>();
        for (const auto& s : d.at("standardization"))
            m.stats.push_back({s.at("mean").get<double>(), s.at("sd").get<double>()});
        if (m.stats.size() != m.covariates.size())
            throw InvalidInput("model: standardization does not match covariates");
        auto index_of = [&](const std::string& name) {
            for (std::size_t c = 0; c < m.covariates.size(); ++c)
                if (m.covariates[c] == name) return c;
            throw InvalidInput("model: unknown covariate '" + name + "'");
        };
        const auto pnames = fam->param_names();
        m.columns.resize(fam->n_params());
        m.state.beta.resize(fam->n_params());
        for (std::size_t k = 0; k < fam->n_params(); ++k) {
            const std::string pn(pnames[k]);
            for (const auto& name : d.at("columns").at(pn)) m.columns[k].push_back(index_of(name.get<std::string>()));
            const auto& cj = j.at("coefficients").at(pn);
            const auto& slopes = cj.at("slopes");
            if (slopes.size() != m.columns[k].size())
                throw InvalidInput("model: coefficient count mismatch for " + pn);
            m.state.beta[k] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(slopes.size() + 1));
            m.state.beta[k][0] = cj.at("intercept").get<double>();
            for (std::size_t c = 0; c < slopes.size(); ++c) {
                if (index_of(slopes[c].at(0).get<std::string>()) != m.columns[k][c])
                    throw InvalidInput("model: slope order does not match columns for " + pn);
                m.state.beta[k][static_cast<Eigen::Index>(c + 1)] = slopes[c].at(1).get<double>();
            }
        }
        if (d.contains("zero_fraction")) m.tau0 = d["zero_fraction"].get<double>();
        if (d.contains("batch_zero_fraction")) m.t0 = d["batch_zero_fraction"].get<double>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("model: malformed JSON (") + e.what() + ")");
    }
}

/// Predictor matrix of `model` for raw covariates ordered as model.covariates.
inline Eigen::MatrixXd model_predictors(const Model& m, const Eigen::MatrixXd& raw)
{
    const Standardizer st(m.stats);
    const Eigen::MatrixXd X = st.transform(raw);
    Dataset shape;
    shape.columns = m.columns;
    return m.state.predictors(shape, X);
}

// ---------------------------------------------------------------------------
// CSV artifacts

inline void write_path_csv(std::ostream& out, const Family& fam, const Dataset& data, const FitResult& r)
{
    CsvWriter w(out);
    w.cell(std::string("iteration")).cell(std::string("parameter")).cell(std::string("column"))
        .cell(std::string("value"));
    w.end();
    const auto pn = fam.param_names();
    auto emit = [&](std::size_t t, std::size_t k, std::size_t coef, double v) {
        w.cell(t).cell(std::string(pn[k]))
            .cell(coef == 0 ? std::string("(intercept)") : data.names[data.columns[k][coef - 1]])
            .cell(v);
        w.end();
    };
    for (std::size_t k = 0; k < r.initial.beta.size(); ++k) emit(0, k, 0, r.initial.beta[k][0]);
    for (const auto& e : r.path) emit(e.iteration, e.param, e.coef, e.value);
}

inline void write_criterion_csv(std::ostream& out, const FitResult& r)
{
    CsvWriter w(out);
    for (const char* h : {"iteration", "loglik", "df", "bic", "bic_smoothed"}) w.cell(std::string(h));
    w.end();
    for (std::size_t t = 0; t < r.loglik.size(); ++t) {
        w.cell(t).cell(r.loglik[t]).cell(r.df[t]).cell(r.bic[t]);
        w.cell(t < r.bic_smoothed.size() ? r.bic_smoothed[t] : r.bic[t]);
        w.end();
    }
}

inline void write_selected_csv(std::ostream& out, const Family& fam, const Dataset& data, const FitResult& r)
{
    CsvWriter w(out);
    w.cell(std::string("parameter")).cell(std::string("column")).cell(std::string("coefficient"));
    w.end();
    const auto& s = r.final_state();
    for (std::size_t k = 0; k < r.selected.size(); ++k)
        for (auto c : r.selected[k]) {
            std::size_t local = 0;
            while (data.columns[k][local] != c) ++local;
            w.cell(std::string(fam.param_names()[k])).cell(data.names[c])
                .cell(s.beta[k][static_cast<Eigen::Index>(local + 1)]);
            w.end();
        }
}

/// Metric rows; the timing column is last.
inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows,
                              const Family& fam, const std::string& scenario = "")
{
    CsvWriter w(out);
    const auto pn = fam.param_names();
    w.cell(std::string("scenario")).cell(std::string("method")).cell(std::string("replication"))
        .cell(std::string("failed")).cell(std::string("crps"));
    for (auto p : pn) w.cell("rmse_" + std::string(p));
    w.cell(std::string("tp")).cell(std::string("fp"));
    for (auto p : pn) w.cell("tp_" + std::string(p));
    for (auto p : pn) w.cell("fp_" + std::string(p));
    w.cell(std::string("mstop")).cell(std::string("message")).cell(std::string("seconds"));
    w.end();
    for (const auto& r : rows) {
        w.cell(scenario).cell(r.method).cell(r.replication).cell(r.failed ? 1 : 0);
        w.cell(r.failed ? std::nan("") : r.crps);
        for (std::size_t k = 0; k < pn.size(); ++k) w.cell(k < r.rmse.size() ? r.rmse[k] : std::nan(""));
        w.cell(r.tp).cell(r.fp);
        for (std::size_t k = 0; k < pn.size(); ++k) w.cell(k < r.tp_param.size() ? r.tp_param[k] : 0);
        for (std::size_t k = 0; k < pn.size(); ++k) w.cell(k < r.fp_param.size() ? r.fp_param[k] : 0);
        w.cell(r.mstop).cell(r.message).cell(r.seconds);
        w.end();
    }
}

inline Json summary_json(const std::vector<MethodSummary>& s, const Family& fam)
{
    Json a = Json::array();
    const auto pn = fam.param_names();
    for (const auto& m : s) {
        Json j;
        j["method"] = m.method;
        j["runs"] = m.runs;
        j["failed"] = m.failed;
        j["crps"] = m.crps;
        Json rmse = Json::object(), tp = Json::object(), fp = Json::object();
        for (std::size_t k = 0; k < m.rmse.size(); ++k) {
            rmse[std::string(pn[k])] = m.rmse[k];
            tp[std::string(pn[k])] = m.tp_param[k];
            fp[std::string(pn[k])] = m.fp_param[k];
        }
        j["rmse"] = rmse;
        j["tp"] = m.tp;
        j["fp"] = m.fp;
        j["tp_by_parameter"] = tp;
        j["fp_by_parameter"] = fp;
        a.push_back(j);
    }
    return a;
}

} // namespace sdr
