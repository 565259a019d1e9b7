// Command-line front end: fit, predict, simulate, bench.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include <sdr/sdr.hpp>

namespace fs = std::filesystem;
using sdr::Json;

namespace {

constexpr int exit_input = 2;
constexpr int exit_numeric = 3;

std::size_t default_threads()
{
    if (const char* env = std::getenv("SDR_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
        throw sdr::InvalidInput("SDR_THREADS must be a positive integer");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

Json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw sdr::InvalidInput("cannot open '" + path + "'");
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw sdr::InvalidInput(path + ": invalid JSON (" + e.what() + ")");
    }
}

std::ofstream open_out(const fs::path& p)
{
    std::ofstream out(p, std::ios::binary);
    if (!out) throw sdr::InvalidInput("cannot write '" + p.string() + "'");
    return out;
}

void write_json(const fs::path& p, const Json& j)
{
    auto out = open_out(p);
    out << j.dump(2) << '\n';
}

void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw sdr::InvalidInput("cannot create directory '" + dir + "'");
}

// ---------------------------------------------------------------------------
// fit

struct FitArgs
{
    std::string data;
    std::string config;
    std::string family;
    std::string method;
    std::string response;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
};

int cmd_fit(const FitArgs& a)
{
    Json cfg = a.config.empty() ? Json::object() : read_json_file(a.config);
    sdr::detail::reject_unknown(cfg, {"family", "response", "method", "covariates", "columns", "seed", "fit", "gb",
                                      "threshold_descent", "refit", "bw_fraction"},
                                "config");
    std::string family = cfg.value("family", "");
    if (!a.family.empty()) family = a.family;
    if (family.empty()) throw sdr::InvalidInput("no family given (--family or config \"family\")");
    const auto fam = sdr::make_family(family);

    std::string method = cfg.value("method", "BS+CF");
    if (!a.method.empty()) method = a.method;
    if (method == "thresdesc") method = "ThresDesc";
    if (method == "gb") method = "GB";
    if (method == "vardes") method = "VarDes";
    if (!sdr::is_known_method(method)) throw sdr::InvalidInput("unknown method '" + method + "'");
    std::string response = cfg.value("response", "y");
    if (!a.response.empty()) response = a.response;

    sdr::MethodOptions opts;
    sdr::apply_method_sections(opts, cfg);
    std::uint64_t seed = cfg.value("seed", std::uint64_t{1});
    if (a.seed) seed = *a.seed;
    opts.fit.seed = seed;
    opts.gb.seed = seed;
    opts.gb.threads = default_threads();

    const auto table = sdr::read_csv_file(a.data);
    if (table.column(response) < 0)
        throw sdr::InvalidInput(a.data + ": missing response column '" + response + "'");
    std::vector<std::string> covariates;
    if (cfg.contains("covariates")) {
        covariates = cfg["covariates"].get<std::vector<std::string>>();
    } else {
        for (const auto& h : table.header)
            if (h != response) covariates.push_back(h);
    }
    if (covariates.empty()) throw sdr::InvalidInput(a.data + ": no covariate columns");
    const Eigen::MatrixXd yv = sdr::numeric_columns(table, {response}, a.data);
    const Eigen::MatrixXd raw = sdr::numeric_columns(table, covariates, a.data);
    for (Eigen::Index i = 0; i < yv.rows(); ++i) fam->check_support(yv(i, 0));

    std::optional<std::vector<std::vector<std::size_t>>> columns;
    if (cfg.contains("columns")) {
        const auto& cj = cfg["columns"];
        std::vector<std::vector<std::size_t>> cols(fam->n_params());
        for (std::size_t k = 0; k < fam->n_params(); ++k) {
            const std::string pn(fam->param_names()[k]);
            if (!cj.contains(pn)) {
                cols[k].resize(covariates.size());
                for (std::size_t c = 0; c < covariates.size(); ++c) cols[k][c] = c;
                continue;
            }
            for (const auto& name : cj[pn]) {
                const auto it = std::find(covariates.begin(), covariates.end(), name.get<std::string>());
                if (it == covariates.end())
                    throw sdr::InvalidInput("config.columns." + pn + ": unknown covariate '"
                                            + name.get<std::string>() + "'");
                cols[k].push_back(static_cast<std::size_t>(it - covariates.begin()));
            }
        }
        columns = cols;
    }
    const auto data = sdr::make_dataset(yv.col(0), raw, covariates, fam->n_params(), columns);

    const auto res = sdr::run_method(*fam, data, method, opts);

    ensure_dir(a.out);
    const Json prov = {{"command", "fit"}, {"data", fs::path(a.data).filename().string()}, {"seed", seed}};
    write_json(fs::path(a.out) / "result.json", sdr::fit_result_json(*fam, data, res, response, opts, prov));
    {
        auto out = open_out(fs::path(a.out) / "path.csv");
        sdr::write_path_csv(out, *fam, data, res);
    }
    {
        auto out = open_out(fs::path(a.out) / "criterion.csv");
        sdr::write_criterion_csv(out, res);
    }
    {
        auto out = open_out(fs::path(a.out) / "selected.csv");
        sdr::write_selected_csv(out, *fam, data, res);
    }
    std::cerr << method << ": mstop " << res.mstop << ", selected";
    for (std::size_t k = 0; k < res.selected.size(); ++k)
        std::cerr << ' ' << fam->param_names()[k] << '=' << res.selected[k].size();
    std::cerr << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs
{
    std::string model;
    std::string data;
    std::vector<double> thresholds;
    bool adjust = false;
    std::string out;
};

int cmd_predict(const PredictArgs& a)
{
    auto model = sdr::load_model(read_json_file(a.model));
    const auto fam = sdr::make_family(model.family);
    const auto table = sdr::read_csv_file(a.data);
    const Eigen::MatrixXd raw = sdr::numeric_columns(table, model.covariates, a.data);

    if (a.adjust) {
        std::optional<std::size_t> logit_param;
        for (std::size_t k = 0; k < fam->n_params(); ++k)
            if (fam->links()[k] == sdr::Link::logit) logit_param = k;
        if (!logit_param) throw sdr::InvalidInput("--adjust needs a family with a zero-probability parameter");
        if (!model.tau0 || !model.t0)
            throw sdr::InvalidInput("--adjust needs a model fitted on zero/positive stratified batches");
        auto& b = model.state.beta[*logit_param];
        b[0] = sdr::intercept_adjustment(b[0], *model.tau0, *model.t0);
    }
    if (!a.thresholds.empty() && !fam->discrete())
        throw sdr::InvalidInput("--threshold needs a count family");

    const Eigen::MatrixXd eta = sdr::model_predictors(model, raw);
    std::ofstream file;
    if (!a.out.empty()) file = open_out(a.out);
    std::ostream& out = a.out.empty() ? std::cout : file;
    sdr::CsvWriter w(out);
    w.cell(std::string("row"));
    for (auto p : fam->param_names()) w.cell(std::string(p));
    for (double c : a.thresholds) w.cell("P(Y>=" + sdr::format_double(c) + ")");
    w.end();
    const std::size_t K = fam->n_params();
    sdr::ParamVector e{};
    for (Eigen::Index i = 0; i < eta.rows(); ++i) {
        for (std::size_t k = 0; k < K; ++k) e[k] = eta(i, static_cast<Eigen::Index>(k));
        const auto theta = fam->theta_from_eta(std::span<const double>(e.data(), K));
        w.cell(static_cast<std::size_t>(i + 1));
        for (std::size_t k = 0; k < K; ++k) w.cell(theta[k]);
        for (double c : a.thresholds) {
            const double kc = std::ceil(c);
            const double p = kc <= 0.0 ? 1.0 : 1.0 - fam->cdf(kc - 1.0, std::span<const double>(theta.data(), K));
            w.cell(p);
        }
        w.end();
    }
    return 0;
}

// ---------------------------------------------------------------------------
// simulate / bench

struct ScenarioRun
{
    std::string label;
    sdr::ScenarioSpec spec;
    std::vector<sdr::MetricsRow> rows;
};

std::string scenario_label(const sdr::ScenarioSpec& s)
{
    return s.family + "_n" + std::to_string(s.nobs) + "_noise" + std::to_string(s.nnoise) + "_rho"
         + sdr::format_double(s.rho_corr);
}

void write_scenario_artifacts(const std::string& dir, const std::vector<ScenarioRun>& runs, const Json& header)
{
    ensure_dir(dir);
    // one metrics table per family (columns depend on the parameter count)
    std::map<std::string, std::vector<const ScenarioRun*>> by_family;
    for (const auto& r : runs) by_family[r.spec.family].push_back(&r);
    for (const auto& [family, rs] : by_family) {
        const auto fam = sdr::make_family(family);
        const std::string name = by_family.size() == 1 ? "metrics.csv" : "metrics_" + family + ".csv";
        auto out = open_out(fs::path(dir) / name);
        bool first = true;
        for (const auto* r : rs) {
            std::ostringstream tmp;
            sdr::write_metrics_csv(tmp, r->rows, *fam, r->label);
            std::string text = tmp.str();
            if (!first) text.erase(0, text.find('\n') + 1);
            out << text;
            first = false;
        }
    }

    Json summary = header;
    Json scen = Json::array();
    Json timing = Json::array();
    std::map<std::string, std::ofstream> plots;
    auto plot = [&](const std::string& metric) -> std::ofstream& {
        auto it = plots.find(metric);
        if (it == plots.end()) {
            it = plots.emplace(metric, open_out(fs::path(dir) / ("plot_" + metric + ".csv"))).first;
            it->second << "family,nobs,nnoise,rho_corr,method,mean\n";
        }
        return it->second;
    };
    for (const auto& r : runs) {
        const auto fam = sdr::make_family(r.spec.family);
        const auto s = sdr::summarize(r.rows, r.spec.methods);
        scen.push_back({{"label", r.label}, {"spec", sdr::to_json(r.spec)}, {"methods", sdr::summary_json(s, *fam)}});
        Json t = Json::object();
        for (const auto& m : s) {
            t[m.method] = m.seconds;
            const std::string key = r.spec.family + "," + std::to_string(r.spec.nobs) + ","
                                  + std::to_string(r.spec.nnoise) + "," + sdr::format_double(r.spec.rho_corr)
                                  + "," + sdr::csv_escape(m.method) + ",";
            if (m.runs == 0) continue;
            plot("crps") << key << sdr::format_double(m.crps) << '\n';
            plot("tp") << key << sdr::format_double(m.tp) << '\n';
            plot("fp") << key << sdr::format_double(m.fp) << '\n';
            for (std::size_t k = 0; k < m.rmse.size(); ++k)
                plot("rmse_" + std::string(fam->param_names()[k])) << key << sdr::format_double(m.rmse[k]) << '\n';
            plot("seconds") << key << sdr::format_double(m.seconds) << '\n';
        }
        timing.push_back({{"label", r.label}, {"mean_seconds", t}});
    }
    summary["scenarios"] = scen;
    summary["timing"] = timing;
    write_json(fs::path(dir) / "summary.json", summary);
}

struct SimArgs
{
    std::string config;
    std::string out = ".";
    std::optional<std::uint64_t> seed;
};

int cmd_simulate(const SimArgs& a)
{
    sdr::ScenarioSpec spec;
    spec.options.fit.T = 0;
    sdr::apply_json(spec, read_json_file(a.config));
    if (spec.options.fit.T == 0) spec.options.fit.T = sdr::default_T(sdr::make_family(spec.family)->kind());
    if (a.seed) spec.seed = *a.seed;
    spec.threads = default_threads();
    spec.validate();
    std::vector<ScenarioRun> runs(1);
    runs[0].label = scenario_label(spec);
    runs[0].spec = spec;
    runs[0].rows = sdr::run_scenario(spec);
    write_scenario_artifacts(a.out, runs, {{"command", "simulate"}, {"seed", spec.seed}});
    std::size_t failed = 0;
    for (const auto& r : runs[0].rows) failed += r.failed;
    if (failed) std::cerr << failed << " replication rows failed; see metrics.csv\n";
    return 0;
}

/// Desk-scale grid used by the regression bounds.
std::vector<sdr::ScenarioSpec> grid(const std::string& name, std::uint64_t seed)
{
    std::vector<sdr::ScenarioSpec> g;
    auto make = [&](std::string family, std::size_t nobs, std::size_t reps, std::vector<std::string> methods) {
        sdr::ScenarioSpec s;
        s.family = std::move(family);
        s.nobs = nobs;
        s.nnoise = 30;
        s.rho_corr = 0.7;
        s.reps = reps;
        s.methods = std::move(methods);
        s.seed = seed;
        s.options.fit.T = sdr::default_T(sdr::make_family(s.family)->kind());
        return s;
    };
    if (name == "paper-desk") {
        g.push_back(make("NO", 1000, 20, {"BS+CF", "GB"}));
        g.push_back(make("ZANBI", 5000, 10, {"BS+CF"}));
    } else if (name == "minimal") {
        auto s = make("NO", 500, 1, {"BS+CF"});
        s.n_valid = 2000;
        g.push_back(s);
    } else {
        throw sdr::InvalidInput("unknown grid '" + name + "' (paper-desk, minimal)");
    }
    return g;
}

struct BenchArgs
{
    std::string grid = "paper-desk";
    std::string out = ".";
    std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a)
{
    std::vector<ScenarioRun> runs;
    for (auto& spec : grid(a.grid, a.seed)) {
        spec.threads = default_threads();
        ScenarioRun r;
        r.label = scenario_label(spec);
        r.spec = spec;
        std::cerr << "bench: " << r.label << " (" << spec.reps << " reps)\n";
        r.rows = sdr::run_scenario(spec);
        runs.push_back(std::move(r));
    }
    write_scenario_artifacts(a.out, runs, {{"command", "bench"}, {"grid", a.grid}, {"seed", a.seed}});
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Stagewise boosting for distributional regression"};
    app.require_subcommand(1);

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "Fit a distributional regression model");
    fit->add_option("data", fa.data, "CSV with header row")->required()->check(CLI::ExistingFile);
    fit->add_option("--config", fa.config, "JSON configuration")->check(CLI::ExistingFile);
    fit->add_option("--family", fa.family, "NO, GA, NBI or ZANBI");
    fit->add_option("--method", fa.method, "Method name (BS+CF, thresdesc, gb, vardes, ...)");
    fit->add_option("--response", fa.response, "Response column (default y)");
    fit->add_option("--out", fa.out, "Output directory");
    fit->add_option("--seed", fa.seed, "Seed (overrides config)");

    PredictArgs pa;
    auto* pred = app.add_subcommand("predict", "Predict distribution parameters for new rows");
    pred->add_option("data", pa.data, "CSV with the training covariates")->required()->check(CLI::ExistingFile);
    pred->add_option("--model", pa.model, "result.json from fit")->required()->check(CLI::ExistingFile);
    pred->add_option("--threshold", pa.thresholds, "Report P(Y >= c) (count families)");
    pred->add_flag("--adjust", pa.adjust, "Undo zero/positive batch subsampling on the zero-probability intercept");
    pred->add_option("--out", pa.out, "Output CSV (default stdout)");

    SimArgs sa;
    auto* sim = app.add_subcommand("simulate", "Run one simulation scenario");
    sim->add_option("--config", sa.config, "Scenario JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", sa.out, "Output directory");
    sim->add_option("--seed", sa.seed, "Seed (overrides config)");

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "Run a predefined scenario grid");
    bench->add_option("--grid", ba.grid, "paper-desk or minimal");
    bench->add_option("--seed", ba.seed, "Seed")->required();
    bench->add_option("--out", ba.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_input;
    }

    try {
        if (*fit) return cmd_fit(fa);
        if (*pred) return cmd_predict(pa);
        if (*sim) return cmd_simulate(sa);
        if (*bench) return cmd_bench(ba);
    } catch (const sdr::InvalidInput& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_input;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_input;
    } catch (const sdr::NumericError& e) {
        std::cerr << "numeric error: " << e.what();
        if (e.index()) std::cerr << " (at " << *e.index() << ')';
        std::cerr << '\n';
        return exit_numeric;
    }
    return 0;
}
