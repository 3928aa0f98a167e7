// nglf: command-line front end.
//
//   nglf synth       sample an NGLF dataset
//   nglf fit         fit a factor model to a CSV
//   nglf bound       sample-complexity lower bound (single value or sweep)
//   nglf eval nmi    model clusters vs ground-truth labels
//   nglf eval nll    held-out Gaussian NLL of a covariance estimator
//   nglf experiment blessing|covariance
//
// Every run writes manifest.json into the output directory; passing it back
// with --config reproduces the run. Exit codes: 0 ok, 2 invalid input,
// 3 solver stall, 4 numeric failure.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nglf/nglf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_invalid = 2;
constexpr int exit_stall = 3;
constexpr int exit_numeric = 4;
constexpr const char* out_dir_env = "NGLF_OUT_DIR";
constexpr const char* tool_version = "0.1.0";

// ---- options --------------------------------------------------------------

struct SolverOpts {
    std::vector<double> schedule = nglf::default_anneal_schedule();
    int max_iters = 10000;
    double rel_tol = 1e-8;
    double armijo_c1 = 1e-4;
    double ls_shrink = 0.5;
    double min_alpha = 1e-10;
    double r_clip = nglf::default_r_clip;
    std::string init_scale = "stddev";

    nglf::SolverConfig to_config(int m, std::uint64_t seed) const {
        nglf::SolverConfig c;
        c.m = m;
        c.seed = seed;
        c.anneal_schedule = schedule;
        c.max_iters_per_stage = max_iters;
        c.rel_tol = rel_tol;
        c.armijo_c1 = armijo_c1;
        c.ls_shrink = ls_shrink;
        c.min_alpha = min_alpha;
        c.r_clip = r_clip;
        if (init_scale == "stddev")
            c.init_scale = nglf::InitScale::stddev;
        else if (init_scale == "variance")
            c.init_scale = nglf::InitScale::variance;
        else
            throw nglf::ValidationError("init_scale must be 'stddev' or 'variance'");
        c.validate();
        return c;
    }
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SolverOpts, schedule, max_iters, rel_tol, armijo_c1, ls_shrink,
                                   min_alpha, r_clip, init_scale)

struct SynthOpts {
    int p = 0;
    int m = 0;
    int n = 0;
    double snr = 1.0;
    std::uint64_t seed = 0;
    std::string partition;  // optional labels JSON; contiguous equal groups otherwise
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SynthOpts, p, m, n, snr, seed, partition)

struct FitOpts {
    std::string data;
    int m = 0;
    std::uint64_t seed = 0;
    bool export_covariance = false;
    bool dense_covariance = false;
    SolverOpts solver;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(FitOpts, data, m, seed, export_covariance, dense_covariance,
                                   solver)

struct BoundOpts {
    int m = 64;
    double snr = 0.1;
    double err = 0.0;
    long long p = 0;        // single evaluation
    double n = 0.0;         // sample budget for the recoverable-p search
    long long p_min = 0;    // sweep range over multiples of m
    long long p_max = 0;
    long long p_step = 0;   // defaults to m
    bool bits = false;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BoundOpts, m, snr, err, p, n, p_min, p_max, p_step, bits)

struct EvalNmiOpts {
    std::string model;
    std::string labels;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalNmiOpts, model, labels)

struct EvalNllOpts {
    std::string test;
    std::string estimator = "factor";  // factor | empirical | diagonal | shrinkage:<lambda> | ground_truth
    std::string model;                 // factor
    std::string train;                 // empirical, diagonal, shrinkage
    std::string spec;                  // ground_truth
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalNllOpts, test, estimator, model, train, spec)

struct BlessingOpts {
    int n = 300;
    int m = 64;
    double snr = 0.1;
    double err = 0.0;
    int log2_p_min = 7;
    int log2_p_max = 12;
    int seeds = 5;
    std::uint64_t base_seed = 0;
    int threads = 1;
    SolverOpts solver;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(BlessingOpts, n, m, snr, err, log2_p_min, log2_p_max, seeds,
                                   base_seed, threads, solver)

struct CovarianceOpts {
    int m = 8;
    int vars_per_factor = 64;
    double snr = 5.0;
    int log2_n_min = 3;
    int log2_n_max = 9;
    int n_test = 1000;
    int seeds = 5;
    double shrinkage = 0.5;
    std::uint64_t base_seed = 0;
    int threads = 1;
    SolverOpts solver;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CovarianceOpts, m, vars_per_factor, snr, log2_n_min, log2_n_max,
                                   n_test, seeds, shrinkage, base_seed, threads, solver)

void add_solver_flags(CLI::App* cmd, SolverOpts& s) {
    cmd->add_option("--schedule", s.schedule, "Annealing eps values, must end in 0")->delimiter(',');
    cmd->add_option("--max-iters", s.max_iters, "Iteration cap per annealing stage");
    cmd->add_option("--rel-tol", s.rel_tol, "Relative objective change for convergence");
    cmd->add_option("--armijo-c1", s.armijo_c1, "Sufficient-decrease constant");
    cmd->add_option("--ls-shrink", s.ls_shrink, "Backtracking factor");
    cmd->add_option("--min-alpha", s.min_alpha, "Smallest step tried before declaring a stall");
    cmd->add_option("--r-clip", s.r_clip, "Maximum |R|");
    cmd->add_option("--init-scale", s.init_scale, "stddev or variance reading of N(0, 1/sqrt(p))");
}

/// Config keys override flags. Accepts either a flat options object or a manifest.
template <typename Opts>
void apply_config(Opts& opts, const std::string& path, const std::string& command) {
    if (path.empty()) return;
    json cfg = nglf::io::read_json(path);
    if (cfg.contains("command") && cfg.contains("config")) {
        if (cfg["command"] != command)
            throw nglf::ValidationError("manifest is for '" + cfg["command"].get<std::string>() +
                                        "', not '" + command + "'");
        cfg = cfg["config"];
    }
    if (!cfg.is_object()) throw nglf::ValidationError("config must be a JSON object");
    json merged = opts;
    for (auto it = cfg.begin(); it != cfg.end(); ++it) {
        if (!merged.contains(it.key()))
            throw nglf::ValidationError("unknown config key '" + it.key() + "'");
        if (merged[it.key()].is_object() && it.value().is_object())
            merged[it.key()].update(it.value());
        else
            merged[it.key()] = it.value();
    }
    try {
        opts = merged.get<Opts>();
    } catch (const json::exception& e) {
        throw nglf::ValidationError(std::string("bad config value: ") + e.what());
    }
}

// ---- output handling ------------------------------------------------------

struct Output {
    fs::path dir;

    explicit Output(std::string flag_dir) {
        if (const char* env = std::getenv(out_dir_env); env && *env) flag_dir = env;
        dir = flag_dir.empty() ? fs::path(".") : fs::path(flag_dir);
        fs::create_directories(dir);
    }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    template <typename Opts>
    void manifest(const std::string& command, const Opts& opts) const {
        nglf::io::write_json(path("manifest.json"),
                             {{"command", command}, {"version", tool_version}, {"config", opts}});
    }
};

void log(const std::string& msg) { std::cerr << msg << '\n'; }

std::string fmt(double v) { return nglf::io::format_double(v); }

Eigen::MatrixXd read_matrix(const std::string& path) {
    if (path.empty()) throw nglf::ValidationError("missing input path");
    return nglf::io::read_csv(path).values;
}

// ---- synth ----------------------------------------------------------------

int run_synth(const SynthOpts& o, const Output& out) {
    nglf::NglfSpec spec;
    if (!o.partition.empty()) {
        spec = {o.p, o.m, o.snr, nglf::io::labels_from_json(nglf::io::read_json(o.partition))};
        spec.validate();
    } else {
        spec = nglf::NglfSpec::equal_groups(o.p, o.m, o.snr);
        spec.validate();
    }
    const auto ds = nglf::generate_nglf(spec, o.n, o.seed);
    nglf::io::write_csv(out.path("data.csv"), ds.data);
    nglf::io::write_json(out.path("labels.json"), {{"labels", ds.labels}});
    json sj = nglf::io::to_json(spec);
    sj["n"] = o.n;
    sj["seed"] = o.seed;
    nglf::io::write_json(out.path("spec.json"), sj);
    log("wrote " + std::to_string(o.n) + "x" + std::to_string(o.p) + " data to " +
        out.path("data.csv"));
    return exit_ok;
}

// ---- fit ------------------------------------------------------------------

int run_fit(const FitOpts& o, const Output& out) {
    const Eigen::MatrixXd raw = read_matrix(o.data);
    const nglf::StandardizedData data = nglf::standardize(raw);
    const nglf::SolverConfig cfg = o.solver.to_config(o.m, o.seed);

    nglf::FitTrace trace;
    const nglf::FactorModel model = nglf::fit(data, cfg, &trace);

    nglf::io::write_json(out.path("model.json"), nglf::io::to_json(model));
    {
        std::ostringstream ss;
        nglf::io::write_trace_csv(ss, trace);
        nglf::io::write_text(out.path("trace.csv"), ss.str());
    }
    nglf::io::write_json(out.path("fit.json"),
                         {{"objective", model.objective},
                          {"tc_lower_bound", nglf::tc_lower_bound(model.moments)},
                          {"stalled", trace.any_stalled()},
                          {"r_clipped", model.moments.clipped},
                          {"stages", nglf::io::to_json(trace)}});
    if (o.export_covariance) {
        const auto est = nglf::factor_covariance(model);
        nglf::io::write_json(out.path("covariance.json"), nglf::io::to_json(est));
        if (est.clamped) log("warning: " + std::to_string(est.clamped) + " diagonal entries clamped");
        if (o.dense_covariance)
            nglf::io::write_csv(out.path("covariance.csv"), est.materialize_original());
    }
    log("objective " + fmt(model.objective) + " after " + std::to_string(trace.entries.size()) +
        " trace entries");
    if (trace.any_stalled()) {
        log("warning: at least one annealing stage stalled");
        return exit_stall;
    }
    return exit_ok;
}

// ---- bound ----------------------------------------------------------------

json bound_json(const nglf::bounds::BoundResult& r) {
    json j = {{"status", nglf::bounds::to_string(r.status)}};
    j["n_min"] = r.status == nglf::bounds::BoundStatus::inapplicable ? json(nullptr)
                                                                     : json(r.n_min);
    return j;
}

int run_bound(const BoundOpts& o, const Output& out) {
    namespace nb = nglf::bounds;
    // Bounds are computed in nats; --bits only changes how log M is displayed.
    const double info_unit = o.bits ? 1.0 / std::log(2.0) : 1.0;
    json result = {{"m", o.m}, {"snr", o.snr}, {"err", o.err}};
    if (o.m >= 2) result["asymptote"] = nb::asymptotic_bound(o.m, o.snr, o.err);

    if (o.p > 0) {
        const nb::BoundParams bp{static_cast<double>(o.p), o.m, o.snr, o.err};
        const auto r = nb::sample_complexity_lower_bound(bp);
        result["p"] = o.p;
        result["log_num_structures"] = nb::log_num_structures(static_cast<int>(o.p), o.m) * info_unit;
        result["log_unit"] = o.bits ? "bits" : "nats";
        result["bound"] = bound_json(r);
    }
    if (o.n > 0.0) {
        const auto rp = nb::min_recoverable_p(o.n, o.m, o.snr, o.err);
        result["n"] = o.n;
        result["recoverable"] = {{"reachable", rp.reachable}};
        if (rp.reachable) {
            result["recoverable"]["crossing"] = rp.crossing;
            result["recoverable"]["threshold_p"] = static_cast<long long>(std::floor(rp.crossing));
            result["recoverable"]["smallest_integer_p"] = rp.smallest_integer;
            result["recoverable"]["smallest_multiple_of_m"] = rp.smallest_multiple;
        }
    }
    if (o.p_max > 0) {
        const long long step = o.p_step > 0 ? o.p_step : o.m;
        const long long start = std::max<long long>(o.p_min > 0 ? o.p_min : step, o.m);
        std::ostringstream ss;
        ss << "p,n_min,status\n";
        for (long long p = start; p <= o.p_max; p += step) {
            const auto r = nb::sample_complexity_lower_bound_real(
                {static_cast<double>(p), o.m, o.snr, o.err});
            ss << p << ','
               << (r.status == nb::BoundStatus::inapplicable ? std::string("nan") : fmt(r.n_min))
               << ',' << nb::to_string(r.status) << '\n';
        }
        nglf::io::write_text(out.path("bound.csv"), ss.str());
        result["sweep_csv"] = "bound.csv";
    }
    nglf::io::write_json(out.path("bound.json"), result);
    std::cout << result.dump(2) << '\n';
    return exit_ok;
}

// ---- eval -----------------------------------------------------------------

int run_eval_nmi(const EvalNmiOpts& o, const Output& out) {
    const auto model = nglf::io::model_from_json(nglf::io::read_json(o.model));
    const auto truth = nglf::io::labels_from_json(nglf::io::read_json(o.labels));
    const auto assign = nglf::cluster_assignment(model);
    const double score = nglf::nmi(assign, truth);
    const json result = {{"nmi", score}, {"labels", assign.labels}};
    nglf::io::write_json(out.path("eval_nmi.json"), result);
    std::cout << fmt(score) << '\n';
    return exit_ok;
}

nglf::CovarianceEstimate build_estimator(const EvalNllOpts& o) {
    const std::string& e = o.estimator;
    if (e == "factor") return nglf::factor_covariance(nglf::io::model_from_json(nglf::io::read_json(o.model)));
    if (e == "ground_truth") {
        const auto spec = nglf::io::spec_from_json(nglf::io::read_json(o.spec));
        return nglf::ground_truth_covariance(nglf::population_covariance(spec));
    }
    const auto train = nglf::standardize(read_matrix(o.train));
    if (e == "empirical") return nglf::empirical_covariance(train);
    if (e == "diagonal") return nglf::diagonal_covariance(train);
    if (e.rfind("shrinkage:", 0) == 0) {
        double lambda = 0.0;
        try {
            lambda = std::stod(e.substr(10));
        } catch (const std::exception&) {
            throw nglf::ValidationError("bad shrinkage intensity in '" + e + "'");
        }
        return nglf::shrinkage_covariance(train, lambda);
    }
    throw nglf::ValidationError("unknown estimator '" + e + "'");
}

int run_eval_nll(const EvalNllOpts& o, const Output& out) {
    const Eigen::MatrixXd test = read_matrix(o.test);
    const auto est = build_estimator(o);
    const double value = nglf::gaussian_nll(est, test);
    nglf::io::write_json(out.path("eval_nll.json"),
                         {{"method", o.estimator}, {"n_test", test.rows()}, {"nll", value}});
    std::cout << fmt(value) << '\n';
    return exit_ok;
}

// ---- experiments ----------------------------------------------------------

/// Runs independent cells, reusing finished ones from disk.
///
/// Each cell's result is stored as cells/<name>.json together with the key
/// that produced it; a file whose key differs is recomputed.
class CellRunner {
public:
    CellRunner(const Output& out, int threads) : dir_(out.dir / "cells"), threads_(std::max(threads, 1)) {
        fs::create_directories(dir_);
    }

    struct Cell {
        std::string name;
        json key;
        std::function<json()> run;
    };

    std::vector<json> run(std::vector<Cell> cells) {
        std::vector<json> results(cells.size());
        std::atomic<std::size_t> next{0};
        std::mutex err_mutex;
        std::exception_ptr first_error;

        auto worker = [&] {
            for (;;) {
                const std::size_t idx = next.fetch_add(1);
                if (idx >= cells.size()) return;
                {
                    std::lock_guard lock(err_mutex);
                    if (first_error) return;
                }
                try {
                    results[idx] = run_one(cells[idx]);
                } catch (...) {
                    std::lock_guard lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int t = 1; t < threads_; ++t) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
        return results;
    }

private:
    json run_one(const Cell& cell) {
        const fs::path file = dir_ / (cell.name + ".json");
        if (fs::exists(file)) {
            try {
                const json saved = nglf::io::read_json(file.string());
                if (saved.at("key") == cell.key) {
                    log("[resume] " + cell.name);
                    return saved.at("result");
                }
            } catch (const std::exception&) {
                // unreadable or partial: recompute
            }
        }
        const auto t0 = std::chrono::steady_clock::now();
        json result = cell.run();
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const fs::path tmp = dir_ / (cell.name + ".json.tmp");
        nglf::io::write_json(tmp.string(), {{"key", cell.key}, {"result", result}});
        fs::rename(tmp, file);
        std::ostringstream ss;
        ss << "[done] " << cell.name << " " << result.dump() << " (" << secs << " s)";
        log(ss.str());
        return result;
    }

    fs::path dir_;
    int threads_;
};

int run_blessing(const BlessingOpts& o, const Output& out) {
    if (o.seeds < 1 || o.n < 2 || o.log2_p_min < 1 || o.log2_p_max < o.log2_p_min || o.log2_p_max > 24)
        throw nglf::ValidationError("bad blessing sweep parameters");
    o.solver.to_config(o.m, 0);  // validate early

    std::vector<CellRunner::Cell> cells;
    for (int e = o.log2_p_min; e <= o.log2_p_max; ++e) {
        const int p = 1 << e;
        if (p % o.m != 0 || p < o.m)
            throw nglf::ValidationError("p=" + std::to_string(p) + " is not a multiple of m");
        for (int s = 0; s < o.seeds; ++s) {
            const std::uint64_t cell_seed = nglf::derive_seed(o.base_seed, p, o.n, s);
            json key = {{"p", p}, {"m", o.m}, {"n", o.n}, {"snr", o.snr},
                        {"seed_index", s}, {"cell_seed", cell_seed}, {"solver", o.solver}};
            cells.push_back({"blessing_p" + std::to_string(p) + "_s" + std::to_string(s), key,
                             [=, &o]() -> json {
                                 const auto spec = nglf::NglfSpec::equal_groups(p, o.m, o.snr);
                                 const auto ds = nglf::generate_nglf(spec, o.n, cell_seed);
                                 const auto data = nglf::standardize(ds.data);
                                 nglf::FitTrace trace;
                                 const auto model = nglf::fit(
                                     data, o.solver.to_config(o.m, nglf::derive_seed(cell_seed, 1)),
                                     &trace);
                                 return {{"nmi", nglf::nmi(nglf::cluster_assignment(model), ds.labels)},
                                         {"objective", model.objective},
                                         {"stalled", trace.any_stalled()}};
                             }});
        }
    }
    const auto results = CellRunner(out, o.threads).run(cells);

    std::ostringstream rows, summary;
    rows << "p,m,n,s,seed,nmi\n";
    summary << "p,mean_nmi,seeds\n";
    std::size_t idx = 0;
    bool stalled = false;
    for (int e = o.log2_p_min; e <= o.log2_p_max; ++e) {
        const int p = 1 << e;
        double total = 0.0;
        for (int s = 0; s < o.seeds; ++s, ++idx) {
            const double v = results[idx].at("nmi").get<double>();
            stalled = stalled || results[idx].at("stalled").get<bool>();
            total += v;
            rows << p << ',' << o.m << ',' << o.n << ',' << fmt(o.snr) << ',' << s << ',' << fmt(v) << '\n';
        }
        summary << p << ',' << fmt(total / o.seeds) << ',' << o.seeds << '\n';
    }
    nglf::io::write_text(out.path("nmi.csv"), rows.str());
    nglf::io::write_text(out.path("nmi_summary.csv"), summary.str());

    json boundary = {{"n", o.n}, {"m", o.m}, {"snr", o.snr}, {"err", o.err}};
    if (o.m >= 2) {
        const auto rp = nglf::bounds::min_recoverable_p(o.n, o.m, o.snr, o.err);
        boundary["reachable"] = rp.reachable;
        if (rp.reachable) {
            boundary["crossing"] = rp.crossing;
            boundary["threshold_p"] = static_cast<long long>(std::floor(rp.crossing));
            boundary["smallest_multiple_of_m"] = rp.smallest_multiple;
        }
    }
    nglf::io::write_json(out.path("bound.json"), boundary);
    if (stalled) log("warning: some fits had a stalled annealing stage");
    return exit_ok;
}

int run_covariance(const CovarianceOpts& o, const Output& out) {
    if (o.seeds < 1 || o.m < 1 || o.vars_per_factor < 1 || o.n_test < 1 || o.log2_n_min < 1 ||
        o.log2_n_max < o.log2_n_min || o.log2_n_max > 24)
        throw nglf::ValidationError("bad covariance sweep parameters");
    if (!(o.shrinkage >= 0.0 && o.shrinkage <= 1.0))
        throw nglf::ValidationError("shrinkage must lie in [0, 1]");
    o.solver.to_config(o.m, 0);

    const int p = o.m * o.vars_per_factor;
    const auto spec = nglf::NglfSpec::equal_groups(p, o.m, o.snr);
    const auto truth = nglf::ground_truth_covariance(nglf::population_covariance(spec));
    const std::vector<std::string> methods = {"factor", "diagonal", "empirical", "shrinkage",
                                              "ground_truth"};

    std::vector<CellRunner::Cell> cells;
    for (int e = o.log2_n_min; e <= o.log2_n_max; ++e) {
        const int n = 1 << e;
        for (int s = 0; s < o.seeds; ++s) {
            const std::uint64_t cell_seed = nglf::derive_seed(o.base_seed, p, n, s);
            json key = {{"p", p}, {"m", o.m}, {"n", n}, {"snr", o.snr}, {"n_test", o.n_test},
                        {"shrinkage", o.shrinkage}, {"seed_index", s}, {"cell_seed", cell_seed},
                        {"solver", o.solver}};
            cells.push_back({"covariance_n" + std::to_string(n) + "_s" + std::to_string(s), key,
                             [=, &o, &spec, &truth, &methods]() -> json {
                                 const auto train = nglf::generate_nglf(spec, n, cell_seed);
                                 const auto test = nglf::generate_nglf(
                                     spec, o.n_test, nglf::derive_seed(cell_seed, 2));
                                 const auto data = nglf::standardize(train.data);
                                 const auto model = nglf::fit(
                                     data, o.solver.to_config(o.m, nglf::derive_seed(cell_seed, 1)));
                                 json res = json::object();
                                 for (const auto& method : methods) {
                                     try {
                                         nglf::CovarianceEstimate est;
                                         if (method == "factor") est = nglf::factor_covariance(model);
                                         else if (method == "diagonal") est = nglf::diagonal_covariance(data);
                                         else if (method == "empirical") est = nglf::empirical_covariance(data);
                                         else if (method == "shrinkage") est = nglf::shrinkage_covariance(data, o.shrinkage);
                                         else est = truth;
                                         res[method] = {{"nll", nglf::gaussian_nll(est, test.data)},
                                                        {"status", "ok"}};
                                     } catch (const nglf::NotPositiveDefiniteError&) {
                                         res[method] = {{"nll", nullptr}, {"status", "not_pd"}};
                                     }
                                 }
                                 return res;
                             }});
        }
    }
    const auto results = CellRunner(out, o.threads).run(cells);

    std::ostringstream rows, summary;
    rows << "method,n,seed,nll,status\n";
    summary << "method,n,mean_nll,ok_seeds\n";
    for (const auto& method : methods) {
        std::size_t idx = 0;
        for (int e = o.log2_n_min; e <= o.log2_n_max; ++e) {
            const int n = 1 << e;
            double total = 0.0;
            int ok = 0;
            for (int s = 0; s < o.seeds; ++s, ++idx) {
                const json& r = results[idx].at(method);
                const bool good = r.at("status") == "ok";
                rows << method << ',' << n << ',' << s << ','
                     << (good ? fmt(r.at("nll").get<double>()) : std::string("nan")) << ','
                     << r.at("status").get<std::string>() << '\n';
                if (good) {
                    total += r.at("nll").get<double>();
                    ++ok;
                }
            }
            summary << method << ',' << n << ',' << (ok ? fmt(total / ok) : std::string("nan"))
                    << ',' << ok << '\n';
        }
    }
    nglf::io::write_text(out.path("nll.csv"), rows.str());
    nglf::io::write_text(out.path("nll_summary.csv"), summary.str());
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Linear latent factor models: synthesis, fitting, bounds and evaluation"};
    app.require_subcommand(1);
    std::string out_dir = ".";
    std::string config_path;
    app.add_option("-o,--out", out_dir, std::string("Output directory (overridden by ") + out_dir_env + ")");
    app.add_option("--config", config_path, "JSON options or a manifest.json; overrides flags");

    SynthOpts synth;
    auto* c_synth = app.add_subcommand("synth", "Sample an NGLF dataset");
    c_synth->add_option("--p", synth.p, "Observed variables")->required();
    c_synth->add_option("--m", synth.m, "Latent factors")->required();
    c_synth->add_option("--n", synth.n, "Samples")->required();
    c_synth->add_option("--snr", synth.snr, "Signal-to-noise ratio s");
    c_synth->add_option("--seed", synth.seed, "Random seed");
    c_synth->add_option("--partition", synth.partition, "Labels JSON (default: equal contiguous groups)");

    FitOpts fit;
    auto* c_fit = app.add_subcommand("fit", "Fit a factor model to a CSV");
    c_fit->add_option("--data", fit.data, "Input CSV with a header row")->required();
    c_fit->add_option("--m", fit.m, "Latent factors")->required();
    c_fit->add_option("--seed", fit.seed, "Initialization seed");
    c_fit->add_flag("--export-covariance", fit.export_covariance, "Write covariance.json");
    c_fit->add_flag("--dense-covariance", fit.dense_covariance, "Also write the dense covariance.csv");
    add_solver_flags(c_fit, fit.solver);

    BoundOpts bound;
    auto* c_bound = app.add_subcommand("bound", "Sample-complexity lower bound");
    c_bound->add_option("--m", bound.m, "Latent factors");
    c_bound->add_option("--snr", bound.snr, "Signal-to-noise ratio s");
    c_bound->add_option("--err", bound.err, "Target error probability");
    c_bound->add_option("--p", bound.p, "Evaluate at this p");
    c_bound->add_option("--n", bound.n, "Find the smallest p allowed for this sample budget");
    c_bound->add_option("--p-min", bound.p_min, "Sweep start");
    c_bound->add_option("--p-max", bound.p_max, "Sweep end; enables bound.csv");
    c_bound->add_option("--p-step", bound.p_step, "Sweep step (default m)");
    c_bound->add_flag("--bits", bound.bits, "Report log M in bits");

    auto* c_eval = app.add_subcommand("eval", "Evaluate a model or estimator");
    c_eval->require_subcommand(1);
    EvalNmiOpts eval_nmi;
    auto* c_nmi = c_eval->add_subcommand("nmi", "NMI of model clusters vs labels");
    c_nmi->add_option("--model", eval_nmi.model, "model.json")->required();
    c_nmi->add_option("--labels", eval_nmi.labels, "labels.json")->required();
    EvalNllOpts eval_nll;
    auto* c_nll = c_eval->add_subcommand("nll", "Held-out Gaussian negative log-likelihood");
    c_nll->add_option("--test", eval_nll.test, "Test CSV in original units")->required();
    c_nll->add_option("--estimator", eval_nll.estimator,
                      "factor | empirical | diagonal | shrinkage:<lambda> | ground_truth");
    c_nll->add_option("--model", eval_nll.model, "model.json (factor)");
    c_nll->add_option("--train", eval_nll.train, "Training CSV (empirical, diagonal, shrinkage)");
    c_nll->add_option("--spec", eval_nll.spec, "spec.json (ground_truth)");

    auto* c_exp = app.add_subcommand("experiment", "Synthetic sweeps");
    c_exp->require_subcommand(1);
    BlessingOpts blessing;
    auto* c_bless = c_exp->add_subcommand("blessing", "NMI vs dimension at fixed n");
    c_bless->add_option("--n", blessing.n, "Samples");
    c_bless->add_option("--m", blessing.m, "Latent factors");
    c_bless->add_option("--snr", blessing.snr, "Signal-to-noise ratio s");
    c_bless->add_option("--err", blessing.err, "Error probability for the bound boundary");
    c_bless->add_option("--log2-p-min", blessing.log2_p_min, "Smallest p as a power of two");
    c_bless->add_option("--log2-p-max", blessing.log2_p_max, "Largest p as a power of two");
    c_bless->add_option("--seeds", blessing.seeds, "Seeds per p");
    c_bless->add_option("--base-seed", blessing.base_seed, "Base seed");
    c_bless->add_option("--threads", blessing.threads, "Concurrent cells");
    add_solver_flags(c_bless, blessing.solver);
    CovarianceOpts covariance;
    auto* c_cov = c_exp->add_subcommand("covariance", "Held-out NLL vs n per estimator");
    c_cov->add_option("--m", covariance.m, "Latent factors");
    c_cov->add_option("--vars-per-factor", covariance.vars_per_factor, "Children per factor");
    c_cov->add_option("--snr", covariance.snr, "Signal-to-noise ratio s");
    c_cov->add_option("--log2-n-min", covariance.log2_n_min, "Smallest n as a power of two");
    c_cov->add_option("--log2-n-max", covariance.log2_n_max, "Largest n as a power of two");
    c_cov->add_option("--n-test", covariance.n_test, "Held-out samples per cell");
    c_cov->add_option("--seeds", covariance.seeds, "Seeds per n");
    c_cov->add_option("--shrinkage", covariance.shrinkage, "Fixed shrinkage intensity");
    c_cov->add_option("--base-seed", covariance.base_seed, "Base seed");
    c_cov->add_option("--threads", covariance.threads, "Concurrent cells");
    add_solver_flags(c_cov, covariance.solver);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_invalid;
    }

    auto dispatch = [&](const std::string& command, auto& opts, auto runner) {
        apply_config(opts, config_path, command);
        const Output out(out_dir);
        out.manifest(command, opts);
        return runner(opts, out);
    };

    try {
        if (c_synth->parsed()) return dispatch("synth", synth, run_synth);
        if (c_fit->parsed()) return dispatch("fit", fit, run_fit);
        if (c_bound->parsed()) return dispatch("bound", bound, run_bound);
        if (c_nmi->parsed()) return dispatch("eval nmi", eval_nmi, run_eval_nmi);
        if (c_nll->parsed()) return dispatch("eval nll", eval_nll, run_eval_nll);
        if (c_bless->parsed()) return dispatch("experiment blessing", blessing, run_blessing);
        if (c_cov->parsed()) return dispatch("experiment covariance", covariance, run_covariance);
    } catch (const nglf::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_invalid;
    } catch (const nglf::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const nglf::NotPositiveDefiniteError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_invalid;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return exit_numeric;
    }
    return exit_invalid;
}
