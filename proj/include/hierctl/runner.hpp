#pragma once

#include <hierctl/carleman.hpp>
#include <hierctl/config.hpp>
#include <hierctl/hum.hpp>
#include <hierctl/io.hpp>
#include <hierctl/nash.hpp>
#include <hierctl/oracle.hpp>
#include <hierctl/parallel.hpp>
#include <hierctl/semilinear.hpp>

#include <iostream>

namespace hierctl {

inline constexpr const char* version = "0.1.0";

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{"nash",         "null-control",  "trajectory", "semilinear",
                                                "second-order", "observability", "carleman",   "oracle"};
    return names;
}

/// Everything a subcommand needs, built and validated before any solve.
struct PreparedRun {
    std::string subcommand;
    RunConfig config;
    int threads = 1;
    std::optional<ProblemSpec> spec;
    std::optional<CarlemanWeights> weights;
    std::optional<Nonlinearity> nonlinearity;
    SpaceTimeField leader;
};

inline PreparedRun prepare_run(const std::string& sub, RunConfig cfg, int threads) {
    if (std::find(subcommands().begin(), subcommands().end(), sub) == subcommands().end())
        throw ConfigError("unknown subcommand '" + sub + "'");
    if (threads < 1) throw ConfigError("threads must be at least 1");
    PreparedRun p;
    p.subcommand = sub;
    p.threads = threads;
    Requirements req = requirements_of(sub);
    Grid g = config_grid(cfg);
    p.leader = build_leader(cfg, g);
    if (req.problem) {
        ProblemSpec s = build_problem(cfg, req.free_initial);
        validate(s, req.controllability);
        p.spec = std::move(s);
    }
    if (req.carleman) {
        if (p.spec) check_case(*p.spec, cfg.target_case);
        p.weights = build_carleman_weights(g, carleman_config(cfg));
    }
    if (sub == "semilinear" || sub == "second-order") {
        Nonlinearity f = build_nonlinearity(cfg);
        if (sub == "second-order" && !f.has_second())
            throw Unsupported("second-order check needs a preset nonlinearity with analytic second derivatives");
        p.nonlinearity = std::move(f);
    }
    p.config = std::move(cfg);
    return p;
}

namespace detail {

inline FixedPointOptions fixed_point_options(const SolverSettings& s) {
    FixedPointOptions o;
    o.tol_rel = s.tol;
    o.max_iter = s.max_iter;
    o.damping = s.damping;
    o.growth_limit = s.growth_limit;
    return o;
}

inline HumOptions hum_options(const SolverSettings& s) {
    HumOptions o;
    o.cg_tol = s.cg_tol;
    o.max_iter = s.cg_max_iter;
    o.inner_tol = s.inner_tol;
    o.inner_max_iter = s.inner_max_iter;
    o.mode = s.mode;
    return o;
}

inline PicardOptions picard_options(const SolverSettings& s) {
    PicardOptions o;
    o.tol_rel = s.tol;
    o.max_iter = s.max_iter;
    o.damping = s.damping;
    o.growth_limit = s.growth_limit;
    return o;
}

inline double max_abs(const SpaceTimeField& f) {
    double m = 0.0;
    for (double v : f.values()) m = std::max(m, std::abs(v));
    return m;
}

inline nlohmann::ordered_json pair_json(std::array<double, 2> v) {
    return nlohmann::ordered_json::array({json_number(v[0]), json_number(v[1])});
}

inline Artifacts run_nash(const PreparedRun& p) {
    Dynamics d(*p.spec);
    const Grid& g = d.grid();
    NashSolution sol = solve_nash_fixed_point(d, p.leader, fixed_point_options(p.config.solver));
    std::array<double, 2> first_order = verify_first_order(d, sol);
    NashDiagnostics diag = diagnostics(d, 60, 25, p.config.seed);
    Artifacts a;
    CsvTable hist("iter,change_norm,residual_1,residual_2");
    for (std::size_t k = 0; k < sol.history.size(); ++k)
        hist.row(static_cast<int>(k + 1), sol.history[k], sol.residual_history[k][0], sol.residual_history[k][1]);
    a.add("nash_history.csv", hist.str());
    a.add("state.txt", dump_field(g, sol.state));
    for (int i = 0; i < 2; ++i) {
        a.add("control_" + std::to_string(i + 1) + ".txt", dump_field(g, sol.control[i]));
        a.add("adjoint_" + std::to_string(i + 1) + ".txt", dump_field(g, sol.adjoint[i]));
    }
    auto& s = a.summary;
    s["iterations"] = sol.iterations;
    s["first_order_residuals"] = pair_json(first_order);
    s["follower_costs"] = pair_json({follower_cost(d, 0, p.leader, sol.control[0], sol.control[1]),
                                     follower_cost(d, 1, p.leader, sol.control[0], sol.control[1])});
    s["state_max_abs"] = max_abs(sol.state);
    s["control_max_abs"] = pair_json({max_abs(sol.control[0]), max_abs(sol.control[1])});
    s["all_zero"] = max_abs(sol.state) == 0.0 && max_abs(sol.control[0]) == 0.0 && max_abs(sol.control[1]) == 0.0;
    s["m0_estimate"] = json_number(diag.m0_estimate);
    s["coercivity_margin"] = json_number(diag.coercivity_margin);
    s["contraction_factor"] = json_number(diag.contraction_factor);
    return a;
}

inline nlohmann::ordered_json sweep_summary(const std::vector<double>& eps, const std::vector<double>& norms) {
    bool decreasing = true;
    for (std::size_t k = 1; k < norms.size(); ++k)
        if (!(norms[k] < norms[k - 1])) decreasing = false;
    nlohmann::ordered_json s;
    s["eps"] = eps;
    s["strictly_decreasing"] = decreasing;
    s["drop_factor"] = norms.empty() ? nullptr : json_number(norms.front() / std::max(norms.back(), tiny));
    return s;
}

/// Sweep order follows the configured eps list; each point is independent.
inline Artifacts run_null_control(const PreparedRun& p, bool trajectory) {
    Dynamics d(*p.spec);
    const Grid& g = d.grid();
    const auto& eps = p.config.eps;
    HumOptions opt = hum_options(p.config.solver);
    std::vector<std::optional<TrajectoryResult>> res(eps.size());
    parallel_for(static_cast<int>(eps.size()), p.threads, [&](int k) {
        if (trajectory) {
            res[k] = control_to_trajectory(d, eps[k], opt);
        } else {
            TrajectoryResult t;
            t.hum = minimize_G(d, eps[k], opt);
            t.state = t.hum.nash.state;
            t.mismatch = t.hum.terminal_norm;
            res[k] = std::move(t);
        }
    });
    Artifacts a;
    CsvTable sweep("eps,terminal_norm,cg_iters,f_norm,J_leader");
    CsvTable cg("eps,iter,residual,raw_residual");
    std::vector<double> norms;
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < eps.size(); ++k) {
        const TrajectoryResult& r = *res[k];
        sweep.row(eps[k], r.mismatch, r.hum.cg_iterations, r.hum.control_norm, r.hum.leader_cost);
        for (std::size_t j = 0; j < r.hum.cg_history.size(); ++j)
            cg.row(eps[k], static_cast<int>(j), r.hum.cg_history[j], r.hum.cg_raw_history[j]);
        norms.push_back(r.mismatch);
        nlohmann::ordered_json pt;
        pt["eps"] = eps[k];
        pt["terminal_norm"] = json_number(r.mismatch);
        pt["cg_iterations"] = r.hum.cg_iterations;
        pt["plug_back"] = json_number(r.hum.plug_back);
        pt["follower_residuals"] = pair_json(r.hum.nash.residuals);
        points.push_back(pt);
    }
    a.add("sweep.csv", sweep.str());
    a.add("cg_history.csv", cg.str());
    const TrajectoryResult& last = *res.back();
    a.add("leader.txt", dump_field(g, last.hum.control));
    a.add("state.txt", dump_field(g, last.state));
    if (trajectory) a.add("free_trajectory.txt", dump_field(g, last.free_trajectory));
    a.summary = sweep_summary(eps, norms);
    a.summary["mode"] = to_string(p.config.solver.mode);
    a.summary["points"] = points;
    if (!trajectory) {
        SpaceTimeField free = d.state().forward(SpaceTimeField(g), d.spec().initial_state);
        a.summary["uncontrolled_terminal_norm"] = norm_h(g, free.level(g.nt));
    }
    return a;
}

inline Artifacts run_semilinear(const PreparedRun& p) {
    ProblemSpec spec = *p.spec;
    const Grid& g = spec.grid;
    if (!spec.free_initial_state) spec.free_initial_state = SpatialField(g.nodes(), 0.0);
    const Nonlinearity& f = *p.nonlinearity;
    const auto& eps = p.config.eps;
    const auto& sv = p.config.solver;
    BoundReport bound = sample_bound(f, sv.bound_range, sv.bound_points, g.dim);
    std::vector<std::optional<SemilinearControlResult>> res(eps.size());
    parallel_for(static_cast<int>(eps.size()), p.threads, [&](int k) {
        res[k] = semilinear_null_control(spec, f, eps[k], sv.outer_tol, sv.max_outer, hum_options(sv), picard_options(sv));
    });
    Artifacts a;
    CsvTable sweep("eps,outer_iters,terminal_norm,f_norm");
    CsvTable outer("eps,iter,change_norm");
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < eps.size(); ++k) {
        const auto& r = *res[k];
        sweep.row(eps[k], r.outer_iterations, r.mismatch, r.hum.control_norm);
        for (std::size_t j = 0; j < r.outer_history.size(); ++j) outer.row(eps[k], static_cast<int>(j + 1), r.outer_history[j]);
        nlohmann::ordered_json pt;
        pt["eps"] = eps[k];
        pt["outer_iterations"] = r.outer_iterations;
        pt["terminal_mismatch"] = json_number(r.mismatch);
        pt["finite"] = std::isfinite(r.mismatch);
        points.push_back(pt);
    }
    a.add("semilinear_sweep.csv", sweep.str());
    a.add("outer_history.csv", outer.str());
    a.add("state.txt", dump_field(g, res.back()->equilibrium.state));
    a.add("leader.txt", dump_field(g, res.back()->hum.control));
    auto& s = a.summary;
    s["nonlinearity"] = f.name;
    s["declared_bound"] = f.bound;
    s["sampled_max_du"] = bound.max_du;
    s["sampled_max_dp"] = bound.max_dp;
    s["bound_holds"] = bound.within_bound;
    s["points"] = points;
    return a;
}

inline Artifacts run_second_order(const PreparedRun& p) {
    const ProblemSpec& spec = *p.spec;
    const Grid& g = spec.grid;
    const Nonlinearity& f = *p.nonlinearity;
    QuasiEquilibrium q = solve_quasi_equilibrium(spec, f, p.leader, picard_options(p.config.solver));
    QuasiEquilibriumResidual res = quasi_equilibrium_residual(spec, f, p.leader, q);
    SufficiencyReport rep = verify_equilibrium_sufficiency(spec, f, q, p.config.solver.directions, p.config.seed, p.threads);
    Artifacts a;
    CsvTable t("follower,direction,form");
    for (int i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < rep.forms[i].size(); ++k) t.row(i + 1, static_cast<int>(k), rep.forms[i][k]);
    a.add("second_order.csv", t.str());
    a.add("state.txt", dump_field(g, q.state));
    auto& s = a.summary;
    s["nonlinearity"] = f.name;
    s["picard_iterations"] = q.iterations;
    s["state_residual"] = res.state;
    s["adjoint_residuals"] = pair_json(res.adjoint);
    s["directions"] = p.config.solver.directions;
    s["min_form"] = pair_json(rep.min_form);
    s["coefficient"] = pair_json(rep.coefficient);
    s["all_positive"] = rep.verified;
    s["outside_dimension_range"] = rep.outside_dimension_range;
    return a;
}

inline Artifacts run_observability(const PreparedRun& p) {
    Dynamics d(*p.spec);
    const auto& sv = p.config.solver;
    ObservabilityReport rep = estimate_observability(d, *p.weights, sv.samples, p.config.seed, p.threads, sv.tol,
                                                     sv.inner_max_iter);
    ProblemSpec wide = *p.spec;
    wide.leader_region = full_mask(wide.grid);
    ObservabilityReport full = estimate_observability(Dynamics(wide), *p.weights, sv.samples, p.config.seed, p.threads,
                                                      sv.tol, sv.inner_max_iter);
    Artifacts a;
    CsvTable t("sample,ratio,denominator");
    for (std::size_t k = 0; k < rep.samples.size(); ++k) t.row(static_cast<int>(k), rep.samples[k].ratio, rep.samples[k].denominator);
    a.add("observability.csv", t.str());
    auto& s = a.summary;
    s["samples"] = sv.samples;
    s["zero_samples"] = rep.zero_samples;
    s["max_ratio"] = json_number(rep.max_ratio);
    s["median_ratio"] = json_number(rep.median_ratio);
    s["all_finite"] = rep.all_finite;
    s["all_denominators_positive"] = rep.all_denominators_positive;
    s["full_domain_max_ratio"] = json_number(full.max_ratio);
    s["full_domain_not_larger"] = full.max_ratio <= rep.max_ratio;
    s["lambda"] = p.weights->lambda;
    s["s"] = p.weights->s;
    return a;
}

inline Artifacts run_carleman(const PreparedRun& p) {
    const CarlemanWeights& w = *p.weights;
    const Grid& g = w.grid;
    const auto& sv = p.config.solver;
    WeightPropertyReport props = check_weight_properties(w, std::max(sv.samples, 1), p.config.seed);
    auto samples = random_carleman_samples(g, sv.samples, p.config.seed, sv.ratio_variant);
    CarlemanReport rep = carleman_ratio_report(w, samples, sv.ratio_variant, p.threads);
    Artifacts a;
    CsvTable t("sample,lhs,rhs,ratio");
    for (std::size_t k = 0; k < rep.samples.size(); ++k)
        t.row(static_cast<int>(k), rep.samples[k].lhs, rep.samples[k].rhs, rep.samples[k].ratio);
    a.add("carleman_ratio.csv", t.str());
    a.add("theta.txt", dump_field(g, w.theta));
    a.add("xi.txt", dump_field(g, w.sharp.xi));
    a.add("alpha.txt", dump_field(g, w.sharp.alpha));
    auto& s = a.summary;
    s["case"] = to_string(w.target_case);
    s["lambda"] = w.lambda;
    s["s"] = w.s;
    s["variant"] = sv.ratio_variant == RatioVariant::Plain ? "plain" : "divergence";
    s["gradient_rel_error"] = props.gradient_rel_error;
    s["gradient_ok"] = props.gradient_ok;
    s["max_xi_inverse"] = props.max_xi_inverse;
    s["xi_inverse_ok"] = props.xi_inverse_ok;
    s["strict_time_ratio"] = props.strict_time_ratio;
    s["strict_time_ok"] = props.strict_time_ok;
    s["relaxed_time_ratio"] = props.relaxed_time_ratio;
    s["relaxed_time_ok"] = props.relaxed_time_ok;
    s["min_interior_gradient"] = props.min_interior_gradient;
    s["ratio_samples"] = static_cast<int>(rep.samples.size());
    s["skipped"] = rep.skipped;
    s["max_ratio"] = json_number(rep.max_ratio);
    s["median_ratio"] = json_number(rep.median_ratio);
    s["all_finite_positive"] = rep.all_finite_positive;
    return a;
}

inline Artifacts run_oracle(const PreparedRun& p) {
    const ProblemSpec& spec = *p.spec;
    const Grid& g = spec.grid;
    Dynamics d(spec);
    std::mt19937_64 rng(p.config.seed);
    Artifacts a;
    CsvTable t("check,value,tolerance,pass");
    nlohmann::ordered_json checks = nlohmann::ordered_json::array();
    bool all = true;
    auto record = [&](const std::string& name, double value, double tol) {
        bool ok = std::isfinite(value) && value <= tol;
        all = all && ok;
        t.row(name, value, tol, ok ? "1" : "0");
        checks.push_back({{"check", name}, {"value", json_number(value)}, {"tolerance", tol}, {"pass", ok}});
    };
    record("transpose_contract", transpose_contract(spec), 0.0);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        SpaceTimeField s = random_field(g, rng), q = random_field(g, rng);
        SpatialField w0 = random_spatial(g, rng), pT = random_spatial(g, rng);
        worst = std::max(worst, duality_defect(d.state(), s, w0, q, pT));
    }
    record("duality_identity", worst, 1e-9);
    try {
        NashSolution dense = dense_oracle_nash(d, p.leader);
        NashSolution it = solve_nash_fixed_point(d, p.leader, fixed_point_options(p.config.solver));
        record("nash_dense_vs_fixed_point", relative_distance(g, it.state, dense.state), 1e-8);
        auto fo = verify_first_order(d, it);
        record("nash_first_order", std::max(fo[0], fo[1]), 1e-8);
        SpatialField psi0 = random_spatial(g, rng);
        CoupledAdjointState dc = dense_oracle_coupled_adjoint(d, psi0);
        CoupledAdjointState ic = solve_coupled_adjoint(d, psi0, 1e-13, p.config.solver.inner_max_iter);
        record("coupled_adjoint_dense_vs_iterative", relative_distance(g, ic.psi, dc.psi), 1e-8);
    } catch (const TooLarge& e) {
        a.summary["dense_skipped"] = e.what();
    }
    a.add("oracle.csv", t.str());
    a.summary["checks"] = checks;
    a.summary["all_pass"] = all;
    return a;
}

} // namespace detail

/// Runs a prepared subcommand and returns its artifacts without touching the filesystem.
inline Artifacts execute(const PreparedRun& p) {
    const std::string& sub = p.subcommand;
    if (sub == "nash") return detail::run_nash(p);
    if (sub == "null-control") return detail::run_null_control(p, false);
    if (sub == "trajectory") return detail::run_null_control(p, true);
    if (sub == "semilinear") return detail::run_semilinear(p);
    if (sub == "second-order") return detail::run_second_order(p);
    if (sub == "observability") return detail::run_observability(p);
    if (sub == "carleman") return detail::run_carleman(p);
    return detail::run_oracle(p);
}

inline nlohmann::ordered_json manifest(const PreparedRun& p) {
    nlohmann::ordered_json m;
    m["tool"] = "hierctl";
    m["version"] = version;
    m["subcommand"] = p.subcommand;
    m["seed"] = p.config.seed;
    m["threads"] = p.threads;
#ifdef __VERSION__
    m["compiler"] = __VERSION__;
#endif
    m["cxx_standard"] = static_cast<long>(__cplusplus);
    m["config"] = p.config.entries;
    return m;
}

struct RunRequest {
    std::string subcommand;
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

enum ExitCode { ExitOk = 0, ExitUsage = 1, ExitInvalid = 2, ExitNumerical = 3 };

inline int classify(const Error& e) {
    static const std::set<std::string> invalid{"ConfigError",  "InvalidGrid",   "EmptyMask",   "ShapeMismatch",
                                               "InvalidSpec",  "InvalidCenter", "CaseMismatch", "Unsupported",
                                               "ParseError",   "TooLarge"};
    return invalid.count(e.kind()) ? ExitInvalid : ExitNumerical;
}

/// Loads, validates, runs and writes. On failure only error.json is written.
inline int run(const RunRequest& req, std::ostream& log = std::cerr) {
    namespace fs = std::filesystem;
    const fs::path out(req.out_dir);
    std::string stage = "validation";
    auto fail = [&](const std::string& kind, const std::string& message, int code) {
        nlohmann::ordered_json e;
        e["error"] = kind;
        e["message"] = message;
        e["stage"] = stage;
        e["subcommand"] = req.subcommand;
        e["exit_code"] = code;
        try {
            fs::create_directories(out);
            write_text(out / "error.json", e.dump(2) + "\n");
        } catch (const std::exception& w) {
            log << "hierctl: could not write error record: " << w.what() << "\n";
        }
        log << "hierctl: " << kind << ": " << message << "\n";
        return code;
    };
    try {
        RunConfig cfg = load_config(req.config_path);
        if (req.seed) cfg.seed = *req.seed;
        PreparedRun prepared = prepare_run(req.subcommand, std::move(cfg), req.threads);
        stage = "solve";
        Artifacts a = execute(prepared);
        stage = "output";
        fs::create_directories(out);
        fs::remove(out / "error.json");
        write_text(out / "manifest.json", manifest(prepared).dump(2) + "\n");
        for (const auto& [name, content] : a.files) write_text(out / name, content);
        nlohmann::ordered_json summary;
        summary["subcommand"] = req.subcommand;
        summary["status"] = "ok";
        summary.update(a.summary);
        write_text(out / "summary.json", summary.dump(2) + "\n");
        return ExitOk;
    } catch (const MaxIterations& e) {
        return fail(e.kind(), std::string(e.what()) + " (best residual " + csv_cell(e.best_residual()) + ")",
                    ExitNumerical);
    } catch (const Error& e) {
        return fail(e.kind(), e.what(), classify(e));
    } catch (const std::exception& e) {
        return fail("InternalError", e.what(), ExitNumerical);
    }
}

} // namespace hierctl
