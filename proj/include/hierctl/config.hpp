#pragma once

#include <hierctl/carleman.hpp>
#include <hierctl/expr.hpp>
#include <hierctl/hum.hpp>
#include <hierctl/semilinear.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace hierctl {

struct NonlinearitySettings {
    std::string preset = "zero";
    double c = 0.0;
    double c2 = 0.0;
    std::optional<Expression> expr;
    std::optional<double> bound;
};

struct SolverSettings {
    double tol = 1e-12;
    int max_iter = 200;
    double damping = 1.0;
    int growth_limit = 10;
    double cg_tol = 1e-10;
    int cg_max_iter = 500;
    double inner_tol = 0.0;
    int inner_max_iter = 400;
    PenaltyMode mode = PenaltyMode::Quadratic;
    double outer_tol = 1e-10;
    int max_outer = 30;
    int samples = 50;
    int directions = 20;
    RatioVariant ratio_variant = RatioVariant::Plain;
    double bound_range = 5.0;
    int bound_points = 41;
};

/// Parsed, typed run configuration. `entries` keeps the normalized text of every key that
/// was set, for the manifest.
struct RunConfig {
    std::map<std::string, std::map<std::string, std::string>> entries;

    int dim = 1;
    std::array<double, 2> length{1.0, 1.0};
    std::array<int, 2> nx{16, 16};
    double horizon = 1.0;
    int nt = 16;

    Expression reaction = Expression::number(0.0);
    std::array<Expression, 2> drift{Expression::number(0.0), Expression::number(0.0)};

    std::optional<Box> leader_box;
    std::array<std::optional<Box>, 2> follower_box;
    std::array<std::optional<Box>, 2> target_box;
    std::optional<Box> omega0;
    std::optional<std::array<double, 2>> center;
    TargetCase target_case = TargetCase::Shared;
    std::optional<std::array<double, 2>> pair;
    std::optional<std::array<double, 2>> pair_centers;

    std::array<double, 2> alpha{0.0, 0.0};
    std::array<double, 2> mu{1.0, 1.0};
    double lambda = 2.0;
    double s = 0.0;
    std::vector<double> eps{1e-1, 1e-2, 1e-3, 1e-4, 1e-5};

    Expression initial = Expression::number(0.0);
    std::optional<Expression> free_initial;
    std::array<Expression, 2> target{Expression::number(0.0), Expression::number(0.0)};
    Expression leader = Expression::number(0.0);

    NonlinearitySettings nonlinearity;
    SolverSettings solver;
    std::uint64_t seed = 1;
};

namespace detail {

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string unquote(std::string v) {
    auto trim = [](std::string& s) {
        s.erase(0, s.find_first_not_of(" \t\r"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
    };
    trim(v);
    if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
        v = v.substr(1, v.size() - 2);
        trim(v);
    }
    return v;
}

class ConfigReader {
public:
    explicit ConfigReader(const boost::property_tree::ptree& root, RunConfig& cfg) : root_(root), cfg_(cfg) {}

    /// Raw string value, or nullopt. Records the key as known.
    std::optional<std::string> raw(const std::string& section, const std::string& key) {
        known_[section].insert(key);
        const boost::property_tree::ptree* node = section.empty() ? &root_ : nullptr;
        if (!node) {
            auto it = root_.find(section);
            if (it == root_.not_found()) return std::nullopt;
            node = &it->second;
        }
        auto v = node->get_child_optional(boost::property_tree::ptree::path_type(key, '\0'));
        if (!v || !v->empty()) return std::nullopt;
        return unquote(v->data());
    }

    std::optional<double> number(const std::string& section, const std::string& key) {
        auto r = raw(section, key);
        if (!r) return std::nullopt;
        double v = to_double(section, key, *r);
        record(section, key, fmt17(v));
        return v;
    }

    std::optional<int> integer(const std::string& section, const std::string& key) {
        auto r = raw(section, key);
        if (!r) return std::nullopt;
        long long v = 0;
        auto [p, ec] = std::from_chars(r->data(), r->data() + r->size(), v);
        if (ec != std::errc() || p != r->data() + r->size() || v < std::numeric_limits<int>::min() ||
            v > std::numeric_limits<int>::max())
            throw ConfigError(where(section, key) + ": expected an integer, got '" + *r + "'");
        record(section, key, std::to_string(v));
        return static_cast<int>(v);
    }

    std::optional<std::vector<double>> list(const std::string& section, const std::string& key) {
        auto r = raw(section, key);
        if (!r) return std::nullopt;
        std::string text = *r;
        for (char& c : text)
            if (c == ',') c = ' ';
        std::istringstream in(text);
        std::vector<double> out;
        std::string tok;
        std::string norm;
        while (in >> tok) {
            out.push_back(to_double(section, key, tok));
            norm += (norm.empty() ? "" : " ") + fmt17(out.back());
        }
        if (out.empty()) throw ConfigError(where(section, key) + ": empty list");
        record(section, key, norm);
        return out;
    }

    std::optional<Expression> expression(const std::string& section, const std::string& key, bool state = false) {
        auto r = raw(section, key);
        if (!r) return std::nullopt;
        try {
            Expression e = state ? parse_state_expr(*r) : parse_expr(*r);
            record(section, key, e.str());
            return e;
        } catch (const ParseError& e) {
            throw ConfigError(where(section, key) + ": " + e.what());
        }
    }

    std::optional<std::string> word(const std::string& section, const std::string& key,
                                    std::initializer_list<const char*> allowed) {
        auto r = raw(section, key);
        if (!r) return std::nullopt;
        for (const char* a : allowed)
            if (*r == a) {
                record(section, key, *r);
                return *r;
            }
        std::string list;
        for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
        throw ConfigError(where(section, key) + ": expected one of " + list + ", got '" + *r + "'");
    }

    /// Rejects sections and keys nobody asked for.
    void reject_unknown() const {
        for (const auto& [name, child] : root_) {
            if (child.empty()) {
                if (!known_.count("") || !known_.at("").count(name))
                    throw ConfigError("unknown top-level key '" + name + "'");
                continue;
            }
            auto it = known_.find(name);
            if (it == known_.end()) throw ConfigError("unknown section [" + name + "]");
            for (const auto& [key, v] : child)
                if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + name + "]");
        }
    }

    static std::string where(const std::string& section, const std::string& key) {
        return section.empty() ? key : "[" + section + "] " + key;
    }

private:
    double to_double(const std::string& section, const std::string& key, const std::string& text) const {
        double v = 0.0;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc() || p != text.data() + text.size() || !std::isfinite(v))
            throw ConfigError(where(section, key) + ": expected a finite number, got '" + text + "'");
        return v;
    }
    void record(const std::string& section, const std::string& key, std::string v) {
        cfg_.entries[section.empty() ? "run" : section][key] = std::move(v);
    }

    const boost::property_tree::ptree& root_;
    RunConfig& cfg_;
    std::map<std::string, std::set<std::string>> known_;
};

} // namespace detail

/// Parses INI text. Expressions and lists may be quoted. Boxes are "lo hi" in 1D and
/// "xlo xhi ylo yhi" in 2D, in absolute coordinates.
inline RunConfig parse_config(const std::string& text) {
    boost::property_tree::ptree root;
    try {
        std::istringstream in(text);
        boost::property_tree::ini_parser::read_ini(in, root);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError("malformed config at line " + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig c;
    detail::ConfigReader r(root, c);

    if (auto v = r.integer("", "seed")) {
        if (*v < 0) throw ConfigError("seed must be nonnegative");
        c.seed = static_cast<std::uint64_t>(*v);
    }

    if (auto v = r.integer("grid", "dim")) c.dim = *v;
    if (c.dim != 1 && c.dim != 2) throw ConfigError("[grid] dim must be 1 or 2");
    if (auto v = r.number("grid", "length_x")) c.length[0] = *v;
    if (auto v = r.number("grid", "length_y")) c.length[1] = *v;
    if (auto v = r.integer("grid", "nx")) c.nx[0] = *v;
    if (auto v = r.integer("grid", "ny")) c.nx[1] = *v;
    if (auto v = r.number("grid", "T")) c.horizon = *v;
    if (auto v = r.integer("grid", "nt")) c.nt = *v;

    if (auto v = r.expression("coefficients", "a")) c.reaction = *v;
    if (auto v = r.expression("coefficients", "bx")) c.drift[0] = *v;
    if (auto v = r.expression("coefficients", "by")) c.drift[1] = *v;

    const std::size_t box_len = c.dim == 1 ? 2 : 4;
    auto box = [&](const char* key) -> std::optional<Box> {
        auto v = r.list("geometry", key);
        if (!v) return std::nullopt;
        if (v->size() != box_len)
            throw ConfigError(std::string("[geometry] ") + key + ": expected " + std::to_string(box_len) + " numbers");
        Box b;
        b.lo[0] = (*v)[0];
        b.hi[0] = (*v)[1];
        if (c.dim == 2) {
            b.lo[1] = (*v)[2];
            b.hi[1] = (*v)[3];
        }
        for (int a = 0; a < c.dim; ++a)
            if (!(b.lo[a] < b.hi[a])) throw ConfigError(std::string("[geometry] ") + key + ": empty interval");
        return b;
    };
    c.leader_box = box("leader");
    c.follower_box = {box("follower1"), box("follower2")};
    c.target_box = {box("target1"), box("target2")};
    c.omega0 = box("omega0");
    auto pair_of = [&](const char* section, const char* key, std::size_t n) -> std::optional<std::array<double, 2>> {
        auto v = r.list(section, key);
        if (!v) return std::nullopt;
        if (v->size() != n)
            throw ConfigError(std::string("[") + section + "] " + key + ": expected " + std::to_string(n) + " numbers");
        return std::array<double, 2>{(*v)[0], n > 1 ? (*v)[1] : 0.0};
    };
    c.center = pair_of("geometry", "center", static_cast<std::size_t>(c.dim));
    if (auto v = r.word("geometry", "case", {"shared", "distinct"}))
        c.target_case = *v == "shared" ? TargetCase::Shared : TargetCase::Distinct;
    c.pair = pair_of("geometry", "pair", 2);
    c.pair_centers = pair_of("geometry", "pair_centers", 2);

    if (auto v = r.number("weights", "alpha1")) c.alpha[0] = *v;
    if (auto v = r.number("weights", "alpha2")) c.alpha[1] = *v;
    if (auto v = r.number("weights", "mu1")) c.mu[0] = *v;
    if (auto v = r.number("weights", "mu2")) c.mu[1] = *v;
    if (auto v = r.number("weights", "lambda")) c.lambda = *v;
    if (auto v = r.number("weights", "s")) c.s = *v;
    if (auto v = r.list("weights", "eps")) c.eps = *v;
    for (double e : c.eps)
        if (!(e > 0.0)) throw ConfigError("[weights] eps: every value must be positive");
    if (!(c.lambda > 0.0)) throw ConfigError("[weights] lambda must be positive");
    if (c.s < 0.0) throw ConfigError("[weights] s must be nonnegative (0 selects the default)");

    if (auto v = r.expression("data", "u0")) c.initial = *v;
    c.free_initial = r.expression("data", "ubar0");
    if (auto v = r.expression("data", "target1")) c.target[0] = *v;
    if (auto v = r.expression("data", "target2")) c.target[1] = *v;
    if (auto v = r.expression("data", "leader")) c.leader = *v;
    for (const Expression* e : {&c.initial, c.free_initial ? &*c.free_initial : &c.initial})
        if (e->uses(Var::T)) throw ConfigError("[data] initial data cannot depend on t");

    auto& nl = c.nonlinearity;
    if (auto v = r.word("nonlinearity", "preset", {"zero", "tanh", "grad-tanh", "expression"})) nl.preset = *v;
    if (auto v = r.number("nonlinearity", "c")) nl.c = *v;
    if (auto v = r.number("nonlinearity", "c2")) nl.c2 = *v;
    nl.expr = r.expression("nonlinearity", "expr", true);
    nl.bound = r.number("nonlinearity", "bound");
    if (nl.preset == "expression" && (!nl.expr || !nl.bound))
        throw ConfigError("[nonlinearity] preset = expression needs expr and bound");
    if (nl.preset != "expression" && nl.expr)
        throw ConfigError("[nonlinearity] expr is only used with preset = expression");

    auto& s = c.solver;
    if (auto v = r.number("solver", "tol")) s.tol = *v;
    if (auto v = r.integer("solver", "max_iter")) s.max_iter = *v;
    if (auto v = r.number("solver", "damping")) s.damping = *v;
    if (auto v = r.integer("solver", "growth_limit")) s.growth_limit = *v;
    if (auto v = r.number("solver", "cg_tol")) s.cg_tol = *v;
    if (auto v = r.integer("solver", "cg_max_iter")) s.cg_max_iter = *v;
    if (auto v = r.number("solver", "inner_tol")) s.inner_tol = *v;
    if (auto v = r.integer("solver", "inner_max_iter")) s.inner_max_iter = *v;
    if (auto v = r.word("solver", "mode", {"quadratic", "exact-norm"}))
        s.mode = *v == "quadratic" ? PenaltyMode::Quadratic : PenaltyMode::ExactNorm;
    if (auto v = r.number("solver", "outer_tol")) s.outer_tol = *v;
    if (auto v = r.integer("solver", "max_outer")) s.max_outer = *v;
    if (auto v = r.integer("solver", "samples")) s.samples = *v;
    if (auto v = r.integer("solver", "directions")) s.directions = *v;
    if (auto v = r.word("solver", "ratio_variant", {"plain", "divergence"}))
        s.ratio_variant = *v == "plain" ? RatioVariant::Plain : RatioVariant::Divergence;
    if (auto v = r.number("solver", "bound_range")) s.bound_range = *v;
    if (auto v = r.integer("solver", "bound_points")) s.bound_points = *v;
    if (!(s.damping > 0.0 && s.damping <= 1.0)) throw ConfigError("[solver] damping must lie in (0, 1]");
    if (!(s.tol > 0.0) || !(s.cg_tol > 0.0) || !(s.outer_tol > 0.0) || s.inner_tol < 0.0)
        throw ConfigError("[solver] tolerances must be positive");
    if (s.max_iter < 1 || s.cg_max_iter < 1 || s.inner_max_iter < 1 || s.max_outer < 1 || s.growth_limit < 1)
        throw ConfigError("[solver] iteration limits must be at least 1");
    if (s.samples < 0 || s.directions < 0) throw ConfigError("[solver] sample counts must be nonnegative");
    if (!(s.bound_range > 0.0) || s.bound_points < 2) throw ConfigError("[solver] bound sampling needs range > 0 and points >= 2");

    r.reject_unknown();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline Grid config_grid(const RunConfig& c) {
    return build_grid(c.dim, c.length, c.nx, c.horizon, c.nt);
}

/// Which geometry blocks a subcommand needs.
struct Requirements {
    bool problem = true;
    bool controllability = false;
    bool free_initial = false;
    bool carleman = false;
};

inline Requirements requirements_of(const std::string& sub) {
    Requirements r;
    if (sub == "carleman") {
        r.problem = false;
        r.carleman = true;
    } else if (sub == "null-control" || sub == "semilinear") {
        r.controllability = true;
    } else if (sub == "trajectory") {
        r.controllability = true;
        r.free_initial = true;
    } else if (sub == "observability") {
        r.controllability = true;
        r.carleman = true;
    }
    return r;
}

/// Samples the configured data onto the grid. Throws ConfigError for missing boxes.
inline ProblemSpec build_problem(const RunConfig& c, bool need_free_initial = false) {
    Grid g = config_grid(c);
    ProblemSpec s = make_spec(g);
    auto need = [](const std::optional<Box>& b, const char* name) -> const Box& {
        if (!b) throw ConfigError(std::string("[geometry] ") + name + " box is required");
        return *b;
    };
    s.leader_region = build_mask(g, need(c.leader_box, "leader"));
    s.follower_region = {build_mask(g, need(c.follower_box[0], "follower1")),
                         build_mask(g, need(c.follower_box[1], "follower2"))};
    s.target_region = {build_mask(g, need(c.target_box[0], "target1")),
                       build_mask(g, need(c.target_box[1], "target2"))};
    s.tracking_weight = c.alpha;
    s.control_weight = c.mu;
    s.coefficients.reaction = sample_field(g, c.reaction);
    for (int a = 0; a < g.dim; ++a) s.coefficients.drift[a] = sample_field(g, c.drift[a]);
    for (int i = 0; i < 2; ++i) s.target[i] = sample_field(g, c.target[i]);
    s.initial_state = sample_spatial(g, [&](double x, double y) { return c.initial(x, y); });
    clamp_boundary(g, s.initial_state);
    if (c.free_initial) {
        SpatialField f = sample_spatial(g, [&](double x, double y) { return (*c.free_initial)(x, y); });
        clamp_boundary(g, f);
        s.free_initial_state = std::move(f);
    } else if (need_free_initial) {
        throw ConfigError("[data] ubar0 is required");
    }
    return s;
}

inline SpaceTimeField build_leader(const RunConfig& c, const Grid& g) {
    SpaceTimeField f = sample_field(g, c.leader);
    clamp_boundary(g, f);
    return f;
}

inline CarlemanConfig carleman_config(const RunConfig& c) {
    CarlemanConfig cc;
    if (!c.center) throw ConfigError("[geometry] center is required");
    if (!c.omega0) throw ConfigError("[geometry] omega0 box is required");
    cc.center = *c.center;
    cc.lambda = c.lambda;
    cc.s = c.s;
    cc.target_case = c.target_case;
    cc.omega0 = *c.omega0;
    if (c.target_case == TargetCase::Distinct) {
        if (!c.pair || !c.pair_centers) throw ConfigError("[geometry] distinct case needs pair and pair_centers");
        cc.pair_lo = (*c.pair)[0];
        cc.pair_hi = (*c.pair)[1];
        cc.pair_centers = *c.pair_centers;
    }
    return cc;
}

inline Nonlinearity build_nonlinearity(const RunConfig& c) {
    const auto& nl = c.nonlinearity;
    if (nl.preset == "tanh") return Nonlinearity::tanh(nl.c);
    if (nl.preset == "grad-tanh") return Nonlinearity::grad_tanh(nl.c, nl.c2);
    if (nl.preset == "expression") return Nonlinearity::from_expression(*nl.expr, *nl.bound);
    return Nonlinearity::zero();
}

} // namespace hierctl
