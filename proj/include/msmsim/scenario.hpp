#pragma once

// Scenario definition: the full data-generating design for one simulation.
// Scenarios are written in a line-oriented text format with [section]
// headers and key = value pairs, parsed strictly (unknown keys are errors)
// and serializable back to canonical text that round-trips structurally.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <msmsim/copula.hpp>
#include <msmsim/errors.hpp>
#include <msmsim/expr.hpp>
#include <msmsim/rng.hpp>

namespace msmsim {

// ---------------------------------------------------------------------------
// Distributions for generating variables
// ---------------------------------------------------------------------------

enum class dist_kind { constant, bernoulli, normal, uniform };

inline const char* to_string(dist_kind k) {
    switch (k) {
        case dist_kind::constant: return "constant";
        case dist_kind::bernoulli: return "bernoulli";
        case dist_kind::normal: return "normal";
        case dist_kind::uniform: return "uniform";
    }
    return "?";
}

struct distribution_spec {
    dist_kind kind = dist_kind::constant;
    compiled_expr p1;  // constant value / bernoulli p / normal mean / uniform lo
    compiled_expr p2;  // normal sd / uniform hi

    // Number of uniforms consumed per sample; fixed per kind so counter
    // layouts are static.
    int draws() const noexcept { return kind == dist_kind::constant ? 0 : 1; }

    // Sample using draw counter `counter` of `key` (not consumed for
    // constants).  Parameter expressions are evaluated in `ctx` and
    // validated; violations raise simulation_error.
    double sample(const eval_context& ctx, const rng_key& key,
                  std::uint64_t counter) const {
        switch (kind) {
            case dist_kind::constant: {
                const double v = p1.evaluate(ctx);
                if (!std::isfinite(v))
                    throw simulation_error("constant(" + p1.source() +
                                           ") evaluated to a non-finite value");
                return v;
            }
            case dist_kind::bernoulli: {
                const double p = p1.evaluate(ctx);
                if (!(p >= 0.0 && p <= 1.0))
                    throw simulation_error("bernoulli(" + p1.source() +
                                           ") evaluated outside [0,1]");
                return key.bernoulli(counter, p) ? 1.0 : 0.0;
            }
            case dist_kind::normal: {
                const double m = p1.evaluate(ctx);
                const double s = p2.evaluate(ctx);
                if (!std::isfinite(m) || !(s >= 0.0) || !std::isfinite(s))
                    throw simulation_error("normal(" + p1.source() + ", " + p2.source() +
                                           ") has invalid parameters");
                return m + s * key.normal(counter);
            }
            case dist_kind::uniform: {
                const double lo = p1.evaluate(ctx);
                const double hi = p2.evaluate(ctx);
                if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi))
                    throw simulation_error("uniform(" + p1.source() + ", " + p2.source() +
                                           ") has invalid parameters");
                return lo + (hi - lo) * key.uniform_open(counter);
            }
        }
        throw simulation_error("unknown distribution kind");
    }
};

// ---------------------------------------------------------------------------
// Scenario building blocks
// ---------------------------------------------------------------------------

struct baseline_var {
    std::string name;
    bool shared = false;  // shared across clones (available to the marginal model)
    distribution_spec dist;
};

struct series_var {
    std::string name;
    distribution_spec dist;
    double default_value = 0.0;  // value of lags reaching before visit 0
};

struct msm_term {
    std::string name;
    double coef = 0.0;
    compiled_expr expr;
};

enum class msm_link { logit, identity };

inline const char* to_string(msm_link l) {
    return l == msm_link::logit ? "logit" : "identity";
}

// Marginal structural model for a discrete-time hazard: at event visit
// j = 1..K the hazard is link^-1(intercept[j-1] + sum coef_t * expr_t).
// With the identity link the value may leave [0,1]; the engine enforces the
// validity policy at run time.
struct msm_spec {
    msm_link link = msm_link::logit;
    std::vector<double> intercepts;
    std::vector<msm_term> terms;

    double linear_predictor(int event_visit, const eval_context& ctx) const {
        double eta = intercepts[static_cast<std::size_t>(event_visit) - 1];
        for (const auto& t : terms) eta += t.coef * t.expr.evaluate(ctx);
        return eta;
    }
    double hazard(int event_visit, const eval_context& ctx) const {
        const double eta = linear_predictor(event_visit, ctx);
        return link == msm_link::logit ? expit(eta) : eta;
    }
};

enum class engine_mode { extended, generalised };

inline const char* to_string(engine_mode m) {
    return m == engine_mode::extended ? "extended" : "generalised";
}

enum class competing_variant { none, subdistribution, cause_specific };

inline const char* to_string(competing_variant v) {
    switch (v) {
        case competing_variant::none: return "none";
        case competing_variant::subdistribution: return "subdistribution";
        case competing_variant::cause_specific: return "cause_specific";
    }
    return "?";
}

struct competing_spec {
    competing_variant variant = competing_variant::none;
    // subdistribution: probability of remaining free of the competing event.
    distribution_spec z_model;
    // cause_specific: a full marginal model / risk score / copula triple for
    // the competing event.
    msm_spec msm;
    compiled_expr risk_score;
    copula_spec copula;
};

struct refresh_spec {
    bool enabled = false;
    double threshold = 0.1;  // rebuild when distinct donors fall below threshold*m
    int clones = 100000;     // ensemble size after the rebuild
};

struct scenario {
    int schema_version = 1;
    int visits = 0;       // number of failure opportunities; events occur at 1..visits
    int clones = 1000;    // m: ensemble size per individual
    int individuals = 1000;

    std::vector<baseline_var> baseline;
    std::vector<series_var> series;
    distribution_spec treatment_model;  // bernoulli
    double treatment_default = 0.0;
    std::vector<double> intervention;   // fixed regime a_0..a_{visits-1}; empty = none

    msm_spec msm;
    compiled_expr risk_score;
    copula_spec copula;

    engine_mode mode = engine_mode::extended;
    refresh_spec refresh;
    competing_spec competing;

    std::string raw_text;  // original file text (digests); not compared

    // Slot lookups (declaration order).
    int shared_count() const {
        int n = 0;
        for (const auto& v : baseline) n += v.shared ? 1 : 0;
        return n;
    }
    int clone_count() const { return static_cast<int>(baseline.size()) - shared_count(); }
    int series_count() const { return static_cast<int>(series.size()); }
};

// ---------------------------------------------------------------------------
// Environments for each expression site
// ---------------------------------------------------------------------------

namespace detail {

inline void add_baselines(expr_env& env, const std::vector<baseline_var>& baseline,
                          std::size_t upto) {
    int xs = 0, bs = 0;
    for (std::size_t i = 0; i < upto; ++i) {
        if (baseline[i].shared) env.add_baseline_shared(baseline[i].name, xs++);
        else env.add_baseline_clone(baseline[i].name, bs++);
    }
}

} // namespace detail

// Site environments.  `baseline_upto`/`series_upto` restrict scope to
// earlier declarations while parsing definitions; pass SIZE_MAX elsewhere.
inline expr_env env_for_baseline(const scenario& s, std::size_t upto) {
    expr_env env;
    detail::add_baselines(env, s.baseline, std::min(upto, s.baseline.size()));
    return env;
}

inline expr_env env_for_series(const scenario& s, std::size_t defining_slot) {
    expr_env env;
    detail::add_baselines(env, s.baseline, s.baseline.size());
    for (std::size_t i = 0; i < s.series.size(); ++i)
        env.add_series(s.series[i].name, static_cast<int>(i),
                       i < defining_slot ? 0 : 1);
    env.add_treatment("A", 1);
    return env;
}

inline expr_env env_for_treatment(const scenario& s) {
    expr_env env;
    detail::add_baselines(env, s.baseline, s.baseline.size());
    for (std::size_t i = 0; i < s.series.size(); ++i)
        env.add_series(s.series[i].name, static_cast<int>(i), 0);
    env.add_treatment("A", 1);
    return env;
}

// The marginal model may reference only shared baselines, the treatment
// path (current visit included), and k.
inline expr_env env_for_msm(const scenario& s) {
    expr_env env;
    int xs = 0;
    for (const auto& v : s.baseline)
        if (v.shared) env.add_baseline_shared(v.name, xs++);
    env.add_treatment("A", 0);
    return env;
}

// Risk scores and competing-event inputs see everything up to the current
// visit.
inline expr_env env_for_risk_score(const scenario& s) {
    expr_env env;
    detail::add_baselines(env, s.baseline, s.baseline.size());
    for (std::size_t i = 0; i < s.series.size(); ++i)
        env.add_series(s.series[i].name, static_cast<int>(i), 0);
    env.add_treatment("A", 0);
    return env;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

struct line_cursor {
    std::string text;
    int number = 0;
};

[[noreturn]] inline void fail_line(const line_cursor& lc, const std::string& msg) {
    throw config_error("line " + std::to_string(lc.number) + ": " + msg);
}

inline std::string strip(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_number(const line_cursor& lc, const std::string& s) {
    const std::string t = strip(s);
    if (t.empty()) fail_line(lc, "expected a number");
    try {
        std::size_t used = 0;
        const double v = std::stod(t, &used);
        if (used != t.size()) fail_line(lc, "malformed number '" + t + "'");
        if (!std::isfinite(v)) fail_line(lc, "number must be finite");
        return v;
    } catch (const config_error&) {
        throw;
    } catch (const std::exception&) {
        fail_line(lc, "malformed number '" + t + "'");
    }
}

inline int parse_int(const line_cursor& lc, const std::string& s) {
    const double v = parse_number(lc, s);
    if (v != std::floor(v) || std::fabs(v) > 2e9)
        fail_line(lc, "expected an integer, got '" + strip(s) + "'");
    return static_cast<int>(v);
}

inline bool parse_bool(const line_cursor& lc, const std::string& s) {
    const std::string t = strip(s);
    if (t == "true") return true;
    if (t == "false") return false;
    fail_line(lc, "expected true or false, got '" + t + "'");
}

// Split "fn(arg1, arg2)" at top-level commas.
inline bool split_call(const std::string& s, std::string& fn,
                       std::vector<std::string>& args) {
    const std::string t = strip(s);
    const auto open = t.find('(');
    if (open == std::string::npos || t.back() != ')') return false;
    fn = strip(t.substr(0, open));
    if (fn.empty()) return false;
    for (char c : fn)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    args.clear();
    int depth = 0;
    std::string curr;
    for (std::size_t i = open + 1; i + 1 < t.size(); ++i) {
        const char c = t[i];
        if (c == '(' || c == '[') ++depth;
        if (c == ')' || c == ']') --depth;
        if (depth < 0) return false;
        if (c == ',' && depth == 0) {
            args.push_back(strip(curr));
            curr.clear();
        } else {
            curr += c;
        }
    }
    if (depth != 0) return false;
    if (!strip(curr).empty() || !args.empty()) args.push_back(strip(curr));
    return true;
}

inline distribution_spec parse_distribution(const line_cursor& lc, const std::string& s,
                                            const expr_env& env) {
    std::string fn;
    std::vector<std::string> args;
    if (!split_call(s, fn, args))
        fail_line(lc, "expected a distribution like normal(<mean>, <sd>), got '" +
                          strip(s) + "'");
    auto expr_arg = [&](std::size_t i) {
        try {
            return compiled_expr::parse(args[i], env);
        } catch (const config_error& e) {
            fail_line(lc, e.what());
        }
    };
    distribution_spec d;
    if (fn == "constant") {
        if (args.size() != 1) fail_line(lc, "constant() takes 1 argument");
        d.kind = dist_kind::constant;
        d.p1 = expr_arg(0);
    } else if (fn == "bernoulli") {
        if (args.size() != 1) fail_line(lc, "bernoulli() takes 1 argument");
        d.kind = dist_kind::bernoulli;
        d.p1 = expr_arg(0);
    } else if (fn == "normal") {
        if (args.size() != 2) fail_line(lc, "normal() takes 2 arguments");
        d.kind = dist_kind::normal;
        d.p1 = expr_arg(0);
        d.p2 = expr_arg(1);
    } else if (fn == "uniform") {
        if (args.size() != 2) fail_line(lc, "uniform() takes 2 arguments");
        d.kind = dist_kind::uniform;
        d.p1 = expr_arg(0);
        d.p2 = expr_arg(1);
    } else {
        fail_line(lc, "unknown distribution '" + fn + "'");
    }
    return d;
}

inline bool valid_identifier(const std::string& s) {
    if (s.empty()) return false;
    if (!std::isalpha(static_cast<unsigned char>(s[0])) && s[0] != '_') return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

inline std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace detail

// Raw parsed shape: ordered key/value pairs per section occurrence.
class scenario_parser {
public:
    static scenario parse_text(const std::string& text);
};

inline scenario parse_scenario(const std::string& text) {
    return scenario_parser::parse_text(text);
}

inline scenario scenario_parser::parse_text(const std::string& text) {
    using detail::fail_line;
    using detail::line_cursor;
    using detail::strip;

    scenario sc;
    sc.raw_text = text;

    struct kv {
        std::string key, value;
        line_cursor lc;
    };
    struct section {
        std::string name;
        std::vector<kv> items;
        line_cursor lc;
    };
    std::vector<section> sections;
    bool have_schema = false;

    {
        std::istringstream in(text);
        std::string raw;
        int lineno = 0;
        while (std::getline(in, raw)) {
            ++lineno;
            const auto hash = raw.find('#');
            if (hash != std::string::npos) raw.erase(hash);
            const std::string line = strip(raw);
            if (line.empty()) continue;
            line_cursor lc{line, lineno};
            if (line.front() == '[') {
                if (line.back() != ']') fail_line(lc, "unterminated section header");
                const std::string name = strip(line.substr(1, line.size() - 2));
                if (name.empty()) fail_line(lc, "empty section name");
                sections.push_back({name, {}, lc});
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                fail_line(lc, "expected key = value or [section]");
            const std::string key = strip(line.substr(0, eq));
            const std::string value = strip(line.substr(eq + 1));
            if (key.empty()) fail_line(lc, "empty key");
            if (value.empty()) fail_line(lc, "empty value for '" + key + "'");
            if (sections.empty()) {
                if (key == "schema_version") {
                    if (have_schema) fail_line(lc, "duplicate schema_version");
                    if (detail::parse_int(lc, value) != 1)
                        fail_line(lc, "unsupported schema_version (expected 1)");
                    have_schema = true;
                    continue;
                }
                fail_line(lc, "key '" + key + "' appears before any section");
            }
            sections.back().items.push_back({key, value, lc});
        }
    }

    if (!have_schema)
        throw config_error("scenario must declare schema_version = 1 before any section");

    auto find_sections = [&](const std::string& name) {
        std::vector<const section*> out;
        for (const auto& s : sections)
            if (s.name == name) out.push_back(&s);
        return out;
    };
    auto single_section = [&](const std::string& name, bool required) -> const section* {
        auto v = find_sections(name);
        if (v.size() > 1)
            throw config_error("duplicate section [" + name + "] (line " +
                               std::to_string(v[1]->lc.number) + ")");
        if (v.empty()) {
            if (required) throw config_error("missing required section [" + name + "]");
            return nullptr;
        }
        return v[0];
    };

    const std::vector<std::string> known = {
        "simulation",      "baseline.shared",     "baseline.clone",
        "series",          "treatment",           "msm",
        "risk_score",      "copula",              "engine",
        "competing",       "competing.msm",       "competing.risk_score",
        "competing.copula"};
    for (const auto& s : sections)
        if (std::find(known.begin(), known.end(), s.name) == known.end())
            fail_line(s.lc, "unknown section [" + s.name + "]");

    // --- [simulation] ---
    {
        const section* sec = single_section("simulation", true);
        for (const auto& item : sec->items) {
            if (item.key == "visits") sc.visits = detail::parse_int(item.lc, item.value);
            else if (item.key == "clones") sc.clones = detail::parse_int(item.lc, item.value);
            else if (item.key == "individuals")
                sc.individuals = detail::parse_int(item.lc, item.value);
            else fail_line(item.lc, "unknown key '" + item.key + "' in [simulation]");
        }
        if (sc.visits < 1) throw config_error("[simulation] visits must be >= 1");
        if (sc.clones < 2) throw config_error("[simulation] clones must be >= 2");
        if (sc.individuals < 1) throw config_error("[simulation] individuals must be >= 1");
    }

    auto parse_regime_values = [&](const line_cursor& lc, const std::string& value) {
        const std::string v = detail::strip(value);
        std::vector<double> out;
        if (v == "all0") out.assign(static_cast<std::size_t>(sc.visits), 0.0);
        else if (v == "all1") out.assign(static_cast<std::size_t>(sc.visits), 1.0);
        else {
            std::string item;
            std::istringstream ss(v);
            while (std::getline(ss, item, ',')) {
                const double a = detail::parse_number(lc, item);
                if (a != 0.0 && a != 1.0)
                    fail_line(lc, "intervention values must be 0 or 1");
                out.push_back(a);
            }
            if (static_cast<int>(out.size()) != sc.visits)
                fail_line(lc, "intervention must list one value per visit (" +
                                  std::to_string(sc.visits) + "), got " +
                                  std::to_string(out.size()));
        }
        return out;
    };

    // --- baseline variables (shared first, then clone, in file order) ---
    auto parse_baseline_section = [&](const char* name, bool shared) {
        if (const section* sec = single_section(name, false)) {
            for (const auto& item : sec->items) {
                if (!detail::valid_identifier(item.key))
                    fail_line(item.lc, "invalid variable name '" + item.key + "'");
                if (item.key == "k" || item.key == "A")
                    fail_line(item.lc, "'" + item.key + "' is reserved");
                for (const auto& v : sc.baseline)
                    if (v.name == item.key)
                        fail_line(item.lc, "duplicate variable '" + item.key + "'");
                baseline_var bv;
                bv.name = item.key;
                bv.shared = shared;
                bv.dist = detail::parse_distribution(
                    item.lc, item.value, env_for_baseline(sc, sc.baseline.size()));
                sc.baseline.push_back(std::move(bv));
            }
        }
    };
    parse_baseline_section("baseline.shared", true);
    parse_baseline_section("baseline.clone", false);

    // --- [series] ---
    if (const section* sec = single_section("series", false)) {
        // First pass: declare names so defaults may be set after definitions.
        for (const auto& item : sec->items) {
            const auto dot = item.key.find('.');
            if (dot != std::string::npos) continue;
            if (!detail::valid_identifier(item.key))
                fail_line(item.lc, "invalid variable name '" + item.key + "'");
            if (item.key == "k" || item.key == "A")
                fail_line(item.lc, "'" + item.key + "' is reserved");
            for (const auto& v : sc.baseline)
                if (v.name == item.key)
                    fail_line(item.lc, "'" + item.key + "' already names a baseline variable");
            for (const auto& v : sc.series)
                if (v.name == item.key)
                    fail_line(item.lc, "duplicate variable '" + item.key + "'");
            sc.series.push_back(series_var{item.key, {}, 0.0});
        }
        std::size_t slot = 0;
        for (const auto& item : sec->items) {
            const auto dot = item.key.find('.');
            if (dot == std::string::npos) {
                sc.series[slot].dist = detail::parse_distribution(
                    item.lc, item.value, env_for_series(sc, slot));
                ++slot;
                continue;
            }
            const std::string base = item.key.substr(0, dot);
            const std::string attr = item.key.substr(dot + 1);
            if (attr != "default")
                fail_line(item.lc, "unknown series attribute '" + attr + "'");
            bool found = false;
            for (auto& v : sc.series)
                if (v.name == base) {
                    v.default_value = detail::parse_number(item.lc, item.value);
                    found = true;
                }
            if (!found) fail_line(item.lc, "default for unknown series '" + base + "'");
        }
    }

    // --- [treatment] ---
    {
        const section* sec = single_section("treatment", true);
        bool have_model = false;
        for (const auto& item : sec->items) {
            if (item.key == "model") {
                sc.treatment_model =
                    detail::parse_distribution(item.lc, item.value, env_for_treatment(sc));
                if (sc.treatment_model.kind != dist_kind::bernoulli &&
                    sc.treatment_model.kind != dist_kind::constant)
                    fail_line(item.lc, "treatment model must be bernoulli() or constant()");
                have_model = true;
            } else if (item.key == "default") {
                sc.treatment_default = detail::parse_number(item.lc, item.value);
            } else if (item.key == "intervention") {
                sc.intervention = parse_regime_values(item.lc, item.value);
            } else {
                fail_line(item.lc, "unknown key '" + item.key + "' in [treatment]");
            }
        }
        if (!have_model) throw config_error("[treatment] must define model");
    }

    // --- MSM sections (shared by the main and competing models) ---
    auto parse_msm = [&](const section* sec, const char* label) {
        msm_spec m;
        std::optional<double> base_intercept;
        std::map<int, double> overrides;
        const expr_env env = env_for_msm(sc);
        for (const auto& item : sec->items) {
            if (item.key == "intercept") {
                if (base_intercept)
                    fail_line(item.lc, "duplicate intercept");
                base_intercept = detail::parse_number(item.lc, item.value);
                continue;
            }
            if (item.key.rfind("intercept@", 0) == 0) {
                const std::string idx = item.key.substr(10);
                line_cursor lc = item.lc;
                const int j = detail::parse_int(lc, idx);
                if (j < 1 || j > sc.visits)
                    fail_line(item.lc, "intercept@ visit must lie in 1.." +
                                           std::to_string(sc.visits));
                if (!overrides.emplace(j, detail::parse_number(item.lc, item.value)).second)
                    fail_line(item.lc, "duplicate intercept@" + idx);
                continue;
            }
            if (item.key.rfind("term.", 0) == 0) {
                const std::string name = item.key.substr(5);
                if (!detail::valid_identifier(name))
                    fail_line(item.lc, "invalid term name '" + name + "'");
                for (const auto& t : m.terms)
                    if (t.name == name) fail_line(item.lc, "duplicate term '" + name + "'");
                const auto colon = item.value.find(':');
                if (colon == std::string::npos)
                    fail_line(item.lc, "term must be written as <coef> : <expression>");
                msm_term t;
                t.name = name;
                t.coef = detail::parse_number(item.lc, item.value.substr(0, colon));
                try {
                    t.expr = compiled_expr::parse(item.value.substr(colon + 1), env);
                } catch (const config_error& e) {
                    fail_line(item.lc, e.what());
                }
                m.terms.push_back(std::move(t));
                continue;
            }
            if (item.key == "link") {
                const std::string v = detail::strip(item.value);
                if (v == "logit") m.link = msm_link::logit;
                else if (v == "identity") m.link = msm_link::identity;
                else fail_line(item.lc, "link must be logit or identity");
                continue;
            }
            fail_line(item.lc, std::string("unknown key '") + item.key + "' in [" + label +
                                   "]");
        }
        if (!base_intercept)
            throw config_error(std::string("[") + label + "] must define intercept");
        m.intercepts.assign(static_cast<std::size_t>(sc.visits), *base_intercept);
        for (const auto& [j, v] : overrides) m.intercepts[static_cast<std::size_t>(j) - 1] = v;
        return m;
    };

    sc.msm = parse_msm(single_section("msm", true), "msm");

    // --- [risk_score] ---
    {
        const section* sec = single_section("risk_score", true);
        bool have = false;
        for (const auto& item : sec->items) {
            if (item.key == "h") {
                try {
                    sc.risk_score = compiled_expr::parse(item.value, env_for_risk_score(sc));
                } catch (const config_error& e) {
                    fail_line(item.lc, e.what());
                }
                have = true;
            } else {
                fail_line(item.lc, "unknown key '" + item.key + "' in [risk_score]");
            }
        }
        if (!have) throw config_error("[risk_score] must define h");
    }

    // --- copula sections ---
    auto parse_copula = [&](const section* sec, const char* label) {
        copula_spec c;
        bool have_family = false, have_rho = false, have_df = false, have_theta = false;
        for (const auto& item : sec->items) {
            if (item.key == "family") {
                try {
                    c.family = copula_family_from_string(detail::strip(item.value));
                } catch (const config_error& e) {
                    fail_line(item.lc, e.what());
                }
                have_family = true;
            } else if (item.key == "rho") {
                c.rho = detail::parse_number(item.lc, item.value);
                have_rho = true;
            } else if (item.key == "df") {
                c.df = detail::parse_number(item.lc, item.value);
                have_df = true;
            } else if (item.key == "theta") {
                c.theta = detail::parse_number(item.lc, item.value);
                have_theta = true;
            } else {
                fail_line(item.lc,
                          std::string("unknown key '") + item.key + "' in [" + label + "]");
            }
        }
        if (!have_family)
            throw config_error(std::string("[") + label + "] must define family");
        const bool elliptical = c.family == copula_family::gaussian ||
                                c.family == copula_family::student_t;
        const bool wants_df = c.family == copula_family::student_t;
        auto complain = [&](const std::string& msg) {
            throw config_error(std::string("[") + label + "]: " + msg + " for family " +
                               to_string(c.family));
        };
        if (elliptical && !have_rho) complain("rho is required");
        if (!elliptical && have_rho) complain("rho is not a parameter");
        if (wants_df && !have_df) complain("df is required");
        if (!wants_df && have_df) complain("df is not a parameter");
        if (!elliptical && !have_theta) complain("theta is required");
        if (elliptical && have_theta) complain("theta is not a parameter");
        try {
            c.validate();
        } catch (const config_error& e) {
            throw config_error(std::string("[") + label + "]: " + e.what());
        }
        return c;
    };
    sc.copula = parse_copula(single_section("copula", true), "copula");

    // --- [engine] ---
    if (const section* sec = single_section("engine", false)) {
        for (const auto& item : sec->items) {
            if (item.key == "mode") {
                const std::string v = detail::strip(item.value);
                if (v == "extended") sc.mode = engine_mode::extended;
                else if (v == "generalised") sc.mode = engine_mode::generalised;
                else fail_line(item.lc, "mode must be extended or generalised");
            } else if (item.key == "refresh.enabled") {
                sc.refresh.enabled = detail::parse_bool(item.lc, item.value);
            } else if (item.key == "refresh.threshold") {
                sc.refresh.threshold = detail::parse_number(item.lc, item.value);
            } else if (item.key == "refresh.clones") {
                sc.refresh.clones = detail::parse_int(item.lc, item.value);
            } else {
                fail_line(item.lc, "unknown key '" + item.key + "' in [engine]");
            }
        }
        if (sc.refresh.enabled) {
            if (!(sc.refresh.threshold > 0.0 && sc.refresh.threshold < 1.0))
                throw config_error("[engine] refresh.threshold must lie in (0,1)");
            if (sc.refresh.clones < sc.clones)
                throw config_error("[engine] refresh.clones must be >= clones");
        }
    }

    // --- [competing] ---
    if (const section* sec = single_section("competing", false)) {
        for (const auto& item : sec->items) {
            if (item.key == "variant") {
                const std::string v = detail::strip(item.value);
                if (v == "none") sc.competing.variant = competing_variant::none;
                else if (v == "subdistribution")
                    sc.competing.variant = competing_variant::subdistribution;
                else if (v == "cause_specific")
                    sc.competing.variant = competing_variant::cause_specific;
                else fail_line(item.lc, "variant must be none, subdistribution or cause_specific");
            } else if (item.key == "z_model") {
                sc.competing.z_model =
                    detail::parse_distribution(item.lc, item.value, env_for_risk_score(sc));
                if (sc.competing.z_model.kind != dist_kind::bernoulli)
                    fail_line(item.lc, "z_model must be bernoulli()");
            } else {
                fail_line(item.lc, "unknown key '" + item.key + "' in [competing]");
            }
        }
    }
    switch (sc.competing.variant) {
        case competing_variant::none: {
            if (find_sections("competing.msm").size() + find_sections("competing.risk_score").size() +
                    find_sections("competing.copula").size() >
                0)
                throw config_error(
                    "competing.* sections require [competing] variant = cause_specific");
            if (!sc.competing.z_model.p1.empty())
                throw config_error("z_model requires [competing] variant = subdistribution");
            break;
        }
        case competing_variant::subdistribution: {
            if (sc.competing.z_model.p1.empty())
                throw config_error("variant = subdistribution requires z_model");
            break;
        }
        case competing_variant::cause_specific: {
            if (!sc.competing.z_model.p1.empty())
                throw config_error("z_model is only valid with variant = subdistribution");
            sc.competing.msm =
                parse_msm(single_section("competing.msm", true), "competing.msm");
            const section* rs = single_section("competing.risk_score", true);
            bool have = false;
            for (const auto& item : rs->items) {
                if (item.key == "h") {
                    try {
                        sc.competing.risk_score =
                            compiled_expr::parse(item.value, env_for_risk_score(sc));
                    } catch (const config_error& e) {
                        fail_line(item.lc, e.what());
                    }
                    have = true;
                } else {
                    fail_line(item.lc, "unknown key '" + item.key +
                                           "' in [competing.risk_score]");
                }
            }
            if (!have) throw config_error("[competing.risk_score] must define h");
            sc.competing.copula =
                parse_copula(single_section("competing.copula", true), "competing.copula");
            break;
        }
    }

    return sc;
}

// ---------------------------------------------------------------------------
// Serialization (canonical form; parse(serialize(s)) == s structurally)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_distribution(const distribution_spec& d) {
    std::string out = to_string(d.kind);
    out += "(";
    out += strip(d.p1.source());
    if (d.kind == dist_kind::normal || d.kind == dist_kind::uniform) {
        out += ", ";
        out += strip(d.p2.source());
    }
    out += ")";
    return out;
}

inline void format_msm(std::string& out, const msm_spec& m) {
    if (m.link != msm_link::logit)
        out += std::string("link = ") + to_string(m.link) + "\n";
    out += "intercept = " + format_double(m.intercepts.front()) + "\n";
    for (std::size_t j = 1; j < m.intercepts.size(); ++j)
        if (m.intercepts[j] != m.intercepts.front())
            out += "intercept@" + std::to_string(j + 1) + " = " +
                   format_double(m.intercepts[j]) + "\n";
    for (const auto& t : m.terms)
        out += "term." + t.name + " = " + format_double(t.coef) + " : " +
               strip(t.expr.source()) + "\n";
}

inline void format_copula(std::string& out, const copula_spec& c) {
    out += "family = " + std::string(to_string(c.family)) + "\n";
    switch (c.family) {
        case copula_family::gaussian: out += "rho = " + format_double(c.rho) + "\n"; break;
        case copula_family::student_t:
            out += "rho = " + format_double(c.rho) + "\n";
            out += "df = " + format_double(c.df) + "\n";
            break;
        default: out += "theta = " + format_double(c.theta) + "\n"; break;
    }
}

} // namespace detail

inline std::string serialize_scenario(const scenario& s) {
    using detail::format_double;
    std::string out;
    out += "schema_version = 1\n\n";
    out += "[simulation]\n";
    out += "visits = " + std::to_string(s.visits) + "\n";
    out += "clones = " + std::to_string(s.clones) + "\n";
    out += "individuals = " + std::to_string(s.individuals) + "\n\n";

    auto emit_baseline = [&](bool shared, const char* header) {
        bool any = false;
        for (const auto& v : s.baseline) any = any || v.shared == shared;
        if (!any) return;
        out += std::string("[") + header + "]\n";
        for (const auto& v : s.baseline)
            if (v.shared == shared)
                out += v.name + " = " + detail::format_distribution(v.dist) + "\n";
        out += "\n";
    };
    emit_baseline(true, "baseline.shared");
    emit_baseline(false, "baseline.clone");

    if (!s.series.empty()) {
        out += "[series]\n";
        for (const auto& v : s.series) {
            out += v.name + " = " + detail::format_distribution(v.dist) + "\n";
            if (v.default_value != 0.0)
                out += v.name + ".default = " + format_double(v.default_value) + "\n";
        }
        out += "\n";
    }

    out += "[treatment]\n";
    out += "model = " + detail::format_distribution(s.treatment_model) + "\n";
    if (s.treatment_default != 0.0)
        out += "default = " + format_double(s.treatment_default) + "\n";
    if (!s.intervention.empty()) {
        out += "intervention = ";
        for (std::size_t i = 0; i < s.intervention.size(); ++i) {
            if (i) out += ",";
            out += format_double(s.intervention[i]);
        }
        out += "\n";
    }
    out += "\n[msm]\n";
    detail::format_msm(out, s.msm);
    out += "\n[risk_score]\n";
    out += "h = " + detail::strip(s.risk_score.source()) + "\n";
    out += "\n[copula]\n";
    detail::format_copula(out, s.copula);

    out += "\n[engine]\n";
    out += std::string("mode = ") + to_string(s.mode) + "\n";
    if (s.refresh.enabled) {
        out += "refresh.enabled = true\n";
        out += "refresh.threshold = " + format_double(s.refresh.threshold) + "\n";
        out += "refresh.clones = " + std::to_string(s.refresh.clones) + "\n";
    }

    if (s.competing.variant != competing_variant::none) {
        out += "\n[competing]\n";
        out += std::string("variant = ") + to_string(s.competing.variant) + "\n";
        if (s.competing.variant == competing_variant::subdistribution)
            out += "z_model = " + detail::format_distribution(s.competing.z_model) + "\n";
        else {
            out += "\n[competing.msm]\n";
            detail::format_msm(out, s.competing.msm);
            out += "\n[competing.risk_score]\n";
            out += "h = " + detail::strip(s.competing.risk_score.source()) + "\n";
            out += "\n[competing.copula]\n";
            detail::format_copula(out, s.competing.copula);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Structural equality (expressions compare by stripped source text)
// ---------------------------------------------------------------------------

inline bool expr_equal(const compiled_expr& a, const compiled_expr& b) {
    return detail::strip(a.source()) == detail::strip(b.source());
}

inline bool operator==(const distribution_spec& a, const distribution_spec& b) {
    if (a.kind != b.kind) return false;
    if (!expr_equal(a.p1, b.p1)) return false;
    if (a.kind == dist_kind::normal || a.kind == dist_kind::uniform)
        return expr_equal(a.p2, b.p2);
    return true;
}

inline bool operator==(const msm_term& a, const msm_term& b) {
    return a.name == b.name && a.coef == b.coef && expr_equal(a.expr, b.expr);
}

inline bool operator==(const msm_spec& a, const msm_spec& b) {
    return a.link == b.link && a.intercepts == b.intercepts && a.terms == b.terms;
}

inline bool operator==(const copula_spec& a, const copula_spec& b) {
    if (a.family != b.family) return false;
    switch (a.family) {
        case copula_family::gaussian: return a.rho == b.rho;
        case copula_family::student_t: return a.rho == b.rho && a.df == b.df;
        default: return a.theta == b.theta;
    }
}

inline bool operator==(const refresh_spec& a, const refresh_spec& b) {
    if (a.enabled != b.enabled) return false;
    if (!a.enabled) return true;
    return a.threshold == b.threshold && a.clones == b.clones;
}

inline bool operator==(const competing_spec& a, const competing_spec& b) {
    if (a.variant != b.variant) return false;
    switch (a.variant) {
        case competing_variant::none: return true;
        case competing_variant::subdistribution: return a.z_model == b.z_model;
        case competing_variant::cause_specific:
            return a.msm == b.msm && expr_equal(a.risk_score, b.risk_score) &&
                   a.copula == b.copula;
    }
    return false;
}

inline bool operator==(const baseline_var& a, const baseline_var& b) {
    return a.name == b.name && a.shared == b.shared && a.dist == b.dist;
}

inline bool operator==(const series_var& a, const series_var& b) {
    return a.name == b.name && a.default_value == b.default_value && a.dist == b.dist;
}

inline bool operator==(const scenario& a, const scenario& b) {
    return a.schema_version == b.schema_version && a.visits == b.visits &&
           a.clones == b.clones && a.individuals == b.individuals &&
           a.baseline == b.baseline && a.series == b.series &&
           a.treatment_model == b.treatment_model &&
           a.treatment_default == b.treatment_default &&
           a.intervention == b.intervention && a.msm == b.msm &&
           expr_equal(a.risk_score, b.risk_score) && a.copula == b.copula &&
           a.mode == b.mode && a.refresh == b.refresh && a.competing == b.competing;
}

} // namespace msmsim
