// Scenario format: parsing, validation, serialization round-trips, and
// distribution sampling semantics.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>

#include <msmsim/scenario.hpp>

using namespace msmsim;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

const std::string kReference = R"(# Longitudinal design with treatment-confounder feedback.
schema_version = 1

[simulation]
visits = 10
clones = 1000
individuals = 500

[baseline.shared]
X1 = bernoulli(0.5)

[baseline.clone]
B1 = normal(0, 1)

[series]
L1 = normal(0.3*X1 + 0.4*B1 + 0.5*L1[k-1] - 0.4*A[k-1], 1)

[treatment]
model = bernoulli(expit(-0.8 + 1.0*L1[k] + 0.6*A[k-1] + 0.2*X1))

[msm]
intercept = -2.5
term.beta_x = 0.5 : X1
term.beta_a = -1.0 : A[k]

[risk_score]
h = L1[k] + 0.4*B1

[copula]
family = gaussian
rho = -0.9
)";

std::string patched(const std::string& base, const std::string& from,
                    const std::string& to) {
    std::string out = base;
    const auto pos = out.find(from);
    REQUIRE(pos != std::string::npos);
    out.replace(pos, from.size(), to);
    return out;
}

} // namespace

TEST_CASE("reference scenario parses with all fields populated") {
    const scenario s = parse_scenario(kReference);

    CHECK(s.schema_version == 1);
    CHECK(s.visits == 10);
    CHECK(s.clones == 1000);
    CHECK(s.individuals == 500);

    REQUIRE(s.baseline.size() == 2);
    CHECK(s.baseline[0].name == "X1");
    CHECK(s.baseline[0].shared);
    CHECK(s.baseline[0].dist.kind == dist_kind::bernoulli);
    CHECK(s.baseline[1].name == "B1");
    CHECK_FALSE(s.baseline[1].shared);
    CHECK(s.baseline[1].dist.kind == dist_kind::normal);
    CHECK(s.shared_count() == 1);
    CHECK(s.clone_count() == 1);

    REQUIRE(s.series.size() == 1);
    CHECK(s.series[0].name == "L1");
    CHECK(s.series[0].default_value == 0.0);
    CHECK(s.series[0].dist.kind == dist_kind::normal);

    CHECK(s.treatment_model.kind == dist_kind::bernoulli);
    CHECK(s.treatment_default == 0.0);

    REQUIRE(s.msm.intercepts.size() == 10);
    for (double b0 : s.msm.intercepts) CHECK(b0 == -2.5);
    REQUIRE(s.msm.terms.size() == 2);
    CHECK(s.msm.terms[0].name == "beta_x");
    CHECK(s.msm.terms[0].coef == 0.5);
    CHECK(s.msm.terms[1].name == "beta_a");
    CHECK(s.msm.terms[1].coef == -1.0);

    CHECK(s.copula.family == copula_family::gaussian);
    CHECK(s.copula.rho == -0.9);
    CHECK(s.mode == engine_mode::extended);
    CHECK_FALSE(s.refresh.enabled);
    CHECK(s.competing.variant == competing_variant::none);
    CHECK(s.raw_text == kReference);
}

TEST_CASE("serialization round-trips structurally and is a fixpoint") {
    const scenario s = parse_scenario(kReference);
    const std::string text = serialize_scenario(s);
    const scenario s2 = parse_scenario(text);
    CHECK(s2 == s);
    CHECK(serialize_scenario(s2) == text);
}

TEST_CASE("msm link selection") {
    SECTION("logit is the default and may be stated explicitly") {
        const scenario s = parse_scenario(
            patched(kReference, "intercept = -2.5", "link = logit\nintercept = -2.5"));
        CHECK(s.msm.link == msm_link::logit);
        CHECK(s == parse_scenario(kReference));
    }
    SECTION("identity link round-trips and skips the expit transform") {
        const std::string text = patched(kReference, "intercept = -2.5",
                                         "link = identity\nintercept = 0.25");
        const scenario s = parse_scenario(text);
        CHECK(s.msm.link == msm_link::identity);
        const scenario s2 = parse_scenario(serialize_scenario(s));
        CHECK(s2 == s);

        const double x[] = {1.0};
        const double a[] = {1.0};
        eval_context ctx;
        ctx.visit = 0;
        ctx.x = x;
        ctx.a_path = a;
        // 0.25 + 0.5*X1 - 1.0*A[0]
        CHECK(s.msm.hazard(1, ctx) == 0.25 + 0.5 - 1.0);
    }
    SECTION("unknown links are rejected") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "intercept = -2.5",
                                   "link = probit\nintercept = -2.5")),
            config_error,
            MessageMatches(ContainsSubstring("link must be logit or identity")));
    }
}

TEST_CASE("simulation sizes default when omitted") {
    const std::string text =
        patched(kReference, "clones = 1000\nindividuals = 500\n", "");
    const scenario s = parse_scenario(text);
    CHECK(s.clones == 1000);
    CHECK(s.individuals == 1000);
}

TEST_CASE("fixed intervention regimes") {
    SECTION("explicit comma list round-trips") {
        const std::string text = patched(
            kReference, "model = bernoulli",
            "intervention = 1,1,0,0,1,0,1,0,0,1\nmodel = bernoulli");
        const scenario s = parse_scenario(text);
        const std::vector<double> want{1, 1, 0, 0, 1, 0, 1, 0, 0, 1};
        CHECK(s.intervention == want);
        const scenario s2 = parse_scenario(serialize_scenario(s));
        CHECK(s2 == s);
        CHECK(s2.intervention == want);
    }
    SECTION("all0 and all1 shorthands") {
        for (const auto& [token, value] :
             {std::pair<const char*, double>{"all0", 0.0}, {"all1", 1.0}}) {
            const std::string text =
                patched(kReference, "model = bernoulli",
                        "intervention = " + std::string(token) +
                            "\nmodel = bernoulli");
            const scenario s = parse_scenario(text);
            REQUIRE(s.intervention.size() == 10);
            for (double a : s.intervention) CHECK(a == value);
        }
    }
    SECTION("length must match visits") {
        const std::string text =
            patched(kReference, "model = bernoulli",
                    "intervention = 1,0,1\nmodel = bernoulli");
        CHECK_THROWS_MATCHES(
            parse_scenario(text), config_error,
            MessageMatches(ContainsSubstring("one value per visit")));
    }
    SECTION("values must be 0 or 1") {
        const std::string text =
            patched(kReference, "model = bernoulli",
                    "intervention = 1,1,0,0,1,0,1,0,0,2\nmodel = bernoulli");
        CHECK_THROWS_MATCHES(
            parse_scenario(text), config_error,
            MessageMatches(ContainsSubstring("must be 0 or 1")));
    }
    SECTION("absent by default") {
        CHECK(parse_scenario(kReference).intervention.empty());
    }
}

TEST_CASE("per-visit intercept overrides") {
    const std::string text = patched(
        kReference, "intercept = -2.5",
        "intercept = -2.5\nintercept@1 = -3.5\nintercept@10 = -1.25");
    const scenario s = parse_scenario(text);
    REQUIRE(s.msm.intercepts.size() == 10);
    CHECK(s.msm.intercepts[0] == -3.5);
    CHECK(s.msm.intercepts[9] == -1.25);
    for (std::size_t j = 1; j < 9; ++j) CHECK(s.msm.intercepts[j] == -2.5);

    // Overrides survive the round trip.
    const scenario s2 = parse_scenario(serialize_scenario(s));
    CHECK(s2 == s);

    SECTION("visit index must lie in 1..K") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "intercept = -2.5",
                                   "intercept = -2.5\nintercept@0 = -3")),
            config_error, MessageMatches(ContainsSubstring("1..10")));
        CHECK_THROWS_AS(
            parse_scenario(patched(kReference, "intercept = -2.5",
                                   "intercept = -2.5\nintercept@11 = -3")),
            config_error);
    }
    SECTION("duplicate overrides are rejected") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "intercept = -2.5",
                                   "intercept = -2.5\nintercept@2 = -3\nintercept@2 = -4")),
            config_error, MessageMatches(ContainsSubstring("duplicate intercept@2")));
    }
}

TEST_CASE("msm hazard evaluates the linear predictor") {
    const scenario s = parse_scenario(kReference);
    const double x[] = {1.0};
    const double a[] = {0.0, 1.0, 1.0};
    eval_context ctx;
    ctx.visit = 2;
    ctx.x = x;
    ctx.a_path = a;

    // eta = -2.5 + 0.5*X1 - 1.0*A[2] = -2.5 + 0.5 - 1.0
    CHECK(s.msm.linear_predictor(3, ctx) == Catch::Approx(-3.0).margin(1e-15));
    CHECK(s.msm.hazard(3, ctx) == Catch::Approx(expit(-3.0)).margin(1e-15));
}

TEST_CASE("distribution sampling semantics") {
    const expr_env env;  // constants only
    auto dist = [&](const std::string& text) {
        detail::line_cursor lc{text, 1};
        return detail::parse_distribution(lc, text, env);
    };
    eval_context ctx;
    const rng_key key(1234u);

    SECTION("constant consumes no draws") {
        const distribution_spec d = dist("constant(2.5)");
        CHECK(d.draws() == 0);
        CHECK(d.sample(ctx, key, 7) == 2.5);
    }
    SECTION("bernoulli matches the key primitive") {
        const distribution_spec d = dist("bernoulli(0.3)");
        CHECK(d.draws() == 1);
        for (std::uint64_t c = 0; c < 50; ++c)
            CHECK(d.sample(ctx, key, c) == (key.bernoulli(c, 0.3) ? 1.0 : 0.0));
    }
    SECTION("normal is an affine transform of one normal draw") {
        const distribution_spec d = dist("normal(2, 3)");
        CHECK(d.draws() == 1);
        for (std::uint64_t c = 0; c < 20; ++c)
            CHECK(d.sample(ctx, key, c) == 2.0 + 3.0 * key.normal(c));
    }
    SECTION("uniform maps one open uniform draw") {
        const distribution_spec d = dist("uniform(-1, 3)");
        for (std::uint64_t c = 0; c < 20; ++c) {
            const double v = d.sample(ctx, key, c);
            CHECK(v == -1.0 + 4.0 * key.uniform_open(c));
            CHECK(v > -1.0);
            CHECK(v < 3.0);
        }
    }
    SECTION("invalid parameters raise simulation_error") {
        CHECK_THROWS_AS(dist("bernoulli(1.5)").sample(ctx, key, 0), simulation_error);
        CHECK_THROWS_AS(dist("bernoulli(0-0.1)").sample(ctx, key, 0), simulation_error);
        CHECK_THROWS_AS(dist("normal(0, 0-1)").sample(ctx, key, 0), simulation_error);
        CHECK_THROWS_AS(dist("uniform(2, 1)").sample(ctx, key, 0), simulation_error);
        CHECK_THROWS_AS(dist("constant(log(0-1))").sample(ctx, key, 0), simulation_error);
        CHECK(dist("bernoulli(0)").sample(ctx, key, 0) == 0.0);
        CHECK(dist("bernoulli(1)").sample(ctx, key, 0) == 1.0);
        CHECK(dist("normal(1, 0)").sample(ctx, key, 0) == 1.0);
        CHECK(dist("uniform(2, 2)").sample(ctx, key, 0) == 2.0);
    }
    SECTION("nested calls survive argument splitting") {
        const distribution_spec d = dist("normal(min(1, 2) + max(0, 3), 1)");
        CHECK(d.kind == dist_kind::normal);
        CHECK(d.sample(ctx, key, 0) == 4.0 + key.normal(0));
    }
}

TEST_CASE("expression sites enforce their scopes") {
    SECTION("msm terms may not use clone baselines or the series") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "term.beta_x = 0.5 : X1",
                                   "term.beta_x = 0.5 : B1")),
            config_error, MessageMatches(ContainsSubstring("unknown variable 'B1'")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "term.beta_x = 0.5 : X1",
                                   "term.beta_x = 0.5 : L1[k]")),
            config_error, MessageMatches(ContainsSubstring("unknown variable 'L1'")));
    }
    SECTION("msm terms may use current treatment") {
        const scenario s = parse_scenario(
            patched(kReference, "term.beta_a = -1.0 : A[k]",
                    "term.beta_a = -1.0 : A[k] + 0.1*A[k-1]"));
        CHECK(s.msm.terms[1].expr.max_series_lag() == 0);
    }
    SECTION("series definitions may not use the current visit of themselves") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "0.5*L1[k-1]", "0.5*L1[k]")),
            config_error, MessageMatches(ContainsSubstring("lag of at least 1")));
    }
    SECTION("series definitions may not use current treatment") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "0.4*A[k-1]", "0.4*A[k]")),
            config_error, MessageMatches(ContainsSubstring("lag of at least 1")));
    }
    SECTION("later series enter earlier definitions only lagged") {
        const std::string two = patched(
            kReference, "L1 = normal(0.3*X1 + 0.4*B1 + 0.5*L1[k-1] - 0.4*A[k-1], 1)",
            "L1 = normal(0.2*L2[k-1], 1)\nL2 = normal(0.1*L1[k], 1)\nL2.default = 0.5");
        const scenario s = parse_scenario(two);
        REQUIRE(s.series.size() == 2);
        CHECK(s.series[1].default_value == 0.5);
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(two, "0.2*L2[k-1]", "0.2*L2[k]")),
            config_error, MessageMatches(ContainsSubstring("lag of at least 1")));
    }
    SECTION("treatment model sees current series but only lagged treatment") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "0.6*A[k-1] + 0.2*X1", "0.6*A[k] + 0.2*X1")),
            config_error, MessageMatches(ContainsSubstring("lag of at least 1")));
    }
    SECTION("risk score sees everything at the current visit") {
        const scenario s = parse_scenario(
            patched(kReference, "h = L1[k] + 0.4*B1", "h = L1[k] + 0.4*B1 + A[k] + X1"));
        CHECK_FALSE(s.risk_score.empty());
    }
    SECTION("baseline variables may reference earlier baselines only") {
        const scenario s = parse_scenario(
            patched(kReference, "B1 = normal(0, 1)", "B1 = normal(0.2*X1, 1)"));
        CHECK(s.baseline[1].dist.kind == dist_kind::normal);
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "X1 = bernoulli(0.5)",
                                   "X1 = bernoulli(0.1 + 0.2*B1)")),
            config_error, MessageMatches(ContainsSubstring("unknown variable 'B1'")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "B1 = normal(0, 1)",
                                   "B1 = normal(L1[k-1], 1)")),
            config_error, MessageMatches(ContainsSubstring("unknown variable 'L1'")));
    }
}

TEST_CASE("strict parsing rejects malformed input") {
    SECTION("schema_version is mandatory and checked") {
        CHECK_THROWS_MATCHES(parse_scenario(patched(kReference, "schema_version = 1\n", "")),
                             config_error, MessageMatches(ContainsSubstring("schema_version")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "schema_version = 1", "schema_version = 2")),
            config_error, MessageMatches(ContainsSubstring("unsupported schema_version")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "schema_version = 1",
                                   "schema_version = 1\nschema_version = 1")),
            config_error, MessageMatches(ContainsSubstring("duplicate schema_version")));
    }
    SECTION("unknown sections and keys") {
        CHECK_THROWS_MATCHES(parse_scenario(kReference + "\n[mystery]\nx = 1\n"),
                             config_error, MessageMatches(ContainsSubstring("unknown section [mystery]")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "visits = 10", "visits = 10\nspeed = 9")),
            config_error, MessageMatches(ContainsSubstring("unknown key 'speed'")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "rho = -0.9", "rho = -0.9\ntheta = 2")),
            config_error, MessageMatches(ContainsSubstring("gaussian")));
    }
    SECTION("missing required sections") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "[risk_score]\nh = L1[k] + 0.4*B1\n", "")),
            config_error, MessageMatches(ContainsSubstring("missing required section [risk_score]")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "[copula]\nfamily = gaussian\nrho = -0.9\n", "")),
            config_error, MessageMatches(ContainsSubstring("missing required section [copula]")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(
                kReference,
                "[treatment]\nmodel = bernoulli(expit(-0.8 + 1.0*L1[k] + 0.6*A[k-1] + 0.2*X1))\n",
                "")),
            config_error, MessageMatches(ContainsSubstring("missing required section [treatment]")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference,
                                   "[simulation]\nvisits = 10\nclones = 1000\nindividuals = 500\n",
                                   "")),
            config_error, MessageMatches(ContainsSubstring("missing required section [simulation]")));
    }
    SECTION("duplicate section") {
        CHECK_THROWS_MATCHES(
            parse_scenario(kReference + "\n[copula]\nfamily = gaussian\nrho = 0\n"),
            config_error, MessageMatches(ContainsSubstring("duplicate section [copula]")));
    }
    SECTION("line diagnostics carry line numbers") {
        // 'visits' sits on line 5 of the reference text.
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "visits = 10", "visits = ten")),
            config_error, MessageMatches(ContainsSubstring("line 5")));
    }
    SECTION("keys before any section are rejected") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "[simulation]", "stray = 1\n[simulation]")),
            config_error, MessageMatches(ContainsSubstring("before any section")));
    }
    SECTION("lines must be key = value or a section header") {
        CHECK_THROWS_AS(parse_scenario(patched(kReference, "visits = 10", "visits")),
                        config_error);
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "visits = 10", "visits =")),
            config_error, MessageMatches(ContainsSubstring("empty value")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "[copula]", "[copula")),
            config_error, MessageMatches(ContainsSubstring("unterminated section header")));
    }
    SECTION("validation of scalar ranges") {
        CHECK_THROWS_AS(parse_scenario(patched(kReference, "visits = 10", "visits = 0")),
                        config_error);
        CHECK_THROWS_AS(parse_scenario(patched(kReference, "clones = 1000", "clones = 1")),
                        config_error);
        CHECK_THROWS_AS(
            parse_scenario(patched(kReference, "individuals = 500", "individuals = 0")),
            config_error);
        CHECK_THROWS_AS(parse_scenario(patched(kReference, "rho = -0.9", "rho = -1")),
                        config_error);
    }
    SECTION("reserved and duplicate names") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "X1 = bernoulli(0.5)",
                                   "X1 = bernoulli(0.5)\nA = bernoulli(0.5)")),
            config_error, MessageMatches(ContainsSubstring("reserved")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "B1 = normal(0, 1)", "X1 = normal(0, 1)")),
            config_error, MessageMatches(ContainsSubstring("duplicate variable 'X1'")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "L1 = normal", "X1 = normal")),
            config_error, MessageMatches(ContainsSubstring("already names a baseline")));
    }
    SECTION("msm structure") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "intercept = -2.5\n", "")),
            config_error, MessageMatches(ContainsSubstring("must define intercept")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "term.beta_x = 0.5 : X1",
                                   "term.beta_x = 0.5 * X1")),
            config_error, MessageMatches(ContainsSubstring("<coef> : <expression>")));
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "term.beta_x = 0.5 : X1",
                                   "term.beta_x = 0.5 : X1\nterm.beta_x = 0.1 : X1")),
            config_error, MessageMatches(ContainsSubstring("duplicate term")));
        CHECK_THROWS_AS(
            parse_scenario(patched(kReference, "intercept = -2.5",
                                   "intercept = -2.5\nlink = probit")),
            config_error);
    }
    SECTION("unknown series attribute") {
        CHECK_THROWS_MATCHES(
            parse_scenario(patched(kReference, "[treatment]",
                                   "L1.start = 1\n\n[treatment]")),
            config_error, MessageMatches(ContainsSubstring("unknown series attribute 'start'")));
    }
    SECTION("series default for unknown series") {
        const std::string text =
            patched(kReference, "[treatment]", "L9.default = 1\n\n[treatment]");
        CHECK_THROWS_MATCHES(parse_scenario(text), config_error,
                             MessageMatches(ContainsSubstring("unknown series 'L9'")));
    }
    SECTION("comments and blank lines are ignored") {
        const scenario s =
            parse_scenario(patched(kReference, "rho = -0.9", "rho = -0.9  # strong\n\n"));
        CHECK(s.copula.rho == -0.9);
    }
}

TEST_CASE("engine section controls mode and refresh") {
    const std::string text = kReference +
                             "\n[engine]\n"
                             "mode = generalised\n"
                             "refresh.enabled = true\n"
                             "refresh.threshold = 0.2\n"
                             "refresh.clones = 50000\n";
    const scenario s = parse_scenario(text);
    CHECK(s.mode == engine_mode::generalised);
    CHECK(s.refresh.enabled);
    CHECK(s.refresh.threshold == 0.2);
    CHECK(s.refresh.clones == 50000);
    CHECK(parse_scenario(serialize_scenario(s)) == s);

    CHECK_THROWS_AS(
        parse_scenario(kReference + "\n[engine]\nrefresh.enabled = true\nrefresh.threshold = 1.5\n"),
        config_error);
    CHECK_THROWS_AS(
        parse_scenario(kReference + "\n[engine]\nrefresh.enabled = true\nrefresh.clones = 10\n"),
        config_error);
    CHECK_THROWS_AS(parse_scenario(kReference + "\n[engine]\nmode = turbo\n"), config_error);
}

TEST_CASE("competing risk variants") {
    SECTION("subdistribution") {
        const std::string text =
            kReference + "\n[competing]\nvariant = subdistribution\nz_model = bernoulli(0.97)\n";
        const scenario s = parse_scenario(text);
        CHECK(s.competing.variant == competing_variant::subdistribution);
        CHECK(s.competing.z_model.kind == dist_kind::bernoulli);
        CHECK(parse_scenario(serialize_scenario(s)) == s);

        CHECK_THROWS_MATCHES(
            parse_scenario(kReference + "\n[competing]\nvariant = subdistribution\n"),
            config_error, MessageMatches(ContainsSubstring("requires z_model")));
        CHECK_THROWS_AS(
            parse_scenario(kReference +
                           "\n[competing]\nvariant = subdistribution\nz_model = normal(0, 1)\n"),
            config_error);
        CHECK_THROWS_MATCHES(
            parse_scenario(kReference + "\n[competing]\nz_model = bernoulli(0.9)\n"),
            config_error, MessageMatches(ContainsSubstring("variant = subdistribution")));
    }
    SECTION("cause_specific requires its full triple") {
        const std::string text = kReference +
                                 "\n[competing]\n"
                                 "variant = cause_specific\n"
                                 "\n[competing.msm]\n"
                                 "intercept = -3\n"
                                 "intercept@2 = -2.5\n"
                                 "term.gamma_a = 0.3 : A[k]\n"
                                 "\n[competing.risk_score]\n"
                                 "h = 0.7*B1 + L1[k]\n"
                                 "\n[competing.copula]\n"
                                 "family = clayton\n"
                                 "theta = 2\n";
        const scenario s = parse_scenario(text);
        CHECK(s.competing.variant == competing_variant::cause_specific);
        REQUIRE(s.competing.msm.intercepts.size() == 10);
        CHECK(s.competing.msm.intercepts[1] == -2.5);
        CHECK(s.competing.msm.terms.size() == 1);
        CHECK(s.competing.copula.family == copula_family::clayton);
        CHECK(parse_scenario(serialize_scenario(s)) == s);

        CHECK_THROWS_MATCHES(
            parse_scenario(kReference + "\n[competing]\nvariant = cause_specific\n"),
            config_error, MessageMatches(ContainsSubstring("missing required section [competing.msm]")));
        CHECK_THROWS_MATCHES(
            parse_scenario(kReference + "\n[competing.msm]\nintercept = -3\n"),
            config_error, MessageMatches(ContainsSubstring("variant = cause_specific")));
    }
}

TEST_CASE("student_t copula scenario round-trips") {
    const std::string text = patched(kReference, "family = gaussian\nrho = -0.9",
                                     "family = student_t\nrho = -0.9\ndf = 2");
    const scenario s = parse_scenario(text);
    CHECK(s.copula.family == copula_family::student_t);
    CHECK(s.copula.df == 2.0);
    CHECK(parse_scenario(serialize_scenario(s)) == s);
}
