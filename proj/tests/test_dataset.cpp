// Person-time expansion and the RFC 4180 CSV layer.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <msmsim/dataset.hpp>

using namespace msmsim;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::MessageMatches;

namespace {

const std::string kBase = R"(schema_version = 1

[simulation]
visits = 4
clones = 10
individuals = 3

[baseline.shared]
X1 = bernoulli(0.5)

[baseline.clone]
B1 = normal(0, 1)

[series]
L1 = normal(0.5*L1[k-1], 1)

[treatment]
model = bernoulli(expit(L1[k]))

[msm]
intercept = -2
term.beta_a = -1 : A[k]

[risk_score]
h = L1[k]

[copula]
family = gaussian
rho = -0.5
)";

individual_path make_path(std::int64_t id, int visits, int event_visit, int comp_visit) {
    individual_path p;
    p.id = id;
    p.visits = visits;
    p.x = {1.0};
    p.b = {0.25};
    p.series.resize(static_cast<std::size_t>(visits));
    p.a.resize(static_cast<std::size_t>(visits));
    for (int k = 0; k < visits; ++k) {
        p.series[static_cast<std::size_t>(k)] = 10.0 * id + k;
        p.a[static_cast<std::size_t>(k)] = k % 2;
    }
    p.event_visit = event_visit;
    p.comp_visit = comp_visit;
    return p;
}

} // namespace

TEST_CASE("person-time expansion without competing risks") {
    const scenario sc = parse_scenario(kBase);
    std::vector<individual_path> paths;
    paths.push_back(make_path(1, 4, 2, 0));  // event at visit 2 -> rows k = 0,1
    paths.push_back(make_path(2, 4, 0, 0));  // survives -> rows k = 0..3

    const person_time_table t = expand_person_time(sc, paths);
    const std::vector<std::string> want = {"id", "visit", "X1", "B1", "L1", "a", "y"};
    CHECK(t.columns == want);
    REQUIRE(t.rows() == 6);

    // Individual 1, row k=1 carries the event.
    CHECK(t.at(0, 0) == 1.0);
    CHECK(t.at(0, 1) == 0.0);
    CHECK(t.at(0, 4) == 10.0);  // L1 at k=0
    CHECK(t.at(0, 5) == 0.0);   // a
    CHECK(t.at(0, 6) == 0.0);   // y
    CHECK(t.at(1, 1) == 1.0);
    CHECK(t.at(1, 4) == 11.0);
    CHECK(t.at(1, 5) == 1.0);
    CHECK(t.at(1, 6) == 1.0);

    // Individual 2 never fails.
    for (std::size_t r = 2; r < 6; ++r) {
        CHECK(t.at(r, 0) == 2.0);
        CHECK(t.at(r, 1) == static_cast<double>(r - 2));
        CHECK(t.at(r, 6) == 0.0);
    }
}

TEST_CASE("person-time expansion with competing risks") {
    SECTION("subdistribution keeps competing-event individuals in the risk set") {
        const scenario sc = parse_scenario(
            kBase + "\n[competing]\nvariant = subdistribution\nz_model = bernoulli(0.9)\n");
        std::vector<individual_path> paths;
        paths.push_back(make_path(1, 4, 0, 2));  // competing event at 2, never fails
        paths.push_back(make_path(2, 4, 3, 0));  // main event at 3

        const person_time_table t = expand_person_time(sc, paths);
        REQUIRE(t.columns.back() == "d");
        REQUIRE(t.rows() == 7);  // 4 rows + 3 rows

        const std::size_t yc = t.column_index("y"), dc = t.column_index("d");
        // Individual 1: d flags visit 2 (row k=1); rows continue to k=3.
        CHECK(t.at(0, dc) == 0.0);
        CHECK(t.at(1, dc) == 1.0);
        CHECK(t.at(2, dc) == 0.0);
        CHECK(t.at(3, dc) == 0.0);
        for (std::size_t r = 0; r < 4; ++r) CHECK(t.at(r, yc) == 0.0);
        // Individual 2: y flags visit 3 (row k=2) and follow-up stops.
        CHECK(t.at(6, yc) == 1.0);
        CHECK(t.at(6, dc) == 0.0);
    }
    SECTION("cause-specific ends follow-up at the competing event") {
        const scenario sc = parse_scenario(kBase +
                                           "\n[competing]\n"
                                           "variant = cause_specific\n"
                                           "\n[competing.msm]\nintercept = -3\n"
                                           "\n[competing.risk_score]\nh = L1[k]\n"
                                           "\n[competing.copula]\nfamily = gaussian\nrho = -0.5\n");
        std::vector<individual_path> paths;
        paths.push_back(make_path(1, 4, 0, 2));  // competing event at 2 -> rows k = 0,1
        const person_time_table t = expand_person_time(sc, paths);
        REQUIRE(t.rows() == 2);
        CHECK(t.at(1, t.column_index("d")) == 1.0);
        CHECK(t.at(1, t.column_index("y")) == 0.0);
    }
}

TEST_CASE("csv writing is RFC 4180 with shortest round-trip numbers") {
    person_time_table t;
    t.columns = {"id", "plain", "with,comma", "with\"quote"};
    t.data = {1.0, 0.1, -2.5, 1.0 / 3.0,
              2.0, 1e300, 0.30000000000000004, -0.0};
    std::ostringstream out;
    write_csv(out, t);
    const std::string text = out.str();

    CHECK(text.find("id,plain,\"with,comma\",\"with\"\"quote\"\r\n") == 0);
    CHECK_THAT(text, ContainsSubstring("1,0.1,-2.5,0.3333333333333333\r\n"));
    CHECK_THAT(text, ContainsSubstring("2,1e+300,0.30000000000000004,0\r\n"));

    SECTION("and reads back bit-identically") {
        std::istringstream in(text);
        const person_time_table r = read_table_csv(in);
        CHECK(r.columns == t.columns);
        REQUIRE(r.data.size() == t.data.size());
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            if (t.data[i] == 0.0) CHECK(r.data[i] == 0.0);
            else CHECK(r.data[i] == t.data[i]);
        }
    }
}

TEST_CASE("csv reader handles quoting, line endings, and blank lines") {
    SECTION("quoted fields with embedded separators and doubled quotes") {
        std::istringstream in("\"a,b\",\"c\"\"d\",\"e\r\nf\"\r\n1,2,3\r\n");
        const auto recs = read_csv_records(in);
        REQUIRE(recs.size() == 2);
        CHECK(recs[0] == std::vector<std::string>{"a,b", "c\"d", "e\r\nf"});
        CHECK(recs[1] == std::vector<std::string>{"1", "2", "3"});
    }
    SECTION("LF-only input and a missing final newline") {
        std::istringstream in("h1,h2\n1,2\n3,4");
        const person_time_table t = read_table_csv(in);
        REQUIRE(t.rows() == 2);
        CHECK(t.at(1, 1) == 4.0);
    }
    SECTION("blank lines are tolerated in numeric tables") {
        std::istringstream in("h1,h2\r\n1,2\r\n\r\n3,4\r\n");
        const person_time_table t = read_table_csv(in);
        REQUIRE(t.rows() == 2);
    }
    SECTION("empty quoted fields count as fields") {
        std::istringstream in("a,b\n\"\",2\n");
        const auto recs = read_csv_records(in);
        REQUIRE(recs.size() == 2);
        CHECK(recs[1][0].empty());
    }
}

TEST_CASE("csv reader rejects malformed input") {
    SECTION("ragged records") {
        std::istringstream in("a,b\r\n1,2,3\r\n");
        CHECK_THROWS_MATCHES(read_table_csv(in), io_error,
                             MessageMatches(ContainsSubstring("record 2")));
    }
    SECTION("non-numeric fields") {
        std::istringstream in("a,b\r\n1,two\r\n");
        CHECK_THROWS_MATCHES(read_table_csv(in), io_error,
                             MessageMatches(ContainsSubstring("'two' is not a number")));
    }
    SECTION("unterminated quote") {
        std::istringstream in("a,b\r\n\"1,2\r\n");
        CHECK_THROWS_MATCHES(read_csv_records(in), io_error,
                             MessageMatches(ContainsSubstring("quoted field")));
    }
    SECTION("quote in the middle of a bare field") {
        std::istringstream in("a,b\r\n1\"2,3\r\n");
        CHECK_THROWS_AS(read_csv_records(in), io_error);
    }
    SECTION("empty input") {
        std::istringstream in("");
        CHECK_THROWS_MATCHES(read_table_csv(in), io_error,
                             MessageMatches(ContainsSubstring("empty")));
    }
    SECTION("missing column lookups") {
        person_time_table t;
        t.columns = {"id"};
        CHECK_THROWS_AS(t.column_index("nope"), io_error);
        CHECK(t.has_column("id"));
        CHECK_FALSE(t.has_column("nope"));
    }
}
