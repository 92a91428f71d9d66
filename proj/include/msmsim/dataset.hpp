#pragma once

// Simulated data containers and their CSV representation.
//
// The engine produces one `individual_path` per individual (the observed
// clone).  `expand_person_time` turns paths into the long person-time table
// used for model fitting and export: one row per at-risk interval (k, k+1]
// with the covariate values in effect over that interval.  CSV output
// follows RFC 4180 (CRLF records, quoted fields where needed); numbers are
// written with shortest round-trip formatting.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <msmsim/errors.hpp>
#include <msmsim/scenario.hpp>

namespace msmsim {

// ---------------------------------------------------------------------------
// Simulated paths
// ---------------------------------------------------------------------------

struct individual_path {
    std::int64_t id = 0;
    std::vector<double> x;       // shared baselines, scenario order
    std::vector<double> b;       // clone baselines of the observed clone
    std::vector<double> series;  // slot-major: series[slot * visits + k]
    std::vector<double> a;       // treatment A_k for k = 0..visits-1
    int visits = 0;              // K
    int event_visit = 0;         // main event at visit j in 1..K; 0 = none
    int comp_visit = 0;          // competing event at visit j in 1..K; 0 = none

    double series_at(int slot, int k) const {
        return series[static_cast<std::size_t>(slot) * static_cast<std::size_t>(visits) +
                      static_cast<std::size_t>(k)];
    }
};

inline bool operator==(const individual_path& a, const individual_path& b) {
    return a.id == b.id && a.visits == b.visits && a.event_visit == b.event_visit &&
           a.comp_visit == b.comp_visit && a.x == b.x && a.b == b.b &&
           a.series == b.series && a.a == b.a;
}

inline bool operator!=(const individual_path& a, const individual_path& b) {
    return !(a == b);
}

// ---------------------------------------------------------------------------
// Long person-time table
// ---------------------------------------------------------------------------

struct person_time_table {
    std::vector<std::string> columns;
    std::vector<double> data;  // row-major

    std::size_t rows() const {
        return columns.empty() ? 0 : data.size() / columns.size();
    }
    double at(std::size_t r, std::size_t c) const {
        return data[r * columns.size() + c];
    }
    std::size_t column_index(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw io_error("table has no column named '" + name + "'");
    }
    bool has_column(const std::string& name) const {
        for (const auto& c : columns)
            if (c == name) return true;
        return false;
    }
};

// Number of person-time rows an individual contributes.  Main events and
// (for the cause-specific variant) competing events end follow-up at the
// event visit; with the subdistribution variant individuals stay in the
// risk set after a competing event.
inline int follow_up_rows(const individual_path& p, competing_variant variant) {
    int stop = p.visits;  // rows are k = 0..stop-1
    if (p.event_visit > 0) stop = p.event_visit;
    if (variant == competing_variant::cause_specific && p.comp_visit > 0)
        stop = std::min(stop, p.comp_visit);
    return stop;
}

// Expand simulated paths into the long format.  Columns:
//   id, visit, <shared baselines>, <clone baselines>, <series>, a, y [, d]
// `visit` is the interval start k (0-based); `y` marks a main event at
// k+1; `d` (present when the scenario has competing risks) marks a
// competing event at k+1.
inline person_time_table expand_person_time(const scenario& sc,
                                            const std::vector<individual_path>& paths) {
    person_time_table t;
    t.columns.push_back("id");
    t.columns.push_back("visit");
    for (const auto& v : sc.baseline)
        if (v.shared) t.columns.push_back(v.name);
    for (const auto& v : sc.baseline)
        if (!v.shared) t.columns.push_back(v.name);
    for (const auto& v : sc.series) t.columns.push_back(v.name);
    t.columns.push_back("a");
    t.columns.push_back("y");
    const bool with_d = sc.competing.variant != competing_variant::none;
    if (with_d) t.columns.push_back("d");

    std::size_t total = 0;
    for (const auto& p : paths)
        total += static_cast<std::size_t>(follow_up_rows(p, sc.competing.variant));
    t.data.reserve(total * t.columns.size());

    for (const auto& p : paths) {
        const int stop = follow_up_rows(p, sc.competing.variant);
        for (int k = 0; k < stop; ++k) {
            t.data.push_back(static_cast<double>(p.id));
            t.data.push_back(static_cast<double>(k));
            for (double v : p.x) t.data.push_back(v);
            for (double v : p.b) t.data.push_back(v);
            for (std::size_t slot = 0; slot < sc.series.size(); ++slot)
                t.data.push_back(p.series_at(static_cast<int>(slot), k));
            t.data.push_back(p.a[static_cast<std::size_t>(k)]);
            t.data.push_back(p.event_visit == k + 1 ? 1.0 : 0.0);
            if (with_d) t.data.push_back(p.comp_visit == k + 1 ? 1.0 : 0.0);
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// CSV (RFC 4180)
// ---------------------------------------------------------------------------

namespace detail {

inline bool csv_needs_quoting(const std::string& s) {
    for (char c : s)
        if (c == ',' || c == '"' || c == '\r' || c == '\n') return true;
    return false;
}

inline void csv_write_field(std::ostream& out, const std::string& s) {
    if (!csv_needs_quoting(s)) {
        out << s;
        return;
    }
    out << '"';
    for (char c : s) {
        if (c == '"') out << "\"\"";
        else out << c;
    }
    out << '"';
}

inline std::string csv_format_number(double v) {
    // Integers (ids, visits, indicators) print without a decimal point;
    // everything else uses shortest round-trip formatting.
    if (v == std::floor(v) && std::fabs(v) < 9.007199254740992e15) {
        char buf[24];
        const auto res =
            std::to_chars(buf, buf + sizeof buf, static_cast<long long>(v));
        return std::string(buf, res.ptr);
    }
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace detail

inline void write_csv(std::ostream& out, const person_time_table& t) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        if (c) out << ',';
        detail::csv_write_field(out, t.columns[c]);
    }
    out << "\r\n";
    const std::size_t n = t.rows();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < t.columns.size(); ++c) {
            if (c) out << ',';
            out << detail::csv_format_number(t.at(r, c));
        }
        out << "\r\n";
    }
    if (!out) throw io_error("failed while writing CSV output");
}

// Parse an RFC 4180 stream into records of string fields.  Accepts both
// CRLF and LF record separators; quoted fields may contain separators,
// doubled quotes, and newlines.
inline std::vector<std::vector<std::string>> read_csv_records(std::istream& in) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;  // a quoted empty field still counts
    char c;

    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        records.push_back(std::move(record));
        record.clear();
    };

    while (in.get(c)) {
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field += '"';
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        switch (c) {
            case '"':
                if (!field.empty())
                    throw io_error("CSV record " + std::to_string(records.size() + 1) +
                                   ": quote inside an unquoted field");
                in_quotes = true;
                field_started = true;
                break;
            case ',': end_field(); break;
            case '\r':
                if (in.peek() == '\n') in.get(c);
                end_record();
                break;
            case '\n': end_record(); break;
            default:
                field += c;
                break;
        }
    }
    if (in_quotes)
        throw io_error("CSV ends inside a quoted field");
    if (!field.empty() || field_started || !record.empty()) end_record();
    return records;
}

// Read a numeric person-time table: first record is the header, every
// other field must parse as a number.
inline person_time_table read_table_csv(std::istream& in) {
    const auto records = read_csv_records(in);
    if (records.empty()) throw io_error("CSV input is empty");
    person_time_table t;
    t.columns = records[0];
    if (t.columns.empty() || (t.columns.size() == 1 && t.columns[0].empty()))
        throw io_error("CSV header is empty");
    t.data.reserve((records.size() - 1) * t.columns.size());
    for (std::size_t r = 1; r < records.size(); ++r) {
        // Tolerate blank lines (a record of one empty field).
        if (records[r].size() == 1 && records[r][0].empty()) continue;
        if (records[r].size() != t.columns.size())
            throw io_error("CSV record " + std::to_string(r + 1) + " has " +
                           std::to_string(records[r].size()) + " fields, expected " +
                           std::to_string(t.columns.size()));
        for (const std::string& f : records[r]) {
            double v = 0.0;
            const char* first = f.data();
            const char* last = f.data() + f.size();
            const auto res = std::from_chars(first, last, v);
            if (res.ec != std::errc() || res.ptr != last)
                throw io_error("CSV record " + std::to_string(r + 1) +
                               ": field '" + f + "' is not a number");
            t.data.push_back(v);
        }
    }
    return t;
}

} // namespace msmsim
