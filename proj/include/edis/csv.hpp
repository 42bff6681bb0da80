#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "agent.hpp"

namespace edis {

/// Header plus rows of a comma-separated file without quoting.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw FormatError("csv: missing column '" + name + "'");
    }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double csv_double(const std::string& s, std::size_t line) {
    double v = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw FormatError("csv: bad number '" + s + "'", line);
    return v;
}

inline std::size_t csv_size(const std::string& s, std::size_t line) {
    std::size_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) throw FormatError("csv: bad count '" + s + "'", line);
    return v;
}

inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace detail

inline CsvTable read_csv(std::istream& is) {
    CsvTable t;
    std::string line;
    if (!std::getline(is, line) || line.empty()) throw FormatError("csv: missing header", 1);
    t.header = detail::split_csv(line);
    std::size_t n = 1;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty()) continue;
        auto row = detail::split_csv(line);
        if (row.size() != t.header.size())
            throw FormatError("csv: expected " + std::to_string(t.header.size()) + " fields, got " + std::to_string(row.size()), n);
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline CsvTable load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    return read_csv(in);
}

/// Reports from any CSV carrying the DivergenceReport columns (extra columns ignored).
inline std::vector<DivergenceReport> reports_of(const CsvTable& t) {
    const std::size_t src = t.column("source"), est = t.column("estimator"), js = t.column("state_js"),
                      act = t.column("action_mse"), tr = t.column("transition_mse"), n = t.column("n");
    std::vector<DivergenceReport> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        if (r[js].empty()) continue;  // failed run
        DivergenceReport d;
        d.source = r[src];
        d.estimator = r[est];
        d.state_js = detail::csv_double(r[js], i + 2);
        d.action_mse = detail::csv_double(r[act], i + 2);
        d.transition_mse = detail::csv_double(r[tr], i + 2);
        d.n = detail::csv_size(r[n], i + 2);
        out.push_back(std::move(d));
    }
    return out;
}

inline std::vector<MetricsRow> read_metrics(std::istream& is) {
    const CsvTable t = read_csv(is);
    const std::size_t step = t.column("env_step"), ret = t.column("eval_return"), js = t.column("state_js"),
                      act = t.column("action_mse"), tr = t.column("transition_mse");
    std::vector<MetricsRow> out;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& r = t.rows[i];
        MetricsRow m{detail::csv_size(r[step], i + 2), detail::csv_double(r[ret], i + 2), std::nullopt};
        if (!r[js].empty()) {
            DivergenceReport d;
            d.state_js = detail::csv_double(r[js], i + 2);
            d.action_mse = detail::csv_double(r[act], i + 2);
            d.transition_mse = detail::csv_double(r[tr], i + 2);
            m.divergence = d;
        }
        out.push_back(std::move(m));
    }
    return out;
}

/// Per-column mean and standard deviation sidecar of a dataset.
inline void write_stats(std::ostream& os, const Standardizer& s, const std::vector<std::string>& names) {
    detail::require(names.size() == s.dim(), "write_stats: one name per column required");
    os << "column,mean,std\n";
    char buf[96];
    for (std::size_t c = 0; c < s.dim(); ++c) {
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g\n", static_cast<double>(s.mean[c]), static_cast<double>(s.std[c]));
        os << names[c] << buf;
    }
}

inline Standardizer read_stats(std::istream& is) {
    const CsvTable t = read_csv(is);
    const std::size_t m = t.column("mean"), sd = t.column("std");
    Standardizer s;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        s.mean.push_back(static_cast<float>(detail::csv_double(t.rows[i][m], i + 2)));
        s.std.push_back(static_cast<float>(detail::csv_double(t.rows[i][sd], i + 2)));
    }
    return s;
}

inline std::vector<std::string> tuple_column_names(std::size_t dim_s, std::size_t dim_a) {
    std::vector<std::string> n;
    for (std::size_t i = 0; i < dim_s; ++i) n.push_back("s" + std::to_string(i));
    for (std::size_t i = 0; i < dim_a; ++i) n.push_back("a" + std::to_string(i));
    for (std::size_t i = 0; i < dim_s; ++i) n.push_back("s_next" + std::to_string(i));
    return n;
}

}  // namespace edis
