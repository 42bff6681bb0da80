#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "maze.hpp"

namespace edis {

namespace detail {

/// Shortest text that parses back to the same float.
inline void write_float(std::ostream& os, float v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    os.write(buf, res.ptr - buf);
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        const std::size_t b = i;
        while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
        if (i > b) out.push_back(line.substr(b, i - b));
    }
    return out;
}

inline float parse_float(std::string_view tok, std::size_t line) {
    float v = 0.f;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
        // from_chars rejects "nan"/"inf" spellings on some libraries; classify them explicitly
        std::string low(tok);
        for (auto& c : low) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (low.find("nan") != std::string::npos || low.find("inf") != std::string::npos)
            throw FormatError("dataset: non-finite value '" + std::string(tok) + "'", line);
        throw FormatError("dataset: cannot parse number '" + std::string(tok) + "'", line);
    }
    if (!std::isfinite(v)) throw FormatError("dataset: non-finite value '" + std::string(tok) + "'", line);
    return v;
}

inline std::size_t parse_dim(std::string_view tok, std::string_view key) {
    if (tok.substr(0, key.size()) != key) throw FormatError("dataset: malformed header, expected " + std::string(key), 1);
    std::size_t v = 0;
    auto digits = tok.substr(key.size());
    auto res = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (res.ec != std::errc{} || res.ptr != digits.data() + digits.size() || v == 0)
        throw FormatError("dataset: malformed header value '" + std::string(tok) + "'", 1);
    return v;
}

}  // namespace detail

inline constexpr std::string_view kDatasetMagic = "edis-dataset";

/// Header "edis-dataset v1 dim_s=<k> dim_a=<m>", then one transition per line:
/// s, a, r, s', done(0/1), space separated.
inline void write_dataset(std::ostream& os, const Dataset& ds) {
    os << kDatasetMagic << " v1 dim_s=" << ds.dim_s << " dim_a=" << ds.dim_a << '\n';
    for (const auto& t : ds.items) {
        bool first = true;
        auto put = [&](float v) {
            if (!first) os << ' ';
            first = false;
            detail::write_float(os, v);
        };
        for (float v : t.s) put(v);
        for (float v : t.a) put(v);
        put(t.r);
        for (float v : t.s_next) put(v);
        os << ' ' << (t.done ? 1 : 0) << '\n';
    }
    if (!os) throw Error("dataset: write failed");
}

inline Dataset read_dataset(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("dataset: empty dataset file (no header)");
    auto head = detail::split_ws(line);
    if (head.size() != 4 || head[0] != kDatasetMagic) throw FormatError("dataset: malformed header", 1);
    if (head[1] != "v1") throw FormatError("dataset: unsupported version '" + std::string(head[1]) + "'", 1);
    Dataset ds;
    ds.dim_s = detail::parse_dim(head[2], "dim_s=");
    ds.dim_a = detail::parse_dim(head[3], "dim_a=");
    const std::size_t width = 2 * ds.dim_s + ds.dim_a + 2;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != width)
            throw FormatError("dataset: expected " + std::to_string(width) + " fields, found " + std::to_string(toks.size()),
                              lineno);
        Transition t;
        std::size_t k = 0;
        for (std::size_t i = 0; i < ds.dim_s; ++i) t.s.push_back(detail::parse_float(toks[k++], lineno));
        for (std::size_t i = 0; i < ds.dim_a; ++i) t.a.push_back(detail::parse_float(toks[k++], lineno));
        t.r = detail::parse_float(toks[k++], lineno);
        for (std::size_t i = 0; i < ds.dim_s; ++i) t.s_next.push_back(detail::parse_float(toks[k++], lineno));
        if (toks[k] == "0") t.done = false;
        else if (toks[k] == "1") t.done = true;
        else throw FormatError("dataset: done flag must be 0 or 1, found '" + std::string(toks[k]) + "'", lineno);
        ds.items.push_back(std::move(t));
    }
    return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open '" + path + "' for writing");
    write_dataset(os, ds);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open dataset '" + path + "'");
    return read_dataset(is);
}

}  // namespace edis
