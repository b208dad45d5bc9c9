#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "aesmo/errors.hpp"

namespace aesmo {

/// Uniformly sampled current/voltage record; discharge current positive.
struct Telemetry {
    std::vector<double> t;        // seconds, strictly increasing
    std::vector<double> current;  // A
    std::vector<double> voltage;  // V
    std::vector<double> true_soc; // optional; empty or same length

    std::size_t size() const { return t.size(); }
    bool has_truth() const { return !true_soc.empty(); }
    double dt() const { return t.size() > 1 ? t[1] - t[0] : 1.0; }

    void validate() const {
        if (current.size() != t.size() || voltage.size() != t.size())
            throw validation_error("Telemetry: column lengths differ");
        if (!true_soc.empty() && true_soc.size() != t.size())
            throw validation_error("Telemetry: true_soc length differs");
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (!std::isfinite(t[i]) || !std::isfinite(current[i]) || !std::isfinite(voltage[i]))
                throw validation_error("Telemetry: non-finite value at row " + std::to_string(i));
            if (i > 0 && !(t[i] > t[i - 1]))
                throw validation_error("Telemetry: timestamps not strictly increasing at row " +
                                       std::to_string(i));
        }
    }
};

namespace detail {

inline double parse_field(std::string_view s, std::size_t line) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    const auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc())
        throw parse_error("telemetry: bad number '" + std::string(s) + "'", line);
    return v;
}

}  // namespace detail

/// CSV with header `t_s,current_a,voltage_v[,true_soc]`, 17 significant
/// digits on write so a round trip is lossless.
inline void save_telemetry(const std::string& path, const Telemetry& tel) {
    tel.validate();
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw error("save_telemetry: cannot open " + path);
    const bool truth = tel.has_truth();
    std::fputs(truth ? "t_s,current_a,voltage_v,true_soc\n" : "t_s,current_a,voltage_v\n", f);
    for (std::size_t i = 0; i < tel.size(); ++i) {
        if (truth)
            std::fprintf(f, "%.17g,%.17g,%.17g,%.17g\n", tel.t[i], tel.current[i], tel.voltage[i],
                         tel.true_soc[i]);
        else
            std::fprintf(f, "%.17g,%.17g,%.17g\n", tel.t[i], tel.current[i], tel.voltage[i]);
    }
    std::fclose(f);
}

inline Telemetry load_telemetry(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error("load_telemetry: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw parse_error("telemetry: empty file", 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool truth = false;
    if (line == "t_s,current_a,voltage_v,true_soc")
        truth = true;
    else if (line != "t_s,current_a,voltage_v")
        throw parse_error("telemetry: unexpected header '" + line + "'", 1);

    Telemetry tel;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string_view v(line);
        const std::size_t want = truth ? 4 : 3;
        std::array<std::string_view, 4> field;
        std::size_t n = 0;
        while (n < want) {
            const std::size_t comma = v.find(',');
            field[n++] = v.substr(0, comma);
            if (comma == std::string_view::npos) break;
            v.remove_prefix(comma + 1);
        }
        if (n != want || (n == want && field[want - 1].find(',') != std::string_view::npos))
            throw parse_error("telemetry: expected " + std::to_string(want) + " columns", lineno);
        tel.t.push_back(detail::parse_field(field[0], lineno));
        tel.current.push_back(detail::parse_field(field[1], lineno));
        tel.voltage.push_back(detail::parse_field(field[2], lineno));
        if (truth) tel.true_soc.push_back(detail::parse_field(field[3], lineno));
    }
    tel.validate();
    return tel;
}

}  // namespace aesmo
