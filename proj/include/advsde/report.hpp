#ifndef ADVSDE_REPORT_HPP
#define ADVSDE_REPORT_HPP

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace advsde {

// Shortest round-trip representation; locale-independent.
inline std::string format_number(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw std::runtime_error("format_number: conversion failed");
    return std::string(buf, p);
}

class CsvTable {
public:
    using Cell = std::variant<double, long long, std::string>;

    CsvTable(std::string name, std::vector<std::string> header) : name_(std::move(name)), header_(std::move(header)) {}

    void add_row(const std::vector<Cell>& cells)
    {
        if (cells.size() != header_.size()) throw std::invalid_argument("CsvTable: row width does not match header");
        std::vector<std::string> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            if (const auto* d = std::get_if<double>(&c)) row.push_back(format_number(*d));
            else if (const auto* i = std::get_if<long long>(&c)) row.push_back(std::to_string(*i));
            else row.push_back(std::get<std::string>(c));
        }
        rows_.push_back(std::move(row));
    }

    const std::string& name() const { return name_; }
    const std::vector<std::string>& header() const { return header_; }
    const std::vector<std::vector<std::string>>& rows() const { return rows_; }

    // RFC 4180: CRLF line ends, fields quoted when they contain a comma, quote or line break.
    std::string to_string() const
    {
        std::string out;
        write_line(out, header_);
        for (const auto& r : rows_) write_line(out, r);
        return out;
    }

private:
    static void write_field(std::string& out, const std::string& f)
    {
        if (f.find_first_of(",\"\r\n") == std::string::npos) {
            out += f;
            return;
        }
        out += '"';
        for (char ch : f) {
            if (ch == '"') out += '"';
            out += ch;
        }
        out += '"';
    }
    static void write_line(std::string& out, const std::vector<std::string>& fields)
    {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out += ',';
            write_field(out, fields[i]);
        }
        out += "\r\n";
    }

    std::string name_;
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

struct Check {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ExperimentReport {
    std::string experiment;
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<CsvTable> tables;
    std::vector<Check> checks;
    std::vector<std::string> artifacts;
    nlohmann::ordered_json config_echo;
    double wall_time_s = 0.0;

    void metric(const std::string& key, double value) { metrics.emplace_back(key, value); }
    void check(const std::string& name, bool passed, const std::string& detail)
    {
        checks.push_back(Check{name, passed, detail});
    }

    double get(const std::string& key) const
    {
        for (const auto& [k, v] : metrics)
            if (k == key) return v;
        throw std::out_of_range("ExperimentReport: no metric '" + key + "'");
    }
    const CsvTable& table(const std::string& name) const
    {
        for (const auto& t : tables)
            if (t.name() == name) return t;
        throw std::out_of_range("ExperimentReport: no table '" + name + "'");
    }
    bool all_passed() const
    {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }

    // Summary metrics are also emitted as summary.csv so every metric is traceable to a CSV.
    CsvTable summary_table() const
    {
        CsvTable t("summary", {"metric", "value"});
        for (const auto& [k, v] : metrics) t.add_row({k, v});
        return t;
    }

    nlohmann::ordered_json summary_json() const
    {
        nlohmann::ordered_json j;
        j["experiment"] = experiment;
        for (const auto& [k, v] : metrics) {
            if (std::isfinite(v)) j[k] = v;
            else j[k] = format_number(v);
        }
        for (const auto& c : checks) j["check." + c.name] = c.passed;
        j["checks_passed"] = all_passed();
        j["wall_time_s"] = wall_time_s;
        j["artifacts"] = artifacts;
        j["config"] = config_echo;
        return j;
    }
};

// Writes every table plus summary.csv and summary.json into dir; records artifact paths.
inline void write_report(ExperimentReport& r, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    r.artifacts.clear();
    auto emit = [&](const CsvTable& t) {
        const auto path = dir / (t.name() + ".csv");
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out << t.to_string();
        r.artifacts.push_back(path.string());
    };
    for (const auto& t : r.tables) emit(t);
    emit(r.summary_table());
    const auto jpath = dir / "summary.json";
    std::ofstream out(jpath, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + jpath.string());
    out << r.summary_json().dump(2) << "\n";
}

} // namespace advsde

#endif // ADVSDE_REPORT_HPP
