#ifndef ADVSDE_CONFIG_HPP
#define ADVSDE_CONFIG_HPP

#include "adversarial.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace advsde {

class ConfigError : public std::runtime_error {
public:
    enum class Kind { io, syntax, duplicate_key, missing_section, missing_key, bad_value, out_of_range, unknown_experiment };

    ConfigError(Kind kind, const std::string& msg, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), kind_(kind), line_(line)
    {
    }
    Kind kind() const { return kind_; }
    int line() const { return line_; }

private:
    Kind kind_;
    int line_;
};

// INI-style text: "[section]" or "[a.b]" headers, "key = value" lines, '#' or ';' comments.
// Keys before the first header live in the root section "".
class ConfigTree {
public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    static ConfigTree parse(std::istream& in)
    {
        ConfigTree t;
        t.sections_[""];
        std::string section;
        std::string raw;
        int line_no = 0;
        while (std::getline(in, raw)) {
            ++line_no;
            std::string s = strip(strip_comment(raw));
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']') throw ConfigError(ConfigError::Kind::syntax, "unterminated section header", line_no);
                section = strip(s.substr(1, s.size() - 2));
                if (section.empty()) throw ConfigError(ConfigError::Kind::syntax, "empty section name", line_no);
                if (t.sections_.count(section) && t.header_line_.count(section))
                    throw ConfigError(ConfigError::Kind::duplicate_key,
                                      "section [" + section + "] repeated (first at line " +
                                          std::to_string(t.header_line_[section]) + ")",
                                      line_no);
                t.sections_[section];
                t.header_line_[section] = line_no;
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError(ConfigError::Kind::syntax, "expected 'key = value'", line_no);
            const std::string key = strip(s.substr(0, eq));
            const std::string value = strip(s.substr(eq + 1));
            if (key.empty()) throw ConfigError(ConfigError::Kind::syntax, "empty key", line_no);
            auto& sec = t.sections_[section];
            if (auto it = sec.find(key); it != sec.end())
                throw ConfigError(ConfigError::Kind::duplicate_key,
                                  "duplicate key '" + qualified(section, key) + "' (first defined at line " +
                                      std::to_string(it->second.line) + ")",
                                  line_no);
            sec[key] = Entry{value, line_no};
        }
        return t;
    }

    static ConfigTree parse_string(const std::string& text)
    {
        std::istringstream in(text);
        return parse(in);
    }

    static ConfigTree load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) throw ConfigError(ConfigError::Kind::io, "cannot open config file '" + path + "'");
        return parse(in);
    }

    bool has_section(const std::string& s) const { return sections_.count(s) > 0; }
    bool has(const std::string& s, const std::string& k) const
    {
        auto it = sections_.find(s);
        return it != sections_.end() && it->second.count(k) > 0;
    }

    void require_section(const std::string& s) const
    {
        if (!has_section(s)) throw ConfigError(ConfigError::Kind::missing_section, "missing required section [" + s + "]");
    }

    void set(const std::string& s, const std::string& k, const std::string& v, int line = 0)
    {
        sections_[s][k] = Entry{v, line};
    }

    // Copies keys of [profile.<name>] over the tree; "sec.key" addresses [sec], plain keys the root.
    void apply_profile(const std::string& name)
    {
        const std::string ps = "profile." + name;
        if (!has_section(ps)) return;
        const auto overrides = sections_.at(ps);
        for (const auto& [k, e] : overrides) {
            const auto dot = k.rfind('.');
            if (dot == std::string::npos) set("", k, e.value, e.line);
            else set(k.substr(0, dot), k.substr(dot + 1), e.value, e.line);
        }
    }

    std::string get_string(const std::string& s, const std::string& k) const { return entry(s, k).value; }
    std::string get_string(const std::string& s, const std::string& k, const std::string& def) const
    {
        return has(s, k) ? get_string(s, k) : def;
    }

    double get_double(const std::string& s, const std::string& k) const
    {
        const Entry& e = entry(s, k);
        return to_double(e.value, qualified(s, k), e.line);
    }
    double get_double(const std::string& s, const std::string& k, double def) const
    {
        return has(s, k) ? get_double(s, k) : def;
    }

    long long get_int(const std::string& s, const std::string& k) const
    {
        const Entry& e = entry(s, k);
        long long v = 0;
        const char* b = e.value.data();
        const char* end = b + e.value.size();
        auto [p, ec] = std::from_chars(b, end, v);
        if (ec != std::errc() || p != end) {
            // Accept integral values written in floating notation, e.g. 1e5.
            const double d = to_double(e.value, qualified(s, k), e.line);
            if (d != std::floor(d) || std::abs(d) > 9.0e15)
                throw ConfigError(ConfigError::Kind::bad_value, "'" + qualified(s, k) + "' must be an integer", e.line);
            v = static_cast<long long>(d);
        }
        return v;
    }
    long long get_int(const std::string& s, const std::string& k, long long def) const
    {
        return has(s, k) ? get_int(s, k) : def;
    }

    std::uint64_t get_u64(const std::string& s, const std::string& k, std::uint64_t def) const
    {
        if (!has(s, k)) return def;
        const Entry& e = entry(s, k);
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
        if (ec != std::errc() || p != e.value.data() + e.value.size())
            throw ConfigError(ConfigError::Kind::bad_value, "'" + qualified(s, k) + "' must be an unsigned integer", e.line);
        return v;
    }

    bool get_bool(const std::string& s, const std::string& k, bool def) const
    {
        if (!has(s, k)) return def;
        const Entry& e = entry(s, k);
        if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
        if (e.value == "false" || e.value == "0" || e.value == "no") return false;
        throw ConfigError(ConfigError::Kind::bad_value, "'" + qualified(s, k) + "' must be true or false", e.line);
    }

    std::vector<double> get_doubles(const std::string& s, const std::string& k) const
    {
        const Entry& e = entry(s, k);
        std::vector<double> out;
        std::stringstream ss(e.value);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(to_double(strip(item), qualified(s, k), e.line));
        if (out.empty()) throw ConfigError(ConfigError::Kind::bad_value, "'" + qualified(s, k) + "' is empty", e.line);
        return out;
    }

    int line_of(const std::string& s, const std::string& k) const { return has(s, k) ? entry(s, k).line : 0; }

    nlohmann::ordered_json to_json() const
    {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& [name, sec] : sections_) {
            if (name.rfind("profile.", 0) == 0) continue;
            nlohmann::ordered_json* node = &j;
            if (!name.empty()) {
                std::stringstream ss(name);
                std::string part;
                while (std::getline(ss, part, '.')) node = &(*node)[part];
            }
            for (const auto& [k, e] : sec) (*node)[k] = e.value;
        }
        return j;
    }

private:
    static std::string strip(const std::string& s)
    {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }
    static std::string strip_comment(const std::string& s)
    {
        const auto p = s.find_first_of("#;");
        return p == std::string::npos ? s : s.substr(0, p);
    }
    static std::string qualified(const std::string& s, const std::string& k) { return s.empty() ? k : s + "." + k; }

    static double to_double(const std::string& v, const std::string& what, int line)
    {
        double d = 0.0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
        if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(d))
            throw ConfigError(ConfigError::Kind::bad_value, "'" + what + "' is not a number: '" + v + "'", line);
        return d;
    }

    const Entry& entry(const std::string& s, const std::string& k) const
    {
        auto it = sections_.find(s);
        if (it == sections_.end())
            throw ConfigError(ConfigError::Kind::missing_section, "missing required section [" + s + "]");
        auto jt = it->second.find(k);
        if (jt == it->second.end())
            throw ConfigError(ConfigError::Kind::missing_key, "missing required key '" + qualified(s, k) + "'");
        return jt->second;
    }

    std::map<std::string, std::map<std::string, Entry>> sections_;
    std::map<std::string, int> header_line_;
};

inline const std::vector<std::string>& known_experiments()
{
    static const std::vector<std::string> names{"order-check",    "moment-check",      "quad-decay",
                                                "stationary-check", "policy-check",    "linreg-control",
                                                "logistic-robustness"};
    return names;
}

struct ExperimentConfig {
    std::string experiment;
    std::uint64_t seed = 0;
    std::size_t mc_runs = 100000;
    std::vector<double> eta_grid;
    std::string output_dir;
    std::string profile = "paper";
    unsigned threads = 0;
    TrainConfig train;
    double dt = 0.0;
    ConfigTree tree;
};

namespace detail {

inline std::vector<std::string> required_sections(const std::string& experiment)
{
    if (experiment == "policy-check") return {"policy"};
    if (experiment == "order-check" || experiment == "moment-check") return {"model", "train", "grid"};
    return {"model", "train"};
}

inline void check_eta(double eta, double T, const ConfigTree& t, const std::string& s, const std::string& k)
{
    if (!(eta > 0.0 && eta < std::min(1.0, T)))
        throw ConfigError(ConfigError::Kind::out_of_range,
                          "eta = " + std::to_string(eta) + " outside (0, min(1, T)) with T = " + std::to_string(T),
                          t.line_of(s, k));
}

} // namespace detail

// Validates a parsed tree and fills defaults. The profile section, if present, is applied first.
inline ExperimentConfig resolve_config(ConfigTree tree, const std::string& profile = "")
{
    ExperimentConfig c;
    c.profile = profile.empty() ? tree.get_string("", "profile", "paper") : profile;
    if (c.profile != "fast" && c.profile != "paper")
        throw ConfigError(ConfigError::Kind::bad_value, "unknown profile '" + c.profile + "' (expected fast or paper)");
    tree.apply_profile(c.profile);
    if (!tree.has("", "experiment")) throw ConfigError(ConfigError::Kind::missing_key, "missing required key 'experiment'");
    c.experiment = tree.get_string("", "experiment");
    const auto& names = known_experiments();
    if (std::find(names.begin(), names.end(), c.experiment) == names.end())
        throw ConfigError(ConfigError::Kind::unknown_experiment, "unknown experiment '" + c.experiment + "'",
                          tree.line_of("", "experiment"));
    for (const auto& s : detail::required_sections(c.experiment)) tree.require_section(s);

    c.seed = tree.get_u64("", "seed", 0);
    const long long runs = tree.get_int("", "mc_runs", 100000);
    if (runs < 2) throw ConfigError(ConfigError::Kind::out_of_range, "mc_runs must be at least 2", tree.line_of("", "mc_runs"));
    c.mc_runs = static_cast<std::size_t>(runs);
    c.output_dir = tree.get_string("", "output_dir", "");
    const long long threads = tree.get_int("", "threads", 0);
    if (threads < 0) throw ConfigError(ConfigError::Kind::out_of_range, "threads must be non-negative", tree.line_of("", "threads"));
    c.threads = static_cast<unsigned>(threads);

    if (tree.has_section("train")) {
        TrainConfig& t = c.train;
        t.T = tree.get_double("train", "T", 1.0);
        t.eta = tree.get_double("train", "eta", std::min(0.1, 0.5 * std::min(1.0, t.T)));
        const long long B = tree.get_int("train", "B", 1);
        const long long K = tree.get_int("train", "K", 0);
        if (B < 1) throw ConfigError(ConfigError::Kind::out_of_range, "B must be at least 1", tree.line_of("train", "B"));
        if (K < 0) throw ConfigError(ConfigError::Kind::out_of_range, "K must be non-negative", tree.line_of("train", "K"));
        t.B = static_cast<std::size_t>(B);
        t.K = static_cast<unsigned>(K);
        t.lambda = tree.get_double("train", "lambda", 0.0);
        if (t.lambda < 0.0)
            throw ConfigError(ConfigError::Kind::out_of_range, "lambda must be non-negative", tree.line_of("train", "lambda"));
        if (!(t.T > 0.0)) throw ConfigError(ConfigError::Kind::out_of_range, "T must be positive", tree.line_of("train", "T"));
        detail::check_eta(t.eta, t.T, tree, "train", "eta");
        if (tree.has("train", "eta_inner")) t.eta_inner = tree.get_double("train", "eta_inner");
        c.dt = tree.get_double("train", "dt", t.eta / 50.0);
        if (!(c.dt > 0.0)) throw ConfigError(ConfigError::Kind::out_of_range, "dt must be positive", tree.line_of("train", "dt"));
    }
    if (tree.has("grid", "eta")) {
        c.eta_grid = tree.get_doubles("grid", "eta");
        for (double e : c.eta_grid) detail::check_eta(e, c.train.T, tree, "grid", "eta");
    }
    c.tree = std::move(tree);
    return c;
}

inline ExperimentConfig parse_config(const std::string& path, const std::string& profile = "")
{
    return resolve_config(ConfigTree::load(path), profile);
}

} // namespace advsde

#endif // ADVSDE_CONFIG_HPP
