#include <advsde/experiments.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_assert = 3;

// --out, then $ADVSDE_OUT_DIR, then output_dir from the config, then ./out/<experiment>.
std::filesystem::path output_dir(const std::string& flag, const advsde::ExperimentConfig& c)
{
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("ADVSDE_OUT_DIR"); env && *env) return std::filesystem::path(env) / c.experiment;
    if (!c.output_dir.empty()) return c.output_dir;
    return std::filesystem::path("out") / c.experiment;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Adversarial-training SDE experiments"};
    std::string experiment, config_path, out, profile;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    bool assert_checks = false;
    app.add_option("experiment", experiment, "one of: order-check, moment-check, quad-decay, stationary-check, "
                                             "policy-check, linreg-control, logistic-robustness")
        ->required();
    app.add_option("--config", config_path, "INI experiment config")->required();
    app.add_option("--seed", seed, "override the master seed");
    app.add_option("--out", out, "output directory");
    app.add_option("--profile", profile, "fast or paper")->check(CLI::IsMember({"fast", "paper"}));
    app.add_option("--threads", threads, "worker threads (0 = hardware)");
    app.add_flag("--assert", assert_checks, "exit 3 when any acceptance check fails");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config;
    }

    advsde::ExperimentConfig cfg;
    try {
        const auto& names = advsde::known_experiments();
        if (std::find(names.begin(), names.end(), experiment) == names.end())
            throw advsde::ConfigError(advsde::ConfigError::Kind::unknown_experiment, "unknown experiment '" + experiment + "'");
        cfg = advsde::parse_config(config_path, profile);
        if (cfg.experiment != experiment)
            throw advsde::ConfigError(advsde::ConfigError::Kind::bad_value,
                                      "config is for '" + cfg.experiment + "', not '" + experiment + "'");
        if (seed) cfg.seed = *seed;
        if (threads) cfg.threads = *threads;
    } catch (const advsde::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    }

    advsde::ExperimentReport report;
    try {
        report = advsde::run_experiment(cfg);
        const auto dir = output_dir(out, cfg);
        advsde::write_report(report, dir);
        std::cout << "wrote " << report.artifacts.size() << " files to " << dir.string() << "\n";
    } catch (const advsde::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    for (const auto& [k, v] : report.metrics) std::cout << k << " = " << advsde::format_number(v) << "\n";
    for (const auto& c : report.checks)
        std::cout << (c.passed ? "[ok]   " : "[fail] ") << c.name << ": " << c.detail << "\n";
    std::cout << "wall_time_s = " << advsde::format_number(report.wall_time_s) << "\n";
    if (assert_checks && !report.all_passed()) return exit_assert;
    return exit_ok;
}
