#include <cstdio>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "grc/checks.hpp"
#include "grc/config.hpp"
#include "grc/experiment.hpp"

namespace {

constexpr int kCheckFailure = 1;
constexpr int kUsageError = 2;

// --<dotted.key> VALUE on the config-driven subcommands, applied after the file.
void add_overrides(CLI::App* cmd, std::map<std::string, std::string>& overrides) {
    for (const std::string& key : grc::config_keys()) {
        cmd->add_option_function<std::string>(
            "--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; }, "override " + key);
    }
}

grc::ExperimentConfig resolve(const std::string& path, const std::map<std::string, std::string>& overrides) {
    grc::ExperimentConfig cfg = grc::load_config(path);
    for (const auto& [key, value] : overrides) grc::apply_override(cfg, key, value);
    grc::validate(cfg);
    return cfg;
}

int cmd_check() {
    bool all = true;
    for (const grc::CheckResult& r : grc::run_checks()) {
        std::printf("%s %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        all = all && r.pass;
    }
    return all ? 0 : kCheckFailure;
}

int cmd_bench(const grc::ExperimentConfig& cfg) {
    const grc::BenchReport report = grc::run_bench(cfg.bench);
    std::cout << grc::to_csv(report);
    const std::size_t expected_shifts = static_cast<std::size_t>(cfg.bench.g) * cfg.bench.g;
    bool ok = true;
    if (!report.fast_beats_reference()) {
        std::cerr << "FAIL fast GRC is not faster than the reference path\n";
        ok = false;
    }
    if (report.shift_ops_per_forward != expected_shifts) {
        std::cerr << "FAIL " << report.shift_ops_per_forward << " shifts per forward, expected " << expected_shifts
                  << '\n';
        ok = false;
    }
    const double conv = report.row("conv2d").mean_ms;
    const double fast = report.row("grc_fast").mean_ms;
    std::cerr << "grc_fast / conv2d time ratio: " << fast / conv << '\n';
    return ok ? 0 : kCheckFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Global receptive convolution: oracle checks, benchmarks, training and evaluation"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_path;
    std::map<std::string, std::string> overrides;

    CLI::App* check = app.add_subcommand("check", "run the oracle suite, one PASS/FAIL line per check");
    CLI::App* bench = app.add_subcommand("bench", "time fast vs reference GRC and the plain convolution");
    CLI::App* train = app.add_subcommand("train", "train a network, write checkpoint and metrics.csv");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
    for (CLI::App* cmd : {bench, train, eval}) {
        cmd->add_option("--config", config_path, "flat JSON config")->required()->check(CLI::ExistingFile);
        add_overrides(cmd, overrides);
    }
    train->add_option("--out", out_dir, "output directory")->required();
    eval->add_option("--ckpt", ckpt_path, "checkpoint file")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (check->parsed()) return cmd_check();
        const grc::ExperimentConfig cfg = resolve(config_path, overrides);
        if (bench->parsed()) return cmd_bench(cfg);
        if (train->parsed()) {
            const grc::RunSummary s = grc::run_train(cfg, out_dir, std::cout);
            std::cout << "initial loss " << s.train.initial_loss << ", final loss " << s.train.final_loss << '\n';
            return 0;
        }
        grc::run_eval(cfg, ckpt_path, std::cout);
        return 0;
    } catch (const grc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kCheckFailure;
    }
}
