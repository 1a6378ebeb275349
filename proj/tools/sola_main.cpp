#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "sola/harness.hpp"

namespace {
struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
            .count();
    }
};
}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sola: hybrid linear/softmax attention backbone toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path;
    std::size_t resolution = 224, steps = 200, max_depth = 64;
    std::vector<std::size_t> resolutions;
    std::uint64_t seed = 0;
    double lr = 0.05, epsilon = 1e-3, rate = 1.0;

    CLI::App* cmd_forward = app.add_subcommand("forward", "build a model and run one forward pass");
    cmd_forward->add_option("--config", config_path, "model config (JSON)")->required();
    cmd_forward->add_option("--resolution", resolution, "square input resolution");
    cmd_forward->add_option("--seed", seed, "initialization / input seed");
    cmd_forward->add_option("--out", out_path, "write the trace as JSON");

    CLI::App* cmd_check = app.add_subcommand("check", "run the bundled oracle and gradient checks");
    cmd_check->add_option("--config", config_path, "model config (JSON)")->required();
    cmd_check->add_option("--out", out_path, "write the report as JSON");

    CLI::App* cmd_bench = app.add_subcommand("bench", "emit the compute-scaling curve");
    cmd_bench->add_option("--config", config_path, "model config (JSON)")->required();
    cmd_bench->add_option("--resolution", resolutions, "resolutions (repeatable)");
    cmd_bench->add_option("--out", out_path, "write the curve as CSV");

    CLI::App* cmd_range = app.add_subcommand("range", "stacked decay-kernel interaction ranges");
    cmd_range->add_option("--w", rate, "decay rate");
    cmd_range->add_option("--epsilon", epsilon, "range tolerance");
    cmd_range->add_option("--max-depth", max_depth, "largest stack depth (powers of two)");
    cmd_range->add_option("--out", out_path, "write the table as CSV");

    CLI::App* cmd_train = app.add_subcommand("train-toy", "gradient-descent trainability probe");
    cmd_train->add_option("--config", config_path, "model config (JSON, <= 0.5M params)")
        ->required();
    cmd_train->add_option("--steps", steps, "gradient steps");
    cmd_train->add_option("--lr", lr, "learning rate");
    cmd_train->add_option("--seed", seed, "task / initialization seed");
    cmd_train->add_option("--out", out_path, "write the report as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    Timer timer;
    try {
        sola::RunReport report;
        if (cmd_forward->parsed()) {
            report = sola::run_forward(config_path, resolution, seed, std::cout, out_path);
        } else if (cmd_check->parsed()) {
            report = sola::run_checks(config_path, std::cout, out_path);
        } else if (cmd_bench->parsed()) {
            if (resolutions.empty()) resolutions = {224, 448, 896};
            report = sola::run_bench(config_path, resolutions, std::cout, out_path);
        } else if (cmd_range->parsed()) {
            report = sola::run_range(rate, epsilon, max_depth, std::cout, out_path);
        } else if (cmd_train->parsed()) {
            report = sola::run_train_toy(config_path, steps, lr, seed, std::cout, out_path);
        }
        report.wall_time_ms = timer.ms();
        std::cerr << "wall time " << report.wall_time_ms << " ms\n";
        if (!report.all_passed()) {
            for (const sola::CheckResult& c : report.checks)
                if (!c.passed) std::cerr << "failed check: " << c.name << '\n';
            return 1;
        }
        return 0;
    } catch (const sola::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
