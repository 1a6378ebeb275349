#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sola/backbone.hpp"

namespace sola {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct RunReport {
    std::string command;
    std::string config_digest;
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<CheckResult> checks;
    double wall_time_ms = 0.0;  // excluded from the determinism contract

    bool all_passed() const;
    void add_metric(const std::string& name, double value) { metrics.emplace_back(name, value); }
    std::string to_json_string() const;
    /// Deterministic text form (omits wall time).
    void print(std::ostream& os) const;
};

/// Synthetic two-class long-range probe: 32x32x3 images, class 0 a single
/// bright blob, class 1 two blobs at distance >= 16 px. Balanced and
/// deterministic per seed.
struct ToyTask {
    std::vector<Tensor> images;
    std::vector<int> labels;
};

ToyTask make_toy_task(std::size_t per_class, std::uint64_t seed);

struct ToyTrainResult {
    std::vector<double> step_losses;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double train_accuracy = 0.0;
};

/// Attaches a zero-initialized pooled linear 2-class head and runs plain
/// fixed-rate full-batch gradient descent on cross-entropy over the task.
ToyTrainResult train_toy(Backbone& model, const ToyTask& task, std::size_t steps, double lr);

/// The micro preset (dims 8/8/16/16, patterns L/L/LSL/LS, one bridge route)
/// used by the bundled gradient checks.
BackboneConfig micro_config();

std::string trace_to_json(const ForwardTrace& trace, const BackboneConfig& cfg);

// ---- command implementations (the CLI wraps these) ----------------------

RunReport run_forward(const std::string& config_path, std::size_t resolution, std::uint64_t seed,
                      std::ostream& out, const std::string& out_path);
RunReport run_checks(const std::string& config_path, std::ostream& out,
                     const std::string& out_path);
RunReport run_bench(const std::string& config_path, const std::vector<std::size_t>& resolutions,
                    std::ostream& out, const std::string& out_path);
RunReport run_range(double rate, double eps, std::size_t max_depth, std::ostream& out,
                    const std::string& out_path);
RunReport run_train_toy(const std::string& config_path, std::size_t steps, double lr,
                        std::uint64_t seed, std::ostream& out, const std::string& out_path);

}  // namespace sola
