#pragma once

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"

namespace emgtf::cli {

/// Exit statuses of the emgtfnet tool.
enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kDataError = 3, kNumericError = 4 };

int exit_code_for(const std::exception& e);

/// Recordings named by the config, or generated from data.synth.
std::vector<RecordingSession> load_sessions(const ExperimentConfig& config);

/// Split-tagged windows: read from data.windows when set, otherwise
/// preprocessed from the sessions. Throws DataError when nothing remains.
WindowSet load_windows(const ExperimentConfig& config);

struct LatencyReport {
    std::size_t runs = 0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    double mean_ms = 0.0;
    double decision_ms = 150.0;  // controller decision interval added to tau
    double budget_ms = 300.0;

    double total_ms() const { return decision_ms + median_ms; }
    bool pass() const { return total_ms() < budget_ms; }
    nlohmann::ordered_json to_json() const;
};

/// Times single-window inference after `warmup` untimed calls.
LatencyReport measure_latency(EmgtfNet<float>& model, std::size_t runs, std::size_t warmup = 50,
                              std::uint64_t seed = 0);

/// Runs one emgtfnet invocation; argv[0] is the program name.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace emgtf::cli
