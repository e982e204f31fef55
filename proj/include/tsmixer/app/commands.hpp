#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "tsmixer/app/config.hpp"

namespace tsmixer::app {

/// Trains and writes checkpoint.ini, checkpoint.params, history.csv and
/// resolved_config.ini into `config.out`. A one-line summary goes to `log`.
void cmd_train(const ExperimentConfig& config, std::ostream& log);

struct EvaluateOptions {
    std::string checkpoint;  // directory written by train
    std::string data;
    std::string schema;      // optional; defaults to the checkpoint's column roles
    std::string hierarchy;   // optional INI with [level.<name>] groups/weights
    std::string partition = "all";  // all, train, val or test (using the checkpoint's split)
    std::optional<std::uint64_t> seed;
};

/// Metric report: MSE and MAE in model units, WRMSSE in original units when a
/// hierarchy is given.
std::string cmd_evaluate(const EvaluateOptions& options);

struct ForecastOptions {
    std::string checkpoint;
    std::string history;
    std::string future;  // CSV with T rows of future covariates when the model uses them
    std::optional<std::uint64_t> seed;
};

/// Forecast CSV for the T steps after the last history row, in original units.
std::string cmd_forecast(const ForecastOptions& options);

struct SynthOptions {
    std::string kind = "periodic";  // periodic, affine, trend, crossvariate
    std::size_t steps = 1000;
    std::size_t period = 24;
    double amplitude = 1.0;
    double a = 1.0;
    double c = 0.0;
    double K = 0.1;
    std::size_t lag = 4;
    double noise = 0.1;
    std::size_t variates = 1;
    std::string shape = "sinusoid";  // sinusoid or template
    std::uint64_t seed = 0;
};

/// Generated series as CSV text and the matching schema sidecar text.
std::pair<std::string, std::string> cmd_synth(const SynthOptions& options);

struct VerifyOptions {
    std::size_t P = 24;
    std::size_t L = 48;
    std::size_t T = 24;
    double K = 0.1;
    std::size_t trials = 100;
    bool corrupt = false;  // perturb the constructed weights as a negative control
    std::uint64_t seed = 0;
};

struct VerifyResult {
    bool passed = true;
    std::string report;
};

VerifyResult cmd_verify_theory(const VerifyOptions& options);

/// Writes `text` to `path`, replacing any existing file.
void write_text_file(const std::string& path, const std::string& text);

}  // namespace tsmixer::app
