#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tsmixer/data.hpp"
#include "tsmixer/model.hpp"
#include "tsmixer/training.hpp"

namespace tsmixer::app {

struct DataConfig {
    std::string path;
    std::string schema;  // empty: use "<stem>.schema.ini" next to the data if present
    std::optional<std::array<double, 3>> fractions = std::array{0.7, 0.2, 0.1};
    std::optional<std::array<RowRange, 3>> ranges;
    bool standardize = true;
    std::size_t stride = 1;
};

/// Everything one `train` run needs. Variate counts in `model` are filled in from the
/// dataset, so the file only sets architecture and optimization knobs.
struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    std::string out = "tsmixer-run";
    std::uint64_t seed = 0;
};

/// Parses INI text with [data], [model], [train] and [run] sections. Unknown keys and
/// unparsable values raise config errors naming "section.key".
ExperimentConfig parse_experiment(std::istream& in);
ExperimentConfig load_experiment(const std::string& path);

/// Every key with its resolved value, in a stable order.
std::string format_experiment(const ExperimentConfig& config);

/// Field-level checks that do not need the dataset.
void validate(const ExperimentConfig& config);

/// Value parsers shared by the config and checkpoint readers; errors name `key`.
std::size_t parse_size(const std::string& key, const std::string& text);
double parse_number(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);
std::vector<std::string> parse_list(const std::string& text, char separator = ',');

/// Schema path actually used for `data`, or empty for none.
std::string resolve_schema_path(const DataConfig& data);

}  // namespace tsmixer::app
