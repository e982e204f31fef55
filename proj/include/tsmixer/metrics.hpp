#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tsmixer {

/// Root mean squared scaled error. The scale is the mean squared one-step difference
/// of `history` from its first nonzero value on; at least two such values are needed
/// and a constant history raises a metric error.
double rmsse(std::span<const double> forecast, std::span<const double> actual, std::span<const double> history);

/// One aggregation level: base series i belongs to aggregate `group_of[i]`, and
/// aggregate g carries `weights[g]`. Weights are nonnegative and sum to 1.
struct HierarchyLevel {
    std::string name;
    std::vector<std::size_t> group_of;
    std::vector<double> weights;
};

struct HierarchySpec {
    std::vector<HierarchyLevel> levels;

    /// Spec error if a level misses a base series, references an unknown aggregate,
    /// or has weights that do not sum to 1 within 1e-9.
    void validate(std::size_t series) const;
};

/// Revenue share of each aggregate: weights[g] = sum of revenue in g / total revenue.
std::vector<double> weights_from_revenue(std::span<const std::size_t> group_of, std::span<const double> revenue);

struct SeriesScore {
    std::string level;
    std::size_t aggregate = 0;
    double weight = 0.0;
    double rmsse = 0.0;
};

struct LevelScore {
    std::string name;
    double score = 0.0;  // weighted sum of the level's RMSSE values
    std::vector<SeriesScore> series;
};

struct WrmsseReport {
    double score = 0.0;  // mean over levels
    std::vector<LevelScore> levels;

    /// Aggregates with the largest weighted RMSSE, largest first.
    std::vector<SeriesScore> worst(std::size_t n) const;
};

/// Each inner vector holds one base series. Forecasts, actuals and histories are
/// summed within every aggregate before scoring.
WrmsseReport wrmsse(const std::vector<std::vector<double>>& forecasts, const std::vector<std::vector<double>>& actuals,
                    const std::vector<std::vector<double>>& histories, const HierarchySpec& spec);

/// Text report: headline, per-level table, worst offenders.
std::string format_report(const WrmsseReport& report, std::size_t worst = 5);

}  // namespace tsmixer
