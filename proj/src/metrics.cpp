#include "tsmixer/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "tsmixer/errors.hpp"

namespace tsmixer {

double rmsse(std::span<const double> forecast, std::span<const double> actual, std::span<const double> history) {
    if (forecast.size() != actual.size() || forecast.empty()) {
        throw Error(ErrorKind::dimension, fmt::format("rmsse needs equal nonempty horizons, got {} and {}",
                                                      forecast.size(), actual.size()));
    }
    std::size_t start = 0;
    while (start < history.size() && history[start] == 0.0) ++start;
    if (history.size() - start < 2) {
        throw Error(ErrorKind::metric, "rmsse needs at least two history values after leading zeros");
    }
    double scale = 0.0;
    for (std::size_t t = start + 1; t < history.size(); ++t) {
        const double d = history[t] - history[t - 1];
        scale += d * d;
    }
    scale /= static_cast<double>(history.size() - start - 1);
    if (scale == 0.0) throw Error(ErrorKind::metric, "rmsse scale is zero (constant history)");
    double err = 0.0;
    for (std::size_t t = 0; t < forecast.size(); ++t) err += (actual[t] - forecast[t]) * (actual[t] - forecast[t]);
    return std::sqrt(err / static_cast<double>(forecast.size()) / scale);
}

void HierarchySpec::validate(std::size_t series) const {
    if (levels.empty()) throw Error(ErrorKind::spec, "hierarchy has no levels");
    for (const auto& level : levels) {
        if (level.group_of.size() < series) {
            throw Error(ErrorKind::spec, fmt::format("level '{}' does not assign base series {} to an aggregate",
                                                     level.name, level.group_of.size()));
        }
        if (level.group_of.size() > series) {
            throw Error(ErrorKind::spec, fmt::format("level '{}' lists {} series but only {} exist", level.name,
                                                     level.group_of.size(), series));
        }
        std::vector<bool> used(level.weights.size(), false);
        for (std::size_t i = 0; i < series; ++i) {
            if (level.group_of[i] >= level.weights.size()) {
                throw Error(ErrorKind::spec, fmt::format("level '{}' maps series {} to aggregate {} without a weight",
                                                         level.name, i, level.group_of[i]));
            }
            used[level.group_of[i]] = true;
        }
        double sum = 0.0;
        for (std::size_t g = 0; g < level.weights.size(); ++g) {
            if (!used[g]) {
                throw Error(ErrorKind::spec, fmt::format("level '{}' aggregate {} has no series", level.name, g));
            }
            if (!(level.weights[g] >= 0.0)) {
                throw Error(ErrorKind::spec, fmt::format("level '{}' weight {} is negative", level.name, g));
            }
            sum += level.weights[g];
        }
        if (std::abs(sum - 1.0) > 1e-9) {
            throw Error(ErrorKind::spec, fmt::format("level '{}' weights sum to {}, not 1", level.name, sum));
        }
    }
}

std::vector<double> weights_from_revenue(std::span<const std::size_t> group_of, std::span<const double> revenue) {
    if (group_of.size() != revenue.size()) {
        throw Error(ErrorKind::dimension, "revenue and group assignment lengths differ");
    }
    std::size_t groups = 0;
    for (std::size_t g : group_of) groups = std::max(groups, g + 1);
    std::vector<double> w(groups, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < revenue.size(); ++i) {
        if (revenue[i] < 0.0) throw Error(ErrorKind::spec, fmt::format("series {} has negative revenue", i));
        w[group_of[i]] += revenue[i];
        total += revenue[i];
    }
    if (!(total > 0.0)) throw Error(ErrorKind::spec, "total revenue must be positive");
    for (double& x : w) x /= total;
    return w;
}

std::vector<SeriesScore> WrmsseReport::worst(std::size_t n) const {
    std::vector<SeriesScore> all;
    for (const auto& level : levels) all.insert(all.end(), level.series.begin(), level.series.end());
    std::stable_sort(all.begin(), all.end(), [](const SeriesScore& a, const SeriesScore& b) {
        return a.weight * a.rmsse > b.weight * b.rmsse;
    });
    if (all.size() > n) all.resize(n);
    return all;
}

WrmsseReport wrmsse(const std::vector<std::vector<double>>& forecasts, const std::vector<std::vector<double>>& actuals,
                    const std::vector<std::vector<double>>& histories, const HierarchySpec& spec) {
    const std::size_t n = forecasts.size();
    if (actuals.size() != n || histories.size() != n) {
        throw Error(ErrorKind::dimension, "forecasts, actuals and histories cover different numbers of series");
    }
    spec.validate(n);
    WrmsseReport report;
    for (const auto& level : spec.levels) {
        const std::size_t groups = level.weights.size();
        std::vector<std::vector<double>> f(groups), a(groups), h(groups);
        for (std::size_t i = 0; i < n; ++i) {
            auto accumulate = [&](std::vector<double>& into, const std::vector<double>& from, std::string_view what) {
                if (into.empty()) {
                    into = from;
                } else if (into.size() != from.size()) {
                    throw Error(ErrorKind::dimension, fmt::format("series {} {} length differs within level '{}'", i,
                                                                  what, level.name));
                } else {
                    for (std::size_t t = 0; t < from.size(); ++t) into[t] += from[t];
                }
            };
            const std::size_t g = level.group_of[i];
            accumulate(f[g], forecasts[i], "forecast");
            accumulate(a[g], actuals[i], "actual");
            accumulate(h[g], histories[i], "history");
        }
        LevelScore ls;
        ls.name = level.name;
        for (std::size_t g = 0; g < groups; ++g) {
            double r = 0.0;
            try {
                r = rmsse(f[g], a[g], h[g]);
            } catch (const Error& e) {
                throw Error(e.kind(), fmt::format("level '{}' aggregate {}: {}", level.name, g, e.what()));
            }
            ls.series.push_back(SeriesScore{level.name, g, level.weights[g], r});
            ls.score += level.weights[g] * r;
        }
        report.score += ls.score;
        report.levels.push_back(std::move(ls));
    }
    report.score /= static_cast<double>(report.levels.size());
    return report;
}

std::string format_report(const WrmsseReport& report, std::size_t worst) {
    std::string out = fmt::format("wrmsse = {}\n", report.score);
    out += "level,score\n";
    for (const auto& level : report.levels) out += fmt::format("{},{}\n", level.name, level.score);
    out += "worst: level,aggregate,weight,rmsse\n";
    for (const auto& s : report.worst(worst)) {
        out += fmt::format("{},{},{},{}\n", s.level, s.aggregate, s.weight, s.rmsse);
    }
    return out;
}

}  // namespace tsmixer
