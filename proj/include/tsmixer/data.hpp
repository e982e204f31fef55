#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsmixer/model.hpp"
#include "tsmixer/rng.hpp"
#include "tsmixer/tensor.hpp"

namespace tsmixer {

enum class ColumnRole { target, covariate, future, static_feature, time, ignore };

std::string_view to_string(ColumnRole role) noexcept;
ColumnRole parse_role(std::string_view text);

/// Column name -> role mapping, read from an INI sidecar with a [columns] section.
struct Schema {
    std::vector<std::pair<std::string, ColumnRole>> columns;

    std::optional<ColumnRole> role(std::string_view name) const;
    static Schema parse(std::istream& in);
    static Schema load(const std::string& path);
    void write(std::ostream& out) const;
};

/// One multivariate series. Numeric columns live in `values` (steps x columns) in
/// file order; `roles` and `names` describe them. The optional time column is kept
/// verbatim for output.
struct SeriesFrame {
    std::vector<std::string> names;
    std::vector<ColumnRole> roles;
    Tensor values;
    std::string time_name;
    std::vector<std::string> time;

    std::size_t steps() const { return values.dim(0); }
    std::size_t count(ColumnRole role) const;
    std::vector<std::size_t> columns(ColumnRole role) const;
    /// steps x k block of the columns with `role`; empty when there are none.
    std::optional<Tensor> gather(ColumnRole role) const;
    SeriesFrame rows(std::size_t begin, std::size_t end) const;
};

/// Parses CSV text: comma separated, header row, '#' lines are comments. Without a
/// schema every column is a target. Missing values and ragged rows are rejected.
SeriesFrame parse_csv(std::istream& in, const std::optional<Schema>& schema, std::string_view source = "<input>");
SeriesFrame load_csv(const std::string& path, const std::optional<Schema>& schema);

/// Writes `frame` as CSV. Each line of `header_comment` is emitted first prefixed by "# ".
void write_csv(std::ostream& out, const SeriesFrame& frame, std::string_view header_comment = {});

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

inline constexpr double scale_epsilon = 1e-8;

/// Per-column mean and population standard deviation (floored at scale_epsilon).
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stdev;

    SeriesFrame apply(const SeriesFrame& frame) const;
    /// Maps a B x T x k block of the given columns back to original units.
    Tensor invert(const Tensor& block, std::span<const std::size_t> columns) const;
};

/// Statistics come from rows [0, train_rows) only. Static columns are left as is.
/// Zero-variance columns produce a warning and map to zero.
std::pair<SeriesFrame, Standardizer> global_standardize(const SeriesFrame& frame, std::size_t train_rows);

/// Divides each (sample, variate) series of a B x L x C batch by its mean over time.
/// Series with a nonpositive mean keep scale 1 (with a warning). Scales are B x 1 x C.
std::pair<Tensor, Tensor> mean_scale_local(const Tensor& batch);

// ---------------------------------------------------------------------------
// Windows and splits
// ---------------------------------------------------------------------------

struct WindowSpec {
    std::size_t L = 0;
    std::size_t T = 0;
    std::size_t stride = 1;
};

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool operator==(const RowRange&) const = default;
};

/// History covers rows [start, start + L); the targets the next T rows.
struct Window {
    std::size_t start = 0;
    Tensor history;                 // L x (C + C_x): targets, then covariates
    std::optional<Tensor> future;   // T x C_z
    std::optional<Tensor> statics;  // 1 x C_s
    Tensor target;                  // T x C
};

/// Sliding windows whose targets fall inside `targets` (defaults to the whole frame).
/// History may reach back before `targets.begin`. An infeasible range yields no
/// windows and a warning.
std::vector<Window> make_windows(const SeriesFrame& frame, const WindowSpec& spec,
                                 std::optional<RowRange> targets = std::nullopt);

struct WindowBatch {
    ModelInput input;
    Tensor target;  // B x T x C
};

WindowBatch collate(std::span<const Window> windows, std::span<const std::size_t> indices);
WindowBatch collate(std::span<const Window> windows);

/// Either train/val/test fractions summing to 1 or explicit row ranges.
struct SplitSpec {
    std::optional<std::array<double, 3>> fractions;
    std::optional<std::array<RowRange, 3>> ranges;
};

struct Split {
    std::array<RowRange, 3> ranges;
    std::array<SeriesFrame, 3> parts;
};

/// Chronological split. Fractional sizes are rounded for train and validation; test
/// takes the remainder.
Split split(const SeriesFrame& frame, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

enum class PeriodicShape { sinusoid, template_repeat };

/// `variates` columns, each P-periodic: a random-phase sinusoid or a repeated random
/// template of length P.
SeriesFrame synth_periodic(std::size_t P, std::size_t steps, double amplitude, Rng& rng, std::size_t variates = 1,
                           PeriodicShape shape = PeriodicShape::sinusoid);

/// x(t) = a x(t - P) + c after a random first period.
SeriesFrame synth_affine_periodic(std::size_t P, double a, double c, std::size_t steps, Rng& rng);

/// Periodic template plus a random walk whose steps are clipped to [-K, K].
/// Columns: "value" (the sum), with the parts returned through the optional outputs.
SeriesFrame synth_periodic_plus_trend(std::size_t P, double K, std::size_t steps, Rng& rng,
                                      std::vector<double>* periodic = nullptr, std::vector<double>* trend = nullptr);

/// Driver d(t) is white noise; target(t) = h(d(t - lag)) + noise * e(t) with
/// h(x) = sin(2x) + x / 2. The driver is a covariate column, the target a target column.
SeriesFrame synth_crossvariate(std::size_t steps, std::size_t lag, double noise, Rng& rng);
double crossvariate_link(double driver);

}  // namespace tsmixer
