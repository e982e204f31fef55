#include "tsmixer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "tsmixer/errors.hpp"

namespace tsmixer {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t comma = line.find(',', pos);
        out.push_back(trim(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

bool parse_double(std::string_view text, double& out) {
    if (text.empty()) return false;
    if (text.front() == '+') text.remove_prefix(1);
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

}  // namespace

std::string_view to_string(ColumnRole role) noexcept {
    switch (role) {
        case ColumnRole::target: return "target";
        case ColumnRole::covariate: return "covariate";
        case ColumnRole::future: return "future";
        case ColumnRole::static_feature: return "static";
        case ColumnRole::time: return "time";
        case ColumnRole::ignore: return "ignore";
    }
    return "?";
}

ColumnRole parse_role(std::string_view text) {
    for (ColumnRole r : {ColumnRole::target, ColumnRole::covariate, ColumnRole::future, ColumnRole::static_feature,
                         ColumnRole::time, ColumnRole::ignore}) {
        if (text == to_string(r)) return r;
    }
    throw Error(ErrorKind::schema,
                fmt::format("unknown column role '{}' (target, covariate, future, static, time, ignore)", text));
}

std::optional<ColumnRole> Schema::role(std::string_view name) const {
    for (const auto& [n, r] : columns) {
        if (n == name) return r;
    }
    return std::nullopt;
}

Schema Schema::parse(std::istream& in) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::parse, fmt::format("schema line {}: {}", e.line(), e.message()));
    }
    const auto section = tree.get_child_optional("columns");
    if (!section) throw Error(ErrorKind::schema, "schema has no [columns] section");
    Schema s;
    std::size_t times = 0;
    for (const auto& [name, node] : *section) {
        s.columns.emplace_back(name, parse_role(trim(node.data())));
        if (s.columns.back().second == ColumnRole::time) ++times;
    }
    if (times > 1) throw Error(ErrorKind::schema, "schema declares more than one time column");
    return s;
}

Schema Schema::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open schema '{}'", path));
    return parse(in);
}

void Schema::write(std::ostream& out) const {
    out << "[columns]\n";
    for (const auto& [name, role] : columns) out << name << " = " << to_string(role) << '\n';
}

std::size_t SeriesFrame::count(ColumnRole role) const {
    return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), role));
}

std::vector<std::size_t> SeriesFrame::columns(ColumnRole role) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < roles.size(); ++i) {
        if (roles[i] == role) out.push_back(i);
    }
    return out;
}

std::optional<Tensor> SeriesFrame::gather(ColumnRole role) const {
    const auto cols = columns(role);
    if (cols.empty()) return std::nullopt;
    Tensor out(Shape{steps(), cols.size()});
    for (std::size_t t = 0; t < steps(); ++t) {
        for (std::size_t k = 0; k < cols.size(); ++k) out(t, k) = values(t, cols[k]);
    }
    return out;
}

SeriesFrame SeriesFrame::rows(std::size_t begin, std::size_t end) const {
    SeriesFrame out;
    out.names = names;
    out.roles = roles;
    out.values = slice_rows(values, begin, end);
    out.time_name = time_name;
    if (!time.empty()) out.time.assign(time.begin() + static_cast<std::ptrdiff_t>(begin),
                                       time.begin() + static_cast<std::ptrdiff_t>(end));
    return out;
}

SeriesFrame parse_csv(std::istream& in, const std::optional<Schema>& schema, std::string_view source) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        for (auto f : split_fields(t)) header.emplace_back(f);
        break;
    }
    if (header.empty()) throw Error(ErrorKind::parse, fmt::format("{}: missing header row", source));

    std::vector<ColumnRole> file_roles;
    for (const auto& name : header) {
        if (!schema) {
            file_roles.push_back(ColumnRole::target);
            continue;
        }
        const auto r = schema->role(name);
        if (!r) {
            throw Error(ErrorKind::schema,
                        fmt::format("{}: column '{}' has no role in the schema (use 'ignore' to skip it)", source, name));
        }
        file_roles.push_back(*r);
    }
    if (schema) {
        for (const auto& [name, role] : schema->columns) {
            if (std::find(header.begin(), header.end(), name) == header.end()) {
                throw Error(ErrorKind::schema, fmt::format("{}: declared column '{}' is missing", source, name));
            }
        }
    }

    SeriesFrame frame;
    std::vector<std::size_t> numeric;
    std::size_t time_col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (file_roles[i] == ColumnRole::time) {
            time_col = i;
            frame.time_name = header[i];
        } else if (file_roles[i] != ColumnRole::ignore) {
            numeric.push_back(i);
            frame.names.push_back(header[i]);
            frame.roles.push_back(file_roles[i]);
        }
    }
    if (frame.count(ColumnRole::target) == 0) {
        throw Error(ErrorKind::schema, fmt::format("{}: no target column", source));
    }

    std::vector<double> data;
    std::size_t steps = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto fields = split_fields(t);
        if (fields.size() != header.size()) {
            throw Error(ErrorKind::parse, fmt::format("{} line {}: expected {} fields, found {}", source, line_no,
                                                      header.size(), fields.size()));
        }
        for (std::size_t i : numeric) {
            double v = 0.0;
            if (fields[i].empty()) {
                throw Error(ErrorKind::parse,
                            fmt::format("{} line {}: missing value in column '{}'", source, line_no, header[i]));
            }
            if (!parse_double(fields[i], v)) {
                throw Error(ErrorKind::parse, fmt::format("{} line {}: cannot parse '{}' in column '{}' as a number",
                                                          source, line_no, fields[i], header[i]));
            }
            data.push_back(v);
        }
        if (time_col < header.size()) {
            const std::string stamp(fields[time_col]);
            if (!frame.time.empty()) {
                double a = 0, b = 0;
                const bool out_of_order = (parse_double(stamp, a) && parse_double(frame.time.back(), b))
                                              ? a < b
                                              : stamp < frame.time.back();
                if (out_of_order) {
                    throw Error(ErrorKind::parse,
                                fmt::format("{} line {}: rows are not in timestamp order", source, line_no));
                }
            }
            frame.time.push_back(stamp);
        }
        ++steps;
    }
    if (steps == 0) throw Error(ErrorKind::parse, fmt::format("{}: no data rows", source));
    frame.values = Tensor(Shape{steps, numeric.size()}, std::move(data));

    for (std::size_t c : frame.columns(ColumnRole::static_feature)) {
        for (std::size_t t = 1; t < steps; ++t) {
            if (frame.values(t, c) != frame.values(0, c)) {
                throw Error(ErrorKind::schema,
                            fmt::format("{}: static column '{}' changes over time", source, frame.names[c]));
            }
        }
    }
    return frame;
}

SeriesFrame load_csv(const std::string& path, const std::optional<Schema>& schema) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path));
    return parse_csv(in, schema, path);
}

void write_csv(std::ostream& out, const SeriesFrame& frame, std::string_view header_comment) {
    std::istringstream comment{std::string(header_comment)};
    std::string line;
    while (std::getline(comment, line)) out << "# " << line << '\n';
    const bool has_time = !frame.time.empty();
    if (has_time) out << frame.time_name;
    for (std::size_t i = 0; i < frame.names.size(); ++i) out << (i > 0 || has_time ? "," : "") << frame.names[i];
    out << '\n';
    for (std::size_t t = 0; t < frame.steps(); ++t) {
        if (has_time) out << frame.time[t];
        for (std::size_t i = 0; i < frame.names.size(); ++i) {
            out << (i > 0 || has_time ? "," : "") << fmt::format("{}", frame.values(t, i));
        }
        out << '\n';
    }
}

SeriesFrame Standardizer::apply(const SeriesFrame& frame) const {
    SeriesFrame out = frame;
    for (std::size_t t = 0; t < out.steps(); ++t) {
        for (std::size_t c = 0; c < out.names.size(); ++c) out.values(t, c) = (out.values(t, c) - mean[c]) / stdev[c];
    }
    return out;
}

Tensor Standardizer::invert(const Tensor& block, std::span<const std::size_t> columns) const {
    const std::size_t k = block.dim(block.rank() - 1);
    if (k != columns.size()) {
        throw Error(ErrorKind::dimension,
                    fmt::format("block has {} columns, {} column indices given", k, columns.size()));
    }
    Tensor out = block;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t c = columns[i % k];
        out[i] = out[i] * stdev[c] + mean[c];
    }
    return out;
}

std::pair<SeriesFrame, Standardizer> global_standardize(const SeriesFrame& frame, std::size_t train_rows) {
    if (train_rows == 0 || train_rows > frame.steps()) {
        throw Error(ErrorKind::config, fmt::format("standardization needs 1..{} training rows, got {}", frame.steps(),
                                                   train_rows));
    }
    const std::size_t cols = frame.names.size();
    Standardizer s{std::vector<double>(cols, 0.0), std::vector<double>(cols, 1.0)};
    for (std::size_t c = 0; c < cols; ++c) {
        if (frame.roles[c] == ColumnRole::static_feature) continue;
        double mu = 0.0;
        for (std::size_t t = 0; t < train_rows; ++t) mu += frame.values(t, c);
        mu /= static_cast<double>(train_rows);
        double var = 0.0;
        for (std::size_t t = 0; t < train_rows; ++t) var += (frame.values(t, c) - mu) * (frame.values(t, c) - mu);
        var /= static_cast<double>(train_rows);
        double sd = std::sqrt(var);
        if (sd < scale_epsilon) {
            warn(fmt::format("column '{}' is constant on the training rows; it standardizes to zero", frame.names[c]));
            sd = scale_epsilon;
        }
        s.mean[c] = mu;
        s.stdev[c] = sd;
    }
    return {s.apply(frame), s};
}

std::pair<Tensor, Tensor> mean_scale_local(const Tensor& batch) {
    if (batch.rank() != 3) {
        throw Error(ErrorKind::rank, fmt::format("mean scaling expects BxLxC, got {}", batch.shape().str()));
    }
    const std::size_t B = batch.dim(0), L = batch.dim(1), C = batch.dim(2);
    Tensor scales(Shape{B, 1, C}, 1.0);
    Tensor out = batch;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (std::size_t t = 0; t < L; ++t) m += batch(b, t, c);
            m /= static_cast<double>(L);
            if (!(m > 0.0)) {
                warn(fmt::format("series {} variate {} has nonpositive mean {}; using scale 1", b, c, m));
                continue;
            }
            scales(b, 0, c) = m;
            for (std::size_t t = 0; t < L; ++t) out(b, t, c) = batch(b, t, c) / m;
        }
    }
    return {out, scales};
}

std::vector<Window> make_windows(const SeriesFrame& frame, const WindowSpec& spec, std::optional<RowRange> targets) {
    if (spec.L == 0 || spec.T == 0 || spec.stride == 0) {
        throw Error(ErrorKind::config, "window L, T and stride must all be at least 1");
    }
    const RowRange range = targets.value_or(RowRange{0, frame.steps()});
    if (range.begin > range.end || range.end > frame.steps()) {
        throw Error(ErrorKind::config, fmt::format("target rows [{}, {}) outside a frame of {} steps", range.begin,
                                                   range.end, frame.steps()));
    }
    const std::size_t first = range.begin >= spec.L ? range.begin - spec.L : 0;
    std::vector<Window> out;
    if (range.end < first + spec.L + spec.T) {
        warn(fmt::format("{} rows cannot hold a window of L={} T={}; no windows produced", range.end - first, spec.L,
                         spec.T));
        return out;
    }
    const auto target_cols = frame.columns(ColumnRole::target);
    auto history_cols = target_cols;
    for (std::size_t c : frame.columns(ColumnRole::covariate)) history_cols.push_back(c);
    const auto future_cols = frame.columns(ColumnRole::future);
    const auto static_cols = frame.columns(ColumnRole::static_feature);

    auto block = [&](std::size_t begin, std::size_t rows, const std::vector<std::size_t>& cols) {
        Tensor t(Shape{rows, cols.size()});
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t k = 0; k < cols.size(); ++k) t(r, k) = frame.values(begin + r, cols[k]);
        }
        return t;
    };

    const std::size_t count = (range.end - first - spec.L - spec.T) / spec.stride + 1;
    out.reserve(count);
    for (std::size_t n = 0; n < count; ++n) {
        const std::size_t s = first + n * spec.stride;
        Window w;
        w.start = s;
        w.history = block(s, spec.L, history_cols);
        w.target = block(s + spec.L, spec.T, target_cols);
        if (!future_cols.empty()) w.future = block(s + spec.L, spec.T, future_cols);
        if (!static_cols.empty()) w.statics = block(s, 1, static_cols);
        out.push_back(std::move(w));
    }
    return out;
}

WindowBatch collate(std::span<const Window> windows, std::span<const std::size_t> indices) {
    if (indices.empty()) throw Error(ErrorKind::precondition, "cannot collate an empty batch");
    std::vector<Tensor> hist, fut, stat, tgt;
    for (std::size_t i : indices) {
        const Window& w = windows[i];
        hist.push_back(w.history);
        tgt.push_back(w.target);
        if (w.future) fut.push_back(*w.future);
        if (w.statics) stat.push_back(*w.statics);
    }
    WindowBatch b;
    b.input.history = stack(hist);
    b.target = stack(tgt);
    if (!fut.empty()) b.input.future = stack(fut);
    if (!stat.empty()) b.input.statics = stack(stat);
    return b;
}

WindowBatch collate(std::span<const Window> windows) {
    std::vector<std::size_t> idx(windows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return collate(windows, idx);
}

Split split(const SeriesFrame& frame, const SplitSpec& spec) {
    const std::size_t n = frame.steps();
    Split out;
    if (spec.fractions) {
        const auto& f = *spec.fractions;
        if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9 || f[0] < 0 || f[1] < 0 || f[2] < 0) {
            throw Error(ErrorKind::config, fmt::format("split fractions must be nonnegative and sum to 1, got {}:{}:{}",
                                                       f[0], f[1], f[2]));
        }
        const auto train = static_cast<std::size_t>(std::llround(f[0] * static_cast<double>(n)));
        const auto val = std::min(n - std::min(train, n),
                                  static_cast<std::size_t>(std::llround(f[1] * static_cast<double>(n))));
        out.ranges = {RowRange{0, train}, RowRange{train, train + val}, RowRange{train + val, n}};
    } else if (spec.ranges) {
        out.ranges = *spec.ranges;
        for (std::size_t i = 0; i < 3; ++i) {
            const RowRange& r = out.ranges[i];
            if (r.begin > r.end || r.end > n || (i > 0 && r.begin < out.ranges[i - 1].end)) {
                throw Error(ErrorKind::config, "split ranges must be ordered, disjoint and inside the frame");
            }
        }
    } else {
        throw Error(ErrorKind::config, "split needs fractions or ranges");
    }
    static constexpr std::array<std::string_view, 3> names{"train", "validation", "test"};
    for (std::size_t i = 0; i < 3; ++i) {
        if (out.ranges[i].size() == 0) {
            throw Error(ErrorKind::config, fmt::format("{} partition is empty", names[i]));
        }
        out.parts[i] = frame.rows(out.ranges[i].begin, out.ranges[i].end);
    }
    return out;
}

namespace {

SeriesFrame numbered_frame(std::size_t steps, std::vector<std::string> names, std::vector<ColumnRole> roles) {
    SeriesFrame f;
    f.names = std::move(names);
    f.roles = std::move(roles);
    f.values = Tensor(Shape{steps, f.names.size()});
    f.time_name = "t";
    f.time.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) f.time.push_back(std::to_string(t));
    return f;
}

void require_period(std::size_t P, std::size_t steps) {
    if (P == 0) throw Error(ErrorKind::precondition, "period P must be at least 1");
    if (steps == 0) throw Error(ErrorKind::precondition, "steps must be at least 1");
}

}  // namespace

SeriesFrame synth_periodic(std::size_t P, std::size_t steps, double amplitude, Rng& rng, std::size_t variates,
                           PeriodicShape shape) {
    require_period(P, steps);
    std::vector<std::string> names;
    for (std::size_t v = 0; v < variates; ++v) names.push_back(variates == 1 ? "value" : fmt::format("value{}", v));
    SeriesFrame f = numbered_frame(steps, std::move(names), std::vector<ColumnRole>(variates, ColumnRole::target));
    for (std::size_t v = 0; v < variates; ++v) {
        std::vector<double> period(P);
        if (shape == PeriodicShape::sinusoid) {
            const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
            for (std::size_t k = 0; k < P; ++k) {
                period[k] = amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(k) /
                                                     static_cast<double>(P) +
                                                 phase);
            }
        } else {
            for (double& x : period) x = amplitude * rng.uniform(-1.0, 1.0);
        }
        for (std::size_t t = 0; t < steps; ++t) f.values(t, v) = period[t % P];
    }
    return f;
}

SeriesFrame synth_affine_periodic(std::size_t P, double a, double c, std::size_t steps, Rng& rng) {
    require_period(P, steps);
    SeriesFrame f = numbered_frame(steps, {"value"}, {ColumnRole::target});
    for (std::size_t t = 0; t < steps; ++t) {
        f.values(t, 0) = t < P ? rng.uniform(-1.0, 1.0) : a * f.values(t - P, 0) + c;
    }
    return f;
}

SeriesFrame synth_periodic_plus_trend(std::size_t P, double K, std::size_t steps, Rng& rng,
                                      std::vector<double>* periodic, std::vector<double>* trend) {
    require_period(P, steps);
    if (K < 0) throw Error(ErrorKind::precondition, "Lipschitz constant K must be nonnegative");
    std::vector<double> g(steps), h(steps);
    std::vector<double> period(P);
    for (double& x : period) x = rng.uniform(-1.0, 1.0);
    double level = rng.uniform(-1.0, 1.0);
    for (std::size_t t = 0; t < steps; ++t) {
        g[t] = period[t % P];
        if (t > 0) level += std::clamp(K * rng.normal(), -K, K);
        h[t] = level;
    }
    SeriesFrame f = numbered_frame(steps, {"value"}, {ColumnRole::target});
    for (std::size_t t = 0; t < steps; ++t) f.values(t, 0) = g[t] + h[t];
    if (periodic) *periodic = std::move(g);
    if (trend) *trend = std::move(h);
    return f;
}

double crossvariate_link(double driver) { return std::sin(2.0 * driver) + 0.5 * driver; }

SeriesFrame synth_crossvariate(std::size_t steps, std::size_t lag, double noise, Rng& rng) {
    if (lag == 0) throw Error(ErrorKind::precondition, "crossvariate lag must be at least 1");
    if (steps <= lag) throw Error(ErrorKind::precondition, "crossvariate series needs more steps than the lag");
    SeriesFrame f = numbered_frame(steps, {"driver", "target"}, {ColumnRole::covariate, ColumnRole::target});
    for (std::size_t t = 0; t < steps; ++t) f.values(t, 0) = rng.normal();
    for (std::size_t t = 0; t < steps; ++t) {
        const double base = t >= lag ? crossvariate_link(f.values(t - lag, 0)) : 0.0;
        f.values(t, 1) = base + noise * rng.normal();
    }
    return f;
}

}  // namespace tsmixer
