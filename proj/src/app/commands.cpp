#include "tsmixer/app/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "tsmixer/errors.hpp"
#include "tsmixer/losses.hpp"
#include "tsmixer/metrics.hpp"
#include "tsmixer/serialize.hpp"
#include "tsmixer/theory.hpp"
#include "tsmixer/version.hpp"

namespace tsmixer::app {

namespace {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

constexpr std::size_t predict_batch = 256;

// What train leaves behind besides the weights: enough to rebuild the model and map
// data into and out of model units.
struct Checkpoint {
    ModelConfig model;
    std::uint64_t seed = 0;
    std::vector<std::string> names;
    std::vector<ColumnRole> roles;
    std::string time_name;
    bool standardize = true;
    Standardizer scaler;
    SplitSpec split;
    std::size_t stride = 1;
};

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
    return out;
}

std::string join_numbers(const std::vector<double>& values) {
    std::vector<std::string> items;
    for (double v : values) items.push_back(fmt::format("{}", v));
    return join(items);
}

std::vector<double> numbers(const std::string& key, const std::string& text) {
    std::vector<double> out;
    for (const auto& item : parse_list(text)) out.push_back(parse_number(key, item));
    return out;
}

std::string format_split(const SplitSpec& s) {
    if (s.ranges) {
        const auto& r = *s.ranges;
        return fmt::format("split_rows = {}:{},{}:{},{}:{}\n", r[0].begin, r[0].end, r[1].begin, r[1].end, r[2].begin,
                           r[2].end);
    }
    const auto& f = *s.fractions;
    return fmt::format("split = {},{},{}\n", f[0], f[1], f[2]);
}

std::string format_checkpoint(const Checkpoint& c) {
    std::vector<std::string> roles;
    for (ColumnRole r : c.roles) roles.emplace_back(to_string(r));
    const ModelConfig& m = c.model;
    std::string s = fmt::format("; {}\n", provenance(c.seed));
    s += "[model]\n";
    s += fmt::format("family = {}\nlookback = {}\nhorizon = {}\n", to_string(m.family), m.L, m.T);
    s += fmt::format("targets = {}\ncovariates = {}\nfuture = {}\nstatics = {}\n", m.C, m.C_x, m.C_z, m.C_s);
    s += fmt::format("hidden = {}\nblocks = {}\ndropout = {}\n", m.hidden, m.blocks, m.dropout);
    s += fmt::format("norm = {}\nplacement = {}\n", to_string(m.norm), to_string(m.placement));
    s += fmt::format("head = {}\nrev_in = {}\n", to_string(m.head), m.rev_in);
    s += "\n[data]\n";
    s += fmt::format("columns = {}\nroles = {}\ntime = {}\n", join(c.names), join(roles), c.time_name);
    s += fmt::format("standardize = {}\n", c.standardize);
    s += fmt::format("mean = {}\nstdev = {}\n", join_numbers(c.scaler.mean), join_numbers(c.scaler.stdev));
    s += format_split(c.split);
    s += fmt::format("stride = {}\n", c.stride);
    s += "\n[run]\n";
    s += fmt::format("seed = {}\n", c.seed);
    return s;
}

Checkpoint read_checkpoint_ini(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::state, fmt::format("cannot open checkpoint '{}'", path.string()));
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::state, fmt::format("checkpoint '{}' line {}: {}", path.string(), e.line(), e.message()));
    }
    auto get = [&](const std::string& key) {
        const auto v = tree.get_optional<std::string>(key);
        if (!v) throw Error(ErrorKind::state, fmt::format("checkpoint '{}' lacks {}", path.string(), key));
        return *v;
    };
    Checkpoint c;
    try {
        ModelConfig& m = c.model;
        m.family = parse_family(get("model.family"));
        m.L = parse_size("model.lookback", get("model.lookback"));
        m.T = parse_size("model.horizon", get("model.horizon"));
        m.C = parse_size("model.targets", get("model.targets"));
        m.C_x = parse_size("model.covariates", get("model.covariates"));
        m.C_z = parse_size("model.future", get("model.future"));
        m.C_s = parse_size("model.statics", get("model.statics"));
        m.hidden = parse_size("model.hidden", get("model.hidden"));
        m.blocks = parse_size("model.blocks", get("model.blocks"));
        m.dropout = parse_number("model.dropout", get("model.dropout"));
        m.norm = parse_norm_kind(get("model.norm"));
        m.placement = parse_norm_placement(get("model.placement"));
        m.head = parse_head(get("model.head"));
        m.rev_in = parse_bool("model.rev_in", get("model.rev_in"));
        m.validate();
        c.names = parse_list(get("data.columns"));
        for (const auto& r : parse_list(get("data.roles"))) c.roles.push_back(parse_role(r));
        c.time_name = get("data.time");
        c.standardize = parse_bool("data.standardize", get("data.standardize"));
        c.scaler.mean = numbers("data.mean", get("data.mean"));
        c.scaler.stdev = numbers("data.stdev", get("data.stdev"));
        if (const auto rows = tree.get_optional<std::string>("data.split_rows")) {
            std::array<RowRange, 3> r;
            const auto parts = parse_list(*rows);
            if (parts.size() != 3) throw Error(ErrorKind::state, "data.split_rows needs three ranges");
            for (std::size_t i = 0; i < 3; ++i) {
                const auto ends = parse_list(parts[i], ':');
                if (ends.size() != 2) throw Error(ErrorKind::state, "data.split_rows needs begin:end ranges");
                r[i] = RowRange{parse_size("data.split_rows", ends[0]), parse_size("data.split_rows", ends[1])};
            }
            c.split.ranges = r;
        } else {
            const auto f = numbers("data.split", get("data.split"));
            if (f.size() != 3) throw Error(ErrorKind::state, "data.split needs three fractions");
            c.split.fractions = std::array{f[0], f[1], f[2]};
        }
        c.stride = parse_size("data.stride", get("data.stride"));
        c.seed = parse_size("run.seed", get("run.seed"));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::state) throw;
        throw Error(ErrorKind::state, fmt::format("checkpoint '{}': {}", path.string(), e.what()));
    }
    const std::size_t n = c.names.size();
    if (c.roles.size() != n || c.scaler.mean.size() != n || c.scaler.stdev.size() != n) {
        throw Error(ErrorKind::state, fmt::format("checkpoint '{}': column lists differ in length", path.string()));
    }
    return c;
}

std::pair<Checkpoint, Model> open_checkpoint(const std::string& dir) {
    const fs::path root(dir);
    Checkpoint c = read_checkpoint_ini(root / "checkpoint.ini");
    Model model(c.model, c.seed);
    model.load_parameters(load_parameters(root / "checkpoint.params").params);
    return {std::move(c), std::move(model)};
}

Schema checkpoint_schema(const Checkpoint& c) {
    Schema s;
    if (!c.time_name.empty()) s.columns.emplace_back(c.time_name, ColumnRole::time);
    for (std::size_t i = 0; i < c.names.size(); ++i) s.columns.emplace_back(c.names[i], c.roles[i]);
    return s;
}

void require_matching_columns(const SeriesFrame& frame, const Checkpoint& c, const std::string& source) {
    if (frame.names != c.names || frame.roles != c.roles) {
        std::vector<std::string> roles;
        for (ColumnRole r : frame.roles) roles.emplace_back(to_string(r));
        throw Error(ErrorKind::dimension,
                    fmt::format("'{}' has columns [{}] with roles [{}]; the checkpoint expects columns [{}]", source,
                                join(frame.names), join(roles), join(c.names)));
    }
}

SeriesFrame load_for_checkpoint(const std::string& path, const Schema& schema, const Checkpoint& c) {
    SeriesFrame frame;
    try {
        frame = load_csv(path, schema);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::schema) throw;
        throw Error(ErrorKind::dimension, fmt::format("'{}' does not fit: the checkpoint expects columns [{}]; {}",
                                                      path, join(c.names), e.what()));
    }
    require_matching_columns(frame, c, path);
    return frame;
}

// Column counts from the frame, with the cross-field rules that need them.
ModelConfig resolve_model(ModelConfig m, const SeriesFrame& frame) {
    m.C = frame.count(ColumnRole::target);
    m.C_x = frame.count(ColumnRole::covariate);
    m.C_z = frame.count(ColumnRole::future);
    m.C_s = frame.count(ColumnRole::static_feature);
    if (m.C == 0) throw Error(ErrorKind::config, "dataset has no target columns");
    const bool auxiliary = m.C_z + m.C_s > 0;
    if (auxiliary && m.family != Family::tsmixer_ext) {
        throw Error(ErrorKind::config,
                    fmt::format("model.family {} cannot use future or static columns; use tsmixer_ext",
                                to_string(m.family)));
    }
    if (m.family == Family::tsmixer_ext && m.C_x + m.C_z + m.C_s == 0) {
        throw Error(ErrorKind::config,
                    "model.family tsmixer_ext needs covariate, future or static columns; none are declared");
    }
    m.validate();
    return m;
}

Tensor predict_all(Model& model, std::span<const Window> windows) {
    const ModelConfig& m = model.config();
    Tensor out(Shape{windows.size(), m.T, m.C});
    for (std::size_t begin = 0; begin < windows.size(); begin += predict_batch) {
        const std::size_t end = std::min(windows.size(), begin + predict_batch);
        std::vector<std::size_t> idx(end - begin);
        std::iota(idx.begin(), idx.end(), begin);
        const Tensor p = model.predict(collate(windows, idx).input);
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + begin * m.T * m.C);
    }
    return out;
}

Tensor stack_targets(std::span<const Window> windows) {
    std::vector<std::size_t> idx(windows.size());
    std::iota(idx.begin(), idx.end(), 0);
    return collate(windows, idx).target;
}

HierarchySpec load_hierarchy(const std::string& path, std::size_t series) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open hierarchy '{}'", path));
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::spec, fmt::format("hierarchy line {}: {}", e.line(), e.message()));
    }
    HierarchySpec spec;
    for (const auto& [section, node] : tree) {
        if (section.rfind("level.", 0) != 0) {
            throw Error(ErrorKind::spec, fmt::format("hierarchy section [{}] must be named level.<name>", section));
        }
        HierarchyLevel level;
        level.name = section.substr(6);
        const auto groups = node.get_optional<std::string>("groups");
        if (!groups) throw Error(ErrorKind::spec, fmt::format("hierarchy [{}] lacks groups", section));
        for (const auto& g : parse_list(*groups)) level.group_of.push_back(parse_size(section + ".groups", g));
        if (const auto w = node.get_optional<std::string>("weights")) {
            level.weights = numbers(section + ".weights", *w);
        } else if (const auto r = node.get_optional<std::string>("revenue")) {
            const auto revenue = numbers(section + ".revenue", *r);
            if (revenue.size() != level.group_of.size()) {
                throw Error(ErrorKind::spec, fmt::format("hierarchy [{}] revenue needs one value per series", section));
            }
            level.weights = weights_from_revenue(level.group_of, revenue);
        } else {
            throw Error(ErrorKind::spec, fmt::format("hierarchy [{}] needs weights or revenue", section));
        }
        spec.levels.push_back(std::move(level));
    }
    if (spec.levels.empty()) throw Error(ErrorKind::spec, fmt::format("hierarchy '{}' has no levels", path));
    spec.validate(series);
    return spec;
}

std::size_t partition_index(const std::string& name) {
    if (name == "train") return 0;
    if (name == "val") return 1;
    if (name == "test") return 2;
    throw Error(ErrorKind::config, fmt::format("partition must be all, train, val or test, got '{}'", name));
}

}  // namespace

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", path));
    out << text;
    if (!out) throw Error(ErrorKind::io, fmt::format("failed writing '{}'", path));
}

void cmd_train(const ExperimentConfig& config, std::ostream& log) {
    validate(config);
    const std::string schema_path = resolve_schema_path(config.data);
    const std::optional<Schema> schema =
        schema_path.empty() ? std::nullopt : std::optional<Schema>(Schema::load(schema_path));
    const SeriesFrame frame = load_csv(config.data.path, schema);
    const ModelConfig mc = resolve_model(config.model, frame);

    Checkpoint ck;
    ck.model = mc;
    ck.seed = config.seed;
    ck.names = frame.names;
    ck.roles = frame.roles;
    ck.time_name = frame.time_name;
    ck.standardize = config.data.standardize;
    ck.split = SplitSpec{config.data.fractions, config.data.ranges};
    ck.stride = config.data.stride;

    const Split sp = split(frame, ck.split);
    SeriesFrame work = frame;
    if (ck.standardize) {
        ck.scaler = global_standardize(sp.parts[0], sp.parts[0].steps()).second;
        work = ck.scaler.apply(frame);
    } else {
        ck.scaler = Standardizer{std::vector<double>(frame.names.size(), 0.0),
                                 std::vector<double>(frame.names.size(), 1.0)};
    }

    const WindowSpec ws{mc.L, mc.T, ck.stride};
    std::array<std::vector<Window>, 3> sets;
    const char* part_names[] = {"train", "val", "test"};
    for (std::size_t p = 0; p < 3; ++p) {
        if (sp.ranges[p].size() > 0) sets[p] = make_windows(work, ws, sp.ranges[p]);
    }
    for (std::size_t p = 0; p < 2; ++p) {
        if (sets[p].empty()) {
            throw Error(ErrorKind::precondition,
                        fmt::format("{} partition (rows {}..{}) yields no windows for lookback {} and horizon {}",
                                    part_names[p], sp.ranges[p].begin, sp.ranges[p].end, mc.L, mc.T));
        }
    }

    Model model(mc, config.seed);
    TrainConfig tc = config.train;
    tc.seed = config.seed;
    const TrainHistory history = train(model, sets[0], sets[1], tc);

    fs::create_directories(config.out);
    const fs::path out(config.out);
    const std::string prov = provenance(config.seed);
    write_text_file((out / "checkpoint.ini").string(), format_checkpoint(ck));
    save_parameters(out / "checkpoint.params", model.params(), prov);
    std::ostringstream hist;
    history.write_csv(hist, prov);
    write_text_file((out / "history.csv").string(), hist.str());
    ExperimentConfig resolved = config;
    resolved.model = mc;
    resolved.data.schema = schema_path;
    write_text_file((out / "resolved_config.ini").string(), fmt::format("; {}\n", prov) + format_experiment(resolved));

    std::string summary = fmt::format("trained {} for {} epochs ({}), best epoch {} val {} {}", to_string(mc.family),
                                      history.train_loss.size(), history.stop_reason, history.best_epoch,
                                      to_string(tc.objective), history.val_loss[history.best_epoch - 1]);
    if (!sets[2].empty()) {
        summary += fmt::format(" test {}", evaluate_loss(model, sets[2], tc.objective, tc.batch_size));
    }
    log << summary << "\n";
}

std::string cmd_evaluate(const EvaluateOptions& options) {
    auto [ck, model] = open_checkpoint(options.checkpoint);
    const std::uint64_t seed = options.seed.value_or(ck.seed);
    const Schema schema = options.schema.empty() ? checkpoint_schema(ck) : Schema::load(options.schema);
    const SeriesFrame frame = load_for_checkpoint(options.data, schema, ck);
    const SeriesFrame work = ck.standardize ? ck.scaler.apply(frame) : frame;

    RowRange range{0, frame.steps()};
    if (options.partition != "all") range = split(frame, ck.split).ranges[partition_index(options.partition)];
    const ModelConfig& m = ck.model;
    const std::vector<Window> windows =
        range.size() > 0 ? make_windows(work, WindowSpec{m.L, m.T, ck.stride}, range) : std::vector<Window>{};
    if (windows.empty()) {
        throw Error(ErrorKind::precondition,
                    fmt::format("partition '{}' (rows {}..{}) yields no windows for lookback {} and horizon {}",
                                options.partition, range.begin, range.end, m.L, m.T));
    }
    const Tensor pred = predict_all(model, windows);
    const Tensor target = stack_targets(windows);

    std::string report = fmt::format("# {}\n", provenance(seed));
    report += fmt::format("partition = {}\nwindows = {}\n", options.partition, windows.size());
    report += fmt::format("mse = {}\nmae = {}\n", mse(pred, target), mae(pred, target));
    const auto targets = frame.columns(ColumnRole::target);
    for (std::size_t c = 0; c < targets.size(); ++c) {
        double se = 0.0;
        const std::size_t n = windows.size() * m.T;
        for (std::size_t i = 0; i < n; ++i) se += std::pow(pred[i * m.C + c] - target[i * m.C + c], 2);
        report += fmt::format("mse.{} = {}\n", frame.names[targets[c]], se / static_cast<double>(n));
    }

    if (!options.hierarchy.empty()) {
        const HierarchySpec spec = load_hierarchy(options.hierarchy, m.C);
        const Window& last = windows.back();
        const Tensor last_pred = ck.standardize
                                     ? ck.scaler.invert(Tensor(Shape{m.T, m.C}, std::vector<double>(
                                                                                    pred.data().end() - m.T * m.C,
                                                                                    pred.data().end())),
                                                        targets)
                                     : Tensor(Shape{m.T, m.C}, std::vector<double>(pred.data().end() - m.T * m.C,
                                                                                   pred.data().end()));
        std::vector<std::vector<double>> f(m.C), a(m.C), h(m.C);
        for (std::size_t c = 0; c < m.C; ++c) {
            for (std::size_t t = 0; t < m.T; ++t) {
                f[c].push_back(last_pred(t, c));
                a[c].push_back(frame.values(last.start + m.L + t, targets[c]));
            }
            for (std::size_t t = 0; t < last.start + m.L; ++t) h[c].push_back(frame.values(t, targets[c]));
        }
        report += "\n" + format_report(wrmsse(f, a, h, spec));
    }
    return report;
}

std::string cmd_forecast(const ForecastOptions& options) {
    auto [ck, model] = open_checkpoint(options.checkpoint);
    const std::uint64_t seed = options.seed.value_or(ck.seed);
    const ModelConfig& m = ck.model;
    const SeriesFrame frame = load_for_checkpoint(options.history, checkpoint_schema(ck), ck);
    if (frame.steps() < m.L) {
        throw Error(ErrorKind::precondition,
                    fmt::format("'{}' has {} rows; the model needs at least {} (lookback)", options.history,
                                frame.steps(), m.L));
    }
    const SeriesFrame work = ck.standardize ? ck.scaler.apply(frame) : frame;
    const std::size_t begin = frame.steps() - m.L;
    const auto targets = work.columns(ColumnRole::target);
    const auto covariates = work.columns(ColumnRole::covariate);

    ModelInput input;
    input.history = Tensor(Shape{1, m.L, m.C + m.C_x});
    for (std::size_t t = 0; t < m.L; ++t) {
        for (std::size_t c = 0; c < m.C; ++c) input.history(0, t, c) = work.values(begin + t, targets[c]);
        for (std::size_t c = 0; c < m.C_x; ++c) input.history(0, t, m.C + c) = work.values(begin + t, covariates[c]);
    }
    if (m.C_s > 0) {
        const auto statics = work.columns(ColumnRole::static_feature);
        input.statics = Tensor(Shape{1, 1, m.C_s});
        for (std::size_t c = 0; c < m.C_s; ++c) (*input.statics)(0, 0, c) = work.values(begin, statics[c]);
    }
    if (m.C_z > 0) {
        if (options.future.empty()) {
            throw Error(ErrorKind::precondition,
                        fmt::format("the model uses {} future columns; pass a future CSV with {} rows", m.C_z, m.T));
        }
        Schema fs_schema;
        if (!ck.time_name.empty()) fs_schema.columns.emplace_back(ck.time_name, ColumnRole::time);
        const auto fcols = frame.columns(ColumnRole::future);
        for (std::size_t c : fcols) fs_schema.columns.emplace_back(ck.names[c], ColumnRole::future);
        const SeriesFrame fut = load_csv(options.future, fs_schema);
        if (fut.steps() < m.T || fut.count(ColumnRole::future) != m.C_z) {
            throw Error(ErrorKind::dimension,
                        fmt::format("'{}' must hold {} rows of the {} future columns, got {} rows and {} columns",
                                    options.future, m.T, m.C_z, fut.steps(), fut.count(ColumnRole::future)));
        }
        input.future = Tensor(Shape{1, m.T, m.C_z});
        for (std::size_t t = 0; t < m.T; ++t) {
            for (std::size_t c = 0; c < m.C_z; ++c) {
                const std::size_t col = fcols[c];
                (*input.future)(0, t, c) = ck.standardize
                                               ? (fut.values(t, c) - ck.scaler.mean[col]) / ck.scaler.stdev[col]
                                               : fut.values(t, c);
            }
        }
    }

    std::string out = fmt::format("# {}\n", provenance(seed));
    std::vector<std::string> header{"step"};
    if (m.head == HeadKind::negative_binomial) {
        const auto [mu, alpha] = model.predict_distribution(input);
        for (std::size_t c : targets) {
            header.push_back(ck.names[c] + "_mu");
            header.push_back(ck.names[c] + "_alpha");
        }
        out += join(header) + "\n";
        for (std::size_t t = 0; t < m.T; ++t) {
            out += fmt::format("{}", t + 1);
            for (std::size_t c = 0; c < m.C; ++c) out += fmt::format(",{},{}", mu(0, t, c), alpha(0, t, c));
            out += "\n";
        }
        return out;
    }
    Tensor pred = model.predict(input);
    if (ck.standardize) pred = ck.scaler.invert(pred, targets);
    for (std::size_t c : targets) header.push_back(ck.names[c]);
    out += join(header) + "\n";
    for (std::size_t t = 0; t < m.T; ++t) {
        out += fmt::format("{}", t + 1);
        for (std::size_t c = 0; c < m.C; ++c) out += fmt::format(",{}", pred(0, t, c));
        out += "\n";
    }
    return out;
}

std::pair<std::string, std::string> cmd_synth(const SynthOptions& o) {
    Rng rng(o.seed);
    SeriesFrame frame;
    std::string params;
    if (o.kind == "periodic") {
        PeriodicShape shape;
        if (o.shape == "sinusoid") {
            shape = PeriodicShape::sinusoid;
        } else if (o.shape == "template") {
            shape = PeriodicShape::template_repeat;
        } else {
            throw Error(ErrorKind::config, fmt::format("synth shape must be sinusoid or template, got '{}'", o.shape));
        }
        frame = synth_periodic(o.period, o.steps, o.amplitude, rng, o.variates, shape);
        params = fmt::format("kind=periodic period={} amplitude={} variates={} shape={}", o.period, o.amplitude,
                             o.variates, o.shape);
    } else if (o.kind == "affine") {
        frame = synth_affine_periodic(o.period, o.a, o.c, o.steps, rng);
        params = fmt::format("kind=affine period={} a={} c={}", o.period, o.a, o.c);
    } else if (o.kind == "trend") {
        frame = synth_periodic_plus_trend(o.period, o.K, o.steps, rng);
        params = fmt::format("kind=trend period={} K={}", o.period, o.K);
    } else if (o.kind == "crossvariate") {
        frame = synth_crossvariate(o.steps, o.lag, o.noise, rng);
        params = fmt::format("kind=crossvariate lag={} noise={}", o.lag, o.noise);
    } else {
        throw Error(ErrorKind::config,
                    fmt::format("synth kind must be periodic, affine, trend or crossvariate, got '{}'", o.kind));
    }
    params += fmt::format(" steps={}", o.steps);
    std::ostringstream csv;
    write_csv(csv, frame, provenance(o.seed) + "\n" + params);

    Schema schema;
    if (!frame.time_name.empty()) schema.columns.emplace_back(frame.time_name, ColumnRole::time);
    for (std::size_t i = 0; i < frame.names.size(); ++i) schema.columns.emplace_back(frame.names[i], frame.roles[i]);
    std::ostringstream ini;
    ini << "; " << provenance(o.seed) << "\n";
    schema.write(ini);
    return {csv.str(), ini.str()};
}

VerifyResult cmd_verify_theory(const VerifyOptions& o) {
    if (o.P < 1) throw Error(ErrorKind::config, "verify-theory: period must be at least 1");
    if (o.L < o.P + 1) {
        throw Error(ErrorKind::config, fmt::format("verify-theory: lookback {} must be at least period + 1 = {}", o.L,
                                                   o.P + 1));
    }
    if (o.T < 1 || o.trials < 1) throw Error(ErrorKind::config, "verify-theory: horizon and trials must be positive");
    if (!(o.K >= 0.0)) throw Error(ErrorKind::config, "verify-theory: K must be nonnegative");

    constexpr double tolerance = 1e-9;
    LinearSolution periodic = construct_periodic_solution(o.P, o.L, o.T);
    LinearSolution bounded = construct_theorem1_solution(o.P, o.L, o.T);
    if (o.corrupt) {
        periodic.A(0, o.L - 1) += 0.5;
        bounded.A(0, o.L - 1) += 0.5;
    }

    Rng rng(o.seed);
    std::vector<double> periodic_max(o.T, 0.0), trend_max(o.T, 0.0);
    std::vector<std::string> violations;
    for (std::size_t trial = 0; trial < o.trials; ++trial) {
        Rng prng = rng.fork(2 * trial);
        const SeriesFrame s = synth_periodic(o.P, o.L + o.T, 1.0, prng, 1, PeriodicShape::template_repeat);
        std::vector<double> x(s.values.data().begin(), s.values.data().end());
        std::vector<double> y = apply_linear(periodic, std::span<const double>(x).first(o.L));
        for (std::size_t i = 0; i < o.T; ++i) {
            const double err = std::abs(y[i] - x[o.L + i]);
            periodic_max[i] = std::max(periodic_max[i], err);
            if (!(err <= tolerance)) {
                violations.push_back(fmt::format("trial {} periodic step {}: error {} > {}", trial, i + 1, err,
                                                 tolerance));
            }
        }
        Rng trng = rng.fork(2 * trial + 1);
        const SeriesFrame u = synth_periodic_plus_trend(o.P, o.K, o.L + o.T, trng);
        x.assign(u.values.data().begin(), u.values.data().end());
        y = apply_linear(bounded, std::span<const double>(x).first(o.L));
        for (std::size_t i = 0; i < o.T; ++i) {
            const double err = std::abs(y[i] - x[o.L + i]);
            const double bound = theorem1_bound(o.K, i + 1, o.P);
            trend_max[i] = std::max(trend_max[i], err);
            if (!(err <= bound + tolerance)) {
                violations.push_back(fmt::format("trial {} trend step {}: error {} > bound {}", trial, i + 1, err,
                                                 bound));
            }
        }
    }

    VerifyResult r;
    r.passed = violations.empty();
    r.report = fmt::format("# {}\n", provenance(o.seed));
    r.report += fmt::format("# P={} L={} T={} K={} trials={} corrupt={}\n", o.P, o.L, o.T, o.K, o.trials, o.corrupt);
    r.report += "step,periodic_max_error,trend_max_error,trend_bound\n";
    for (std::size_t i = 0; i < o.T; ++i) {
        r.report += fmt::format("{},{},{},{}\n", i + 1, periodic_max[i], trend_max[i],
                                theorem1_bound(o.K, i + 1, o.P));
    }
    r.report += fmt::format("# result={} violations={}\n", r.passed ? "PASS" : "FAIL", violations.size());
    constexpr std::size_t shown = 20;
    for (std::size_t i = 0; i < std::min(shown, violations.size()); ++i) r.report += "# " + violations[i] + "\n";
    if (violations.size() > shown) r.report += fmt::format("# ... {} more\n", violations.size() - shown);
    return r;
}

}  // namespace tsmixer::app
