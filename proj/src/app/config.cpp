#include "tsmixer/app/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "tsmixer/errors.hpp"

namespace tsmixer::app {

namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys{
        {"data", {"path", "schema", "split", "split_rows", "standardize", "stride"}},
        {"model", {"family", "lookback", "horizon", "hidden", "blocks", "dropout", "norm", "placement", "head",
                   "rev_in"}},
        {"train", {"learning_rate", "max_epochs", "patience", "batch_size", "objective"}},
        {"run", {"seed", "out"}},
    };
    return keys;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& text, std::string_view expected) {
    throw Error(ErrorKind::config, fmt::format("{}: cannot parse '{}' as {}", key, text, expected));
}

std::string trimmed(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trimmed(item));
    return out;
}

std::size_t to_size(const std::string& key, const std::string& text) {
    std::size_t v = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) bad_value(key, text, "a nonnegative integer");
    return v;
}

double to_double(const std::string& key, const std::string& text) {
    double v = 0;
    const auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || p != text.data() + text.size()) bad_value(key, text, "a number");
    return v;
}

bool to_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    bad_value(key, text, "true or false");
}

template <class F>
auto wrap(const std::string& key, F parse) {
    try {
        return parse();
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::config && std::string(e.what()).find(key) != std::string::npos) throw;
        throw Error(ErrorKind::config, fmt::format("{}: {}", key, e.what()));
    }
}

}  // namespace

ExperimentConfig parse_experiment(std::istream& in) {
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::config, fmt::format("config line {}: {}", e.line(), e.message()));
    }
    ExperimentConfig c;
    for (const auto& [section, node] : tree) {
        const auto found = known_keys().find(section);
        if (found == known_keys().end()) {
            throw Error(ErrorKind::config, fmt::format("unknown config section [{}]", section));
        }
        for (const auto& [key, value] : node) {
            const std::string name = section + "." + key;
            if (!found->second.count(key)) throw Error(ErrorKind::config, fmt::format("unknown config key {}", name));
            const std::string v = trimmed(value.data());
            if (name == "data.path") {
                c.data.path = v;
            } else if (name == "data.schema") {
                c.data.schema = v;
            } else if (name == "data.split") {
                const auto parts = split_list(v, ',');
                if (parts.size() != 3) bad_value(name, v, "three fractions train,val,test");
                c.data.fractions = std::array{to_double(name, parts[0]), to_double(name, parts[1]),
                                              to_double(name, parts[2])};
            } else if (name == "data.split_rows") {
                const auto parts = split_list(v, ',');
                if (parts.size() != 3) bad_value(name, v, "three row ranges begin:end");
                std::array<RowRange, 3> r;
                for (std::size_t i = 0; i < 3; ++i) {
                    const auto ends = split_list(parts[i], ':');
                    if (ends.size() != 2) bad_value(name, v, "three row ranges begin:end");
                    r[i] = RowRange{to_size(name, ends[0]), to_size(name, ends[1])};
                }
                c.data.ranges = r;
            } else if (name == "data.standardize") {
                c.data.standardize = to_bool(name, v);
            } else if (name == "data.stride") {
                c.data.stride = to_size(name, v);
            } else if (name == "model.family") {
                c.model.family = wrap(name, [&] { return parse_family(v); });
            } else if (name == "model.lookback") {
                c.model.L = to_size(name, v);
            } else if (name == "model.horizon") {
                c.model.T = to_size(name, v);
            } else if (name == "model.hidden") {
                c.model.hidden = to_size(name, v);
            } else if (name == "model.blocks") {
                c.model.blocks = to_size(name, v);
            } else if (name == "model.dropout") {
                c.model.dropout = to_double(name, v);
            } else if (name == "model.norm") {
                c.model.norm = wrap(name, [&] { return parse_norm_kind(v); });
            } else if (name == "model.placement") {
                c.model.placement = wrap(name, [&] { return parse_norm_placement(v); });
            } else if (name == "model.head") {
                c.model.head = wrap(name, [&] { return parse_head(v); });
            } else if (name == "model.rev_in") {
                c.model.rev_in = to_bool(name, v);
            } else if (name == "train.learning_rate") {
                c.train.learning_rate = to_double(name, v);
            } else if (name == "train.max_epochs") {
                c.train.max_epochs = to_size(name, v);
            } else if (name == "train.patience") {
                c.train.patience = to_size(name, v);
            } else if (name == "train.batch_size") {
                c.train.batch_size = to_size(name, v);
            } else if (name == "train.objective") {
                c.train.objective = wrap(name, [&] { return parse_objective(v); });
            } else if (name == "run.seed") {
                c.seed = to_size(name, v);
            } else if (name == "run.out") {
                c.out = v;
            }
        }
    }
    if (c.data.ranges) c.data.fractions.reset();
    return c;
}

ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open config '{}'", path));
    return parse_experiment(in);
}

std::string format_experiment(const ExperimentConfig& c) {
    std::string s;
    s += "[data]\n";
    s += fmt::format("path = {}\n", c.data.path);
    s += fmt::format("schema = {}\n", c.data.schema);
    if (c.data.ranges) {
        const auto& r = *c.data.ranges;
        s += fmt::format("split_rows = {}:{},{}:{},{}:{}\n", r[0].begin, r[0].end, r[1].begin, r[1].end, r[2].begin,
                         r[2].end);
    } else if (c.data.fractions) {
        const auto& f = *c.data.fractions;
        s += fmt::format("split = {},{},{}\n", f[0], f[1], f[2]);
    }
    s += fmt::format("standardize = {}\n", c.data.standardize);
    s += fmt::format("stride = {}\n", c.data.stride);
    s += "\n[model]\n";
    s += fmt::format("family = {}\n", to_string(c.model.family));
    s += fmt::format("lookback = {}\n", c.model.L);
    s += fmt::format("horizon = {}\n", c.model.T);
    s += fmt::format("hidden = {}\n", c.model.hidden);
    s += fmt::format("blocks = {}\n", c.model.blocks);
    s += fmt::format("dropout = {}\n", c.model.dropout);
    s += fmt::format("norm = {}\n", to_string(c.model.norm));
    s += fmt::format("placement = {}\n", to_string(c.model.placement));
    s += fmt::format("head = {}\n", to_string(c.model.head));
    s += fmt::format("rev_in = {}\n", c.model.rev_in);
    s += "\n[train]\n";
    s += fmt::format("learning_rate = {}\n", c.train.learning_rate);
    s += fmt::format("max_epochs = {}\n", c.train.max_epochs);
    s += fmt::format("patience = {}\n", c.train.patience);
    s += fmt::format("batch_size = {}\n", c.train.batch_size);
    s += fmt::format("objective = {}\n", to_string(c.train.objective));
    s += "\n[run]\n";
    s += fmt::format("seed = {}\n", c.seed);
    s += fmt::format("out = {}\n", c.out);
    return s;
}

void validate(const ExperimentConfig& c) {
    if (c.data.path.empty()) throw Error(ErrorKind::config, "data.path is required");
    if (c.data.stride < 1) throw Error(ErrorKind::config, "data.stride must be at least 1");
    if (c.out.empty()) throw Error(ErrorKind::config, "run.out must not be empty");
    if (c.model.head == HeadKind::negative_binomial && c.data.standardize) {
        throw Error(ErrorKind::config, "data.standardize must be false with the negative_binomial head (raw counts)");
    }
    if ((c.train.objective == Objective::nb_nll) != (c.model.head == HeadKind::negative_binomial)) {
        throw Error(ErrorKind::config, "train.objective must be nb_nll exactly when model.head is negative_binomial");
    }
    // Variate counts are unknown here; check the rest with a placeholder of one target.
    ModelConfig m = c.model;
    m.C = 1;
    m.C_x = m.C_z = m.C_s = 0;
    m.validate();
    c.train.validate();
}

std::size_t parse_size(const std::string& key, const std::string& text) { return to_size(key, trimmed(text)); }
double parse_number(const std::string& key, const std::string& text) { return to_double(key, trimmed(text)); }
bool parse_bool(const std::string& key, const std::string& text) { return to_bool(key, trimmed(text)); }
std::vector<std::string> parse_list(const std::string& text, char separator) { return split_list(text, separator); }

std::string resolve_schema_path(const DataConfig& data) {
    if (!data.schema.empty()) return data.schema;
    std::filesystem::path p(data.path);
    p.replace_extension(".schema.ini");
    return std::filesystem::exists(p) ? p.string() : std::string();
}

}  // namespace tsmixer::app
