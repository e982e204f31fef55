#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include "CLI11.hpp"
#include "tsmixer/app/commands.hpp"
#include "tsmixer/app/config.hpp"
#include "tsmixer/errors.hpp"
#include "tsmixer/version.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using namespace tsmixer;
using namespace tsmixer::app;

namespace {

// Flags shared by every subcommand.
struct Common {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    bool print_config = false;
};

struct Cli {
    CLI::App app{"TSMixer forecasting engine"};
    CLI::App* train = nullptr;
    CLI::App* evaluate = nullptr;
    CLI::App* forecast = nullptr;
    CLI::App* synth = nullptr;
    CLI::App* verify = nullptr;
    Common common[5];
    EvaluateOptions eval;
    ForecastOptions fc;
    SynthOptions syn;
    VerifyOptions ver;
};

void add_common(CLI::App* sub, Common& c, std::string_view config_help, std::string_view out_help) {
    sub->add_option("--config", c.config, std::string(config_help));
    sub->add_option("--seed", c.seed, "Random seed (also recorded in output headers)");
    sub->add_option("--out", c.out, std::string(out_help));
    sub->add_flag("--print-config", c.print_config, "Print the resolved configuration and exit");
}

std::unique_ptr<Cli> build() {
    auto cli = std::make_unique<Cli>();
    CLI::App& app = cli->app;
    app.set_version_flag("--version", std::string(version));
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();

    cli->train = app.add_subcommand("train", "Train a model from an experiment config");
    add_common(cli->train, cli->common[0], "Experiment INI with [data], [model], [train], [run]",
               "Output directory (overrides run.out)");

    cli->evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a dataset");
    add_common(cli->evaluate, cli->common[1], "INI with an [evaluate] section", "Report path (default stdout)");
    cli->evaluate->add_option("--checkpoint", cli->eval.checkpoint, "Directory written by train");
    cli->evaluate->add_option("--data", cli->eval.data, "CSV dataset");
    cli->evaluate->add_option("--schema", cli->eval.schema, "Schema INI (default: checkpoint roles)");
    cli->evaluate->add_option("--hierarchy", cli->eval.hierarchy, "Hierarchy INI for WRMSSE");
    cli->evaluate->add_option("--partition", cli->eval.partition, "all, train, val or test");

    cli->forecast = app.add_subcommand("forecast", "Forecast the steps after a history CSV");
    add_common(cli->forecast, cli->common[2], "INI with a [forecast] section", "Forecast CSV path (default stdout)");
    cli->forecast->add_option("--checkpoint", cli->fc.checkpoint, "Directory written by train");
    cli->forecast->add_option("--history", cli->fc.history, "History CSV (last lookback rows are used)");
    cli->forecast->add_option("--future", cli->fc.future, "CSV of future covariates");

    cli->synth = app.add_subcommand("synth", "Generate a synthetic dataset and its schema");
    add_common(cli->synth, cli->common[3], "INI with a [synth] section",
               "CSV path; the schema goes to <stem>.schema.ini");
    cli->synth->add_option("--kind", cli->syn.kind, "periodic, affine, trend or crossvariate");
    cli->synth->add_option("--steps", cli->syn.steps, "Series length");
    cli->synth->add_option("--period", cli->syn.period, "Period P");
    cli->synth->add_option("--amplitude", cli->syn.amplitude, "Periodic amplitude");
    cli->synth->add_option("--a", cli->syn.a, "Affine gain");
    cli->synth->add_option("--c", cli->syn.c, "Affine offset");
    cli->synth->add_option("--K", cli->syn.K, "Trend step bound");
    cli->synth->add_option("--lag", cli->syn.lag, "Crossvariate lag");
    cli->synth->add_option("--noise", cli->syn.noise, "Crossvariate noise level");
    cli->synth->add_option("--variates", cli->syn.variates, "Number of periodic variates");
    cli->synth->add_option("--shape", cli->syn.shape, "sinusoid or template");

    cli->verify = app.add_subcommand("verify-theory", "Check the linear constructions against generated signals");
    add_common(cli->verify, cli->common[4], "INI with a [verify-theory] section", "Report path (default stdout)");
    cli->verify->add_option("--P", cli->ver.P, "Period");
    cli->verify->add_option("--L", cli->ver.L, "Lookback");
    cli->verify->add_option("--T", cli->ver.T, "Horizon");
    cli->verify->add_option("--K", cli->ver.K, "Trend step bound");
    cli->verify->add_option("--trials", cli->ver.trials, "Number of random signals");
    cli->verify->add_flag("--corrupt", cli->ver.corrupt, "Perturb the constructed weights");
    return cli;
}

std::string unquoted(std::string s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

// Turns the [<subcommand>] section of an INI file into flags placed before the explicit
// ones, so explicit flags win.
std::vector<std::string> config_arguments(CLI::App* sub, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, fmt::format("cannot open config '{}'", path));
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw Error(ErrorKind::config, fmt::format("config line {}: {}", e.line(), e.message()));
    }
    static const std::set<std::string> reserved{"config", "print-config", "help"};
    std::vector<std::string> args;
    for (const auto& [section, node] : tree) {
        if (section != sub->get_name()) {
            throw Error(ErrorKind::config,
                        fmt::format("config section [{}] does not match subcommand {}", section, sub->get_name()));
        }
        for (const auto& [key, value] : node) {
            const CLI::Option* opt = sub->get_option_no_throw("--" + key);
            if (!opt || reserved.count(key)) {
                throw Error(ErrorKind::config, fmt::format("unknown config key {}.{}", section, key));
            }
            const std::string v = unquoted(value.data());
            if (opt->get_type_size() == 0) {
                if (v == "true" || v == "1") args.push_back("--" + key);
            } else {
                args.push_back("--" + key);
                args.push_back(v);
            }
        }
    }
    return args;
}

std::string print_options(CLI::App* sub) {
    std::string s = fmt::format("[{}]\n", sub->get_name());
    for (const CLI::Option* opt : sub->get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string& name = opt->get_lnames().front();
        if (name == "config" || name == "print-config" || name == "help" || name == "out") continue;
        std::string value = opt->count() ? opt->as<std::string>() : opt->get_default_str();
        if (opt->get_type_size() == 0) value = opt->count() ? "true" : "false";
        s += fmt::format("{} = {}\n", name, value);
    }
    return s;
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
    } else {
        write_text_file(path, text);
    }
}

int dispatch(Cli& cli, const std::vector<std::string>& argv) {
    if (cli.train->parsed()) {
        Common& c = cli.common[0];
        ExperimentConfig config;
        if (!c.config.empty()) config = load_experiment(c.config);
        if (cli.train->count("--seed")) config.seed = c.seed;
        if (!c.out.empty()) config.out = c.out;
        if (c.print_config) {
            std::cout << format_experiment(config);
            return 0;
        }
        if (c.config.empty()) throw Error(ErrorKind::config, "train needs --config");
        try {
            cmd_train(config, std::cout);
        } catch (const Error& e) {
            std::error_code ec;
            fs::create_directories(config.out, ec);
            std::ofstream log(fs::path(config.out) / "error.log");
            std::string cmd;
            for (const auto& a : argv) cmd += " " + a;
            log << provenance(config.seed) << "\ncommand: tsmixer" << cmd << "\nkind: " << to_string(e.kind())
                << "\nerror: " << e.what() << "\n\nresolved config:\n"
                << format_experiment(config);
            throw;
        }
        return 0;
    }
    if (cli.evaluate->parsed()) {
        Common& c = cli.common[1];
        if (c.print_config) return std::cout << print_options(cli.evaluate), 0;
        if (cli.evaluate->count("--seed")) cli.eval.seed = c.seed;
        if (cli.eval.checkpoint.empty() || cli.eval.data.empty()) {
            throw Error(ErrorKind::config, "evaluate needs --checkpoint and --data");
        }
        emit(c.out, cmd_evaluate(cli.eval));
        return 0;
    }
    if (cli.forecast->parsed()) {
        Common& c = cli.common[2];
        if (c.print_config) return std::cout << print_options(cli.forecast), 0;
        if (cli.forecast->count("--seed")) cli.fc.seed = c.seed;
        if (cli.fc.checkpoint.empty() || cli.fc.history.empty()) {
            throw Error(ErrorKind::config, "forecast needs --checkpoint and --history");
        }
        emit(c.out, cmd_forecast(cli.fc));
        return 0;
    }
    if (cli.synth->parsed()) {
        Common& c = cli.common[3];
        if (c.print_config) return std::cout << print_options(cli.synth), 0;
        cli.syn.seed = c.seed;
        const auto [csv, schema] = cmd_synth(cli.syn);
        const std::string out = c.out.empty() ? "synth.csv" : c.out;
        write_text_file(out, csv);
        write_text_file(fs::path(out).replace_extension(".schema.ini").string(), schema);
        return 0;
    }
    Common& c = cli.common[4];
    if (c.print_config) return std::cout << print_options(cli.verify), 0;
    cli.ver.seed = c.seed;
    const VerifyResult r = cmd_verify_theory(cli.ver);
    emit(c.out, r.report);
    if (!r.passed) {
        std::fprintf(stderr, "error: verify-theory found bound violations; see the report\n");
        return 2;
    }
    return 0;
}

CLI::App* parsed_subcommand(Cli& cli) {
    for (CLI::App* s : {cli.evaluate, cli.forecast, cli.synth, cli.verify}) {
        if (s->parsed()) return s;
    }
    return nullptr;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    auto cli = build();
    try {
        cli->app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
        CLI::App* sub = parsed_subcommand(*cli);
        const std::size_t which = sub == cli->evaluate ? 1 : sub == cli->forecast ? 2 : sub == cli->synth ? 3 : 4;
        if (sub && !cli->common[which].config.empty()) {
            std::vector<std::string> merged{args.front()};
            const auto extra = config_arguments(sub, cli->common[which].config);
            merged.insert(merged.end(), extra.begin(), extra.end());
            merged.insert(merged.end(), args.begin() + 1, args.end());
            cli = build();
            cli->app.parse(std::vector<std::string>(merged.rbegin(), merged.rend()));
        }
    } catch (const CLI::ParseError& e) {
        const int code = cli->app.exit(e);
        return code == 0 ? 0 : 1;
    }
    return dispatch(*cli, args);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
}
