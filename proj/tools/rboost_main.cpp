// rboost: robust boosting experiments from the command line.
//
//   rboost <subcommand> [--config FILE] [--<key> VALUE ...]
//
// Every key of the config file is also a flag; flags win over the file and
// RB_SEED wins over the file's seed.
#include <cstdlib>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "rboost/cli/pipeline.hpp"

using namespace rboost::cli;

namespace {
const std::map<std::string, std::string> kSubcommands = {
    {"boost-game", "Hedge booster over exact robust stump learners"},
    {"boost-stagewise", "stagewise adversarial boosting of MLP bases"},
    {"certify", "randomized-smoothing certification of a model"},
    {"check", "approximate checker and checker-based weak learning"},
    {"eval", "clean and robust accuracy of a model"},
    {"audit", "recompute metrics.json from its model and data"},
    {"synth", "write a synthetic dataset"},
};
} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarially robust multiclass boosting"};
    app.require_subcommand(1);

    struct Parsed {
        std::string config_file;
        std::map<std::string, std::string> flags;
    };
    std::map<std::string, Parsed> parsed;
    for (const auto& [name, help] : kSubcommands) {
        CLI::App* sub = app.add_subcommand(name, help);
        Parsed& p = parsed[name];
        sub->add_option("--config", p.config_file, "key = value config file");
        for (const auto& key : config_keys()) {
            std::string h = key.help;
            if (!key.default_value.empty()) h += " [" + key.default_value + "]";
            sub->add_option("--" + key.name, p.flags[key.name], h);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    const Parsed& p = parsed[name];

    KeyValues flags;
    for (const auto& key : config_keys())
        if (sub->count("--" + key.name) > 0) flags[key.name] = p.flags.at(key.name);

    std::optional<std::string> rb_seed;
    if (const char* env = std::getenv("RB_SEED")) rb_seed = env;

    try {
        const KeyValues file = p.config_file.empty() ? KeyValues{} : read_config_file(p.config_file);
        const ExperimentConfig cfg = build_config(parse_pipeline(name), file, flags, rb_seed);
        return run_pipeline(cfg, std::cerr);
    } catch (const rboost::Error& e) {
        const nlohmann::json rec = {{"error", rboost::errc_name(e.code())}, {"message", e.what()}, {"pipeline", name},
                                    {"stage", "config"}, {"exit_code", exit_code_for(e.code())}};
        std::cerr << rec.dump() << std::endl;
        return exit_code_for(e.code());
    }
}
