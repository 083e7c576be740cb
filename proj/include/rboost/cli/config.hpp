#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rboost/certify.hpp"
#include "rboost/cli/archive.hpp"
#include "rboost/cli/data.hpp"
#include "rboost/game_boost.hpp"
#include "rboost/stagewise.hpp"

namespace rboost::cli {

enum class Pipeline { BoostGame, BoostStagewise, Certify, Check, Eval, Audit, Synth };
Pipeline parse_pipeline(const std::string& name);
std::string pipeline_name(Pipeline p);

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string help;
};

/// Every recognized key, in documentation order. Flags are `--<name>`.
const std::vector<ConfigKey>& config_keys();

/// `key = value` lines; `#` starts a comment. Unknown keys are rejected.
KeyValues parse_config_text(const std::string& text);
KeyValues read_config_file(const std::string& path);

struct ExperimentConfig {
    Pipeline pipeline = Pipeline::BoostGame;
    /// Every key with its effective value (defaults filled in).
    KeyValues values;

    std::optional<std::string> data_path;
    std::optional<SyntheticSpec> synth;
    std::optional<int> num_classes;
    PerturbationBall ball;
    std::uint64_t seed = 0;
    std::string out_dir;
    std::optional<std::string> model_path;
    bool timing = false;
    /// Budgets for accuracy-vs-budget curves.
    std::vector<double> budgets;

    BoostConfig boost;
    StagewiseConfig stagewise;
    SmoothingConfig smoothing;
    std::vector<double> radii;
    CheckerSpec checker;
    double checker_gamma = 0.1;
};

/// Layers: defaults < file < RB_SEED (seed only) < flags.
/// `rb_seed` is the environment value, if any.
ExperimentConfig build_config(Pipeline pipeline, const KeyValues& file, const KeyValues& flags,
                              std::optional<std::string> rb_seed);

/// Re-parses an echoed value map (as stored in archives and metrics).
ExperimentConfig config_from_values(Pipeline pipeline, const KeyValues& values);

} // namespace rboost::cli
