#include "rboost/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace rboost::cli {

Pipeline parse_pipeline(const std::string& name) {
    if (name == "boost-game") return Pipeline::BoostGame;
    if (name == "boost-stagewise") return Pipeline::BoostStagewise;
    if (name == "certify") return Pipeline::Certify;
    if (name == "check") return Pipeline::Check;
    if (name == "eval") return Pipeline::Eval;
    if (name == "audit") return Pipeline::Audit;
    if (name == "synth") return Pipeline::Synth;
    throw Error(Errc::InvalidConfig, "unknown pipeline '" + name + "'");
}

std::string pipeline_name(Pipeline p) {
    switch (p) {
    case Pipeline::BoostGame: return "boost-game";
    case Pipeline::BoostStagewise: return "boost-stagewise";
    case Pipeline::Certify: return "certify";
    case Pipeline::Check: return "check";
    case Pipeline::Eval: return "eval";
    case Pipeline::Audit: return "audit";
    case Pipeline::Synth: return "synth";
    }
    return "?";
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        // data
        {"data", "", "CSV dataset with header label,f1,...,fd"},
        {"synth", "", "synthetic generator: gaussian-blobs | concentric-rings | stripes-1d"},
        {"synth-k", "2", "synthetic: number of classes"},
        {"synth-d", "2", "synthetic: dimension (stripes-1d is always 1)"},
        {"synth-m", "40", "synthetic: number of examples"},
        {"synth-separation", "4", "synthetic: blob center spacing in sigmas / ring radius gap"},
        {"synth-margin", "0.5", "synthetic: stripe half-spacing / blob Linf margin"},
        {"synth-noise", "0.2", "synthetic: ring jitter as a fraction of the separation"},
        {"synth-sigma", "1", "synthetic: blob standard deviation"},
        {"num-classes", "0", "class count override (0 = largest label)"},
        // shared
        {"norm", "inf", "perturbation norm: inf | 2"},
        {"delta", "0", "perturbation radius"},
        {"seed", "0", "master seed (RB_SEED overrides the file value)"},
        {"out", "out", "output directory"},
        {"model", "", "model archive to evaluate, certify or check"},
        {"timing", "false", "record wall-clock seconds in trace.ndjson"},
        {"budgets", "", "comma list of budgets for accuracy curves (default: multiples of delta)"},
        // game booster
        {"gamma", "0.5", "weak learner edge"},
        {"rounds", "0", "boosting rounds (0 = auto)"},
        {"hedge-step", "0", "Hedge step (0 = auto)"},
        {"mode", "pairs", "booster support: pairs | ova"},
        {"early-stop", "true", "stop once every mixture margin is negative"},
        // stagewise
        {"stages", "5", "boosting stages T"},
        {"base-epochs", "10", "epochs of the first stage N_1"},
        {"eta-max", "0.01", "peak learning rate"},
        {"batch-size", "32", "minibatch size"},
        {"hidden", "16", "hidden layer widths, comma separated (empty = linear)"},
        {"pgd-steps", "7", "inner PGD steps"},
        {"pgd-step-size", "0", "inner PGD step (0 = 1.3 delta / steps)"},
        {"pgd-restarts", "1", "inner PGD random restarts"},
        {"pgd-random-start", "true", "start inner PGD from random points"},
        {"adversarial", "true", "run the inner maximization"},
        {"warm-start", "true", "initialize each stage from the previous one"},
        {"exact-reference", "false", "evaluate the previous ensemble at perturbed points"},
        {"eval-steps", "20", "evaluation PGD steps"},
        {"eval-restarts", "3", "evaluation PGD random restarts"},
        {"eval-each-stage", "true", "record per-stage accuracies in the trace"},
        // certification
        {"sigma", "0.25", "smoothing noise scale"},
        {"n-samples", "1000", "Monte Carlo samples per example"},
        {"conservative", "false", "Clopper-Pearson lower bound on the top class"},
        {"alpha", "0.001", "confidence level of the conservative bound"},
        {"radii", "0,0.25,0.5,0.75,1,1.5,2", "radii of the certified accuracy curve"},
        // checker
        {"c", "1", "checker approximation factor"},
        {"backend", "exact", "checker backend: exact | pgd"},
    };
    return keys;
}

namespace {
bool known_key(const std::string& k) {
    for (const auto& key : config_keys())
        if (key.name == k) return true;
    return false;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Reader {
    const KeyValues& v;

    const std::string& str(const std::string& k) const { return v.at(k); }
    double real(const std::string& k) const {
        const std::string& s = str(k);
        double out = 0.0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc{} || p != s.data() + s.size()) throw Error(Errc::InvalidConfig, k + ": not a number: '" + s + "'");
        return out;
    }
    long long integer(const std::string& k) const {
        const std::string& s = str(k);
        long long out = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc{} || p != s.data() + s.size()) throw Error(Errc::InvalidConfig, k + ": not an integer: '" + s + "'");
        return out;
    }
    std::uint64_t unsigned_integer(const std::string& k) const {
        const std::string& s = str(k);
        std::uint64_t out = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
        if (ec != std::errc{} || p != s.data() + s.size()) throw Error(Errc::InvalidConfig, k + ": not an unsigned integer: '" + s + "'");
        return out;
    }
    bool boolean(const std::string& k) const {
        const std::string& s = str(k);
        if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
        if (s == "false" || s == "0" || s == "no" || s == "off") return false;
        throw Error(Errc::InvalidConfig, k + ": not a boolean: '" + s + "'");
    }
    std::vector<double> reals(const std::string& k) const {
        std::vector<double> out;
        std::stringstream ss(str(k));
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            if (item.empty()) continue;
            double x = 0.0;
            auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
            if (ec != std::errc{} || p != item.data() + item.size()) throw Error(Errc::InvalidConfig, k + ": bad list entry '" + item + "'");
            out.push_back(x);
        }
        return out;
    }
};

int checked_int(long long v, const std::string& k, long long lo) {
    if (v < lo || v > 1'000'000'000) throw Error(Errc::InvalidConfig, k + " out of range");
    return static_cast<int>(v);
}
} // namespace

KeyValues parse_config_text(const std::string& text) {
    KeyValues out;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InputError(Errc::InvalidConfig, lineno, "expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (!known_key(key)) throw InputError(Errc::InvalidConfig, lineno, "unknown key '" + key + "'");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

KeyValues read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::InvalidConfig, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

ExperimentConfig config_from_values(Pipeline pipeline, const KeyValues& given) {
    KeyValues values;
    for (const auto& key : config_keys()) values[key.name] = key.default_value;
    for (const auto& [k, v] : given) {
        if (!known_key(k)) throw Error(Errc::InvalidConfig, "unknown key '" + k + "'");
        values[k] = v;
    }
    const Reader r{values};

    ExperimentConfig c;
    c.pipeline = pipeline;
    c.values = values;
    if (!r.str("data").empty()) c.data_path = r.str("data");
    if (!r.str("synth").empty()) {
        SyntheticSpec s;
        s.generator = parse_generator(r.str("synth"));
        s.k = checked_int(r.integer("synth-k"), "synth-k", 2);
        s.d = static_cast<std::size_t>(checked_int(r.integer("synth-d"), "synth-d", 1));
        if (s.generator == Generator::Stripes1d) s.d = 1;
        s.m = static_cast<std::size_t>(checked_int(r.integer("synth-m"), "synth-m", 1));
        s.separation = r.real("synth-separation");
        s.margin = r.real("synth-margin");
        s.noise = r.real("synth-noise");
        s.sigma = r.real("synth-sigma");
        c.synth = s;
    }
    if (const int k = checked_int(r.integer("num-classes"), "num-classes", 0); k > 0) c.num_classes = k;

    c.ball = PerturbationBall::make(parse_norm(r.str("norm")), r.real("delta"));
    c.seed = r.unsigned_integer("seed");
    if (c.synth) c.synth->seed = c.seed;
    c.out_dir = r.str("out");
    if (!r.str("model").empty()) c.model_path = r.str("model");
    c.timing = r.boolean("timing");
    c.budgets = r.reals("budgets");
    if (c.budgets.empty()) {
        c.budgets.push_back(0.0);
        if (c.ball.delta > 0.0)
            for (double f : {0.25, 0.5, 0.75, 1.0, 1.25, 1.5}) c.budgets.push_back(f * c.ball.delta);
    }
    for (double b : c.budgets)
        if (!(b >= 0.0)) throw Error(Errc::InvalidConfig, "budgets must be >= 0");

    c.boost.gamma = r.real("gamma");
    c.boost.rounds = checked_int(r.integer("rounds"), "rounds", 0);
    c.boost.hedge_step = r.real("hedge-step");
    c.boost.ball = c.ball;
    const std::string mode = r.str("mode");
    if (mode == "pairs") c.boost.mode = BoostMode::Pairs;
    else if (mode == "ova") c.boost.mode = BoostMode::OneVsAll;
    else throw Error(Errc::InvalidConfig, "mode must be pairs or ova");
    c.boost.early_stop = r.boolean("early-stop");

    auto& s = c.stagewise;
    s.stages = checked_int(r.integer("stages"), "stages", 1);
    s.base_epochs = checked_int(r.integer("base-epochs"), "base-epochs", 1);
    s.eta_max = r.real("eta-max");
    s.batch_size = static_cast<std::size_t>(checked_int(r.integer("batch-size"), "batch-size", 1));
    s.ball = c.ball;
    s.hidden.clear();
    for (double h : r.reals("hidden")) {
        if (!(h >= 1.0) || h != static_cast<double>(static_cast<std::size_t>(h)))
            throw Error(Errc::InvalidConfig, "hidden widths must be positive integers");
        s.hidden.push_back(static_cast<std::size_t>(h));
    }
    s.pgd.steps = checked_int(r.integer("pgd-steps"), "pgd-steps", 1);
    s.pgd.step_size = r.real("pgd-step-size");
    s.pgd.restarts = checked_int(r.integer("pgd-restarts"), "pgd-restarts", 0);
    s.pgd.random_start = r.boolean("pgd-random-start");
    s.adversarial = r.boolean("adversarial");
    s.warm_start = r.boolean("warm-start");
    s.exact_reference = r.boolean("exact-reference");
    s.eval_pgd.steps = checked_int(r.integer("eval-steps"), "eval-steps", 1);
    s.eval_pgd.restarts = checked_int(r.integer("eval-restarts"), "eval-restarts", 0);
    s.evaluate_each_stage = r.boolean("eval-each-stage");
    s.seed = c.seed;

    c.smoothing.sigma = r.real("sigma");
    c.smoothing.n_samples = checked_int(r.integer("n-samples"), "n-samples", 1);
    c.smoothing.conservative = r.boolean("conservative");
    c.smoothing.alpha = r.real("alpha");
    c.smoothing.seed = c.seed;
    c.radii = r.reals("radii");
    if (c.radii.empty()) throw Error(Errc::InvalidConfig, "radii must not be empty");

    c.checker.c = r.real("c");
    c.checker.ball = c.ball;
    const std::string backend = r.str("backend");
    if (backend == "exact") c.checker.backend = CheckerBackend::Exact;
    else if (backend == "pgd") c.checker.backend = CheckerBackend::Pgd;
    else throw Error(Errc::InvalidConfig, "backend must be exact or pgd");
    c.checker.pgd = s.eval_pgd;
    c.checker.pgd.seed = c.seed;
    c.checker_gamma = c.boost.gamma;

    switch (pipeline) {
    case Pipeline::BoostGame: c.boost.validate(); break;
    case Pipeline::BoostStagewise: s.validate(); break;
    case Pipeline::Certify: c.smoothing.validate(); break;
    case Pipeline::Check:
        c.checker.validate();
        if (!(c.checker_gamma > 0.0 && c.checker_gamma <= 1.0)) throw Error(Errc::InvalidGamma, "gamma must lie in (0, 1]");
        break;
    default: break;
    }
    return c;
}

ExperimentConfig build_config(Pipeline pipeline, const KeyValues& file, const KeyValues& flags,
                              std::optional<std::string> rb_seed) {
    KeyValues merged = file;
    if (rb_seed && !rb_seed->empty()) merged["seed"] = *rb_seed;
    for (const auto& [k, v] : flags) merged[k] = v;
    return config_from_values(pipeline, merged);
}

} // namespace rboost::cli
