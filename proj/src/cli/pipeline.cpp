#include "rboost/cli/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "rboost/losses.hpp"

namespace rboost::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(Errc code) {
    switch (code) {
    case Errc::WeakLearnerFailed: return 3;
    case Errc::NonFiniteLoss:
    case Errc::NonFiniteParameters:
    case Errc::OutOfDomain:
    case Errc::AlphaOutOfRange: return 4;
    default: return 2;
    }
}

namespace {

json num(double v) {
    if (std::isfinite(v)) return v;
    return format_real(v);
}

KeyValues echo(const ExperimentConfig& c) {
    KeyValues v = c.values;
    v.erase("out");
    v.erase("timing");
    return v;
}

struct Outputs {
    fs::path dir;
    std::vector<json> trace;
    std::vector<std::tuple<std::string, double, double>> plot;

    void write_metrics(const json& m) const { write_text("metrics.json", m.dump(2) + "\n"); }
    void write_trace() const {
        std::string s;
        for (const auto& r : trace) s += r.dump() + "\n";
        write_text("trace.ndjson", s);
    }
    void write_plot() const {
        std::string s = "series,x,y\n";
        for (const auto& [series, x, y] : plot) s += series + "," + format_real(x) + "," + format_real(y) + "\n";
        write_text("plotdata.csv", s);
    }
    void write_text(const std::string& name, const std::string& text) const {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw Error(Errc::InvalidConfig, "cannot write " + (dir / name).string());
        out << text;
    }
};

struct LoadedData {
    Dataset dataset;
    std::optional<SyntheticData> synth;
};

LoadedData load_data(const ExperimentConfig& c) {
    if (c.data_path && c.synth) throw Error(Errc::InvalidConfig, "give either data or synth, not both");
    if (c.data_path) return {load_dataset(*c.data_path, c.num_classes), std::nullopt};
    if (c.synth) {
        SyntheticData s = generate(*c.synth);
        Dataset d = s.dataset;
        return {std::move(d), std::move(s)};
    }
    throw Error(Errc::InvalidConfig, "no dataset: set data or synth");
}

json dataset_summary(const ExperimentConfig& c, const LoadedData& d) {
    json j = {{"m", d.dataset.size()}, {"k", d.dataset.num_classes()}, {"d", d.dataset.dim()}};
    if (d.synth) {
        j["generator"] = generator_name(c.synth->generator);
        j["robust_margin"] = num(d.synth->robust_margin);
        j["margin_norm"] = norm_name(d.synth->margin_norm);
    }
    return j;
}

json header(const ExperimentConfig& c, const LoadedData& d) {
    json m;
    m["schema"] = 1;
    m["pipeline"] = pipeline_name(c.pipeline);
    m["config"] = echo(c);
    m["dataset"] = dataset_summary(c, d);
    return m;
}

double clean_accuracy(const UnilabelPredictor& h, const Dataset& data) {
    std::size_t ok = 0;
    for (const auto& e : data.examples())
        if (h.predict(e.x) == e.y) ++ok;
    return static_cast<double>(ok) / static_cast<double>(data.size());
}

struct Robustness {
    std::optional<double> accuracy;
    bool certified = false;
    std::string method = "none";
};

/// Exact when the evaluator supports the model, PGD for differentiable argmax
/// models otherwise.
Robustness robust_accuracy(const UnilabelPredictor& h, const Dataset& data, const PerturbationBall& ball,
                           const PgdConfig& pgd) {
    auto run = [&](const RobustEvaluator& ev) {
        std::size_t ok = 0;
        bool cert = true;
        for (const auto& e : data.examples()) {
            const ReachSet r = ev.reach_set(h, e.x, ball);
            cert = cert && r.certified;
            if (r.labels.is_singleton(e.y)) ++ok;
        }
        return std::pair{static_cast<double>(ok) / static_cast<double>(data.size()), cert};
    };
    try {
        auto [acc, cert] = run(ExactEvaluator{});
        return {acc, cert, "exact"};
    } catch (const Error& e) {
        if (e.code() != Errc::BackendMismatch && e.code() != Errc::UnsupportedNorm && e.code() != Errc::DimensionTooLarge)
            throw;
    }
    const auto* am = dynamic_cast<const ArgmaxClassifier*>(&h);
    if (am && dynamic_cast<const DifferentiableScorer*>(&am->scorer())) {
        auto [acc, cert] = run(PgdEvaluator{pgd});
        return {acc, cert, "pgd"};
    }
    return {};
}

json robustness_json(const Robustness& r) {
    return {{"robust_accuracy", r.accuracy ? num(*r.accuracy) : json(nullptr)},
            {"robust_certified", r.certified},
            {"robust_method", r.method}};
}

PgdConfig eval_pgd(const ExperimentConfig& c) {
    PgdConfig p = c.stagewise.eval_pgd;
    p.seed = c.seed;
    p.stream = 0xE7A1;
    return p;
}

json budget_curve(const UnilabelPredictor& h, const Dataset& data, const ExperimentConfig& c, Outputs* out) {
    json curve = json::array();
    for (double b : c.budgets) {
        const Robustness r = robust_accuracy(h, data, PerturbationBall::make(c.ball.p, b), eval_pgd(c));
        curve.push_back({{"budget", num(b)}, {"robust_accuracy", r.accuracy ? num(*r.accuracy) : json(nullptr)},
                         {"method", r.method}});
        if (out && r.accuracy) out->plot.emplace_back("robust_accuracy", b, *r.accuracy);
    }
    return curve;
}

// ============================================================================
// Metrics (pure functions of config, data and model; shared with audit)
// ============================================================================
json game_metrics(const ExperimentConfig& c, const LoadedData& d, const MixtureQ& q, Outputs* out) {
    json m = header(c, d);
    m["mixture_size"] = q.size();
    m["clean_train_accuracy"] = num(clean_accuracy(q, d.dataset));
    const Robustness r = robust_accuracy(q, d.dataset, c.ball, eval_pgd(c));
    m["robust_train_accuracy"] = r.accuracy ? num(*r.accuracy) : json(nullptr);
    m["robust_certified"] = r.certified;
    m["robust_method"] = r.method;
    const MarginReport rep = margin_report(q, d.dataset, c.ball, ExactEvaluator{}, c.boost.mode);
    m["max_margin"] = num(rep.max_margin);
    m["min_forced"] = num(rep.min_forced);
    m["curve"] = budget_curve(q, d.dataset, c, out);
    return m;
}

json stagewise_metrics(const ExperimentConfig& c, const LoadedData& d, const AdditiveEnsemble& f, Outputs* out) {
    json m = header(c, d);
    m["stages"] = f.size();
    json betas = json::array();
    for (const auto& st : f.stages()) betas.push_back(num(st.beta));
    m["betas"] = betas;
    const AccuracyReport acc = evaluate_accuracy(f, d.dataset, c.ball, eval_pgd(c));
    m["clean_train_accuracy"] = num(acc.clean);
    m["robust_train_accuracy"] = num(acc.robust);
    m["robust_method"] = "pgd";
    const ArgmaxClassifier h(std::shared_ptr<const ScorePredictor>(&f, [](const ScorePredictor*) {}));
    m["curve"] = budget_curve(h, d.dataset, c, out);
    return m;
}

json certify_metrics(const ExperimentConfig& c, const LoadedData& d, const ScorePredictor& base, Outputs* out) {
    json m = header(c, d);
    const std::vector<CertRow> rows = certify_dataset(base, d.dataset, c.smoothing);
    std::size_t abstain = 0, correct = 0;
    for (const auto& r : rows) {
        if (r.abstain) ++abstain;
        else if (r.label == r.truth) ++correct;
        if (out) {
            json probs = json::array();
            for (double p : r.probs) probs.push_back(num(p));
            out->trace.push_back({{"type", "example"}, {"example", r.example}, {"label", r.label + 1},
                                  {"truth", r.truth + 1}, {"probs", probs}, {"radius", num(r.radius)},
                                  {"abstain", r.abstain}});
        }
    }
    const double n = static_cast<double>(rows.size());
    m["sigma"] = num(c.smoothing.sigma);
    m["n_samples"] = c.smoothing.n_samples;
    m["smoothed_accuracy"] = num(static_cast<double>(correct) / n);
    m["abstain_rate"] = num(static_cast<double>(abstain) / n);
    json curve = json::array();
    for (double radius : c.radii) {
        const double acc = certified_accuracy(rows, radius);
        curve.push_back({{"radius", num(radius)}, {"certified_accuracy", num(acc)}});
        if (out) out->plot.emplace_back("certified_accuracy", radius, acc);
    }
    m["curve"] = curve;
    return m;
}

std::vector<std::shared_ptr<const UnilabelPredictor>> candidates_of(const ModelArchive& a) {
    std::vector<std::shared_ptr<const UnilabelPredictor>> out;
    if (a.kind == ModelKind::Mixture)
        for (const auto& comp : a.mixture->components()) out.push_back(comp.h);
    else out.push_back(a.classifier());
    return out;
}

json check_metrics(const ExperimentConfig& c, const LoadedData& d, const ModelArchive& a, Outputs* out,
                   CheckerLearnResult* result = nullptr) {
    json m = header(c, d);
    const auto cands = candidates_of(a);
    const CheckerLearnResult res =
        weak_learn_via_checker(cands, c.checker, d.dataset, FiniteDistribution::uniform(d.dataset.size()), c.checker_gamma);
    json est = json::array();
    for (std::size_t i = 0; i < res.estimates.size(); ++i) {
        est.push_back(num(res.estimates[i]));
        if (out) {
            out->trace.push_back({{"candidate", i}, {"estimate", num(res.estimates[i])}});
            out->plot.emplace_back("checker_estimate", static_cast<double>(i), res.estimates[i]);
        }
    }
    m["candidates"] = cands.size();
    m["estimates"] = est;
    m["decision"] = res.found ? "found" : "certificate";
    m["found"] = res.found ? json(*res.found) : json(nullptr);
    m["gamma"] = num(c.checker_gamma);
    if (result) *result = res;
    return m;
}

json eval_metrics(const ExperimentConfig& c, const LoadedData& d, const ModelArchive& a, Outputs* out) {
    json m = header(c, d);
    const auto h = a.classifier();
    m["model_kind"] = model_kind_name(a.kind);
    m["clean_accuracy"] = num(clean_accuracy(*h, d.dataset));
    const Robustness r = robust_accuracy(*h, d.dataset, c.ball, eval_pgd(c));
    m.update(robustness_json(r));
    if (a.kind == ModelKind::RadiusPredictor)
        m["certified_accuracy"] =
            num(certified_accuracy(*a.radius, d.dataset, FiniteDistribution::uniform(d.dataset.size()), c.ball.delta));
    m["curve"] = budget_curve(*h, d.dataset, c, out);
    return m;
}

ModelArchive archive_for(const ExperimentConfig& c, ModelKind kind) {
    ModelArchive a;
    a.kind = kind;
    a.seed = c.seed;
    a.config = echo(c);
    return a;
}

const ModelArchive& required_model(const ExperimentConfig& c, std::optional<ModelArchive>& slot) {
    if (!c.model_path) throw Error(Errc::InvalidConfig, "this pipeline needs model=<archive>");
    if (!slot) slot = load_model(*c.model_path);
    return *slot;
}

std::shared_ptr<const ScorePredictor> certify_base(const ModelArchive& a) {
    if (a.kind == ModelKind::AdditiveEnsemble) return a.ensemble;
    if (const auto* sm = dynamic_cast<const SmoothedClassifier*>(a.radius.get()))
        return std::shared_ptr<const ScorePredictor>(a.radius, &sm->base());
    throw Error(Errc::BackendMismatch, "certify needs an additive-ensemble or smoothed model");
}

json write_error(std::ostream& err, const ExperimentConfig& c, const std::string& stage, const Error& e) {
    json rec = {{"error", errc_name(e.code())}, {"message", e.what()}, {"pipeline", pipeline_name(c.pipeline)},
                {"stage", stage}, {"exit_code", exit_code_for(e.code())}};
    if (const auto* ie = dynamic_cast<const InputError*>(&e)) rec["line"] = ie->line();
    if (const auto* wf = dynamic_cast<const WeakLearnerFailure*>(&e)) {
        rec["round"] = wf->round();
        rec["achieved"] = num(wf->achieved());
    }
    if (const auto* nf = dynamic_cast<const NonFiniteParameters*>(&e)) {
        rec["stage_index"] = nf->stage();
        rec["epoch"] = nf->epoch();
    }
    err << rec.dump() << std::endl;
    return rec;
}

void push_round(Outputs& o, const RoundRecord& r, bool timing) {
    json j = {{"round", r.round}, {"achieved_error", num(r.achieved_error)}, {"max_margin", num(r.max_margin)}};
    if (timing) j["wall_seconds"] = r.wall_seconds;
    o.trace.push_back(j);
}

void push_stagewise(Outputs& o, const StagewiseTrace& t, bool timing) {
    for (const auto& e : t.epochs)
        o.trace.push_back({{"type", "epoch"}, {"stage", e.stage}, {"epoch", e.epoch}, {"lr_first", num(e.lr_first)},
                           {"lr_last", num(e.lr_last)}, {"mean_loss", num(e.mean_loss)}});
    for (const auto& s : t.stages) {
        json j = {{"type", "stage"}, {"stage", s.stage}, {"epochs", s.epochs}, {"updates", s.updates},
                  {"beta", num(s.beta)}, {"train_loss", num(s.train_loss)}, {"clean_accuracy", num(s.clean_accuracy)},
                  {"robust_accuracy", num(s.robust_accuracy)}};
        if (timing) j["wall_seconds"] = s.wall_seconds;
        o.trace.push_back(j);
    }
}

} // namespace

// ============================================================================
// Orchestration
// ============================================================================
int run_pipeline(const ExperimentConfig& c, std::ostream& err) {
    std::string stage = "setup";
    Outputs out{c.out_dir, {}, {}};
    try {
        if (c.pipeline == Pipeline::Audit) {
            stage = "audit";
            const AuditReport rep = audit_directory(c.out_dir);
            json j = {{"ok", rep.ok}, {"mismatches", rep.mismatches}};
            err << j.dump() << std::endl;
            return rep.ok ? 0 : 4;
        }
        fs::create_directories(out.dir);
        stage = "load-data";
        const LoadedData data = load_data(c);
        std::optional<ModelArchive> model;

        switch (c.pipeline) {
        case Pipeline::Synth: {
            stage = "write";
            save_dataset((out.dir / "data.csv").string(), data.dataset);
            out.write_metrics(header(c, data));
            break;
        }
        case Pipeline::BoostGame: {
            stage = "train";
            BoostResult res = [&] {
                try {
                    return run_boost(data.dataset, stump_weak_learner(data.dataset, c.ball, c.boost.mode), ExactEvaluator{},
                                     c.boost);
                } catch (const WeakLearnerFailure& f) {
                    for (const auto& r : f.trace()) push_round(out, r, c.timing);
                    out.write_trace();
                    throw;
                }
            }();
            for (const auto& r : res.trace) push_round(out, r, c.timing);
            ModelArchive a = archive_for(c, ModelKind::Mixture);
            a.mixture = std::make_shared<MixtureQ>(std::move(res.q));
            stage = "write";
            save_model(a, (out.dir / "model.json").string());
            stage = "evaluate";
            const ModelArchive reloaded = load_model((out.dir / "model.json").string());
            out.write_metrics(game_metrics(c, data, *reloaded.mixture, &out));
            break;
        }
        case Pipeline::BoostStagewise: {
            stage = "train";
            StagewiseResult res = [&] {
                try {
                    return run_stagewise(data.dataset, c.stagewise);
                } catch (const NonFiniteParameters& f) {
                    push_stagewise(out, f.trace(), c.timing);
                    out.write_trace();
                    throw;
                }
            }();
            push_stagewise(out, res.trace, c.timing);
            ModelArchive a = archive_for(c, ModelKind::AdditiveEnsemble);
            a.ensemble = res.ensemble;
            stage = "write";
            save_model(a, (out.dir / "model.json").string());
            stage = "evaluate";
            const ModelArchive reloaded = load_model((out.dir / "model.json").string());
            out.write_metrics(stagewise_metrics(c, data, *reloaded.ensemble, &out));
            break;
        }
        case Pipeline::Certify: {
            stage = "load-model";
            const auto base = certify_base(required_model(c, model));
            ModelArchive a = archive_for(c, ModelKind::RadiusPredictor);
            a.radius = std::make_shared<SmoothedClassifier>(base, c.smoothing);
            stage = "write";
            save_model(a, (out.dir / "model.json").string());
            stage = "certify";
            out.write_metrics(certify_metrics(c, data, *base, &out));
            break;
        }
        case Pipeline::Check: {
            stage = "load-model";
            const ModelArchive& in = required_model(c, model);
            stage = "check";
            CheckerLearnResult res;
            const json m = check_metrics(c, data, in, &out, &res);
            if (res.found) {
                ModelArchive a = archive_for(c, ModelKind::Mixture);
                const std::vector<double> w{1.0};
                a.mixture = std::make_shared<MixtureQ>(w, std::vector{candidates_of(in)[*res.found]});
                save_model(a, (out.dir / "model.json").string());
            }
            out.write_metrics(m);
            break;
        }
        case Pipeline::Eval: {
            stage = "load-model";
            const ModelArchive& in = required_model(c, model);
            stage = "evaluate";
            out.write_metrics(eval_metrics(c, data, in, &out));
            break;
        }
        case Pipeline::Audit: break;
        }
        stage = "write";
        out.write_trace();
        out.write_plot();
        return 0;
    } catch (const Error& e) {
        write_error(err, c, stage, e);
        return exit_code_for(e.code());
    } catch (const fs::filesystem_error& e) {
        write_error(err, c, stage, Error(Errc::InvalidConfig, e.what()));
        return 2;
    } catch (const std::exception& e) {
        err << json{{"error", "Internal"}, {"message", e.what()}, {"pipeline", pipeline_name(c.pipeline)},
                    {"stage", stage}, {"exit_code", 1}}
                   .dump()
            << std::endl;
        return 1;
    }
}

AuditReport audit_directory(const std::string& dir_name) {
    const fs::path dir(dir_name);
    std::ifstream in(dir / "metrics.json");
    if (!in) throw Error(Errc::InvalidConfig, "no metrics.json in " + dir_name);
    json stored;
    try {
        stored = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, std::string("metrics.json: ") + e.what());
    }
    const Pipeline p = parse_pipeline(stored.at("pipeline").get<std::string>());
    ExperimentConfig c = config_from_values(p, stored.at("config").get<KeyValues>());
    c.out_dir = dir_name;
    const LoadedData data = load_data(c);
    std::optional<ModelArchive> model;
    auto archived = [&] { return load_model((dir / "model.json").string()); };

    json fresh;
    switch (p) {
    case Pipeline::Synth: fresh = header(c, data); break;
    case Pipeline::BoostGame: fresh = game_metrics(c, data, *archived().mixture, nullptr); break;
    case Pipeline::BoostStagewise: fresh = stagewise_metrics(c, data, *archived().ensemble, nullptr); break;
    case Pipeline::Certify: fresh = certify_metrics(c, data, *certify_base(archived()), nullptr); break;
    case Pipeline::Check: fresh = check_metrics(c, data, required_model(c, model), nullptr); break;
    case Pipeline::Eval: fresh = eval_metrics(c, data, required_model(c, model), nullptr); break;
    case Pipeline::Audit: throw Error(Errc::InvalidConfig, "cannot audit an audit");
    }
    AuditReport rep;
    for (const auto& [key, value] : stored.items())
        if (!fresh.contains(key) || fresh[key].dump() != value.dump()) rep.mismatches.push_back(key);
    for (const auto& [key, value] : fresh.items())
        if (!stored.contains(key)) rep.mismatches.push_back(key);
    rep.ok = rep.mismatches.empty();
    return rep;
}

} // namespace rboost::cli
