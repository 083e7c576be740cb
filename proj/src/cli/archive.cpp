#include "rboost/cli/archive.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace rboost::cli {

using json = nlohmann::json;

std::string model_kind_name(ModelKind k) {
    switch (k) {
    case ModelKind::Mixture: return "mixture";
    case ModelKind::AdditiveEnsemble: return "additive-ensemble";
    case ModelKind::RadiusPredictor: return "radius-predictor";
    }
    return "?";
}

std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_real(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) throw Error(Errc::CorruptArchive, "bad real '" + s + "'");
    return v;
}

std::shared_ptr<const UnilabelPredictor> ModelArchive::classifier() const {
    switch (kind) {
    case ModelKind::Mixture: return mixture;
    case ModelKind::AdditiveEnsemble: return std::make_shared<ArgmaxClassifier>(ensemble);
    case ModelKind::RadiusPredictor: return radius;
    }
    return nullptr;
}

// ============================================================================
// Encoding
// ============================================================================
namespace {
json reals(std::span<const double> v) {
    json a = json::array();
    for (double x : v) a.push_back(format_real(x));
    return a;
}

json encode_scorer(const ScorePredictor& s) {
    if (const auto* lin = dynamic_cast<const LinearScorer*>(&s)) {
        return {{"type", "linear"},
                {"num_classes", lin->num_classes()},
                {"input_dim", lin->input_dim()},
                {"weights", reals(lin->weights())},
                {"bias", reals(lin->bias())}};
    }
    if (const auto* mlp = dynamic_cast<const Mlp*>(&s))
        return {{"type", "mlp"}, {"layer_sizes", mlp->layer_sizes()}, {"params", reals(mlp->params())}};
    if (const auto* ens = dynamic_cast<const AdditiveEnsemble*>(&s)) {
        json stages = json::array();
        for (const auto& st : ens->stages()) stages.push_back({{"beta", format_real(st.beta)}, {"scorer", encode_scorer(*st.f)}});
        return {{"type", "ensemble"}, {"num_classes", ens->num_classes()}, {"input_dim", ens->input_dim()}, {"stages", stages}};
    }
    throw Error(Errc::BackendMismatch, "scorer type cannot be archived");
}

json encode_mixture(const MixtureQ& q);

json encode_hypothesis(const UnilabelPredictor& h) {
    if (const auto* s = dynamic_cast<const DecisionStump*>(&h)) {
        return {{"type", "stump"},
                {"num_classes", s->num_classes()},
                {"feature", s->feature()},
                {"threshold", format_real(s->threshold())},
                {"left", s->left()},
                {"right", s->right()}};
    }
    if (const auto* a = dynamic_cast<const ArgmaxClassifier*>(&h))
        return {{"type", "argmax"}, {"scorer", encode_scorer(a->scorer())}};
    if (const auto* r = dynamic_cast<const LinearRadiusPredictor*>(&h))
        return {{"type", "linear-radius"}, {"norm", norm_name(r->norm())}, {"scorer", encode_scorer(r->scorer())}};
    if (const auto* sm = dynamic_cast<const SmoothedClassifier*>(&h)) {
        const auto& c = sm->config();
        return {{"type", "smoothed"},
                {"sigma", format_real(c.sigma)},
                {"n_samples", c.n_samples},
                {"seed", std::to_string(c.seed)},
                {"conservative", c.conservative},
                {"alpha", format_real(c.alpha)},
                {"scorer", encode_scorer(sm->base())}};
    }
    if (const auto* ag = dynamic_cast<const AggregateRadiusPredictor*>(&h))
        return {{"type", "aggregate"}, {"mixture", encode_mixture(ag->mixture())}};
    if (const auto* q = dynamic_cast<const MixtureQ*>(&h)) return {{"type", "mixture"}, {"mixture", encode_mixture(*q)}};
    throw Error(Errc::BackendMismatch, "hypothesis type cannot be archived");
}

json encode_mixture(const MixtureQ& q) {
    json comps = json::array();
    for (std::size_t i = 0; i < q.size(); ++i)
        comps.push_back({{"weight", format_real(q.raw_weights()[i])}, {"hypothesis", encode_hypothesis(*q.components()[i].h)}});
    return {{"num_classes", q.num_classes()}, {"components", comps}};
}

// ============================================================================
// Decoding
// ============================================================================
Vec read_reals(const json& a) {
    if (!a.is_array()) throw Error(Errc::CorruptArchive, "expected an array of reals");
    Vec v;
    v.reserve(a.size());
    for (const auto& x : a) v.push_back(parse_real(x.get<std::string>()));
    return v;
}

std::shared_ptr<const DifferentiableScorer> decode_scorer(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "linear") {
        return std::make_shared<LinearScorer>(j.at("num_classes").get<int>(), j.at("input_dim").get<std::size_t>(),
                                              read_reals(j.at("weights")), read_reals(j.at("bias")));
    }
    if (type == "mlp")
        return std::make_shared<Mlp>(j.at("layer_sizes").get<std::vector<std::size_t>>(), read_reals(j.at("params")));
    if (type == "ensemble") {
        auto ens = std::make_shared<AdditiveEnsemble>(j.at("num_classes").get<int>(), j.at("input_dim").get<std::size_t>());
        for (const auto& st : j.at("stages")) ens->append(parse_real(st.at("beta").get<std::string>()), decode_scorer(st.at("scorer")));
        return ens;
    }
    throw Error(Errc::CorruptArchive, "unknown scorer type '" + type + "'");
}

std::shared_ptr<const MixtureQ> decode_mixture(const json& j);

std::shared_ptr<const UnilabelPredictor> decode_hypothesis(const json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "stump") {
        return std::make_shared<DecisionStump>(j.at("feature").get<std::size_t>(), parse_real(j.at("threshold").get<std::string>()),
                                               j.at("left").get<Label>(), j.at("right").get<Label>(), j.at("num_classes").get<int>());
    }
    if (type == "argmax") return std::make_shared<ArgmaxClassifier>(decode_scorer(j.at("scorer")));
    if (type == "linear-radius") {
        auto s = std::dynamic_pointer_cast<const LinearScorer>(decode_scorer(j.at("scorer")));
        if (!s) throw Error(Errc::CorruptArchive, "linear-radius needs a linear scorer");
        return std::make_shared<LinearRadiusPredictor>(*s, parse_norm(j.at("norm").get<std::string>()));
    }
    if (type == "smoothed") {
        SmoothingConfig c;
        c.sigma = parse_real(j.at("sigma").get<std::string>());
        c.n_samples = j.at("n_samples").get<int>();
        c.seed = std::stoull(j.at("seed").get<std::string>());
        c.conservative = j.at("conservative").get<bool>();
        c.alpha = parse_real(j.at("alpha").get<std::string>());
        return std::make_shared<SmoothedClassifier>(decode_scorer(j.at("scorer")), c);
    }
    if (type == "aggregate") return std::make_shared<AggregateRadiusPredictor>(*decode_mixture(j.at("mixture")));
    if (type == "mixture") return decode_mixture(j.at("mixture"));
    throw Error(Errc::CorruptArchive, "unknown hypothesis type '" + type + "'");
}

std::shared_ptr<const MixtureQ> decode_mixture(const json& j) {
    std::vector<double> w;
    std::vector<std::shared_ptr<const UnilabelPredictor>> hs;
    for (const auto& c : j.at("components")) {
        w.push_back(parse_real(c.at("weight").get<std::string>()));
        hs.push_back(decode_hypothesis(c.at("hypothesis")));
    }
    auto q = std::make_shared<MixtureQ>(w, std::move(hs));
    if (q->num_classes() != j.at("num_classes").get<int>()) throw Error(Errc::CorruptArchive, "class count mismatch");
    return q;
}
} // namespace

std::string serialize_archive(const ModelArchive& a) {
    json doc;
    doc["format_version"] = kFormatVersion;
    doc["kind"] = model_kind_name(a.kind);
    doc["seed"] = std::to_string(a.seed);
    doc["config"] = a.config;
    switch (a.kind) {
    case ModelKind::Mixture:
        if (!a.mixture) throw Error(Errc::InvalidConfig, "mixture archive without a mixture");
        doc["model"] = encode_mixture(*a.mixture);
        break;
    case ModelKind::AdditiveEnsemble:
        if (!a.ensemble) throw Error(Errc::InvalidConfig, "ensemble archive without an ensemble");
        doc["model"] = encode_scorer(*a.ensemble);
        break;
    case ModelKind::RadiusPredictor:
        if (!a.radius) throw Error(Errc::InvalidConfig, "radius archive without a radius predictor");
        doc["model"] = encode_hypothesis(*a.radius);
        break;
    }
    return doc.dump(1) + "\n";
}

ModelArchive parse_archive(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptArchive, std::string("unreadable archive: ") + e.what());
    }
    try {
        const int version = doc.at("format_version").get<int>();
        if (version != kFormatVersion)
            throw Error(Errc::VersionMismatch, "archive format " + std::to_string(version) + ", reader supports " +
                                                   std::to_string(kFormatVersion));
        ModelArchive a;
        a.seed = std::stoull(doc.at("seed").get<std::string>());
        a.config = doc.at("config").get<KeyValues>();
        const std::string kind = doc.at("kind").get<std::string>();
        const json& m = doc.at("model");
        if (kind == "mixture") {
            a.kind = ModelKind::Mixture;
            a.mixture = decode_mixture(m);
        } else if (kind == "additive-ensemble") {
            a.kind = ModelKind::AdditiveEnsemble;
            a.ensemble = std::dynamic_pointer_cast<const AdditiveEnsemble>(decode_scorer(m));
            if (!a.ensemble) throw Error(Errc::CorruptArchive, "additive-ensemble archive holds another scorer");
        } else if (kind == "radius-predictor") {
            a.kind = ModelKind::RadiusPredictor;
            a.radius = std::dynamic_pointer_cast<const RadiusPredictor>(decode_hypothesis(m));
            if (!a.radius) throw Error(Errc::CorruptArchive, "radius-predictor archive holds another model");
        } else {
            throw Error(Errc::CorruptArchive, "unknown model kind '" + kind + "'");
        }
        return a;
    } catch (const json::exception& e) {
        throw Error(Errc::CorruptArchive, std::string("malformed archive: ") + e.what());
    } catch (const std::invalid_argument&) {
        throw Error(Errc::CorruptArchive, "malformed integer in archive");
    } catch (const std::out_of_range&) {
        throw Error(Errc::CorruptArchive, "integer out of range in archive");
    } catch (const Error& e) {
        if (e.code() == Errc::VersionMismatch || e.code() == Errc::CorruptArchive) throw;
        throw Error(Errc::CorruptArchive, std::string("inconsistent archive: ") + e.what());
    }
}

void save_model(const ModelArchive& archive, const std::string& path) {
    const std::string text = serialize_archive(archive);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::InvalidConfig, "cannot write " + path);
    out << text;
}

ModelArchive load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::InvalidConfig, "cannot open model " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_archive(ss.str());
}

} // namespace rboost::cli
