#include "rboost/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <tuple>

namespace rboost {

std::optional<LinearScorer> as_linear(const ScorePredictor& s) {
    if (const auto* lin = dynamic_cast<const LinearScorer*>(&s)) return *lin;
    if (const auto* mlp = dynamic_cast<const Mlp*>(&s)) {
        if (mlp->num_layers() != 1) return std::nullopt;
        const std::size_t d = mlp->input_dim();
        const std::size_t k = static_cast<std::size_t>(mlp->num_classes());
        const Vec& p = mlp->params();
        return LinearScorer(mlp->num_classes(), d, Vec(p.begin(), p.begin() + static_cast<long>(k * d)),
                            Vec(p.begin() + static_cast<long>(k * d), p.end()));
    }
    if (const auto* ens = dynamic_cast<const AdditiveEnsemble*>(&s)) {
        const std::size_t d = ens->input_dim();
        const std::size_t k = static_cast<std::size_t>(ens->num_classes());
        Vec w(k * d, 0.0), b(k, 0.0);
        for (const auto& st : ens->stages()) {
            auto part = as_linear(*st.f);
            if (!part) return std::nullopt;
            for (std::size_t i = 0; i < w.size(); ++i) w[i] += st.beta * part->weights()[i];
            for (std::size_t i = 0; i < k; ++i) b[i] += st.beta * part->bias()[i];
        }
        return LinearScorer(ens->num_classes(), d, std::move(w), std::move(b));
    }
    return std::nullopt;
}

namespace {

// Exact reach set of a plurality vote over stumps in an axis-aligned box.
// The vote is constant on the product of per-feature threshold cells, so one
// representative per cell suffices: every threshold in [lo, hi) plus hi.
ReachSet stump_mixture_reach(const MixtureQ& q, std::span<const double> x, const PerturbationBall& ball) {
    struct Key {
        std::size_t f;
        double t;
        Label l, r;
        bool operator<(const Key& o) const { return std::tie(f, t, l, r) < std::tie(o.f, o.t, o.l, o.r); }
    };
    std::map<Key, double> merged;
    std::map<std::size_t, std::vector<double>> reps;
    for (const auto& c : q.components()) {
        const auto* s = dynamic_cast<const DecisionStump*>(c.h.get());
        if (!s) throw Error(Errc::BackendMismatch, "exact mixture reach sets need stump components");
        merged[{s->feature(), s->threshold(), s->left(), s->right()}] += c.weight;
        reps[s->feature()];
    }
    if (ball.p == Norm::L2 && reps.size() > 1)
        throw Error(Errc::UnsupportedNorm, "exact stump-mixture reach sets under L2 need a single feature");

    std::vector<std::size_t> features;
    std::vector<std::vector<double>> values;
    for (auto& [f, v] : reps) {
        const double lo = x[f] - ball.delta, hi = x[f] + ball.delta;
        for (const auto& [key, w] : merged)
            if (key.f == f && key.t >= lo && key.t < hi) v.push_back(key.t);
        v.push_back(hi);
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        features.push_back(f);
        values.push_back(v);
    }

    const int k = q.num_classes();
    LabelSet out(k);
    Vec point(x.begin(), x.end());
    std::vector<std::size_t> idx(features.size(), 0);
    while (true) {
        for (std::size_t a = 0; a < features.size(); ++a) point[features[a]] = values[a][idx[a]];
        Vec mass(static_cast<std::size_t>(k), 0.0);
        for (const auto& [key, w] : merged)
            mass[static_cast<std::size_t>(point[key.f] <= key.t ? key.l : key.r)] += w;
        out.insert(argmax_label(mass));
        std::size_t a = 0;
        while (a < idx.size() && ++idx[a] == values[a].size()) idx[a++] = 0;
        if (a == idx.size()) break;
    }
    return {out, true};
}

} // namespace

// ============================================================================
// Evaluators
// ============================================================================
ReachSet ExactEvaluator::reach_set(const UnilabelPredictor& h, std::span<const double> x,
                                   const PerturbationBall& ball) const {
    if (ball.delta == 0.0) return {LabelSet::single(h.num_classes(), h.predict(x)), true};
    if (const auto* stump = dynamic_cast<const DecisionStump*>(&h)) return stump->reach_set(x, ball);
    if (const auto* am = dynamic_cast<const ArgmaxClassifier*>(&h)) {
        if (auto lin = as_linear(am->scorer())) return lin->reach_set(x, ball, ReachMode::RequireExact);
    }
    if (const auto* q = dynamic_cast<const MixtureQ*>(&h)) return stump_mixture_reach(*q, x, ball);
    throw Error(Errc::BackendMismatch, "no exact reach-set method for this hypothesis");
}

ReachSet PgdEvaluator::reach_set(const UnilabelPredictor& h, std::span<const double> x,
                                 const PerturbationBall& ball) const {
    const auto* am = dynamic_cast<const ArgmaxClassifier*>(&h);
    const auto* f = am ? dynamic_cast<const DifferentiableScorer*>(&am->scorer()) : nullptr;
    if (!f) throw Error(Errc::BackendMismatch, "PGD evaluation needs an argmax classifier over a differentiable scorer");
    const int k = f->num_classes();
    const std::size_t d = f->input_dim();
    LabelSet out = LabelSet::single(k, h.predict(x));
    if (ball.delta == 0.0) return {out, false};

    Vec xz(d), upstream(static_cast<std::size_t>(k));
    for (Label t = 0; t < k; ++t) {
        if (out.contains(t)) continue;
        auto objective = [&](std::span<const double> z) {
            for (std::size_t i = 0; i < d; ++i) xz[i] = x[i] + z[i];
            const Vec s = f->scores(xz);
            double worst = std::numeric_limits<double>::infinity();
            Label arg = t == 0 ? 1 : 0;
            for (Label j = 0; j < k; ++j) {
                if (j == t) continue;
                const double g = s[static_cast<std::size_t>(t)] - s[static_cast<std::size_t>(j)];
                if (g < worst) {
                    worst = g;
                    arg = j;
                }
            }
            std::fill(upstream.begin(), upstream.end(), 0.0);
            upstream[static_cast<std::size_t>(t)] = 1.0;
            upstream[static_cast<std::size_t>(arg)] = -1.0;
            return std::pair<double, Vec>{worst, f->input_gradient(xz, upstream)};
        };
        PgdConfig cfg = config_;
        cfg.stream = config_.stream * 131 + static_cast<std::uint64_t>(t);
        const PgdResult r = pgd_maximize(objective, d, ball, cfg);
        Vec point(d);
        for (std::size_t i = 0; i < d; ++i) point[i] = x[i] + r.z[i];
        if (h.predict(point) == t) out.insert(t);
    }
    return {out, false};
}

std::vector<Vec> GridEvaluator::grid(std::size_t dim, const PerturbationBall& ball) const {
    if (dim > 2) throw Error(Errc::DimensionTooLarge, "grid evaluation supports d <= 2");
    const std::size_t n = points_ | 1u; // odd, so 0 is on the grid
    std::vector<double> axis(n);
    for (std::size_t i = 0; i < n; ++i)
        axis[i] = ball.delta * (-1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1));
    axis[n / 2] = 0.0;
    std::vector<Vec> pts;
    if (dim == 1) {
        for (double a : axis) pts.push_back({a});
        return pts;
    }
    for (double a : axis)
        for (double b : axis) {
            Vec z{a, b};
            if (ball.p == Norm::Linf || norm_of(z, Norm::L2) <= ball.delta) pts.push_back(std::move(z));
        }
    if (ball.p == Norm::L2) {
        const std::size_t ring = 8 * n;
        for (std::size_t i = 0; i < ring; ++i) {
            const double th = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(ring);
            pts.push_back(ball_project(Vec{ball.delta * std::cos(th), ball.delta * std::sin(th)}, ball));
        }
    }
    return pts;
}

ReachSet GridEvaluator::reach_set(const UnilabelPredictor& h, std::span<const double> x,
                                  const PerturbationBall& ball) const {
    LabelSet out = LabelSet::single(h.num_classes(), h.predict(x));
    if (ball.delta == 0.0) return {out, false};
    Vec point(x.size());
    for (const Vec& z : grid(x.size(), ball)) {
        for (std::size_t i = 0; i < x.size(); ++i) point[i] = x[i] + z[i];
        out.insert(h.predict(point));
    }
    return {out, false};
}

// ============================================================================
// Losses
// ============================================================================
int base_loss(const LabelSet& hx, Label y, Label y_wrong) {
    if (y == y_wrong) throw Error(Errc::SameLabel, "y and y' must differ");
    return (hx.contains(y_wrong) ? 1 : 0) - (hx.contains(y) ? 1 : 0);
}

int base_loss(const UnilabelPredictor& h, std::span<const double> x, Label y, Label y_wrong) {
    return base_loss(LabelSet::single(h.num_classes(), h.predict(x)), y, y_wrong);
}

int pair_loss_from_reach(const LabelSet& reach, Label y, Label y_wrong) {
    if (y == y_wrong) throw Error(Errc::SameLabel, "y and y' must differ");
    return (reach.contains(y_wrong) ? 1 : 0) - (reach.is_singleton(y) ? 1 : 0);
}

int ova_loss_from_reach(const LabelSet& reach, Label y) { return reach.is_singleton(y) ? -1 : 1; }

RobustLoss robust_pair_loss(const UnilabelPredictor& h, const RobustEvaluator& evaluator,
                            const PerturbationBall& ball, std::span<const double> x, Label y, Label y_wrong) {
    if (y == y_wrong) throw Error(Errc::SameLabel, "y and y' must differ");
    const ReachSet r = evaluator.reach_set(h, x, ball);
    return {pair_loss_from_reach(r.labels, y, y_wrong), r.certified};
}

RobustLoss ova_loss(const UnilabelPredictor& h, const RobustEvaluator& evaluator, const PerturbationBall& ball,
                    std::span<const double> x, Label y) {
    const ReachSet r = evaluator.reach_set(h, x, ball);
    return {ova_loss_from_reach(r.labels, y), r.certified};
}

double ce_loss(std::span<const double> scores, Label y) {
    const double mx = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - mx);
    const double loss = mx + std::log(sum) - scores[static_cast<std::size_t>(y)];
    return std::max(loss, 0.0);
}

Vec softmax(std::span<const double> scores) {
    const double mx = *std::max_element(scores.begin(), scores.end());
    Vec p(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(scores[i] - mx));
    for (double& v : p) v /= sum;
    return p;
}

Vec ce_gradient(std::span<const double> scores, Label y) {
    Vec g = softmax(scores);
    g[static_cast<std::size_t>(y)] -= 1.0;
    return g;
}

RobustCe robust_ce_loss(const DifferentiableScorer& f, const PgdConfig& pgd, const PerturbationBall& ball,
                        std::span<const double> x, Label y) {
    PgdConfig cfg = pgd;
    cfg.include_zero_start = true;
    const std::size_t d = f.input_dim();
    Vec xz(d);
    auto objective = [&](std::span<const double> z) {
        for (std::size_t i = 0; i < d; ++i) xz[i] = x[i] + z[i];
        const Vec s = f.scores(xz);
        return std::pair<double, Vec>{ce_loss(s, y), f.input_gradient(xz, ce_gradient(s, y))};
    };
    PgdResult r = pgd_maximize(objective, d, ball, cfg);
    return {r.loss, std::move(r.z)};
}

// ============================================================================
// Weighted errors
// ============================================================================
std::vector<ReachSet> reach_sets(const UnilabelPredictor& h, const RobustEvaluator& evaluator,
                                 const PerturbationBall& ball, const Dataset& dataset) {
    std::vector<ReachSet> out;
    out.reserve(dataset.size());
    for (const auto& e : dataset.examples()) out.push_back(evaluator.reach_set(h, e.x, ball));
    return out;
}

namespace {
void check_pairs(const Dataset& dataset, const IncorrectPairSet& pairs, const FiniteDistribution& d) {
    if (d.size() != pairs.size()) throw Error(Errc::SupportMismatch, "distribution size differs from the pair set");
    for (const auto& p : pairs)
        if (p.example >= dataset.size() || p.wrong < 0 || p.wrong >= dataset.num_classes() ||
            p.wrong == dataset[p.example].y)
            throw Error(Errc::SupportMismatch, "pair not in the incorrect-pair set");
}
} // namespace

double weighted_err(const UnilabelPredictor& h, const Dataset& dataset, const IncorrectPairSet& pairs,
                    const FiniteDistribution& d) {
    check_pairs(dataset, pairs, d);
    std::vector<Label> pred(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) pred[i] = h.predict(dataset[i].x);
    double err = 0.0;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto& pr = pairs[p];
        const LabelSet hx = LabelSet::single(dataset.num_classes(), pred[pr.example]);
        err += d[p] * base_loss(hx, dataset[pr.example].y, pr.wrong);
    }
    return std::clamp(err, -1.0, 1.0);
}

ErrorRate weighted_err_delta(const UnilabelPredictor& h, const RobustEvaluator& evaluator,
                             const PerturbationBall& ball, const Dataset& dataset, const IncorrectPairSet& pairs,
                             const FiniteDistribution& d) {
    check_pairs(dataset, pairs, d);
    const auto reach = reach_sets(h, evaluator, ball, dataset);
    ErrorRate out;
    for (const auto& r : reach) out.certified = out.certified && r.certified;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto& pr = pairs[p];
        out.value += d[p] * pair_loss_from_reach(reach[pr.example].labels, dataset[pr.example].y, pr.wrong);
    }
    // Rounding in the weighted sum can leave the range by an ulp.
    out.value = std::clamp(out.value, -1.0, 1.0);
    return out;
}

ErrorRate weighted_err_ova(const UnilabelPredictor& h, const RobustEvaluator& evaluator,
                           const PerturbationBall& ball, const Dataset& dataset, const FiniteDistribution& d) {
    if (d.size() != dataset.size()) throw Error(Errc::SupportMismatch, "distribution size differs from the dataset");
    ErrorRate out;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const ReachSet r = evaluator.reach_set(h, dataset[i].x, ball);
        out.certified = out.certified && r.certified;
        out.value += d[i] * ova_loss_from_reach(r.labels, dataset[i].y);
    }
    out.value = std::clamp(out.value, -1.0, 1.0);
    return out;
}

} // namespace rboost
