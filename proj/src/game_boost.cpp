#include "rboost/game_boost.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace rboost {

int rounds_for_margin(double gamma, std::size_t support_size) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(Errc::InvalidGamma, "gamma must lie in (0, 1]");
    const double n = static_cast<double>(std::max<std::size_t>(support_size, 2));
    return static_cast<int>(std::ceil(16.0 * std::log(n) / (gamma * gamma)));
}

double auto_hedge_step(double gamma, std::size_t support_size, int rounds) {
    const double n = static_cast<double>(std::max<std::size_t>(support_size, 2));
    return std::min(gamma / 4.0, std::sqrt(std::log(n) / static_cast<double>(rounds)));
}

// ============================================================================
// Hedge
// ============================================================================
namespace {
FiniteDistribution weights_from_logs(std::span<const double> logs) {
    const double mx = *std::max_element(logs.begin(), logs.end());
    std::vector<double> w(logs.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = std::max(std::exp(logs[i] - mx), std::numeric_limits<double>::min());
    return FiniteDistribution::normalize(w);
}
} // namespace

HedgeState HedgeState::uniform(std::size_t n, double step) { return from(FiniteDistribution::uniform(n), step); }

HedgeState HedgeState::from(const FiniteDistribution& d, double step) {
    if (!(step >= 0.0)) throw Error(Errc::InvalidConfig, "hedge step must be >= 0");
    HedgeState s;
    s.d = d;
    s.step = step;
    s.cumulative_loss.assign(d.size(), 0.0);
    for (double w : d.weights()) {
        if (!(w > 0.0)) throw Error(Errc::InvalidConfig, "hedge weights must be strictly positive");
        s.log_weights.push_back(std::log(w));
    }
    return s;
}

HedgeState hedge_update(const HedgeState& state, std::span<const double> losses) {
    if (losses.size() != state.d.size()) throw Error(Errc::SupportMismatch, "one loss per support point");
    HedgeState next = state;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        next.log_weights[i] += state.step * losses[i];
        next.cumulative_loss[i] += losses[i];
    }
    next.d = weights_from_logs(next.log_weights);
    ++next.round;
    return next;
}

// ============================================================================
// Margin report
// ============================================================================
MarginReport margin_report(const MixtureQ& q, const Dataset& dataset, const PerturbationBall& ball,
                           const RobustEvaluator& evaluator, BoostMode mode) {
    if (!evaluator.certified()) throw Error(Errc::NonCertifiedEvaluator, "margin reports need a certified evaluator");
    const std::size_t m = dataset.size();
    const std::size_t k = static_cast<std::size_t>(dataset.num_classes());
    // reach_mass[i*k + y] = Pr_h[y reachable at x_i]; forced[i] = Pr_h[reach = {y_i}].
    std::vector<double> reach_mass(m * k, 0.0), forced(m, 0.0), any_wrong(m, 0.0);
    for (const auto& c : q.components()) {
        for (std::size_t i = 0; i < m; ++i) {
            const ReachSet r = evaluator.reach_set(*c.h, dataset[i].x, ball);
            if (!r.certified) throw Error(Errc::NonCertifiedEvaluator, "evaluator could not certify a component");
            for (Label y : r.labels.labels()) reach_mass[i * k + static_cast<std::size_t>(y)] += c.weight;
            if (r.labels.is_singleton(dataset[i].y)) forced[i] += c.weight;
            else any_wrong[i] += c.weight;
        }
    }
    MarginReport rep;
    rep.max_margin = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        rep.min_forced = std::min(rep.min_forced, forced[i]);
        if (mode == BoostMode::OneVsAll) {
            MarginEntry e{i, -1, any_wrong[i] - forced[i], forced[i], any_wrong[i]};
            rep.max_margin = std::max(rep.max_margin, e.loss);
            rep.entries.push_back(e);
            continue;
        }
        for (Label y = 0; y < dataset.num_classes(); ++y) {
            if (y == dataset[i].y) continue;
            const double pr = reach_mass[i * k + static_cast<std::size_t>(y)];
            MarginEntry e{i, y, pr - forced[i], forced[i], pr};
            rep.max_margin = std::max(rep.max_margin, e.loss);
            rep.entries.push_back(e);
        }
    }
    return rep;
}

// ============================================================================
// Booster
// ============================================================================
void BoostConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw Error(Errc::InvalidGamma, "gamma must lie in (0, 1]");
    if (rounds < 0) throw Error(Errc::InvalidConfig, "rounds must be >= 0 (0 = auto)");
    if (hedge_step < 0.0) throw Error(Errc::InvalidConfig, "hedge step must be >= 0 (0 = auto)");
    PerturbationBall::make(ball.p, ball.delta);
}

WeakLearnerFailure::WeakLearnerFailure(int round, double achieved, std::vector<RoundRecord> trace)
    : Error(Errc::WeakLearnerFailed,
            "round " + std::to_string(round) + " achieved robust error " + std::to_string(achieved)),
      round_(round), achieved_(achieved), trace_(std::move(trace)) {}

BoostResult run_boost(const Dataset& dataset, const WeakLearner& weak_learner, const RobustEvaluator& evaluator,
                      const BoostConfig& config) {
    config.validate();
    if (config.require_certified && !evaluator.certified())
        throw Error(Errc::NonCertifiedEvaluator, "the booster's guarantee needs exact robust losses");

    const bool pairs_mode = config.mode == BoostMode::Pairs;
    const IncorrectPairSet pairs = pairs_mode ? build_incorrect_pairs(dataset) : IncorrectPairSet{};
    const std::size_t n = pairs_mode ? pairs.size() : dataset.size();
    const int rounds = config.rounds > 0 ? config.rounds : rounds_for_margin(config.gamma, n);
    const double step = config.hedge_step > 0.0 ? config.hedge_step : auto_hedge_step(config.gamma, n, rounds);

    HedgeState hedge = HedgeState::uniform(n, step);
    std::vector<std::shared_ptr<const UnilabelPredictor>> hs;
    std::vector<RoundRecord> trace;
    std::vector<double> losses(n), mixture_sum(n, 0.0);

    for (int t = 1; t <= rounds; ++t) {
        const auto start = std::chrono::steady_clock::now();
        WeakHypothesis wh = weak_learner(hedge.d);
        if (!wh.h) throw Error(Errc::WeakLearnerFailed, "weak learner returned no hypothesis");

        bool certified = true;
        double achieved = 0.0;
        const std::vector<ReachSet> reach = reach_sets(*wh.h, evaluator, config.ball, dataset);
        for (const auto& r : reach) certified = certified && r.certified;
        if (pairs_mode) {
            for (std::size_t p = 0; p < n; ++p) {
                const auto& pr = pairs[p];
                losses[p] = pair_loss_from_reach(reach[pr.example].labels, dataset[pr.example].y, pr.wrong);
            }
        } else {
            for (std::size_t i = 0; i < n; ++i) losses[i] = ova_loss_from_reach(reach[i].labels, dataset[i].y);
        }
        if (config.require_certified && !certified)
            throw Error(Errc::NonCertifiedEvaluator, "evaluator could not certify round " + std::to_string(t));
        for (std::size_t p = 0; p < n; ++p) achieved += hedge.d[p] * losses[p];

        double max_margin = -std::numeric_limits<double>::infinity();
        for (std::size_t p = 0; p < n; ++p) {
            mixture_sum[p] += losses[p];
            max_margin = std::max(max_margin, mixture_sum[p] / t);
        }
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        trace.push_back({t, achieved, max_margin, wall});
        if (achieved > -config.gamma + 1e-12) throw WeakLearnerFailure(t, achieved, std::move(trace));

        hs.push_back(std::move(wh.h));
        hedge = hedge_update(hedge, losses);
        if (config.early_stop && max_margin < 0.0) break;
    }

    const std::vector<double> weights(hs.size(), 1.0);
    MixtureQ q(weights, std::move(hs));
    MarginReport report = margin_report(q, dataset, config.ball, evaluator, config.mode);

    std::optional<double> robust_accuracy;
    try {
        std::size_t ok = 0;
        for (const auto& e : dataset.examples())
            if (evaluator.reach_set(q, e.x, config.ball).labels.is_singleton(e.y)) ++ok;
        robust_accuracy = static_cast<double>(ok) / static_cast<double>(dataset.size());
    } catch (const Error& err) {
        if (err.code() != Errc::BackendMismatch && err.code() != Errc::UnsupportedNorm) throw;
    }
    return BoostResult{std::move(q), std::move(report), std::move(trace), robust_accuracy};
}

WeakLearner stump_weak_learner(const Dataset& dataset, const PerturbationBall& ball, BoostMode mode) {
    if (mode == BoostMode::OneVsAll) {
        return [&dataset, ball](const FiniteDistribution& d) {
            StumpFit fit = train_stump_ova_weak_learner(dataset, d, ball);
            return WeakHypothesis{std::make_shared<DecisionStump>(fit.stump), fit.error};
        };
    }
    auto pairs = std::make_shared<IncorrectPairSet>(build_incorrect_pairs(dataset));
    return [&dataset, ball, pairs](const FiniteDistribution& d) {
        StumpFit fit = train_stump_weak_learner(dataset, *pairs, d, ball);
        return WeakHypothesis{std::make_shared<DecisionStump>(fit.stump), fit.error};
    };
}

} // namespace rboost
