#pragma once
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "rboost/core.hpp"
#include "rboost/hypotheses.hpp"
#include "rboost/losses.hpp"

namespace rboost {

// ============================================================================
// Hedge over the booster's support
// ============================================================================

/// Rounds after which Hedge with step gamma/4 keeps every mixture margin
/// at most -gamma/2: ceil(16 ln(max(N, 2)) / gamma^2).
int rounds_for_margin(double gamma, std::size_t support_size);

/// min(gamma/4, sqrt(ln(max(N, 2)) / T)).
double auto_hedge_step(double gamma, std::size_t support_size, int rounds);

struct HedgeState {
    FiniteDistribution d;
    /// Unnormalized log-weights; d = softmax(log_weights).
    std::vector<double> log_weights;
    std::vector<double> cumulative_loss;
    int round = 0;
    double step = 0.0;

    static HedgeState uniform(std::size_t n, double step);
    static HedgeState from(const FiniteDistribution& d, double step);
};

/// weight_i <- weight_i * exp(step * loss_i), renormalized. The booster plays
/// the maximizing side, so pairs the last hypothesis got wrong gain mass.
HedgeState hedge_update(const HedgeState& state, std::span<const double> losses);

// ============================================================================
// Booster
// ============================================================================
enum class BoostMode {
    Pairs,    // D over the incorrect-pair set, robust pair loss
    OneVsAll, // D over the examples, robust one-vs-all loss
};

struct BoostConfig {
    double gamma = 0.5;
    /// 0 selects rounds_for_margin(gamma, N).
    int rounds = 0;
    /// 0 selects auto_hedge_step.
    double hedge_step = 0.0;
    PerturbationBall ball;
    bool require_certified = true;
    BoostMode mode = BoostMode::Pairs;
    /// Stop once every mixture margin is negative.
    bool early_stop = true;

    void validate() const;
};

struct WeakHypothesis {
    std::shared_ptr<const UnilabelPredictor> h;
    /// Robust error the learner claims under the queried distribution.
    double claimed_error = 0.0;
};

using WeakLearner = std::function<WeakHypothesis(const FiniteDistribution&)>;

struct MarginEntry {
    std::size_t example = 0;
    /// Wrong label of the pair; -1 for one-vs-all entries.
    Label wrong = -1;
    /// Mixture loss: p_reach - p_forced.
    double loss = 0.0;
    /// Pr_{h~Q}[h(x+z) = y for all z].
    double p_forced = 0.0;
    /// Pr_{h~Q}[exists z: h(x+z) = y'] (any wrong label in one-vs-all mode).
    double p_reach = 0.0;
};

struct MarginReport {
    std::vector<MarginEntry> entries;
    double max_margin = -1.0;
    /// min over examples of p_forced.
    double min_forced = 1.0;
};

/// Exact mixture losses per pair (or per example in one-vs-all mode).
MarginReport margin_report(const MixtureQ& q, const Dataset& dataset, const PerturbationBall& ball,
                           const RobustEvaluator& evaluator, BoostMode mode = BoostMode::Pairs);

struct RoundRecord {
    int round = 0;
    double achieved_error = 0.0;
    double max_margin = 0.0;
    double wall_seconds = 0.0;
};

struct BoostResult {
    MixtureQ q;
    MarginReport report;
    std::vector<RoundRecord> trace;
    /// Fraction of S on which h_Q^am is robust-correct, when the evaluator can
    /// certify the mixture itself.
    std::optional<double> robust_accuracy;
};

class WeakLearnerFailure : public Error {
public:
    WeakLearnerFailure(int round, double achieved, std::vector<RoundRecord> trace);
    int round() const noexcept { return round_; }
    double achieved() const noexcept { return achieved_; }
    const std::vector<RoundRecord>& trace() const noexcept { return trace_; }

private:
    int round_;
    double achieved_;
    std::vector<RoundRecord> trace_;
};

/// Runs Hedge against the weak learner and returns the uniform mixture over
/// the rounds' hypotheses together with its certified margin report.
BoostResult run_boost(const Dataset& dataset, const WeakLearner& weak_learner, const RobustEvaluator& evaluator,
                      const BoostConfig& config);

/// Exhaustive stump learner bound to a dataset, for the configured mode.
WeakLearner stump_weak_learner(const Dataset& dataset, const PerturbationBall& ball, BoostMode mode);

} // namespace rboost
