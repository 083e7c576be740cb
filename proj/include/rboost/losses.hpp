#pragma once
#include <optional>
#include <cstddef>
#include <span>

#include "rboost/core.hpp"
#include "rboost/hypotheses.hpp"
#include "rboost/pgd.hpp"

namespace rboost {

// ============================================================================
// Robust evaluators
// ============================================================================

/// Computes the set of labels a unilabel predictor can be driven to over
/// x + B_p(delta). Certified evaluators return the exact set; heuristic ones
/// return a subset (every label they report is attainable).
class RobustEvaluator {
public:
    virtual ~RobustEvaluator() = default;
    virtual ReachSet reach_set(const UnilabelPredictor& h, std::span<const double> x,
                               const PerturbationBall& ball) const = 0;
    /// Nominal capability; each ReachSet still carries its own flag.
    virtual bool certified() const = 0;
};

/// Exact reach sets for stumps, binary linear argmax classifiers, and
/// multiclass linear classifiers under Linf with d <= 12. Everything else
/// throws BackendMismatch; unsupported linear settings throw like
/// LinearScorer::reach_set in RequireExact mode.
class ExactEvaluator final : public RobustEvaluator {
public:
    ReachSet reach_set(const UnilabelPredictor& h, std::span<const double> x,
                       const PerturbationBall& ball) const override;
    bool certified() const override { return true; }
};

/// PGD search on argmax classifiers over differentiable scorers: for each
/// candidate label maximizes the worst-rival score gap. Under-reports.
class PgdEvaluator final : public RobustEvaluator {
public:
    explicit PgdEvaluator(PgdConfig config) : config_(config) {}
    ReachSet reach_set(const UnilabelPredictor& h, std::span<const double> x,
                       const PerturbationBall& ball) const override;
    bool certified() const override { return false; }

private:
    PgdConfig config_;
};

/// Dense grid over the ball for d <= 2 (points_per_axis^d points, filtered to
/// the ball for L2). Resolution-limited, hence not certified.
class GridEvaluator final : public RobustEvaluator {
public:
    explicit GridEvaluator(std::size_t points_per_axis = 101) : points_(points_per_axis) {}
    ReachSet reach_set(const UnilabelPredictor& h, std::span<const double> x,
                       const PerturbationBall& ball) const override;
    bool certified() const override { return false; }

    /// Grid perturbations inside B_p(delta) (always contains z = 0 and the Linf corners).
    std::vector<Vec> grid(std::size_t dim, const PerturbationBall& ball) const;

private:
    std::size_t points_;
};

// ============================================================================
// Losses
// ============================================================================

/// Pairwise/ova loss value in {-1, 0, +1} with the evaluator's certification flag.
struct RobustLoss {
    int value = 0;
    bool certified = true;
};

/// 1{y' in h(x)} - 1{y in h(x)} for a multilabel output.
int base_loss(const LabelSet& hx, Label y, Label y_wrong);
int base_loss(const UnilabelPredictor& h, std::span<const double> x, Label y, Label y_wrong);

/// 1{y' reachable} - 1{reach = {y}} computed from a reach set.
int pair_loss_from_reach(const LabelSet& reach, Label y, Label y_wrong);
/// +1 unless the reach set is exactly {y}.
int ova_loss_from_reach(const LabelSet& reach, Label y);

RobustLoss robust_pair_loss(const UnilabelPredictor& h, const RobustEvaluator& evaluator,
                            const PerturbationBall& ball, std::span<const double> x, Label y, Label y_wrong);
RobustLoss ova_loss(const UnilabelPredictor& h, const RobustEvaluator& evaluator,
                    const PerturbationBall& ball, std::span<const double> x, Label y);

/// -ln softmax(scores)_y with max-subtraction.
double ce_loss(std::span<const double> scores, Label y);
/// softmax(scores) - onehot(y): gradient of ce_loss with respect to scores.
Vec ce_gradient(std::span<const double> scores, Label y);
Vec softmax(std::span<const double> scores);

struct RobustCe {
    double value = 0.0;
    Vec z;
};

/// sup over the ball of ce_loss(f(x+z), y), estimated by PGD (zero start forced on).
RobustCe robust_ce_loss(const DifferentiableScorer& f, const PgdConfig& pgd, const PerturbationBall& ball,
                        std::span<const double> x, Label y);

// ============================================================================
// Weighted error rates
// ============================================================================
struct ErrorRate {
    double value = 0.0;
    bool certified = true;
};

/// err(h, D) with D over the incorrect-pair set.
double weighted_err(const UnilabelPredictor& h, const Dataset& dataset, const IncorrectPairSet& pairs,
                    const FiniteDistribution& d);
/// err_delta(h, D) with D over the incorrect-pair set.
ErrorRate weighted_err_delta(const UnilabelPredictor& h, const RobustEvaluator& evaluator,
                             const PerturbationBall& ball, const Dataset& dataset, const IncorrectPairSet& pairs,
                             const FiniteDistribution& d);
/// err^ova_delta(h, D) with D over the examples.
ErrorRate weighted_err_ova(const UnilabelPredictor& h, const RobustEvaluator& evaluator,
                           const PerturbationBall& ball, const Dataset& dataset, const FiniteDistribution& d);

/// Reach set of h at every training example.
std::vector<ReachSet> reach_sets(const UnilabelPredictor& h, const RobustEvaluator& evaluator,
                                 const PerturbationBall& ball, const Dataset& dataset);

/// Collapses a linear scorer, a one-layer MLP, or an additive ensemble of
/// those into a single LinearScorer; nullopt for anything else.
std::optional<LinearScorer> as_linear(const ScorePredictor& s);

} // namespace rboost
