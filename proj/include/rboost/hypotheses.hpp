#pragma once
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "rboost/core.hpp"
#include "rboost/pgd.hpp"

namespace rboost {

// ============================================================================
// Label sets and reach sets
// ============================================================================

/// Subset of [k]; the output of a multilabel predictor.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(int k) : bits_(static_cast<std::size_t>(k), false) {}
    static LabelSet single(int k, Label y);

    int universe() const noexcept { return static_cast<int>(bits_.size()); }
    void insert(Label y);
    bool contains(Label y) const;
    int count() const noexcept { return count_; }
    bool is_singleton(Label y) const { return count_ == 1 && contains(y); }
    std::vector<Label> labels() const;

    bool operator==(const LabelSet& other) const = default;

private:
    std::vector<bool> bits_;
    int count_ = 0;
};

/// Labels attainable by a unilabel predictor over x + B_p(delta).
/// `certified` is true when the set is exact, false when it is a PGD lower bound.
struct ReachSet {
    LabelSet labels;
    bool certified = true;
};

// ============================================================================
// Predictor interfaces
// ============================================================================
class UnilabelPredictor {
public:
    virtual ~UnilabelPredictor() = default;
    virtual Label predict(std::span<const double> x) const = 0;
    virtual int num_classes() const = 0;
};

class ScorePredictor {
public:
    virtual ~ScorePredictor() = default;
    virtual Vec scores(std::span<const double> x) const = 0;
    virtual int num_classes() const = 0;
    virtual std::size_t input_dim() const = 0;
};

/// Score predictor that can backpropagate an upstream vector to its input.
class DifferentiableScorer : public ScorePredictor {
public:
    /// Returns J(x)^T upstream where J is the Jacobian of scores at x.
    virtual Vec input_gradient(std::span<const double> x, std::span<const double> upstream) const = 0;
};

/// Smallest index attaining the maximum.
Label argmax_label(std::span<const double> scores);

/// f^am: the unilabel predictor induced by a score predictor.
class ArgmaxClassifier final : public UnilabelPredictor {
public:
    explicit ArgmaxClassifier(std::shared_ptr<const ScorePredictor> scorer);
    Label predict(std::span<const double> x) const override;
    int num_classes() const override { return scorer_->num_classes(); }
    const ScorePredictor& scorer() const noexcept { return *scorer_; }
    const std::shared_ptr<const ScorePredictor>& scorer_ptr() const noexcept { return scorer_; }

private:
    std::shared_ptr<const ScorePredictor> scorer_;
};

// ============================================================================
// Decision stumps
// ============================================================================
class DecisionStump final : public UnilabelPredictor {
public:
    DecisionStump(std::size_t feature, double threshold, Label left, Label right, int num_classes);

    Label predict(std::span<const double> x) const override;
    int num_classes() const override { return k_; }

    /// Exact for every norm: any B_p(delta) projects onto [x_j - delta, x_j + delta].
    ReachSet reach_set(std::span<const double> x, const PerturbationBall& ball) const;

    std::size_t feature() const noexcept { return feature_; }
    double threshold() const noexcept { return threshold_; }
    Label left() const noexcept { return left_; }
    Label right() const noexcept { return right_; }

private:
    std::size_t feature_;
    double threshold_;
    Label left_;
    Label right_;
    int k_;
};

// ============================================================================
// Linear scorers
// ============================================================================
enum class ReachMode {
    PreferExact,  // fall back to PGD (certified = false) when no exact method applies
    RequireExact, // throw DimensionTooLarge / UnsupportedNorm instead
};

class LinearScorer final : public DifferentiableScorer {
public:
    /// Largest dimension for which the multiclass Linf reach test is run exactly.
    static constexpr std::size_t kMaxExactDim = 12;

    /// `weights` is k x d row-major.
    LinearScorer(int num_classes, std::size_t dim, Vec weights, Vec bias);

    Vec scores(std::span<const double> x) const override;
    Vec input_gradient(std::span<const double> x, std::span<const double> upstream) const override;
    int num_classes() const override { return k_; }
    std::size_t input_dim() const override { return d_; }

    double weight(Label row, std::size_t col) const { return w_[static_cast<std::size_t>(row) * d_ + col]; }
    std::span<const double> row(Label r) const { return {w_.data() + static_cast<std::size_t>(r) * d_, d_}; }
    const Vec& weights() const noexcept { return w_; }
    const Vec& bias() const noexcept { return b_; }

    /// Labels attainable by argmax(W(x+z)+b) over the ball; ties count as attainable.
    /// Binary: exact dual-norm margin test for both norms. k >= 3: exact for Linf
    /// and d <= kMaxExactDim, otherwise PGD (certified = false) or an error.
    ReachSet reach_set(std::span<const double> x, const PerturbationBall& ball,
                       ReachMode mode = ReachMode::PreferExact, const PgdConfig& fallback = {}) const;

    /// Largest value of min over rivals j of (s_target - s_j)(x + z) over z in the
    /// Linf ball, computed exactly through the dual over rival weights.
    double best_worst_margin_linf(std::span<const double> x, Label target, double delta) const;

private:
    int k_;
    std::size_t d_;
    Vec w_;
    Vec b_;
};

// ============================================================================
// Multi-layer perceptron
// ============================================================================

/// Fully connected ReLU network with identity output layer. Parameters live
/// in one flat vector: for each layer, W (out x in, row-major) then b (out).
class Mlp final : public DifferentiableScorer {
public:
    struct Gradients {
        Vec params;
        Vec input;
    };

    Mlp(std::vector<std::size_t> layer_sizes, Vec params);

    /// Glorot-uniform weights, zero biases.
    static Mlp glorot(std::vector<std::size_t> layer_sizes, SeededRng& rng);
    static std::size_t param_count_for(const std::vector<std::size_t>& layer_sizes);

    Vec scores(std::span<const double> x) const override;
    Vec input_gradient(std::span<const double> x, std::span<const double> upstream) const override;
    int num_classes() const override { return static_cast<int>(sizes_.back()); }
    std::size_t input_dim() const override { return sizes_.front(); }

    /// Gradients of <upstream, scores(x)> with respect to parameters and input.
    Gradients backward(std::span<const double> x, std::span<const double> upstream) const;

    const std::vector<std::size_t>& layer_sizes() const noexcept { return sizes_; }
    std::size_t num_layers() const noexcept { return sizes_.size() - 1; }
    const Vec& params() const noexcept { return params_; }
    Vec& mutable_params() noexcept { return params_; }
    bool all_finite() const;

private:
    std::vector<std::size_t> sizes_;
    Vec params_;
    std::vector<std::size_t> offsets_;
};

/// Gradients of ce_loss(forward(x), y); ReLU'(0) = 0.
Mlp::Gradients mlp_backward(const Mlp& mlp, std::span<const double> x, Label y);

// ============================================================================
// Mixtures and ensembles
// ============================================================================

/// Finite distribution Q over unilabel predictors. As a predictor it is the
/// weighted plurality vote h_Q^am.
class MixtureQ final : public UnilabelPredictor {
public:
    struct Component {
        double weight;
        std::shared_ptr<const UnilabelPredictor> h;
    };

    /// Normalizes `raw_weights`; throws EmptyMixture / AllZeroWeights.
    MixtureQ(std::span<const double> raw_weights, std::vector<std::shared_ptr<const UnilabelPredictor>> hs);

    Label predict(std::span<const double> x) const override { return plurality_vote(x); }
    int num_classes() const override { return k_; }

    /// h_Q(x): per-class vote mass, a probability vector.
    Vec vote_mass(std::span<const double> x) const;
    Label plurality_vote(std::span<const double> x) const;

    const std::vector<Component>& components() const noexcept { return components_; }
    std::size_t size() const noexcept { return components_.size(); }
    /// Weights as passed to the constructor, before normalization.
    const std::vector<double>& raw_weights() const noexcept { return raw_; }

private:
    std::vector<Component> components_;
    std::vector<double> raw_;
    int k_;
};

/// f = sum_t beta_t f_t.
class AdditiveEnsemble final : public DifferentiableScorer {
public:
    struct Stage {
        double beta;
        std::shared_ptr<const DifferentiableScorer> f;
    };

    AdditiveEnsemble(int num_classes, std::size_t dim) : k_(num_classes), d_(dim) {}

    void append(double beta, std::shared_ptr<const DifferentiableScorer> f);

    Vec scores(std::span<const double> x) const override;
    Vec input_gradient(std::span<const double> x, std::span<const double> upstream) const override;
    int num_classes() const override { return k_; }
    std::size_t input_dim() const override { return d_; }

    const std::vector<Stage>& stages() const noexcept { return stages_; }
    std::size_t size() const noexcept { return stages_.size(); }

private:
    int k_;
    std::size_t d_;
    std::vector<Stage> stages_;
};

// ============================================================================
// Exhaustive robust stump weak learner
// ============================================================================
struct StumpFit {
    DecisionStump stump;
    /// Certified robust weighted error achieved under the given distribution.
    double error;
};

/// Candidate thresholds for one feature: midpoints of sorted unique values,
/// x_j +- delta for every example, and +-infinity. Sorted ascending.
std::vector<double> stump_threshold_candidates(const Dataset& dataset, std::size_t feature, double delta);

/// Minimizes err_delta over all features, candidate thresholds, and ordered
/// label pairs drawn from the labels present in S. D is over the pair set.
/// Ties are broken by (feature, threshold, left, right) lexicographic order.
StumpFit train_stump_weak_learner(const Dataset& dataset, const IncorrectPairSet& pairs,
                                  const FiniteDistribution& pair_weights, const PerturbationBall& ball);

/// One-vs-all variant: minimizes err^ova_delta for D over the examples.
StumpFit train_stump_ova_weak_learner(const Dataset& dataset, const FiniteDistribution& example_weights,
                                      const PerturbationBall& ball);

} // namespace rboost
