#pragma once
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "rboost/core.hpp"
#include "rboost/hypotheses.hpp"
#include "rboost/pgd.hpp"

namespace rboost {

// ============================================================================
// Gaussian helpers
// ============================================================================

/// Inverse standard normal cdf (Wichura's AS241, PPND16). OutOfDomain unless 0 < p < 1.
double gaussian_quantile(double p);

/// Standard normal cdf via erfc.
double normal_cdf(double x);

// ============================================================================
// Randomized smoothing
// ============================================================================
struct SmoothingConfig {
    double sigma = 0.25;
    int n_samples = 1000;
    std::uint64_t seed = 0;
    /// Replace the point estimate of the top class by a one-sided
    /// Clopper-Pearson lower bound (stricter than the plain formula).
    bool conservative = false;
    double alpha = 0.001;

    void validate() const;
};

/// Empirical frequencies of argmax f(x + eps), eps ~ N(0, sigma^2 I), drawn
/// from stream `stream` of the configured seed.
Vec smooth_class_probs(const ScorePredictor& f, std::span<const double> x, const SmoothingConfig& config,
                       std::uint64_t stream);

/// Noise stream for a query point, derived from the bits of its coordinates.
std::uint64_t point_stream(std::span<const double> x);

struct CertifiedPrediction {
    Label label = 0;
    /// Runner-up label, -1 when there is only one class.
    Label runner_up = -1;
    double radius = 0.0;
    bool abstain = false;
};

/// sigma/2 (Phi^-1(p_y) - Phi^-1(p_y')) for the top two entries. With
/// `n_samples` set the entries are first clipped to [1/(2n), 1 - 1/(2n)];
/// without it an exact zero runner-up gives an infinite radius.
CertifiedPrediction certified_radius(std::span<const double> probs, double sigma,
                                     std::optional<int> n_samples = std::nullopt);

/// Lower (1 - alpha) confidence bound on a binomial proportion.
double clopper_pearson_lower(long long successes, long long trials, double alpha);

// ============================================================================
// Radius predictors
// ============================================================================

/// A label together with a radius inside which the label provably does not change.
class RadiusPredictor : public UnilabelPredictor {
public:
    virtual CertifiedPrediction certify(std::span<const double> x) const = 0;
    Label predict(std::span<const double> x) const override { return certify(x).label; }
    double radius(std::span<const double> x) const { return certify(x).radius; }
};

/// argmax of a linear scorer with the exact distance to the decision region's boundary.
class LinearRadiusPredictor final : public RadiusPredictor {
public:
    LinearRadiusPredictor(LinearScorer scorer, Norm p = Norm::L2);
    CertifiedPrediction certify(std::span<const double> x) const override;
    int num_classes() const override { return scorer_.num_classes(); }
    const LinearScorer& scorer() const noexcept { return scorer_; }
    Norm norm() const noexcept { return p_; }

private:
    LinearScorer scorer_;
    Norm p_;
};

/// Monte Carlo smoothed classifier; noise comes from point_stream(x), so
/// repeated queries at the same point agree.
class SmoothedClassifier final : public RadiusPredictor {
public:
    SmoothedClassifier(std::shared_ptr<const ScorePredictor> base, SmoothingConfig config);
    CertifiedPrediction certify(std::span<const double> x) const override;
    int num_classes() const override { return base_->num_classes(); }
    const SmoothingConfig& config() const noexcept { return config_; }
    const ScorePredictor& base() const noexcept { return *base_; }

private:
    std::shared_ptr<const ScorePredictor> base_;
    SmoothingConfig config_;
};

/// Per-example certification record.
struct CertRow {
    std::size_t example = 0;
    Label label = 0;
    Label truth = 0;
    Vec probs;
    double radius = 0.0;
    bool abstain = false;
};

/// Smoothed certification of every example (same draws as SmoothedClassifier).
std::vector<CertRow> certify_dataset(const ScorePredictor& f, const Dataset& dataset, const SmoothingConfig& config);

/// Sum of D(i) over examples whose label is correct with radius >= delta.
double certified_accuracy(const RadiusPredictor& h, const Dataset& dataset, const FiniteDistribution& d,
                          double delta);
double certified_accuracy(std::span<const CertRow> rows, double delta);

/// Plurality vote of the mixture and the radius rho_Q(x) from the linear scan
/// over components sorted by radius. Components must be RadiusPredictors.
CertifiedPrediction aggregate_radius(const MixtureQ& q, std::span<const double> x);

class AggregateRadiusPredictor final : public RadiusPredictor {
public:
    explicit AggregateRadiusPredictor(MixtureQ q) : q_(std::move(q)) {}
    CertifiedPrediction certify(std::span<const double> x) const override { return aggregate_radius(q_, x); }
    int num_classes() const override { return q_.num_classes(); }
    const MixtureQ& mixture() const noexcept { return q_; }

private:
    MixtureQ q_;
};

// ============================================================================
// Approximate checker
// ============================================================================
enum class CheckerBackend {
    Exact, // analytic search; stumps and binary linear classifiers
    Pgd,   // projected gradient search; sound but incomplete
};

struct CheckerSpec {
    double c = 1.0;
    PerturbationBall ball;
    CheckerBackend backend = CheckerBackend::Exact;
    PgdConfig pgd{20, 0.0, 3, true, true, 0, 0};

    void validate() const;
};

struct CheckOutcome {
    enum class Kind { Found, Good, Unknown };
    Kind kind = Kind::Unknown;
    /// Perturbation with ||z|| <= delta and h(x + z) != y when kind == Found.
    Vec z;
};

CheckOutcome check(const UnilabelPredictor& h, std::span<const double> x, Label y, const CheckerSpec& spec);

struct CheckerLearnResult {
    /// Index of the first candidate with estimate <= -gamma, if any.
    std::optional<std::size_t> found;
    /// E_D[2 * 1{check = Found} - 1] for every candidate scanned.
    std::vector<double> estimates;
};

/// Either finds a candidate whose checker estimate is at most -gamma or
/// returns the estimates of all candidates as a certificate that none is.
CheckerLearnResult weak_learn_via_checker(std::span<const std::shared_ptr<const UnilabelPredictor>> candidates,
                                          const CheckerSpec& spec, const Dataset& dataset,
                                          const FiniteDistribution& d, double gamma);

} // namespace rboost
