#pragma once
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "rboost/core.hpp"
#include "rboost/hypotheses.hpp"
#include "rboost/pgd.hpp"

namespace rboost {

/// 0.5 * eta_max * (1 + cos(alpha * pi)); throws AlphaOutOfRange outside [0, 1].
double cyclic_lr(double alpha, double eta_max);

/// 2^(t-1) * N_1 for stage t >= 1.
long long epochs_for_stage(int stage, int base_epochs);

struct StagewiseConfig {
    int stages = 5;
    int base_epochs = 10;
    double eta_max = 0.01;
    std::size_t batch_size = 32;
    /// The adversary's budget (the algorithm's epsilon input).
    PerturbationBall ball{Norm::Linf, 0.0};
    /// Inner maximizer; its step size 0 means 1.3 * delta / steps.
    PgdConfig pgd{7, 0.0, 1, true, true, 0, 0};
    /// false skips the inner maximization entirely (plain stagewise fitting).
    bool adversarial = true;
    /// Initialize stage t from stage t-1 (beta = 1); otherwise fresh weights and beta = 0.1.
    bool warm_start = true;
    /// Hidden layer widths of each base MLP; empty gives a linear base.
    std::vector<std::size_t> hidden{16};
    /// Evaluate f^(t-1)(x_i + z_i) exactly instead of the offset approximation.
    bool exact_reference = false;
    /// PGD used for the per-stage robust accuracy in the trace.
    PgdConfig eval_pgd{20, 0.0, 3, true, true, 0, 0};
    bool evaluate_each_stage = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// o_i = f^(t-1)(x_i), fixed for the whole stage.
using OffsetTable = std::vector<Vec>;

struct StageGradient {
    double loss = 0.0;
    double d_beta = 0.0;
    Vec d_params;
    /// Perturbations found by the inner maximizer, one per batch entry.
    std::vector<Vec> perturbations;
};

/// Evaluates the prior ensemble during training; used to instrument which
/// inputs the training loop feeds to f^(t-1).
struct PriorProbe {
    std::function<void(std::span<const double> x, bool perturbed)> on_eval;
};

/// Batch mean of sup_z ce(o_i + beta f_w(x_i + z), y_i) and its gradients in
/// (beta, w) at the maximizing z. When `prior` is non-null the offset is
/// replaced by prior(x_i + z) (exact reference mode) and `offsets` is unused.
/// When `frozen` is non-null those perturbations are used instead of PGD.
StageGradient stage_objective_grad(const OffsetTable& offsets, double beta, const Mlp& base, const Dataset& dataset,
                                   std::span<const std::size_t> batch, const PerturbationBall& ball,
                                   const PgdConfig& pgd, bool adversarial, const AdditiveEnsemble* prior = nullptr,
                                   const std::vector<Vec>* frozen = nullptr, const PriorProbe* probe = nullptr);

struct EpochRecord {
    int stage = 0;
    long long epoch = 0;
    double lr_first = 0.0;
    double lr_last = 0.0;
    double mean_loss = 0.0;
};

struct StageRecord {
    int stage = 0;
    long long epochs = 0;
    long long updates = 0;
    double beta = 0.0;
    double train_loss = 0.0;
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    double wall_seconds = 0.0;
};

struct StagewiseTrace {
    std::vector<EpochRecord> epochs;
    std::vector<StageRecord> stages;
    /// Learning rates of every update, in order (for schedule audits).
    std::vector<double> learning_rates;
};

struct StagewiseResult {
    std::shared_ptr<AdditiveEnsemble> ensemble;
    StagewiseTrace trace;
};

class NonFiniteParameters : public Error {
public:
    NonFiniteParameters(int stage, long long epoch, StagewiseTrace trace);
    int stage() const noexcept { return stage_; }
    long long epoch() const noexcept { return epoch_; }
    const StagewiseTrace& trace() const noexcept { return trace_; }

private:
    int stage_;
    long long epoch_;
    StagewiseTrace trace_;
};

/// Greedy stagewise adversarial boosting with the offset approximation.
StagewiseResult run_stagewise(const Dataset& dataset, const StagewiseConfig& config, const PriorProbe* probe = nullptr);

struct AccuracyReport {
    double clean = 0.0;
    double robust = 0.0;
};

/// Clean accuracy and PGD-estimated robust accuracy (an example counts as
/// robust when PGD on the cross-entropy finds no misclassifying perturbation).
AccuracyReport evaluate_accuracy(const DifferentiableScorer& f, const Dataset& dataset, const PerturbationBall& ball,
                                 const PgdConfig& pgd);

} // namespace rboost
