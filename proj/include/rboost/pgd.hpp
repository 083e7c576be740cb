#pragma once
#include <cstdint>
#include <functional>
#include <span>
#include <utility>

#include "rboost/core.hpp"

namespace rboost {

struct PgdConfig {
    int steps = 7;
    /// 0 selects the automatic step 1.3 * delta / steps.
    double step_size = 0.0;
    int restarts = 1;
    bool random_start = true;
    bool include_zero_start = true;
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;

    double effective_step(double delta) const;
    void validate() const;
};

/// Loss value and its gradient with respect to the perturbation z.
using PerturbationObjective = std::function<std::pair<double, Vec>(std::span<const double> z)>;

struct PgdResult {
    Vec z;
    double loss = 0.0;
    /// Number of objective evaluations, including starts.
    int evaluations = 0;
};

/// Uniform draw from B_p(delta): box-uniform for Linf, volume-uniform for L2.
Vec random_ball_point(std::size_t dim, const PerturbationBall& ball, SeededRng& rng);

/// Projected gradient ascent over z in B_p(delta) with signed (Linf) or
/// normalized (L2) steps. Returns the best iterate over every start.
///
/// Start list: z = 0 when include_zero_start (or when random_start is off),
/// then `restarts` random starts. Random start r draws from the child stream
/// r of (seed, stream), so adding restarts never changes earlier ones.
PgdResult pgd_maximize(const PerturbationObjective& objective, std::size_t dim,
                       const PerturbationBall& ball, const PgdConfig& config);

} // namespace rboost
