#include "rboost/pgd.hpp"

#include <cmath>

namespace rboost {

double PgdConfig::effective_step(double delta) const {
    return step_size > 0.0 ? step_size : 1.3 * delta / static_cast<double>(steps);
}

void PgdConfig::validate() const {
    if (steps < 1) throw Error(Errc::InvalidConfig, "pgd steps must be >= 1");
    if (restarts < 1) throw Error(Errc::InvalidConfig, "pgd restarts must be >= 1");
    if (step_size < 0.0 || !std::isfinite(step_size)) throw Error(Errc::InvalidConfig, "pgd step size must be >= 0");
}

Vec random_ball_point(std::size_t dim, const PerturbationBall& ball, SeededRng& rng) {
    Vec z(dim, 0.0);
    if (ball.delta == 0.0) return z;
    if (ball.p == Norm::Linf) {
        for (double& v : z) v = rng.uniform(-ball.delta, ball.delta);
        return z;
    }
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& v : z) {
            v = rng.normal();
            n2 += v * v;
        }
    } while (n2 == 0.0);
    const double radius = ball.delta * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
    const double scale = radius / std::sqrt(n2);
    for (double& v : z) v *= scale;
    return ball_project(z, ball);
}

namespace {

std::pair<double, Vec> evaluate(const PerturbationObjective& objective, std::span<const double> z) {
    auto out = objective(z);
    if (!std::isfinite(out.first)) throw Error(Errc::NonFiniteLoss, "objective returned a non-finite loss");
    for (double g : out.second)
        if (!std::isfinite(g)) throw Error(Errc::NonFiniteLoss, "objective returned a non-finite gradient");
    return out;
}

} // namespace

PgdResult pgd_maximize(const PerturbationObjective& objective, std::size_t dim,
                       const PerturbationBall& ball, const PgdConfig& config) {
    config.validate();
    PgdResult best;
    best.z.assign(dim, 0.0);

    if (ball.delta == 0.0) {
        best.loss = evaluate(objective, best.z).first;
        best.evaluations = 1;
        return best;
    }

    std::vector<Vec> starts;
    if (config.include_zero_start || !config.random_start) starts.emplace_back(dim, 0.0);
    if (config.random_start) {
        const SeededRng base(config.seed, config.stream);
        for (int r = 0; r < config.restarts; ++r) {
            SeededRng rng = base.split(static_cast<std::uint64_t>(r));
            starts.push_back(random_ball_point(dim, ball, rng));
        }
    }

    const double step = config.effective_step(ball.delta);
    bool have_best = false;
    auto consider = [&](const Vec& z, double loss) {
        if (!have_best || loss > best.loss) {
            best.loss = loss;
            best.z = z;
            have_best = true;
        }
    };

    for (Vec z : starts) {
        auto [loss, grad] = evaluate(objective, z);
        ++best.evaluations;
        consider(z, loss);
        for (int s = 0; s < config.steps; ++s) {
            Vec dir(dim, 0.0);
            double gnorm = 0.0;
            if (ball.p == Norm::Linf) {
                for (std::size_t i = 0; i < dim; ++i) {
                    dir[i] = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
                    gnorm += std::abs(dir[i]);
                }
            } else {
                gnorm = norm_of(grad, Norm::L2);
                if (gnorm > 0.0)
                    for (std::size_t i = 0; i < dim; ++i) dir[i] = grad[i] / gnorm;
            }
            if (gnorm == 0.0) continue;
            for (std::size_t i = 0; i < dim; ++i) z[i] += step * dir[i];
            z = ball_project(z, ball);
            std::tie(loss, grad) = evaluate(objective, z);
            ++best.evaluations;
            consider(z, loss);
        }
    }
    return best;
}

} // namespace rboost
