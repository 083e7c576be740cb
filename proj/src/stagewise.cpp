#include "rboost/stagewise.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>

#include "rboost/losses.hpp"

namespace rboost {

double cyclic_lr(double alpha, double eta_max) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(Errc::AlphaOutOfRange, "alpha must lie in [0, 1]");
    return 0.5 * eta_max * (1.0 + std::cos(alpha * std::numbers::pi));
}

long long epochs_for_stage(int stage, int base_epochs) {
    if (stage < 1) throw Error(Errc::InvalidConfig, "stages are numbered from 1");
    return (1LL << (stage - 1)) * static_cast<long long>(base_epochs);
}

void StagewiseConfig::validate() const {
    if (stages < 1) throw Error(Errc::InvalidConfig, "stages must be >= 1");
    if (stages > 30) throw Error(Errc::InvalidConfig, "stages must be <= 30 (epochs double every stage)");
    if (base_epochs < 1) throw Error(Errc::InvalidConfig, "base epochs must be >= 1");
    if (!(eta_max > 0.0)) throw Error(Errc::InvalidConfig, "eta_max must be > 0");
    if (batch_size < 1) throw Error(Errc::InvalidConfig, "batch size must be >= 1");
    PerturbationBall::make(ball.p, ball.delta);
    pgd.validate();
    eval_pgd.validate();
}

NonFiniteParameters::NonFiniteParameters(int stage, long long epoch, StagewiseTrace trace)
    : Error(Errc::NonFiniteParameters,
            "stage " + std::to_string(stage) + " epoch " + std::to_string(epoch) + " produced non-finite parameters"),
      stage_(stage), epoch_(epoch), trace_(std::move(trace)) {}

namespace {
std::uint64_t mix_stream(std::uint64_t a, std::uint64_t b) {
    return a * 0x9E3779B97F4A7C15ull + (b + 0x632BE59BD9B4E019ull) * 0xBF58476D1CE4E5B9ull;
}
} // namespace

// ============================================================================
// Stage objective
// ============================================================================
StageGradient stage_objective_grad(const OffsetTable& offsets, double beta, const Mlp& base, const Dataset& dataset,
                                   std::span<const std::size_t> batch, const PerturbationBall& ball,
                                   const PgdConfig& pgd, bool adversarial, const AdditiveEnsemble* prior,
                                   const std::vector<Vec>* frozen, const PriorProbe* probe) {
    if (batch.empty()) throw Error(Errc::InvalidConfig, "empty minibatch");
    const std::size_t d = dataset.dim();
    const std::size_t k = static_cast<std::size_t>(dataset.num_classes());

    StageGradient out;
    out.d_params.assign(base.params().size(), 0.0);
    Vec xz(d), v(k), scaled(k);

    // Combined scores o + beta f_w at x + z.
    auto combined = [&](std::size_t i, std::span<const double> z, Vec& fw) {
        const Vec& x = dataset[i].x;
        for (std::size_t j = 0; j < d; ++j) xz[j] = x[j] + z[j];
        fw = base.scores(xz);
        Vec o;
        if (prior) {
            if (probe && probe->on_eval) probe->on_eval(xz, true);
            o = prior->scores(xz);
        } else {
            o = offsets[i];
        }
        for (std::size_t c = 0; c < k; ++c) v[c] = o[c] + beta * fw[c];
    };

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t i = batch[b];
        const Label y = dataset[i].y;
        Vec z(d, 0.0);
        if (frozen) {
            z = (*frozen)[b];
        } else if (adversarial && ball.delta > 0.0) {
            Vec fw;
            auto objective = [&](std::span<const double> zz) {
                combined(i, zz, fw);
                const Vec g = ce_gradient(v, y);
                for (std::size_t c = 0; c < k; ++c) scaled[c] = beta * g[c];
                Vec gz = base.input_gradient(xz, scaled);
                if (prior) {
                    const Vec gp = prior->input_gradient(xz, g);
                    for (std::size_t j = 0; j < d; ++j) gz[j] += gp[j];
                }
                return std::pair<double, Vec>{ce_loss(v, y), std::move(gz)};
            };
            PgdConfig cfg = pgd;
            cfg.stream = mix_stream(pgd.stream, i);
            z = pgd_maximize(objective, d, ball, cfg).z;
        }

        Vec fw;
        combined(i, z, fw);
        const Vec g = ce_gradient(v, y);
        out.loss += ce_loss(v, y);
        for (std::size_t c = 0; c < k; ++c) {
            out.d_beta += g[c] * fw[c];
            scaled[c] = beta * g[c];
        }
        const Mlp::Gradients pg = base.backward(xz, scaled);
        for (std::size_t p = 0; p < pg.params.size(); ++p) out.d_params[p] += pg.params[p];
        out.perturbations.push_back(std::move(z));
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    out.loss *= inv;
    out.d_beta *= inv;
    for (double& g : out.d_params) g *= inv;
    return out;
}

// ============================================================================
// Evaluation
// ============================================================================
AccuracyReport evaluate_accuracy(const DifferentiableScorer& f, const Dataset& dataset, const PerturbationBall& ball,
                                 const PgdConfig& pgd) {
    std::size_t clean = 0, robust = 0;
    Vec xz(dataset.dim());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& e = dataset[i];
        if (argmax_label(f.scores(e.x)) != e.y) continue;
        ++clean;
        if (ball.delta == 0.0) {
            ++robust;
            continue;
        }
        PgdConfig cfg = pgd;
        cfg.stream = mix_stream(pgd.stream, i);
        const RobustCe r = robust_ce_loss(f, cfg, ball, e.x, e.y);
        for (std::size_t j = 0; j < xz.size(); ++j) xz[j] = e.x[j] + r.z[j];
        if (argmax_label(f.scores(xz)) == e.y) ++robust;
    }
    const double m = static_cast<double>(dataset.size());
    return {static_cast<double>(clean) / m, static_cast<double>(robust) / m};
}

// ============================================================================
// Stagewise boosting
// ============================================================================
StagewiseResult run_stagewise(const Dataset& dataset, const StagewiseConfig& config, const PriorProbe* probe) {
    config.validate();
    const std::size_t m = dataset.size();
    const std::size_t d = dataset.dim();
    const std::size_t k = static_cast<std::size_t>(dataset.num_classes());

    std::vector<std::size_t> sizes{d};
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(k);

    const SeededRng root(config.seed, 0x5747);
    auto ensemble = std::make_shared<AdditiveEnsemble>(dataset.num_classes(), d);
    StagewiseTrace trace;
    std::optional<Mlp> previous;

    const std::size_t batches = (m + config.batch_size - 1) / config.batch_size;
    for (int t = 1; t <= config.stages; ++t) {
        const auto start = std::chrono::steady_clock::now();

        SeededRng init_rng = root.split(mix_stream(1, static_cast<std::uint64_t>(t)));
        Mlp base = (config.warm_start && previous) ? *previous : Mlp::glorot(sizes, init_rng);
        double beta = config.warm_start ? 1.0 : 0.1;

        OffsetTable offsets(m, Vec(k, 0.0));
        if (!config.exact_reference && ensemble->size() > 0) {
            for (std::size_t i = 0; i < m; ++i) {
                if (probe && probe->on_eval) probe->on_eval(dataset[i].x, false);
                offsets[i] = ensemble->scores(dataset[i].x);
            }
        }
        const AdditiveEnsemble* prior = config.exact_reference && ensemble->size() > 0 ? ensemble.get() : nullptr;

        const long long epochs = epochs_for_stage(t, config.base_epochs);
        const long long total_updates = epochs * static_cast<long long>(batches);
        long long update = 0;
        double last_epoch_loss = 0.0;
        std::vector<std::size_t> order(m);

        for (long long e = 1; e <= epochs; ++e) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            SeededRng shuffle_rng = root.split(mix_stream(mix_stream(2, static_cast<std::uint64_t>(t)),
                                                          static_cast<std::uint64_t>(e)));
            shuffle_rng.shuffle(order);

            EpochRecord rec{t, e, 0.0, 0.0, 0.0};
            for (std::size_t b = 0; b < batches; ++b) {
                const std::size_t lo = b * config.batch_size;
                const std::size_t hi = std::min(m, lo + config.batch_size);
                const double alpha = static_cast<double>(update) / static_cast<double>(total_updates);
                const double lr = cyclic_lr(alpha, config.eta_max);
                trace.learning_rates.push_back(lr);
                if (b == 0) rec.lr_first = lr;
                rec.lr_last = lr;

                PgdConfig pgd = config.pgd;
                pgd.seed = config.seed;
                pgd.stream = mix_stream(mix_stream(3, static_cast<std::uint64_t>(t)), static_cast<std::uint64_t>(update));
                StageGradient g;
                try {
                    g = stage_objective_grad(offsets, beta, base, dataset, std::span(order).subspan(lo, hi - lo),
                                             config.ball, pgd, config.adversarial, prior, nullptr, probe);
                } catch (const Error& err) {
                    // Finite but huge parameters overflow the scores.
                    if (err.code() != Errc::NonFiniteLoss) throw;
                    trace.epochs.push_back(rec);
                    throw NonFiniteParameters(t, e, std::move(trace));
                }
                beta -= lr * g.d_beta;
                Vec& params = base.mutable_params();
                for (std::size_t p = 0; p < params.size(); ++p) params[p] -= lr * g.d_params[p];
                rec.mean_loss += g.loss * static_cast<double>(hi - lo);
                ++update;
                if (!std::isfinite(beta) || !base.all_finite() || !std::isfinite(g.loss)) {
                    trace.epochs.push_back(rec);
                    throw NonFiniteParameters(t, e, std::move(trace));
                }
            }
            rec.mean_loss /= static_cast<double>(m);
            last_epoch_loss = rec.mean_loss;
            trace.epochs.push_back(rec);
        }

        previous = base;
        ensemble->append(beta, std::make_shared<Mlp>(std::move(base)));

        StageRecord srec;
        srec.stage = t;
        srec.epochs = epochs;
        srec.updates = total_updates;
        srec.beta = beta;
        srec.train_loss = last_epoch_loss;
        if (config.evaluate_each_stage) {
            PgdConfig eval = config.eval_pgd;
            eval.seed = config.seed;
            eval.stream = mix_stream(4, static_cast<std::uint64_t>(t));
            const AccuracyReport acc = evaluate_accuracy(*ensemble, dataset, config.ball, eval);
            srec.clean_accuracy = acc.clean;
            srec.robust_accuracy = acc.robust;
        }
        srec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        trace.stages.push_back(srec);
    }
    return {ensemble, std::move(trace)};
}

} // namespace rboost
