#include <doctest.h>

#include <cmath>
#include <numbers>

#include "rboost/losses.hpp"
#include "rboost/stagewise.hpp"

using namespace rboost;

namespace {
Dataset small_blobs(std::uint64_t seed, std::size_t m = 30) {
    SeededRng rng(seed, 0);
    std::vector<Example> ex;
    const double cx[3] = {-1.5, 1.5, 0.0}, cy[3] = {0.0, 0.0, 1.8};
    for (std::size_t i = 0; i < m; ++i) {
        const int c = static_cast<int>(i % 3);
        ex.push_back({{cx[c] + 0.3 * rng.normal(), cy[c] + 0.3 * rng.normal()}, c});
    }
    return Dataset(ex, 3);
}

Mlp random_net(std::uint64_t seed) {
    SeededRng rng(seed, 1);
    return Mlp::glorot({2, 6, 3}, rng);
}

OffsetTable random_offsets(const Dataset& ds, std::uint64_t seed) {
    SeededRng rng(seed, 2);
    OffsetTable o(ds.size(), Vec(3));
    for (auto& v : o)
        for (double& c : v) c = rng.uniform(-1, 1);
    return o;
}

StagewiseConfig tiny_config() {
    StagewiseConfig c;
    c.stages = 3;
    c.base_epochs = 2;
    c.eta_max = 0.05;
    c.batch_size = 8;
    c.ball = {Norm::Linf, 0.2};
    c.pgd = {3, 0.0, 1, true, true, 0, 0};
    c.hidden = {6};
    c.eval_pgd = {5, 0.0, 1, true, true, 0, 0};
    c.seed = 4;
    return c;
}

std::vector<std::size_t> all_indices(const Dataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}
} // namespace

TEST_CASE("cyclic learning rate") {
    CHECK(cyclic_lr(0.0, 0.01) == 0.01);
    CHECK(cyclic_lr(1.0, 0.01) == doctest::Approx(0.0).epsilon(1e-18));
    CHECK(cyclic_lr(0.5, 0.01) == doctest::Approx(0.005).epsilon(1e-15));
    for (double a : {-0.1, 1.1, std::nan("")}) {
        try {
            cyclic_lr(a, 0.01);
            FAIL("expected AlphaOutOfRange");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::AlphaOutOfRange);
        }
    }
}

TEST_CASE("epochs per stage") {
    CHECK(epochs_for_stage(1, 10) == 10);
    CHECK(epochs_for_stage(3, 10) == 40);
    CHECK(epochs_for_stage(5, 5) == 80);
    CHECK_THROWS_AS(epochs_for_stage(0, 10), Error);
}

TEST_CASE("zero radius objective is the plain offset cross-entropy") {
    const Dataset ds = small_blobs(1);
    const Mlp net = random_net(2);
    const OffsetTable o = random_offsets(ds, 3);
    const auto idx = all_indices(ds);
    const double beta = 0.7;
    const auto g = stage_objective_grad(o, beta, net, ds, idx, {Norm::Linf, 0.0}, PgdConfig{}, true);
    double expected = 0;
    for (std::size_t i : idx) {
        const Vec f = net.scores(ds[i].x);
        Vec v(3);
        for (std::size_t c = 0; c < 3; ++c) v[c] = o[i][c] + beta * f[c];
        expected += ce_loss(v, ds[i].y);
        CHECK(g.perturbations[i] == Vec{0.0, 0.0});
    }
    CHECK(g.loss == doctest::Approx(expected / ds.size()).epsilon(1e-14));
}

TEST_CASE("first stage with unit beta is plain adversarial training") {
    const Dataset ds = small_blobs(5);
    const Mlp net = random_net(6);
    const OffsetTable zero(ds.size(), Vec(3, 0.0));
    const auto idx = all_indices(ds);
    const PerturbationBall ball{Norm::Linf, 0.3};
    const PgdConfig pgd{5, 0.0, 2, true, true, 7, 0};
    const auto g = stage_objective_grad(zero, 1.0, net, ds, idx, ball, pgd, true);
    Vec expected(net.params().size(), 0.0);
    double loss = 0;
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const Example& e = ds[idx[b]];
        Vec xz = e.x;
        for (std::size_t j = 0; j < 2; ++j) xz[j] += g.perturbations[b][j];
        CHECK(norm_of(g.perturbations[b], Norm::Linf) <= ball.delta + 1e-12);
        const auto bg = mlp_backward(net, xz, e.y);
        for (std::size_t p = 0; p < expected.size(); ++p) expected[p] += bg.params[p] / idx.size();
        loss += ce_loss(net.scores(xz), e.y) / idx.size();
    }
    CHECK(g.loss == doctest::Approx(loss).epsilon(1e-13));
    for (std::size_t p = 0; p < expected.size(); ++p) CHECK(g.d_params[p] == doctest::Approx(expected[p]).epsilon(1e-12));
}

TEST_CASE("beta and parameter gradients match finite differences with frozen perturbations") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Dataset ds = small_blobs(10 + seed, 12);
        Mlp net = random_net(20 + seed);
        const OffsetTable o = random_offsets(ds, 30 + seed);
        const auto idx = all_indices(ds);
        const PerturbationBall ball{Norm::L2, 0.4};
        const PgdConfig pgd{4, 0.0, 1, true, true, seed, 0};
        const double beta = 0.3 + 0.1 * static_cast<double>(seed);
        const auto g = stage_objective_grad(o, beta, net, ds, idx, ball, pgd, true);
        const auto& z = g.perturbations;

        const double h = 1e-6;
        const double up = stage_objective_grad(o, beta + h, net, ds, idx, ball, pgd, true, nullptr, &z).loss;
        const double dn = stage_objective_grad(o, beta - h, net, ds, idx, ball, pgd, true, nullptr, &z).loss;
        const double fd = (up - dn) / (2 * h);
        CHECK(std::abs(g.d_beta - fd) / std::max(1.0, std::abs(fd)) <= 1e-4);

        for (std::size_t p = 0; p < net.params().size(); p += 3) {
            const double saved = net.params()[p];
            net.mutable_params()[p] = saved + h;
            const double lp = stage_objective_grad(o, beta, net, ds, idx, ball, pgd, true, nullptr, &z).loss;
            net.mutable_params()[p] = saved - h;
            const double lm = stage_objective_grad(o, beta, net, ds, idx, ball, pgd, true, nullptr, &z).loss;
            net.mutable_params()[p] = saved;
            const double fdp = (lp - lm) / (2 * h);
            CHECK(std::abs(g.d_params[p] - fdp) / std::max(1.0, std::abs(fdp)) <= 1e-5);
        }
    }
}

TEST_CASE("offsets agree with the prior ensemble at clean inputs") {
    const Dataset ds = small_blobs(40);
    SeededRng rng(41, 0);
    AdditiveEnsemble prior(3, 2);
    prior.append(1.0, std::make_shared<Mlp>(Mlp::glorot({2, 4, 3}, rng)));
    prior.append(0.4, std::make_shared<Mlp>(Mlp::glorot({2, 4, 3}, rng)));
    OffsetTable o;
    for (const auto& e : ds.examples()) o.push_back(prior.scores(e.x));
    const Mlp net = random_net(42);
    const auto idx = all_indices(ds);
    const auto a = stage_objective_grad(o, 0.8, net, ds, idx, {Norm::Linf, 0.0}, PgdConfig{}, true);
    const auto b = stage_objective_grad({}, 0.8, net, ds, idx, {Norm::Linf, 0.0}, PgdConfig{}, true, &prior);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-12));
    CHECK(a.d_beta == doctest::Approx(b.d_beta).epsilon(1e-12));
}

TEST_CASE("schedule: epoch doubling and cosine rates restarting every stage") {
    const Dataset ds = small_blobs(50, 30);
    StagewiseConfig c = tiny_config();
    c.evaluate_each_stage = false;
    const auto r = run_stagewise(ds, c);
    REQUIRE(r.trace.stages.size() == 3);
    long long total = 0;
    std::size_t cursor = 0;
    const long long per_epoch = (30 + 8 - 1) / 8; // the last partial batch counts
    for (int t = 1; t <= 3; ++t) {
        const auto& s = r.trace.stages[static_cast<std::size_t>(t - 1)];
        CHECK(s.epochs == c.base_epochs * (1LL << (t - 1)));
        CHECK(s.updates == s.epochs * per_epoch);
        total += s.epochs;
        for (long long j = 0; j < s.updates; ++j) {
            const double alpha = static_cast<double>(j) / static_cast<double>(s.updates);
            CHECK(r.trace.learning_rates[cursor++] == 0.5 * c.eta_max * (1 + std::cos(alpha * std::numbers::pi)));
        }
    }
    CHECK(cursor == r.trace.learning_rates.size());
    CHECK(total == ((1LL << c.stages) - 1) * c.base_epochs);
    CHECK(r.trace.epochs.size() == static_cast<std::size_t>(total));
    CHECK(r.ensemble->size() == 3);
}

TEST_CASE("offset mode never evaluates the prior at perturbed points") {
    const Dataset ds = small_blobs(60, 18);
    StagewiseConfig c = tiny_config();
    c.evaluate_each_stage = false;
    int clean = 0, perturbed = 0, foreign = 0;
    PriorProbe probe;
    probe.on_eval = [&](std::span<const double> x, bool is_perturbed) {
        (is_perturbed ? perturbed : clean)++;
        bool found = false;
        for (const auto& e : ds.examples()) found |= e.x[0] == x[0] && e.x[1] == x[1];
        foreign += !found;
    };
    run_stagewise(ds, c, &probe);
    CHECK(perturbed == 0);
    CHECK(foreign == 0);
    CHECK(clean == static_cast<int>(ds.size()) * (c.stages - 1));

    c.exact_reference = true;
    c.stages = 2;
    perturbed = 0;
    run_stagewise(ds, c, &probe);
    CHECK(perturbed > 0);
}

TEST_CASE("zero radius equals non-adversarial fitting") {
    const Dataset ds = small_blobs(70, 18);
    StagewiseConfig c = tiny_config();
    c.ball = {Norm::Linf, 0.0};
    c.eval_pgd.random_start = false;
    const auto a = run_stagewise(ds, c);
    c.adversarial = false;
    const auto b = run_stagewise(ds, c);
    REQUIRE(a.trace.epochs.size() == b.trace.epochs.size());
    for (std::size_t i = 0; i < a.trace.epochs.size(); ++i) CHECK(a.trace.epochs[i].mean_loss == b.trace.epochs[i].mean_loss);
    for (std::size_t t = 0; t < a.ensemble->size(); ++t) {
        CHECK(a.ensemble->stages()[t].beta == b.ensemble->stages()[t].beta);
        CHECK(dynamic_cast<const Mlp&>(*a.ensemble->stages()[t].f).params() ==
              dynamic_cast<const Mlp&>(*b.ensemble->stages()[t].f).params());
    }
}

TEST_CASE("single stage is one adversarially trained base scaled by beta") {
    const Dataset ds = small_blobs(80, 18);
    StagewiseConfig c = tiny_config();
    c.stages = 1;
    const auto r = run_stagewise(ds, c);
    REQUIRE(r.ensemble->size() == 1);
    const auto& st = r.ensemble->stages()[0];
    for (const auto& e : ds.examples()) {
        const Vec s = r.ensemble->scores(e.x), f = st.f->scores(e.x);
        for (std::size_t k = 0; k < 3; ++k) CHECK(s[k] == doctest::Approx(st.beta * f[k]).epsilon(1e-14));
    }
}

TEST_CASE("runs are reproducible") {
    const Dataset ds = small_blobs(90, 18);
    StagewiseConfig c = tiny_config();
    c.stages = 2;
    const auto a = run_stagewise(ds, c), b = run_stagewise(ds, c);
    CHECK(a.trace.learning_rates == b.trace.learning_rates);
    for (std::size_t i = 0; i < a.trace.stages.size(); ++i) {
        CHECK(a.trace.stages[i].train_loss == b.trace.stages[i].train_loss);
        CHECK(a.trace.stages[i].robust_accuracy == b.trace.stages[i].robust_accuracy);
    }
    for (const auto& e : ds.examples()) CHECK(a.ensemble->scores(e.x) == b.ensemble->scores(e.x));
}

TEST_CASE("divergent training aborts with the stage and epoch") {
    const Dataset ds = small_blobs(100, 12);
    StagewiseConfig c = tiny_config();
    c.eta_max = 1e300;
    try {
        run_stagewise(ds, c);
        FAIL("expected NonFiniteParameters");
    } catch (const NonFiniteParameters& e) {
        CHECK(e.code() == Errc::NonFiniteParameters);
        CHECK(e.stage() == 1);
        CHECK(e.epoch() >= 1);
    }
}

TEST_CASE("configuration validation") {
    StagewiseConfig c = tiny_config();
    c.stages = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = tiny_config();
    c.eta_max = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = tiny_config();
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), Error);
}
