#include <doctest.h>

#include <cmath>
#include <memory>

#include "rboost/hypotheses.hpp"
#include "rboost/losses.hpp"

using namespace rboost;

namespace {
LabelSet brute_stump(const DecisionStump& s, std::span<const double> x, double delta, int k) {
    LabelSet out(k);
    Vec xz(x.begin(), x.end());
    const int n = 10000;
    for (int i = 0; i <= n; ++i) {
        xz[s.feature()] = x[s.feature()] - delta + 2 * delta * i / n;
        out.insert(s.predict(xz));
    }
    return out;
}

Mlp random_mlp(SeededRng& rng, std::size_t d, int k) {
    std::vector<std::size_t> sizes{d};
    const std::size_t hidden = rng.below(3);
    for (std::size_t h = 0; h < hidden; ++h) sizes.push_back(1 + rng.below(6));
    sizes.push_back(static_cast<std::size_t>(k));
    Vec params(Mlp::param_count_for(sizes));
    for (double& p : params) p = rng.uniform(-1.5, 1.5);
    return Mlp(sizes, params);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }
} // namespace

TEST_CASE("argmax ties go to the lowest index") {
    CHECK(argmax_label(Vec{0.1, 0.9, 0.3}) == 1);
    CHECK(argmax_label(Vec{0.5, 0.5}) == 0);
}

TEST_CASE("stump reach set examples") {
    const DecisionStump s(0, 0.0, 0, 1, 2);
    const Vec a{-2.0}, b{0.5};
    CHECK(s.reach_set(a, {Norm::Linf, 1.0}).labels == LabelSet::single(2, 0));
    const auto both = s.reach_set(b, {Norm::Linf, 1.0});
    CHECK(both.labels.count() == 2);
    CHECK(both.certified);
    CHECK(s.reach_set(b, {Norm::Linf, 0.0}).labels == LabelSet::single(2, 1));
}

TEST_CASE("stump reach set matches dense brute force") {
    SeededRng rng(1234, 0);
    int disagreements = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t d = 1 + rng.below(3);
        const int k = 2 + static_cast<int>(rng.below(3));
        const Label l = static_cast<Label>(rng.below(k));
        const Label r = static_cast<Label>(rng.below(k));
        const DecisionStump s(rng.below(d), rng.uniform(-1, 1), l, r, k);
        Vec x(d);
        for (double& v : x) v = rng.uniform(-2, 2);
        const double delta = rng.uniform(0, 1);
        disagreements += !(s.reach_set(x, {Norm::Linf, delta}).labels == brute_stump(s, x, delta, k));
    }
    CHECK(disagreements == 0);
}

TEST_CASE("binary linear reach set examples") {
    // Row-difference form: s_1 - s_2 = w.x with w = (1, 0).
    const LinearScorer f(2, 2, Vec{1, 0, 0, 0}, Vec{0, 0});
    const Vec x{0.3, 0.0};
    CHECK(f.reach_set(x, {Norm::Linf, 0.5}).labels.count() == 2);
    CHECK(f.reach_set(x, {Norm::Linf, 0.2}).labels == LabelSet::single(2, 0));
    CHECK(f.reach_set(x, {Norm::Linf, 0.0}).labels == LabelSet::single(2, 0));
}

TEST_CASE("every PGD success lies in the exact linear reach set") {
    SeededRng rng(55, 0);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t d = 1 + rng.below(4);
        const int k = trial % 3 == 0 ? 3 : 2;
        Vec w(static_cast<std::size_t>(k) * d), b(static_cast<std::size_t>(k));
        for (double& v : w) v = rng.uniform(-1, 1);
        for (double& v : b) v = rng.uniform(-0.5, 0.5);
        auto f = std::make_shared<LinearScorer>(k, d, w, b);
        Vec x(d);
        for (double& v : x) v = rng.uniform(-1, 1);
        const Norm p = k == 2 && trial % 2 ? Norm::L2 : Norm::Linf;
        const PerturbationBall ball{p, rng.uniform(0, 1)};
        const auto exact = f->reach_set(x, ball, ReachMode::RequireExact);
        CHECK(exact.certified);
        PgdConfig c{20, 0.0, 3, true, true, 9, static_cast<std::uint64_t>(trial)};
        const auto heuristic = PgdEvaluator(c).reach_set(ArgmaxClassifier(f), x, ball);
        for (Label y : heuristic.labels.labels()) CHECK(exact.labels.contains(y));
        // Sampling the ball never escapes the exact set either.
        for (int s = 0; s < 200; ++s) {
            const Vec z = random_ball_point(d, ball, rng);
            Vec xz = x;
            for (std::size_t j = 0; j < d; ++j) xz[j] += z[j];
            CHECK(exact.labels.contains(argmax_label(f->scores(xz))));
        }
    }
}

TEST_CASE("multiclass linear reach set in high dimension needs the fallback") {
    const std::size_t d = 13;
    const LinearScorer f(3, d, Vec(3 * d, 0.1), Vec{0, 0, 0});
    const Vec x(d, 0.0);
    try {
        f.reach_set(x, {Norm::Linf, 0.1}, ReachMode::RequireExact);
        FAIL("expected DimensionTooLarge");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::DimensionTooLarge);
    }
    CHECK_FALSE(f.reach_set(x, {Norm::Linf, 0.1}).certified);
}

TEST_CASE("zero-hidden-layer MLP equals the linear scorer") {
    SeededRng rng(3, 3);
    Vec params(3 * 2 + 3);
    for (double& p : params) p = rng.uniform(-1, 1);
    const Mlp net({2, 3}, params);
    const LinearScorer lin(3, 2, Vec(params.begin(), params.begin() + 6), Vec(params.begin() + 6, params.end()));
    for (int i = 0; i < 50; ++i) {
        const Vec x{rng.uniform(-3, 3), rng.uniform(-3, 3)};
        CHECK(net.scores(x) == lin.scores(x));
    }
}

TEST_CASE("parameter count") {
    CHECK(Mlp::param_count_for({2, 16, 3}) == (2 + 1) * 16 + (16 + 1) * 3);
    SeededRng rng(1, 1);
    const Mlp g = Mlp::glorot({4, 5, 2}, rng);
    CHECK(g.params().size() == 5 * 4 + 5 + 2 * 5 + 2);
    const double bound = std::sqrt(6.0 / 9.0);
    for (std::size_t i = 0; i < 20; ++i) CHECK(std::abs(g.params()[i]) <= bound);
    for (std::size_t i = 20; i < 25; ++i) CHECK(g.params()[i] == 0.0);
}

TEST_CASE("MLP gradients match central finite differences") {
    SeededRng rng(2024, 0);
    const double h = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t d = 1 + rng.below(5);
        const int k = 2 + static_cast<int>(rng.below(3));
        Mlp net = random_mlp(rng, d, k);
        Vec x(d);
        for (double& v : x) v = rng.uniform(-1, 1);
        const Label y = static_cast<Label>(rng.below(k));
        const auto g = mlp_backward(net, x, y);
        for (std::size_t i = 0; i < net.params().size(); ++i) {
            const double saved = net.params()[i];
            net.mutable_params()[i] = saved + h;
            const double up = ce_loss(net.scores(x), y);
            net.mutable_params()[i] = saved - h;
            const double down = ce_loss(net.scores(x), y);
            net.mutable_params()[i] = saved;
            CHECK(rel_err(g.params[i], (up - down) / (2 * h)) <= 1e-5);
        }
        for (std::size_t j = 0; j < d; ++j) {
            Vec xp = x, xm = x;
            xp[j] += h;
            xm[j] -= h;
            const double fd = (ce_loss(net.scores(xp), y) - ce_loss(net.scores(xm), y)) / (2 * h);
            CHECK(rel_err(g.input[j], fd) <= 1e-5);
        }
    }
}

TEST_CASE("input gradient of a linear net is (softmax - onehot) W") {
    // W = [[1, 2], [3, -1]], b = 0, x = (0.5, 0.25), y = 1.
    const Mlp net({2, 2}, Vec{1, 2, 3, -1, 0, 0});
    const Vec x{0.5, 0.25};
    // scores = (1.0, 1.25); softmax_1 = 1/(1+e^{0.25}).
    const double p0 = 1.0 / (1.0 + std::exp(0.25));
    const double u0 = p0 - 1.0, u1 = 1.0 - p0;
    const auto g = mlp_backward(net, x, 0);
    CHECK(g.input[0] == doctest::Approx(u0 * 1 + u1 * 3).epsilon(1e-14));
    CHECK(g.input[1] == doctest::Approx(u0 * 2 + u1 * -1).epsilon(1e-14));
}

TEST_CASE("loss decreases along the negative parameter gradient") {
    SeededRng rng(9, 9);
    for (int trial = 0; trial < 10; ++trial) {
        Mlp net = random_mlp(rng, 3, 3);
        const Vec x{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const Label y = static_cast<Label>(rng.below(3));
        const double before = ce_loss(net.scores(x), y);
        const auto g = mlp_backward(net, x, y);
        double gn = 0;
        for (double v : g.params) gn += v * v;
        if (gn < 1e-20) continue;
        for (std::size_t i = 0; i < g.params.size(); ++i) net.mutable_params()[i] -= 1e-4 * g.params[i];
        CHECK(ce_loss(net.scores(x), y) < before);
    }
}

TEST_CASE("ReLU subgradient at zero is zero") {
    // Hidden pre-activation exactly 0 at x = 0: first-layer gradient must vanish.
    const Mlp net({1, 1, 2}, Vec{1.0, 0.0, 1.0, -1.0, 0.0, 0.0});
    const auto g = mlp_backward(net, Vec{0.0}, 0);
    CHECK(g.params[0] == 0.0);
    CHECK(g.params[1] == 0.0);
    CHECK(g.input[0] == 0.0);
}

TEST_CASE("plurality vote") {
    const auto h1 = std::make_shared<DecisionStump>(0, INFINITY, 1, 1, 2);
    const auto h0 = std::make_shared<DecisionStump>(0, INFINITY, 0, 0, 2);
    const Vec x{0.0};
    CHECK(MixtureQ(Vec{1.0}, {h1}).plurality_vote(x) == 1);
    CHECK(MixtureQ(Vec{0.6, 0.4}, {h1, h0}).plurality_vote(x) == 1);
    CHECK(MixtureQ(Vec{0.5, 0.5}, {h0, h1}).plurality_vote(x) == 0);
    CHECK_THROWS_AS(MixtureQ(Vec{}, {}), Error);
}

TEST_CASE("plurality vote is invariant to weight rescaling") {
    SeededRng rng(4, 4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::shared_ptr<const UnilabelPredictor>> hs;
        Vec w;
        for (int i = 0; i < 5; ++i) {
            hs.push_back(std::make_shared<DecisionStump>(0, rng.uniform(-1, 1), static_cast<Label>(rng.below(3)),
                                                         static_cast<Label>(rng.below(3)), 3));
            w.push_back(rng.uniform(0.01, 1));
        }
        Vec scaled = w;
        const double c = rng.uniform(0.1, 100);
        for (double& v : scaled) v *= c;
        const MixtureQ a(w, hs), b(scaled, hs);
        for (int i = 0; i < 10; ++i) {
            const Vec x{rng.uniform(-1.5, 1.5)};
            CHECK(a.plurality_vote(x) == b.plurality_vote(x));
            const Vec m = a.vote_mass(x);
            double s = 0;
            for (double v : m) s += v;
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("additive ensemble sums scaled stages") {
    auto a = std::make_shared<LinearScorer>(2, 1, Vec{1, -1}, Vec{0, 0.5});
    auto b = std::make_shared<LinearScorer>(2, 1, Vec{0, 2}, Vec{1, 0});
    AdditiveEnsemble e(2, 1);
    e.append(0.5, a);
    e.append(2.0, b);
    const Vec s = e.scores(Vec{3.0});
    CHECK(s[0] == doctest::Approx(0.5 * 3 + 2 * 1));
    CHECK(s[1] == doctest::Approx(0.5 * (-3 + 0.5) + 2 * 6));
    const Vec g = e.input_gradient(Vec{3.0}, Vec{1.0, 1.0});
    CHECK(g[0] == doctest::Approx(0.5 * (1 - 1) + 2 * (0 + 2)));
}

namespace {
Dataset stripes() {
    return Dataset({{{-2}, 0}, {{-1}, 0}, {{1}, 1}, {{2}, 1}}, 2);
}

double stump_err(const DecisionStump& s, const Dataset& ds, const IncorrectPairSet& pairs,
                 const FiniteDistribution& d, const PerturbationBall& ball) {
    return weighted_err_delta(s, ExactEvaluator{}, ball, ds, pairs, d).value;
}
} // namespace

TEST_CASE("stump learner: separable 1-D data reaches -1") {
    const Dataset ds = stripes();
    const auto pairs = build_incorrect_pairs(ds);
    const PerturbationBall ball{Norm::Linf, 0.5};
    const auto fit = train_stump_weak_learner(ds, pairs, FiniteDistribution::uniform(pairs.size()), ball);
    CHECK(fit.error == -1.0);
    CHECK(stump_err(fit.stump, ds, pairs, FiniteDistribution::uniform(pairs.size()), ball) == -1.0);
}

TEST_CASE("stump learner: huge delta leaves only constant classifiers") {
    const Dataset ds({{{-2}, 0}, {{-1}, 0}, {{1}, 0}, {{2}, 1}}, 2);
    const auto pairs = build_incorrect_pairs(ds);
    const PerturbationBall ball{Norm::Linf, 100.0};
    const auto d = FiniteDistribution::uniform(pairs.size());
    const auto fit = train_stump_weak_learner(ds, pairs, d, ball);
    // Constant label 1: three pairs at -1, one at +1.
    CHECK(fit.error == doctest::Approx(-0.5));
}

TEST_CASE("stump learner: single example") {
    const Dataset ds({{{0.3, -1.0}, 1}}, 3);
    const auto pairs = build_incorrect_pairs(ds);
    const auto fit = train_stump_weak_learner(ds, pairs, FiniteDistribution::uniform(pairs.size()), {Norm::Linf, 0.2});
    CHECK(fit.error == -1.0);
}

TEST_CASE("stump learner is optimal over its candidate grid") {
    SeededRng rng(31, 0);
    for (int trial = 0; trial < 15; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(2));
        std::vector<Example> ex;
        for (int i = 0; i < 8; ++i)
            ex.push_back({{rng.uniform(-1, 1), rng.uniform(-1, 1)}, static_cast<Label>(rng.below(k))});
        const Dataset ds(ex, k);
        const auto pairs = build_incorrect_pairs(ds);
        Vec raw(pairs.size());
        for (double& v : raw) v = rng.uniform(0.1, 1);
        const auto d = FiniteDistribution::normalize(raw);
        const PerturbationBall ball{Norm::Linf, rng.uniform(0, 0.3)};
        const auto fit = train_stump_weak_learner(ds, pairs, d, ball);
        CHECK(stump_err(fit.stump, ds, pairs, d, ball) == doctest::Approx(fit.error).epsilon(1e-12));
        double best = INFINITY;
        for (std::size_t j = 0; j < 2; ++j)
            for (double t : stump_threshold_candidates(ds, j, ball.delta))
                for (Label l = 0; l < k; ++l)
                    for (Label r = 0; r < k; ++r)
                        best = std::min(best, stump_err(DecisionStump(j, t, l, r, k), ds, pairs, d, ball));
        CHECK(fit.error <= best + 1e-12);
    }
}
