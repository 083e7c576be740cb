#include <doctest.h>

#include <cmath>
#include <memory>

#include "rboost/losses.hpp"

using namespace rboost;

namespace {
std::shared_ptr<const UnilabelPredictor> random_hypothesis(SeededRng& rng, std::size_t d, int k) {
    if (rng.below(2) == 0)
        return std::make_shared<DecisionStump>(rng.below(d), rng.uniform(-1, 1), static_cast<Label>(rng.below(k)),
                                               static_cast<Label>(rng.below(k)), k);
    Vec w(static_cast<std::size_t>(k) * d), b(static_cast<std::size_t>(k));
    for (double& v : w) v = rng.uniform(-1, 1);
    for (double& v : b) v = rng.uniform(-0.3, 0.3);
    return std::make_shared<ArgmaxClassifier>(std::make_shared<LinearScorer>(k, d, w, b));
}

Vec random_point(SeededRng& rng, std::size_t d) {
    Vec x(d);
    for (double& v : x) v = rng.uniform(-1, 1);
    return x;
}

Label other_label(SeededRng& rng, Label y, int k) {
    Label w = static_cast<Label>(rng.below(k - 1));
    return w >= y ? w + 1 : w;
}

const ExactEvaluator kExact;
} // namespace

TEST_CASE("base loss values") {
    LabelSet only_y = LabelSet::single(3, 0);
    CHECK(base_loss(only_y, 0, 1) == -1);
    CHECK(base_loss(LabelSet::single(3, 1), 0, 1) == 1);
    LabelSet both(3);
    both.insert(0);
    both.insert(1);
    CHECK(base_loss(both, 0, 1) == 0);
    const DecisionStump s(0, 0.0, 0, 1, 2);
    try {
        base_loss(s, Vec{1.0}, 1, 1);
        FAIL("expected SameLabel");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::SameLabel);
    }
}

TEST_CASE("robust pair loss on a 1-D stump") {
    const DecisionStump s(0, 0.0, 0, 1, 2);
    CHECK(robust_pair_loss(s, kExact, {Norm::Linf, 1.0}, Vec{0.5}, 0, 1).value == 1);
    CHECK(robust_pair_loss(s, kExact, {Norm::Linf, 1.0}, Vec{-2.0}, 0, 1).value == -1);
    CHECK(robust_pair_loss(s, kExact, {Norm::Linf, 1.0}, Vec{-2.0}, 0, 1).certified);
    CHECK_THROWS_AS(robust_pair_loss(s, kExact, {Norm::Linf, 1.0}, Vec{0.5}, 0, 0), Error);
}

TEST_CASE("one-vs-all loss values") {
    LabelSet r = LabelSet::single(3, 2);
    CHECK(ova_loss_from_reach(r, 2) == -1);
    r.insert(0);
    CHECK(ova_loss_from_reach(r, 2) == 1);
    const DecisionStump s(0, 0.0, 0, 1, 2);
    CHECK(ova_loss(s, kExact, {Norm::Linf, 0.0}, Vec{0.5}, 1).value == -1);
}

TEST_CASE("cross-entropy values") {
    CHECK(ce_loss(Vec{0, 0}, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(ce_loss(Vec{0, 0, 0}, 1) == doctest::Approx(std::log(3.0)).epsilon(1e-15));
    CHECK(ce_loss(Vec{10, 0}, 0) == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-12));
    CHECK(ce_loss(Vec{1000, -1000}, 1) == 2000.0);
    CHECK(ce_loss(Vec{1000, -1000}, 0) == 0.0);
}

TEST_CASE("cross-entropy gradient matches finite differences") {
    SeededRng rng(6, 0);
    for (int t = 0; t < 50; ++t) {
        Vec s = random_point(rng, 4);
        const Label y = static_cast<Label>(rng.below(4));
        const Vec g = ce_gradient(s, y);
        for (std::size_t c = 0; c < 4; ++c) {
            Vec a = s, b = s;
            a[c] += 1e-6;
            b[c] -= 1e-6;
            CHECK(g[c] == doctest::Approx((ce_loss(a, y) - ce_loss(b, y)) / 2e-6).epsilon(1e-6));
        }
    }
}

TEST_CASE("robust cross-entropy: zero radius and clean lower bound") {
    SeededRng rng(12, 0);
    for (int t = 0; t < 100; ++t) {
        Vec params(Mlp::param_count_for({2, 4, 3}));
        for (double& p : params) p = rng.uniform(-1, 1);
        const Mlp net({2, 4, 3}, params);
        const Vec x = random_point(rng, 2);
        const Label y = static_cast<Label>(rng.below(3));
        const double clean = ce_loss(net.scores(x), y);
        PgdConfig c{7, 0.0, 1, true, false, 3, static_cast<std::uint64_t>(t)};
        CHECK(robust_ce_loss(net, c, {Norm::Linf, 0.0}, x, y).value == clean);
        CHECK(robust_ce_loss(net, c, {Norm::L2, 0.4}, x, y).value >= clean);
    }
}

TEST_CASE("zero radius collapses robust losses to standard losses") {
    SeededRng rng(100, 0);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t d = 1 + rng.below(3);
        const int k = 2 + static_cast<int>(rng.below(3));
        const auto h = random_hypothesis(rng, d, k);
        const Vec x = random_point(rng, d);
        const Label y = static_cast<Label>(rng.below(k));
        const Label yw = other_label(rng, y, k);
        const PerturbationBall ball{t % 2 ? Norm::L2 : Norm::Linf, 0.0};
        CHECK(robust_pair_loss(*h, kExact, ball, x, y, yw).value == base_loss(*h, x, y, yw));
        CHECK(ova_loss(*h, kExact, ball, x, y).value == (h->predict(x) == y ? -1 : 1));
    }
}

TEST_CASE("pair loss is dominated by the one-vs-all loss") {
    SeededRng rng(200, 0);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t d = 1 + rng.below(3);
        const int k = 2 + static_cast<int>(rng.below(3));
        const auto h = random_hypothesis(rng, d, k);
        const Vec x = random_point(rng, d);
        const Label y = static_cast<Label>(rng.below(k));
        const Label yw = other_label(rng, y, k);
        const PerturbationBall ball{Norm::Linf, rng.uniform(0, 0.8)};
        CHECK(robust_pair_loss(*h, kExact, ball, x, y, yw).value <= ova_loss(*h, kExact, ball, x, y).value);
    }
}

TEST_CASE("robust losses are nondecreasing in delta") {
    SeededRng rng(300, 0);
    for (int t = 0; t < 300; ++t) {
        const std::size_t d = 1 + rng.below(3);
        const int k = 2 + static_cast<int>(rng.below(3));
        const auto h = random_hypothesis(rng, d, k);
        const Vec x = random_point(rng, d);
        const Label y = static_cast<Label>(rng.below(k));
        const Label yw = other_label(rng, y, k);
        int prev_pair = -2, prev_ova = -2;
        for (double delta = 0; delta <= 1.0; delta += 0.05) {
            const PerturbationBall ball{Norm::Linf, delta};
            const int pl = robust_pair_loss(*h, kExact, ball, x, y, yw).value;
            const int ol = ova_loss(*h, kExact, ball, x, y).value;
            CHECK(pl >= prev_pair);
            CHECK(ol >= prev_ova);
            prev_pair = pl;
            prev_ova = ol;
        }
    }
}

TEST_CASE("robust pair loss equals the base loss of the reach-set multilabel predictor") {
    SeededRng rng(400, 0);
    const Dataset ds({{{-0.9, 0.2}, 0}, {{0.1, 0.1}, 1}, {{0.7, -0.4}, 2}, {{0.0, 0.8}, 0}}, 3);
    const auto pairs = build_incorrect_pairs(ds);
    for (int t = 0; t < 100; ++t) {
        const auto h = random_hypothesis(rng, 2, 3);
        const PerturbationBall ball{Norm::Linf, rng.uniform(0, 0.6)};
        for (const auto& pr : pairs) {
            const Example& e = ds[pr.example];
            const LabelSet reach = kExact.reach_set(*h, e.x, ball).labels;
            // h~(x) keeps y only when it is forced, and every other reachable label.
            LabelSet tilde(3);
            for (Label c : reach.labels())
                if (c != e.y || reach.is_singleton(e.y)) tilde.insert(c);
            CHECK(base_loss(tilde, e.y, pr.wrong) == robust_pair_loss(*h, kExact, ball, e.x, e.y, pr.wrong).value);
        }
    }
}

TEST_CASE("weighted errors: perfect, balanced, and brute-forced stump cases") {
    const Dataset ds({{{-2}, 0}, {{-1}, 0}, {{1}, 1}, {{2}, 1}}, 2);
    const auto pairs = build_incorrect_pairs(ds);
    const DecisionStump perfect(0, 0.0, 0, 1, 2);
    SeededRng rng(500, 0);
    Vec raw(pairs.size());
    for (double& v : raw) v = rng.uniform(0.1, 1);
    const auto d = FiniteDistribution::normalize(raw);
    CHECK(weighted_err_delta(perfect, kExact, {Norm::Linf, 0.5}, ds, pairs, d).value == doctest::Approx(-1.0));

    // Correct on the first two pairs, wrong on the last two.
    const DecisionStump constant(0, INFINITY, 0, 0, 2);
    CHECK(weighted_err(constant, ds, pairs, FiniteDistribution::uniform(4)) == 0.0);

    // 3 examples, k = 3, stump x <= 0.5 -> 1 else 3, delta = 0.6, brute force over a z grid.
    const Dataset small({{{0.0}, 0}, {{1.0}, 2}, {{2.0}, 1}}, 3);
    const auto sp = build_incorrect_pairs(small);
    const DecisionStump s(0, 0.5, 0, 2, 3);
    double expected = 0;
    for (const auto& pr : sp) {
        const Example& e = small[pr.example];
        bool reach_wrong = false, forced = true;
        for (int i = 0; i <= 10000; ++i) {
            const double xz = e.x[0] - 0.6 + 1.2 * i / 10000;
            const Label p = s.predict(Vec{xz});
            reach_wrong |= p == pr.wrong;
            forced &= p == e.y;
        }
        expected += (reach_wrong ? 1.0 : 0.0) - (forced ? 1.0 : 0.0);
    }
    expected /= static_cast<double>(sp.size());
    CHECK(weighted_err_delta(s, kExact, {Norm::Linf, 0.6}, small, sp, FiniteDistribution::uniform(sp.size())).value ==
          doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("weighted errors are in range and affine in D") {
    SeededRng rng(600, 0);
    std::vector<Example> ex;
    for (int i = 0; i < 10; ++i) ex.push_back({random_point(rng, 2), static_cast<Label>(rng.below(3))});
    const Dataset ds(ex, 3);
    const auto pairs = build_incorrect_pairs(ds);
    for (int t = 0; t < 50; ++t) {
        const auto h = random_hypothesis(rng, 2, 3);
        const PerturbationBall ball{Norm::Linf, rng.uniform(0, 0.5)};
        Vec r1(pairs.size()), r2(pairs.size());
        for (double& v : r1) v = rng.uniform();
        for (double& v : r2) v = rng.uniform();
        const auto d1 = FiniteDistribution::normalize(r1), d2 = FiniteDistribution::normalize(r2);
        const double lam = rng.uniform();
        Vec mix(pairs.size());
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = lam * d1[i] + (1 - lam) * d2[i];
        const auto dm = FiniteDistribution::normalize(mix);
        const double e1 = weighted_err_delta(*h, kExact, ball, ds, pairs, d1).value;
        const double e2 = weighted_err_delta(*h, kExact, ball, ds, pairs, d2).value;
        const double em = weighted_err_delta(*h, kExact, ball, ds, pairs, dm).value;
        CHECK(e1 >= -1.0);
        CHECK(e1 <= 1.0);
        CHECK(em == doctest::Approx(lam * e1 + (1 - lam) * e2).epsilon(1e-12));

        Vec s1(ds.size());
        for (double& v : s1) v = rng.uniform();
        const double o = weighted_err_ova(*h, kExact, ball, ds, FiniteDistribution::normalize(s1)).value;
        CHECK(o >= -1.0);
        CHECK(o <= 1.0);
    }
}

TEST_CASE("support mismatch is rejected") {
    const Dataset ds({{{-2}, 0}, {{2}, 1}}, 2);
    const auto pairs = build_incorrect_pairs(ds);
    const DecisionStump s(0, 0.0, 0, 1, 2);
    try {
        weighted_err_delta(s, kExact, {Norm::Linf, 0.1}, ds, pairs, FiniteDistribution::uniform(3));
        FAIL("expected SupportMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::SupportMismatch);
    }
    CHECK_THROWS_AS(weighted_err_ova(s, kExact, {Norm::Linf, 0.1}, ds, FiniteDistribution::uniform(5)), Error);
}

TEST_CASE("grid evaluator contains the origin and the corners") {
    const GridEvaluator g(101);
    const auto pts = g.grid(2, {Norm::Linf, 0.5});
    CHECK(pts.size() >= 10000);
    bool origin = false, corner = false;
    for (const auto& z : pts) {
        origin |= z[0] == 0.0 && z[1] == 0.0;
        corner |= z[0] == 0.5 && z[1] == -0.5;
    }
    CHECK(origin);
    CHECK(corner);
    for (const auto& z : g.grid(2, {Norm::L2, 0.5})) CHECK(norm_of(z, Norm::L2) <= 0.5 + 1e-12);
}

TEST_CASE("surrogate bound on small random predictors") {
    SeededRng rng(700, 0);
    const GridEvaluator grid(101);
    int violations = 0;
    for (int t = 0; t < 100; ++t) {
        const int k = 2 + static_cast<int>(rng.below(2));
        std::vector<std::size_t> sizes{2};
        if (t % 2) sizes.push_back(4);
        sizes.push_back(static_cast<std::size_t>(k));
        Vec params(Mlp::param_count_for(sizes));
        for (double& p : params) p = rng.uniform(-2, 2);
        auto net = std::make_shared<Mlp>(sizes, params);
        const ArgmaxClassifier am(net);
        const Vec x = random_point(rng, 2);
        const Label y = static_cast<Label>(rng.below(k));
        const PerturbationBall ball{t % 3 ? Norm::Linf : Norm::L2, rng.uniform(0, 0.5)};
        const int lhs = ova_loss(am, grid, ball, x, y).value;
        PgdConfig c{20, 0.0, 3, true, true, 1, static_cast<std::uint64_t>(t)};
        double sup = robust_ce_loss(*net, c, ball, x, y).value;
        for (const auto& z : grid.grid(2, ball)) sup = std::max(sup, ce_loss(net->scores(Vec{x[0] + z[0], x[1] + z[1]}), y));
        violations += lhs > 2.0 / std::log(2.0) * sup - 1.0 + 1e-9;
    }
    CHECK(violations == 0);
}
