#include <doctest.h>

#include <cmath>
#include <memory>

#include "rboost/game_boost.hpp"

using namespace rboost;

namespace {
Dataset stripes() { return Dataset({{{-2}, 0}, {{-1}, 0}, {{1}, 1}, {{2}, 1}}, 2); }

const ExactEvaluator kExact;

// Dense 1-D adversary: every example keeps its label on 10^4 + 1 points of [x - delta, x + delta].
int grid_errors_1d(const UnilabelPredictor& h, const Dataset& ds, double delta) {
    int errors = 0;
    for (const auto& e : ds.examples())
        for (int i = 0; i <= 10000; ++i)
            errors += h.predict(Vec{e.x[0] - delta + 2 * delta * i / 10000}) != e.y;
    return errors;
}
} // namespace

TEST_CASE("rounds for margin") {
    CHECK(rounds_for_margin(1.0, 2) == 12);
    CHECK(rounds_for_margin(0.1, 90) == 7200);
    CHECK(rounds_for_margin(1.0, 1) == 12);
    CHECK_THROWS_AS(rounds_for_margin(0.0, 4), Error);
    CHECK_THROWS_AS(rounds_for_margin(1.5, 4), Error);
    CHECK(auto_hedge_step(0.1, 90, 7200) == doctest::Approx(std::min(0.025, std::sqrt(std::log(90.0) / 7200))));
}

TEST_CASE("hedge update examples") {
    const auto s = HedgeState::uniform(2, std::log(2.0));
    const auto n = hedge_update(s, Vec{1.0, -1.0});
    CHECK(n.d[0] == doctest::Approx(0.8).epsilon(1e-14));
    CHECK(n.d[1] == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(n.round == 1);

    const auto start = HedgeState::from(FiniteDistribution::normalize(Vec{1, 2, 3}), 0.7);
    const auto same = hedge_update(start, Vec{0.3, 0.3, 0.3});
    for (std::size_t i = 0; i < 3; ++i) CHECK(same.d[i] == doctest::Approx(start.d[i]).epsilon(1e-14));
    const auto frozen = hedge_update(HedgeState::from(start.d, 0.0), Vec{1, -1, 0});
    for (std::size_t i = 0; i < 3; ++i) CHECK(frozen.d[i] == doctest::Approx(start.d[i]).epsilon(1e-14));
}

TEST_CASE("hedge regret against adversarial sequences") {
    SeededRng rng(17, 0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.below(20);
        const int t_max = 50 + static_cast<int>(rng.below(500));
        const double eta = rng.uniform(0.01, 0.5);
        auto s = HedgeState::uniform(n, eta);
        Vec cumulative(n, 0.0);
        double played = 0.0;
        for (int t = 0; t < t_max; ++t) {
            Vec loss(n);
            // Adversary rewards whoever currently has the least mass, plus noise.
            for (std::size_t i = 0; i < n; ++i) loss[i] = std::clamp(1.0 - 4 * s.d[i] + rng.uniform(-0.5, 0.5), -1.0, 1.0);
            for (std::size_t i = 0; i < n; ++i) {
                played += s.d[i] * loss[i];
                cumulative[i] += loss[i];
            }
            s = hedge_update(s, loss);
            double sum = 0;
            for (double w : s.d.weights()) {
                CHECK(w > 0.0);
                sum += w;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
        const double best = *std::max_element(cumulative.begin(), cumulative.end());
        const double regret = (best - played) / t_max;
        CHECK(regret <= eta + std::log(static_cast<double>(n)) / (eta * t_max));
    }
}

TEST_CASE("perfect weak learner gives margins of -1") {
    const Dataset ds = stripes();
    const auto perfect = std::make_shared<DecisionStump>(0, 0.0, 0, 1, 2);
    const WeakLearner learner = [&](const FiniteDistribution&) { return WeakHypothesis{perfect, -1.0}; };
    BoostConfig c;
    c.gamma = 1.0;
    c.ball = {Norm::Linf, 0.5};
    c.early_stop = false;
    const auto r = run_boost(ds, learner, kExact, c);
    CHECK(r.q.size() == static_cast<std::size_t>(rounds_for_margin(1.0, 4)));
    for (const auto& e : r.report.entries) CHECK(e.loss == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(r.report.max_margin == doctest::Approx(-1.0).epsilon(1e-12));
    REQUIRE(r.robust_accuracy.has_value());
    CHECK(*r.robust_accuracy == 1.0);
}

TEST_CASE("stump booster on 1-D stripes is robust on a dense grid") {
    const Dataset ds = stripes();
    BoostConfig c;
    c.gamma = 0.5;
    c.ball = {Norm::Linf, 0.5};
    const auto r = run_boost(ds, stump_weak_learner(ds, c.ball, c.mode), kExact, c);
    CHECK(r.report.max_margin < 0.0);
    for (const auto& rec : r.trace) CHECK(rec.achieved_error <= -c.gamma);
    CHECK(grid_errors_1d(r.q, ds, 0.5) == 0);
}

TEST_CASE("weak learner below the edge fails in round one") {
    const Dataset ds = stripes();
    // The booster measures the certified error itself; this stump reaches -0.5 = -gamma/2
    // under the uniform start, whatever it claims.
    const auto h = std::make_shared<DecisionStump>(0, 1.2, 0, 1, 2);
    const WeakLearner learner = [&](const FiniteDistribution&) { return WeakHypothesis{h, -1.0}; };
    BoostConfig c;
    c.gamma = 1.0;
    c.ball = {Norm::Linf, 0.5};
    try {
        run_boost(ds, learner, kExact, c);
        FAIL("expected WeakLearnerFailed");
    } catch (const WeakLearnerFailure& e) {
        CHECK(e.code() == Errc::WeakLearnerFailed);
        CHECK(e.round() == 1);
        CHECK(e.achieved() == -0.5);
        CHECK(e.trace().size() == 1);
    }
}

TEST_CASE("heuristic evaluators are refused by default") {
    const Dataset ds = stripes();
    BoostConfig c;
    c.ball = {Norm::Linf, 0.5};
    try {
        run_boost(ds, stump_weak_learner(ds, c.ball, c.mode), PgdEvaluator(PgdConfig{}), c);
        FAIL("expected NonCertifiedEvaluator");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::NonCertifiedEvaluator);
    }
}

TEST_CASE("margin report examples") {
    const Dataset ds = stripes();
    const PerturbationBall ball{Norm::Linf, 0.5};
    const auto good = std::make_shared<DecisionStump>(0, 0.0, 0, 1, 2);
    CHECK(margin_report(MixtureQ(Vec{1.0}, {good}), ds, ball, kExact).max_margin == -1.0);

    // Threshold 1.2 lets the adversary push x = 1 to label 1 (and unforces its label 2).
    const auto leaky = std::make_shared<DecisionStump>(0, 1.2, 0, 1, 2);
    const auto rep = margin_report(MixtureQ(Vec{0.5, 0.5}, {good, leaky}), ds, ball, kExact);
    for (const auto& e : rep.entries) {
        if (e.example == 2) {
            CHECK(e.loss == 0.0);
            CHECK(e.p_forced == 0.5);
            CHECK(e.p_reach == 0.5);
        } else {
            CHECK(e.loss == -1.0);
        }
    }
    CHECK(rep.max_margin == 0.0);
}

TEST_CASE("one-vs-all boosting keeps the forced vote mass above (1+gamma)/2 - gamma/4") {
    // Labels 1, 2, 1 along the line: no stump is perfect, every D admits edge 1/3.
    const Dataset ds({{{-2}, 0}, {{0}, 1}, {{2}, 0}}, 2);
    BoostConfig c;
    c.gamma = 0.3;
    c.ball = {Norm::Linf, 0.5};
    c.mode = BoostMode::OneVsAll;
    c.early_stop = false;
    const auto r = run_boost(ds, stump_weak_learner(ds, c.ball, c.mode), kExact, c);
    const double bound = (1 + c.gamma) / 2 - c.gamma / 4;
    CHECK(r.report.min_forced >= bound);
    for (const auto& e : ds.examples()) {
        for (int i = 0; i <= 10000; ++i) {
            const Vec xz{e.x[0] - 0.5 + 1.0 * i / 10000};
            CHECK(r.q.vote_mass(xz)[static_cast<std::size_t>(e.y)] >= bound);
        }
    }
}

TEST_CASE("boosting is deterministic") {
    const Dataset ds({{{-1.0, 0.3}, 0}, {{0.2, 1.1}, 1}, {{1.4, -0.2}, 2}, {{-0.3, -1.2}, 0}, {{0.9, 0.8}, 1}}, 3);
    BoostConfig c;
    c.gamma = 0.1;
    c.ball = {Norm::Linf, 0.1};
    c.rounds = 60;
    const auto a = run_boost(ds, stump_weak_learner(ds, c.ball, c.mode), kExact, c);
    const auto b = run_boost(ds, stump_weak_learner(ds, c.ball, c.mode), kExact, c);
    REQUIRE(a.q.size() == b.q.size());
    for (std::size_t i = 0; i < a.q.size(); ++i) {
        const auto& sa = dynamic_cast<const DecisionStump&>(*a.q.components()[i].h);
        const auto& sb = dynamic_cast<const DecisionStump&>(*b.q.components()[i].h);
        CHECK(sa.feature() == sb.feature());
        CHECK(sa.threshold() == sb.threshold());
        CHECK(sa.left() == sb.left());
        CHECK(sa.right() == sb.right());
    }
    REQUIRE(a.report.entries.size() == b.report.entries.size());
    for (std::size_t i = 0; i < a.report.entries.size(); ++i) CHECK(a.report.entries[i].loss == b.report.entries[i].loss);
}
