#include "rboost/certify.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "rboost/losses.hpp"

namespace rboost {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double poly(const double* c, int n, double r) {
    double v = c[n - 1];
    for (int i = n - 2; i >= 0; --i) v = v * r + c[i];
    return v;
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    h ^= v + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    h ^= h >> 31;
    h *= 0xBF58476D1CE4E5B9ull;
    return h ^ (h >> 29);
}

Label argmax_excluding(std::span<const double> v, Label skip) {
    Label best = -1;
    for (Label c = 0; c < static_cast<Label>(v.size()); ++c) {
        if (c == skip) continue;
        if (best < 0 || v[static_cast<std::size_t>(c)] > v[static_cast<std::size_t>(best)]) best = c;
    }
    return best;
}
} // namespace

// ============================================================================
// Gaussian helpers
// ============================================================================
double gaussian_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(Errc::OutOfDomain, "quantile argument must lie in (0, 1)");
    static constexpr double a[] = {3.3871328727963666080e0, 1.3314166789178437745e+2, 1.9715909503065514427e+3,
                                   1.3731693765509461125e+4, 4.5921953931549871457e+4, 6.7265770927008700853e+4,
                                   3.3430575583588128105e+4, 2.5090809287301226727e+3};
    static constexpr double b[] = {1.0,
                                   4.2313330701600911252e+1,
                                   6.8718700749205790830e+2,
                                   5.3941960214247511077e+3,
                                   2.1213794301586595867e+4,
                                   3.9307895800092710610e+4,
                                   2.8729085735721942674e+4,
                                   5.2264952788528545610e+3};
    static constexpr double c[] = {1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
                                   3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
                                   2.27238449892691845833e-2, 7.74545014278341407640e-4};
    static constexpr double d[] = {1.0,
                                   2.05319162663775882187e0,
                                   1.67638483018380384940e0,
                                   6.89767334985100004550e-1,
                                   1.48103976427480074590e-1,
                                   1.51986665636164571966e-2,
                                   5.47593808499534494600e-4,
                                   1.05075007164441684324e-9};
    static constexpr double e[] = {6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
                                   2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
                                   2.71155556874348757815e-5, 2.01033439929228813265e-7};
    static constexpr double f[] = {1.0,
                                   5.99832206555887937690e-1,
                                   1.36929880922735805310e-1,
                                   1.48753612908506148525e-2,
                                   7.86869131145613259100e-4,
                                   1.84631831751005468180e-5,
                                   1.42151175831644588870e-7,
                                   2.04426310338993978564e-15};

    const double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q * poly(a, 8, r) / poly(b, 8, r);
    }
    double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = poly(c, 8, r) / poly(d, 8, r);
    } else {
        r -= 5.0;
        val = poly(e, 8, r) / poly(f, 8, r);
    }
    return q < 0.0 ? -val : val;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// ============================================================================
// Smoothing
// ============================================================================
void SmoothingConfig::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(Errc::InvalidConfig, "sigma must be > 0");
    if (n_samples < 1) throw Error(Errc::InvalidConfig, "n_samples must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::InvalidConfig, "alpha must lie in (0, 1)");
}

Vec smooth_class_probs(const ScorePredictor& f, std::span<const double> x, const SmoothingConfig& config,
                       std::uint64_t stream) {
    config.validate();
    SeededRng rng(config.seed, stream);
    std::vector<long long> counts(static_cast<std::size_t>(f.num_classes()), 0);
    Vec xs(x.size());
    for (int s = 0; s < config.n_samples; ++s) {
        for (std::size_t j = 0; j < x.size(); ++j) xs[j] = x[j] + config.sigma * rng.normal();
        ++counts[static_cast<std::size_t>(argmax_label(f.scores(xs)))];
    }
    Vec probs(counts.size());
    for (std::size_t c = 0; c < counts.size(); ++c)
        probs[c] = static_cast<double>(counts[c]) / static_cast<double>(config.n_samples);
    return probs;
}

CertifiedPrediction certified_radius(std::span<const double> probs, double sigma, std::optional<int> n_samples) {
    if (probs.empty()) throw Error(Errc::InvalidConfig, "empty probability vector");
    CertifiedPrediction out;
    out.label = argmax_label(probs);
    out.runner_up = argmax_excluding(probs, out.label);
    if (out.runner_up < 0) {
        out.radius = kInf;
        return out;
    }
    double pa = probs[static_cast<std::size_t>(out.label)];
    double pb = probs[static_cast<std::size_t>(out.runner_up)];
    if (n_samples) {
        const double lo = 0.5 / static_cast<double>(*n_samples);
        pa = std::clamp(pa, lo, 1.0 - lo);
        pb = std::clamp(pb, lo, 1.0 - lo);
    }
    if (pa == pb) {
        out.abstain = true;
        return out;
    }
    auto quantile = [](double p) { return p >= 1.0 ? kInf : p <= 0.0 ? -kInf : gaussian_quantile(p); };
    out.radius = std::max(0.0, 0.5 * sigma * (quantile(pa) - quantile(pb)));
    return out;
}

double clopper_pearson_lower(long long successes, long long trials, double alpha) {
    if (trials < 1 || successes < 0 || successes > trials) throw Error(Errc::OutOfDomain, "invalid binomial counts");
    if (successes == 0) return 0.0;
    const double n = static_cast<double>(trials);
    // Pr[Bin(n, p) >= k], summed in log space.
    auto upper_tail = [&](double p) {
        const double lp = std::log(p), lq = std::log1p(-p);
        double mx = -kInf;
        std::vector<double> terms;
        terms.reserve(static_cast<std::size_t>(trials - successes + 1));
        for (long long j = successes; j <= trials; ++j) {
            const double jj = static_cast<double>(j);
            const double t = std::lgamma(n + 1) - std::lgamma(jj + 1) - std::lgamma(n - jj + 1) + jj * lp +
                             (j == trials ? 0.0 : (n - jj) * lq);
            terms.push_back(t);
            mx = std::max(mx, t);
        }
        double s = 0.0;
        for (double t : terms) s += std::exp(t - mx);
        return std::exp(mx) * s;
    };
    double lo = 0.0, hi = static_cast<double>(successes) / n;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= 0.0 || mid == lo || mid == hi) break;
        if (upper_tail(mid) < alpha) lo = mid;
        else hi = mid;
    }
    return lo;
}

// ============================================================================
// Radius predictors
// ============================================================================
LinearRadiusPredictor::LinearRadiusPredictor(LinearScorer scorer, Norm p) : scorer_(std::move(scorer)), p_(p) {}

CertifiedPrediction LinearRadiusPredictor::certify(std::span<const double> x) const {
    const Vec s = scorer_.scores(x);
    CertifiedPrediction out;
    out.label = argmax_label(s);
    out.radius = kInf;
    const std::size_t d = scorer_.input_dim();
    Vec diff(d);
    for (Label c = 0; c < scorer_.num_classes(); ++c) {
        if (c == out.label) continue;
        const auto wy = scorer_.row(out.label), wc = scorer_.row(c);
        for (std::size_t j = 0; j < d; ++j) diff[j] = wy[j] - wc[j];
        const double gap = s[static_cast<std::size_t>(out.label)] - s[static_cast<std::size_t>(c)];
        const double den = dual_norm_of(diff, p_);
        const double r = gap <= 0.0 ? 0.0 : den == 0.0 ? kInf : gap / den;
        if (out.runner_up < 0 || r < out.radius) {
            out.radius = r;
            out.runner_up = c;
        }
    }
    return out;
}

SmoothedClassifier::SmoothedClassifier(std::shared_ptr<const ScorePredictor> base, SmoothingConfig config)
    : base_(std::move(base)), config_(config) {
    if (!base_) throw Error(Errc::InvalidConfig, "smoothed classifier needs a base predictor");
    config_.validate();
}

std::uint64_t point_stream(std::span<const double> x) {
    std::uint64_t stream = 0x5300;
    for (double v : x) stream = mix(stream, std::bit_cast<std::uint64_t>(v));
    return stream;
}

namespace {
CertifiedPrediction certify_probs(std::span<const double> probs, const SmoothingConfig& config) {
    if (!config.conservative) return certified_radius(probs, config.sigma, config.n_samples);
    CertifiedPrediction out;
    out.label = argmax_label(probs);
    out.runner_up = argmax_excluding(probs, out.label);
    const auto hits = std::llround(probs[static_cast<std::size_t>(out.label)] * config.n_samples);
    const double pa = clopper_pearson_lower(hits, config.n_samples, config.alpha);
    if (pa > 0.5) out.radius = config.sigma * gaussian_quantile(pa);
    else out.abstain = true;
    return out;
}
} // namespace

CertifiedPrediction SmoothedClassifier::certify(std::span<const double> x) const {
    return certify_probs(smooth_class_probs(*base_, x, config_, point_stream(x)), config_);
}

std::vector<CertRow> certify_dataset(const ScorePredictor& f, const Dataset& dataset, const SmoothingConfig& config) {
    std::vector<CertRow> rows;
    rows.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        CertRow row;
        row.example = i;
        row.truth = dataset[i].y;
        row.probs = smooth_class_probs(f, dataset[i].x, config, point_stream(dataset[i].x));
        const CertifiedPrediction cp = certify_probs(row.probs, config);
        row.label = cp.label;
        row.radius = cp.radius;
        row.abstain = cp.abstain;
        rows.push_back(std::move(row));
    }
    return rows;
}

double certified_accuracy(const RadiusPredictor& h, const Dataset& dataset, const FiniteDistribution& d,
                          double delta) {
    if (d.size() != dataset.size()) throw Error(Errc::SupportMismatch, "one weight per example");
    double acc = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const CertifiedPrediction cp = h.certify(dataset[i].x);
        if (!cp.abstain && cp.label == dataset[i].y && cp.radius >= delta) acc += d[i];
    }
    return acc;
}

double certified_accuracy(std::span<const CertRow> rows, double delta) {
    if (rows.empty()) return 0.0;
    std::size_t ok = 0;
    for (const auto& r : rows)
        if (!r.abstain && r.label == r.truth && r.radius >= delta) ++ok;
    return static_cast<double>(ok) / static_cast<double>(rows.size());
}

CertifiedPrediction aggregate_radius(const MixtureQ& q, std::span<const double> x) {
    const std::size_t n = q.size();
    if (n == 0) throw Error(Errc::EmptyMixture, "mixture has no components");
    const std::size_t k = static_cast<std::size_t>(q.num_classes());

    std::vector<CertifiedPrediction> cps(n);
    Vec votes(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto* rp = dynamic_cast<const RadiusPredictor*>(q.components()[i].h.get());
        if (!rp) throw Error(Errc::BackendMismatch, "aggregate radius needs radius-predictor components");
        cps[i] = rp->certify(x);
        votes[static_cast<std::size_t>(cps[i].label)] += q.components()[i].weight;
    }
    const Label y = argmax_label(votes);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cps[a].radius < cps[b].radius; });

    // suffix[i] = vote mass of sorted positions i..n-1.
    std::vector<Vec> suffix(n + 1, Vec(k, 0.0));
    for (std::size_t i = n; i-- > 0;) {
        suffix[i] = suffix[i + 1];
        suffix[i][static_cast<std::size_t>(cps[order[i]].label)] += q.components()[order[i]].weight;
    }

    CertifiedPrediction out;
    out.label = y;
    out.radius = cps[order[0]].radius;
    out.runner_up = argmax_excluding(suffix[0], y);
    double dropped = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Label other = argmax_excluding(suffix[i], y);
        const double rival = other < 0 ? 0.0 : suffix[i][static_cast<std::size_t>(other)];
        if (dropped + rival <= suffix[i][static_cast<std::size_t>(y)]) {
            out.radius = cps[order[i]].radius;
            out.runner_up = other;
        }
        dropped += q.components()[order[i]].weight;
    }
    return out;
}

// ============================================================================
// Checker
// ============================================================================
void CheckerSpec::validate() const {
    if (!(c >= 1.0)) throw Error(Errc::InvalidConfig, "checker factor c must be >= 1");
    if (backend == CheckerBackend::Exact && c != 1.0)
        throw Error(Errc::InvalidConfig, "the exact checker has c = 1");
    PerturbationBall::make(ball.p, ball.delta);
    pgd.validate();
}

namespace {
using Kind = CheckOutcome::Kind;

CheckOutcome verified(const UnilabelPredictor& h, std::span<const double> x, Label y, const PerturbationBall& ball,
                      Vec z) {
    if (norm_of(z, ball.p) > ball.delta) return {Kind::Good, {}};
    Vec xz(x.begin(), x.end());
    for (std::size_t j = 0; j < xz.size(); ++j) xz[j] += z[j];
    if (h.predict(xz) == y) return {Kind::Good, {}};
    return {Kind::Found, std::move(z)};
}

CheckOutcome check_stump(const DecisionStump& s, std::span<const double> x, Label y, const PerturbationBall& ball) {
    const std::size_t j = s.feature();
    const double v = x[j], t = s.threshold();
    Vec z(x.size(), 0.0);
    if (v <= t) {
        if (s.right() == y) return {Kind::Good, {}};
        // Smallest step that lands strictly above the threshold.
        double step = std::nextafter(t, kInf) - v;
        while (v + step <= t) step = std::nextafter(step, kInf);
        z[j] = step;
    } else {
        if (s.left() == y) return {Kind::Good, {}};
        double step = t - v;
        while (v + step > t) step = std::nextafter(step, -kInf);
        z[j] = step;
    }
    if (!std::isfinite(z[j])) return {Kind::Good, {}};
    return verified(s, x, y, ball, std::move(z));
}

CheckOutcome check_binary_linear(const UnilabelPredictor& h, const LinearScorer& lin, std::span<const double> x,
                                 Label y, const PerturbationBall& ball) {
    const Label other = 1 - y;
    const std::size_t d = lin.input_dim();
    Vec a(d);
    for (std::size_t j = 0; j < d; ++j) a[j] = lin.weight(other, j) - lin.weight(y, j);
    // Push as far as the ball allows along the direction that raises the rival score fastest.
    Vec z(d, 0.0);
    if (ball.p == Norm::Linf) {
        for (std::size_t j = 0; j < d; ++j) z[j] = a[j] > 0.0 ? ball.delta : a[j] < 0.0 ? -ball.delta : 0.0;
    } else {
        const double n2 = norm_of(a, Norm::L2);
        if (n2 == 0.0) return {Kind::Good, {}};
        for (std::size_t j = 0; j < d; ++j) z[j] = ball.delta * a[j] / n2;
        z = ball_project(z, ball);
    }
    return verified(h, x, y, ball, std::move(z));
}
} // namespace

CheckOutcome check(const UnilabelPredictor& h, std::span<const double> x, Label y, const CheckerSpec& spec) {
    spec.validate();
    const Vec zero(x.size(), 0.0);
    if (h.predict(x) != y) return {Kind::Found, zero};
    if (spec.ball.delta == 0.0) return {Kind::Good, {}};

    if (spec.backend == CheckerBackend::Exact) {
        if (const auto* s = dynamic_cast<const DecisionStump*>(&h)) return check_stump(*s, x, y, spec.ball);
        if (const auto* lr = dynamic_cast<const LinearRadiusPredictor*>(&h); lr && lr->num_classes() == 2)
            return check_binary_linear(h, lr->scorer(), x, y, spec.ball);
        if (const auto* am = dynamic_cast<const ArgmaxClassifier*>(&h); am && am->num_classes() == 2)
            if (auto lin = as_linear(am->scorer())) return check_binary_linear(h, *lin, x, y, spec.ball);
        throw Error(Errc::BackendMismatch, "the exact checker handles stumps and binary linear classifiers");
    }

    const auto* am = dynamic_cast<const ArgmaxClassifier*>(&h);
    const auto* f = am ? dynamic_cast<const DifferentiableScorer*>(&am->scorer()) : nullptr;
    if (!f) throw Error(Errc::BackendMismatch, "the PGD checker needs a differentiable argmax classifier");
    const std::size_t k = static_cast<std::size_t>(f->num_classes());
    Vec xz(x.size()), up(k);
    auto objective = [&](std::span<const double> z) {
        for (std::size_t j = 0; j < xz.size(); ++j) xz[j] = x[j] + z[j];
        const Vec s = f->scores(xz);
        const Label r = argmax_excluding(s, y);
        std::fill(up.begin(), up.end(), 0.0);
        up[static_cast<std::size_t>(r)] = 1.0;
        up[static_cast<std::size_t>(y)] = -1.0;
        return std::pair<double, Vec>{s[static_cast<std::size_t>(r)] - s[static_cast<std::size_t>(y)],
                                      f->input_gradient(xz, up)};
    };
    const PgdResult res = pgd_maximize(objective, x.size(), spec.ball, spec.pgd);
    CheckOutcome out = verified(h, x, y, spec.ball, res.z);
    if (out.kind == Kind::Good) out.kind = Kind::Unknown;
    return out;
}

CheckerLearnResult weak_learn_via_checker(std::span<const std::shared_ptr<const UnilabelPredictor>> candidates,
                                          const CheckerSpec& spec, const Dataset& dataset,
                                          const FiniteDistribution& d, double gamma) {
    if (candidates.empty()) throw Error(Errc::InvalidConfig, "no candidate hypotheses");
    if (d.size() != dataset.size()) throw Error(Errc::SupportMismatch, "one weight per example");
    CheckerLearnResult out;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        double est = 0.0;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            CheckerSpec local = spec;
            local.pgd.stream = mix(mix(spec.pgd.stream, c), i);
            const bool found = check(*candidates[c], dataset[i].x, dataset[i].y, local).kind == Kind::Found;
            est += d[i] * (found ? 1.0 : -1.0);
        }
        out.estimates.push_back(est);
        if (est <= -gamma) {
            out.found = c;
            break;
        }
    }
    return out;
}

} // namespace rboost
