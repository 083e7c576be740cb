#include "rboost/hypotheses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rboost/losses.hpp"

namespace rboost {

// ============================================================================
// LabelSet
// ============================================================================
LabelSet LabelSet::single(int k, Label y) {
    LabelSet s(k);
    s.insert(y);
    return s;
}

void LabelSet::insert(Label y) {
    auto ref = bits_.at(static_cast<std::size_t>(y));
    if (!ref) {
        ref = true;
        ++count_;
    }
}

bool LabelSet::contains(Label y) const {
    return y >= 0 && y < universe() && bits_[static_cast<std::size_t>(y)];
}

std::vector<Label> LabelSet::labels() const {
    std::vector<Label> out;
    for (Label y = 0; y < universe(); ++y)
        if (bits_[static_cast<std::size_t>(y)]) out.push_back(y);
    return out;
}

// ============================================================================
// argmax
// ============================================================================
Label argmax_label(std::span<const double> scores) {
    Label best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<Label>(i);
    return best;
}

ArgmaxClassifier::ArgmaxClassifier(std::shared_ptr<const ScorePredictor> scorer) : scorer_(std::move(scorer)) {
    if (!scorer_) throw Error(Errc::InvalidConfig, "null scorer");
}

Label ArgmaxClassifier::predict(std::span<const double> x) const { return argmax_label(scorer_->scores(x)); }

// ============================================================================
// DecisionStump
// ============================================================================
DecisionStump::DecisionStump(std::size_t feature, double threshold, Label left, Label right, int num_classes)
    : feature_(feature), threshold_(threshold), left_(left), right_(right), k_(num_classes) {
    if (left < 0 || left >= k_ || right < 0 || right >= k_)
        throw Error(Errc::InvalidConfig, "stump label out of range");
    if (std::isnan(threshold)) throw Error(Errc::InvalidConfig, "stump threshold is NaN");
}

Label DecisionStump::predict(std::span<const double> x) const {
    return x[feature_] <= threshold_ ? left_ : right_;
}

ReachSet DecisionStump::reach_set(std::span<const double> x, const PerturbationBall& ball) const {
    const double v = x[feature_];
    LabelSet s(k_);
    if (v - ball.delta <= threshold_) s.insert(left_);
    if (v + ball.delta > threshold_) s.insert(right_);
    return {s, true};
}

// ============================================================================
// LinearScorer
// ============================================================================
LinearScorer::LinearScorer(int num_classes, std::size_t dim, Vec weights, Vec bias)
    : k_(num_classes), d_(dim), w_(std::move(weights)), b_(std::move(bias)) {
    if (k_ < 2 || d_ == 0) throw Error(Errc::InvalidConfig, "linear scorer needs k >= 2 and d >= 1");
    if (w_.size() != static_cast<std::size_t>(k_) * d_ || b_.size() != static_cast<std::size_t>(k_))
        throw Error(Errc::InvalidConfig, "linear scorer parameter size mismatch");
}

Vec LinearScorer::scores(std::span<const double> x) const {
    Vec s(b_);
    for (int c = 0; c < k_; ++c) {
        const double* w = w_.data() + static_cast<std::size_t>(c) * d_;
        double& acc = s[static_cast<std::size_t>(c)];
        for (std::size_t j = 0; j < d_; ++j) acc += w[j] * x[j];
    }
    return s;
}

Vec LinearScorer::input_gradient(std::span<const double>, std::span<const double> upstream) const {
    Vec g(d_, 0.0);
    for (int c = 0; c < k_; ++c) {
        const double u = upstream[static_cast<std::size_t>(c)];
        const double* w = w_.data() + static_cast<std::size_t>(c) * d_;
        for (std::size_t j = 0; j < d_; ++j) g[j] += u * w[j];
    }
    return g;
}

namespace {

// Solves a small dense system in place; false when (numerically) singular.
bool solve_dense(std::vector<double>& a, std::vector<double>& rhs, std::size_t n) {
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
        if (std::abs(a[piv * n + col]) < 1e-12) return false;
        if (piv != col) {
            for (std::size_t c = 0; c < n; ++c) std::swap(a[piv * n + c], a[col * n + c]);
            std::swap(rhs[piv], rhs[col]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / a[col * n + col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
            rhs[r] -= f * rhs[col];
        }
    }
    for (std::size_t i = n; i-- > 0;) {
        double acc = rhs[i];
        for (std::size_t c = i + 1; c < n; ++c) acc -= a[i * n + c] * rhs[c];
        rhs[i] = acc / a[i * n + i];
    }
    return true;
}

// Calls fn(subset) for every size-r subset of {0..n-1} in lexicographic order.
template <class Fn>
void for_each_subset(std::size_t n, std::size_t r, Fn&& fn) {
    std::vector<std::size_t> idx(r);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (r > n) return;
    while (true) {
        fn(idx);
        std::size_t i = r;
        while (i > 0 && idx[i - 1] == n - r + i - 1) --i;
        if (i == 0) return;
        ++idx[i - 1];
        for (std::size_t j = i; j < r; ++j) idx[j] = idx[j - 1] + 1;
    }
}

} // namespace

double LinearScorer::best_worst_margin_linf(std::span<const double> x, Label target, double delta) const {
    // max_z min_j [m_j + a_j.z] = min_{lambda in simplex} [sum lambda_j m_j + delta ||sum lambda_j a_j||_1].
    // The dual objective is convex piecewise linear, so its minimum sits on a
    // vertex of the arrangement {lambda_j = 0} u {(sum lambda_j a_j)_i = 0}.
    const Vec s = scores(x);
    std::vector<Label> rivals;
    for (Label j = 0; j < k_; ++j)
        if (j != target) rivals.push_back(j);
    const std::size_t r = rivals.size();
    std::vector<double> m(r), a(r * d_);
    for (std::size_t q = 0; q < r; ++q) {
        m[q] = s[static_cast<std::size_t>(target)] - s[static_cast<std::size_t>(rivals[q])];
        for (std::size_t i = 0; i < d_; ++i) a[q * d_ + i] = weight(target, i) - weight(rivals[q], i);
    }
    auto dual_value = [&](std::span<const double> lambda) {
        double lin = 0.0;
        for (std::size_t q = 0; q < r; ++q) lin += lambda[q] * m[q];
        double l1 = 0.0;
        for (std::size_t i = 0; i < d_; ++i) {
            double acc = 0.0;
            for (std::size_t q = 0; q < r; ++q) acc += lambda[q] * a[q * d_ + i];
            l1 += std::abs(acc);
        }
        return lin + delta * l1;
    };

    double best = std::numeric_limits<double>::infinity();
    const std::size_t hyperplanes = r + d_;
    std::vector<double> sys(r * r), rhs(r), lambda(r);
    for_each_subset(hyperplanes, r - 1, [&](const std::vector<std::size_t>& chosen) {
        std::fill(sys.begin(), sys.end(), 0.0);
        std::fill(rhs.begin(), rhs.end(), 0.0);
        for (std::size_t row = 0; row + 1 < r; ++row) {
            const std::size_t h = chosen[row];
            if (h < r) {
                sys[row * r + h] = 1.0;
            } else {
                for (std::size_t q = 0; q < r; ++q) sys[row * r + q] = a[q * d_ + (h - r)];
            }
        }
        for (std::size_t q = 0; q < r; ++q) sys[(r - 1) * r + q] = 1.0;
        rhs[r - 1] = 1.0;
        if (!solve_dense(sys, rhs, r)) return;
        double total = 0.0;
        for (std::size_t q = 0; q < r; ++q) {
            if (rhs[q] < -1e-9) return;
            lambda[q] = std::max(rhs[q], 0.0);
            total += lambda[q];
        }
        if (!(total > 0.0)) return;
        for (double& l : lambda) l /= total;
        best = std::min(best, dual_value(lambda));
    });
    return best;
}

ReachSet LinearScorer::reach_set(std::span<const double> x, const PerturbationBall& ball, ReachMode mode,
                                 const PgdConfig& fallback) const {
    const Vec s = scores(x);
    double scale = 1.0;
    for (double v : s) scale = std::max(scale, std::abs(v));
    const double tol = 1e-12 * scale;

    LabelSet out(k_);
    out.insert(argmax_label(s));

    if (k_ == 2) {
        for (Label t = 0; t < 2; ++t) {
            const Label o = 1 - t;
            Vec diff(d_);
            for (std::size_t i = 0; i < d_; ++i) diff[i] = weight(t, i) - weight(o, i);
            const double margin = s[static_cast<std::size_t>(t)] - s[static_cast<std::size_t>(o)];
            if (margin + ball.delta * dual_norm_of(diff, ball.p) >= -tol) out.insert(t);
        }
        return {out, true};
    }

    const bool exact = ball.p == Norm::Linf && d_ <= kMaxExactDim;
    if (exact || ball.delta == 0.0) {
        for (Label t = 0; t < k_; ++t)
            if (!out.contains(t) && best_worst_margin_linf(x, t, ball.delta) >= -tol) out.insert(t);
        return {out, true};
    }
    if (mode == ReachMode::RequireExact) {
        if (ball.p == Norm::L2)
            throw Error(Errc::UnsupportedNorm, "exact multiclass linear reach sets need the Linf ball");
        throw Error(Errc::DimensionTooLarge, "exact multiclass linear reach sets need d <= 12");
    }

    // Heuristic: maximize min_j (s_t - s_j)(x + z) by PGD for every target.
    Vec xz(d_);
    for (Label t = 0; t < k_; ++t) {
        if (out.contains(t)) continue;
        PgdConfig cfg = fallback;
        cfg.stream = fallback.stream * 131 + static_cast<std::uint64_t>(t);
        auto objective = [&](std::span<const double> z) {
            for (std::size_t i = 0; i < d_; ++i) xz[i] = x[i] + z[i];
            const Vec sz = scores(xz);
            double worst = std::numeric_limits<double>::infinity();
            Label arg = t;
            for (Label j = 0; j < k_; ++j) {
                if (j == t) continue;
                const double g = sz[static_cast<std::size_t>(t)] - sz[static_cast<std::size_t>(j)];
                if (g < worst) {
                    worst = g;
                    arg = j;
                }
            }
            Vec grad(d_);
            for (std::size_t i = 0; i < d_; ++i) grad[i] = weight(t, i) - weight(arg, i);
            return std::pair<double, Vec>{worst, grad};
        };
        if (pgd_maximize(objective, d_, ball, cfg).loss >= -tol) out.insert(t);
    }
    return {out, false};
}

// ============================================================================
// Mlp
// ============================================================================
std::size_t Mlp::param_count_for(const std::vector<std::size_t>& sizes) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += (sizes[l] + 1) * sizes[l + 1];
    return n;
}

Mlp::Mlp(std::vector<std::size_t> layer_sizes, Vec params) : sizes_(std::move(layer_sizes)), params_(std::move(params)) {
    if (sizes_.size() < 2) throw Error(Errc::InvalidConfig, "mlp needs input and output layers");
    for (std::size_t n : sizes_)
        if (n == 0) throw Error(Errc::InvalidConfig, "mlp layer sizes must be positive");
    if (sizes_.back() < 2) throw Error(Errc::InvalidConfig, "mlp output must have k >= 2");
    if (params_.size() != param_count_for(sizes_)) throw Error(Errc::InvalidConfig, "mlp parameter count mismatch");
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_.push_back(off);
        off += (sizes_[l] + 1) * sizes_[l + 1];
    }
}

Mlp Mlp::glorot(std::vector<std::size_t> layer_sizes, SeededRng& rng) {
    Vec params(param_count_for(layer_sizes), 0.0);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const std::size_t in = layer_sizes[l], out = layer_sizes[l + 1];
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        for (std::size_t i = 0; i < in * out; ++i) params[off + i] = rng.uniform(-limit, limit);
        off += (in + 1) * out;
    }
    return Mlp(std::move(layer_sizes), std::move(params));
}

bool Mlp::all_finite() const {
    return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
}

Vec Mlp::scores(std::span<const double> x) const {
    Vec h(x.begin(), x.end());
    const std::size_t layers = num_layers();
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = sizes_[l], out = sizes_[l + 1];
        const double* w = params_.data() + offsets_[l];
        const double* b = w + in * out;
        Vec next(out);
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * h[i];
            next[o] = (l + 1 < layers) ? std::max(acc, 0.0) : acc;
        }
        h = std::move(next);
    }
    return h;
}

Mlp::Gradients Mlp::backward(std::span<const double> x, std::span<const double> upstream) const {
    const std::size_t layers = num_layers();
    // acts[l] is the input to layer l; pre[l] its pre-activation output.
    std::vector<Vec> acts(layers + 1), pre(layers);
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = sizes_[l], out = sizes_[l + 1];
        const double* w = params_.data() + offsets_[l];
        const double* b = w + in * out;
        pre[l].resize(out);
        acts[l + 1].resize(out);
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < in; ++i) acc += w[o * in + i] * acts[l][i];
            pre[l][o] = acc;
            acts[l + 1][o] = (l + 1 < layers) ? std::max(acc, 0.0) : acc;
        }
    }

    Gradients g;
    g.params.assign(params_.size(), 0.0);
    Vec delta(upstream.begin(), upstream.end());
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t in = sizes_[l], out = sizes_[l + 1];
        const double* w = params_.data() + offsets_[l];
        double* gw = g.params.data() + offsets_[l];
        double* gb = gw + in * out;
        Vec prev(in, 0.0);
        for (std::size_t o = 0; o < out; ++o) {
            const double dv = delta[o];
            if (dv == 0.0) continue;
            gb[o] += dv;
            for (std::size_t i = 0; i < in; ++i) {
                gw[o * in + i] += dv * acts[l][i];
                prev[i] += dv * w[o * in + i];
            }
        }
        if (l > 0)
            for (std::size_t i = 0; i < in; ++i)
                if (!(pre[l - 1][i] > 0.0)) prev[i] = 0.0;
        delta = std::move(prev);
    }
    g.input = std::move(delta);
    return g;
}

Vec Mlp::input_gradient(std::span<const double> x, std::span<const double> upstream) const {
    return backward(x, upstream).input;
}

Mlp::Gradients mlp_backward(const Mlp& mlp, std::span<const double> x, Label y) {
    const Vec s = mlp.scores(x);
    return mlp.backward(x, ce_gradient(s, y));
}

// ============================================================================
// MixtureQ
// ============================================================================
MixtureQ::MixtureQ(std::span<const double> raw_weights, std::vector<std::shared_ptr<const UnilabelPredictor>> hs) {
    if (hs.empty()) throw Error(Errc::EmptyMixture, "mixture needs at least one hypothesis");
    if (raw_weights.size() != hs.size()) throw Error(Errc::SupportMismatch, "one weight per hypothesis");
    const FiniteDistribution q = FiniteDistribution::normalize(raw_weights);
    raw_.assign(raw_weights.begin(), raw_weights.end());
    k_ = hs.front()->num_classes();
    for (std::size_t i = 0; i < hs.size(); ++i) {
        if (!hs[i] || hs[i]->num_classes() != k_) throw Error(Errc::InvalidConfig, "mixture components must share k");
        components_.push_back({q[i], std::move(hs[i])});
    }
}

Vec MixtureQ::vote_mass(std::span<const double> x) const {
    Vec mass(static_cast<std::size_t>(k_), 0.0);
    for (const auto& c : components_) mass[static_cast<std::size_t>(c.h->predict(x))] += c.weight;
    return mass;
}

Label MixtureQ::plurality_vote(std::span<const double> x) const { return argmax_label(vote_mass(x)); }

// ============================================================================
// AdditiveEnsemble
// ============================================================================
void AdditiveEnsemble::append(double beta, std::shared_ptr<const DifferentiableScorer> f) {
    if (!f || f->num_classes() != k_ || f->input_dim() != d_)
        throw Error(Errc::InvalidConfig, "ensemble stage shape mismatch");
    stages_.push_back({beta, std::move(f)});
}

Vec AdditiveEnsemble::scores(std::span<const double> x) const {
    Vec s(static_cast<std::size_t>(k_), 0.0);
    for (const auto& st : stages_) {
        const Vec f = st.f->scores(x);
        for (std::size_t c = 0; c < s.size(); ++c) s[c] += st.beta * f[c];
    }
    return s;
}

Vec AdditiveEnsemble::input_gradient(std::span<const double> x, std::span<const double> upstream) const {
    Vec g(d_, 0.0);
    Vec scaled(upstream.size());
    for (const auto& st : stages_) {
        for (std::size_t c = 0; c < upstream.size(); ++c) scaled[c] = st.beta * upstream[c];
        const Vec gi = st.f->input_gradient(x, scaled);
        for (std::size_t j = 0; j < d_; ++j) g[j] += gi[j];
    }
    return g;
}

// ============================================================================
// Stump weak learner
// ============================================================================
std::vector<double> stump_threshold_candidates(const Dataset& dataset, std::size_t feature, double delta) {
    std::vector<double> values;
    values.reserve(dataset.size());
    for (const auto& e : dataset.examples()) values.push_back(e.x[feature]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());

    std::vector<double> out;
    out.reserve(values.size() * 3 + 2);
    out.push_back(-std::numeric_limits<double>::infinity());
    out.push_back(std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i + 1 < values.size(); ++i) out.push_back(0.5 * (values[i] + values[i + 1]));
    for (double v : values) {
        out.push_back(v - delta);
        out.push_back(v + delta);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

namespace {

enum class Side : unsigned char { Left, Right, Both };

// Shared exhaustive scan; `score(sides, a, b)` returns the weighted robust
// error of the stump (a on the left, b on the right) given per-example sides.
template <class Score>
StumpFit scan_stumps(const Dataset& dataset, const PerturbationBall& ball, Score&& score) {
    std::vector<Label> present;
    for (const auto& e : dataset.examples()) present.push_back(e.y);
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());

    const int k = dataset.num_classes();
    std::optional<StumpFit> best;
    std::vector<Side> sides(dataset.size());
    for (std::size_t j = 0; j < dataset.dim(); ++j) {
        for (double theta : stump_threshold_candidates(dataset, j, ball.delta)) {
            for (std::size_t i = 0; i < dataset.size(); ++i) {
                const double v = dataset[i].x[j];
                const bool left = v - ball.delta <= theta;
                const bool right = v + ball.delta > theta;
                sides[i] = left && right ? Side::Both : (left ? Side::Left : Side::Right);
            }
            for (Label a : present) {
                for (Label b : present) {
                    const double err = score(sides, a, b);
                    if (!best || err < best->error - 1e-12) best = StumpFit{DecisionStump(j, theta, a, b, k), err};
                }
            }
        }
    }
    return *best;
}

} // namespace

StumpFit train_stump_weak_learner(const Dataset& dataset, const IncorrectPairSet& pairs,
                                  const FiniteDistribution& pair_weights, const PerturbationBall& ball) {
    if (pair_weights.size() != pairs.size())
        throw Error(Errc::SupportMismatch, "distribution size differs from the pair set");
    const std::size_t k = static_cast<std::size_t>(dataset.num_classes());
    // table[i*k + y'] = D(i, y'); total[i] = sum over y' of D(i, y').
    std::vector<double> table(dataset.size() * k, 0.0), total(dataset.size(), 0.0);
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto& pr = pairs[p];
        if (pr.example >= dataset.size() || pr.wrong == dataset[pr.example].y)
            throw Error(Errc::SupportMismatch, "pair not in the incorrect-pair set");
        table[pr.example * k + static_cast<std::size_t>(pr.wrong)] += pair_weights[p];
        total[pr.example] += pair_weights[p];
    }
    auto score = [&](const std::vector<Side>& sides, Label a, Label b) {
        double err = 0.0;
        for (std::size_t i = 0; i < sides.size(); ++i) {
            if (total[i] == 0.0) continue;
            const Label y = dataset[i].y;
            const double* row = table.data() + i * k;
            switch (sides[i]) {
            case Side::Left: err += a == y ? -total[i] : row[a]; break;
            case Side::Right: err += b == y ? -total[i] : row[b]; break;
            case Side::Both:
                if (a == b) err += a == y ? -total[i] : row[a];
                else err += row[a] + row[b];
                break;
            }
        }
        return err;
    };
    return scan_stumps(dataset, ball, score);
}

StumpFit train_stump_ova_weak_learner(const Dataset& dataset, const FiniteDistribution& example_weights,
                                      const PerturbationBall& ball) {
    if (example_weights.size() != dataset.size())
        throw Error(Errc::SupportMismatch, "distribution size differs from the dataset");
    auto score = [&](const std::vector<Side>& sides, Label a, Label b) {
        double err = 0.0;
        for (std::size_t i = 0; i < sides.size(); ++i) {
            const Label y = dataset[i].y;
            bool forced = false;
            switch (sides[i]) {
            case Side::Left: forced = a == y; break;
            case Side::Right: forced = b == y; break;
            case Side::Both: forced = a == y && b == y; break;
            }
            err += example_weights[i] * (forced ? -1.0 : 1.0);
        }
        return err;
    };
    return scan_stumps(dataset, ball, score);
}

} // namespace rboost
