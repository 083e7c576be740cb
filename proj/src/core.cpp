#include "rboost/core.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rboost {

const char* errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::InvalidDataset: return "InvalidDataset";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::AllZeroWeights: return "AllZeroWeights";
    case Errc::NegativeWeight: return "NegativeWeight";
    case Errc::SameLabel: return "SameLabel";
    case Errc::SupportMismatch: return "SupportMismatch";
    case Errc::UnsupportedNorm: return "UnsupportedNorm";
    case Errc::DimensionTooLarge: return "DimensionTooLarge";
    case Errc::InvalidGamma: return "InvalidGamma";
    case Errc::WeakLearnerFailed: return "WeakLearnerFailed";
    case Errc::NonCertifiedEvaluator: return "NonCertifiedEvaluator";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::AlphaOutOfRange: return "AlphaOutOfRange";
    case Errc::NonFiniteParameters: return "NonFiniteParameters";
    case Errc::OutOfDomain: return "OutOfDomain";
    case Errc::EmptyMixture: return "EmptyMixture";
    case Errc::BackendMismatch: return "BackendMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::RaggedRow: return "RaggedRow";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::CorruptArchive: return "CorruptArchive";
    }
    return "Unknown";
}

// ============================================================================
// Dataset
// ============================================================================
Dataset::Dataset(std::vector<Example> examples, int num_classes)
    : examples_(std::move(examples)), k_(num_classes) {
    if (examples_.empty()) throw Error(Errc::InvalidDataset, "dataset must contain at least one example");
    if (k_ < 2) throw Error(Errc::InvalidDataset, "need at least two classes");
    d_ = examples_.front().x.size();
    if (d_ == 0) throw Error(Errc::InvalidDataset, "feature dimension must be >= 1");
    for (std::size_t i = 0; i < examples_.size(); ++i) {
        const auto& e = examples_[i];
        if (e.x.size() != d_)
            throw Error(Errc::InvalidDataset, "example " + std::to_string(i) + " has wrong dimension");
        if (e.y < 0 || e.y >= k_)
            throw Error(Errc::InvalidDataset, "example " + std::to_string(i) + " label out of range");
        for (double v : e.x)
            if (!std::isfinite(v))
                throw Error(Errc::InvalidDataset, "example " + std::to_string(i) + " has non-finite feature");
    }
}

IncorrectPairSet build_incorrect_pairs(const Dataset& dataset) {
    IncorrectPairSet pairs;
    pairs.reserve(dataset.size() * static_cast<std::size_t>(dataset.num_classes() - 1));
    for (std::size_t i = 0; i < dataset.size(); ++i)
        for (Label y = 0; y < dataset.num_classes(); ++y)
            if (y != dataset[i].y) pairs.push_back({i, y});
    return pairs;
}

// ============================================================================
// FiniteDistribution
// ============================================================================
FiniteDistribution FiniteDistribution::normalize(std::span<const double> raw) {
    double sum = 0.0;
    for (double w : raw) {
        if (!(w >= 0.0)) throw Error(Errc::NegativeWeight, "weights must be nonnegative");
        sum += w;
    }
    if (!(sum > 0.0)) throw Error(Errc::AllZeroWeights, "weights sum to zero");
    FiniteDistribution d;
    d.weights_.reserve(raw.size());
    for (double w : raw) d.weights_.push_back(w / sum);
    return d;
}

FiniteDistribution FiniteDistribution::uniform(std::size_t n) {
    if (n == 0) throw Error(Errc::AllZeroWeights, "empty support");
    FiniteDistribution d;
    d.weights_.assign(n, 1.0 / static_cast<double>(n));
    return d;
}

// ============================================================================
// Balls
// ============================================================================
PerturbationBall PerturbationBall::make(Norm p, double delta) {
    if (!(delta >= 0.0) || !std::isfinite(delta))
        throw Error(Errc::InvalidConfig, "perturbation radius must be finite and >= 0");
    return {p, delta};
}

double norm_of(std::span<const double> z, Norm p) {
    double acc = 0.0;
    if (p == Norm::Linf) {
        for (double v : z) acc = std::max(acc, std::abs(v));
        return acc;
    }
    for (double v : z) acc += v * v;
    return std::sqrt(acc);
}

double dual_norm_of(std::span<const double> z, Norm p) {
    if (p == Norm::L2) return norm_of(z, Norm::L2);
    double acc = 0.0;
    for (double v : z) acc += std::abs(v);
    return acc;
}

Vec ball_project(std::span<const double> z, const PerturbationBall& ball) {
    Vec out(z.begin(), z.end());
    const double delta = ball.delta;
    if (ball.p == Norm::Linf) {
        for (double& v : out) v = std::clamp(v, -delta, delta);
        return out;
    }
    const double n = norm_of(z, Norm::L2);
    if (n <= delta) return out;
    const double scale = delta / n;
    for (double& v : out) v *= scale;
    // Rounding can leave the scaled vector a hair outside; shrink until inside
    // so that a second projection is the identity.
    while (norm_of(out, Norm::L2) > delta) {
        for (double& v : out) v = std::nextafter(v, 0.0);
    }
    return out;
}

Norm parse_norm(const std::string& text) {
    if (text == "inf" || text == "linf" || text == "Linf" || text == "infinity") return Norm::Linf;
    if (text == "2" || text == "l2" || text == "L2") return Norm::L2;
    throw Error(Errc::InvalidConfig, "unknown norm '" + text + "' (expected 2 or inf)");
}

std::string norm_name(Norm p) { return p == Norm::Linf ? "inf" : "2"; }

// ============================================================================
// SeededRng
// ============================================================================
namespace {
constexpr std::uint64_t splitmix(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}
} // namespace

SeededRng::SeededRng(std::uint64_t seed, std::uint64_t stream) noexcept
    : seed_(seed), stream_(stream), key_(splitmix(splitmix(seed) ^ splitmix(stream ^ 0xD1B54A32D192ED03ull))) {}

std::uint64_t SeededRng::next_u64() noexcept {
    return splitmix(key_ ^ splitmix(counter_++));
}

double SeededRng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::size_t SeededRng::below(std::size_t n) noexcept {
    if (n <= 1) return 0;
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return static_cast<std::size_t>(v % n);
}

SeededRng SeededRng::split(std::uint64_t child) const noexcept {
    return SeededRng(seed_, splitmix(stream_ * 0x9E3779B97F4A7C15ull + splitmix(child + 1)));
}

} // namespace rboost
