#pragma once
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rboost {

// ============================================================================
// Errors
// ============================================================================
enum class Errc {
    InvalidDataset,
    InvalidConfig,
    AllZeroWeights,
    NegativeWeight,
    SameLabel,
    SupportMismatch,
    UnsupportedNorm,
    DimensionTooLarge,
    InvalidGamma,
    WeakLearnerFailed,
    NonCertifiedEvaluator,
    NonFiniteLoss,
    AlphaOutOfRange,
    NonFiniteParameters,
    OutOfDomain,
    EmptyMixture,
    BackendMismatch,
    ParseError,
    LabelOutOfRange,
    RaggedRow,
    VersionMismatch,
    CorruptArchive,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

// ============================================================================
// Examples and datasets
// ============================================================================
using Vec = std::vector<double>;

// Labels are 0-based in memory; CSV and archives use 1..k.
using Label = int;

struct Example {
    Vec x;
    Label y = 0;
};

class Dataset {
public:
    Dataset() = default;
    /// Validates dimensions, labels and finiteness; throws Errc::InvalidDataset.
    Dataset(std::vector<Example> examples, int num_classes);

    std::size_t size() const noexcept { return examples_.size(); }
    int num_classes() const noexcept { return k_; }
    std::size_t dim() const noexcept { return d_; }
    const Example& operator[](std::size_t i) const { return examples_[i]; }
    const std::vector<Example>& examples() const noexcept { return examples_; }

private:
    std::vector<Example> examples_;
    int k_ = 0;
    std::size_t d_ = 0;
};

struct IncorrectPair {
    std::size_t example = 0;
    Label wrong = 0;
    bool operator==(const IncorrectPair&) const = default;
};

using IncorrectPairSet = std::vector<IncorrectPair>;

/// All (i, y') with y' != y_i in ascending (i, y') order.
IncorrectPairSet build_incorrect_pairs(const Dataset& dataset);

// ============================================================================
// Finite distributions
// ============================================================================
class FiniteDistribution {
public:
    FiniteDistribution() = default;

    /// Divides by the sum. Throws NegativeWeight / AllZeroWeights.
    static FiniteDistribution normalize(std::span<const double> raw);
    static FiniteDistribution uniform(std::size_t n);

    std::size_t size() const noexcept { return weights_.size(); }
    double operator[](std::size_t i) const { return weights_[i]; }
    std::span<const double> weights() const noexcept { return weights_; }

private:
    std::vector<double> weights_;
};

// ============================================================================
// Perturbation balls
// ============================================================================
enum class Norm { L2, Linf };

struct PerturbationBall {
    Norm p = Norm::Linf;
    double delta = 0.0;

    /// Throws InvalidConfig for negative or non-finite radius.
    static PerturbationBall make(Norm p, double delta);
};

double norm_of(std::span<const double> z, Norm p);
/// Dual exponent: l1 for Linf, l2 for L2.
double dual_norm_of(std::span<const double> z, Norm p);

/// Euclidean or box projection onto B_p(delta).
Vec ball_project(std::span<const double> z, const PerturbationBall& ball);

Norm parse_norm(const std::string& text);
std::string norm_name(Norm p);

// ============================================================================
// Deterministic RNG
// ============================================================================

/// Counter-based generator: the n-th draw depends only on (seed, stream, n),
/// so per-example streams are reproducible regardless of visiting order.
class SeededRng {
public:
    SeededRng(std::uint64_t seed, std::uint64_t stream) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller; platform independent.
    double normal() noexcept;
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) noexcept;

    /// Independent child stream keyed by (seed, stream, child).
    SeededRng split(std::uint64_t child) const noexcept;

    template <class T>
    void shuffle(std::vector<T>& items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace rboost
