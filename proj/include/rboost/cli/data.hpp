#pragma once
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "rboost/core.hpp"

namespace rboost::cli {

/// Error tied to a line of an input file (1-based; the header is line 1).
class InputError : public Error {
public:
    InputError(Errc code, std::size_t line, const std::string& what);
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// CSV with header `label,f1,...,fd`; labels 1..k on disk, 0-based in memory.
/// k is the largest label unless `num_classes` is given.
Dataset read_dataset_csv(std::istream& in, std::optional<int> num_classes = std::nullopt);
Dataset load_dataset(const std::string& path, std::optional<int> num_classes = std::nullopt);
void write_dataset_csv(std::ostream& out, const Dataset& dataset);
void save_dataset(const std::string& path, const Dataset& dataset);

enum class Generator { GaussianBlobs, ConcentricRings, Stripes1d };
Generator parse_generator(const std::string& name);
std::string generator_name(Generator g);

struct SyntheticSpec {
    Generator generator = Generator::Stripes1d;
    int k = 2;
    std::size_t d = 2;
    std::size_t m = 40;
    /// Blobs: distance between adjacent centers in units of sigma.
    /// Rings: gap between consecutive radii.
    double separation = 4.0;
    /// Stripes: half distance between adjacent stripe centers.
    /// Blobs: minimum Linf distance of every point to a foreign Voronoi cell.
    double margin = 0.5;
    /// Rings: radial jitter as a fraction of the separation (< 0.5).
    double noise = 0.2;
    /// Blobs: per-coordinate standard deviation.
    double sigma = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticData {
    Dataset dataset;
    /// Every point's ball of this radius (in `margin_norm`) stays inside its
    /// own class region of a fixed reference classifier.
    double robust_margin = 0.0;
    Norm margin_norm = Norm::Linf;
};

/// Classes are generated in order, m split as evenly as possible
/// (earlier classes get the remainder).
SyntheticData generate(const SyntheticSpec& spec);

} // namespace rboost::cli
