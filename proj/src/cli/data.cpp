#include "rboost/cli/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

namespace rboost::cli {

InputError::InputError(Errc code, std::size_t line, const std::string& what)
    : Error(code, "line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {
std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    for (auto& f : out) {
        const auto b = f.find_first_not_of(" \t");
        const auto e = f.find_last_not_of(" \t");
        f = b == std::string::npos ? std::string{} : f.substr(b, e - b + 1);
    }
    return out;
}

bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
} // namespace

Dataset read_dataset_csv(std::istream& in, std::optional<int> num_classes) {
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw InputError(Errc::ParseError, 1, "missing header");
    ++lineno;
    const auto header = split_fields(line);
    if (header.size() < 2 || header[0] != "label") throw InputError(Errc::ParseError, 1, "header must be label,f1,...,fd");
    const std::size_t cols = header.size();

    struct Row {
        long long label;
        Vec x;
        std::size_t line;
    };
    std::vector<Row> rows;
    long long max_label = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line)) continue;
        const auto fields = split_fields(line);
        if (fields.size() != cols)
            throw InputError(Errc::RaggedRow, lineno,
                             "expected " + std::to_string(cols) + " fields, got " + std::to_string(fields.size()));
        Row row{0, Vec(cols - 1), lineno};
        const auto& lf = fields[0];
        auto [p, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), row.label);
        if (ec != std::errc{} || p != lf.data() + lf.size()) throw InputError(Errc::ParseError, lineno, "bad label '" + lf + "'");
        if (row.label < 1) throw InputError(Errc::LabelOutOfRange, lineno, "labels start at 1");
        for (std::size_t j = 1; j < cols; ++j) {
            const auto& f = fields[j];
            auto [q, ec2] = std::from_chars(f.data(), f.data() + f.size(), row.x[j - 1]);
            if (ec2 != std::errc{} || q != f.data() + f.size() || !std::isfinite(row.x[j - 1]))
                throw InputError(Errc::ParseError, lineno, "bad number '" + f + "'");
        }
        max_label = std::max(max_label, row.label);
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InputError(Errc::ParseError, lineno, "no data rows");
    const long long k = num_classes ? *num_classes : std::max<long long>(max_label, 2);
    std::vector<Example> examples;
    examples.reserve(rows.size());
    for (auto& r : rows) {
        if (r.label > k) throw InputError(Errc::LabelOutOfRange, r.line, "label exceeds k=" + std::to_string(k));
        examples.push_back({std::move(r.x), static_cast<Label>(r.label - 1)});
    }
    return Dataset(std::move(examples), static_cast<int>(k));
}

Dataset load_dataset(const std::string& path, std::optional<int> num_classes) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::InvalidConfig, "cannot open dataset " + path);
    return read_dataset_csv(in, num_classes);
}

void write_dataset_csv(std::ostream& out, const Dataset& dataset) {
    out << "label";
    for (std::size_t j = 1; j <= dataset.dim(); ++j) out << ",f" << j;
    out << '\n';
    for (const auto& e : dataset.examples()) {
        out << (e.y + 1);
        for (double v : e.x) out << ',' << fmt17(v);
        out << '\n';
    }
}

void save_dataset(const std::string& path, const Dataset& dataset) {
    std::ofstream out(path);
    if (!out) throw Error(Errc::InvalidConfig, "cannot write " + path);
    write_dataset_csv(out, dataset);
}

// ============================================================================
// Synthetic data
// ============================================================================
Generator parse_generator(const std::string& name) {
    if (name == "gaussian-blobs") return Generator::GaussianBlobs;
    if (name == "concentric-rings") return Generator::ConcentricRings;
    if (name == "stripes-1d") return Generator::Stripes1d;
    throw Error(Errc::InvalidConfig, "unknown generator '" + name + "'");
}

std::string generator_name(Generator g) {
    switch (g) {
    case Generator::GaussianBlobs: return "gaussian-blobs";
    case Generator::ConcentricRings: return "concentric-rings";
    case Generator::Stripes1d: return "stripes-1d";
    }
    return "?";
}

void SyntheticSpec::validate() const {
    if (k < 2) throw Error(Errc::InvalidConfig, "synthetic data needs k >= 2");
    if (m < static_cast<std::size_t>(k)) throw Error(Errc::InvalidConfig, "synthetic data needs m >= k");
    if (generator != Generator::Stripes1d && d < 2) throw Error(Errc::InvalidConfig, "blobs and rings need d >= 2");
    if (!(separation > 0.0)) throw Error(Errc::InvalidConfig, "separation must be > 0");
    if (!(margin >= 0.0)) throw Error(Errc::InvalidConfig, "margin must be >= 0");
    if (!(noise >= 0.0 && noise < 0.5)) throw Error(Errc::InvalidConfig, "ring noise must lie in [0, 0.5)");
    if (!(sigma > 0.0)) throw Error(Errc::InvalidConfig, "sigma must be > 0");
}

namespace {
std::size_t class_count(const SyntheticSpec& s, int c) {
    const std::size_t k = static_cast<std::size_t>(s.k);
    return s.m / k + (static_cast<std::size_t>(c) < s.m % k ? 1 : 0);
}

SyntheticData stripes(const SyntheticSpec& s) {
    std::vector<Example> ex;
    for (int c = 0; c < s.k; ++c) {
        const double center = (c - (s.k - 1) / 2.0) * 2.0 * s.margin;
        const std::size_t n = class_count(s, c);
        for (std::size_t i = 0; i < n; ++i) {
            const double off = n == 1 ? 0.0 : -s.margin / 3.0 + (2.0 * s.margin / 3.0) * static_cast<double>(i) / static_cast<double>(n - 1);
            ex.push_back({Vec{center + off}, c});
        }
    }
    return {Dataset(std::move(ex), s.k), 2.0 * s.margin / 3.0, Norm::Linf};
}

SyntheticData blobs(const SyntheticSpec& s) {
    const std::size_t k = static_cast<std::size_t>(s.k);
    const double radius = s.separation * s.sigma / (2.0 * std::sin(std::numbers::pi / static_cast<double>(k)));
    std::vector<Vec> centers(k, Vec(s.d, 0.0));
    for (std::size_t c = 0; c < k; ++c) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(k);
        centers[c][0] = radius * std::cos(a);
        centers[c][1] = radius * std::sin(a);
    }
    // Linf distance from x to the complement of the Voronoi cell of `own`.
    auto cell_depth = [&](const Vec& x, std::size_t own) {
        double depth = std::numeric_limits<double>::infinity();
        for (std::size_t o = 0; o < k; ++o) {
            if (o == own) continue;
            double nx = 0.0, n1 = 0.0, t = 0.0;
            for (std::size_t j = 0; j < s.d; ++j) {
                const double n = centers[o][j] - centers[own][j];
                nx += n * x[j];
                n1 += std::abs(n);
                t += 0.5 * (centers[o][j] * centers[o][j] - centers[own][j] * centers[own][j]);
            }
            depth = std::min(depth, (t - nx) / n1);
        }
        return depth;
    };
    std::vector<Example> ex;
    for (std::size_t c = 0; c < k; ++c) {
        SeededRng rng(s.seed, 0xB10B0000ull + c);
        const std::size_t n = class_count(s, static_cast<int>(c));
        const std::size_t target = ex.size() + n;
        std::size_t tries = 0;
        while (ex.size() < target) {
            if (++tries > 10000 * n) throw Error(Errc::InvalidConfig, "blob margin too large for the separation");
            Vec x(s.d);
            for (std::size_t j = 0; j < s.d; ++j) x[j] = centers[c][j] + s.sigma * rng.normal();
            if (cell_depth(x, c) >= s.margin) ex.push_back({std::move(x), static_cast<Label>(c)});
        }
    }
    return {Dataset(std::move(ex), s.k), s.margin, Norm::Linf};
}

SyntheticData rings(const SyntheticSpec& s) {
    std::vector<Example> ex;
    for (int c = 0; c < s.k; ++c) {
        SeededRng rng(s.seed, 0x217650000ull + static_cast<std::uint64_t>(c));
        const std::size_t n = class_count(s, c);
        for (std::size_t i = 0; i < n; ++i) {
            Vec dir(s.d);
            double len = 0.0;
            while (len == 0.0) {
                for (double& v : dir) v = rng.normal();
                len = norm_of(dir, Norm::L2);
            }
            const double r = (c + 1) * s.separation + rng.uniform(-s.noise, s.noise) * s.separation;
            for (double& v : dir) v *= r / len;
            ex.push_back({std::move(dir), c});
        }
    }
    return {Dataset(std::move(ex), s.k), s.separation * (0.5 - s.noise), Norm::L2};
}
} // namespace

SyntheticData generate(const SyntheticSpec& spec) {
    spec.validate();
    switch (spec.generator) {
    case Generator::Stripes1d: return stripes(spec);
    case Generator::GaussianBlobs: return blobs(spec);
    case Generator::ConcentricRings: return rings(spec);
    }
    throw Error(Errc::InvalidConfig, "unknown generator");
}

} // namespace rboost::cli
