#pragma once
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "rboost/certify.hpp"
#include "rboost/hypotheses.hpp"

namespace rboost::cli {

using KeyValues = std::map<std::string, std::string>;

enum class ModelKind { Mixture, AdditiveEnsemble, RadiusPredictor };
std::string model_kind_name(ModelKind k);

inline constexpr int kFormatVersion = 1;

/// Versioned model document. Exactly one of the model members is set,
/// matching `kind`. All reals are stored as "%.17g" text.
struct ModelArchive {
    ModelKind kind = ModelKind::Mixture;
    std::uint64_t seed = 0;
    /// Echo of the configuration that produced the model.
    KeyValues config;

    std::shared_ptr<const MixtureQ> mixture;
    std::shared_ptr<const AdditiveEnsemble> ensemble;
    std::shared_ptr<const RadiusPredictor> radius;

    /// The model as a unilabel predictor (argmax for ensembles).
    std::shared_ptr<const UnilabelPredictor> classifier() const;
};

std::string serialize_archive(const ModelArchive& archive);
/// Throws CorruptArchive on malformed text, VersionMismatch on other versions.
ModelArchive parse_archive(const std::string& text);

void save_model(const ModelArchive& archive, const std::string& path);
ModelArchive load_model(const std::string& path);

/// Text form of a real that reads back to the same bits ("inf", "-inf", "nan" included).
std::string format_real(double v);
double parse_real(const std::string& s);

} // namespace rboost::cli
