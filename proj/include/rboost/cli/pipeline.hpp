#pragma once
#include <iosfwd>
#include <string>
#include <vector>

#include "rboost/cli/config.hpp"

namespace rboost::cli {

/// 0 ok, 2 configuration or input error, 3 weak learner failure,
/// 4 numeric failure (non-finite values, audit mismatch), 1 anything else.
int exit_code_for(Errc code);

/// Runs the configured pipeline and writes metrics.json, trace.ndjson,
/// plotdata.csv and (for pipelines that produce one) model.json into
/// config.out_dir. Errors are reported as one JSON line on `err`.
int run_pipeline(const ExperimentConfig& config, std::ostream& err);

struct AuditReport {
    bool ok = true;
    std::vector<std::string> mismatches;
};

/// Recomputes metrics.json in `dir` from its config echo, the dataset and the
/// archived model, and lists every top-level key whose value differs.
AuditReport audit_directory(const std::string& dir);

} // namespace rboost::cli
