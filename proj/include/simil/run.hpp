#pragma once

// Task pipelines behind the CLI. A run produces one JSON record plus plot-ready
// curves and knot files; writing them to disk is a separate step.

#include "simil/config.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace simil {

inline constexpr int kResultSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

/// One `t,value,std_error` file under curves/.
struct Curve {
  std::string name;
  std::vector<double> t, value, std_error;
};

struct ArtifactFile {
  std::string name;  // relative to the output directory
  std::string content;
};

struct RunResult {
  /// schema_version, version, name, task, config_hash, results, wall_time_s (last).
  nlohmann::ordered_json record;
  std::vector<Curve> curves;
  std::vector<ArtifactFile> files;
};

/// Executes the configured task. Module errors propagate unchanged.
RunResult run(const RunConfig& config);

/// result.json, curves/<name>.csv and the extra files under `dir`, created as needed.
void write_outputs(const RunResult& result, const std::filesystem::path& dir);

/// The record as written to result.json.
std::string result_json_text(const RunResult& result);
/// Same text without wall_time_s, for determinism comparisons.
std::string result_json_without_wall_time(const RunResult& result);

}  // namespace simil
