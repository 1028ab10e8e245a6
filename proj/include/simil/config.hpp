#pragma once

// Run configuration: a sectioned key-value text format, its validation into a
// RunConfig, canonical emission and the builtin example configs.
//
// The format is a small TOML subset: `[section]` headers, `key = value` lines,
// `#` comments. Values are numbers, "strings", true/false, [arrays] (which may
// span lines) and {inline = "tables"}.

#include "simil/errors.hpp"
#include "simil/mapping.hpp"
#include "simil/sde_core.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace simil {

class ParseError : public Error {
 public:
  ParseError(int line, int column, const std::string& message)
      : Error(ErrorCode::ParseError,
              "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_, column_;
};

class ValidationError : public Error {
 public:
  struct Issue {
    std::string key;  // dotted, e.g. grid.n_steps
    std::string message;
  };
  explicit ValidationError(std::vector<Issue> issues);
  const std::vector<Issue>& issues() const noexcept { return issues_; }
  bool mentions(const std::string& key) const;

 private:
  std::vector<Issue> issues_;
};

enum class TaskKind {
  Estimate,
  Optimize,
  Dissipation,
  Spectrum,
  Slln,
  Kstar1d,
  HartmanGrobman,
  Probe,
  MaxPrinciple,
};
const char* task_name(TaskKind task);
std::optional<TaskKind> task_from_name(const std::string& name);

/// Everything under [task] besides its name. Only the keys a task reads may
/// appear in its config; the rest keep their defaults.
struct TaskOptions {
  double lipschitz = 0.0;  // 0: probe both systems on the sampled state radius

  // optimize, maxprinciple
  std::string family = "linear";
  int restarts = 5;
  int max_iter = 400;
  double step = 0.1;
  double tol = 1e-6;
  std::uint64_t opt_seed = 0;

  // maxprinciple
  int probes = 20;
  std::uint64_t probe_seed = 1;
  int basis_degree = 2;

  // spectrum, hartman-grobman
  std::string which = "both";
  double lyap_horizon = 200.0;
  double lyap_dt = 0.01;
  int n_seeds = 16;
  std::uint64_t lyap_seed = 0;
  double epsilon = 0.1;

  // kstar-1d
  double x_lo = -1.0, x_hi = 1.0;
  int ode_steps = 1000;

  // hartman-grobman
  double delta = 0.0;
  int grid_size = 401;

  // probe
  int n_samples = 5000;
  double radius = 1.0;

  // dissipation
  int max_samples = 200000;

  bool operator==(const TaskOptions&) const = default;
};

struct RunConfig {
  std::string name;
  SdeSystem sys_x, sys_y;
  Vector x0, y0;
  /// `initial.y0 = "K(x0)"`; y0 then holds K(x0).
  bool y0_from_map = false;
  double horizon = 1.0;
  int n_steps = 1000;
  int n_paths = 1000;
  std::uint64_t master_seed = 0;
  int workers = 1;
  std::optional<MappingK> K;
  TaskKind task = TaskKind::Estimate;
  TaskOptions options;
  std::string out_dir = "simil_out";

  EnsembleConfig ensemble_config() const;
  bool operator==(const RunConfig& other) const;
};

/// Throws ParseError for malformed text and ValidationError with every problem found.
RunConfig parse_config(const std::string& text);
/// Canonical text: fixed section and key order, doubles with 17 significant digits.
std::string emit_config(const RunConfig& config);
/// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

struct BuiltinExample {
  std::string name;
  std::string description;
  std::string text;
};
const std::vector<BuiltinExample>& builtin_examples();
/// Parsed builtin; throws InvalidArgument for an unknown name.
RunConfig builtin_config(const std::string& name);

}  // namespace simil
