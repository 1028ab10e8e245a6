// simil: run one configured task and write result.json plus curves/*.csv.
//
// Exit codes: 0 success, 1 config or usage error, 2 numerical failure.
// Every failure prints one JSON object on stderr.

#include "simil/config.hpp"
#include "simil/run.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using nlohmann::ordered_json;

int report(const std::string& code, const std::string& message, const std::string& task, int exit_code,
           ordered_json extra = ordered_json::object()) {
  ordered_json err;
  err["error"] = code;
  err["message"] = message;
  if (!task.empty()) err["task"] = task;
  err["exit_code"] = exit_code;
  for (auto& [k, v] : extra.items()) err[k] = v;
  std::cerr << err.dump() << std::endl;
  return exit_code;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw simil::Error(simil::ErrorCode::ValidationError, "cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Similarity of two SDE systems driven by one Brownian motion"};
  std::string config_path, example, out_dir, task_override, family;
  std::optional<std::uint64_t> seed;
  std::optional<int> paths, restarts, workers;
  bool list = false, print_config = false;

  auto* src = app.add_option("--config", config_path, "config file");
  app.add_option("--example", example, "builtin example name")->excludes(src);
  app.add_flag("--list-examples", list, "list builtin examples and exit");
  app.add_flag("--print-config", print_config, "print the canonical config after overrides and exit");
  app.add_option("--seed", seed, "override ensemble.master_seed");
  app.add_option("--paths", paths, "override ensemble.n_paths");
  app.add_option("--workers", workers, "override ensemble.workers");
  app.add_option("--out", out_dir, "output directory (default output.dir)");
  app.add_option("--task", task_override, "override task.name");
  app.add_option("--family", family, "optimize: linear | affine | tabulated1d");
  app.add_option("--restarts", restarts, "optimize: number of restarts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("UsageError", e.what(), "", 1);
  }

  if (list) {
    for (const auto& e : simil::builtin_examples()) std::cout << e.name << "\t" << e.description << "\n";
    return 0;
  }

  std::string task_label;
  try {
    if (config_path.empty() && example.empty())
      return report("UsageError", "one of --config or --example is required", "", 1);
    simil::RunConfig cfg;
    if (!example.empty()) {
      const auto& all = simil::builtin_examples();
      auto it = std::find_if(all.begin(), all.end(), [&](const auto& e) { return e.name == example; });
      if (it == all.end()) return report("UsageError", "unknown example '" + example + "'", "", 1);
      cfg = simil::parse_config(it->text);
    } else {
      cfg = simil::parse_config(read_file(config_path));
    }

    if (!task_override.empty()) {
      auto t = simil::task_from_name(task_override);
      if (!t) return report("UsageError", "unknown task '" + task_override + "'", "", 1);
      cfg.task = *t;
    }
    if (seed) cfg.master_seed = *seed;
    if (paths) cfg.n_paths = *paths;
    if (workers) cfg.workers = *workers;
    if (restarts) cfg.options.restarts = *restarts;
    if (!family.empty()) {
      cfg.options.family = family;
      if (cfg.K && family != cfg.K->kind() && family != "tabulated1d") cfg.K.reset();
    }
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    // Overrides go through the same validation as the file.
    cfg = simil::parse_config(simil::emit_config(cfg));
    task_label = simil::task_name(cfg.task);

    if (print_config) {
      std::cout << simil::emit_config(cfg);
      return 0;
    }

    const simil::RunResult result = simil::run(cfg);
    simil::write_outputs(result, cfg.out_dir);
    std::cout << simil::result_json_text(result);
    return 0;
  } catch (const simil::ValidationError& e) {
    ordered_json issues = ordered_json::array();
    for (const auto& i : e.issues()) issues.push_back({{"key", i.key}, {"message", i.message}});
    return report("ValidationError", e.what(), task_label, 1, {{"issues", issues}});
  } catch (const simil::ParseError& e) {
    return report("ParseError", e.what(), task_label, 1, {{"line", e.line()}, {"column", e.column()}});
  } catch (const simil::Error& e) {
    const int code = simil::is_config_error(e.code()) ? 1 : 2;
    return report(simil::error_code_name(e.code()), e.what(), task_label, code);
  } catch (const std::exception& e) {
    return report("InternalError", e.what(), task_label, 2);
  }
}
