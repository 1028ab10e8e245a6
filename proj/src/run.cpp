#include "simil/run.hpp"

#include "simil/conditions.hpp"
#include "simil/functional.hpp"
#include "simil/linearize.hpp"
#include "simil/optimize.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace simil {

namespace {

using nlohmann::ordered_json;

// Non-finite numbers become null so that the record stays valid JSON.
ordered_json num(double x) { return std::isfinite(x) ? ordered_json(x) : ordered_json(nullptr); }

ordered_json num_array(const std::vector<double>& v) {
  ordered_json a = ordered_json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

ordered_json estimate_json(const CostEstimate& e) {
  return {{"value", num(e.value)}, {"std_error", num(e.std_error)}, {"n_paths", e.n_paths}};
}

ordered_json map_json(const MappingK& K) {
  ordered_json j;
  j["kind"] = K.kind();
  j["parameters"] = num_array(K.parameters());
  j["condition_number"] = num(K.condition_number());
  return j;
}

ordered_json homeo_json(const HomeoReport& h) {
  return {{"injective_on_sample", h.is_injective_on_sample},
          {"min_jacobian_singular_value", num(h.min_jacobian_singular_value)},
          {"condition_number", num(h.condition_number)},
          {"image_hull_coverage", num(h.image_hull_coverage)},
          {"n_samples", h.n_samples}};
}

ordered_json verdict_json(const SimilarityVerdict& v) {
  return {{"class", similarity_class_name(v.cls)},
          {"max_defect", num(v.max_defect)},
          {"final_defect", num(v.final_defect)},
          {"tail_decay_rate", num(v.tail_decay_rate)},
          {"slln_final", num(v.slln_final)},
          {"eps_c", num(v.thresholds.eps_c)},
          {"eps_a", num(v.thresholds.eps_a)},
          {"eps_w", num(v.thresholds.eps_w)}};
}

ordered_json spectrum_json(const LyapunovSpectrum& s) {
  return {{"exponents", num_array(s.exponents)},
          {"multiplicities", s.multiplicities},
          {"raw_exponents", num_array(s.raw_exponents)},
          {"raw_ci", num_array(s.raw_ci)},
          {"ci_halfwidth", num(s.ci_halfwidth)},
          {"horizon_used", num(s.horizon_used)},
          {"n_seeds", s.n_seeds},
          {"envelope_M", num(s.envelope_M)}};
}

Curve curve_of(const std::string& name, const DefectCurve& c) { return {name, c.times, c.mean, c.std_error}; }

Curve curve_of(const std::string& name, const SllnCurve& c) {
  return {name, c.times, c.running_average, std::vector<double>(c.times.size(), 0.0)};
}

std::string knots_text(const Tabulated1d& map) {
  std::ostringstream os;
  write_knots_csv(os, map);
  return os.str();
}

// Largest probed Lipschitz constant of either system on a ball covering the
// sampled states. The thresholds only need an order of magnitude.
double lipschitz_of(const RunConfig& cfg, const Ensemble& ens) {
  if (cfg.options.lipschitz > 0) return cfg.options.lipschitz;
  double radius = 1.0;
  const int stride = std::max(1, ens.grid().n_points() / 50);
  for (const PathPair& p : ens.pairs)
    for (int k = 0; k < p.grid.n_points(); k += stride) {
      radius = std::max(radius, p.x_vec(k).norm());
      radius = std::max(radius, p.y_vec(k).norm());
    }
  return std::max(assumption_probe(cfg.sys_x, 2000, radius, 0).L_hat,
                  assumption_probe(cfg.sys_y, 2000, radius, 0).L_hat);
}

struct Classified {
  DefectCurve squared;
  CostEstimate J;
  SllnCurve slln;
  double L_hat = 0.0;
  SimilarityVerdict verdict;
};

Classified classify(const RunConfig& cfg, const Ensemble& ens, const MappingK& K) {
  Classified c;
  c.squared = defect_curve(ens, K);
  c.J = cost_J(ens, K);
  c.slln = slln_curve(c.squared);
  c.L_hat = lipschitz_of(cfg, ens);
  c.verdict = classify_similarity(c.squared, c.slln, default_thresholds(c.squared, c.J, c.L_hat));
  return c;
}

MappingK start_map(const RunConfig& cfg) {
  if (cfg.K) return *cfg.K;
  const int n = cfg.sys_x.dim();
  if (cfg.options.family == "affine") return MappingK::affine(Matrix::Identity(n, n), Vector::Zero(n));
  return MappingK::identity(n);
}

OptOptions opt_options(const TaskOptions& o) {
  OptOptions out;
  out.max_iter = o.max_iter;
  out.step = o.step;
  out.restarts = o.restarts;
  out.tol = o.tol;
  out.seed = o.opt_seed;
  return out;
}

ordered_json opt_json(const OptResult& r, RunResult& out) {
  ordered_json j;
  j["best_K"] = map_json(r.best_K);
  j["J_best"] = estimate_json(r.J_best);
  j["J_initial"] = estimate_json(r.J_initial);
  j["rho"] = num(similarity_degree(r.J_best.value));
  j["converged"] = r.converged;
  j["final_diameter"] = num(r.final_diameter);
  j["evaluations"] = r.evaluations;
  ordered_json trace = ordered_json::array();
  Curve c{"trace", {}, {}, {}};
  for (const auto& [it, v] : r.trace) {
    trace.push_back({it, num(v)});
    c.t.push_back(it);
    c.value.push_back(v);
    c.std_error.push_back(0.0);
  }
  j["trace"] = trace;
  j["homeomorphism"] = homeo_json(r.homeo);
  out.curves.push_back(std::move(c));
  if (const auto* tab = std::get_if<Tabulated1d>(&r.best_K.variant()))
    out.files.push_back({"best_K_knots.csv", knots_text(*tab)});
  return j;
}

// ---------------------------------------------------------------------------

ordered_json task_estimate(const RunConfig& cfg, RunResult& out) {
  const Ensemble ens = simulate_ensemble(cfg.ensemble_config());
  const MappingK& K = *cfg.K;
  const Classified c = classify(cfg, ens, K);
  const double T = cfg.horizon;
  ordered_json j;
  j["J"] = estimate_json(c.J);
  j["rho"] = num(similarity_degree(c.J.value));
  j["verdict"] = verdict_json(c.verdict);
  j["L_hat"] = num(c.L_hat);
  j["defect_at_T"] = estimate_json(conjugacy_defect(ens, K, T));
  j["first_moment_at_T"] = estimate_json(first_moment_defect(ens, K, T));
  j["J_tilde"] = estimate_json(terminal_cost_Jtilde(ens, K));
  j["map"] = map_json(K);
  j["homeomorphism"] = homeo_json(check_homeomorphism(K, ens));
  out.curves.push_back(curve_of("defect", c.squared));
  out.curves.push_back(curve_of("first_moment", defect_curve(ens, K, true)));
  out.curves.push_back(curve_of("slln", c.slln));
  return j;
}

ordered_json task_optimize(const RunConfig& cfg, RunResult& out) {
  const Ensemble ens = simulate_ensemble(cfg.ensemble_config());
  const OptResult r = optimize_K(start_map(cfg), ens, opt_options(cfg.options));
  ordered_json j;
  j["family"] = cfg.options.family;
  j.update(opt_json(r, out));
  return j;
}

ordered_json task_dissipation(const RunConfig& cfg, RunResult& out) {
  const Ensemble ens = simulate_ensemble(cfg.ensemble_config());
  const MappingK& K = *cfg.K;
  const DissipationReport d = dissipation_report(ens, K, cfg.options.max_samples);
  const DecayCheck dc = decay_rate_check(ens, K);
  ordered_json j;
  j["alpha1_hat"] = num(d.alpha1_hat);
  j["regression_r2"] = num(d.regression_r2);
  j["fraction_violating"] = num(d.fraction_violating);
  j["samples_used"] = d.samples_used;
  j["decay"] = {{"slope", num(dc.slope)},
                {"no_signal", dc.no_signal},
                {"dissipation_holds", dc.dissipation_holds},
                {"consistent", dc.consistent}};
  j["J"] = estimate_json(cost_J(ens, K));
  out.curves.push_back(curve_of("defect", defect_curve(ens, K)));
  return j;
}

ordered_json task_spectrum(const RunConfig& cfg, RunResult& out) {
  const TaskOptions& o = cfg.options;
  const LyapunovOptions lo{o.lyap_horizon, o.lyap_dt, o.n_seeds, o.lyap_seed, o.epsilon};
  ordered_json j;
  std::optional<LyapunovSpectrum> sx, sy;
  if (o.which != "y") {
    sx = lyapunov_spectrum(cfg.sys_x, lo);
    j["x"] = spectrum_json(*sx);
  }
  if (o.which != "x") {
    sy = lyapunov_spectrum(cfg.sys_y, lo);
    j["y"] = spectrum_json(*sy);
  }
  // The first exponent requested, for quick reading.
  j["exponents"] = num_array(sx ? sx->exponents : sy->exponents);
  if (sx && sy) {
    j["prediction"] = prediction_name(asymptotic_similarity_prediction(*sx, *sy));
    if (cfg.K) {
      const Ensemble ens = simulate_ensemble(cfg.ensemble_config());
      const DefectCurve fm = defect_curve(ens, *cfg.K, true);
      const std::size_t n = fm.times.size();
      const double slope = log_slope(fm.times, fm.mean, 2 * n / 3, n);
      j["measured_defect"] = {{"initial", num(fm.mean.front())},
                              {"final", num(fm.mean.back())},
                              {"tail_log_slope", num(slope)},
                              {"trend", !(std::isfinite(slope)) ? "none" : slope < 0 ? "decays" : "grows"}};
      out.curves.push_back(curve_of("first_moment", fm));
    }
  }
  return j;
}

ordered_json task_slln(const RunConfig& cfg, RunResult& out) {
  const Ensemble ens = simulate_ensemble(cfg.ensemble_config());
  const DefectCurve sq = defect_curve(ens, *cfg.K);
  const SllnCurve sl = slln_curve(sq);
  const double half = sl.running_average[cfg.n_steps / 2];
  const double last = sl.running_average.back();
  ordered_json j;
  j["running_average_half"] = num(half);
  j["running_average_final"] = num(last);
  j["relative_change"] = num(std::abs(last - half) / std::max(std::abs(last), 1e-300));
  j["J"] = estimate_json(cost_J(ens, *cfg.K));
  out.curves.push_back(curve_of("defect", sq));
  out.curves.push_back(curve_of("slln", sl));
  return j;
}

ordered_json task_kstar(const RunConfig& cfg, RunResult& out) {
  KstarOdeProblem prob;
  prob.sys_x = cfg.sys_x;
  prob.sys_y = cfg.sys_y;
  prob.x0 = cfg.x0[0];
  prob.y0 = cfg.y0[0];
  prob.x_lo = cfg.options.x_lo;
  prob.x_hi = cfg.options.x_hi;
  prob.ode_steps = cfg.options.ode_steps;
  const KstarOdeSolution sol = solve_kstar_ode_1d(prob);
  const Ensemble ens = simulate_ensemble(cfg.ensemble_config());
  const Classified c = classify(cfg, ens, sol.K);
  ordered_json j;
  j["non_monotone"] = sol.non_monotone;
  j["knots"] = static_cast<int>(std::get<Tabulated1d>(sol.K.variant()).knots().size());
  j["J"] = estimate_json(c.J);
  j["rho"] = num(similarity_degree(c.J.value));
  j["verdict"] = verdict_json(c.verdict);
  j["L_hat"] = num(c.L_hat);
  j["homeomorphism"] = homeo_json(check_homeomorphism(sol.K, ens));
  out.files.push_back({"kstar_knots.csv", knots_text(std::get<Tabulated1d>(sol.K.variant()))});
  out.curves.push_back(curve_of("defect", c.squared));
  return j;
}

ordered_json task_hartman_grobman(const RunConfig& cfg, RunResult& out) {
  const TaskOptions& o = cfg.options;
  const LinearizationPair pair = linearize_at_fixed_point(cfg.sys_x);
  const LyapunovSpectrum spec = lyapunov_spectrum(pair.cocycle(), {50.0, 0.01, 8, 0, o.epsilon});
  const GreenKernel G = build_green_kernel(pair, spec, o.epsilon);
  KappaOptions ko;
  ko.delta = o.delta;
  ko.grid_size = o.grid_size;
  const KappaSolution sol = solve_kappa_fixed_point(pair, G, ko);
  const double flow = flow_commutation_defect(pair, sol);

  RunConfig vc = cfg;
  vc.y0 = Vector::Constant(1, sol.H(cfg.x0[0]));
  const Ensemble ens = simulate_ensemble(vc.ensemble_config());
  const CostEstimate pre = verify_conjugacy_defect(pair, sol, ens);

  ordered_json j;
  j["A0"] = num(sol.A0);
  j["lambda1"] = num(G.lambda1);
  j["M_eps"] = num(G.M_eps);
  j["delta"] = num(sol.delta);
  j["half_width"] = num(sol.half_width);
  j["contraction_bound"] = num(sol.contraction_bound);
  j["contraction_factor_observed"] = num(sol.contraction_factor_observed);
  j["iterations"] = sol.iterations_used;
  j["final_residual"] = num(sol.final_residual);
  j["residual_history"] = num_array(sol.residual_history);
  j["interpolation_error"] = num(sol.interpolation_error);
  j["quadrature_error"] = num(sol.quadrature_error);
  j["flow_commutation_defect"] = num(flow);
  j["kappa_sup_norm"] = num(sol.sup_norm());
  j["y0"] = num(vc.y0[0]);
  j["pre_exit_defect"] = estimate_json(pre);

  Curve res{"residual", {}, sol.residual_history, std::vector<double>(sol.residual_history.size(), 0.0)};
  for (std::size_t i = 0; i < sol.residual_history.size(); ++i) res.t.push_back(static_cast<double>(i + 1));
  out.curves.push_back(std::move(res));

  // kappa on the linear-side grid, and H = (I + kappa)^-1 tabulated from the nonlinear side.
  std::vector<double> xs;
  for (double y : sol.grid) xs.push_back(sol.conj(y));
  out.files.push_back({"kappa_knots.csv", knots_text(Tabulated1d(sol.grid, sol.values))});
  out.files.push_back({"H_knots.csv", knots_text(Tabulated1d(xs, sol.grid))});
  return j;
}

ordered_json probe_json(const AssumptionProbe& p) {
  return {{"c1_hat", num(p.c1_hat)}, {"c2_hat", num(p.c2_hat)}, {"M1_hat", num(p.M1_hat)},
          {"L_hat", num(p.L_hat)},   {"n_samples", p.n_samples}, {"radius", num(p.radius)}};
}

ordered_json task_probe(const RunConfig& cfg, RunResult&) {
  const TaskOptions& o = cfg.options;
  ordered_json j;
  j["x"] = probe_json(assumption_probe(cfg.sys_x, o.n_samples, o.radius, o.probe_seed));
  j["y"] = probe_json(assumption_probe(cfg.sys_y, o.n_samples, o.radius, o.probe_seed));
  return j;
}

ordered_json task_maxprinciple(const RunConfig& cfg, RunResult& out) {
  const TaskOptions& o = cfg.options;
  const Ensemble ens = simulate_ensemble(cfg.ensemble_config());
  const OptResult r = optimize_K(start_map(cfg), ens, opt_options(o));
  const CostSpec cost = CostSpec::similarity(cfg.horizon);
  AdjointOptions ao;
  ao.basis_degree = o.basis_degree;
  const AdjointSolution adj = solve_adjoint_lsmc(ens, r.best_K, cost, ao);
  const auto dirs = random_directions(r.best_K, o.probes, o.probe_seed);
  const MaxPrincipleReport rep = maximum_principle_check(ens, r, adj, dirs, cost);

  ordered_json j;
  j["family"] = o.family;
  j["optimizer"] = opt_json(r, out);
  ordered_json probes = ordered_json::array();
  for (const ProbeCheck& p : rep.probes)
    probes.push_back({{"estimate", num(p.estimate)},
                      {"std_error", num(p.std_error)},
                      {"floor", num(p.floor)},
                      {"pass", p.pass}});
  j["probes"] = probes;
  j["pass"] = rep.pass;
  j["mean_hamiltonian"] = num(rep.mean_hamiltonian);
  j["adjoint_terminal_error"] = num(rep.adjoint_terminal_error);
  j["adjoint_max_residual_ratio"] = num(adj.max_residual_ratio);
  return j;
}

std::string fmt(double x) {
  if (!std::isfinite(x)) return "nan";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  (void)ec;
  return std::string(buf, p);
}

}  // namespace

RunResult run(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  RunResult out;
  out.record["schema_version"] = kResultSchemaVersion;
  out.record["version"] = kVersion;
  out.record["name"] = cfg.name;
  out.record["task"] = task_name(cfg.task);
  out.record["config_hash"] = config_hash(cfg);
  ordered_json results;
  switch (cfg.task) {
    case TaskKind::Estimate: results = task_estimate(cfg, out); break;
    case TaskKind::Optimize: results = task_optimize(cfg, out); break;
    case TaskKind::Dissipation: results = task_dissipation(cfg, out); break;
    case TaskKind::Spectrum: results = task_spectrum(cfg, out); break;
    case TaskKind::Slln: results = task_slln(cfg, out); break;
    case TaskKind::Kstar1d: results = task_kstar(cfg, out); break;
    case TaskKind::HartmanGrobman: results = task_hartman_grobman(cfg, out); break;
    case TaskKind::Probe: results = task_probe(cfg, out); break;
    case TaskKind::MaxPrinciple: results = task_maxprinciple(cfg, out); break;
  }
  out.record["results"] = std::move(results);
  out.record["wall_time_s"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::string result_json_text(const RunResult& result) { return result.record.dump(2) + "\n"; }

std::string result_json_without_wall_time(const RunResult& result) {
  ordered_json copy = result.record;
  copy.erase("wall_time_s");
  return copy.dump(2) + "\n";
}

void write_outputs(const RunResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "curves");
  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error(ErrorCode::InvalidArgument, "cannot write " + p.string());
    f << text;
  };
  write(dir / "result.json", result_json_text(result));
  for (const Curve& c : result.curves) {
    std::string text = "t,value,std_error\n";
    for (std::size_t i = 0; i < c.t.size(); ++i)
      text += fmt(c.t[i]) + "," + fmt(c.value[i]) + "," + fmt(c.std_error[i]) + "\n";
    write(dir / "curves" / (c.name + ".csv"), text);
  }
  for (const ArtifactFile& f : result.files) write(dir / f.name, f.content);
}

}  // namespace simil
