#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gridfill/gridfill.hpp"

using nlohmann::json;
namespace gf = gridfill;

namespace {

// ---------------------------------------------------------------------------
// Flat config file: a single JSON object whose keys mirror the long option
// names ('-' replaced by '_'). Values are applied as defaults before parsing,
// so command-line flags always win. Keys meant for other subcommands are
// ignored.
// ---------------------------------------------------------------------------

struct FlatConfig {
  json doc = json::object();

  template <typename T>
  void apply(const std::string& key, T& var) const {
    const auto it = doc.find(key);
    if (it == doc.end()) return;
    try {
      var = it->get<T>();
    } catch (const json::exception& e) {
      throw gf::ParseError("config key '" + key + "': " + e.what());
    }
  }
};

std::string find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return argv[i + 1];
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return "";
}

FlatConfig load_flat_config(const std::string& path) {
  FlatConfig cfg;
  if (path.empty()) return cfg;
  try {
    cfg.doc = json::parse(gf::read_file(path));
  } catch (const json::exception& e) {
    throw gf::ParseError("config file '" + path + "': " + e.what());
  }
  if (!cfg.doc.is_object()) {
    throw gf::ParseError("config file '" + path + "' must hold a single JSON object");
  }
  return cfg;
}

/// GRIDFILL_SEED overrides the base seed with the highest precedence (above
/// both the config file and command-line flags).
void apply_env_seed(std::uint64_t& seed) {
  const char* env = std::getenv("GRIDFILL_SEED");
  if (env == nullptr || *env == '\0') return;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(env, &used);
    if (used != std::strlen(env)) throw std::invalid_argument("trailing characters");
    seed = static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw gf::ParseError("GRIDFILL_SEED must be a non-negative integer, got '" +
                         std::string(env) + "'");
  }
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

std::string fmt_opt(const std::optional<double>& v) {
  return v ? gf::format_double(*v) : std::string("undefined");
}

std::string fmt_bool(bool b) { return b ? "1" : "0"; }

std::vector<std::string> provenance_header(const json& config) {
  return {"gridfill " + std::string(gf::kVersion), "config " + config.dump()};
}

void write_csv(const std::string& path, const json& config, const std::string& columns,
               const std::vector<std::string>& rows) {
  std::ostringstream out;
  out << "# gridfill " << gf::kVersion << "\n";
  out << "# config " << config.dump() << "\n";
  out << columns << "\n";
  for (const std::string& r : rows) out << r << "\n";
  gf::save_text(path, out.str());
}

json base_report(const std::string& command, const json& config) {
  json doc;
  doc["version"] = gf::kVersion;
  doc["command"] = command;
  doc["config"] = config;
  return doc;
}

void write_json(const std::string& path, const json& doc) {
  gf::save_text(path, doc.dump(2) + "\n");
}

json vector_to_json(const gf::Vector& v) {
  json arr = json::array();
  for (gf::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

void validated(const gf::SolverConfig& config) {
  try {
    config.validate();
  } catch (const gf::Error& e) {
    throw gf::ParseError(e.what());  // configuration problem, not a runtime failure
  }
}

gf::Method method_from_name(const std::string& s) {
  if (s == "nuclear") return gf::Method::kNuclear;
  if (s == "nuclear+const") return gf::Method::kNuclearConstrained;
  if (s == "nuclear+const+appx") return gf::Method::kNuclearConstrainedApprox;
  if (s == "least-squares") return gf::Method::kLeastSquares;
  throw gf::ParseError("unknown method '" + s + "' (expected nuclear, nuclear+const, "
                       "nuclear+const+appx, or least-squares)");
}

gf::NetworkCase load_or_generate_case(const std::string& case_path, gf::Index buses,
                                      std::uint64_t network_seed, double load_scale) {
  if (!case_path.empty()) return gf::load_case(case_path);
  if (buses < 2) {
    throw gf::ParseError("provide --case FILE or a generator size via --buses N (N >= 2)");
  }
  return gf::generate_radial_case(buses, network_seed, load_scale);
}

std::vector<gf::Index> canonical_pmus(const gf::NetworkCase& net, const std::vector<int>& ids) {
  std::vector<gf::Index> out;
  for (int id : ids) {
    gf::Index found = -1;
    for (gf::Index b = 0; b < net.n_buses(); ++b) {
      if (net.buses[static_cast<std::size_t>(b)].id == id) {
        found = b;
        break;
      }
    }
    if (found < 0) throw gf::ParseError("PMU bus id " + std::to_string(id) + " not in the case");
    out.push_back(found);
  }
  return out;
}

// ---------------------------------------------------------------------------
// solve / least-squares
// ---------------------------------------------------------------------------

struct SolveParams {
  std::string observations;
  std::string constraints;
  std::string output = "solution.csv";
  std::string report;
  gf::Index rows = 0, cols = 0;
  bool reconcile = false;
  bool strict = false;
  gf::SolverConfig solver;
};

json solve_config_json(const SolveParams& p) {
  return json{{"observations", p.observations},
              {"constraints", p.constraints},
              {"output", p.output},
              {"report", p.report},
              {"rows", p.rows},
              {"cols", p.cols},
              {"reconcile", p.reconcile},
              {"strict", p.strict},
              {"rho", p.solver.rho},
              {"max_iterations", p.solver.max_iterations},
              {"primal_tolerance", p.solver.primal_tolerance},
              {"dual_tolerance", p.solver.dual_tolerance},
              {"adapt_rho", p.solver.adapt_rho}};
}

int run_solve(const SolveParams& p, bool least_squares) {
  if (p.rows < 1 || p.cols < 1) throw gf::ParseError("--rows and --cols must be positive");
  validated(p.solver);
  const std::vector<gf::EntryValue> obs = gf::load_observations(p.observations);
  std::vector<gf::SparseConstraint> cons;
  if (!p.constraints.empty()) cons = gf::load_constraints(p.constraints);
  const gf::AffineSystem sys = gf::assemble_affine(obs, cons, p.rows, p.cols, p.reconcile);
  const gf::SolverReport rep =
      least_squares ? gf::solve_least_squares(sys) : gf::solve_nuclear(sys, p.solver);

  const json cfg = solve_config_json(p);
  gf::save_matrix_csv(p.output, rep.solution, provenance_header(cfg));
  if (!p.report.empty()) {
    json doc = base_report(least_squares ? "least-squares" : "solve", cfg);
    doc["objective_value"] = rep.objective_value;
    doc["iterations"] = rep.iterations;
    doc["primal_residual"] = rep.primal_residual;
    doc["dual_residual"] = rep.dual_residual;
    doc["feasibility_residual"] = rep.feasibility_residual;
    doc["rhs_inconsistency"] = rep.rhs_inconsistency;
    doc["converged"] = rep.converged;
    write_json(p.report, doc);
  }
  if (p.strict && !rep.converged) {
    std::cerr << "error: solver did not converge (primal " << rep.primal_residual << ", dual "
              << rep.dual_residual << ", feasibility " << rep.feasibility_residual << ")\n";
    return 4;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// coherence
// ---------------------------------------------------------------------------

struct CoherenceParams {
  std::string matrix;
  std::string constraints;
  std::string output;  // empty: stdout
  gf::Index rank = -1;
  double rank_tolerance = 1e-8;
  double beta = 0.0;  // 0 disables the sufficient-sample bounds
  double q = 1.0;
  double c_r = 1.0, c_k = 1.0;
};

int run_coherence(const CoherenceParams& p) {
  if (p.beta != 0.0 && p.beta < 1.0) {
    throw gf::ParseError("--beta must be >= 1 (or omitted to skip the bounds)");
  }
  const gf::Matrix m = gf::load_matrix(p.matrix);
  std::vector<gf::DenseConstraint> dense;
  if (!p.constraints.empty()) {
    for (const gf::SparseConstraint& c : gf::load_constraints(p.constraints)) {
      dense.push_back({gf::densify(c, m.rows(), m.cols()), c.rhs});
    }
  }
  const gf::CoherenceReport rep = gf::coherence_report(m, dense, p.rank, p.rank_tolerance);

  const json cfg = json{{"matrix", p.matrix},       {"constraints", p.constraints},
                        {"output", p.output},       {"rank", p.rank},
                        {"rank_tolerance", p.rank_tolerance}, {"beta", p.beta},
                        {"q", p.q},                 {"c_r", p.c_r},
                        {"c_k", p.c_k}};
  json doc = base_report("coherence", cfg);
  doc["n1"] = rep.n1;
  doc["n2"] = rep.n2;
  doc["rank"] = rep.r;
  doc["dim_T"] = rep.dim_T;
  doc["mu_U"] = rep.mu_U;
  doc["mu_V"] = rep.mu_V;
  doc["mu0"] = rep.mu0;
  doc["nu0"] = rep.nu0;
  doc["mu_q_perp"] = rep.mu_Q_perp;
  doc["nu_q_perp"] = rep.nu_Q_perp;
  doc["constraint_count"] = rep.constraint_count;
  doc["dropped_constraints"] = rep.dropped_constraints;
  doc["normalized_singular_values"] = vector_to_json(rep.normalized_singular_values);
  doc["cumulative"] = vector_to_json(rep.cumulative);

  if (p.beta >= 1.0) {
    const gf::Theorem1Bounds b =
        gf::theorem1_bounds(rep.n1, rep.n2, rep.r, rep.mu0, rep.nu0, rep.mu_Q_perp,
                            rep.nu_Q_perp, p.beta, p.q, p.c_r, p.c_k);
    doc["sample_bounds"] = json{{"bound_a", b.bound_a},   {"bound_b", b.bound_b},
                                {"bound_c", b.bound_c},   {"bound_d", b.bound_d},
                                {"bound_e", b.bound_e},   {"bound_f", b.bound_f},
                                {"max_bound", b.max_bound}, {"min_samples", b.min_samples}};
    const gf::Corollary1Result c1 =
        gf::corollary1_check(rep.mu0, rep.r, rep.n1, rep.n2, rep.mu_Q_perp, rep.nu_Q_perp);
    doc["coverage_check"] = json{{"satisfied", c1.satisfied},
                                 {"mu_threshold", c1.mu_threshold},
                                 {"nu_threshold", c1.nu_threshold},
                                 {"mu_margin", c1.mu_margin},
                                 {"nu_margin", c1.nu_margin}};
    const gf::Corollary2Bound c2 =
        gf::corollary2_bound(rep.n1, rep.n2, rep.r, rep.mu0, rep.nu0, p.beta, p.c_r, p.c_k);
    doc["covered_regime_bound"] =
        json{{"c1", c2.c1}, {"c2", c2.c2}, {"c3", c2.c3}, {"factor", c2.factor},
             {"bound", c2.bound}};
  }
  if (p.output.empty()) {
    std::cout << doc.dump(2) << "\n";
  } else {
    write_json(p.output, doc);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// scree
// ---------------------------------------------------------------------------

struct ScreeParams {
  std::string matrix;
  std::string output = "scree.csv";
};

int run_scree(const ScreeParams& p) {
  const gf::Scree s = gf::scree(gf::load_matrix(p.matrix));
  const json cfg = json{{"matrix", p.matrix}, {"output", p.output}};
  std::vector<std::string> rows;
  for (gf::Index k = 0; k < s.singular_values.size(); ++k) {
    rows.push_back(std::to_string(k + 1) + "," + gf::format_double(s.singular_values(k)) + "," +
                   gf::format_double(s.normalized(k)) + "," + gf::format_double(s.cumulative(k)));
  }
  write_csv(p.output, cfg, "k,singular_value,normalized,cumulative", rows);
  return 0;
}

// ---------------------------------------------------------------------------
// toy
// ---------------------------------------------------------------------------

struct ToyParams {
  gf::Index n1 = 40, n2 = 10, rank = 2, count = -1;
  std::vector<double> mixes{0.0, 0.25, 0.5, 0.75, 1.0};
  double target = 0.9;
  double tolerance = 1e-3;
  int trials = 100;
  int jobs = 1;
  std::uint64_t seed = 0;
  bool baseline = true;
  gf::Index initial_m = 1, stride = 1;
  gf::SolverConfig solver;
  std::string output = "toy_sweep.csv";
  std::string curves;
};

int run_toy(ToyParams p) {
  apply_env_seed(p.seed);
  validated(p.solver);
  const json cfg = json{{"n1", p.n1},
                        {"n2", p.n2},
                        {"rank", p.rank},
                        {"count", p.count},
                        {"mixes", p.mixes},
                        {"target", p.target},
                        {"tolerance", p.tolerance},
                        {"trials", p.trials},
                        {"jobs", p.jobs},
                        {"seed", p.seed},
                        {"baseline", p.baseline},
                        {"initial_m", p.initial_m},
                        {"stride", p.stride},
                        {"rho", p.solver.rho},
                        {"max_iterations", p.solver.max_iterations},
                        {"primal_tolerance", p.solver.primal_tolerance},
                        {"dual_tolerance", p.solver.dual_tolerance},
                        {"adapt_rho", p.solver.adapt_rho},
                        {"output", p.output},
                        {"curves", p.curves}};
  gf::ToySweepConfig sweep;
  sweep.n1 = p.n1;
  sweep.n2 = p.n2;
  sweep.r = p.rank;
  sweep.constraint_count = p.count;
  sweep.base_seed = p.seed;
  sweep.solver = p.solver;
  sweep.tolerance = p.tolerance;
  sweep.include_baseline = p.baseline;
  sweep.search.initial_m = p.initial_m;
  sweep.search.stride = p.stride;
  sweep.search.jobs = p.jobs;

  const auto start = std::chrono::steady_clock::now();
  const std::vector<gf::MixRow> rows = gf::constraint_mix_sweep(sweep, p.mixes, p.target,
                                                                p.trials);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count();

  std::vector<std::string> lines;
  for (const gf::MixRow& row : rows) {
    lines.push_back(fmt_bool(row.constrained) + "," +
                    (row.constrained ? gf::format_double(row.mix) : std::string()) + "," +
                    gf::format_double(row.mu_q_perp) + "," + gf::format_double(row.nu_q_perp) +
                    "," + std::to_string(row.min_m) + "," + fmt_bool(row.saturated));
  }
  write_csv(p.output, cfg, "constrained,mix,mu_q_perp,nu_q_perp,min_m,saturated", lines);

  if (!p.curves.empty()) {
    std::vector<std::string> curve_lines;
    for (const gf::MixRow& row : rows) {
      for (const gf::SearchPoint& pt : row.curve) {
        curve_lines.push_back(fmt_bool(row.constrained) + "," +
                              (row.constrained ? gf::format_double(row.mix) : std::string()) +
                              "," + std::to_string(pt.m) + "," + gf::format_double(pt.success));
      }
    }
    write_csv(p.curves, cfg, "constrained,mix,m,success", curve_lines);
  }
  std::cerr << "toy sweep finished in " << wall << " s\n";
  return 0;
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

struct GridParams {
  std::string case_path;
  gf::Index buses = 0;
  double load_scale = 0.05;
  std::uint64_t network_seed = 1;
  std::vector<double> fractions{0.2};
  int trials = 20;
  int jobs = 1;
  std::vector<int> pmu{1};
  std::vector<std::string> methods{"nuclear", "nuclear+const", "nuclear+const+appx",
                                   "least-squares"};
  double mag_threshold = 1e-4;
  double ang_threshold = 5e-5;
  double tolerance = 1e-3;
  bool structural = true;
  std::uint64_t seed = 0;
  gf::SolverConfig solver;
  std::string output = "grid_trials.csv";
  std::string aggregate = "grid_aggregate.csv";
  std::string cdf = "grid_cdf.csv";
  std::vector<double> probe_fractions;
  double probe_sample_fraction = 0.2;
  gf::Index probe_rank = 5;
  std::string probe_output = "grid_probe.csv";
};

int run_grid(GridParams p) {
  apply_env_seed(p.seed);
  const json cfg = json{{"case", p.case_path},
                        {"buses", p.buses},
                        {"load_scale", p.load_scale},
                        {"network_seed", p.network_seed},
                        {"fractions", p.fractions},
                        {"trials", p.trials},
                        {"jobs", p.jobs},
                        {"pmu", p.pmu},
                        {"methods", p.methods},
                        {"mag_threshold", p.mag_threshold},
                        {"ang_threshold", p.ang_threshold},
                        {"tolerance", p.tolerance},
                        {"structural_zeros", p.structural},
                        {"seed", p.seed},
                        {"rho", p.solver.rho},
                        {"max_iterations", p.solver.max_iterations},
                        {"primal_tolerance", p.solver.primal_tolerance},
                        {"dual_tolerance", p.solver.dual_tolerance},
                        {"adapt_rho", p.solver.adapt_rho},
                        {"output", p.output},
                        {"aggregate", p.aggregate},
                        {"cdf", p.cdf},
                        {"probe_fractions", p.probe_fractions},
                        {"probe_sample_fraction", p.probe_sample_fraction},
                        {"probe_rank", p.probe_rank},
                        {"probe_output", p.probe_output}};

  const gf::NetworkCase net =
      load_or_generate_case(p.case_path, p.buses, p.network_seed, p.load_scale);
  gf::GridExperimentConfig config;
  config.fractions = p.fractions;
  config.trials = p.trials;
  config.base_seed = p.seed;
  config.pmu_buses = canonical_pmus(net, p.pmu);
  config.methods.clear();
  for (const std::string& name : p.methods) config.methods.push_back(method_from_name(name));
  config.solver = p.solver;
  config.solver.exactness_tolerance = p.tolerance;
  config.mag_threshold = p.mag_threshold;
  config.ang_threshold = p.ang_threshold;
  config.include_structural_zeros = p.structural;
  config.jobs = p.jobs;
  validated(config.solver);

  const auto start = std::chrono::steady_clock::now();
  const gf::GridExperimentResult res = gf::run_grid_experiment(net, config);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count();

  std::vector<std::string> trial_lines;
  for (const gf::GridTrialRow& row : res.trial_rows) {
    const gf::TrialResult& t = row.result;
    trial_lines.push_back(gf::format_double(row.fraction) + "," + std::to_string(t.seed) + "," +
                          std::to_string(t.m) + "," + gf::method_name(t.method) + "," +
                          fmt_bool(t.recovered) + "," + gf::format_double(t.relative_error) +
                          "," + fmt_opt(t.mag_rmse) + "," + fmt_opt(t.ang_rmse));
  }
  write_csv(p.output, cfg, "fraction,trial_seed,m,method,recovered,relative_error,mag_rmse,ang_rmse",
            trial_lines);

  std::vector<std::string> agg_lines;
  for (const gf::GridAggregateRow& a : res.aggregate_rows) {
    agg_lines.push_back(gf::format_double(a.fraction) + "," + gf::method_name(a.method) + "," +
                        gf::format_double(a.mag_below) + "," + gf::format_double(a.ang_below) +
                        "," + std::to_string(a.mag_defined) + "," + std::to_string(a.ang_defined) +
                        "," + fmt_opt(a.median_mag_rmse) + "," + fmt_opt(a.median_ang_rmse));
  }
  write_csv(p.aggregate, cfg,
            "fraction,method,mag_below,ang_below,mag_defined,ang_defined,median_mag_rmse,"
            "median_ang_rmse",
            agg_lines);

  std::vector<std::string> cdf_lines;
  for (const gf::GridCdfRow& c : res.cdf_rows) {
    cdf_lines.push_back(gf::format_double(c.fraction) + "," + gf::method_name(c.method) + "," +
                        c.row.metric + "," + gf::format_double(c.row.value) + "," +
                        gf::format_double(c.row.cumulative));
  }
  write_csv(p.cdf, cfg, "fraction,method,metric,value,cumulative", cdf_lines);

  if (!p.probe_fractions.empty()) {
    const std::vector<gf::DeletionProbeRow> probe = gf::constraint_deletion_probe(
        net, config, p.probe_fractions, p.probe_sample_fraction, p.probe_rank);
    std::vector<std::string> probe_lines;
    for (const gf::DeletionProbeRow& row : probe) {
      probe_lines.push_back(gf::format_double(row.delete_fraction) + "," +
                            std::to_string(row.trial) + "," + gf::format_double(row.nu_q_perp) +
                            "," + fmt_bool(row.recovered) + "," + fmt_opt(row.mag_rmse) + "," +
                            fmt_opt(row.ang_rmse));
    }
    write_csv(p.probe_output, cfg, "delete_fraction,trial,nu_q_perp,recovered,mag_rmse,ang_rmse",
              probe_lines);
  }
  std::cerr << "grid experiment finished in " << wall << " s (dropped approx rows: "
            << res.dropped_approx_total << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// powerflow
// ---------------------------------------------------------------------------

struct PowerflowParams {
  std::string case_path;
  gf::Index buses = 0;
  double load_scale = 0.05;
  std::uint64_t seed = 1;
  std::string output = "state_matrix.csv";
  std::string voltages;
  std::string report;
};

int run_powerflow(PowerflowParams p) {
  apply_env_seed(p.seed);
  const json cfg = json{{"case", p.case_path}, {"buses", p.buses},
                        {"load_scale", p.load_scale}, {"seed", p.seed},
                        {"output", p.output}, {"voltages", p.voltages},
                        {"report", p.report}};
  const gf::NetworkCase net = load_or_generate_case(p.case_path, p.buses, p.seed, p.load_scale);
  const gf::PowerFlowSolution sol = gf::solve_power_flow(net);
  const gf::StateMatrix sm = gf::assemble_state_matrix(net, sol);
  gf::save_matrix_csv(p.output, sm.values, provenance_header(cfg));

  if (!p.voltages.empty()) {
    std::vector<std::string> lines;
    for (gf::Index b = 0; b < net.n_buses(); ++b) {
      const gf::Complex v = sol.voltage[static_cast<std::size_t>(b)];
      const double ang = std::atan2(v.imag(), v.real()) * 180.0 / M_PI;
      lines.push_back(std::to_string(net.buses[static_cast<std::size_t>(b)].id) + "," +
                      gf::format_double(v.real()) + "," + gf::format_double(v.imag()) + "," +
                      gf::format_double(std::abs(v)) + "," + gf::format_double(ang));
    }
    write_csv(p.voltages, cfg, "bus_id,re,im,mag,angle_deg", lines);
  }
  if (!p.report.empty()) {
    json doc = base_report("powerflow", cfg);
    doc["iterations"] = sol.iterations;
    doc["residual"] = sol.residual;
    doc["converged"] = sol.converged;
    doc["n_buses"] = net.n_buses();
    doc["n_lines"] = net.n_lines();
    write_json(p.report, doc);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gen-network
// ---------------------------------------------------------------------------

struct GenParams {
  gf::Index buses = 10;
  std::uint64_t seed = 0;
  double load_scale = 0.05;
  std::string output = "case.json";
};

int run_gen_network(GenParams p) {
  apply_env_seed(p.seed);
  const json cfg = json{{"buses", p.buses}, {"seed", p.seed},
                        {"load_scale", p.load_scale}, {"output", p.output}};
  const gf::NetworkCase net = gf::generate_radial_case(p.buses, p.seed, p.load_scale);

  json doc;
  doc["meta"] = json{{"version", gf::kVersion}, {"config", cfg}};
  doc["buses"] = json::array();
  for (const gf::Bus& b : net.buses) {
    doc["buses"].push_back(json{{"id", b.id}, {"p_load", b.p_load}, {"q_load", b.q_load}});
  }
  doc["lines"] = json::array();
  for (const gf::Line& l : net.lines) {
    doc["lines"].push_back(
        json{{"from", net.buses[static_cast<std::size_t>(l.from)].id},
             {"to", net.buses[static_cast<std::size_t>(l.to)].id},
             {"r", l.r},
             {"x", l.x}});
  }
  doc["slack"] = json{{"id", net.buses.front().id},
                      {"v_re", net.slack_voltage.real()},
                      {"v_im", net.slack_voltage.imag()}};
  write_json(p.output, doc);
  return 0;
}

// ---------------------------------------------------------------------------
// Exit-code mapping
// ---------------------------------------------------------------------------

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const gf::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const gf::InconsistentObservationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const gf::InfeasibleSystemError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const gf::UndefinedScreeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const gf::UndefinedMetricError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const gf::NoSolutionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 6;
  } catch (const gf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matrix completion with equality constraints, subspace coverage metrics, and "
               "radial-network state-estimation experiments"};
  app.set_version_flag("--version", std::string(gf::kVersion));
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path,
                 "Flat JSON config file; keys mirror long option names with '-' replaced by "
                 "'_'. Command-line flags override file values.");

  FlatConfig cfg;
  try {
    cfg = load_flat_config(find_config_path(argc, argv));
  } catch (const gf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  const auto add_solver_options = [&cfg](CLI::App* sc, gf::SolverConfig& solver) {
    cfg.apply("rho", solver.rho);
    cfg.apply("max_iterations", solver.max_iterations);
    cfg.apply("primal_tolerance", solver.primal_tolerance);
    cfg.apply("dual_tolerance", solver.dual_tolerance);
    cfg.apply("adapt_rho", solver.adapt_rho);
    sc->add_option("--rho", solver.rho, "Splitting penalty parameter");
    sc->add_option("--max-iterations", solver.max_iterations, "Iteration cap");
    sc->add_option("--primal-tolerance", solver.primal_tolerance, "Primal stopping tolerance");
    sc->add_option("--dual-tolerance", solver.dual_tolerance, "Dual stopping tolerance");
    sc->add_flag("--adapt-rho,!--no-adapt-rho", solver.adapt_rho,
                 "Residual balancing of the penalty parameter");
  };

  // --- solve / least-squares ---
  SolveParams solve_params;
  CLI::App* solve_cmd = nullptr;
  CLI::App* ls_cmd = nullptr;
  {
    SolveParams& p = solve_params;
    cfg.apply("observations", p.observations);
    cfg.apply("constraints", p.constraints);
    cfg.apply("output", p.output);
    cfg.apply("report", p.report);
    cfg.apply("rows", p.rows);
    cfg.apply("cols", p.cols);
    cfg.apply("reconcile", p.reconcile);
    cfg.apply("strict", p.strict);
    const auto add_shared = [&](CLI::App* sc) {
      sc->fallthrough();
      sc->add_option("--observations", p.observations, "CSV of observed entries: i,j,value")
          ->required();
      sc->add_option("--constraints", p.constraints, "JSON of linear equality constraints");
      sc->add_option("--rows", p.rows, "Matrix row count")->required();
      sc->add_option("--cols", p.cols, "Matrix column count")->required();
      sc->add_option("--output", p.output, "Solution matrix CSV path");
      sc->add_option("--report", p.report, "Solver report JSON path");
      sc->add_flag("--reconcile,!--no-reconcile", p.reconcile,
                   "Resolve inconsistent equality rows by least squares instead of failing");
    };
    solve_cmd = app.add_subcommand("solve", "Nuclear-norm completion under the constraints");
    add_shared(solve_cmd);
    solve_cmd->add_flag("--strict,!--no-strict", p.strict,
                        "Exit with code 4 when the solver fails to converge");
    add_solver_options(solve_cmd, p.solver);
    ls_cmd = app.add_subcommand("least-squares",
                                "Minimum-Frobenius-norm feasible completion (baseline)");
    add_shared(ls_cmd);
  }

  // --- coherence ---
  CoherenceParams coh_params;
  CLI::App* coh_cmd = app.add_subcommand("coherence",
                                         "Rank, coherence, and constraint-coverage report");
  {
    CoherenceParams& p = coh_params;
    cfg.apply("matrix", p.matrix);
    cfg.apply("constraints", p.constraints);
    cfg.apply("output", p.output);
    cfg.apply("rank", p.rank);
    cfg.apply("rank_tolerance", p.rank_tolerance);
    cfg.apply("beta", p.beta);
    cfg.apply("q", p.q);
    cfg.apply("c_r", p.c_r);
    cfg.apply("c_k", p.c_k);
    coh_cmd->fallthrough();
    coh_cmd->add_option("--matrix", p.matrix, "Matrix file (CSV, or .json)")->required();
    coh_cmd->add_option("--constraints", p.constraints, "JSON of linear equality constraints");
    coh_cmd->add_option("--output", p.output, "Report JSON path (default: stdout)");
    coh_cmd->add_option("--rank", p.rank, "Subspace rank (-1: automatic)");
    coh_cmd->add_option("--rank-tolerance", p.rank_tolerance, "Relative cutoff for automatic rank");
    coh_cmd->add_option("--beta", p.beta, "Confidence exponent; >= 1 enables the sample bounds");
    coh_cmd->add_option("--q", p.q, "Constraint weight used in the sample bounds");
    coh_cmd->add_option("--c-r", p.c_r, "Bound constant C_R (illustrative default 1.0)");
    coh_cmd->add_option("--c-k", p.c_k, "Bound constant C_K (illustrative default 1.0)");
  }

  // --- scree ---
  ScreeParams scree_params;
  CLI::App* scree_cmd = app.add_subcommand("scree", "Normalized singular-value spectrum CSV");
  {
    ScreeParams& p = scree_params;
    cfg.apply("matrix", p.matrix);
    cfg.apply("output", p.output);
    scree_cmd->fallthrough();
    scree_cmd->add_option("--matrix", p.matrix, "Matrix file (CSV, or .json)")->required();
    scree_cmd->add_option("--output", p.output, "Scree CSV path");
  }

  // --- toy ---
  ToyParams toy_params;
  CLI::App* toy_cmd = app.add_subcommand(
      "toy", "Constraint-mix sweep: coverage metrics vs minimum sample count");
  {
    ToyParams& p = toy_params;
    cfg.apply("n1", p.n1);
    cfg.apply("n2", p.n2);
    cfg.apply("rank", p.rank);
    cfg.apply("count", p.count);
    cfg.apply("mixes", p.mixes);
    cfg.apply("target", p.target);
    cfg.apply("tolerance", p.tolerance);
    cfg.apply("trials", p.trials);
    cfg.apply("jobs", p.jobs);
    cfg.apply("seed", p.seed);
    cfg.apply("baseline", p.baseline);
    cfg.apply("initial_m", p.initial_m);
    cfg.apply("stride", p.stride);
    cfg.apply("output", p.output);
    cfg.apply("curves", p.curves);
    toy_cmd->fallthrough();
    toy_cmd->add_option("--n1", p.n1, "Truth matrix rows");
    toy_cmd->add_option("--n2", p.n2, "Truth matrix columns");
    toy_cmd->add_option("--rank", p.rank, "Truth matrix rank");
    toy_cmd->add_option("--count", p.count, "Constraints per mix (-1: dim T)");
    toy_cmd->add_option("--mixes", p.mixes, "Constraint mix weights in [0,1]")->delimiter(',');
    toy_cmd->add_option("--target", p.target, "Target success probability");
    toy_cmd->add_option("--tolerance", p.tolerance, "Relative recovery tolerance");
    toy_cmd->add_option("--trials", p.trials, "Monte-Carlo trials per sample count");
    toy_cmd->add_option("--jobs", p.jobs, "Parallel trial evaluation");
    toy_cmd->add_option("--seed", p.seed, "Base seed (GRIDFILL_SEED overrides)");
    toy_cmd->add_flag("--baseline,!--no-baseline", p.baseline,
                      "Also search the unconstrained baseline");
    toy_cmd->add_option("--initial-m", p.initial_m, "First sample count of the coarse search");
    toy_cmd->add_option("--stride", p.stride, "Refinement stride before the unit phase");
    toy_cmd->add_option("--output", p.output, "Sweep CSV path");
    toy_cmd->add_option("--curves", p.curves, "Optional success-curve CSV path");
    add_solver_options(toy_cmd, p.solver);
  }

  // --- grid ---
  GridParams grid_params;
  CLI::App* grid_cmd = app.add_subcommand(
      "grid", "State-estimation experiment: sampling sweep, methods, RMSE, CDFs");
  {
    GridParams& p = grid_params;
    cfg.apply("case", p.case_path);
    cfg.apply("buses", p.buses);
    cfg.apply("load_scale", p.load_scale);
    cfg.apply("network_seed", p.network_seed);
    cfg.apply("fractions", p.fractions);
    cfg.apply("trials", p.trials);
    cfg.apply("jobs", p.jobs);
    cfg.apply("pmu", p.pmu);
    cfg.apply("methods", p.methods);
    cfg.apply("mag_threshold", p.mag_threshold);
    cfg.apply("ang_threshold", p.ang_threshold);
    cfg.apply("tolerance", p.tolerance);
    cfg.apply("structural_zeros", p.structural);
    cfg.apply("seed", p.seed);
    cfg.apply("output", p.output);
    cfg.apply("aggregate", p.aggregate);
    cfg.apply("cdf", p.cdf);
    cfg.apply("probe_fractions", p.probe_fractions);
    cfg.apply("probe_sample_fraction", p.probe_sample_fraction);
    cfg.apply("probe_rank", p.probe_rank);
    cfg.apply("probe_output", p.probe_output);
    grid_cmd->fallthrough();
    grid_cmd->add_option("--case", p.case_path, "Case file (.json native, .m table format)");
    grid_cmd->add_option("--buses", p.buses, "Generate a random radial case of this size");
    grid_cmd->add_option("--load-scale", p.load_scale, "Generator load scale (pu)");
    grid_cmd->add_option("--network-seed", p.network_seed, "Generator seed");
    grid_cmd->add_option("--fractions", p.fractions, "Sampling fractions in [0,1]")
        ->delimiter(',');
    grid_cmd->add_option("--trials", p.trials, "Trials per fraction");
    grid_cmd->add_option("--jobs", p.jobs, "Parallel trial evaluation");
    grid_cmd->add_option("--pmu", p.pmu, "PMU bus ids (external ids)")->delimiter(',');
    grid_cmd->add_option("--methods", p.methods, "Methods to run")->delimiter(',');
    grid_cmd->add_option("--mag-threshold", p.mag_threshold, "Magnitude RMSE threshold (pu)");
    grid_cmd->add_option("--ang-threshold", p.ang_threshold, "Angle RMSE threshold (degrees)");
    grid_cmd->add_option("--tolerance", p.tolerance, "Relative recovery tolerance");
    grid_cmd->add_flag("--structural-zeros,!--no-structural-zeros", p.structural,
                       "Pin the known-zero block entries of the state matrix");
    grid_cmd->add_option("--seed", p.seed, "Base trial seed (GRIDFILL_SEED overrides)");
    grid_cmd->add_option("--output", p.output, "Per-trial CSV path");
    grid_cmd->add_option("--aggregate", p.aggregate, "Aggregate CSV path");
    grid_cmd->add_option("--cdf", p.cdf, "Empirical CDF CSV path");
    grid_cmd->add_option("--probe-fractions", p.probe_fractions,
                         "Constraint-deletion probe fractions")
        ->delimiter(',');
    grid_cmd->add_option("--probe-sample-fraction", p.probe_sample_fraction,
                         "Sampling fraction used by the probe");
    grid_cmd->add_option("--probe-rank", p.probe_rank, "Subspace rank used by the probe metric");
    grid_cmd->add_option("--probe-output", p.probe_output, "Probe CSV path");
    add_solver_options(grid_cmd, p.solver);
  }

  // --- powerflow ---
  PowerflowParams pf_params;
  CLI::App* pf_cmd = app.add_subcommand("powerflow",
                                        "Solve the power flow and emit the state matrix");
  {
    PowerflowParams& p = pf_params;
    cfg.apply("case", p.case_path);
    cfg.apply("buses", p.buses);
    cfg.apply("load_scale", p.load_scale);
    cfg.apply("seed", p.seed);
    cfg.apply("output", p.output);
    cfg.apply("voltages", p.voltages);
    cfg.apply("report", p.report);
    pf_cmd->fallthrough();
    pf_cmd->add_option("--case", p.case_path, "Case file (.json native, .m table format)");
    pf_cmd->add_option("--buses", p.buses, "Generate a random radial case of this size");
    pf_cmd->add_option("--load-scale", p.load_scale, "Generator load scale (pu)");
    pf_cmd->add_option("--seed", p.seed, "Generator seed (GRIDFILL_SEED overrides)");
    pf_cmd->add_option("--output", p.output, "State matrix CSV path");
    pf_cmd->add_option("--voltages", p.voltages, "Optional per-bus voltage CSV path");
    pf_cmd->add_option("--report", p.report, "Optional report JSON path");
  }

  // --- gen-network ---
  GenParams gen_params;
  CLI::App* gen_cmd = app.add_subcommand("gen-network",
                                         "Generate a random radial case file");
  {
    GenParams& p = gen_params;
    cfg.apply("buses", p.buses);
    cfg.apply("seed", p.seed);
    cfg.apply("load_scale", p.load_scale);
    cfg.apply("output", p.output);
    gen_cmd->fallthrough();
    gen_cmd->add_option("--buses", p.buses, "Bus count (>= 2)");
    gen_cmd->add_option("--seed", p.seed, "Generator seed (GRIDFILL_SEED overrides)");
    gen_cmd->add_option("--load-scale", p.load_scale, "Load scale (pu)");
    gen_cmd->add_option("--output", p.output, "Case JSON path");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (solve_cmd->parsed()) return guarded([&] { return run_solve(solve_params, false); });
  if (ls_cmd->parsed()) return guarded([&] { return run_solve(solve_params, true); });
  if (coh_cmd->parsed()) return guarded([&] { return run_coherence(coh_params); });
  if (scree_cmd->parsed()) return guarded([&] { return run_scree(scree_params); });
  if (toy_cmd->parsed()) return guarded([&] { return run_toy(toy_params); });
  if (grid_cmd->parsed()) return guarded([&] { return run_grid(grid_params); });
  if (pf_cmd->parsed()) return guarded([&] { return run_powerflow(pf_params); });
  if (gen_cmd->parsed()) return guarded([&] { return run_gen_network(gen_params); });
  return 0;
}
