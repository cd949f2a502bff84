#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gridfill/core.hpp"
#include "gridfill/errors.hpp"
#include "gridfill/rng.hpp"

namespace gridfill {

using Complex = std::complex<double>;

// ---------------------------------------------------------------------------
// Network model
// ---------------------------------------------------------------------------

struct Bus {
  int id = 0;  // external id, preserved through canonicalization
  double p_load = 0.0;
  double q_load = 0.0;
};

struct Line {
  Index from = 0;  // canonical bus index, always < to
  Index to = 0;
  double r = 0.0;
  double x = 0.0;
  double g = 0.0;  // series conductance  r / (r² + x²)
  double b = 0.0;  // series susceptance −x / (r² + x²)
};

/// Radial (tree) distribution network in per-unit. Canonical form: the slack
/// bus has index 0, indices follow breadth-first order from the slack (so
/// every line has from < to), and line k is the unique line feeding bus k+1.
struct NetworkCase {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  Complex slack_voltage{1.0, 0.0};
  std::vector<std::vector<Index>> lines_out;  // per bus: lines it feeds
  std::vector<Index> parent_line;             // per bus: feeding line (-1 for slack)

  Index n_buses() const { return static_cast<Index>(buses.size()); }
  Index n_lines() const { return static_cast<Index>(lines.size()); }
};

struct RawBus {
  int id = 0;
  double p_load = 0.0;
  double q_load = 0.0;
};

struct RawLine {
  int from_id = 0;
  int to_id = 0;
  double r = 0.0;
  double x = 0.0;
};

/// Validate an arbitrary bus/line list and relabel it into canonical form.
inline NetworkCase build_case(const std::vector<RawBus>& buses, const std::vector<RawLine>& lines,
                              int slack_id, Complex slack_voltage) {
  if (buses.size() < 2) throw InvalidInputError("a case needs at least 2 buses");
  if (std::abs(slack_voltage) == 0.0) throw InvalidInputError("slack voltage must be nonzero");

  std::map<int, std::size_t> by_id;
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (!by_id.emplace(buses[i].id, i).second) {
      throw InvalidInputError("duplicate bus id " + std::to_string(buses[i].id));
    }
  }
  if (by_id.find(slack_id) == by_id.end()) {
    throw InvalidInputError("slack bus id " + std::to_string(slack_id) + " not present");
  }

  std::set<std::pair<int, int>> seen_pairs;
  std::vector<std::vector<std::size_t>> adjacency(buses.size());
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const RawLine& ln = lines[l];
    auto itf = by_id.find(ln.from_id);
    auto itt = by_id.find(ln.to_id);
    if (itf == by_id.end() || itt == by_id.end()) {
      throw InvalidInputError("line references unknown bus id");
    }
    if (ln.from_id == ln.to_id) {
      throw UnsupportedTopologyError("self-loop at bus " + std::to_string(ln.from_id));
    }
    auto key = std::minmax(ln.from_id, ln.to_id);
    if (!seen_pairs.insert({key.first, key.second}).second) {
      throw InvalidInputError("duplicate line between buses " + std::to_string(key.first) +
                              " and " + std::to_string(key.second));
    }
    if (ln.r * ln.r + ln.x * ln.x <= 0.0) {
      throw InvalidInputError("line impedance must satisfy R^2 + X^2 > 0");
    }
    adjacency[itf->second].push_back(l);
    adjacency[itt->second].push_back(l);
  }

  // Breadth-first relabeling from the slack; neighbor visits ordered by
  // external id so canonical form is independent of input line order.
  const std::size_t root = by_id.at(slack_id);
  std::vector<Index> canonical(buses.size(), -1);
  std::vector<std::size_t> order;
  order.push_back(root);
  canonical[root] = 0;
  std::vector<std::pair<std::size_t, std::size_t>> tree_edges;  // (parent raw, line idx)
  for (std::size_t head = 0; head < order.size(); ++head) {
    const std::size_t u = order[head];
    std::vector<std::pair<int, std::size_t>> next;  // (neighbor external id, line idx)
    for (std::size_t l : adjacency[u]) {
      const RawLine& ln = lines[l];
      const std::size_t v = by_id.at(ln.from_id == buses[u].id ? ln.to_id : ln.from_id);
      if (canonical[v] < 0) next.push_back({buses[v].id, l});
    }
    std::sort(next.begin(), next.end());
    for (const auto& [nid, l] : next) {
      const std::size_t v = by_id.at(nid);
      if (canonical[v] >= 0) continue;  // reached through a parallel path: a loop
      canonical[v] = static_cast<Index>(order.size());
      order.push_back(v);
      tree_edges.push_back({u, l});
    }
  }
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (canonical[i] < 0) {
      throw InvalidInputError("bus " + std::to_string(buses[i].id) +
                              " is disconnected from the slack bus");
    }
  }
  if (lines.size() != buses.size() - 1) {
    throw UnsupportedTopologyError("network contains a loop (" + std::to_string(lines.size()) +
                                   " lines for " + std::to_string(buses.size()) + " buses)");
  }

  NetworkCase c;
  c.slack_voltage = slack_voltage;
  c.buses.resize(buses.size());
  for (std::size_t i = 0; i < buses.size(); ++i) {
    c.buses[static_cast<std::size_t>(canonical[i])] = {buses[i].id, buses[i].p_load,
                                                       buses[i].q_load};
  }
  c.lines.reserve(lines.size());
  std::vector<Line> unordered;
  for (const auto& [parent_raw, l] : tree_edges) {
    const RawLine& ln = lines[l];
    Line out;
    out.from = canonical[parent_raw];
    const std::size_t child_raw =
        by_id.at(ln.from_id == buses[parent_raw].id ? ln.to_id : ln.from_id);
    out.to = canonical[child_raw];
    out.r = ln.r;
    out.x = ln.x;
    const double denom = ln.r * ln.r + ln.x * ln.x;
    out.g = ln.r / denom;
    out.b = -ln.x / denom;
    unordered.push_back(out);
  }
  std::sort(unordered.begin(), unordered.end(),
            [](const Line& a, const Line& b) { return a.to < b.to; });
  c.lines = std::move(unordered);

  c.lines_out.assign(c.buses.size(), {});
  c.parent_line.assign(c.buses.size(), -1);
  for (Index l = 0; l < c.n_lines(); ++l) {
    c.lines_out[static_cast<std::size_t>(c.lines[static_cast<std::size_t>(l)].from)].push_back(l);
    c.parent_line[static_cast<std::size_t>(c.lines[static_cast<std::size_t>(l)].to)] = l;
  }
  return c;
}

/// Parse the native JSON case format:
/// {"buses":[{"id","p_load","q_load"}], "lines":[{"from","to","r","x"}],
///  "slack":{"id","v_re","v_im"}}.
inline NetworkCase load_case_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid case JSON: ") + e.what());
  }
  try {
    std::vector<RawBus> buses;
    for (const auto& b : doc.at("buses")) {
      buses.push_back({b.at("id").get<int>(), b.value("p_load", 0.0), b.value("q_load", 0.0)});
    }
    std::vector<RawLine> lines;
    for (const auto& l : doc.at("lines")) {
      lines.push_back({l.at("from").get<int>(), l.at("to").get<int>(), l.at("r").get<double>(),
                       l.at("x").get<double>()});
    }
    const auto& slack = doc.at("slack");
    return build_case(buses, lines, slack.at("id").get<int>(),
                      Complex(slack.value("v_re", 1.0), slack.value("v_im", 0.0)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("case JSON missing required fields: ") + e.what());
  }
}

/// Minimal MATPOWER-style converter. Recognizes `mpc.baseMVA = <num>;` and
/// the `mpc.bus = [...];` / `mpc.branch = [...];` tables. Bus columns used:
/// BUS_I, BUS_TYPE, PD, QD (MW/MVAr, converted to per-unit by baseMVA) and,
/// when present, VM, VA (columns 8–9) for the slack voltage. Branch columns
/// used: FBUS, TBUS, R, X (R and X already per-unit on the system base). The
/// single type-3 bus is the slack. Everything else is ignored.
inline NetworkCase load_matpower(const std::string& text) {
  const auto read_table = [&text](const std::string& name) -> std::vector<std::vector<double>> {
    const std::size_t at = text.find(name);
    if (at == std::string::npos) throw ParseError("missing " + name + " table");
    const std::size_t open = text.find('[', at);
    const std::size_t close = text.find(']', open);
    if (open == std::string::npos || close == std::string::npos) {
      throw ParseError("unterminated " + name + " table");
    }
    // Strip %-comments per physical line first (a comment may trail a row's
    // semicolon), then accept either ';' or a newline as the row separator.
    std::istringstream body(text.substr(open + 1, close - open - 1));
    std::string line;
    std::string cleaned;
    while (std::getline(body, line)) {
      const std::size_t comment = line.find('%');
      if (comment != std::string::npos) line.resize(comment);
      cleaned += line;
      cleaned += '\n';
    }
    std::replace(cleaned.begin(), cleaned.end(), ';', '\n');
    std::vector<std::vector<double>> rows;
    std::istringstream split(cleaned);
    while (std::getline(split, line)) {
      std::istringstream fields(line);
      std::vector<double> row;
      double v;
      while (fields >> v) row.push_back(v);
      if (!row.empty()) rows.push_back(row);
    }
    return rows;
  };

  double base_mva = 0.0;
  {
    const std::size_t at = text.find("mpc.baseMVA");
    if (at == std::string::npos) throw ParseError("missing mpc.baseMVA");
    const std::size_t eq = text.find('=', at);
    if (eq == std::string::npos) throw ParseError("malformed mpc.baseMVA");
    std::istringstream value(text.substr(eq + 1));
    if (!(value >> base_mva) || base_mva <= 0.0) throw ParseError("invalid baseMVA");
  }

  std::vector<RawBus> buses;
  int slack_id = 0;
  bool have_slack = false;
  Complex slack_voltage(1.0, 0.0);
  for (const auto& row : read_table("mpc.bus")) {
    if (row.size() < 4) throw ParseError("bus row needs at least 4 columns");
    RawBus b;
    b.id = static_cast<int>(row[0]);
    b.p_load = row[2] / base_mva;
    b.q_load = row[3] / base_mva;
    buses.push_back(b);
    if (static_cast<int>(row[1]) == 3) {
      if (have_slack) throw InvalidInputError("multiple slack (type-3) buses");
      have_slack = true;
      slack_id = b.id;
      if (row.size() >= 9) {
        const double vm = row[7];
        const double va = row[8] * M_PI / 180.0;
        slack_voltage = Complex(vm * std::cos(va), vm * std::sin(va));
      }
    }
  }
  if (!have_slack) throw ParseError("no slack (type-3) bus in mpc.bus");

  std::vector<RawLine> lines;
  for (const auto& row : read_table("mpc.branch")) {
    if (row.size() < 4) throw ParseError("branch row needs at least 4 columns");
    lines.push_back({static_cast<int>(row[0]), static_cast<int>(row[1]), row[2], row[3]});
  }
  return build_case(buses, lines, slack_id, slack_voltage);
}

/// Load a case from disk; `.m` files go through the MATPOWER converter,
/// anything else through the JSON parser.
inline NetworkCase load_case(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open case file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.size() > 2 && path.substr(path.size() - 2) == ".m") {
    return load_matpower(buf.str());
  }
  return load_case_json(buf.str());
}

/// Random radial feeder: bus k attaches to a uniformly chosen earlier bus;
/// R, X uniform in [0.005, 0.05] pu; loads uniform in [0, load_scale] pu.
/// Deterministic per seed (draw order per bus: parent, R, X, P, Q).
inline NetworkCase generate_radial_case(Index n_buses, std::uint64_t seed,
                                        double load_scale = 0.05) {
  if (n_buses < 2) throw InvalidInputError("generate_radial_case needs n_buses >= 2");
  if (load_scale < 0.0) throw InvalidInputError("load_scale must be non-negative");
  Rng rng(seed);
  std::vector<RawBus> buses;
  buses.push_back({1, 0.0, 0.0});
  std::vector<RawLine> lines;
  for (Index k = 2; k <= n_buses; ++k) {
    const int parent = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)));
    const double r = rng.uniform(0.005, 0.05);
    const double x = rng.uniform(0.005, 0.05);
    const double p = rng.uniform(0.0, load_scale);
    const double q = rng.uniform(0.0, load_scale);
    buses.push_back({static_cast<int>(k), p, q});
    lines.push_back({parent, static_cast<int>(k), r, x});
  }
  return build_case(buses, lines, 1, Complex(1.0, 0.0));
}

// ---------------------------------------------------------------------------
// Power flow
// ---------------------------------------------------------------------------

struct PowerFlowSolution {
  std::vector<Complex> voltage;  // per canonical bus index
  double residual = 0.0;         // max nodal power mismatch (pu)
  int iterations = 0;
  bool converged = false;
};

/// Backward/forward sweep for radial networks: aggregate load currents up the
/// tree, then propagate voltage drops down from the slack, until the largest
/// complex-voltage change falls below 1e-12 (at most 200 sweeps). A converged
/// solution satisfies nodal power balance to 1e-10 pu; anything else raises
/// the no-solution error.
inline PowerFlowSolution solve_power_flow(const NetworkCase& c, int max_iterations = 200,
                                          double tolerance = 1e-12) {
  const Index nb = c.n_buses();
  const Index nl = c.n_lines();
  std::vector<Complex> v(static_cast<std::size_t>(nb), c.slack_voltage);
  std::vector<Complex> line_current(static_cast<std::size_t>(nl), Complex(0.0, 0.0));
  std::vector<Complex> inflow(static_cast<std::size_t>(nb));

  const auto mismatch = [&]() -> double {
    double worst = 0.0;
    for (Index t = 1; t < nb; ++t) {
      Complex out(0.0, 0.0);
      for (Index l : c.lines_out[static_cast<std::size_t>(t)]) {
        out += line_current[static_cast<std::size_t>(l)];
      }
      const Complex injection =
          out - line_current[static_cast<std::size_t>(c.parent_line[static_cast<std::size_t>(t)])];
      const Complex s = v[static_cast<std::size_t>(t)] * std::conj(injection);
      const Bus& bus = c.buses[static_cast<std::size_t>(t)];
      worst = std::max(worst, std::abs(s + Complex(bus.p_load, bus.q_load)));
    }
    return worst;
  };

  PowerFlowSolution sol;
  for (int it = 1; it <= max_iterations; ++it) {
    sol.iterations = it;
    // Backward: aggregate currents from the leaves toward the slack.
    std::fill(inflow.begin(), inflow.end(), Complex(0.0, 0.0));
    for (Index l = nl - 1; l >= 0; --l) {
      const Line& ln = c.lines[static_cast<std::size_t>(l)];
      const Bus& bus = c.buses[static_cast<std::size_t>(ln.to)];
      const Complex vt = v[static_cast<std::size_t>(ln.to)];
      if (std::abs(vt) < 1e-12) throw NoSolutionError("voltage collapse during sweep");
      const Complex demand = std::conj(Complex(bus.p_load, bus.q_load) / vt);
      line_current[static_cast<std::size_t>(l)] = demand + inflow[static_cast<std::size_t>(ln.to)];
      inflow[static_cast<std::size_t>(ln.from)] += line_current[static_cast<std::size_t>(l)];
    }
    // Forward: update voltages from the slack outward.
    double delta = 0.0;
    for (Index l = 0; l < nl; ++l) {
      const Line& ln = c.lines[static_cast<std::size_t>(l)];
      const Complex vt = v[static_cast<std::size_t>(ln.from)] -
                         Complex(ln.r, ln.x) * line_current[static_cast<std::size_t>(l)];
      if (!std::isfinite(vt.real()) || !std::isfinite(vt.imag())) {
        throw NoSolutionError("power flow diverged (non-finite voltage)");
      }
      delta = std::max(delta, std::abs(vt - v[static_cast<std::size_t>(ln.to)]));
      v[static_cast<std::size_t>(ln.to)] = vt;
    }
    if (delta < tolerance) {
      sol.residual = mismatch();
      if (sol.residual > 1e-10) {
        throw NoSolutionError("power flow stalled with mismatch " + format_double(sol.residual));
      }
      sol.converged = true;
      break;
    }
  }
  if (!sol.converged) {
    throw NoSolutionError("power flow did not converge in " + std::to_string(max_iterations) +
                          " sweeps (last mismatch " + format_double(mismatch()) + ")");
  }
  sol.voltage = std::move(v);
  return sol;
}

// ---------------------------------------------------------------------------
// State matrix
// ---------------------------------------------------------------------------

/// Block state matrix: one row per bus then one row per line, 17 columns.
/// Bus rows populate columns 0–7, line rows columns 8–16; everything else is
/// a structural zero, known a priori.
struct StateMatrix {
  static constexpr Index kColumns = 17;
  // Bus columns.
  static constexpr Index kP = 0, kQ = 1, kReV = 2, kImV = 3, kVMag = 4;
  static constexpr Index kReI = 5, kImI = 6, kIMag = 7;
  // Line columns.
  static constexpr Index kPFrom = 8, kQFrom = 9, kPTo = 10, kQTo = 11;
  static constexpr Index kPLoss = 12, kQLoss = 13;
  static constexpr Index kLineReI = 14, kLineImI = 15, kLineIMag = 16;

  Matrix values;
  Index n_buses = 0;
  Index n_lines = 0;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> structural_zero_mask;

  Index rows() const { return n_buses + n_lines; }
  Index bus_row(Index b) const { return b; }
  Index line_row(Index l) const { return n_buses + l; }

  std::vector<Entry> structural_zero_entries() const {
    std::vector<Entry> out;
    out.reserve(static_cast<std::size_t>(rows() * kColumns));
    for (Index i = 0; i < rows(); ++i) {
      for (Index j = 0; j < kColumns; ++j) {
        if (structural_zero_mask(i, j)) out.push_back({i, j});
      }
    }
    return out;
  }
};

/// Derive every electrical quantity from the converged voltages: line
/// currents by Ohm's law, bus injections by current balance, line-side powers
/// and losses from the complex products, and the magnitude columns.
inline StateMatrix assemble_state_matrix(const NetworkCase& c, const PowerFlowSolution& sol) {
  if (!sol.converged || sol.voltage.size() != static_cast<std::size_t>(c.n_buses())) {
    throw StaleSolutionError("state matrix requires a converged power-flow solution");
  }
  const Index nb = c.n_buses();
  const Index nl = c.n_lines();
  StateMatrix m;
  m.n_buses = nb;
  m.n_lines = nl;
  m.values = Matrix::Zero(nb + nl, StateMatrix::kColumns);
  m.structural_zero_mask.setConstant(nb + nl, StateMatrix::kColumns, false);
  for (Index b = 0; b < nb; ++b) {
    for (Index col = StateMatrix::kPFrom; col < StateMatrix::kColumns; ++col) {
      m.structural_zero_mask(b, col) = true;
    }
  }
  for (Index l = 0; l < nl; ++l) {
    for (Index col = 0; col < StateMatrix::kPFrom; ++col) {
      m.structural_zero_mask(nb + l, col) = true;
    }
  }

  std::vector<Complex> line_current(static_cast<std::size_t>(nl));
  for (Index l = 0; l < nl; ++l) {
    const Line& ln = c.lines[static_cast<std::size_t>(l)];
    line_current[static_cast<std::size_t>(l)] =
        Complex(ln.g, ln.b) * (sol.voltage[static_cast<std::size_t>(ln.from)] -
                               sol.voltage[static_cast<std::size_t>(ln.to)]);
  }

  for (Index b = 0; b < nb; ++b) {
    Complex injection(0.0, 0.0);
    for (Index l : c.lines_out[static_cast<std::size_t>(b)]) {
      injection += line_current[static_cast<std::size_t>(l)];
    }
    if (c.parent_line[static_cast<std::size_t>(b)] >= 0) {
      injection -= line_current[static_cast<std::size_t>(c.parent_line[static_cast<std::size_t>(b)])];
    }
    const Complex vb = sol.voltage[static_cast<std::size_t>(b)];
    const Complex s = vb * std::conj(injection);
    m.values(b, StateMatrix::kP) = s.real();
    m.values(b, StateMatrix::kQ) = s.imag();
    m.values(b, StateMatrix::kReV) = vb.real();
    m.values(b, StateMatrix::kImV) = vb.imag();
    m.values(b, StateMatrix::kVMag) = std::abs(vb);
    m.values(b, StateMatrix::kReI) = injection.real();
    m.values(b, StateMatrix::kImI) = injection.imag();
    m.values(b, StateMatrix::kIMag) = std::abs(injection);
  }

  for (Index l = 0; l < nl; ++l) {
    const Line& ln = c.lines[static_cast<std::size_t>(l)];
    const Complex i = line_current[static_cast<std::size_t>(l)];
    const Complex vs = sol.voltage[static_cast<std::size_t>(ln.from)];
    const Complex vt = sol.voltage[static_cast<std::size_t>(ln.to)];
    const Complex s_from = vs * std::conj(i);
    const Complex s_to = -vt * std::conj(i);
    const double i2 = std::norm(i);
    const Index row = nb + l;
    m.values(row, StateMatrix::kPFrom) = s_from.real();
    m.values(row, StateMatrix::kQFrom) = s_from.imag();
    m.values(row, StateMatrix::kPTo) = s_to.real();
    m.values(row, StateMatrix::kQTo) = s_to.imag();
    m.values(row, StateMatrix::kPLoss) = ln.r * i2;
    m.values(row, StateMatrix::kQLoss) = ln.x * i2;
    m.values(row, StateMatrix::kLineReI) = i.real();
    m.values(row, StateMatrix::kLineImI) = i.imag();
    m.values(row, StateMatrix::kLineIMag) = std::abs(i);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Linear constraints on the state matrix
// ---------------------------------------------------------------------------

/// The exact linear relations among state-matrix entries, as sparse rows with
/// zero right-hand sides: per line, From+To power equals the loss (P and Q);
/// per bus, the injection equals the sum of its line-side powers (P and Q);
/// per bus, current balance (Re and Im); per line, Ohm's law expressed with
/// the series admittance (Re and Im). Exactly 4(n_b + n_l) rows.
inline std::vector<SparseConstraint> physics_constraints(const NetworkCase& c) {
  const Index nb = c.n_buses();
  const Index nl = c.n_lines();
  std::vector<SparseConstraint> out;
  out.reserve(static_cast<std::size_t>(4 * (nb + nl)));
  const auto bus_row = [&](Index b) { return b; };
  const auto line_row = [&](Index l) { return nb + l; };

  // Line power balance: PFrom + PTo − PLoss = 0 (and Q).
  for (Index l = 0; l < nl; ++l) {
    out.push_back({{{line_row(l), StateMatrix::kPFrom, 1.0},
                    {line_row(l), StateMatrix::kPTo, 1.0},
                    {line_row(l), StateMatrix::kPLoss, -1.0}},
                   0.0});
    out.push_back({{{line_row(l), StateMatrix::kQFrom, 1.0},
                    {line_row(l), StateMatrix::kQTo, 1.0},
                    {line_row(l), StateMatrix::kQLoss, -1.0}},
                   0.0});
  }
  // Bus power balance: P_s − Σ_out PFrom − Σ_in PTo = 0 (and Q).
  for (Index b = 0; b < nb; ++b) {
    SparseConstraint p{{{bus_row(b), StateMatrix::kP, 1.0}}, 0.0};
    SparseConstraint q{{{bus_row(b), StateMatrix::kQ, 1.0}}, 0.0};
    for (Index l : c.lines_out[static_cast<std::size_t>(b)]) {
      p.terms.push_back({line_row(l), StateMatrix::kPFrom, -1.0});
      q.terms.push_back({line_row(l), StateMatrix::kQFrom, -1.0});
    }
    if (c.parent_line[static_cast<std::size_t>(b)] >= 0) {
      const Index l = c.parent_line[static_cast<std::size_t>(b)];
      p.terms.push_back({line_row(l), StateMatrix::kPTo, -1.0});
      q.terms.push_back({line_row(l), StateMatrix::kQTo, -1.0});
    }
    out.push_back(std::move(p));
    out.push_back(std::move(q));
  }
  // Bus current balance: Σ_out I − Σ_in I − I_s = 0 (Re and Im).
  for (Index b = 0; b < nb; ++b) {
    SparseConstraint re{{{bus_row(b), StateMatrix::kReI, -1.0}}, 0.0};
    SparseConstraint im{{{bus_row(b), StateMatrix::kImI, -1.0}}, 0.0};
    for (Index l : c.lines_out[static_cast<std::size_t>(b)]) {
      re.terms.push_back({line_row(l), StateMatrix::kLineReI, 1.0});
      im.terms.push_back({line_row(l), StateMatrix::kLineImI, 1.0});
    }
    if (c.parent_line[static_cast<std::size_t>(b)] >= 0) {
      const Index l = c.parent_line[static_cast<std::size_t>(b)];
      re.terms.push_back({line_row(l), StateMatrix::kLineReI, -1.0});
      im.terms.push_back({line_row(l), StateMatrix::kLineImI, -1.0});
    }
    out.push_back(std::move(re));
    out.push_back(std::move(im));
  }
  // Ohm's law per line: I = (G + jB)(V_s − V_t), split into Re and Im.
  for (Index l = 0; l < nl; ++l) {
    const Line& ln = c.lines[static_cast<std::size_t>(l)];
    out.push_back({{{bus_row(ln.from), StateMatrix::kReV, ln.g},
                    {bus_row(ln.to), StateMatrix::kReV, -ln.g},
                    {bus_row(ln.from), StateMatrix::kImV, -ln.b},
                    {bus_row(ln.to), StateMatrix::kImV, ln.b},
                    {line_row(l), StateMatrix::kLineReI, -1.0}},
                   0.0});
    out.push_back({{{bus_row(ln.from), StateMatrix::kReV, ln.b},
                    {bus_row(ln.to), StateMatrix::kReV, -ln.b},
                    {bus_row(ln.from), StateMatrix::kImV, ln.g},
                    {bus_row(ln.to), StateMatrix::kImV, -ln.g},
                    {line_row(l), StateMatrix::kLineImI, -1.0}},
                   0.0});
  }
  return out;
}

/// Linearized voltage-drop relation per line, built on the average line flow
/// (From − To)/2: |V_s| − |V_t| = (R·PFlow + X·QFlow)/|V₁|. The residual on a
/// true state is quadratic in the loading (exact at zero flow). One row per
/// line over the |V| bus entries and the four line power entries.
inline std::vector<SparseConstraint> approx_constraints(const NetworkCase& c) {
  const double v1 = std::abs(c.slack_voltage);
  if (v1 == 0.0) throw InvalidInputError("approx constraints need a nonzero slack magnitude");
  const Index nb = c.n_buses();
  std::vector<SparseConstraint> out;
  out.reserve(static_cast<std::size_t>(c.n_lines()));
  for (Index l = 0; l < c.n_lines(); ++l) {
    const Line& ln = c.lines[static_cast<std::size_t>(l)];
    const double cr = ln.r / (2.0 * v1);
    const double cx = ln.x / (2.0 * v1);
    out.push_back({{{ln.from, StateMatrix::kVMag, 1.0},
                    {ln.to, StateMatrix::kVMag, -1.0},
                    {nb + l, StateMatrix::kPFrom, -cr},
                    {nb + l, StateMatrix::kPTo, cr},
                    {nb + l, StateMatrix::kQFrom, -cx},
                    {nb + l, StateMatrix::kQTo, cx}},
                   0.0});
  }
  return out;
}

struct FilteredConstraints {
  std::vector<SparseConstraint> kept;
  Index dropped = 0;
};

/// Drop every constraint whose referenced entries are all observed (such a
/// row adds no information about unknowns and — for approximate rows — would
/// make the system inconsistent). Intended for approximation constraints;
/// exact physics rows should never be filtered.
inline FilteredConstraints filter_constraints(const std::vector<SparseConstraint>& constraints,
                                              const std::vector<Entry>& observed) {
  std::set<std::pair<Index, Index>> seen;
  for (const Entry& e : observed) seen.insert({e.row, e.col});
  FilteredConstraints out;
  for (const SparseConstraint& c : constraints) {
    bool all_observed = true;
    for (const Coefficient& t : c.terms) {
      if (seen.find({t.row, t.col}) == seen.end()) {
        all_observed = false;
        break;
      }
    }
    if (all_observed) {
      ++out.dropped;
    } else {
      out.kept.push_back(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Residual evaluation
// ---------------------------------------------------------------------------

/// Max absolute residual of each physical equation family evaluated on a
/// state matrix. Family 2 checks both the flow balance and, for non-slack
/// buses, that the injection equals the negated load from the case.
struct PhysicsResiduals {
  double line_power_balance = 0.0;    // From + To = Loss
  double bus_power_balance = 0.0;     // injection vs line-side flows and load
  double current_balance = 0.0;       // Kirchhoff current law
  double ohms_law = 0.0;              // line current vs voltage difference
  double line_power_definition = 0.0; // From/To powers vs complex products
  double loss_definition = 0.0;       // losses vs R|I|², X|I|²
  double magnitude_consistency = 0.0; // magnitude columns vs Re/Im parts

  double max_residual() const {
    return std::max({line_power_balance, bus_power_balance, current_balance, ohms_law,
                     line_power_definition, loss_definition, magnitude_consistency});
  }
};

inline PhysicsResiduals residuals(const NetworkCase& c, const StateMatrix& m) {
  if (m.n_buses != c.n_buses() || m.n_lines != c.n_lines()) {
    throw InvalidInputError("state matrix shape does not match the case");
  }
  const Matrix& s = m.values;
  const Index nb = c.n_buses();
  PhysicsResiduals res;
  const auto acc = [](double& slot, double value) { slot = std::max(slot, std::abs(value)); };

  for (Index l = 0; l < c.n_lines(); ++l) {
    const Line& ln = c.lines[static_cast<std::size_t>(l)];
    const Index row = nb + l;
    const double pf = s(row, StateMatrix::kPFrom), qf = s(row, StateMatrix::kQFrom);
    const double pt = s(row, StateMatrix::kPTo), qt = s(row, StateMatrix::kQTo);
    const double pl = s(row, StateMatrix::kPLoss), ql = s(row, StateMatrix::kQLoss);
    const double ire = s(row, StateMatrix::kLineReI), iim = s(row, StateMatrix::kLineImI);
    const double vs_re = s(ln.from, StateMatrix::kReV), vs_im = s(ln.from, StateMatrix::kImV);
    const double vt_re = s(ln.to, StateMatrix::kReV), vt_im = s(ln.to, StateMatrix::kImV);

    acc(res.line_power_balance, pf + pt - pl);
    acc(res.line_power_balance, qf + qt - ql);
    acc(res.ohms_law, ln.g * (vs_re - vt_re) - ln.b * (vs_im - vt_im) - ire);
    acc(res.ohms_law, ln.b * (vs_re - vt_re) + ln.g * (vs_im - vt_im) - iim);
    acc(res.line_power_definition, pf - (vs_re * ire + vs_im * iim));
    acc(res.line_power_definition, qf - (vs_im * ire - vs_re * iim));
    acc(res.line_power_definition, pt + (vt_re * ire + vt_im * iim));
    acc(res.line_power_definition, qt + (vt_im * ire - vt_re * iim));
    const double i2 = ire * ire + iim * iim;
    acc(res.loss_definition, pl - ln.r * i2);
    acc(res.loss_definition, ql - ln.x * i2);
    acc(res.magnitude_consistency, s(row, StateMatrix::kLineIMag) - std::sqrt(i2));
  }

  for (Index b = 0; b < nb; ++b) {
    double flow_p = 0.0, flow_q = 0.0, flow_re = 0.0, flow_im = 0.0;
    for (Index l : c.lines_out[static_cast<std::size_t>(b)]) {
      flow_p += s(nb + l, StateMatrix::kPFrom);
      flow_q += s(nb + l, StateMatrix::kQFrom);
      flow_re += s(nb + l, StateMatrix::kLineReI);
      flow_im += s(nb + l, StateMatrix::kLineImI);
    }
    if (c.parent_line[static_cast<std::size_t>(b)] >= 0) {
      const Index l = c.parent_line[static_cast<std::size_t>(b)];
      flow_p += s(nb + l, StateMatrix::kPTo);
      flow_q += s(nb + l, StateMatrix::kQTo);
      flow_re -= s(nb + l, StateMatrix::kLineReI);
      flow_im -= s(nb + l, StateMatrix::kLineImI);
    }
    acc(res.bus_power_balance, s(b, StateMatrix::kP) - flow_p);
    acc(res.bus_power_balance, s(b, StateMatrix::kQ) - flow_q);
    if (b > 0) {
      acc(res.bus_power_balance, s(b, StateMatrix::kP) + c.buses[static_cast<std::size_t>(b)].p_load);
      acc(res.bus_power_balance, s(b, StateMatrix::kQ) + c.buses[static_cast<std::size_t>(b)].q_load);
    }
    acc(res.current_balance, flow_re - s(b, StateMatrix::kReI));
    acc(res.current_balance, flow_im - s(b, StateMatrix::kImI));
    acc(res.magnitude_consistency,
        s(b, StateMatrix::kVMag) -
            std::hypot(s(b, StateMatrix::kReV), s(b, StateMatrix::kImV)));
    acc(res.magnitude_consistency,
        s(b, StateMatrix::kIMag) -
            std::hypot(s(b, StateMatrix::kReI), s(b, StateMatrix::kImI)));
  }
  return res;
}

}  // namespace gridfill
