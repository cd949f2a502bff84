#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gridfill/powergrid.hpp"

namespace gf = gridfill;
using gf::Complex;

namespace {

double worst_violation(const std::vector<gf::SparseConstraint>& cons, const gf::Matrix& s) {
  double worst = 0.0;
  for (const gf::SparseConstraint& c : cons) {
    worst = std::max(worst, std::abs(gf::evaluate(c, s) - c.rhs));
  }
  return worst;
}

std::string write_temp(const std::string& name, const std::string& text) {
  const auto dir = std::filesystem::temp_directory_path() / "gridfill_powergrid_tests";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / name).string();
  std::ofstream out(path);
  out << text;
  return path;
}

}  // namespace

// ---------------------------------------------------------------------------
// Case construction and canonicalization
// ---------------------------------------------------------------------------

TEST_CASE("breadth-first canonicalization orders buses by distance and external id") {
  // External ids deliberately shuffled; topology: 3 feeds 5 and 7, 7 feeds 9.
  std::vector<gf::RawBus> buses{{7, 0.1, 0.0}, {3, 0.0, 0.0}, {9, 0.2, 0.1}, {5, 0.3, 0.2}};
  std::vector<gf::RawLine> lines{{7, 9, 0.01, 0.02}, {3, 7, 0.02, 0.03}, {5, 3, 0.03, 0.01}};
  const gf::NetworkCase c = gf::build_case(buses, lines, 3, Complex(1.02, 0.0));

  REQUIRE(c.n_buses() == 4);
  REQUIRE(c.n_lines() == 3);
  // Slack first, then its neighbors in external-id order, then the next level.
  REQUIRE(c.buses[0].id == 3);
  REQUIRE(c.buses[1].id == 5);
  REQUIRE(c.buses[2].id == 7);
  REQUIRE(c.buses[3].id == 9);
  // Loads follow their buses through the relabeling.
  REQUIRE(c.buses[1].p_load == 0.3);
  REQUIRE(c.buses[2].p_load == 0.1);
  REQUIRE(c.buses[3].q_load == 0.1);
  // Line k feeds bus k+1, and from < to everywhere.
  for (gf::Index l = 0; l < 3; ++l) {
    REQUIRE(c.lines[static_cast<std::size_t>(l)].to == l + 1);
    REQUIRE(c.lines[static_cast<std::size_t>(l)].from < c.lines[static_cast<std::size_t>(l)].to);
    REQUIRE(c.parent_line[static_cast<std::size_t>(l + 1)] == l);
  }
  REQUIRE(c.parent_line[0] == -1);
  REQUIRE(c.lines_out[0] == std::vector<gf::Index>{0, 1});
  REQUIRE(c.lines_out[2] == std::vector<gf::Index>{2});
  // Series admittance G + jB = 1/(R + jX).
  const gf::Line& fed5 = c.lines[0];
  REQUIRE(fed5.r == 0.03);
  REQUIRE(fed5.g == Catch::Approx(0.03 / (0.03 * 0.03 + 0.01 * 0.01)));
  REQUIRE(fed5.b == Catch::Approx(-0.01 / (0.03 * 0.03 + 0.01 * 0.01)));
}

TEST_CASE("canonical form is independent of input line order and direction") {
  std::vector<gf::RawBus> buses{{1, 0.0, 0.0}, {2, 0.1, 0.1}, {4, 0.2, 0.0}, {8, 0.05, 0.02}};
  std::vector<gf::RawLine> a{{1, 2, 0.01, 0.02}, {2, 4, 0.02, 0.02}, {2, 8, 0.03, 0.01}};
  std::vector<gf::RawLine> b{{8, 2, 0.03, 0.01}, {4, 2, 0.02, 0.02}, {2, 1, 0.01, 0.02}};
  const gf::NetworkCase ca = gf::build_case(buses, a, 1, Complex(1.0, 0.0));
  const gf::NetworkCase cb = gf::build_case(buses, b, 1, Complex(1.0, 0.0));
  REQUIRE(ca.n_buses() == cb.n_buses());
  for (gf::Index i = 0; i < ca.n_buses(); ++i) {
    REQUIRE(ca.buses[static_cast<std::size_t>(i)].id == cb.buses[static_cast<std::size_t>(i)].id);
  }
  for (gf::Index l = 0; l < ca.n_lines(); ++l) {
    const gf::Line& la = ca.lines[static_cast<std::size_t>(l)];
    const gf::Line& lb = cb.lines[static_cast<std::size_t>(l)];
    REQUIRE(la.from == lb.from);
    REQUIRE(la.to == lb.to);
    REQUIRE(la.r == lb.r);
    REQUIRE(la.x == lb.x);
  }
}

TEST_CASE("invalid topologies are rejected with specific errors") {
  std::vector<gf::RawBus> three{{1, 0, 0}, {2, 0.1, 0}, {3, 0.1, 0}};
  // Self-loop.
  REQUIRE_THROWS_AS(
      gf::build_case(three, {{2, 2, 0.01, 0.01}, {1, 2, 0.01, 0.01}}, 1, Complex(1, 0)),
      gf::UnsupportedTopologyError);
  // Cycle: connected but one line too many.
  REQUIRE_THROWS_AS(
      gf::build_case(three, {{1, 2, 0.01, 0.01}, {2, 3, 0.01, 0.01}, {3, 1, 0.01, 0.01}}, 1,
                     Complex(1, 0)),
      gf::UnsupportedTopologyError);
  // Disconnected bus.
  REQUIRE_THROWS_AS(gf::build_case(three, {{1, 2, 0.01, 0.01}}, 1, Complex(1, 0)),
                    gf::InvalidInputError);
  // Duplicate parallel line.
  REQUIRE_THROWS_AS(
      gf::build_case(three,
                     {{1, 2, 0.01, 0.01}, {2, 1, 0.02, 0.02}, {2, 3, 0.01, 0.01}}, 1,
                     Complex(1, 0)),
      gf::InvalidInputError);
  // Unknown bus id, duplicate bus id, missing slack, too small, zero impedance.
  REQUIRE_THROWS_AS(gf::build_case(three, {{1, 9, 0.01, 0.01}}, 1, Complex(1, 0)),
                    gf::InvalidInputError);
  std::vector<gf::RawBus> dup{{1, 0, 0}, {1, 0, 0}};
  REQUIRE_THROWS_AS(gf::build_case(dup, {}, 1, Complex(1, 0)), gf::InvalidInputError);
  std::vector<gf::RawBus> two{{1, 0, 0}, {2, 0.1, 0}};
  REQUIRE_THROWS_AS(gf::build_case(two, {{1, 2, 0.01, 0.01}}, 5, Complex(1, 0)),
                    gf::InvalidInputError);
  REQUIRE_THROWS_AS(gf::build_case({{1, 0, 0}}, {}, 1, Complex(1, 0)), gf::InvalidInputError);
  REQUIRE_THROWS_AS(gf::build_case(two, {{1, 2, 0.0, 0.0}}, 1, Complex(1, 0)),
                    gf::InvalidInputError);
  REQUIRE_THROWS_AS(gf::build_case(two, {{1, 2, 0.01, 0.01}}, 1, Complex(0, 0)),
                    gf::InvalidInputError);
}

TEST_CASE("random feeder generation is deterministic per seed") {
  const gf::NetworkCase a = gf::generate_radial_case(30, 11);
  const gf::NetworkCase b = gf::generate_radial_case(30, 11);
  const gf::NetworkCase c = gf::generate_radial_case(30, 12);
  REQUIRE(a.n_buses() == 30);
  REQUIRE(a.n_lines() == 29);
  bool identical = true, differs = false;
  for (gf::Index i = 0; i < 30; ++i) {
    identical = identical &&
                a.buses[static_cast<std::size_t>(i)].p_load ==
                    b.buses[static_cast<std::size_t>(i)].p_load;
    differs = differs || a.buses[static_cast<std::size_t>(i)].p_load !=
                             c.buses[static_cast<std::size_t>(i)].p_load;
  }
  REQUIRE(identical);
  REQUIRE(differs);
  REQUIRE_THROWS_AS(gf::generate_radial_case(1, 0), gf::InvalidInputError);
  REQUIRE_THROWS_AS(gf::generate_radial_case(5, 0, -0.1), gf::InvalidInputError);
}

TEST_CASE("scaling the load parameter scales every load linearly at fixed seed") {
  const gf::NetworkCase big = gf::generate_radial_case(15, 21, 0.04);
  const gf::NetworkCase half = gf::generate_radial_case(15, 21, 0.02);
  for (gf::Index i = 0; i < 15; ++i) {
    REQUIRE(half.buses[static_cast<std::size_t>(i)].p_load ==
            Catch::Approx(0.5 * big.buses[static_cast<std::size_t>(i)].p_load).margin(1e-15));
    REQUIRE(half.buses[static_cast<std::size_t>(i)].q_load ==
            Catch::Approx(0.5 * big.buses[static_cast<std::size_t>(i)].q_load).margin(1e-15));
  }
  // Impedances are untouched by the load scale.
  for (gf::Index l = 0; l < 14; ++l) {
    REQUIRE(big.lines[static_cast<std::size_t>(l)].r == half.lines[static_cast<std::size_t>(l)].r);
    REQUIRE(big.lines[static_cast<std::size_t>(l)].x == half.lines[static_cast<std::size_t>(l)].x);
  }
}

// ---------------------------------------------------------------------------
// Power flow
// ---------------------------------------------------------------------------

TEST_CASE("two-bus power flow matches the closed-form solution") {
  const double r = 0.03, x = 0.04, p = 0.1, q = 0.05;
  std::vector<gf::RawBus> buses{{1, 0.0, 0.0}, {2, p, q}};
  std::vector<gf::RawLine> lines{{1, 2, r, x}};
  const gf::NetworkCase c = gf::build_case(buses, lines, 1, Complex(1.0, 0.0));
  const gf::PowerFlowSolution sol = gf::solve_power_flow(c);
  REQUIRE(sol.converged);
  REQUIRE(sol.residual <= 1e-10);

  // Exact 2-bus solution: write conj(V2) = a - jb with V1 = 1. Then
  // b = R*q - X*p and a is the high-voltage root of a^2 - a + (b^2 + Rp + Xq).
  const double b = r * q - x * p;
  const double a = 0.5 * (1.0 + std::sqrt(1.0 - 4.0 * (b * b + r * p + x * q)));
  REQUIRE(sol.voltage[1].real() == Catch::Approx(a).margin(1e-11));
  REQUIRE(sol.voltage[1].imag() == Catch::Approx(b).margin(1e-11));

  // Independent balance check: the power received at bus 2 is the load.
  const Complex i_line = (sol.voltage[0] - sol.voltage[1]) / Complex(r, x);
  const Complex s2 = sol.voltage[1] * std::conj(i_line);
  REQUIRE(s2.real() == Catch::Approx(p).margin(1e-11));
  REQUIRE(s2.imag() == Catch::Approx(q).margin(1e-11));
}

TEST_CASE("voltage magnitude decreases downstream on a loaded feeder") {
  const gf::NetworkCase c = gf::generate_radial_case(40, 5, 0.05);
  const gf::PowerFlowSolution sol = gf::solve_power_flow(c);
  REQUIRE(sol.converged);
  REQUIRE(std::abs(sol.voltage[0] - c.slack_voltage) == 0.0);
  for (gf::Index b = 1; b < 40; ++b) {
    const gf::Index parent = c.lines[static_cast<std::size_t>(c.parent_line[static_cast<std::size_t>(b)])].from;
    REQUIRE(std::abs(sol.voltage[static_cast<std::size_t>(b)]) <
            std::abs(sol.voltage[static_cast<std::size_t>(parent)]) + 1e-12);
  }
}

TEST_CASE("an unservable load has no power-flow solution") {
  std::vector<gf::RawBus> buses{{1, 0.0, 0.0}, {2, 100.0, 50.0}};
  std::vector<gf::RawLine> lines{{1, 2, 0.05, 0.05}};
  const gf::NetworkCase c = gf::build_case(buses, lines, 1, Complex(1.0, 0.0));
  REQUIRE_THROWS_AS(gf::solve_power_flow(c), gf::NoSolutionError);
}

// ---------------------------------------------------------------------------
// State matrix
// ---------------------------------------------------------------------------

TEST_CASE("state matrix satisfies every physical equation family") {
  for (unsigned seed : {1u, 2u, 3u}) {
    const gf::NetworkCase c = gf::generate_radial_case(25, seed, 0.05);
    const gf::PowerFlowSolution sol = gf::solve_power_flow(c);
    const gf::StateMatrix m = gf::assemble_state_matrix(c, sol);
    REQUIRE(m.values.rows() == 25 + 24);
    REQUIRE(m.values.cols() == 17);
    const gf::PhysicsResiduals res = gf::residuals(c, m);
    REQUIRE(res.max_residual() <= 1e-9);
  }
}

TEST_CASE("residuals detect a perturbed state") {
  const gf::NetworkCase c = gf::generate_radial_case(10, 4);
  gf::StateMatrix m = gf::assemble_state_matrix(c, gf::solve_power_flow(c));
  m.values(3, gf::StateMatrix::kReV) += 0.01;
  const gf::PhysicsResiduals res = gf::residuals(c, m);
  REQUIRE(res.ohms_law > 1e-4);             // Ohm's law on the adjacent lines breaks
  REQUIRE(res.magnitude_consistency > 1e-4);  // |V| no longer matches Re/Im
}

TEST_CASE("structural zeros cover exactly the off-block entries") {
  const gf::NetworkCase c = gf::generate_radial_case(8, 9);
  const gf::StateMatrix m = gf::assemble_state_matrix(c, gf::solve_power_flow(c));
  const std::vector<gf::Entry> zeros = m.structural_zero_entries();
  REQUIRE(static_cast<gf::Index>(zeros.size()) == 8 * 9 + 7 * 8);
  for (const gf::Entry& e : zeros) {
    const bool bus_row = e.row < 8;
    REQUIRE(bus_row == (e.col >= gf::StateMatrix::kPFrom));
    REQUIRE(m.values(e.row, e.col) == 0.0);
  }
  REQUIRE_FALSE(m.structural_zero_mask(0, gf::StateMatrix::kP));
  REQUIRE(m.structural_zero_mask(0, gf::StateMatrix::kPFrom));
  REQUIRE(m.structural_zero_mask(8, gf::StateMatrix::kP));
}

TEST_CASE("state assembly refuses a non-converged solution") {
  const gf::NetworkCase c = gf::generate_radial_case(5, 3);
  gf::PowerFlowSolution stale;  // converged = false, no voltages
  REQUIRE_THROWS_AS(gf::assemble_state_matrix(c, stale), gf::StaleSolutionError);
}

// ---------------------------------------------------------------------------
// Linear constraints
// ---------------------------------------------------------------------------

TEST_CASE("exact physics rows vanish on the true state and count 4(nb+nl)") {
  for (gf::Index n : {2, 12, 30}) {
    const gf::NetworkCase c = gf::generate_radial_case(n, 7, 0.05);
    const gf::StateMatrix m = gf::assemble_state_matrix(c, gf::solve_power_flow(c));
    const std::vector<gf::SparseConstraint> phys = gf::physics_constraints(c);
    REQUIRE(static_cast<gf::Index>(phys.size()) == 4 * (n + (n - 1)));
    REQUIRE(worst_violation(phys, m.values) <= 1e-10);
  }
}

TEST_CASE("voltage-drop rows are approximate with quadratically scaling residual") {
  // Same feeder/seed at two load scales, loads exactly halved.
  const gf::NetworkCase full = gf::generate_radial_case(20, 13, 0.04);
  const gf::NetworkCase half = gf::generate_radial_case(20, 13, 0.02);
  const gf::StateMatrix mf = gf::assemble_state_matrix(full, gf::solve_power_flow(full));
  const gf::StateMatrix mh = gf::assemble_state_matrix(half, gf::solve_power_flow(half));
  const std::vector<gf::SparseConstraint> af = gf::approx_constraints(full);
  REQUIRE(static_cast<gf::Index>(af.size()) == full.n_lines());
  const double rf = worst_violation(af, mf.values);
  const double rh = worst_violation(gf::approx_constraints(half), mh.values);
  REQUIRE(rf > 0.0);          // genuinely approximate...
  REQUIRE(rf < 1e-3);         // ...but small in the light-load regime
  // Halving the loads divides the worst residual by ~4 (quadratic decay).
  REQUIRE(rf / rh == Catch::Approx(4.0).margin(0.8));
}

TEST_CASE("constraint filtering drops rows whose entries are all observed") {
  std::vector<gf::SparseConstraint> cons{
      {{{0, 0, 1.0}, {1, 1, 1.0}}, 0.0},
      {{{0, 0, 1.0}, {2, 2, 1.0}}, 0.0},
  };
  const std::vector<gf::Entry> observed{{0, 0}, {1, 1}};
  const gf::FilteredConstraints f = gf::filter_constraints(cons, observed);
  REQUIRE(f.dropped == 1);
  REQUIRE(f.kept.size() == 1);
  REQUIRE(f.kept[0].terms[1].row == 2);
}

// ---------------------------------------------------------------------------
// Case file parsing
// ---------------------------------------------------------------------------

namespace {
const char* kMatpowerText = R"(function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
  1 3 0   0   0 0 1 1.02 -1.5 12.66 1 1.1 0.9;  % slack
  2 1 50  20  0 0 1 1.0  0    12.66 1 1.1 0.9;
  3 1 30  10  0 0 1 1.0  0    12.66 1 1.1 0.9
];
mpc.branch = [
  1 2 0.01 0.02 0 0 0 0 0 0 1 -360 360;
  2 3 0.02 0.01 0 0 0 0 0 0 1 -360 360
];
)";
}

TEST_CASE("the tabular converter reads buses, branches, and the slack voltage") {
  const gf::NetworkCase c = gf::load_matpower(kMatpowerText);
  REQUIRE(c.n_buses() == 3);
  REQUIRE(c.n_lines() == 2);
  // Loads are converted to per-unit on the 100 MVA base.
  REQUIRE(c.buses[1].p_load == Catch::Approx(0.5));
  REQUIRE(c.buses[1].q_load == Catch::Approx(0.2));
  REQUIRE(c.buses[2].p_load == Catch::Approx(0.3));
  // Slack voltage from VM, VA (degrees).
  const double va = -1.5 * M_PI / 180.0;
  REQUIRE(c.slack_voltage.real() == Catch::Approx(1.02 * std::cos(va)));
  REQUIRE(c.slack_voltage.imag() == Catch::Approx(1.02 * std::sin(va)));
  REQUIRE(c.lines[0].r == Catch::Approx(0.01));
  REQUIRE(c.lines[1].x == Catch::Approx(0.01));
}

TEST_CASE("tabular converter rejects malformed input") {
  REQUIRE_THROWS_AS(gf::load_matpower("mpc.bus = [1 3 0 0];"), gf::ParseError);  // no baseMVA
  REQUIRE_THROWS_AS(gf::load_matpower("mpc.baseMVA = 100;"), gf::ParseError);    // no bus table
  REQUIRE_THROWS_AS(gf::load_matpower("mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0;\n"),
                    gf::ParseError);  // unterminated
  REQUIRE_THROWS_AS(
      gf::load_matpower("mpc.baseMVA = 100;\nmpc.bus = [1 3 0;];\nmpc.branch = [];"),
      gf::ParseError);  // short bus row
  REQUIRE_THROWS_AS(
      gf::load_matpower(
          "mpc.baseMVA = 100;\nmpc.bus = [1 1 0 0; 2 1 0 0];\nmpc.branch = [1 2 0.1 0.1];"),
      gf::ParseError);  // no slack bus
  REQUIRE_THROWS_AS(
      gf::load_matpower(
          "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0; 2 3 0 0];\nmpc.branch = [1 2 0.1 0.1];"),
      gf::InvalidInputError);  // two slack buses
  REQUIRE_THROWS_AS(
      gf::load_matpower("mpc.baseMVA = 0;\nmpc.bus = [1 3 0 0];\nmpc.branch = [];"),
      gf::ParseError);  // non-positive base
}

TEST_CASE("native JSON cases parse and validate") {
  const std::string good = R"({
    "buses": [{"id": 1}, {"id": 2, "p_load": 0.1, "q_load": 0.05}],
    "lines": [{"from": 1, "to": 2, "r": 0.01, "x": 0.02}],
    "slack": {"id": 1, "v_re": 1.01}
  })";
  const gf::NetworkCase c = gf::load_case_json(good);
  REQUIRE(c.n_buses() == 2);
  REQUIRE(c.buses[1].p_load == 0.1);
  REQUIRE(c.slack_voltage == Complex(1.01, 0.0));

  REQUIRE_THROWS_AS(gf::load_case_json("not json"), gf::ParseError);
  REQUIRE_THROWS_AS(gf::load_case_json("{\"buses\": []}"), gf::ParseError);
  REQUIRE_THROWS_AS(gf::load_case_json(R"({"buses":[{"id":1},{"id":2}],
    "lines":[{"from":1,"to":2,"r":0.01}], "slack":{"id":1}})"),
                    gf::ParseError);  // line missing x
}

TEST_CASE("file loading dispatches on the extension") {
  const std::string mpath = write_temp("case3.m", kMatpowerText);
  const gf::NetworkCase cm = gf::load_case(mpath);
  REQUIRE(cm.n_buses() == 3);

  const std::string jpath = write_temp("case2.json", R"({
    "buses": [{"id": 1}, {"id": 2, "p_load": 0.2}],
    "lines": [{"from": 1, "to": 2, "r": 0.02, "x": 0.04}],
    "slack": {"id": 1}
  })");
  const gf::NetworkCase cj = gf::load_case(jpath);
  REQUIRE(cj.n_buses() == 2);
  REQUIRE(cj.slack_voltage == Complex(1.0, 0.0));

  REQUIRE_THROWS_AS(gf::load_case("/nonexistent/case.json"), gf::ParseError);
  std::filesystem::remove(mpath);
  std::filesystem::remove(jpath);
}
