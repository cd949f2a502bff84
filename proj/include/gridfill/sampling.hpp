#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "gridfill/core.hpp"
#include "gridfill/errors.hpp"
#include "gridfill/powergrid.hpp"
#include "gridfill/rng.hpp"
#include "gridfill/solver.hpp"
#include "gridfill/subspace.hpp"

namespace gridfill {

// ---------------------------------------------------------------------------
// Observation models
// ---------------------------------------------------------------------------

enum class Provenance { kUniformPrefix, kBernoulli, kGrid };

inline std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kUniformPrefix: return "uniform-prefix";
    case Provenance::kBernoulli: return "bernoulli";
    case Provenance::kGrid: return "grid";
  }
  return "unknown";
}

/// An ordered set of revealed locations; values are bound at use time from
/// whatever truth matrix the experiment samples.
struct ObservationSet {
  Index rows = 0;
  Index cols = 0;
  std::vector<Entry> entries;
  Provenance provenance = Provenance::kUniformPrefix;

  /// Bind values from a truth matrix.
  std::vector<EntryValue> bind(const Matrix& truth) const {
    if (truth.rows() != rows || truth.cols() != cols) {
      throw InvalidInputError("truth matrix shape does not match observation set");
    }
    std::vector<EntryValue> out;
    out.reserve(entries.size());
    for (const Entry& e : entries) out.push_back({e.row, e.col, truth(e.row, e.col)});
    return out;
  }
};

/// First m locations of a seeded uniform permutation of all eligible
/// locations (everything except `exclude`). The same seed yields one fixed
/// permutation, so growing m extends the previous set — experiments that
/// sweep m reuse a single stream per trial.
inline ObservationSet uniform_entries(Index rows, Index cols, Index m, std::uint64_t seed,
                                      const std::vector<Entry>& exclude = {}) {
  if (rows < 1 || cols < 1) throw InvalidInputError("shape must be positive");
  std::set<std::pair<Index, Index>> excluded;
  for (const Entry& e : exclude) {
    if (e.row < 0 || e.row >= rows || e.col < 0 || e.col >= cols) {
      throw InvalidInputError("excluded entry out of bounds");
    }
    excluded.insert({e.row, e.col});
  }
  std::vector<Entry> eligible;
  eligible.reserve(static_cast<std::size_t>(rows * cols) - excluded.size());
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      if (excluded.find({i, j}) == excluded.end()) eligible.push_back({i, j});
    }
  }
  if (m < 0 || m > static_cast<Index>(eligible.size())) {
    throw InvalidInputError("sample count " + std::to_string(m) + " outside [0, " +
                            std::to_string(eligible.size()) + "] eligible locations");
  }
  Rng rng(seed);
  rng.shuffle(eligible);
  eligible.resize(static_cast<std::size_t>(m));
  return {rows, cols, std::move(eligible), Provenance::kUniformPrefix};
}

/// Independent inclusion of each location with probability p = m / (rows·cols),
/// scanned in row-major order under the seeded RNG.
inline ObservationSet bernoulli_entries(Index rows, Index cols, Index m, std::uint64_t seed) {
  if (rows < 1 || cols < 1) throw InvalidInputError("shape must be positive");
  if (m < 0 || m > rows * cols) {
    throw InvalidInputError("expected sample count outside [0, rows*cols]");
  }
  const double p = static_cast<double>(m) / static_cast<double>(rows * cols);
  Rng rng(seed);
  std::vector<Entry> entries;
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      if (rng.uniform() < p) entries.push_back({i, j});
    }
  }
  return {rows, cols, std::move(entries), Provenance::kBernoulli};
}

/// Bus/line unit sampling for the state matrix. PMU buses reveal their full
/// 8-column bus row. The remaining buses and the lines form one unit pool; a
/// seeded permutation of the pool is drawn and the first
/// ⌈fraction × pool size⌉ units are revealed — a sampled bus exposes
/// {P, Q, |V|, |I|}, a sampled line {PFrom, QFrom, PTo, QTo, |I|}. Complex
/// parts and losses of sampled units stay hidden. Growing the fraction under
/// a fixed seed extends the same permutation prefix.
inline ObservationSet grid_sample(Index n_buses, Index n_lines, double fraction,
                                  std::uint64_t seed, const std::vector<Index>& pmu_buses) {
  if (n_buses < 1 || n_lines < 0) throw InvalidInputError("invalid grid shape");
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw InvalidInputError("sampling fraction must lie in [0, 1]");
  }
  std::set<Index> pmus;
  for (Index b : pmu_buses) {
    if (b < 0 || b >= n_buses) throw InvalidInputError("PMU bus index out of range");
    if (!pmus.insert(b).second) throw InvalidInputError("duplicate PMU bus");
  }

  ObservationSet out;
  out.rows = n_buses + n_lines;
  out.cols = StateMatrix::kColumns;
  out.provenance = Provenance::kGrid;
  for (Index b : pmus) {
    for (Index col = 0; col < StateMatrix::kPFrom; ++col) out.entries.push_back({b, col});
  }

  struct Unit {
    bool is_bus;
    Index index;
  };
  std::vector<Unit> pool;
  for (Index b = 0; b < n_buses; ++b) {
    if (pmus.find(b) == pmus.end()) pool.push_back({true, b});
  }
  for (Index l = 0; l < n_lines; ++l) pool.push_back({false, l});

  Rng rng(seed);
  rng.shuffle(pool);
  const Index take = static_cast<Index>(
      std::ceil(fraction * static_cast<double>(pool.size()) - 1e-12));
  const Index count = std::min<Index>(take, static_cast<Index>(pool.size()));
  for (Index u = 0; u < count; ++u) {
    const Unit& unit = pool[static_cast<std::size_t>(u)];
    if (unit.is_bus) {
      out.entries.push_back({unit.index, StateMatrix::kP});
      out.entries.push_back({unit.index, StateMatrix::kQ});
      out.entries.push_back({unit.index, StateMatrix::kVMag});
      out.entries.push_back({unit.index, StateMatrix::kIMag});
    } else {
      const Index row = n_buses + unit.index;
      out.entries.push_back({row, StateMatrix::kPFrom});
      out.entries.push_back({row, StateMatrix::kQFrom});
      out.entries.push_back({row, StateMatrix::kPTo});
      out.entries.push_back({row, StateMatrix::kQTo});
      out.entries.push_back({row, StateMatrix::kLineIMag});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Toy instances and tuned constraints
// ---------------------------------------------------------------------------

/// Rank-r truth matrix: uniform(0,1) entries (drawn row-major), then the top
/// r singular triplets recombined.
inline Matrix generate_toy_instance(Index n1, Index n2, Index r, std::uint64_t seed) {
  if (!(r >= 1 && r <= n2 && n2 <= n1)) {
    throw InvalidRankError("toy instance needs 1 <= r <= n2 <= n1");
  }
  Rng rng(seed);
  Matrix a(n1, n2);
  for (Index i = 0; i < n1; ++i) {
    for (Index j = 0; j < n2; ++j) a(i, j) = rng.uniform();
  }
  return truncated_svd(a, r).reconstruct();
}

/// Constraints ⟨Ã, X⟩ = ⟨Ã, M⟩ with Ã = mix·P_T(A) + (1−mix)·P_T⊥(A) for
/// uniform(0,1) draws A, where T is the tangent space of M's rank-r
/// factorization. mix=1 puts the constraint space inside T (maximally
/// informative), mix=0 inside T⊥. count < 0 defaults to dim T.
inline std::vector<DenseConstraint> generate_tuned_constraints(const Matrix& m, Index r,
                                                               Index count, double mix,
                                                               std::uint64_t seed) {
  if (!(mix >= 0.0 && mix <= 1.0)) throw InvalidInputError("mix weight must lie in [0, 1]");
  const SubspaceT t = SubspaceT::from_factors(truncated_svd(m, r));
  if (count < 0) count = t.dim_T;
  if (count < 1) throw InvalidInputError("constraint count must be >= 1");
  Rng rng(seed);
  std::vector<DenseConstraint> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index k = 0; k < count; ++k) {
    Matrix a(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) a(i, j) = rng.uniform();
    }
    const Matrix tuned = mix * project_T(t, a) + (1.0 - mix) * project_T_perp(t, a);
    out.push_back({tuned, frobenius_inner(tuned, m)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo search for the minimum sample count
// ---------------------------------------------------------------------------

enum class Method { kNuclear, kNuclearConstrained, kNuclearConstrainedApprox, kLeastSquares };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kNuclear: return "nuclear";
    case Method::kNuclearConstrained: return "nuclear+const";
    case Method::kNuclearConstrainedApprox: return "nuclear+const+appx";
    case Method::kLeastSquares: return "least-squares";
  }
  return "unknown";
}

struct TrialResult {
  std::uint64_t seed = 0;
  Index m = 0;
  Method method = Method::kNuclear;
  bool recovered = false;
  double relative_error = 0.0;
  std::optional<double> mag_rmse;  // pu; empty when every |V| entry was observed
  std::optional<double> ang_rmse;  // degrees; empty when every Re/Im V was observed
  double wall_seconds = 0.0;
};

/// A completion problem family for the sample-complexity search: fixed truth
/// and side constraints; each trial draws its own observation stream.
struct ToyInstance {
  Matrix truth;
  std::vector<DenseConstraint> constraints;
  std::vector<Entry> excluded;  // never sampled, never given to the solver
  SolverConfig solver;
  std::uint64_t base_seed = 0;
};

struct SearchOptions {
  Index initial_m = 1;  // first nonzero sample count probed by the coarse phase
  Index stride = 1;     // >1: linear refinement at this stride before the unit phase
  bool assume_prefix_monotone = true;  // reuse per-trial verdicts across m
  int jobs = 1;                        // parallel trial evaluation
};

struct SearchPoint {
  Index m = 0;
  double success = 0.0;
};

struct SearchResult {
  Index min_m = -1;  // smallest m with success ≥ target; -1 when saturated
  bool saturated = false;
  std::vector<SearchPoint> curve;  // every (m, success) actually evaluated
};

namespace detail {

/// Solve one trial of the toy search and report whether the truth was
/// recovered.
inline bool toy_trial_recovers(const ToyInstance& instance, Index m, std::uint64_t trial_seed,
                               Method method) {
  const ObservationSet omega = uniform_entries(instance.truth.rows(), instance.truth.cols(), m,
                                               trial_seed, instance.excluded);
  std::vector<SparseConstraint> sparse;
  sparse.reserve(instance.constraints.size());
  for (const DenseConstraint& c : instance.constraints) sparse.push_back(sparsify(c));
  const AffineSystem sys = assemble_affine(omega.bind(instance.truth), sparse,
                                           instance.truth.rows(), instance.truth.cols());
  const SolverReport rep = (method == Method::kLeastSquares)
                               ? solve_least_squares(sys)
                               : solve_nuclear(sys, instance.solver);
  return exact_recovery(rep.solution, instance.truth, instance.solver.exactness_tolerance);
}

/// Run `work(k)` for k in [0, count) on up to `jobs` threads; results land in
/// per-index slots so the outcome is independent of scheduling.
template <typename Work>
inline void for_each_index(Index count, int jobs, Work&& work) {
  if (jobs <= 1 || count <= 1) {
    for (Index k = 0; k < count; ++k) work(k);
    return;
  }
  std::atomic<Index> next{0};
  const int n_threads = static_cast<int>(std::min<Index>(jobs, count));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) {
    threads.emplace_back([&]() {
      for (Index k = next.fetch_add(1); k < count; k = next.fetch_add(1)) work(k);
    });
  }
  for (std::thread& th : threads) th.join();
}

}  // namespace detail

/// Smallest sample count m at which the fraction of recovering trials reaches
/// `target_success`, searched with a coarse doubling phase bracketing the
/// transition and a bisection refinement down to unit resolution (recovery is
/// monotone in m per trial because each trial extends one fixed permutation
/// prefix, so bisection reproduces the unit-stride answer). Trial k draws its
/// observations with seed base_seed + k regardless of evaluation order. If
/// even every eligible location misses the target, the result is flagged
/// saturated instead of raising an error.
inline SearchResult min_samples_search(const ToyInstance& instance, double target_success,
                                       int trials, double tolerance, Method method,
                                       const SearchOptions& opts = {}) {
  if (trials < 1) throw InvalidInputError("search needs at least one trial");
  if (!(target_success >= 0.0 && target_success <= 1.0)) {
    throw InvalidInputError("target success must lie in [0, 1]");
  }
  if (opts.initial_m < 1 || opts.stride < 1) {
    throw InvalidInputError("initial_m and stride must be >= 1");
  }
  ToyInstance inst = instance;
  inst.solver.exactness_tolerance = tolerance;
  inst.solver.validate();
  const Index n_eligible =
      inst.truth.rows() * inst.truth.cols() - static_cast<Index>(inst.excluded.size());

  // Per-trial verdict memo. Under prefix monotonicity two bounds suffice;
  // otherwise exact verdicts are kept per m.
  struct TrialMemo {
    Index lowest_success = -1;
    Index highest_failure = -1;
    std::map<Index, bool> exact;
  };
  std::vector<TrialMemo> memo(static_cast<std::size_t>(trials));

  SearchResult result;
  const auto success_at = [&](Index m) -> double {
    std::vector<Index> pending;
    std::vector<char> verdict(static_cast<std::size_t>(trials), 0);
    for (int k = 0; k < trials; ++k) {
      TrialMemo& tm = memo[static_cast<std::size_t>(k)];
      if (opts.assume_prefix_monotone) {
        if (tm.lowest_success >= 0 && m >= tm.lowest_success) {
          verdict[static_cast<std::size_t>(k)] = 1;
          continue;
        }
        if (tm.highest_failure >= 0 && m <= tm.highest_failure) continue;
      } else if (auto it = tm.exact.find(m); it != tm.exact.end()) {
        verdict[static_cast<std::size_t>(k)] = it->second ? 1 : 0;
        continue;
      }
      pending.push_back(k);
    }
    detail::for_each_index(static_cast<Index>(pending.size()), opts.jobs, [&](Index p) {
      const int k = static_cast<int>(pending[static_cast<std::size_t>(p)]);
      const bool ok = detail::toy_trial_recovers(inst, m, inst.base_seed + static_cast<std::uint64_t>(k),
                                                 method);
      verdict[static_cast<std::size_t>(k)] = ok ? 1 : 0;
      TrialMemo& tm = memo[static_cast<std::size_t>(k)];
      if (ok) {
        if (tm.lowest_success < 0 || m < tm.lowest_success) tm.lowest_success = m;
      } else {
        tm.highest_failure = std::max(tm.highest_failure, m);
      }
      tm.exact[m] = ok;
    });
    Index hits = 0;
    for (int k = 0; k < trials; ++k) hits += verdict[static_cast<std::size_t>(k)];
    const double success = static_cast<double>(hits) / static_cast<double>(trials);
    result.curve.push_back({m, success});
    return success;
  };

  // Coarse phase: m = 0, then initial_m doubling until the target is met.
  Index lo = -1;  // highest m known to miss the target (-1: none)
  Index hi = -1;  // lowest m known to reach it
  if (success_at(0) >= target_success) {
    hi = 0;
  } else {
    lo = 0;
    Index m = std::min(opts.initial_m, n_eligible);
    while (true) {
      if (success_at(m) >= target_success) {
        hi = m;
        break;
      }
      lo = m;
      if (m >= n_eligible) break;
      m = std::min(m * 2, n_eligible);
    }
  }
  if (hi < 0) {
    result.saturated = true;
    result.min_m = -1;
  } else {
    // Optional stride walk narrows the bracket before the unit bisection.
    while (opts.stride > 1 && hi - lo > opts.stride) {
      const Index probe = lo + opts.stride;
      (success_at(probe) >= target_success ? hi : lo) = probe;
    }
    while (hi - lo > 1) {
      const Index mid = lo + (hi - lo) / 2;
      (success_at(mid) >= target_success ? hi : lo) = mid;
    }
    result.min_m = hi;
  }

  std::sort(result.curve.begin(), result.curve.end(),
            [](const SearchPoint& a, const SearchPoint& b) { return a.m < b.m; });
  result.curve.erase(std::unique(result.curve.begin(), result.curve.end(),
                                 [](const SearchPoint& a, const SearchPoint& b) {
                                   return a.m == b.m;
                                 }),
                     result.curve.end());
  return result;
}

// ---------------------------------------------------------------------------
// Voltage error metrics
// ---------------------------------------------------------------------------

struct VoltageRmse {
  std::optional<double> magnitude;  // pu, over unobserved |V| entries
  std::optional<double> angle;      // degrees, over buses with unobserved Re/Im V
};

/// RMSE of the estimated bus voltages over unobserved entries only. Magnitude
/// errors come straight from the |V| column; angles are atan2(Im V, Re V) in
/// degrees with differences wrapped to (−180, 180]. A metric with no
/// unobserved entries is absent rather than zero.
inline VoltageRmse rmse_voltage(const Matrix& estimate, const StateMatrix& truth,
                                const std::vector<Entry>& omega) {
  if (estimate.rows() != truth.values.rows() || estimate.cols() != truth.values.cols()) {
    throw InvalidInputError("estimate shape does not match the truth state matrix");
  }
  std::set<std::pair<Index, Index>> seen;
  for (const Entry& e : omega) seen.insert({e.row, e.col});

  double mag_sq = 0.0, ang_sq = 0.0;
  Index mag_n = 0, ang_n = 0;
  for (Index b = 0; b < truth.n_buses; ++b) {
    if (seen.find({b, StateMatrix::kVMag}) == seen.end()) {
      const double err = estimate(b, StateMatrix::kVMag) - truth.values(b, StateMatrix::kVMag);
      mag_sq += err * err;
      ++mag_n;
    }
    const bool re_seen = seen.find({b, StateMatrix::kReV}) != seen.end();
    const bool im_seen = seen.find({b, StateMatrix::kImV}) != seen.end();
    if (!re_seen || !im_seen) {
      constexpr double kRadToDeg = 180.0 / M_PI;
      const double est = std::atan2(estimate(b, StateMatrix::kImV),
                                    estimate(b, StateMatrix::kReV)) * kRadToDeg;
      const double tru = std::atan2(truth.values(b, StateMatrix::kImV),
                                    truth.values(b, StateMatrix::kReV)) * kRadToDeg;
      const double err = wrap_degrees(est - tru);
      ang_sq += err * err;
      ++ang_n;
    }
  }
  VoltageRmse out;
  if (mag_n > 0) out.magnitude = std::sqrt(mag_sq / static_cast<double>(mag_n));
  if (ang_n > 0) out.angle = std::sqrt(ang_sq / static_cast<double>(ang_n));
  return out;
}

struct CdfRow {
  std::string metric;  // "mag_rmse" | "ang_rmse"
  double value = 0.0;
  double cumulative = 0.0;  // fraction of defined trials at or below value
};

struct ThresholdSummary {
  double mag_fraction = 0.0;  // of trials with a defined magnitude RMSE
  double ang_fraction = 0.0;
  Index mag_defined = 0;
  Index ang_defined = 0;
  std::vector<CdfRow> cdf;
};

/// Fraction of trials whose RMSEs fall at or below each threshold, plus the
/// full empirical CDFs. Trials without a defined metric carry no information
/// about it and are excluded from that metric's numerator and denominator.
inline ThresholdSummary threshold_probability(const std::vector<TrialResult>& results,
                                              double mag_threshold, double ang_threshold) {
  if (results.empty()) throw InvalidInputError("threshold_probability needs at least one trial");
  std::vector<double> mags, angs;
  for (const TrialResult& t : results) {
    if (t.mag_rmse) mags.push_back(*t.mag_rmse);
    if (t.ang_rmse) angs.push_back(*t.ang_rmse);
  }
  std::sort(mags.begin(), mags.end());
  std::sort(angs.begin(), angs.end());

  ThresholdSummary out;
  out.mag_defined = static_cast<Index>(mags.size());
  out.ang_defined = static_cast<Index>(angs.size());
  const auto fraction_below = [](const std::vector<double>& xs, double thr) {
    if (xs.empty()) return 0.0;
    const auto at = std::upper_bound(xs.begin(), xs.end(), thr);
    return static_cast<double>(at - xs.begin()) / static_cast<double>(xs.size());
  };
  out.mag_fraction = fraction_below(mags, mag_threshold);
  out.ang_fraction = fraction_below(angs, ang_threshold);
  for (std::size_t i = 0; i < mags.size(); ++i) {
    out.cdf.push_back({"mag_rmse", mags[i],
                       static_cast<double>(i + 1) / static_cast<double>(mags.size())});
  }
  for (std::size_t i = 0; i < angs.size(); ++i) {
    out.cdf.push_back({"ang_rmse", angs[i],
                       static_cast<double>(i + 1) / static_cast<double>(angs.size())});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constraint-mix sweep (toy experiment)
// ---------------------------------------------------------------------------

struct ToySweepConfig {
  Index n1 = 40;
  Index n2 = 10;
  Index r = 2;
  Index constraint_count = -1;  // <0: dim T
  std::uint64_t base_seed = 0;
  SolverConfig solver;
  double tolerance = 1e-3;
  bool include_baseline = true;  // also search with no constraints at all
  SearchOptions search;
};

struct MixRow {
  bool constrained = true;
  double mix = 0.0;  // meaningless when !constrained
  double mu_q_perp = 1.0;
  double nu_q_perp = 1.0;
  Index min_m = -1;
  bool saturated = false;
  std::vector<SearchPoint> curve;
};

/// One row per constraint mix: coverage metrics of the tuned constraint space
/// plus the searched minimum sample count; optionally an unconstrained
/// baseline row (flagged constrained=false). All mixes share the same truth
/// matrix, the same constraint draws (only the mix weighting differs), and
/// the same per-trial observation streams, so rows are directly comparable.
inline std::vector<MixRow> constraint_mix_sweep(const ToySweepConfig& config,
                                                const std::vector<double>& mixes,
                                                double target_success, int trials) {
  for (double mix : mixes) {
    if (!(mix >= 0.0 && mix <= 1.0)) throw InvalidInputError("mix weights must lie in [0, 1]");
  }
  const Matrix truth = generate_toy_instance(config.n1, config.n2, config.r, config.base_seed);
  const SVDFactors factors = truncated_svd(truth, config.r);
  const SubspaceT t = SubspaceT::from_factors(factors);
  const std::uint64_t constraint_seed = config.base_seed + 1000003;

  std::vector<MixRow> rows;
  for (double mix : mixes) {
    MixRow row;
    row.constrained = true;
    row.mix = mix;
    ToyInstance instance;
    instance.truth = truth;
    instance.constraints = generate_tuned_constraints(truth, config.r, config.constraint_count,
                                                      mix, constraint_seed);
    instance.solver = config.solver;
    instance.base_seed = config.base_seed;

    std::vector<Matrix> dense;
    dense.reserve(instance.constraints.size());
    for (const DenseConstraint& c : instance.constraints) dense.push_back(c.matrix);
    const ConstraintSpaceQ q = orthonormalize_constraints(dense);
    row.mu_q_perp = mu_Q_perp(t, q);
    row.nu_q_perp = nu_Q_perp(factors, q);

    const SearchResult search = min_samples_search(instance, target_success, trials,
                                                   config.tolerance, Method::kNuclear,
                                                   config.search);
    row.min_m = search.min_m;
    row.saturated = search.saturated;
    row.curve = search.curve;
    rows.push_back(std::move(row));
  }

  if (config.include_baseline) {
    MixRow row;
    row.constrained = false;
    row.mix = std::numeric_limits<double>::quiet_NaN();
    const ConstraintSpaceQ q = orthonormalize_constraints(std::vector<Matrix>{});
    row.mu_q_perp = mu_Q_perp(t, q);
    row.nu_q_perp = nu_Q_perp(factors, q);
    ToyInstance instance;
    instance.truth = truth;
    instance.solver = config.solver;
    instance.base_seed = config.base_seed;
    const SearchResult search = min_samples_search(instance, target_success, trials,
                                                   config.tolerance, Method::kNuclear,
                                                   config.search);
    row.min_m = search.min_m;
    row.saturated = search.saturated;
    row.curve = search.curve;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Grid experiment
// ---------------------------------------------------------------------------

struct GridExperimentConfig {
  std::vector<double> fractions{0.2};
  int trials = 20;
  std::uint64_t base_seed = 0;
  std::vector<Index> pmu_buses;  // canonical indices
  std::vector<Method> methods{Method::kNuclear, Method::kNuclearConstrained,
                              Method::kNuclearConstrainedApprox, Method::kLeastSquares};
  SolverConfig solver;
  double mag_threshold = 1e-4;   // pu
  double ang_threshold = 5e-5;   // degrees
  bool include_structural_zeros = true;  // pin the known-zero block entries
  int jobs = 1;
};

struct GridTrialRow {
  double fraction = 0.0;
  TrialResult result;
};

struct GridAggregateRow {
  double fraction = 0.0;
  Method method = Method::kNuclear;
  double mag_below = 0.0;  // threshold_probability fractions
  double ang_below = 0.0;
  Index mag_defined = 0;
  Index ang_defined = 0;
  std::optional<double> median_mag_rmse;
  std::optional<double> median_ang_rmse;
};

struct GridCdfRow {
  double fraction = 0.0;
  Method method = Method::kNuclear;
  CdfRow row;
};

struct GridExperimentResult {
  std::vector<GridTrialRow> trial_rows;          // per (fraction, method, trial)
  std::vector<GridAggregateRow> aggregate_rows;  // per (fraction, method)
  std::vector<GridCdfRow> cdf_rows;
  Index dropped_approx_total = 0;  // filtered fully-observed approx rows, summed
};

namespace detail {

inline std::optional<double> median_of(std::vector<double> xs) {
  if (xs.empty()) return std::nullopt;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return (n % 2 == 1) ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace detail

/// The full state-estimation experiment on one network: solve the power flow,
/// assemble the truth state matrix, then for every (trial, fraction, method)
/// draw a unit sample (one permutation stream per trial, shared across
/// fractions and methods), build the affine system, solve, and score. Methods
/// including approximation rows first drop the fully-observed ones and solve
/// with least-squares rhs reconciliation (approximate equalities can conflict
/// on sparsely observed networks); the least-squares benchmark minimizes the
/// Frobenius norm over the exact-physics feasible set.
inline GridExperimentResult run_grid_experiment(const NetworkCase& net,
                                                const GridExperimentConfig& config) {
  if (config.trials < 1) throw InvalidInputError("grid experiment needs at least one trial");
  for (double f : config.fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw InvalidInputError("fractions must lie in [0, 1]");
  }
  config.solver.validate();
  const PowerFlowSolution pf = solve_power_flow(net);
  const StateMatrix truth = assemble_state_matrix(net, pf);
  const std::vector<SparseConstraint> physics = physics_constraints(net);
  const std::vector<SparseConstraint> approx = approx_constraints(net);
  const std::vector<Entry> zeros = truth.structural_zero_entries();

  GridExperimentResult out;
  struct Task {
    double fraction;
    Method method;
    int trial;
  };
  std::vector<Task> tasks;
  for (double f : config.fractions) {
    for (Method method : config.methods) {
      for (int k = 0; k < config.trials; ++k) tasks.push_back({f, method, k});
    }
  }
  std::vector<GridTrialRow> rows(tasks.size());
  std::atomic<Index> dropped_total{0};

  detail::for_each_index(static_cast<Index>(tasks.size()), config.jobs, [&](Index idx) {
    const Task& task = tasks[static_cast<std::size_t>(idx)];
    const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(task.trial);
    const ObservationSet omega =
        grid_sample(net.n_buses(), net.n_lines(), task.fraction, seed, config.pmu_buses);

    std::vector<EntryValue> knowns = omega.bind(truth.values);
    if (config.include_structural_zeros) {
      for (const Entry& e : zeros) knowns.push_back({e.row, e.col, 0.0});
    }
    // Feasible sets per method: the plain nuclear method sees observations
    // only; "+const" adds the exact power-balance/Ohm's-law equalities; the
    // "+appx" variant further adds the observed voltage-drop approximation
    // rows (rhs-reconciled, since linearization residuals can conflict). The
    // least-squares benchmark minimizes the Frobenius norm over the same
    // feasible set as "+const".
    std::vector<SparseConstraint> constraints;
    bool reconcile = false;
    if (task.method != Method::kNuclear) {
      constraints = physics;
      if (task.method == Method::kNuclearConstrainedApprox) {
        const FilteredConstraints filtered = filter_constraints(approx, omega.entries);
        constraints.insert(constraints.end(), filtered.kept.begin(), filtered.kept.end());
        dropped_total += filtered.dropped;
        reconcile = true;
      }
    }
    const AffineSystem sys = assemble_affine(knowns, constraints, truth.values.rows(),
                                             truth.values.cols(), reconcile);

    const auto start = std::chrono::steady_clock::now();
    const SolverReport rep = (task.method == Method::kLeastSquares)
                                 ? solve_least_squares(sys)
                                 : solve_nuclear(sys, config.solver);
    const auto stop = std::chrono::steady_clock::now();

    TrialResult tr;
    tr.seed = seed;
    tr.m = static_cast<Index>(omega.entries.size());
    tr.method = task.method;
    tr.relative_error = (rep.solution - truth.values).norm() / truth.values.norm();
    tr.recovered = tr.relative_error <= config.solver.exactness_tolerance;
    const VoltageRmse rmse = rmse_voltage(rep.solution, truth, omega.entries);
    tr.mag_rmse = rmse.magnitude;
    tr.ang_rmse = rmse.angle;
    tr.wall_seconds = std::chrono::duration<double>(stop - start).count();
    rows[static_cast<std::size_t>(idx)] = {task.fraction, tr};
  });

  out.trial_rows = std::move(rows);
  out.dropped_approx_total = dropped_total.load();

  for (double f : config.fractions) {
    for (Method method : config.methods) {
      std::vector<TrialResult> bucket;
      for (const GridTrialRow& row : out.trial_rows) {
        if (row.fraction == f && row.result.method == method) bucket.push_back(row.result);
      }
      if (bucket.empty()) continue;
      const ThresholdSummary summary =
          threshold_probability(bucket, config.mag_threshold, config.ang_threshold);
      GridAggregateRow agg;
      agg.fraction = f;
      agg.method = method;
      agg.mag_below = summary.mag_fraction;
      agg.ang_below = summary.ang_fraction;
      agg.mag_defined = summary.mag_defined;
      agg.ang_defined = summary.ang_defined;
      std::vector<double> mags, angs;
      for (const TrialResult& t : bucket) {
        if (t.mag_rmse) mags.push_back(*t.mag_rmse);
        if (t.ang_rmse) angs.push_back(*t.ang_rmse);
      }
      agg.median_mag_rmse = detail::median_of(std::move(mags));
      agg.median_ang_rmse = detail::median_of(std::move(angs));
      out.aggregate_rows.push_back(agg);
      for (const CdfRow& c : summary.cdf) out.cdf_rows.push_back({f, method, c});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constraint-deletion probe
// ---------------------------------------------------------------------------

struct DeletionProbeRow {
  double delete_fraction = 0.0;
  int trial = 0;
  double nu_q_perp = 1.0;
  std::optional<double> mag_rmse;
  std::optional<double> ang_rmse;
  bool recovered = false;
};

/// Sensitivity probe: delete a uniformly random subset of the physics
/// constraints, recompute the coverage metric ν_Q⊥ of what remains (against
/// the rank-`rank` subspace of the truth), and rerun one grid trial per
/// deletion fraction. Emitted as data for analysis; nothing is asserted about
/// where constraints stop helping, since that threshold is case-specific.
inline std::vector<DeletionProbeRow> constraint_deletion_probe(
    const NetworkCase& net, const GridExperimentConfig& config,
    const std::vector<double>& delete_fractions, double sample_fraction, Index rank = 5) {
  const PowerFlowSolution pf = solve_power_flow(net);
  const StateMatrix truth = assemble_state_matrix(net, pf);
  const std::vector<SparseConstraint> physics = physics_constraints(net);
  const std::vector<Entry> zeros = truth.structural_zero_entries();
  const SVDFactors factors = truncated_svd(truth.values, std::min(rank, truth.values.cols()));

  std::vector<DeletionProbeRow> out;
  for (double df : delete_fractions) {
    if (!(df >= 0.0 && df <= 1.0)) throw InvalidInputError("delete fractions must lie in [0, 1]");
    for (int k = 0; k < config.trials; ++k) {
      const std::uint64_t seed = config.base_seed + static_cast<std::uint64_t>(k);
      std::vector<SparseConstraint> kept = physics;
      Rng rng(seed + 7919);
      rng.shuffle(kept);
      kept.resize(static_cast<std::size_t>(std::llround(
          (1.0 - df) * static_cast<double>(kept.size()))));

      DeletionProbeRow row;
      row.delete_fraction = df;
      row.trial = k;
      const ConstraintSpaceQ q =
          orthonormalize_constraints(kept, truth.values.rows(), truth.values.cols());
      row.nu_q_perp = nu_Q_perp(factors, q);

      const ObservationSet omega =
          grid_sample(net.n_buses(), net.n_lines(), sample_fraction, seed, config.pmu_buses);
      std::vector<EntryValue> knowns = omega.bind(truth.values);
      if (config.include_structural_zeros) {
        for (const Entry& e : zeros) knowns.push_back({e.row, e.col, 0.0});
      }
      const AffineSystem sys =
          assemble_affine(knowns, kept, truth.values.rows(), truth.values.cols());
      const SolverReport rep = solve_nuclear(sys, config.solver);
      row.recovered = exact_recovery(rep.solution, truth.values,
                                     config.solver.exactness_tolerance);
      const VoltageRmse rmse = rmse_voltage(rep.solution, truth, omega.entries);
      row.mag_rmse = rmse.magnitude;
      row.ang_rmse = rmse.angle;
      out.push_back(std::move(row));
    }
  }
  return out;
}

}  // namespace gridfill
