#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gridfill/core.hpp"
#include "gridfill/errors.hpp"

namespace gridfill {

// ---------------------------------------------------------------------------
// Affine constraint system
// ---------------------------------------------------------------------------

/// The affine feasible set of the completion problem: pinned entries (from
/// observations and structural zeros) together with general sparse linear
/// equality rows. The projection factorization is built lazily on first use
/// and is immutable afterwards; a fully-built system is safe to share across
/// concurrent solves.
///
/// Inconsistent right-hand sides (possible when approximate relations are
/// imposed as equalities next to exact observations) are an error by default.
/// With `reconcile_inconsistent` the system instead targets the least-squares
/// compromise: every right-hand side is replaced by its projection onto the
/// range of the reduced constraint operator, which leaves consistent systems
/// untouched and resolves conflicting rows with minimal total adjustment.
class AffineSystem {
 public:
  AffineSystem() = default;
  AffineSystem(Index rows, Index cols, std::vector<EntryValue> entries,
               std::vector<SparseConstraint> constraints, bool reconcile_inconsistent = false)
      : rows_(rows), cols_(cols), entry_constraints_(std::move(entries)),
        linear_constraints_(std::move(constraints)), reconcile_(reconcile_inconsistent) {}

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  const std::vector<EntryValue>& entry_constraints() const { return entry_constraints_; }
  const std::vector<SparseConstraint>& linear_constraints() const { return linear_constraints_; }
  bool reconciles() const { return reconcile_; }

  struct Cache {
    std::vector<char> is_pinned;  // by column-major vec index
    Vector pinned_value;
    std::vector<Index> support;  // free vec indices referenced by general rows
    Matrix w;                    // reduced rows × |support|
    Vector d;                    // reconciled reduced right-hand sides
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
    std::vector<double> rhs_shift;  // per general constraint: reconciled − nominal rhs
    double inconsistency = 0.0;     // max |rhs_shift|
    Index reduced_rows = 0;
  };

  const Cache& cache() const {
    if (!cache_) cache_ = build_cache();
    return *cache_;
  }

  /// Force the factorization now (useful before sharing across threads).
  void prepare() const { cache(); }

  /// Worst right-hand-side adjustment applied by reconciliation (0 for a
  /// consistent system).
  double rhs_inconsistency() const { return cache().inconsistency; }

 private:
  std::shared_ptr<const Cache> build_cache() const;

  Index rows_ = 0;
  Index cols_ = 0;
  std::vector<EntryValue> entry_constraints_;
  std::vector<SparseConstraint> linear_constraints_;
  bool reconcile_ = false;
  mutable std::shared_ptr<const Cache> cache_;
};

/// Merge observations and general constraints into one system. Duplicate
/// observations of the same entry are collapsed; duplicates disagreeing by
/// more than 1e-12 (absolute) are rejected. Feasibility of the general rows
/// is decided when the projection factorization is built.
inline AffineSystem assemble_affine(const std::vector<EntryValue>& omega_values,
                                    const std::vector<SparseConstraint>& constraints,
                                    Index rows, Index cols,
                                    bool reconcile_inconsistent = false) {
  if (rows < 1 || cols < 1) throw InvalidInputError("matrix shape must be positive");
  std::map<std::pair<Index, Index>, double> dedup;
  for (const EntryValue& ev : omega_values) {
    if (ev.row < 0 || ev.row >= rows || ev.col < 0 || ev.col >= cols) {
      throw InvalidInputError("observation (" + std::to_string(ev.row) + "," +
                              std::to_string(ev.col) + ") outside a " + std::to_string(rows) +
                              "x" + std::to_string(cols) + " matrix");
    }
    if (!std::isfinite(ev.value)) throw InvalidInputError("non-finite observation value");
    auto [it, inserted] = dedup.emplace(std::make_pair(ev.row, ev.col), ev.value);
    if (!inserted && std::abs(it->second - ev.value) > 1e-12) {
      throw InconsistentObservationError(
          "conflicting observations at (" + std::to_string(ev.row) + "," +
          std::to_string(ev.col) + "): " + format_double(it->second) + " vs " +
          format_double(ev.value));
    }
  }
  std::vector<EntryValue> entries;
  entries.reserve(dedup.size());
  for (const auto& [key, value] : dedup) entries.push_back({key.first, key.second, value});

  for (const SparseConstraint& c : constraints) {
    if (!std::isfinite(c.rhs)) throw InvalidInputError("non-finite constraint rhs");
    for (const Coefficient& t : c.terms) {
      if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
        throw InvalidInputError("constraint references entry outside matrix shape");
      }
      if (!std::isfinite(t.weight)) throw InvalidInputError("non-finite constraint weight");
    }
  }
  return AffineSystem(rows, cols, std::move(entries), constraints, reconcile_inconsistent);
}

inline std::shared_ptr<const AffineSystem::Cache> AffineSystem::build_cache() const {
  auto cache = std::make_shared<Cache>();
  const Index n = rows_ * cols_;
  cache->is_pinned.assign(static_cast<std::size_t>(n), 0);
  cache->pinned_value = Vector::Zero(n);
  for (const EntryValue& ev : entry_constraints_) {
    const Index idx = vec_index(ev.row, ev.col, rows_);
    cache->is_pinned[static_cast<std::size_t>(idx)] = 1;
    cache->pinned_value(idx) = ev.value;
  }
  cache->rhs_shift.assign(linear_constraints_.size(), 0.0);

  // Reduce every general row over the pinned entries: pinned coordinates move
  // into the right-hand side, so the remaining system acts on free
  // coordinates only (which makes pin-then-project an exact Euclidean
  // projection onto the joint feasible set).
  struct RawRow {
    std::map<Index, double> terms;
    double rhs = 0.0;
    std::size_t origin = 0;  // index into linear_constraints_
  };
  std::vector<RawRow> reduced;
  reduced.reserve(linear_constraints_.size());
  for (std::size_t i = 0; i < linear_constraints_.size(); ++i) {
    const SparseConstraint& c = linear_constraints_[i];
    RawRow row;
    row.rhs = c.rhs;
    row.origin = i;
    for (const Coefficient& t : c.terms) {
      const Index idx = vec_index(t.row, t.col, rows_);
      if (cache->is_pinned[static_cast<std::size_t>(idx)]) {
        row.rhs -= t.weight * cache->pinned_value(idx);
      } else {
        row.terms[idx] += t.weight;
      }
    }
    if (row.terms.empty()) {
      // Fully determined by pinned entries: only consistency remains.
      if (std::abs(row.rhs) > 1e-8) {
        if (!reconcile_) {
          throw InfeasibleSystemError(
              "constraint fully pinned by observations conflicts with its right-hand side by " +
              format_double(std::abs(row.rhs)));
        }
        cache->rhs_shift[i] = -row.rhs;
        cache->inconsistency = std::max(cache->inconsistency, std::abs(row.rhs));
      }
      continue;
    }
    reduced.push_back(std::move(row));
  }

  if (reduced.empty()) return cache;

  std::vector<Index> support;
  {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    for (const RawRow& row : reduced) {
      for (const auto& [idx, w] : row.terms) seen[static_cast<std::size_t>(idx)] = 1;
    }
    for (Index i = 0; i < n; ++i) {
      if (seen[static_cast<std::size_t>(i)]) support.push_back(i);
    }
  }
  std::map<Index, Index> position;
  for (std::size_t p = 0; p < support.size(); ++p) {
    position[support[p]] = static_cast<Index>(p);
  }

  const Index h = static_cast<Index>(reduced.size());
  const Index s = static_cast<Index>(support.size());
  Matrix g = Matrix::Zero(h, s);
  Vector d = Vector::Zero(h);
  for (Index a = 0; a < h; ++a) {
    for (const auto& [idx, w] : reduced[static_cast<std::size_t>(a)].terms) {
      g(a, position[idx]) = w;
    }
    d(a) = reduced[static_cast<std::size_t>(a)].rhs;
  }

  cache->support = std::move(support);
  cache->reduced_rows = h;
  cache->cod.compute(g);

  // Reconcile the right-hand side with the row space: d_rec is the closest
  // attainable value of g·z. For a consistent (possibly redundant) system
  // d_rec == d up to roundoff.
  const Vector z_lsq = cache->cod.solve(d);
  const Vector d_rec = g * z_lsq;
  for (Index a = 0; a < h; ++a) {
    const double shift = d_rec(a) - d(a);
    cache->rhs_shift[reduced[static_cast<std::size_t>(a)].origin] = shift;
    cache->inconsistency = std::max(cache->inconsistency, std::abs(shift));
  }
  if (!reconcile_ && cache->inconsistency > 1e-8) {
    throw InfeasibleSystemError("constraint system is inconsistent: no matrix satisfies all "
                                "rows simultaneously (worst right-hand-side conflict " +
                                format_double(cache->inconsistency) + ")");
  }
  cache->w = std::move(g);
  cache->d = d_rec;
  return cache;
}

/// Euclidean projection of X onto the feasible set: pinned entries are
/// assigned directly, then the free coordinates are corrected by the
/// minimum-norm update x − W⁺(Wx − d) through the cached orthogonal
/// decomposition, which handles rank-deficient (redundant) row sets exactly.
inline Matrix project_affine(const Matrix& x, const AffineSystem& sys) {
  if (x.rows() != sys.rows() || x.cols() != sys.cols()) {
    throw InvalidInputError("matrix shape does not match system shape");
  }
  const AffineSystem::Cache& cache = sys.cache();
  Matrix z = x;
  for (const EntryValue& ev : sys.entry_constraints()) z(ev.row, ev.col) = ev.value;

  if (cache.reduced_rows > 0) {
    const Index s = static_cast<Index>(cache.support.size());
    Vector y(s);
    for (Index p = 0; p < s; ++p) {
      y(p) = z.data()[cache.support[static_cast<std::size_t>(p)]];
    }
    const Vector resid = cache.w * y - cache.d;
    y -= cache.cod.solve(resid);
    for (Index p = 0; p < s; ++p) {
      z.data()[cache.support[static_cast<std::size_t>(p)]] = y(p);
    }
  }
  return z;
}

/// Worst violation by Z of the system actually enforced: nominal right-hand
/// sides plus any reconciliation shifts (zero for consistent systems, so this
/// is then exactly the violation of the original rows).
inline double feasibility_residual(const AffineSystem& sys, const Matrix& z) {
  const AffineSystem::Cache& cache = sys.cache();
  double worst = 0.0;
  for (const EntryValue& ev : sys.entry_constraints()) {
    worst = std::max(worst, std::abs(z(ev.row, ev.col) - ev.value));
  }
  const auto& rows = sys.linear_constraints();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    worst = std::max(worst, std::abs(evaluate(rows[i], z) - rows[i].rhs - cache.rhs_shift[i]));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Singular value thresholding
// ---------------------------------------------------------------------------

/// Proximal operator of τ‖·‖_*: soft-threshold the singular values.
inline Matrix svt(const Matrix& x, double tau) {
  require_finite(x, "svt input");
  if (tau < 0.0) throw InvalidInputError("svt threshold must be non-negative");
  Eigen::JacobiSVD<Matrix> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector s = (svd.singularValues().array() - tau).max(0.0);
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

inline double nuclear_norm(const Matrix& x) {
  return Eigen::JacobiSVD<Matrix>(x).singularValues().sum();
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

struct SolverConfig {
  double rho = 1.0;
  int max_iterations = 5000;
  double primal_tolerance = 1e-7;
  double dual_tolerance = 1e-7;
  double exactness_tolerance = 1e-3;  // relative Frobenius, inclusive
  bool record_objective_trace = false;
  // Residual balancing: every adapt_interval iterations, scale the penalty up
  // (down) by adapt_factor when the primal residual exceeds adapt_threshold
  // times the dual residual (or vice versa), rescaling the running multiplier
  // to match. Keeps the two residuals within a constant factor of each other,
  // which removes the long one-sided convergence tails.
  bool adapt_rho = true;
  int adapt_interval = 10;
  double adapt_factor = 2.0;
  double adapt_threshold = 10.0;

  void validate() const {
    if (rho <= 0.0 || primal_tolerance <= 0.0 || dual_tolerance <= 0.0 ||
        exactness_tolerance <= 0.0 || max_iterations < 1) {
      throw InvalidInputError("solver config fields must be positive (max_iterations >= 1)");
    }
    if (adapt_interval < 1 || adapt_factor <= 1.0 || adapt_threshold <= 1.0) {
      throw InvalidInputError(
          "residual balancing needs adapt_interval >= 1, adapt_factor > 1, adapt_threshold > 1");
    }
  }
};

struct SolverReport {
  Matrix solution;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double objective_value = 0.0;  // nuclear norm, or Frobenius norm for least squares
  double feasibility_residual = 0.0;
  double rhs_inconsistency = 0.0;  // nonzero only for reconciled systems
  bool converged = false;
  std::vector<double> objective_trace;  // per-iteration objective when requested
};

/// Minimum-Frobenius-norm feasible point: the projection of the zero matrix.
inline SolverReport solve_least_squares(const AffineSystem& sys) {
  SolverReport rep;
  rep.solution = project_affine(Matrix::Zero(sys.rows(), sys.cols()), sys);
  rep.objective_value = rep.solution.norm();
  rep.feasibility_residual = feasibility_residual(sys, rep.solution);
  rep.rhs_inconsistency = sys.rhs_inconsistency();
  rep.converged = rep.feasibility_residual <= 1e-7;
  return rep;
}

/// Nuclear-norm minimization over the affine feasible set by operator
/// splitting: alternate the singular-value-thresholding prox with the affine
/// projection, driven by a scaled running multiplier. The feasible iterate Z
/// is warm-started at the least-squares solution and is what gets returned,
/// so the solution always satisfies the constraints to working precision.
/// Non-convergence is reported via the flag, never thrown.
inline SolverReport solve_nuclear(const AffineSystem& sys, const SolverConfig& config = {}) {
  config.validate();
  SolverReport rep;
  if (config.record_objective_trace) {
    rep.objective_trace.reserve(static_cast<std::size_t>(config.max_iterations));
  }

  Matrix z = project_affine(Matrix::Zero(sys.rows(), sys.cols()), sys);
  Matrix u = Matrix::Zero(sys.rows(), sys.cols());
  double rho = config.rho;
  constexpr double kRhoMin = 1e-6;
  constexpr double kRhoMax = 1e8;

  for (int it = 1; it <= config.max_iterations; ++it) {
    Matrix x = svt(z - u, 1.0 / rho);
    Matrix z_new = project_affine(x + u, sys);
    rep.primal_residual = (x - z_new).norm();
    rep.dual_residual = rho * (z_new - z).norm();
    u += x - z_new;
    z = std::move(z_new);
    rep.iterations = it;
    if (config.record_objective_trace) rep.objective_trace.push_back(nuclear_norm(z));
    if (rep.primal_residual <= config.primal_tolerance &&
        rep.dual_residual <= config.dual_tolerance) {
      rep.converged = true;
      break;
    }
    if (config.adapt_rho && it % config.adapt_interval == 0) {
      if (rep.primal_residual > config.adapt_threshold * rep.dual_residual &&
          rho * config.adapt_factor <= kRhoMax) {
        rho *= config.adapt_factor;
        u /= config.adapt_factor;
      } else if (rep.dual_residual > config.adapt_threshold * rep.primal_residual &&
                 rho / config.adapt_factor >= kRhoMin) {
        rho /= config.adapt_factor;
        u *= config.adapt_factor;
      }
    }
  }

  rep.solution = std::move(z);
  rep.objective_value = nuclear_norm(rep.solution);
  rep.feasibility_residual = feasibility_residual(sys, rep.solution);
  rep.rhs_inconsistency = sys.rhs_inconsistency();
  rep.converged = rep.converged && rep.feasibility_residual <= 1e-7;
  return rep;
}

/// Inclusive relative-Frobenius recovery test; the truth must be nonzero.
inline bool exact_recovery(const Matrix& estimate, const Matrix& truth,
                           double rel_tolerance = 1e-3) {
  if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols()) {
    throw InvalidInputError("estimate and truth shapes differ");
  }
  const double denom = truth.norm();
  if (denom == 0.0) throw InvalidInputError("exact_recovery is undefined for zero-norm truth");
  return (estimate - truth).norm() / denom <= rel_tolerance;
}

}  // namespace gridfill
