#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gridfill/core.hpp"
#include "gridfill/errors.hpp"

namespace gridfill {

// ---------------------------------------------------------------------------
// Truncated SVD
// ---------------------------------------------------------------------------

/// Rank-r factorization M ≈ Σ σ_k u_k v_kᵀ with a deterministic sign
/// convention: the largest-magnitude entry of each u_k is positive (ties
/// broken by lowest row index), so identical inputs always produce identical
/// factors.
struct SVDFactors {
  Matrix left_vectors;     // n1 × r, orthonormal columns
  Vector singular_values;  // length r, positive, non-increasing
  Matrix right_vectors;    // n2 × r, orthonormal columns
  double rank_tolerance = 1e-8;

  Index rank() const { return singular_values.size(); }

  Matrix reconstruct() const {
    return left_vectors * singular_values.asDiagonal() * right_vectors.transpose();
  }
};

/// Truncated SVD of m. If rank < 0 the rank is chosen automatically: keep
/// σ_k ≥ rank_tolerance · σ_1. An explicit rank must satisfy
/// 1 ≤ rank ≤ min(n1, n2); trailing zero singular values are still dropped so
/// that the stored spectrum is strictly positive. The stored rank_tolerance is
/// widened to cover whatever spectral mass the truncation discarded, so the
/// reconstruction bound ‖M − UΣVᵀ‖_F ≤ rank_tolerance · σ_1 always holds.
inline SVDFactors truncated_svd(const Matrix& m, Index rank = -1,
                                double rank_tolerance = 1e-8) {
  require_finite(m, "truncated_svd input");
  const Index max_rank = std::min(m.rows(), m.cols());
  if (rank >= 0 && (rank < 1 || rank > max_rank)) {
    throw InvalidRankError("requested rank " + std::to_string(rank) +
                           " outside [1, " + std::to_string(max_rank) + "]");
  }

  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  const double sigma1 = sigma.size() > 0 ? sigma(0) : 0.0;

  Index keep = 0;
  if (rank >= 0) {
    keep = rank;
  } else {
    while (keep < sigma.size() && sigma(keep) >= rank_tolerance * sigma1 &&
           sigma(keep) > 0.0) {
      ++keep;
    }
  }
  while (keep > 0 && sigma(keep - 1) <= 0.0) --keep;

  SVDFactors f;
  f.left_vectors = svd.matrixU().leftCols(keep);
  f.singular_values = sigma.head(keep);
  f.right_vectors = svd.matrixV().leftCols(keep);

  double discarded = 0.0;
  for (Index k = keep; k < sigma.size(); ++k) discarded += sigma(k) * sigma(k);
  discarded = std::sqrt(discarded);
  f.rank_tolerance = rank_tolerance;
  if (sigma1 > 0.0 && discarded > 0.0) {
    f.rank_tolerance = std::max(rank_tolerance, (discarded / sigma1) * (1.0 + 1e-10));
  }

  for (Index k = 0; k < keep; ++k) {
    Index pivot = 0;
    double best = -1.0;
    for (Index i = 0; i < f.left_vectors.rows(); ++i) {
      const double a = std::abs(f.left_vectors(i, k));
      if (a > best) {
        best = a;
        pivot = i;
      }
    }
    if (f.left_vectors(pivot, k) < 0.0) {
      f.left_vectors.col(k) = -f.left_vectors.col(k);
      f.right_vectors.col(k) = -f.right_vectors.col(k);
    }
  }
  return f;
}

// ---------------------------------------------------------------------------
// The tangent space T and its projectors
// ---------------------------------------------------------------------------

/// Tangent space of the rank-r manifold at M: all matrices sharing M's column
/// space or row space. Holds the factor bases and the two orthogonal
/// projectors P_U = UUᵀ, P_V = VVᵀ; dim T = r(n1+n2−r).
struct SubspaceT {
  Matrix U;    // n1 × r
  Matrix V;    // n2 × r
  Matrix P_U;  // n1 × n1
  Matrix P_V;  // n2 × n2
  Index n1 = 0, n2 = 0, r = 0;
  Index dim_T = 0;

  static SubspaceT from_factors(const SVDFactors& f) {
    if (f.rank() < 1) {
      throw InvalidRankError("tangent space requires rank >= 1");
    }
    SubspaceT t;
    t.U = f.left_vectors;
    t.V = f.right_vectors;
    t.P_U = t.U * t.U.transpose();
    t.P_V = t.V * t.V.transpose();
    t.n1 = t.U.rows();
    t.n2 = t.V.rows();
    t.r = f.rank();
    t.dim_T = t.r * (t.n1 + t.n2 - t.r);
    return t;
  }
};

inline void check_shape(const SubspaceT& t, const Matrix& x) {
  if (x.rows() != t.n1 || x.cols() != t.n2) {
    throw InvalidInputError("matrix shape " + std::to_string(x.rows()) + "x" +
                            std::to_string(x.cols()) + " does not match subspace shape " +
                            std::to_string(t.n1) + "x" + std::to_string(t.n2));
  }
}

/// P_T(X) = P_U X + X P_V − P_U X P_V.
inline Matrix project_T(const SubspaceT& t, const Matrix& x) {
  check_shape(t, x);
  Matrix pux = t.P_U * x;
  return pux + (x - pux) * t.P_V;
}

/// P_T⊥(X) = (I − P_U) X (I − P_V); complements project_T (the two sum to X).
inline Matrix project_T_perp(const SubspaceT& t, const Matrix& x) {
  check_shape(t, x);
  Matrix left = x - t.P_U * x;
  return left - left * t.P_V;
}

/// dim T = r(n1+n2−r) for 1 ≤ r ≤ n2 ≤ n1.
inline Index degrees_of_freedom(Index n1, Index n2, Index r) {
  if (!(1 <= r && r <= n2 && n2 <= n1)) {
    throw InvalidRankError("degrees_of_freedom requires 1 <= r <= n2 <= n1, got r=" +
                           std::to_string(r) + " n2=" + std::to_string(n2) +
                           " n1=" + std::to_string(n1));
  }
  return r * (n1 + n2 - r);
}

// ---------------------------------------------------------------------------
// The constraint span Q
// ---------------------------------------------------------------------------

/// Orthonormalized span of a family of constraint matrices. `stacked` holds
/// the same basis with each matrix vectorized into a column (column-major),
/// which is what the projector applications use.
struct ConstraintSpaceQ {
  Index rows = 0, cols = 0;
  std::vector<Matrix> orthonormal_basis;
  std::vector<std::size_t> drop_log;  // indices of discarded input constraints
  Matrix stacked;                     // (rows·cols) × effective_dim

  Index effective_dim() const { return static_cast<Index>(orthonormal_basis.size()); }
};

/// Modified Gram–Schmidt (two passes for stability) over the vectorized
/// constraint matrices. A constraint whose residual after projection onto the
/// running span drops below 1e-10 × its own norm is discarded and logged.
/// An empty input yields the zero-dimensional space (P_Q = 0).
inline ConstraintSpaceQ orthonormalize_constraints(const std::vector<Matrix>& constraints) {
  ConstraintSpaceQ q;
  if (constraints.empty()) return q;
  q.rows = constraints.front().rows();
  q.cols = constraints.front().cols();
  const Index n = q.rows * q.cols;

  std::vector<Vector> basis;
  basis.reserve(constraints.size());
  for (std::size_t l = 0; l < constraints.size(); ++l) {
    const Matrix& a = constraints[l];
    if (a.rows() != q.rows || a.cols() != q.cols) {
      throw InvalidInputError("constraint " + std::to_string(l) +
                              " has mismatched shape");
    }
    require_finite(a, "constraint matrix");
    Vector v = Eigen::Map<const Vector>(a.data(), n);
    const double norm0 = v.norm();
    if (norm0 == 0.0) {
      q.drop_log.push_back(l);
      continue;
    }
    for (int pass = 0; pass < 2; ++pass) {
      for (const Vector& b : basis) v -= b.dot(v) * b;
    }
    const double res = v.norm();
    if (res < 1e-10 * norm0) {
      q.drop_log.push_back(l);
      continue;
    }
    basis.push_back(v / res);
  }

  q.stacked.resize(n, static_cast<Index>(basis.size()));
  q.orthonormal_basis.reserve(basis.size());
  for (std::size_t k = 0; k < basis.size(); ++k) {
    q.stacked.col(static_cast<Index>(k)) = basis[k];
    q.orthonormal_basis.push_back(
        Eigen::Map<const Matrix>(basis[k].data(), q.rows, q.cols));
  }
  return q;
}

inline ConstraintSpaceQ orthonormalize_constraints(const std::vector<DenseConstraint>& constraints) {
  std::vector<Matrix> mats;
  mats.reserve(constraints.size());
  for (const DenseConstraint& c : constraints) mats.push_back(c.matrix);
  return orthonormalize_constraints(mats);
}

inline ConstraintSpaceQ orthonormalize_constraints(const std::vector<SparseConstraint>& constraints,
                                                   Index rows, Index cols) {
  std::vector<Matrix> mats;
  mats.reserve(constraints.size());
  for (const SparseConstraint& c : constraints) mats.push_back(densify(c, rows, cols));
  return orthonormalize_constraints(mats);
}

/// P_Q(X): orthogonal projection onto span{A⁽¹⁾, …}.
inline Matrix project_Q(const ConstraintSpaceQ& q, const Matrix& x) {
  if (q.effective_dim() == 0) return Matrix::Zero(x.rows(), x.cols());
  if (x.rows() != q.rows || x.cols() != q.cols) {
    throw InvalidInputError("matrix shape does not match constraint-space shape");
  }
  Eigen::Map<const Vector> xv(x.data(), x.size());
  Vector proj = q.stacked * (q.stacked.transpose() * xv);
  return Eigen::Map<const Matrix>(proj.data(), x.rows(), x.cols());
}

/// P_Q⊥(X) = X − P_Q(X).
inline Matrix project_Q_perp(const ConstraintSpaceQ& q, const Matrix& x) {
  if (q.effective_dim() == 0) return x;
  return x - project_Q(q, x);
}

// ---------------------------------------------------------------------------
// Coherence and coverage metrics
// ---------------------------------------------------------------------------

/// Coherence of the span of an orthonormal basis W (n × r):
/// (n/r) · max_i ‖P e_i‖² with P = WWᵀ; always in [1, n/r].
inline double mu_coherence(const Matrix& basis) {
  const Index n = basis.rows();
  const Index r = basis.cols();
  if (r < 1 || n < r) {
    throw InvalidRankError("coherence needs an n x r basis with 1 <= r <= n");
  }
  Matrix gram = basis.transpose() * basis;
  if ((gram - Matrix::Identity(r, r)).cwiseAbs().maxCoeff() > 1e-8) {
    throw InvalidBasisError("basis columns are not orthonormal (Gram deviation > 1e-8)");
  }
  double max_row = 0.0;
  for (Index i = 0; i < n; ++i) {
    max_row = std::max(max_row, basis.row(i).squaredNorm());
  }
  return (static_cast<double>(n) / static_cast<double>(r)) * max_row;
}

/// Smallest ν₀ with max_ij |E_ij| ≤ ν₀ √(r/(n1 n2)), where E = Σ u_k v_kᵀ.
inline double nu0(const SVDFactors& f) {
  if (f.rank() < 1) throw InvalidRankError("nu0 requires rank >= 1");
  Matrix e = f.left_vectors * f.right_vectors.transpose();
  const double n1 = static_cast<double>(e.rows());
  const double n2 = static_cast<double>(e.cols());
  return e.cwiseAbs().maxCoeff() * std::sqrt(n1 * n2 / static_cast<double>(f.rank()));
}

/// Fraction of the tangent space left uncovered by the constraint span:
///   Σ_ij ‖P_T P_Q⊥(e_i e_jᵀ)‖²_F / Σ_ij ‖P_T(e_i e_jᵀ)‖²_F.
/// The denominator is computed by the same loop and asserted equal to dim T
/// (the trace of an orthogonal projector is its subspace dimension) before
/// dividing. The literal double loop over every standard-basis matrix is the
/// definition of record.
inline double mu_Q_perp(const SubspaceT& t, const ConstraintSpaceQ& q) {
  if (t.dim_T == 0) throw UndefinedMetricError("mu_Q_perp undefined: dim T = 0");
  if (q.effective_dim() > 0 && (q.rows != t.n1 || q.cols != t.n2)) {
    throw InvalidInputError("constraint-space shape does not match subspace shape");
  }
  double num = 0.0;
  double den = 0.0;
  Matrix eij = Matrix::Zero(t.n1, t.n2);
  for (Index j = 0; j < t.n2; ++j) {
    for (Index i = 0; i < t.n1; ++i) {
      eij(i, j) = 1.0;
      num += project_T(t, project_Q_perp(q, eij)).squaredNorm();
      den += project_T(t, eij).squaredNorm();
      eij(i, j) = 0.0;
    }
  }
  const double dim_t = static_cast<double>(t.dim_T);
  if (std::abs(den - dim_t) > 1e-8 * dim_t) {
    throw NumericalDegeneracyError("trace identity violated: sum " + format_double(den) +
                                   " vs dim T " + format_double(dim_t));
  }
  return num / den;
}

/// Fraction of E = Σ u_k v_kᵀ not contained in the constraint span:
/// (1/r) ‖P_Q⊥(E)‖²_F, clamped to [0,1] after asserting it lies within
/// [−1e-9, 1+1e-9].
inline double nu_Q_perp(const SVDFactors& f, const ConstraintSpaceQ& q) {
  if (f.rank() < 1) {
    throw UndefinedMetricError("nu_Q_perp undefined for a rank-0 (zero) matrix");
  }
  Matrix e = f.left_vectors * f.right_vectors.transpose();
  double val = project_Q_perp(q, e).squaredNorm() / static_cast<double>(f.rank());
  if (val < -1e-9 || val > 1.0 + 1e-9) {
    throw NumericalDegeneracyError("nu_Q_perp outside [0,1] beyond tolerance: " +
                                   format_double(val));
  }
  return std::clamp(val, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Scree
// ---------------------------------------------------------------------------

/// Full singular spectrum with values normalized by their sum and the
/// cumulative partial sums of the normalized values.
struct Scree {
  Vector singular_values;
  Vector normalized;
  Vector cumulative;
};

inline Scree scree(const Matrix& m) {
  require_finite(m, "scree input");
  if (m.size() == 0 || m.norm() == 0.0) {
    throw UndefinedScreeError("scree undefined for an identically-zero matrix");
  }
  Eigen::JacobiSVD<Matrix> svd(m);
  Scree s;
  s.singular_values = svd.singularValues();
  const double total = s.singular_values.sum();
  s.normalized = s.singular_values / total;
  s.cumulative = s.normalized;
  for (Index k = 1; k < s.cumulative.size(); ++k) {
    s.cumulative(k) += s.cumulative(k - 1);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dual certificate
// ---------------------------------------------------------------------------

/// Result of the certificate construction: Y lies in the range of the
/// sampling + constraint operators; the certificate passes when P_T(Y)
/// reproduces E to 1e-8 and ‖P_T⊥(Y)‖ (spectral) < 1, which certifies that
/// the truth matrix is the unique optimum of the convex program.
struct DualCertificate {
  Matrix Y;
  double spectral_norm_T_perp = 0.0;
  double pt_residual = 0.0;
  double condition = 0.0;  // condition number of the restricted operator
  bool passes = false;
};

/// Builds Y = (P_Ω + q P_Q) P_T (P_T (P_Ω + q P_Q) P_T)⁻¹ (E) by solving a
/// dim_T × dim_T system over the orthonormal coordinate family
/// {u_k e_jᵀ} ∪ {w_i v_kᵀ}, where the w_i (an orthonormal basis of the
/// complement of the column space) come from a full QR of U.
inline DualCertificate dual_certificate(const SubspaceT& t, const std::vector<Entry>& omega,
                                        const ConstraintSpaceQ& q_space, double q) {
  if (q < 0.0) throw InvalidInputError("constraint weight q must be non-negative");
  for (const Entry& e : omega) {
    if (e.row < 0 || e.row >= t.n1 || e.col < 0 || e.col >= t.n2) {
      throw InvalidInputError("observation outside matrix shape");
    }
  }
  const Index n1 = t.n1, n2 = t.n2, r = t.r;
  const Index n = n1 * n2;
  const Index dim = t.dim_T;

  // Orthonormal coordinate family of T, stacked as vectorized columns.
  Eigen::HouseholderQR<Matrix> qr(t.U);
  Matrix q_full = qr.householderQ() * Matrix::Identity(n1, n1);
  Matrix w = q_full.rightCols(n1 - r);  // orthonormal, spans (col U)⊥

  Matrix basis(n, dim);
  Index col = 0;
  Matrix tmp = Matrix::Zero(n1, n2);
  for (Index k = 0; k < r; ++k) {
    for (Index j = 0; j < n2; ++j) {
      tmp.setZero();
      tmp.col(j) = t.U.col(k);
      basis.col(col++) = Eigen::Map<const Vector>(tmp.data(), n);
    }
  }
  for (Index i = 0; i < n1 - r; ++i) {
    for (Index k = 0; k < r; ++k) {
      tmp = w.col(i) * t.V.col(k).transpose();
      basis.col(col++) = Eigen::Map<const Vector>(tmp.data(), n);
    }
  }

  const auto apply_operator = [&](const Matrix& x) -> Matrix {
    Matrix y = Matrix::Zero(n1, n2);
    for (const Entry& e : omega) y(e.row, e.col) = x(e.row, e.col);
    if (q > 0.0 && q_space.effective_dim() > 0) y += q * project_Q(q_space, x);
    return y;
  };

  Matrix k_matrix(dim, dim);
  for (Index b = 0; b < dim; ++b) {
    Matrix bb = Eigen::Map<const Matrix>(basis.col(b).data(), n1, n2);
    Matrix ab = apply_operator(bb);
    k_matrix.col(b) = basis.transpose() * Eigen::Map<const Vector>(ab.data(), n);
  }
  k_matrix = ((k_matrix + k_matrix.transpose()) / 2.0).eval();

  Matrix e_matrix = t.U * t.V.transpose();
  Vector rhs = basis.transpose() * Eigen::Map<const Vector>(e_matrix.data(), n);

  Eigen::SelfAdjointEigenSolver<Matrix> es(k_matrix);
  const Vector& lambda = es.eigenvalues();
  const double lmax = lambda(dim - 1);
  const double lmin = lambda(0);
  if (lmax <= 0.0 || lmin <= 1e-12 * lmax) {
    throw NotInvertibleError(
        "restricted operator P_T (P_Omega + q P_Q) P_T is numerically singular "
        "(extreme eigenvalues " +
        format_double(lmin) + ", " + format_double(lmax) + ")");
  }

  Vector z = es.eigenvectors() *
             (es.eigenvectors().transpose() * rhs).cwiseQuotient(lambda);
  Matrix w_t = Eigen::Map<const Matrix>((basis * z).eval().data(), n1, n2);

  DualCertificate cert;
  cert.Y = apply_operator(w_t);
  cert.condition = lmax / lmin;
  cert.pt_residual = (project_T(t, cert.Y) - e_matrix).norm();
  Matrix perp = project_T_perp(t, cert.Y);
  cert.spectral_norm_T_perp =
      perp.norm() == 0.0 ? 0.0 : Eigen::JacobiSVD<Matrix>(perp).singularValues()(0);
  cert.passes = cert.pt_residual <= 1e-8 && cert.spectral_norm_T_perp < 1.0;
  return cert;
}

// ---------------------------------------------------------------------------
// Sufficient-sample bounds and their corollaries
// ---------------------------------------------------------------------------

/// The six sufficient lower bounds on the sample count m for exact recovery,
/// evaluated exactly as printed. Purely arithmetic: no claim of tightness is
/// made, and the constants C_R, C_K are user-supplied (defaults of 1.0 are
/// illustrative only).
struct Theorem1Bounds {
  double bound_a = 0.0;  // strict: m > bound_a
  double bound_b = 0.0;  // strict: m > bound_b
  double bound_c = 0.0;  // m ≥ bound_c
  double bound_d = 0.0;  // m ≥ bound_d
  double bound_e = 0.0;  // m ≥ bound_e
  double bound_f = 0.0;  // m ≥ bound_f
  double max_bound = 0.0;
  Index min_samples = 0;  // smallest integer m satisfying all six
};

inline Theorem1Bounds theorem1_bounds(Index n1, Index n2, Index r, double mu0, double nu0,
                                      double mu_q_perp, double nu_q_perp, double beta,
                                      double q, double c_r = 1.0, double c_k = 1.0) {
  degrees_of_freedom(n1, n2, r);  // validates 1 <= r <= n2 <= n1
  if (beta < 1.0) throw InvalidInputError("beta must be >= 1");
  if (q <= 0.0) throw InvalidInputError("constraint fraction q must be > 0");
  if (c_r <= 0.0 || c_k <= 0.0) throw InvalidInputError("constants must be positive");
  if (mu0 < 1.0) throw InvalidInputError("mu0 must be >= 1");
  if (nu0 <= 0.0 || mu_q_perp < 0.0 || nu_q_perp < 0.0) {
    throw InvalidInputError("metrics must be non-negative (nu0 positive)");
  }

  const double d_n1 = static_cast<double>(n1);
  const double d_n2 = static_cast<double>(n2);
  const double d_r = static_cast<double>(r);
  const double ln_n1 = std::log(d_n1);
  const double e2 = std::exp(2.0);
  const double qn1n2 = q * d_n1 * d_n2;
  const double root_brn1ln = std::sqrt(beta * d_r * d_n1 * ln_n1);

  Theorem1Bounds b;
  {
    const double pow2 = std::pow(2.0, 2.0 / (beta * ln_n1) + 2.5);
    const double lhs = c_k * e2 * nu0 * root_brn1ln * pow2 +
                       2.0 * std::sqrt(qn1n2 * std::sqrt(nu_q_perp * d_r));
    b.bound_a = lhs * lhs - qn1n2;
  }
  b.bound_b = std::sqrt(10.0 * mu0 * d_r * d_n1 * d_n2) *
                  (c_r * root_brn1ln + d_n1 * d_n2 * std::sqrt(mu_q_perp * q)) *
                  (1.0 + std::sqrt(q)) -
              qn1n2;
  b.bound_c = 16.0 * c_r * c_r * beta * mu0 * d_r * d_n1 * ln_n1 - qn1n2;
  b.bound_d = 16.0 * mu_q_perp * mu0 * q * d_n1 * d_n1 * d_n2 * d_n2 - qn1n2;
  b.bound_e = qn1n2 * std::sqrt(nu_q_perp * d_r) - qn1n2;
  b.bound_f = std::max(2.0, beta) * d_n1 * ln_n1;
  b.max_bound = std::max({b.bound_a, b.bound_b, b.bound_c, b.bound_d, b.bound_e, b.bound_f});

  const auto strict_min = [](double rhs) -> Index {
    const double f = std::floor(rhs);
    return std::max<Index>(static_cast<Index>(f) + 1, 0);
  };
  const auto loose_min = [](double rhs) -> Index {
    return std::max<Index>(static_cast<Index>(std::ceil(rhs)), 0);
  };
  b.min_samples = std::max({strict_min(b.bound_a), strict_min(b.bound_b), loose_min(b.bound_c),
                            loose_min(b.bound_d), loose_min(b.bound_e), loose_min(b.bound_f)});
  return b;
}

/// Existence test for an admissible constraint weight: satisfied iff
/// μ_Q⊥ < min{1/2⁴, 1/(10r)} / (μ₀ n1 n2) and ν_Q⊥ < 1/(2⁴ r).
/// Margins are (threshold − value); positive margins pass.
struct Corollary1Result {
  bool satisfied = false;
  double mu_threshold = 0.0;
  double nu_threshold = 0.0;
  double mu_margin = 0.0;
  double nu_margin = 0.0;
};

inline Corollary1Result corollary1_check(double mu0, Index r, Index n1, Index n2,
                                         double mu_q_perp, double nu_q_perp) {
  if (r < 1) throw InvalidRankError("corollary1_check requires rank >= 1");
  if (mu0 < 1.0) throw InvalidInputError("mu0 must be >= 1");
  Corollary1Result res;
  const double d_r = static_cast<double>(r);
  res.mu_threshold = std::min(1.0 / 16.0, 1.0 / (10.0 * d_r)) /
                     (mu0 * static_cast<double>(n1) * static_cast<double>(n2));
  res.nu_threshold = 1.0 / (16.0 * d_r);
  res.mu_margin = res.mu_threshold - mu_q_perp;
  res.nu_margin = res.nu_threshold - nu_q_perp;
  res.satisfied = mu_q_perp < res.mu_threshold && nu_q_perp < res.nu_threshold;
  return res;
}

/// Single sufficient-sample bound in the fully-covered regime
/// (m > factor · n1 ln n1, strict).
struct Corollary2Bound {
  double c1 = 0.0, c2 = 0.0, c3 = 0.0;
  double factor = 0.0;
  double bound = 0.0;
};

inline Corollary2Bound corollary2_bound(Index n1, Index n2, Index r, double mu0, double nu0,
                                        double beta, double c_r = 1.0, double c_k = 1.0) {
  degrees_of_freedom(n1, n2, r);
  if (beta < 1.0) throw InvalidInputError("beta must be >= 1");
  Corollary2Bound b;
  const double ln_n1 = std::log(static_cast<double>(n1));
  b.c1 = 32.0 * c_k * c_k * std::exp(4.0) * std::pow(2.0, 4.0 / (beta * ln_n1));
  b.c2 = std::sqrt(10.0) * c_r;
  b.c3 = 16.0 * c_r * c_r;
  const double d_r = static_cast<double>(r);
  b.factor = std::max({b.c1 * nu0 * nu0 * beta * d_r,
                       b.c2 * std::sqrt(mu0 * static_cast<double>(n2)) * beta * d_r,
                       b.c3 * mu0 * beta * d_r, 2.0, beta});
  b.bound = b.factor * static_cast<double>(n1) * ln_n1;
  return b;
}

// ---------------------------------------------------------------------------
// Combined coherence report
// ---------------------------------------------------------------------------

/// Everything one wants to know about a matrix relative to a constraint set:
/// rank, subspace coherences, entry spikiness, the two coverage metrics, and
/// the scree arrays.
struct CoherenceReport {
  Index n1 = 0, n2 = 0, r = 0, dim_T = 0;
  double mu_U = 0.0, mu_V = 0.0, mu0 = 0.0;
  double nu0 = 0.0;
  double mu_Q_perp = 0.0, nu_Q_perp = 0.0;
  Index constraint_count = 0;
  Index dropped_constraints = 0;
  Vector normalized_singular_values;
  Vector cumulative;
};

inline CoherenceReport coherence_report(const Matrix& m,
                                        const std::vector<DenseConstraint>& constraints = {},
                                        Index rank = -1, double rank_tolerance = 1e-8) {
  CoherenceReport rep;
  Scree s = scree(m);  // rejects the zero matrix
  SVDFactors f = truncated_svd(m, rank, rank_tolerance);
  if (f.rank() < 1) throw UndefinedMetricError("coherence undefined for rank-0 matrix");
  SubspaceT t = SubspaceT::from_factors(f);
  ConstraintSpaceQ q = orthonormalize_constraints(constraints);

  rep.n1 = t.n1;
  rep.n2 = t.n2;
  rep.r = t.r;
  rep.dim_T = t.dim_T;
  rep.mu_U = mu_coherence(t.U);
  rep.mu_V = mu_coherence(t.V);
  rep.mu0 = std::max(rep.mu_U, rep.mu_V);
  rep.nu0 = nu0(f);
  rep.mu_Q_perp = mu_Q_perp(t, q);
  rep.nu_Q_perp = nu_Q_perp(f, q);
  rep.constraint_count = static_cast<Index>(constraints.size());
  rep.dropped_constraints = static_cast<Index>(q.drop_log.size());
  rep.normalized_singular_values = s.normalized;
  rep.cumulative = s.cumulative;
  return rep;
}

}  // namespace gridfill
