#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "gridfill/errors.hpp"

namespace gridfill {

inline constexpr const char* kVersion = "0.1.0";

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// A matrix location (row, col), zero-based.
struct Entry {
  Index row = 0;
  Index col = 0;

  friend bool operator==(const Entry& a, const Entry& b) {
    return a.row == b.row && a.col == b.col;
  }
  friend bool operator<(const Entry& a, const Entry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  }
};

/// A matrix location with an observed (or pinned) value.
struct EntryValue {
  Index row = 0;
  Index col = 0;
  double value = 0.0;
};

/// One term of a sparse linear functional on matrices.
struct Coefficient {
  Index row = 0;
  Index col = 0;
  double weight = 0.0;
};

/// Sparse equality constraint  Σ weight · X(row, col) = rhs.
struct SparseConstraint {
  std::vector<Coefficient> terms;
  double rhs = 0.0;
};

/// Dense equality constraint  ⟨A, X⟩ = rhs.
struct DenseConstraint {
  Matrix matrix;
  double rhs = 0.0;
};

/// Column-major vectorization index of (row, col) in an n1×n2 matrix.
inline Index vec_index(Index row, Index col, Index n1) { return row + col * n1; }

/// Frobenius inner product ⟨A, B⟩ = Σ A_ij B_ij.
inline double frobenius_inner(const Matrix& a, const Matrix& b) {
  return (a.array() * b.array()).sum();
}

/// Dense matrix form of a sparse constraint's coefficient map.
inline Matrix densify(const SparseConstraint& c, Index rows, Index cols) {
  Matrix a = Matrix::Zero(rows, cols);
  for (const Coefficient& t : c.terms) {
    if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols) {
      throw InvalidInputError("constraint references entry (" + std::to_string(t.row) + "," +
                              std::to_string(t.col) + ") outside a " + std::to_string(rows) +
                              "x" + std::to_string(cols) + " matrix");
    }
    a(t.row, t.col) += t.weight;
  }
  return a;
}

/// Sparse form of a dense constraint (every entry becomes a coefficient).
inline SparseConstraint sparsify(const DenseConstraint& c) {
  SparseConstraint out;
  out.rhs = c.rhs;
  out.terms.reserve(static_cast<std::size_t>(c.matrix.size()));
  for (Index j = 0; j < c.matrix.cols(); ++j) {
    for (Index i = 0; i < c.matrix.rows(); ++i) {
      out.terms.push_back({i, j, c.matrix(i, j)});
    }
  }
  return out;
}

/// Evaluate ⟨A, X⟩ for a sparse constraint.
inline double evaluate(const SparseConstraint& c, const Matrix& x) {
  double acc = 0.0;
  for (const Coefficient& t : c.terms) acc += t.weight * x(t.row, t.col);
  return acc;
}

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw InvalidInputError(std::string(what) + " contains non-finite entries");
  }
}

/// Shortest exact decimal form of a double (17 significant digits).
inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

/// Wrap an angle difference in degrees to the interval (-180, 180].
inline double wrap_degrees(double d) {
  d = std::fmod(d, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

}  // namespace gridfill
