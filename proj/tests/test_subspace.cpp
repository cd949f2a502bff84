#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gridfill/rng.hpp"
#include "gridfill/subspace.hpp"

namespace gf = gridfill;

namespace {

gf::Matrix random_matrix(gf::Index rows, gf::Index cols, gf::Rng& rng, double lo = -1.0,
                         double hi = 1.0) {
  gf::Matrix m(rows, cols);
  for (gf::Index j = 0; j < cols; ++j)
    for (gf::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(lo, hi);
  return m;
}

gf::Matrix random_rank_r(gf::Index rows, gf::Index cols, gf::Index r, gf::Rng& rng) {
  return random_matrix(rows, r, rng) * random_matrix(r, cols, rng);
}

/// Explicit (n1·n2)×(n1·n2) matrix of the tangent-space projector, built from
/// the identity vec(P_U X + X P_V − P_U X P_V) applied to every basis matrix.
gf::Matrix tangent_projector_matrix(const gf::SubspaceT& t) {
  const gf::Index n = t.n1 * t.n2;
  gf::Matrix p(n, n);
  gf::Matrix eij = gf::Matrix::Zero(t.n1, t.n2);
  for (gf::Index j = 0; j < t.n2; ++j) {
    for (gf::Index i = 0; i < t.n1; ++i) {
      eij(i, j) = 1.0;
      const gf::Matrix img = gf::project_T(t, eij);
      p.col(gf::vec_index(i, j, t.n1)) = Eigen::Map<const gf::Vector>(img.data(), n);
      eij(i, j) = 0.0;
    }
  }
  return p;
}

/// Explicit projector onto the constraint span from its orthonormal basis.
gf::Matrix q_projector_matrix(const gf::ConstraintSpaceQ& q, gf::Index n) {
  if (q.effective_dim() == 0) return gf::Matrix::Zero(n, n);
  return q.stacked * q.stacked.transpose();
}

}  // namespace

// ---------------------------------------------------------------------------
// Truncated SVD
// ---------------------------------------------------------------------------

TEST_CASE("singular values match the eigenvalues of M^T M") {
  gf::Rng rng(3);
  const gf::Matrix m = random_matrix(8, 5, rng);
  const gf::SVDFactors f = gf::truncated_svd(m);
  Eigen::SelfAdjointEigenSolver<gf::Matrix> es(m.transpose() * m);
  gf::Vector lambda = es.eigenvalues();  // ascending
  REQUIRE(f.rank() == 5);
  for (gf::Index k = 0; k < 5; ++k) {
    const double oracle = std::sqrt(std::max(0.0, lambda(4 - k)));
    REQUIRE(f.singular_values(k) == Catch::Approx(oracle).margin(1e-10));
  }
  REQUIRE((f.reconstruct() - m).norm() == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("automatic rank detection on an exactly low-rank matrix") {
  gf::Rng rng(4);
  const gf::Matrix m = random_rank_r(9, 6, 2, rng);
  const gf::SVDFactors f = gf::truncated_svd(m);
  REQUIRE(f.rank() == 2);
  REQUIRE((f.reconstruct() - m).norm() / m.norm() < 1e-10);
  REQUIRE((f.left_vectors.transpose() * f.left_vectors - gf::Matrix::Identity(2, 2))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
  REQUIRE((f.right_vectors.transpose() * f.right_vectors - gf::Matrix::Identity(2, 2))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
}

TEST_CASE("explicit rank truncation keeps the top triplets") {
  gf::Rng rng(5);
  const gf::Matrix m = random_matrix(7, 7, rng);
  const gf::SVDFactors full = gf::truncated_svd(m);
  const gf::SVDFactors top3 = gf::truncated_svd(m, 3);
  REQUIRE(top3.rank() == 3);
  REQUIRE(top3.singular_values == full.singular_values.head(3));
  // Best rank-3 approximation error = tail singular values (Eckart–Young).
  const double tail = std::sqrt(full.singular_values.tail(4).squaredNorm());
  REQUIRE((m - top3.reconstruct()).norm() == Catch::Approx(tail).epsilon(1e-10));
}

TEST_CASE("deterministic sign convention: repeated runs give identical factors") {
  gf::Rng rng(6);
  const gf::Matrix m = random_matrix(6, 4, rng);
  const gf::SVDFactors a = gf::truncated_svd(m);
  const gf::SVDFactors b = gf::truncated_svd(m);
  REQUIRE(a.left_vectors == b.left_vectors);
  REQUIRE(a.right_vectors == b.right_vectors);
  for (gf::Index k = 0; k < a.rank(); ++k) {
    gf::Index pivot = 0;
    a.left_vectors.col(k).cwiseAbs().maxCoeff(&pivot);
    REQUIRE(a.left_vectors(pivot, k) > 0.0);
  }
}

TEST_CASE("truncated_svd rejects out-of-range ranks and non-finite input") {
  gf::Matrix m = gf::Matrix::Identity(4, 3);
  REQUIRE_THROWS_AS(gf::truncated_svd(m, 0), gf::InvalidRankError);
  REQUIRE_THROWS_AS(gf::truncated_svd(m, 4), gf::InvalidRankError);
  m(1, 1) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(gf::truncated_svd(m), gf::InvalidInputError);
}

TEST_CASE("zero matrix factors to rank 0") {
  const gf::SVDFactors f = gf::truncated_svd(gf::Matrix::Zero(3, 3));
  REQUIRE(f.rank() == 0);
}

// ---------------------------------------------------------------------------
// Tangent space
// ---------------------------------------------------------------------------

TEST_CASE("tangent projectors are idempotent, complementary, and orthogonal") {
  gf::Rng rng(7);
  const gf::Matrix m = random_rank_r(8, 5, 2, rng);
  const gf::SubspaceT t = gf::SubspaceT::from_factors(gf::truncated_svd(m, 2));
  const gf::Matrix x = random_matrix(8, 5, rng);

  const gf::Matrix pt = gf::project_T(t, x);
  const gf::Matrix pp = gf::project_T_perp(t, x);
  REQUIRE((pt + pp - x).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((gf::project_T(t, pt) - pt).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE((gf::project_T_perp(t, pp) - pp).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(std::abs(gf::frobenius_inner(pt, pp)) < 1e-12);
  // Pythagoras
  REQUIRE(x.squaredNorm() ==
          Catch::Approx(pt.squaredNorm() + pp.squaredNorm()).epsilon(1e-12));
  // M itself lies in T
  REQUIRE((gf::project_T(t, m) - m).cwiseAbs().maxCoeff() < 1e-10);
  REQUIRE(gf::project_T_perp(t, m).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("projector shape checks throw") {
  gf::Rng rng(8);
  const gf::SubspaceT t =
      gf::SubspaceT::from_factors(gf::truncated_svd(random_rank_r(5, 4, 1, rng), 1));
  REQUIRE_THROWS_AS(gf::project_T(t, gf::Matrix::Zero(4, 5)), gf::InvalidInputError);
}

TEST_CASE("trace identity: sum of projected basis energies equals dim T") {
  gf::Rng rng(9);
  for (gf::Index r : {1, 2, 3}) {
    const gf::Matrix m = random_rank_r(7, 5, r, rng);
    const gf::SubspaceT t = gf::SubspaceT::from_factors(gf::truncated_svd(m, r));
    double total = 0.0;
    gf::Matrix eij = gf::Matrix::Zero(7, 5);
    for (gf::Index j = 0; j < 5; ++j) {
      for (gf::Index i = 0; i < 7; ++i) {
        eij(i, j) = 1.0;
        total += gf::project_T(t, eij).squaredNorm();
        eij(i, j) = 0.0;
      }
    }
    REQUIRE(total == Catch::Approx(static_cast<double>(t.dim_T)).epsilon(1e-10));
    REQUIRE(t.dim_T == gf::degrees_of_freedom(7, 5, r));
  }
}

TEST_CASE("degrees_of_freedom values and domain") {
  REQUIRE(gf::degrees_of_freedom(40, 10, 2) == 96);
  REQUIRE(gf::degrees_of_freedom(5, 5, 5) == 25);
  REQUIRE_THROWS_AS(gf::degrees_of_freedom(10, 20, 2), gf::InvalidRankError);
  REQUIRE_THROWS_AS(gf::degrees_of_freedom(10, 5, 0), gf::InvalidRankError);
  REQUIRE_THROWS_AS(gf::degrees_of_freedom(10, 5, 6), gf::InvalidRankError);
}

// ---------------------------------------------------------------------------
// Coherence and spikiness
// ---------------------------------------------------------------------------

TEST_CASE("coherence of axis-aligned and full bases hits the extremes") {
  gf::Matrix spike = gf::Matrix::Zero(8, 2);
  spike(0, 0) = 1.0;
  spike(1, 1) = 1.0;
  REQUIRE(gf::mu_coherence(spike) == Catch::Approx(4.0));  // n/r = 8/2

  const gf::Matrix full = gf::Matrix::Identity(5, 5);
  REQUIRE(gf::mu_coherence(full) == Catch::Approx(1.0));
}

TEST_CASE("coherence of a random orthonormal basis lies in [1, n/r]") {
  gf::Rng rng(10);
  const gf::Matrix a = random_matrix(9, 3, rng);
  Eigen::HouseholderQR<gf::Matrix> qr(a);
  const gf::Matrix basis =
      qr.householderQ() * gf::Matrix::Identity(9, 3);
  const double mu = gf::mu_coherence(basis);
  REQUIRE(mu >= 1.0 - 1e-12);
  REQUIRE(mu <= 3.0 + 1e-12);
}

TEST_CASE("coherence rejects a non-orthonormal basis") {
  gf::Matrix bad(3, 2);
  bad << 1, 1, 0, 1, 0, 0;
  REQUIRE_THROWS_AS(gf::mu_coherence(bad), gf::InvalidBasisError);
}

TEST_CASE("nu0 on hand-computable matrices") {
  // Rank-1 all-ones: E_ij = 1/sqrt(n1 n2) exactly, so nu0 = 1.
  const gf::Matrix ones = gf::Matrix::Ones(6, 4);
  REQUIRE(gf::nu0(gf::truncated_svd(ones, 1)) == Catch::Approx(1.0).epsilon(1e-10));
  // Identity: E = I, max entry 1, nu0 = sqrt(n^2/n) = sqrt(n).
  const gf::Matrix eye = gf::Matrix::Identity(4, 4);
  REQUIRE(gf::nu0(gf::truncated_svd(eye, 4)) == Catch::Approx(2.0).epsilon(1e-10));
  REQUIRE_THROWS_AS(gf::nu0(gf::truncated_svd(gf::Matrix::Zero(3, 3))),
                    gf::InvalidRankError);
}

// ---------------------------------------------------------------------------
// Constraint span
// ---------------------------------------------------------------------------

TEST_CASE("orthonormalization produces an orthonormal spanning set and drops duplicates") {
  gf::Rng rng(11);
  std::vector<gf::Matrix> cons;
  for (int k = 0; k < 4; ++k) cons.push_back(random_matrix(5, 3, rng));
  cons.push_back(2.0 * cons[1] - 0.5 * cons[3]);  // dependent
  cons.push_back(gf::Matrix::Zero(5, 3));         // zero
  const gf::ConstraintSpaceQ q = gf::orthonormalize_constraints(cons);

  REQUIRE(q.effective_dim() == 4);
  REQUIRE(q.drop_log == std::vector<std::size_t>{4, 5});
  const gf::Matrix gram = q.stacked.transpose() * q.stacked;
  REQUIRE((gram - gf::Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-12);
  // Span preserved: every input is fixed by P_Q.
  for (const gf::Matrix& c : cons) {
    REQUIRE((gf::project_Q(q, c) - c).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("Q-projectors are complementary and Parseval-consistent") {
  gf::Rng rng(12);
  std::vector<gf::Matrix> cons;
  for (int k = 0; k < 3; ++k) cons.push_back(random_matrix(4, 4, rng));
  const gf::ConstraintSpaceQ q = gf::orthonormalize_constraints(cons);
  const gf::Matrix x = random_matrix(4, 4, rng);
  const gf::Matrix pq = gf::project_Q(q, x);
  const gf::Matrix pp = gf::project_Q_perp(q, x);
  REQUIRE((pq + pp - x).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(std::abs(gf::frobenius_inner(pq, pp)) < 1e-12);
  // Parseval: ||P_Q x||^2 equals the sum of squared basis coefficients.
  double coeffs = 0.0;
  for (const gf::Matrix& b : q.orthonormal_basis) {
    const double c = gf::frobenius_inner(b, x);
    coeffs += c * c;
  }
  REQUIRE(pq.squaredNorm() == Catch::Approx(coeffs).epsilon(1e-12));
}

TEST_CASE("empty constraint family gives the zero-dimensional span") {
  const gf::ConstraintSpaceQ q = gf::orthonormalize_constraints(std::vector<gf::Matrix>{});
  REQUIRE(q.effective_dim() == 0);
  gf::Rng rng(13);
  const gf::Matrix x = random_matrix(3, 3, rng);
  REQUIRE(gf::project_Q(q, x).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(gf::project_Q_perp(q, x) == x);
}

TEST_CASE("mismatched constraint shapes are rejected") {
  std::vector<gf::Matrix> cons{gf::Matrix::Ones(3, 2), gf::Matrix::Ones(2, 3)};
  REQUIRE_THROWS_AS(gf::orthonormalize_constraints(cons), gf::InvalidInputError);
}

// ---------------------------------------------------------------------------
// Coverage metrics against explicit projector matrices
// ---------------------------------------------------------------------------

TEST_CASE("mu_Q_perp and nu_Q_perp match the explicit-projector oracle") {
  gf::Rng rng(14);
  const gf::Index n1 = 6, n2 = 4, r = 2;
  const gf::Matrix m = random_rank_r(n1, n2, r, rng);
  const gf::SVDFactors f = gf::truncated_svd(m, r);
  const gf::SubspaceT t = gf::SubspaceT::from_factors(f);

  std::vector<gf::Matrix> cons;
  for (int k = 0; k < 5; ++k) cons.push_back(random_matrix(n1, n2, rng));
  const gf::ConstraintSpaceQ q = gf::orthonormalize_constraints(cons);

  const gf::Index n = n1 * n2;
  const gf::Matrix pt = tangent_projector_matrix(t);
  const gf::Matrix pq_perp = gf::Matrix::Identity(n, n) - q_projector_matrix(q, n);

  // mu: || P_T P_Q_perp ||_F^2 / || P_T ||_F^2 over the standard basis.
  const double mu_oracle = (pt * pq_perp).squaredNorm() / pt.squaredNorm();
  REQUIRE(gf::mu_Q_perp(t, q) == Catch::Approx(mu_oracle).epsilon(1e-10));
  // Denominator of the oracle is the trace identity again.
  REQUIRE(pt.squaredNorm() == Catch::Approx(static_cast<double>(t.dim_T)).epsilon(1e-10));

  // nu: (1/r) || P_Q_perp vec(E) ||^2.
  const gf::Matrix e = f.left_vectors * f.right_vectors.transpose();
  const gf::Vector ev = Eigen::Map<const gf::Vector>(e.data(), n);
  const double nu_oracle = (pq_perp * ev).squaredNorm() / static_cast<double>(r);
  REQUIRE(gf::nu_Q_perp(f, q) == Catch::Approx(nu_oracle).epsilon(1e-10));
}

TEST_CASE("metric extremes: spanning-T and T-orthogonal constraint families") {
  gf::Rng rng(15);
  const gf::Index n1 = 7, n2 = 5, r = 2;
  const gf::Matrix m = random_rank_r(n1, n2, r, rng);
  const gf::SVDFactors f = gf::truncated_svd(m, r);
  const gf::SubspaceT t = gf::SubspaceT::from_factors(f);

  // dim T generic projections of random matrices into T span T.
  std::vector<gf::Matrix> in_t;
  for (gf::Index k = 0; k < t.dim_T; ++k) {
    in_t.push_back(gf::project_T(t, random_matrix(n1, n2, rng)));
  }
  const gf::ConstraintSpaceQ q_t = gf::orthonormalize_constraints(in_t);
  REQUIRE(q_t.effective_dim() == t.dim_T);
  REQUIRE(gf::mu_Q_perp(t, q_t) <= 1e-9);
  REQUIRE(gf::nu_Q_perp(f, q_t) <= 1e-9);

  // T-orthogonal family: metrics stay at their maxima.
  std::vector<gf::Matrix> in_perp;
  for (int k = 0; k < 6; ++k) {
    in_perp.push_back(gf::project_T_perp(t, random_matrix(n1, n2, rng)));
  }
  const gf::ConstraintSpaceQ q_perp = gf::orthonormalize_constraints(in_perp);
  REQUIRE(gf::mu_Q_perp(t, q_perp) == Catch::Approx(1.0).margin(1e-9));
  REQUIRE(gf::nu_Q_perp(f, q_perp) == Catch::Approx(1.0).margin(1e-9));

  // Empty family behaves like the T-orthogonal extreme.
  const gf::ConstraintSpaceQ q_empty = gf::orthonormalize_constraints(std::vector<gf::Matrix>{});
  REQUIRE(gf::mu_Q_perp(t, q_empty) == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(gf::nu_Q_perp(f, q_empty) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("nu_Q_perp is undefined for a rank-0 matrix") {
  const gf::SVDFactors f = gf::truncated_svd(gf::Matrix::Zero(4, 3));
  const gf::ConstraintSpaceQ q = gf::orthonormalize_constraints(std::vector<gf::Matrix>{});
  REQUIRE_THROWS_AS(gf::nu_Q_perp(f, q), gf::UndefinedMetricError);
}

// ---------------------------------------------------------------------------
// Scree
// ---------------------------------------------------------------------------

TEST_CASE("scree normalizes to a descending distribution summing to one") {
  gf::Rng rng(16);
  const gf::Matrix m = random_matrix(6, 5, rng);
  const gf::Scree s = gf::scree(m);
  REQUIRE(s.singular_values.size() == 5);
  for (gf::Index k = 1; k < 5; ++k) {
    REQUIRE(s.singular_values(k) <= s.singular_values(k - 1) + 1e-15);
  }
  REQUIRE(s.normalized.sum() == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(s.cumulative(4) == Catch::Approx(1.0).epsilon(1e-12));
  for (gf::Index k = 0; k < 5; ++k) {
    REQUIRE(s.cumulative(k) == Catch::Approx(s.normalized.head(k + 1).sum()).epsilon(1e-12));
  }
}

TEST_CASE("scree of an exactly rank-2 matrix saturates at the second value") {
  gf::Rng rng(17);
  const gf::Matrix m = random_rank_r(8, 6, 2, rng);
  const gf::Scree s = gf::scree(m);
  REQUIRE(s.cumulative(1) == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("scree rejects the zero matrix") {
  REQUIRE_THROWS_AS(gf::scree(gf::Matrix::Zero(3, 4)), gf::UndefinedScreeError);
}

// ---------------------------------------------------------------------------
// Dual certificate
// ---------------------------------------------------------------------------

TEST_CASE("dual certificate matches an explicit dense-operator construction") {
  gf::Rng rng(18);
  const gf::Index n1 = 6, n2 = 4, r = 1;
  const gf::Matrix m = random_rank_r(n1, n2, r, rng);
  const gf::SVDFactors f = gf::truncated_svd(m, r);
  const gf::SubspaceT t = gf::SubspaceT::from_factors(f);
  const gf::Index n = n1 * n2;

  // Dense sample set (80%) plus two constraints.
  std::vector<gf::Entry> omega;
  for (gf::Index j = 0; j < n2; ++j)
    for (gf::Index i = 0; i < n1; ++i)
      if (rng.uniform() < 0.8) omega.push_back({i, j});
  std::vector<gf::Matrix> cons{random_matrix(n1, n2, rng), random_matrix(n1, n2, rng)};
  const gf::ConstraintSpaceQ q_space = gf::orthonormalize_constraints(cons);
  const double q = 0.7;

  const gf::DualCertificate cert = gf::dual_certificate(t, omega, q_space, q);

  // Oracle: explicit N-by-N operator A = P_Omega + q P_Q; T basis from the
  // explicit tangent projector's eigenvectors; Y = A B ((B^T A B)^-1 B^T e).
  gf::Matrix a_op = gf::Matrix::Zero(n, n);
  for (const gf::Entry& s : omega) {
    const gf::Index k = gf::vec_index(s.row, s.col, n1);
    a_op(k, k) = 1.0;
  }
  a_op += q * q_projector_matrix(q_space, n);

  const gf::Matrix pt = tangent_projector_matrix(t);
  Eigen::SelfAdjointEigenSolver<gf::Matrix> es(pt);
  std::vector<gf::Index> keep;
  for (gf::Index k = 0; k < n; ++k)
    if (es.eigenvalues()(k) > 0.5) keep.push_back(k);
  REQUIRE(static_cast<gf::Index>(keep.size()) == t.dim_T);
  gf::Matrix b(n, t.dim_T);
  for (std::size_t k = 0; k < keep.size(); ++k) b.col(static_cast<gf::Index>(k)) = es.eigenvectors().col(keep[k]);

  const gf::Matrix e = f.left_vectors * f.right_vectors.transpose();
  const gf::Vector ev = Eigen::Map<const gf::Vector>(e.data(), n);
  const gf::Matrix restricted = b.transpose() * a_op * b;
  const gf::Vector y_vec = a_op * (b * restricted.lu().solve(b.transpose() * ev));
  const gf::Matrix y_oracle = Eigen::Map<const gf::Matrix>(y_vec.data(), n1, n2);

  REQUIRE((cert.Y - y_oracle).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE(cert.pt_residual ==
          Catch::Approx((gf::project_T(t, y_oracle) - e).norm()).margin(1e-9));
  // A densely-sampled rank-1 instance certifies.
  REQUIRE(cert.pt_residual <= 1e-8);
  REQUIRE(cert.spectral_norm_T_perp < 1.0);
  REQUIRE(cert.passes);
}

TEST_CASE("dual certificate reports a singular restricted operator") {
  gf::Rng rng(19);
  const gf::Matrix m = random_rank_r(5, 4, 2, rng);
  const gf::SubspaceT t = gf::SubspaceT::from_factors(gf::truncated_svd(m, 2));
  const gf::ConstraintSpaceQ empty = gf::orthonormalize_constraints(std::vector<gf::Matrix>{});
  // No samples and no constraints: the restricted operator is identically zero.
  REQUIRE_THROWS_AS(gf::dual_certificate(t, {}, empty, 0.5), gf::NotInvertibleError);
}

TEST_CASE("dual certificate validates inputs") {
  gf::Rng rng(20);
  const gf::SubspaceT t =
      gf::SubspaceT::from_factors(gf::truncated_svd(random_rank_r(4, 3, 1, rng), 1));
  const gf::ConstraintSpaceQ empty = gf::orthonormalize_constraints(std::vector<gf::Matrix>{});
  REQUIRE_THROWS_AS(gf::dual_certificate(t, {{4, 0}}, empty, 1.0), gf::InvalidInputError);
  REQUIRE_THROWS_AS(gf::dual_certificate(t, {{0, 0}}, empty, -1.0), gf::InvalidInputError);
}

// ---------------------------------------------------------------------------
// Sample bounds
// ---------------------------------------------------------------------------

TEST_CASE("bound (f) reproduces the 2 n1 ln n1 floor") {
  // n1 = 40: 2 * 40 * ln 40 = 295.11...
  const gf::Theorem1Bounds b =
      gf::theorem1_bounds(40, 10, 2, 1.5, 1.2, 0.0, 0.0, 1.0, 1.0);
  REQUIRE(b.bound_f == Catch::Approx(2.0 * 40.0 * std::log(40.0)).epsilon(1e-12));
  REQUIRE(b.bound_f == Catch::Approx(295.11).epsilon(1e-4));
  // beta above 2 scales the floor linearly.
  const gf::Theorem1Bounds b3 =
      gf::theorem1_bounds(40, 10, 2, 1.5, 1.2, 0.0, 0.0, 3.0, 1.0);
  REQUIRE(b3.bound_f == Catch::Approx(3.0 * 40.0 * std::log(40.0)).epsilon(1e-12));
}

TEST_CASE("fully covered metrics collapse bounds (a), (d), (e)") {
  const double q = 0.8;
  const gf::Theorem1Bounds b =
      gf::theorem1_bounds(30, 8, 2, 1.4, 1.1, 0.0, 0.0, 2.0, q);
  const double qn1n2 = q * 30.0 * 8.0;
  // With nu_Q_perp = 0 bound (e) reduces to -q n1 n2.
  REQUIRE(b.bound_e == Catch::Approx(-qn1n2).epsilon(1e-12));
  // With mu_Q_perp = 0 bound (d) reduces to -q n1 n2.
  REQUIRE(b.bound_d == Catch::Approx(-qn1n2).epsilon(1e-12));
  // Bound (a) with nu_Q_perp = 0: (c_k e^2 nu0 sqrt(beta r n1 ln n1) 2^x)^2 - q n1 n2.
  const double pow2 = std::pow(2.0, 2.0 / (2.0 * std::log(30.0)) + 2.5);
  const double lhs = std::exp(2.0) * 1.1 * std::sqrt(2.0 * 2.0 * 30.0 * std::log(30.0)) * pow2;
  REQUIRE(b.bound_a == Catch::Approx(lhs * lhs - qn1n2).epsilon(1e-10));
  REQUIRE(b.max_bound >= b.bound_f);
}

TEST_CASE("min_samples respects strict versus non-strict inequalities") {
  // Large square shape, rank 1, full coverage, tiny spikiness: every bound
  // except the logarithmic floor (f) goes negative, so min_samples = ceil(f).
  const gf::Theorem1Bounds b =
      gf::theorem1_bounds(256, 256, 1, 1.0, 1e-6, 0.0, 0.0, 1.0, 1.0);
  REQUIRE(b.bound_a < 0.0);
  REQUIRE(b.bound_b < 0.0);
  REQUIRE(b.bound_c < 0.0);
  REQUIRE(b.max_bound == b.bound_f);
  REQUIRE(b.min_samples == static_cast<gf::Index>(std::ceil(b.bound_f)));
  REQUIRE(static_cast<double>(b.min_samples) >= b.max_bound);

  // A strict bound that lands exactly on an integer must be exceeded by one.
  // bound_e = q n1 n2 (sqrt(nu r) - 1): with nu = 4, r = 1 it is exactly
  // q n1 n2, an integer, and the (e) inequality is non-strict so ceil applies.
  const gf::Theorem1Bounds be =
      gf::theorem1_bounds(10, 10, 1, 1.0, 1e-6, 0.0, 4.0, 1.0, 1.0);
  REQUIRE(be.bound_e == Catch::Approx(100.0));
}

TEST_CASE("theorem bounds validate their domain") {
  REQUIRE_THROWS_AS(gf::theorem1_bounds(10, 5, 2, 1.0, 1.0, 0.1, 0.1, 0.5, 1.0),
                    gf::InvalidInputError);  // beta < 1
  REQUIRE_THROWS_AS(gf::theorem1_bounds(10, 5, 2, 0.5, 1.0, 0.1, 0.1, 2.0, 1.0),
                    gf::InvalidInputError);  // mu0 < 1
  REQUIRE_THROWS_AS(gf::theorem1_bounds(10, 5, 2, 1.0, 1.0, 0.1, 0.1, 2.0, 0.0),
                    gf::InvalidInputError);  // q = 0
  REQUIRE_THROWS_AS(gf::theorem1_bounds(5, 10, 2, 1.0, 1.0, 0.1, 0.1, 2.0, 1.0),
                    gf::InvalidRankError);  // n2 > n1
}

TEST_CASE("corollary thresholds and margins") {
  const gf::Corollary1Result res = gf::corollary1_check(2.0, 2, 10, 5, 1e-4, 0.01);
  REQUIRE(res.mu_threshold == Catch::Approx(std::min(1.0 / 16.0, 0.05) / (2.0 * 50.0)));
  REQUIRE(res.nu_threshold == Catch::Approx(1.0 / 32.0));
  REQUIRE(res.mu_margin == Catch::Approx(res.mu_threshold - 1e-4));
  REQUIRE(res.nu_margin == Catch::Approx(res.nu_threshold - 0.01));
  REQUIRE(res.satisfied == (1e-4 < res.mu_threshold && 0.01 < res.nu_threshold));

  // Violating either side flips the flag.
  REQUIRE_FALSE(gf::corollary1_check(2.0, 2, 10, 5, 1.0, 0.01).satisfied);
  REQUIRE_FALSE(gf::corollary1_check(2.0, 2, 10, 5, 1e-6, 0.5).satisfied);
}

TEST_CASE("covered-regime bound formula") {
  const gf::Corollary2Bound b = gf::corollary2_bound(40, 10, 2, 1.5, 1.2, 2.0);
  const double ln40 = std::log(40.0);
  REQUIRE(b.c1 == Catch::Approx(32.0 * std::exp(4.0) * std::pow(2.0, 4.0 / (2.0 * ln40))));
  REQUIRE(b.c2 == Catch::Approx(std::sqrt(10.0)));
  REQUIRE(b.c3 == Catch::Approx(16.0));
  const double expected_factor =
      std::max({b.c1 * 1.2 * 1.2 * 2.0 * 2.0, b.c2 * std::sqrt(1.5 * 10.0) * 2.0 * 2.0,
                b.c3 * 1.5 * 2.0 * 2.0, 2.0, 2.0});
  REQUIRE(b.factor == Catch::Approx(expected_factor));
  REQUIRE(b.bound == Catch::Approx(expected_factor * 40.0 * ln40));
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

TEST_CASE("coherence report aggregates the individual metrics") {
  gf::Rng rng(21);
  const gf::Matrix m = random_rank_r(8, 5, 2, rng);
  std::vector<gf::DenseConstraint> cons;
  for (int k = 0; k < 3; ++k) cons.push_back({random_matrix(8, 5, rng), 0.0});
  cons.push_back({cons[0].matrix * 1.0, 0.0});  // duplicate to exercise the drop log

  const gf::CoherenceReport rep = gf::coherence_report(m, cons);
  const gf::SVDFactors f = gf::truncated_svd(m);
  const gf::SubspaceT t = gf::SubspaceT::from_factors(f);
  const gf::ConstraintSpaceQ q = gf::orthonormalize_constraints(cons);

  REQUIRE(rep.n1 == 8);
  REQUIRE(rep.n2 == 5);
  REQUIRE(rep.r == 2);
  REQUIRE(rep.dim_T == 22);
  REQUIRE(rep.mu_U == Catch::Approx(gf::mu_coherence(t.U)));
  REQUIRE(rep.mu_V == Catch::Approx(gf::mu_coherence(t.V)));
  REQUIRE(rep.mu0 == Catch::Approx(std::max(rep.mu_U, rep.mu_V)));
  REQUIRE(rep.nu0 == Catch::Approx(gf::nu0(f)));
  REQUIRE(rep.mu_Q_perp == Catch::Approx(gf::mu_Q_perp(t, q)));
  REQUIRE(rep.nu_Q_perp == Catch::Approx(gf::nu_Q_perp(f, q)));
  REQUIRE(rep.constraint_count == 4);
  REQUIRE(rep.dropped_constraints == 1);
  REQUIRE(rep.cumulative(rep.cumulative.size() - 1) == Catch::Approx(1.0));
  REQUIRE_THROWS_AS(gf::coherence_report(gf::Matrix::Zero(4, 4), {}),
                    gf::UndefinedScreeError);
}
