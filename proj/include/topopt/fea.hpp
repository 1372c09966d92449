#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#ifdef TOPOPT_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "topopt/grid.hpp"

namespace topopt {

/// Unit-modulus element stiffness. `lower` holds the d(d+1)/2 coefficients of
/// the lower triangle in column-major traversal (column j, rows j..d-1),
/// aligned with IndexPairs; `full` is kept alongside for the sensitivity
/// double products u_e' K_e u_e.
struct ElementStiffness {
  Eigen::MatrixXd full;
  Eigen::VectorXd lower;

  int dofs() const { return int(full.rows()); }
};

namespace detail {

inline Eigen::VectorXd lower_triangle_column_major(const Eigen::MatrixXd& k) {
  const int d = int(k.rows());
  Eigen::VectorXd v(d * (d + 1) / 2);
  std::int64_t t = 0;
  for (int j = 0; j < d; ++j)
    for (int i = j; i < d; ++i) v[t++] = k(i, j);
  return v;
}

inline void check_poisson(double nu) {
  if (!(nu > -1.0 && nu < 0.5))
    throw std::invalid_argument("element stiffness: Poisson ratio must lie in (-1, 0.5)");
}

}  // namespace detail

/// Plane-stress bilinear quadrilateral on the unit square, unit modulus,
/// nodes counter-clockwise from the lower-left corner.
inline ElementStiffness element_stiffness_q4(double nu) {
  detail::check_poisson(nu);
  const double k[8] = {0.5 - nu / 6.0,    0.125 + nu / 8.0,  -0.25 - nu / 12.0,
                       -0.125 + 3.0 * nu / 8.0, -0.25 + nu / 12.0, -0.125 - nu / 8.0,
                       nu / 6.0,          0.125 - 3.0 * nu / 8.0};
  static const int pattern[8][8] = {
      {0, 1, 2, 3, 4, 5, 6, 7}, {1, 0, 7, 6, 5, 4, 3, 2}, {2, 7, 0, 5, 6, 3, 4, 1},
      {3, 6, 5, 0, 7, 2, 1, 4}, {4, 5, 6, 7, 0, 1, 2, 3}, {5, 4, 3, 2, 1, 0, 7, 6},
      {6, 3, 4, 1, 2, 7, 0, 5}, {7, 2, 1, 4, 3, 6, 5, 0}};

  ElementStiffness ke;
  ke.full.resize(8, 8);
  const double scale = 1.0 / (1.0 - nu * nu);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) ke.full(i, j) = scale * k[pattern[i][j]];
  ke.lower = detail::lower_triangle_column_major(ke.full);
  return ke;
}

/// Trilinear hexahedron on the unit cube, unit modulus, isotropic material.
/// Node order: bottom face counter-clockwise, then top face. Integrated with
/// 2x2x2 Gauss points, which is exact for the trilinear basis on a unit cell.
inline ElementStiffness element_stiffness_h8(double nu) {
  detail::check_poisson(nu);
  const double lam = nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  const double mu = 1.0 / (2.0 * (1.0 + nu));

  // corner coordinates in the unit cube
  static const double cx[8] = {0, 1, 1, 0, 0, 1, 1, 0};
  static const double cy[8] = {0, 0, 1, 1, 0, 0, 1, 1};
  static const double cz[8] = {0, 0, 0, 0, 1, 1, 1, 1};

  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(6, 6);
  D(0, 0) = D(1, 1) = D(2, 2) = lam + 2.0 * mu;
  D(0, 1) = D(0, 2) = D(1, 0) = D(1, 2) = D(2, 0) = D(2, 1) = lam;
  D(3, 3) = D(4, 4) = D(5, 5) = mu;

  const double gp[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};

  Eigen::MatrixXd kfull = Eigen::MatrixXd::Zero(24, 24);
  Eigen::MatrixXd B(6, 24);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 2; ++c) {
        const double x = gp[a], y = gp[b], z = gp[c];
        B.setZero();
        for (int node = 0; node < 8; ++node) {
          auto lin = [](double t, double corner) { return corner > 0.5 ? t : 1.0 - t; };
          auto dlin = [](double corner) { return corner > 0.5 ? 1.0 : -1.0; };
          const double dNdx = dlin(cx[node]) * lin(y, cy[node]) * lin(z, cz[node]);
          const double dNdy = lin(x, cx[node]) * dlin(cy[node]) * lin(z, cz[node]);
          const double dNdz = lin(x, cx[node]) * lin(y, cy[node]) * dlin(cz[node]);
          const int col = 3 * node;
          B(0, col) = dNdx;
          B(1, col + 1) = dNdy;
          B(2, col + 2) = dNdz;
          B(3, col + 1) = dNdz;
          B(3, col + 2) = dNdy;
          B(4, col) = dNdz;
          B(4, col + 2) = dNdx;
          B(5, col) = dNdy;
          B(5, col + 1) = dNdx;
        }
        kfull += 0.125 * B.transpose() * D * B;  // weight 1/8 per Gauss point
      }

  ElementStiffness ke;
  ke.full = 0.5 * (kfull + kfull.transpose());
  ke.lower = detail::lower_triangle_column_major(ke.full);
  return ke;
}

/// SIMP material law E(x) = eMin + x^p (e0 - eMin).
struct SimpParams {
  double e0 = 1.0;
  double eMin = 1e-9;
  double p = 3.0;
};

struct SimpField {
  Eigen::VectorXd sK;   // per-element modulus
  Eigen::VectorXd dsK;  // per-element modulus derivative, p x^(p-1) (e0 - eMin)
};

inline SimpField simp_interpolate(const Eigen::VectorXd& xhat, const SimpParams& prm) {
  SimpField f;
  f.sK.resize(xhat.size());
  f.dsK.resize(xhat.size());
  const double de = prm.e0 - prm.eMin;
  for (Eigen::Index e = 0; e < xhat.size(); ++e) {
    const double xp = std::pow(xhat[e], prm.p - 1.0);
    f.sK[e] = prm.eMin + xp * xhat[e] * de;
    f.dsK[e] = prm.p * xp * de;
  }
  return f;
}

/// Global stiffness operator stored as its lower triangle only (row >= col).
struct SymmetricSparseMatrix {
  std::int64_t n = 0;
  Eigen::SparseMatrix<double> lower;
};

inline SymmetricSparseMatrix assemble_lower(const IndexPairs& pairs,
                                            const ElementStiffness& ke,
                                            const Eigen::VectorXd& sK,
                                            std::int64_t n) {
  const std::int64_t perElement = ke.lower.size();
  if (pairs.numPairs() != perElement * sK.size())
    throw std::invalid_argument("assemble: index pairs do not match element count");

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(size_t(pairs.numPairs()));
  std::int64_t t = 0;
  for (Eigen::Index e = 0; e < sK.size(); ++e) {
    const double s = sK[e];
    for (std::int64_t q = 0; q < perElement; ++q, ++t)
      trips.emplace_back(pairs.iK[t], pairs.jK[t], s * ke.lower[q]);
  }

  SymmetricSparseMatrix mat;
  mat.n = n;
  mat.lower.resize(n, n);
  mat.lower.setFromTriplets(trips.begin(), trips.end());
  return mat;
}

/// Global load vector plus the set of constrained DOFs.
struct LoadCase {
  Eigen::VectorXd f;
  std::vector<std::int32_t> fixed;  // sorted, unique
};

namespace detail {

inline std::vector<std::int32_t> free_dof_map(std::int64_t n,
                                              const std::vector<std::int32_t>& fixed,
                                              std::int64_t& numFree) {
  std::vector<std::int32_t> map(static_cast<size_t>(n));
  std::vector<char> isFixed(static_cast<size_t>(n), 0);
  for (auto d : fixed) {
    if (d < 0 || d >= n) throw std::invalid_argument("load case: fixed DOF out of range");
    isFixed[size_t(d)] = 1;
  }
  std::int32_t next = 0;
  for (std::int64_t d = 0; d < n; ++d) map[size_t(d)] = isFixed[size_t(d)] ? -1 : next++;
  numFree = next;
  return map;
}

}  // namespace detail

/// Direct solve of K u = f on the free DOFs; the factorization consumes only
/// the stored lower triangle. Throws if the reduced operator is not SPD.
inline Eigen::VectorXd solve_equilibrium(const SymmetricSparseMatrix& K, const LoadCase& load) {
  const std::int64_t n = K.n;
  if (load.f.size() != n) throw std::invalid_argument("solve: load vector length mismatch");

  std::int64_t numFree = 0;
  const auto map = detail::free_dof_map(n, load.fixed, numFree);

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(size_t(K.lower.nonZeros()));
  for (int col = 0; col < K.lower.outerSize(); ++col)
    for (Eigen::SparseMatrix<double>::InnerIterator it(K.lower, col); it; ++it) {
      const std::int32_t ri = map[size_t(it.row())];
      const std::int32_t rj = map[size_t(it.col())];
      if (ri >= 0 && rj >= 0) trips.emplace_back(ri, rj, it.value());
    }
  Eigen::SparseMatrix<double> reduced(numFree, numFree);
  reduced.setFromTriplets(trips.begin(), trips.end());

  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower> llt;
  llt.compute(reduced);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("solve: Cholesky factorization failed; reduced stiffness is not "
                             "positive definite (insufficient supports?)");

  Eigen::VectorXd fFree(numFree);
  for (std::int64_t d = 0; d < n; ++d)
    if (map[size_t(d)] >= 0) fFree[map[size_t(d)]] = load.f[d];

  const Eigen::VectorXd uFree = llt.solve(fFree);

  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  for (std::int64_t d = 0; d < n; ++d)
    if (map[size_t(d)] >= 0) u[d] = uFree[map[size_t(d)]];
  return u;
}

struct ComplianceResult {
  double c = 0;
  Eigen::VectorXd dc;  // gradient w.r.t. the physical densities; zero on passives
};

/// Compliance u'Ku (= u'f at equilibrium) and its gradient with respect to
/// the physical densities, masked to the active set.
inline ComplianceResult compliance_and_sensitivity(const Eigen::VectorXd& u,
                                                   const Connectivity& conn,
                                                   const Eigen::VectorXd& xhat,
                                                   const SimpParams& prm,
                                                   const ElementStiffness& ke,
                                                   const DomainPartition& part) {
  const std::int64_t m = conn.numElements;
  const int d = conn.dofsPerElement;
  const SimpField simp = simp_interpolate(xhat, prm);

  std::vector<char> active(size_t(m), 0);
  for (auto e : part.act) active[size_t(e)] = 1;

  ComplianceResult res;
  res.dc = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd ue(d);
  for (std::int64_t e = 0; e < m; ++e) {
    const auto row = conn.row(e);
    for (int a = 0; a < d; ++a) ue[a] = u[row[a]];
    const double quad = ue.dot(ke.full * ue);
    res.c += simp.sK[e] * quad;
    if (active[size_t(e)]) res.dc[e] = -simp.dsK[e] * quad;
  }
  return res;
}

struct VolumeResult {
  double v = 0;
  Eigen::VectorXd dv;
};

/// Volume fraction (1/m) sum(xhat) and its gradient 1/m on the active set.
inline VolumeResult volume_and_sensitivity(const Eigen::VectorXd& xhat,
                                           const DomainPartition& part) {
  VolumeResult res;
  const auto m = xhat.size();
  res.v = xhat.sum() / double(m);
  res.dv = Eigen::VectorXd::Zero(m);
  for (auto e : part.act) res.dv[e] = 1.0 / double(m);
  return res;
}

/// Factorization backend for the repeated solves. Auto picks the supernodal
/// CHOLMOD path for H8 meshes (where its BLAS3 kernels pay off) and the
/// simplicial one for the small-supernode 2D graphs; both consume only the
/// lower triangle.
enum class SolverBackend { Auto, Simplicial, Supernodal };

/// Repeated-solve front end: the scatter slots, free-DOF numbering and the
/// symbolic factorization are computed once, so per-iteration work is value
/// accumulation plus a numeric refactorization.
class EquilibriumSolver {
 public:
  EquilibriumSolver(const IndexPairs& pairs, const ElementStiffness& ke, std::int64_t n,
                    const std::vector<std::int32_t>& fixed,
                    SolverBackend backend = SolverBackend::Auto)
      : keLower_(ke.lower), n_(n) {
    if (backend == SolverBackend::Auto)
      backend = ke.dofs() >= 24 ? SolverBackend::Supernodal : SolverBackend::Simplicial;
#ifdef TOPOPT_HAVE_CHOLMOD
    useSupernodal_ = backend == SolverBackend::Supernodal;
#endif
    map_ = detail::free_dof_map(n, fixed, numFree_);

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(size_t(pairs.numPairs()));
    for (std::int64_t t = 0; t < pairs.numPairs(); ++t) {
      const std::int32_t ri = map_[size_t(pairs.iK[t])];
      const std::int32_t rj = map_[size_t(pairs.jK[t])];
      if (ri >= 0 && rj >= 0) trips.emplace_back(ri, rj, 1.0);
    }
    reduced_.resize(numFree_, numFree_);
    reduced_.setFromTriplets(trips.begin(), trips.end());
    reduced_.makeCompressed();

    // slot of every kept pair inside the compressed value array
    slots_.assign(size_t(pairs.numPairs()), -1);
    const auto* outer = reduced_.outerIndexPtr();
    const auto* inner = reduced_.innerIndexPtr();
    for (std::int64_t t = 0; t < pairs.numPairs(); ++t) {
      const std::int32_t ri = map_[size_t(pairs.iK[t])];
      const std::int32_t rj = map_[size_t(pairs.jK[t])];
      if (ri < 0 || rj < 0) continue;
      const auto* begin = inner + outer[rj];
      const auto* end = inner + outer[rj + 1];
      const auto* pos = std::lower_bound(begin, end, ri);
      slots_[size_t(t)] = std::int32_t(outer[rj] + (pos - begin));
    }

#ifdef TOPOPT_HAVE_CHOLMOD
    if (useSupernodal_)
      supernodal_.analyzePattern(reduced_);
    else
#endif
      simplicial_.analyzePattern(reduced_);
  }

  std::int64_t numFreeDofs() const { return numFree_; }

  Eigen::VectorXd solve(const Eigen::VectorXd& sK, const Eigen::VectorXd& f) {
    const std::int64_t perElement = keLower_.size();
    if (sK.size() * perElement != std::int64_t(slots_.size()))
      throw std::invalid_argument("solver: modulus vector length mismatch");

    double* values = reduced_.valuePtr();
    std::fill(values, values + reduced_.nonZeros(), 0.0);
    std::int64_t t = 0;
    for (Eigen::Index e = 0; e < sK.size(); ++e) {
      const double s = sK[e];
      for (std::int64_t q = 0; q < perElement; ++q, ++t) {
        const std::int32_t slot = slots_[size_t(t)];
        if (slot >= 0) values[slot] += s * keLower_[q];
      }
    }

    Eigen::VectorXd fFree(numFree_);
    for (std::int64_t d = 0; d < n_; ++d)
      if (map_[size_t(d)] >= 0) fFree[map_[size_t(d)]] = f[d];

    Eigen::VectorXd uFree;
#ifdef TOPOPT_HAVE_CHOLMOD
    if (useSupernodal_) {
      supernodal_.factorize(reduced_);
      if (supernodal_.info() != Eigen::Success)
        throw std::runtime_error("solver: Cholesky factorization failed; reduced stiffness is "
                                 "not positive definite");
      uFree = supernodal_.solve(fFree);
    } else
#endif
    {
      simplicial_.factorize(reduced_);
      if (simplicial_.info() != Eigen::Success)
        throw std::runtime_error("solver: Cholesky factorization failed; reduced stiffness is "
                                 "not positive definite");
      uFree = simplicial_.solve(fFree);
    }

    Eigen::VectorXd u = Eigen::VectorXd::Zero(n_);
    for (std::int64_t d = 0; d < n_; ++d)
      if (map_[size_t(d)] >= 0) u[d] = uFree[map_[size_t(d)]];
    return u;
  }

 private:
  Eigen::VectorXd keLower_;
  std::int64_t n_ = 0;
  std::int64_t numFree_ = 0;
  std::vector<std::int32_t> map_;
  std::vector<std::int32_t> slots_;
  Eigen::SparseMatrix<double> reduced_;
  bool useSupernodal_ = false;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower> simplicial_;
#ifdef TOPOPT_HAVE_CHOLMOD
  Eigen::CholmodSupernodalLLT<Eigen::SparseMatrix<double>, Eigen::Lower> supernodal_;
#endif
};

}  // namespace topopt
