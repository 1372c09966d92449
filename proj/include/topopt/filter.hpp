#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "topopt/grid.hpp"

namespace topopt {

enum class FilterBC { Neumann, Dirichlet };

/// Cone-kernel density filter. The kernel weight for an element at offset
/// (di, dj, dk) is max(0, rmin - center distance); `hs` is the kernel
/// convolved with the all-ones field under the selected boundary condition,
/// so that filtering is conv(x) / hs. Neumann pads by mirror reflection
/// across the boundary (hs is then the constant full-stencil sum), Dirichlet
/// pads with zeros.
struct FilterOperator {
  int nelx = 0, nely = 0, nelz = 0;
  double rmin = 1.0;
  FilterBC bc = FilterBC::Neumann;

  struct Tap {
    int di, dj, dk;
    double w;
  };
  std::vector<Tap> taps;  // strictly positive weights only
  Eigen::VectorXd hs;

  bool is3d() const { return nelz > 0; }
  std::int64_t numElements() const {
    return std::int64_t(nelx) * nely * (is3d() ? nelz : 1);
  }
};

namespace detail {

// half-sample mirror fold onto [0, n)
inline int reflect_index(int t, int n) {
  const int period = 2 * n;
  t %= period;
  if (t < 0) t += period;
  return t < n ? t : period - 1 - t;
}

inline Eigen::VectorXd cone_convolve(const Eigen::VectorXd& v, const FilterOperator& op) {
  const int nx = op.nelx, ny = op.nely, nz = op.nelz;
  Eigen::VectorXd out(v.size());
  const bool mirror = op.bc == FilterBC::Neumann;

  if (!op.is3d()) {
    for (int j = 0; j < nx; ++j)
      for (int i = 0; i < ny; ++i) {
        double acc = 0;
        for (const auto& tap : op.taps) {
          int ii = i + tap.di, jj = j + tap.dj;
          if (mirror) {
            ii = reflect_index(ii, ny);
            jj = reflect_index(jj, nx);
          } else if (ii < 0 || ii >= ny || jj < 0 || jj >= nx) {
            continue;
          }
          acc += tap.w * v[std::int64_t(jj) * ny + ii];
        }
        out[std::int64_t(j) * ny + i] = acc;
      }
  } else {
    for (int j = 0; j < nx; ++j)
      for (int k = 0; k < nz; ++k)
        for (int i = 0; i < ny; ++i) {
          double acc = 0;
          for (const auto& tap : op.taps) {
            int ii = i + tap.di, jj = j + tap.dj, kk = k + tap.dk;
            if (mirror) {
              ii = reflect_index(ii, ny);
              jj = reflect_index(jj, nx);
              kk = reflect_index(kk, nz);
            } else if (ii < 0 || ii >= ny || jj < 0 || jj >= nx || kk < 0 || kk >= nz) {
              continue;
            }
            acc += tap.w * v[(std::int64_t(jj) * nz + kk) * ny + ii];
          }
          out[(std::int64_t(j) * nz + k) * ny + i] = acc;
        }
  }
  return out;
}

}  // namespace detail

inline FilterOperator build_filter(const StructuredGrid& grid, double rmin, FilterBC bc) {
  if (rmin < 1.0) throw std::invalid_argument("filter: rmin must be >= 1 element");

  FilterOperator op;
  op.nelx = grid.nelx;
  op.nely = grid.nely;
  op.nelz = grid.nelz;
  op.rmin = rmin;
  op.bc = bc;

  const int reach = int(std::ceil(rmin)) - 1;
  const int dkMax = grid.is3d() ? reach : 0;
  for (int dj = -reach; dj <= reach; ++dj)
    for (int dk = -dkMax; dk <= dkMax; ++dk)
      for (int di = -reach; di <= reach; ++di) {
        const double dist = std::sqrt(double(di) * di + double(dj) * dj + double(dk) * dk);
        const double w = rmin - dist;
        if (w > 0) op.taps.push_back({di, dj, dk, w});
      }

  op.hs = detail::cone_convolve(Eigen::VectorXd::Ones(grid.numElements()), op);
  return op;
}

inline Eigen::VectorXd apply_filter(const Eigen::VectorXd& x, const FilterOperator& op) {
  if (x.size() != op.numElements()) throw std::invalid_argument("filter: field length mismatch");
  return detail::cone_convolve(x, op).cwiseQuotient(op.hs);
}

/// Transpose action H'g = conv(g / hs); the kernel is even per axis and both
/// padding modes yield a symmetric convolution operator.
inline Eigen::VectorXd apply_filter_adjoint(const Eigen::VectorXd& g, const FilterOperator& op) {
  if (g.size() != op.numElements()) throw std::invalid_argument("filter: field length mismatch");
  return detail::cone_convolve(g.cwiseQuotient(op.hs), op);
}

/// Relaxed Heaviside projection with threshold eta and sharpness beta.
struct ProjectionParams {
  double eta = 0.5;
  double beta = 1.0;
};

inline Eigen::VectorXd project(const Eigen::VectorXd& xt, const ProjectionParams& prm) {
  const double a = std::tanh(prm.beta * prm.eta);
  const double denom = a + std::tanh(prm.beta * (1.0 - prm.eta));
  Eigen::VectorXd out(xt.size());
  for (Eigen::Index e = 0; e < xt.size(); ++e)
    out[e] = (a + std::tanh(prm.beta * (xt[e] - prm.eta))) / denom;
  return out;
}

inline Eigen::VectorXd project_derivative(const Eigen::VectorXd& xt, const ProjectionParams& prm) {
  const double denom = std::tanh(prm.beta * prm.eta) + std::tanh(prm.beta * (1.0 - prm.eta));
  Eigen::VectorXd out(xt.size());
  for (Eigen::Index e = 0; e < xt.size(); ++e) {
    const double th = std::tanh(prm.beta * (xt[e] - prm.eta));
    out[e] = prm.beta * (1.0 - th * th) / denom;
  }
  return out;
}

/// d/d(eta) of the projection at a single filtered value; negative on (0,1).
inline double project_eta_derivative(double xt, const ProjectionParams& prm) {
  const double b = prm.beta;
  const double sech = 1.0 / std::cosh(b * (xt - prm.eta));
  return -b / std::sinh(b) * sech * sech * std::sinh(b * xt) * std::sinh(b * (1.0 - xt));
}

/// Chain rule back to the design variables: multiplies by the projection
/// slope at the filtered field (when projection is active) and applies the
/// filter transpose.
inline Eigen::VectorXd backfilter(const Eigen::VectorXd& gradXhat, const Eigen::VectorXd& xTilde,
                                  const FilterOperator& op, const ProjectionParams& prm,
                                  bool projectionOn) {
  if (!projectionOn) return apply_filter_adjoint(gradXhat, op);
  return apply_filter_adjoint(project_derivative(xTilde, prm).cwiseProduct(gradXhat), op);
}

struct EtaSolveResult {
  double eta = 0.5;
  int iterations = 0;
};

/// Finds the threshold making the projection volume-preserving:
/// V(project(xTilde, eta)) = V(xTilde), measured over the active elements.
/// Newton from eta0, safeguarded by bisection on [0, 1]; the mismatch
/// g(eta) is strictly decreasing so the root is unique.
inline EtaSolveResult solve_volume_preserving_eta(const Eigen::VectorXd& xTilde, double beta,
                                                  double eta0, const DomainPartition& part) {
  if (!(beta > 0)) throw std::invalid_argument("eta solve: beta must be positive");
  const double m = double(xTilde.size());

  auto mismatch = [&](double eta) {
    const double a = std::tanh(beta * eta);
    const double denom = a + std::tanh(beta * (1.0 - eta));
    double g = 0;
    for (auto e : part.act) {
      const double t = xTilde[e];
      g += (a + std::tanh(beta * (t - eta))) / denom - t;
    }
    return g / m;
  };
  auto slope = [&](double eta) {
    double gp = 0;
    for (auto e : part.act) gp += project_eta_derivative(xTilde[e], {eta, beta});
    return gp / m;
  };

  double lo = 0.0, hi = 1.0;  // g(0) >= 0 >= g(1)
  double eta = std::clamp(eta0, 0.0, 1.0);
  EtaSolveResult res;
  const double tol = 1e-6;
  const int maxIter = 50;

  // iterate until the mismatch meets the tolerance and the last step is
  // negligible, so the returned threshold itself is converged
  double g = mismatch(eta);
  double step = std::numeric_limits<double>::infinity();
  for (int it = 0; it < maxIter && (std::abs(g) > tol || step > 1e-8); ++it) {
    if (g > 0)
      lo = eta;
    else
      hi = eta;
    const double gp = slope(eta);
    double next = eta - g / gp;
    if (!std::isfinite(next) || next <= lo || next >= hi) next = 0.5 * (lo + hi);
    step = std::abs(next - eta);
    eta = next;
    g = mismatch(eta);
    res.iterations = it + 1;
  }
  res.eta = eta;
  return res;
}

}  // namespace topopt
