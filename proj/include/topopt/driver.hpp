#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "topopt/accel.hpp"
#include "topopt/fea.hpp"
#include "topopt/filter.hpp"
#include "topopt/grid.hpp"
#include "topopt/oc.hpp"

namespace topopt {

/// Scheduled parameter ramp: starting at loop `istart`, add `deltaPar` every
/// `isteps` loops while the parameter is still below `maxPar`.
struct ContinuationSchedule {
  int istart = 1;
  double maxPar = 0;
  int isteps = 1;
  double deltaPar = 0;
};

inline double apply_continuation(double par, const ContinuationSchedule& sched, int loop) {
  if (loop >= sched.istart && par < sched.maxPar && loop % sched.isteps == 0)
    par = std::min(par + sched.deltaPar, sched.maxPar);
  return par;
}

/// Percent non-discreteness 400 x'(1-x)/m: 0 for a binary field, 100 at 0.5.
inline double nondiscreteness(const Eigen::VectorXd& x) {
  double s = 0;
  for (Eigen::Index e = 0; e < x.size(); ++e) s += x[e] * (1.0 - x[e]);
  return 400.0 * s / double(x.size());
}

enum class UpdateStrategy { Bisection, PrimalDual };

struct AccelConfig {
  bool enabled = false;
  int q = 4;
  int depth = 4;
  int q0 = 20;
  double alpha = 0.9;
  double zeta = 1.0;
};

struct RunConfig {
  int nelx = 0, nely = 0, nelz = 0;
  double volfrac = 0.5;
  double penal = 3.0;
  double rmin = 2.0;
  int ft = 1;  // 1 density filter, 2 fixed-threshold projection, 3 volume-preserving projection
  FilterBC ftBC = FilterBC::Neumann;
  double eta = 0.5;
  double beta = 2.0;
  double move = 0.2;
  int maxit = 100;
  double tol = 1e-6;  // on ||r||_2 / sqrt(m), residual of the physical field
  std::optional<ContinuationSchedule> penalCont;
  std::optional<ContinuationSchedule> betaCont;
  AccelConfig accel;
  UpdateStrategy update = UpdateStrategy::Bisection;
  double e0 = 1.0;
  double eMin = 1e-9;
  double nu = 0.3;
};

struct IterationRecord {
  int loop = 0;
  double c = 0;
  double v = 0;
  double resnorm = 0;
  double mnd = 0;
  double penal = 0;
  double beta = 0;
  double eta = 0;
  int bisections = 0;
  double seconds = 0;
};

/// Design, filtered and physical density fields.
struct DesignField {
  Eigen::VectorXd x;
  Eigen::VectorXd xTilde;
  Eigen::VectorXd xPhys;
};

struct Problem {
  StructuredGrid grid;
  LoadCase load;
  DomainPartition part;
  std::string name;
};

struct RunResult {
  DesignField field;
  std::vector<IterationRecord> history;
  bool converged = false;
  double wallSeconds = 0;
};

using RecordSink = std::function<void(const IterationRecord&)>;

/// Per-iteration view of the redesign inputs, for instrumentation.
using OcProbe = std::function<void(int loop, const Eigen::VectorXd& x, const Eigen::VectorXd& dc,
                                   const Eigen::VectorXd& dV)>;

namespace detail {

inline void validate_config(const RunConfig& cfg, const Problem& prob) {
  if (cfg.nelx != prob.grid.nelx || cfg.nely != prob.grid.nely || cfg.nelz != prob.grid.nelz)
    throw std::invalid_argument("run: config dimensions do not match the problem grid");
  if (!(cfg.volfrac > 0 && cfg.volfrac < 1))
    throw std::invalid_argument("run: volfrac must lie in (0, 1)");
  if (cfg.ft < 1 || cfg.ft > 3) throw std::invalid_argument("run: ft must be 1, 2 or 3");
  if (cfg.rmin < 1) throw std::invalid_argument("run: rmin must be >= 1");
  if (!(cfg.move > 0 && cfg.move < 1)) throw std::invalid_argument("run: move must lie in (0, 1)");
  if (cfg.maxit < 0) throw std::invalid_argument("run: maxit must be >= 0");
}

inline void pin_passives(Eigen::VectorXd& field, const DomainPartition& part) {
  for (auto e : part.pasS) field[e] = 1.0;
  for (auto e : part.pasV) field[e] = 0.0;
}

}  // namespace detail

inline RunResult run_optimization(const RunConfig& cfg, const Problem& prob,
                                  const RecordSink& sink = {}, const OcProbe& probe = {}) {
  detail::validate_config(cfg, prob);
  const auto start = std::chrono::steady_clock::now();

  const StructuredGrid& grid = prob.grid;
  const std::int64_t m = grid.numElements();
  const std::int64_t n = grid.numDofs();
  const DomainPartition& part = prob.part;

  const Connectivity conn = build_connectivity(grid);
  const IndexPairs pairs = build_symmetric_index_pairs(conn);
  const ElementStiffness ke =
      grid.is3d() ? element_stiffness_h8(cfg.nu) : element_stiffness_q4(cfg.nu);
  const FilterOperator flt = build_filter(grid, cfg.rmin, cfg.ftBC);
  EquilibriumSolver solver(pairs, ke, n, prob.load.fixed);

  Eigen::VectorXd dV0 = Eigen::VectorXd::Zero(m);
  for (auto e : part.act) dV0[e] = 1.0 / double(m);

  // active elements start at the modified volume fraction so the initial
  // design meets the constraint exactly
  Eigen::VectorXd x = Eigen::VectorXd::Zero(m);
  const double x0 = part.act.empty()
                        ? 0.0
                        : (cfg.volfrac * double(m) - double(part.pasS.size())) /
                              double(part.act.size());
  for (auto e : part.act) x[e] = std::clamp(x0, 0.0, 1.0);
  detail::pin_passives(x, part);

  double penal = cfg.penal;
  double beta = cfg.beta;
  double eta = cfg.eta;

  AndersonAccelerator accel(
      AndersonOptions{cfg.accel.depth, cfg.accel.q, cfg.accel.alpha, cfg.accel.zeta});
  Eigen::VectorXd xPrevPhys = Eigen::VectorXd::Ones(m);

  RunResult result;
  result.history.reserve(size_t(cfg.maxit));
  double ch = 1.0;

  for (int loop = 1; loop <= cfg.maxit && ch > cfg.tol; ++loop) {
    const auto iterStart = std::chrono::steady_clock::now();

    // RL.1 physical density field
    Eigen::VectorXd xTilde = apply_filter(x, flt);
    detail::pin_passives(xTilde, part);
    if (cfg.ft == 3) eta = solve_volume_preserving_eta(xTilde, beta, eta, part).eta;
    const ProjectionParams prj{eta, beta};
    Eigen::VectorXd xPhys = cfg.ft >= 2 ? project(xTilde, prj) : xTilde;

    ch = (xPhys - xPrevPhys).norm() / std::sqrt(double(m));
    xPrevPhys = xPhys;

    // RL.2 equilibrium
    const SimpParams simp{cfg.e0, cfg.eMin, penal};
    const SimpField law = simp_interpolate(xPhys, simp);
    const Eigen::VectorXd u = solver.solve(law.sK, prob.load.f);

    // RL.3 sensitivities, backfiltered to the design variables
    const ComplianceResult comp = compliance_and_sensitivity(u, conn, xPhys, simp, ke, part);
    const bool projecting = cfg.ft >= 2;
    const Eigen::VectorXd dc = backfilter(comp.dc, xTilde, flt, prj, projecting);
    const Eigen::VectorXd dV = backfilter(dV0, xTilde, flt, prj, projecting);

    if (probe) probe(loop, x, dc, dV);

    // RL.4 redesign, optional extrapolation, continuation
    OcParams oc;
    oc.move = cfg.move;
    oc.volfrac = cfg.volfrac;

    UpdateResult up;
    if (cfg.update == UpdateStrategy::PrimalDual && cfg.ft == 1) {
      up = primal_dual_update(x, dc, dV, part, oc);
    } else {
      std::function<double(const Eigen::VectorXd&)> physVolume;
      if (cfg.ft == 1) {
        physVolume = [](const Eigen::VectorXd& xc) { return xc.mean(); };
      } else if (cfg.ft == 2) {
        physVolume = [&](const Eigen::VectorXd& xc) {
          Eigen::VectorXd xf = apply_filter(xc, flt);
          detail::pin_passives(xf, part);
          return project(xf, prj).mean();
        };
      } else {
        physVolume = [&](const Eigen::VectorXd& xc) {
          Eigen::VectorXd xf = apply_filter(xc, flt);
          detail::pin_passives(xf, part);
          return xf.mean();
        };
      }
      up = bisect_update(x, dc, dV, part, oc, physVolume);
    }

    const Eigen::VectorXd xBefore = std::move(x);
    x = std::move(up.xNew);
    if (cfg.accel.enabled && loop >= cfg.accel.q0 && !part.act.empty()) {
      Eigen::VectorXd xT(part.act.size()), r(part.act.size());
      for (size_t i = 0; i < part.act.size(); ++i) {
        xT[Eigen::Index(i)] = xBefore[part.act[i]];
        r[Eigen::Index(i)] = x[part.act[i]] - xT[Eigen::Index(i)];
      }
      const Eigen::VectorXd xNext = accel.step(xT, r);
      for (size_t i = 0; i < part.act.size(); ++i)
        x[part.act[i]] = std::clamp(xNext[Eigen::Index(i)], 0.0, 1.0);
    }

    const double penalUsed = penal, betaUsed = beta;
    if (cfg.penalCont) penal = apply_continuation(penal, *cfg.penalCont, loop);
    if (cfg.betaCont) beta = apply_continuation(beta, *cfg.betaCont, loop);

    // RL.5 record
    IterationRecord rec;
    rec.loop = loop;
    rec.c = comp.c;
    rec.v = xPhys.mean();
    rec.resnorm = ch;
    rec.mnd = nondiscreteness(x);
    rec.penal = penalUsed;
    rec.beta = betaUsed;
    rec.eta = eta;
    rec.bisections = up.bisections;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - iterStart).count();
    if (sink) sink(rec);
    result.history.push_back(rec);
  }

  // refresh the returned triple so it reflects the final design variables
  if (!result.history.empty()) {
    Eigen::VectorXd xTilde = apply_filter(x, flt);
    detail::pin_passives(xTilde, part);
    if (cfg.ft == 3) eta = solve_volume_preserving_eta(xTilde, beta, eta, part).eta;
    Eigen::VectorXd xPhys = cfg.ft >= 2 ? project(xTilde, {eta, beta}) : xTilde;
    result.field = {std::move(x), std::move(xTilde), std::move(xPhys)};
    result.converged = ch <= cfg.tol;
  } else {
    result.field = {x, x, x};
  }
  result.wallSeconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

/// Half MBB beam: unit downward load at the top-left corner, symmetry plane
/// along the left edge, vertical roller at the bottom-right corner.
inline Problem preset_mbb_2d(int nelx, int nely) {
  Problem prob;
  prob.name = "mbb";
  prob.grid = {nelx, nely, 0};
  detail::validate_grid(prob.grid);
  const std::int64_t n = prob.grid.numDofs();

  prob.load.f = Eigen::VectorXd::Zero(n);
  prob.load.f[2 * prob.grid.node(0, 0) + 1] = -1.0;

  for (int i = 0; i <= nely; ++i)
    prob.load.fixed.push_back(std::int32_t(2 * prob.grid.node(i, 0)));
  prob.load.fixed.push_back(std::int32_t(2 * prob.grid.node(nely, nelx) + 1));
  std::sort(prob.load.fixed.begin(), prob.load.fixed.end());

  prob.part = partition_domain(prob.grid, {}, {});
  return prob;
}

/// Frame reinforcement: passive solid frame (top strip plus both side strips
/// of thickness nelx/50), passive void service opening, uniform vertical top
/// load of total -2 and a height-proportional horizontal load on the right
/// edge whose orientation is picked by `loadDirection`.
inline Problem preset_frame_2d(int nelx, int nely, int loadDirection) {
  if (nelx != nely) throw std::invalid_argument("frame: requires nelx == nely");
  if (nelx % 50 != 0 || nelx % 5 != 0)
    throw std::invalid_argument("frame: dimensions must be divisible by 50 and by 5");
  if (loadDirection != 1 && loadDirection != -1)
    throw std::invalid_argument("frame: load direction must be +1 or -1");

  Problem prob;
  prob.name = "frame";
  prob.grid = {nelx, nely, 0};
  const std::int64_t n = prob.grid.numDofs();

  prob.load.f = Eigen::VectorXd::Zero(n);
  for (int j = 0; j <= nelx; ++j)
    prob.load.f[2 * prob.grid.node(0, j) + 1] += -2.0 / double(nelx + 1);
  for (int i = 0; i <= nely; ++i)
    prob.load.f[2 * prob.grid.node(i, nelx)] +=
        -double(loadDirection) * double(i) / (double(nely) * nely);

  prob.load.fixed = {0, 1, std::int32_t(n - 1)};

  std::vector<std::int32_t> pasS, pasV;
  const int t = nelx / 50;
  for (int j = 0; j < nelx; ++j)
    for (int i = 0; i < nely; ++i) {
      const bool topStrip = i < t;
      const bool sideStrip = j < t || j >= nelx - t;
      if (topStrip || sideStrip) pasS.push_back(std::int32_t(prob.grid.element(i, j)));
    }
  for (int j = 2 * nelx / 5 - 1; j < nelx - nelx / 5; ++j)
    for (int i = 2 * nely / 5 - 1; i < nely; ++i)
      pasV.push_back(std::int32_t(prob.grid.element(i, j)));

  prob.part = partition_domain(prob.grid, std::move(pasS), std::move(pasV));
  return prob;
}

/// 3D cantilever: face x = 0 fully clamped, unit downward nodal loads along
/// the lower edge of the free face.
inline Problem preset_cantilever_3d(int nelx, int nely, int nelz) {
  Problem prob;
  prob.name = "cantilever3d";
  prob.grid = {nelx, nely, nelz};
  detail::validate_grid(prob.grid);
  if (nelz < 1) throw std::invalid_argument("cantilever: requires nelz >= 1");
  const std::int64_t n = prob.grid.numDofs();

  prob.load.f = Eigen::VectorXd::Zero(n);
  for (int k = 0; k <= nelz; ++k)
    prob.load.f[3 * prob.grid.node(nely, k, nelx) + 1] = -1.0;

  for (int k = 0; k <= nelz; ++k)
    for (int i = 0; i <= nely; ++i) {
      const std::int64_t node = prob.grid.node(i, k, 0);
      prob.load.fixed.push_back(std::int32_t(3 * node));
      prob.load.fixed.push_back(std::int32_t(3 * node + 1));
      prob.load.fixed.push_back(std::int32_t(3 * node + 2));
    }
  std::sort(prob.load.fixed.begin(), prob.load.fixed.end());

  prob.part = partition_domain(prob.grid, {}, {});
  return prob;
}

}  // namespace topopt
