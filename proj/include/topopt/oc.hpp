#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include "topopt/grid.hpp"

namespace topopt {

struct OcParams {
  double move = 0.2;
  double volfrac = 0.5;
  double bisectRelTol = 1e-4;  // relative shrink of the sqrt-multiplier interval
  double volumeTol = 1e-3;     // guaranteed |V - volfrac| at exit
  double pdTol = 1e-10;        // primal-dual multiplier stagnation tolerance
};

struct UpdateResult {
  Eigen::VectorXd xNew;  // full-length design; passive entries untouched
  double lambda = 0;
  int bisections = 0;
};

/// Upper bound for the volume-constraint multiplier, obtained from the dual
/// map evaluated at the current feasible point (no box constraints binding):
/// lambda# = [ (1/(m f)) sum_e x_e sqrt(-dc_e/dV_e) ]^2.
inline double lambda_upper_estimate(const Eigen::VectorXd& xAct, const Eigen::VectorXd& dcAct,
                                    const Eigen::VectorXd& dVAct, double volfrac,
                                    std::int64_t mTotal) {
  double s = 0;
  for (Eigen::Index e = 0; e < xAct.size(); ++e)
    s += xAct[e] * std::sqrt(std::max(0.0, -dcAct[e] / dVAct[e]));
  const double root = s / (double(mTotal) * volfrac);
  return root * root;
}

namespace detail {

// move-limited multiplicative resize, candidate written in place
inline void oc_candidate_into(const Eigen::VectorXd& xAct, const Eigen::VectorXd& ocP,
                              double sqrtLambda, double move, Eigen::VectorXd& out) {
  for (Eigen::Index e = 0; e < xAct.size(); ++e) {
    const double f = sqrtLambda > 0 ? ocP[e] / sqrtLambda
                                    : (ocP[e] > 0 ? std::numeric_limits<double>::infinity() : 0.0);
    const double lowerBound = std::max(0.0, xAct[e] - move);
    const double upperBound = std::min(1.0, xAct[e] + move);
    out[e] = std::min(std::max(f, lowerBound), upperBound);
  }
}

inline Eigen::VectorXd oc_constant(const Eigen::VectorXd& xAct, const Eigen::VectorXd& dcAct,
                                   const Eigen::VectorXd& dVAct) {
  Eigen::VectorXd ocP(xAct.size());
  for (Eigen::Index e = 0; e < xAct.size(); ++e)
    ocP[e] = xAct[e] * std::sqrt(std::max(0.0, -dcAct[e] / dVAct[e]));
  return ocP;
}

inline Eigen::VectorXd take(const Eigen::VectorXd& full, const std::vector<std::int32_t>& ids) {
  Eigen::VectorXd out(Eigen::Index(ids.size()));
  for (size_t i = 0; i < ids.size(); ++i) out[Eigen::Index(i)] = full[ids[i]];
  return out;
}

}  // namespace detail

/// One evaluation of the move-limited OC resize rule at a given multiplier.
inline Eigen::VectorXd oc_candidate(const Eigen::VectorXd& xAct, const Eigen::VectorXd& dcAct,
                                    const Eigen::VectorXd& dVAct, double lambda, double move) {
  if (!(lambda > 0)) throw std::invalid_argument("oc: multiplier must be positive");
  const Eigen::VectorXd ocP = detail::oc_constant(xAct, dcAct, dVAct);
  Eigen::VectorXd out(xAct.size());
  detail::oc_candidate_into(xAct, ocP, std::sqrt(lambda), move, out);
  return out;
}

struct BisectOptions {
  bool lambdaSpace = false;  // bisect the multiplier itself to an absolute width
  double absTol = 1e-8;
  double lambdaMax = 0;  // > 0 replaces the analytic upper estimate
};

/// Bisection on the volume constraint. The search interval starts at
/// [0, lambda#]; the loop variable is the square root of the multiplier and
/// terminates on (l2 - l1)/(l2 + l1) <= bisectRelTol, with extra halvings if
/// the candidate volume has not yet met the volumeTol contract.
/// `physicalVolume` maps a full candidate design to the volume fraction of
/// the corresponding physical field.
inline UpdateResult bisect_update(const Eigen::VectorXd& x, const Eigen::VectorXd& dc,
                                  const Eigen::VectorXd& dV, const DomainPartition& part,
                                  const OcParams& prm,
                                  const std::function<double(const Eigen::VectorXd&)>& physicalVolume,
                                  const BisectOptions& opt = {}) {
  const Eigen::VectorXd xAct = detail::take(x, part.act);
  const Eigen::VectorXd ocP =
      detail::oc_constant(xAct, detail::take(dc, part.act), detail::take(dV, part.act));

  UpdateResult res;
  res.xNew = x;
  Eigen::VectorXd cand(xAct.size());

  auto volumeAt = [&](double sqrtLambda) {
    detail::oc_candidate_into(xAct, ocP, sqrtLambda, prm.move, cand);
    for (size_t i = 0; i < part.act.size(); ++i) res.xNew[part.act[i]] = cand[Eigen::Index(i)];
    return physicalVolume(res.xNew);
  };

  double lamMax = opt.lambdaMax > 0
                      ? opt.lambdaMax
                      : lambda_upper_estimate(xAct, detail::take(dc, part.act),
                                              detail::take(dV, part.act), prm.volfrac,
                                              part.numElements);
  if (!(lamMax > 0)) {  // vanished sensitivities: the resize collapses to the lower bound
    volumeAt(1.0);
    res.lambda = 0;
    return res;
  }

  // widen if the estimate does not bracket (possible with a fixed projection
  // threshold, where the measured volume is inflated relative to the design)
  double vHi = volumeAt(std::sqrt(lamMax));
  int widenings = 0;
  while (vHi > prm.volfrac && widenings++ < 40) {
    lamMax *= 4.0;
    vHi = volumeAt(std::sqrt(lamMax));
  }
  double vLo = volumeAt(0.0);
  const double monoSlack = 1e-9;

  if (opt.lambdaSpace) {
    double lo = 0.0, hi = lamMax, lambda = lamMax;
    while (hi - lo > opt.absTol && res.bisections < 4000) {
      lambda = 0.5 * (lo + hi);
      const double v = volumeAt(std::sqrt(lambda));
      if (v > vLo + monoSlack || v < vHi - monoSlack)
        throw std::runtime_error("oc: candidate volume is not monotone in the multiplier");
      if (v > prm.volfrac) {
        lo = lambda;
        vLo = v;
      } else {
        hi = lambda;
        vHi = v;
      }
      ++res.bisections;
    }
    res.lambda = lambda;
    return res;
  }

  double lo = 0.0, hi = std::sqrt(lamMax), mid = hi;
  double v = vLo;
  while ((hi - lo) / (hi + lo) > prm.bisectRelTol ||
         (std::abs(v - prm.volfrac) > 0.5 * prm.volumeTol && res.bisections < 200)) {
    mid = 0.5 * (lo + hi);
    v = volumeAt(mid);
    if (v > vLo + monoSlack || v < vHi - monoSlack)
      throw std::runtime_error("oc: candidate volume is not monotone in the multiplier");
    if (v > prm.volfrac) {
      lo = mid;
      vLo = v;
    } else {
      hi = mid;
      vHi = v;
    }
    if (++res.bisections >= 500) break;
  }
  volumeAt(mid);  // leave xNew at the last midpoint candidate
  res.lambda = mid * mid;
  return res;
}

/// Explicit primal-dual iteration for the density-filter-only mode, where the
/// volume constraint acts on the design variables directly. Alternates the
/// clamped resize with the closed-form dual map over the unclamped set until
/// the multiplier stagnates; falls back to bisection when every element is
/// clamped or the dual map degenerates.
inline UpdateResult primal_dual_update(const Eigen::VectorXd& x, const Eigen::VectorXd& dc,
                                       const Eigen::VectorXd& dV, const DomainPartition& part,
                                       const OcParams& prm) {
  const std::int64_t m = part.numElements;
  const double mP1 = double(part.pasS.size());
  const Eigen::VectorXd xAct = detail::take(x, part.act);
  const Eigen::VectorXd ocP =
      detail::oc_constant(xAct, detail::take(dc, part.act), detail::take(dV, part.act));

  auto fallback = [&]() {
    auto meanVolume = [](const Eigen::VectorXd& xc) { return xc.mean(); };
    return bisect_update(x, dc, dV, part, prm, meanVolume);
  };

  const double budget = prm.volfrac * double(m) - mP1;  // active material allowance
  if (budget <= 0) return fallback();

  Eigen::VectorXd upper(xAct.size()), lower(xAct.size());
  for (Eigen::Index e = 0; e < xAct.size(); ++e) {
    upper[e] = std::min(1.0, xAct[e] + prm.move);
    lower[e] = std::max(0.0, xAct[e] - prm.move);
  }

  double lm = ocP.sum() / (double(m) * prm.volfrac);  // sqrt of the multiplier
  if (!(lm > 0)) return fallback();

  int iterations = 0;
  for (;; ++iterations) {
    if (iterations >= 1000) return fallback();
    double sumClamped = 0, sumMid = 0;
    std::int64_t numMid = 0;
    for (Eigen::Index e = 0; e < xAct.size(); ++e) {
      const double f = ocP[e] / lm;
      if (f > upper[e])
        sumClamped += upper[e];
      else if (f < lower[e])
        sumClamped += lower[e];
      else {
        sumMid += ocP[e];
        ++numMid;
      }
    }
    if (numMid == 0) return fallback();
    const double den = budget - sumClamped;
    if (den <= 0) return fallback();
    const double lmNext = sumMid / den;
    if (!(lmNext > 0) || !std::isfinite(lmNext)) return fallback();
    const bool done = std::abs(lmNext - lm) <= prm.pdTol;
    lm = lmNext;
    if (done) break;
  }

  UpdateResult res;
  res.xNew = x;
  Eigen::VectorXd cand(xAct.size());
  detail::oc_candidate_into(xAct, ocP, lm, prm.move, cand);
  for (size_t i = 0; i < part.act.size(); ++i) res.xNew[part.act[i]] = cand[Eigen::Index(i)];
  res.lambda = lm * lm;
  res.bisections = iterations;
  return res;
}

}  // namespace topopt
