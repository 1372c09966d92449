#pragma once

#include <Eigen/Dense>

#include <stdexcept>

namespace topopt {

struct AndersonOptions {
  int depth = 4;        // residual/update difference columns retained
  int period = 4;       // extrapolate once every `period` calls
  double mixPlain = 0.9;   // relaxation on non-extrapolated steps
  double mixAccel = 1.0;   // damping on extrapolated steps
};

/// Periodic Anderson extrapolation of a fixed-point sequence. Call step()
/// once per outer iteration with the current point and its residual
/// (update minus point); difference columns of the last `depth` calls feed a
/// small least-squares problem whose solution corrects the damped step every
/// `period` calls. Box clamping of the result is left to the caller.
class AndersonAccelerator {
 public:
  explicit AndersonAccelerator(AndersonOptions opt) : opt_(opt) {
    if (opt_.depth < 1 || opt_.period < 1)
      throw std::invalid_argument("anderson: depth and period must be >= 1");
  }

  int historySize() const { return cols_; }

  void reset() {
    cols_ = 0;
    next_ = 0;
    counter_ = 0;
    hasPrev_ = false;
  }

  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& r) {
    if (x.size() != r.size()) throw std::invalid_argument("anderson: length mismatch");
    if (dx_.rows() != x.size()) {
      dx_.resize(x.size(), opt_.depth);
      dr_.resize(x.size(), opt_.depth);
      reset();
    }

    const int t = counter_++;
    if (hasPrev_) {  // cyclic window, oldest column overwritten
      dx_.col(next_) = x - prevX_;
      dr_.col(next_) = r - prevR_;
      next_ = (next_ + 1) % opt_.depth;
      cols_ = std::min(cols_ + 1, opt_.depth);
    }
    prevX_ = x;
    prevR_ = r;
    hasPrev_ = true;

    const bool extrapolate = (t % opt_.period == 0) && cols_ >= 2;
    const double mix = extrapolate ? opt_.mixAccel : opt_.mixPlain;
    Eigen::VectorXd out = x + mix * r;
    if (extrapolate) {
      const auto X = dx_.leftCols(cols_);
      const auto R = dr_.leftCols(cols_);
      const Eigen::VectorXd gamma = solve_gamma(R, r);
      out -= (X + mix * R) * gamma;
    }
    return out;
  }

 private:
  // normal equations R'R gamma = R'r, rank-deficient directions truncated
  static Eigen::VectorXd solve_gamma(const Eigen::Ref<const Eigen::MatrixXd>& R,
                                     const Eigen::VectorXd& r) {
    const Eigen::MatrixXd G = R.transpose() * R;
    const Eigen::VectorXd rhs = R.transpose() * r;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
    const Eigen::VectorXd& ev = eig.eigenvalues();
    const double cutoff = ev.cwiseAbs().maxCoeff() * 1e-13;
    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(R.cols());
    if (!(cutoff > 0)) return gamma;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      if (ev[i] > cutoff) {
        const Eigen::VectorXd v = eig.eigenvectors().col(i);
        gamma += v * (v.dot(rhs) / ev[i]);
      }
    }
    return gamma;
  }

  AndersonOptions opt_;
  Eigen::MatrixXd dx_, dr_;
  Eigen::VectorXd prevX_, prevR_;
  int cols_ = 0;
  int next_ = 0;
  int counter_ = 0;
  bool hasPrev_ = false;
};

}  // namespace topopt
