#pragma once

#include "tensor_core.hpp"

#include <cmath>

namespace umi {

struct AdamParameters {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments and a per-coordinate step size.
class Adam {
public:
  Adam(Index n, RealVector step_sizes, AdamParameters params = {})
    : step_{std::move(step_sizes)}
    , mom1_{RealVector::Zero(n)}
    , mom2_{RealVector::Zero(n)}
    , params_{params}
  {
    require(step_.size() == n, ErrorCode::dimension, "Adam: one step size per parameter");
  }

  // Descends along grad.
  void step(RealVector &x, RealVector const &grad)
  {
    require(x.size() == mom1_.size() && grad.size() == mom1_.size(), ErrorCode::dimension, "Adam: size mismatch");
    ++t_;
    mom1_ = params_.beta1 * mom1_ + (1.0 - params_.beta1) * grad;
    mom2_ = params_.beta2 * mom2_ + (1.0 - params_.beta2) * grad.cwiseAbs2();
    double const corr1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
    double const corr2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
    for (Index i = 0; i < x.size(); ++i) {
      x(i) -= step_(i) * (mom1_(i) / corr1) / (std::sqrt(mom2_(i) / corr2) + params_.epsilon);
    }
  }

  long steps() const { return t_; }

private:
  RealVector step_;
  RealVector mom1_;
  RealVector mom2_;
  AdamParameters params_;
  long t_ = 0;
};

} // namespace umi
