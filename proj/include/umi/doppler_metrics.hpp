#pragma once

#include "tensor_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace umi {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// PD(pixel) = (1/Ne) sum_t |B(pixel, t)|^2, returned as nz x nx.
inline RealMatrix power_doppler(ComplexMatrix const &b, Index nz, Index nx)
{
  require(b.cols() >= 1, ErrorCode::dimension, "power_doppler needs at least one frame");
  require(nz >= 1 && nx >= 1 && b.rows() == nz * nx, ErrorCode::dimension, "power_doppler: rows != nz*nx");
  RealVector const pd = b.cwiseAbs2().rowwise().sum() / static_cast<double>(b.cols());
  return pd.reshaped(nz, nx);
}

struct VelocityImage {
  RealMatrix velocity;  // mm/s, positive = increasing depth
  Mask low_confidence;  // lag-one autocorrelation was exactly zero
};

/// Lag-one autocorrelation (Kasai) estimator: v = c rate / (4 pi f0) arg(sum_t B(t+1) conj(B(t))).
/// rate is the slow-time sampling rate of the columns of b.
inline VelocityImage doppler_velocity(ComplexMatrix const &b, Index nz, Index nx, double rate, double f0,
                                      double c = 1540.0)
{
  require(b.cols() >= 2, ErrorCode::dimension, "doppler_velocity needs at least two frames");
  require(b.rows() == nz * nx, ErrorCode::dimension, "doppler_velocity: rows != nz*nx");
  require(rate > 0.0 && f0 > 0.0 && c > 0.0, ErrorCode::domain, "doppler_velocity: rates and speed must be positive");
  Index const n = b.cols();
  ComplexVector const r1 =
    (b.rightCols(n - 1).array() * b.leftCols(n - 1).conjugate().array()).rowwise().sum().matrix();
  double const scale = c * rate / (4.0 * std::numbers::pi * f0) * 1e3;
  VelocityImage out;
  out.velocity.resize(nz, nx);
  out.low_confidence.resize(nz, nx);
  for (Index p = 0; p < r1.size(); ++p) {
    bool const zero = r1(p) == Complex(0.0, 0.0);
    out.low_confidence(p) = zero;
    out.velocity(p) = zero ? 0.0 : scale * std::arg(r1(p));
  }
  return out;
}

struct RoiStats {
  double mean = 0.0;
  double stddev = 0.0; // population standard deviation
  double max = 0.0;
  Index count = 0;
};

inline RoiStats roi_stats(RealMatrix const &pd, Mask const &mask)
{
  require(mask.rows() == pd.rows() && mask.cols() == pd.cols(), ErrorCode::dimension, "ROI mask shape differs from image");
  RoiStats s;
  s.count = mask.count();
  require(s.count > 0, ErrorCode::domain, "ROI mask is empty");
  double sum = 0.0;
  s.max = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < pd.size(); ++i) {
    if (!mask(i)) { continue; }
    sum += pd(i);
    s.max = std::max(s.max, pd(i));
  }
  s.mean = sum / static_cast<double>(s.count);
  double ss = 0.0;
  for (Index i = 0; i < pd.size(); ++i) {
    if (mask(i)) { ss += (pd(i) - s.mean) * (pd(i) - s.mean); }
  }
  s.stddev = std::sqrt(ss / static_cast<double>(s.count));
  return s;
}

namespace detail {

inline void check_rois(Mask const &blood, Mask const &tissue)
{
  require(blood.rows() == tissue.rows() && blood.cols() == tissue.cols(), ErrorCode::dimension,
          "blood and tissue ROI shapes differ");
  require(!(blood && tissue).any(), ErrorCode::domain, "blood and tissue ROIs overlap");
}

inline double positive_db(double ratio, char const *what)
{
  require(std::isfinite(ratio) && ratio > 0.0, ErrorCode::domain,
          std::string(what) + " ratio is not positive (" + std::to_string(ratio) + "), log undefined");
  return 10.0 * std::log10(ratio);
}

} // namespace detail

/// 10 log10((mean_blood - mean_tissue) / std_tissue)
inline double cnr(RealMatrix const &pd, Mask const &blood, Mask const &tissue)
{
  detail::check_rois(blood, tissue);
  RoiStats const b = roi_stats(pd, blood);
  RoiStats const t = roi_stats(pd, tissue);
  require(t.stddev > 0.0, ErrorCode::domain, "tissue ROI has zero standard deviation");
  return detail::positive_db((b.mean - t.mean) / t.stddev, "CNR");
}

/// 10 log10(mean_blood / std_tissue)
inline double snr(RealMatrix const &pd, Mask const &blood, Mask const &tissue)
{
  detail::check_rois(blood, tissue);
  RoiStats const b = roi_stats(pd, blood);
  RoiStats const t = roi_stats(pd, tissue);
  require(t.stddev > 0.0, ErrorCode::domain, "tissue ROI has zero standard deviation");
  return detail::positive_db(b.mean / t.stddev, "SNR");
}

/// 10 log10(max_blood / mean_tissue)
inline double psl(RealMatrix const &pd, Mask const &blood, Mask const &tissue)
{
  detail::check_rois(blood, tissue);
  RoiStats const b = roi_stats(pd, blood);
  RoiStats const t = roi_stats(pd, tissue);
  require(t.mean > 0.0, ErrorCode::domain, "tissue ROI has zero mean power");
  return detail::positive_db(b.max / t.mean, "PSL");
}

struct LinearFit {
  double r_squared = 0.0;
  double slope = 0.0;
  double intercept = 0.0;
  Index count = 0;
};

/// Least-squares fit estimate ~ slope * truth + intercept over the mask, with R^2 of that fit.
inline LinearFit r_squared(RealMatrix const &estimate, RealMatrix const &truth, Mask const &mask)
{
  require(estimate.rows() == truth.rows() && estimate.cols() == truth.cols() && mask.rows() == truth.rows() &&
            mask.cols() == truth.cols(),
          ErrorCode::dimension, "r_squared: image shapes differ");
  LinearFit fit;
  fit.count = mask.count();
  require(fit.count > 0, ErrorCode::domain, "r_squared: mask is empty");
  double mx = 0.0, my = 0.0;
  for (Index i = 0; i < truth.size(); ++i) {
    if (mask(i)) {
      mx += truth(i);
      my += estimate(i);
    }
  }
  mx /= static_cast<double>(fit.count);
  my /= static_cast<double>(fit.count);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (Index i = 0; i < truth.size(); ++i) {
    if (!mask(i)) { continue; }
    double const dx = truth(i) - mx;
    double const dy = estimate(i) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  require(sxx > 0.0, ErrorCode::domain, "r_squared: truth is constant over the mask");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 0.0; // constant estimate explains nothing
  return fit;
}

/// dB image relative to its maximum, clipped at -dynamic_range_db.
inline RealMatrix log_compress(RealMatrix const &power, double dynamic_range_db)
{
  require(dynamic_range_db > 0.0, ErrorCode::domain, "dynamic range must be positive");
  double const peak = power.maxCoeff();
  RealMatrix out(power.rows(), power.cols());
  for (Index i = 0; i < power.size(); ++i) {
    double const db = (peak > 0.0 && power(i) > 0.0) ? 10.0 * std::log10(power(i) / peak) : -dynamic_range_db;
    out(i) = std::max(db, -dynamic_range_db);
  }
  return out;
}

} // namespace umi
