#pragma once

#include "tensor_core.hpp"

#include <span>
#include <string>

namespace umi {

/// Keeps singular components low_cut+1 .. high_cut (1-indexed) as blood.
struct SvdCutoffs {
  Index low_cut = 0;
  Index high_cut = 0;

  void validate(Index rank) const
  {
    require(low_cut >= 0 && low_cut < high_cut && high_cut <= rank, ErrorCode::config,
            "SVD cutoffs must satisfy 0 <= low_cut (" + std::to_string(low_cut) + ") < high_cut (" +
              std::to_string(high_cut) + ") <= " + std::to_string(rank));
  }
};

inline ComplexMatrix svd_clutter_filter(SvdResult const &dec, SvdCutoffs const &cut)
{
  Index const rank = dec.s.size();
  cut.validate(rank);
  Index const band = cut.high_cut - cut.low_cut;
  auto const u = dec.u.middleCols(cut.low_cut, band);
  auto const v = dec.v.middleCols(cut.low_cut, band);
  return u * dec.s.segment(cut.low_cut, band).cast<Complex>().asDiagonal() * v.adjoint();
}

inline ComplexMatrix svd_clutter_filter(ComplexMatrix const &d_mat, SvdCutoffs const &cut)
{
  cut.validate(std::min(d_mat.rows(), d_mat.cols()));
  return svd_clutter_filter(svd(d_mat), cut);
}

/// Smallest k with s[k] < fraction * s[0] (0-indexed), clamped to [1, len - 1].
inline Index estimate_low_cut(std::span<double const> singular_values, double fraction = 0.01)
{
  Index const n = static_cast<Index>(singular_values.size());
  require(n >= 2, ErrorCode::dimension, "estimate_low_cut needs at least two singular values");
  require(singular_values[0] > 0.0, ErrorCode::domain, "leading singular value must be positive");
  double const threshold = fraction * singular_values[0];
  for (Index k = 1; k < n; ++k) {
    if (singular_values[static_cast<std::size_t>(k)] < threshold) { return k; }
  }
  return n - 1;
}

inline Index estimate_low_cut(RealVector const &s, double fraction = 0.01)
{
  return estimate_low_cut(std::span<double const>(s.data(), static_cast<std::size_t>(s.size())), fraction);
}

} // namespace umi
