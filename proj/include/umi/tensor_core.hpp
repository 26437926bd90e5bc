#pragma once

#include "error.hpp"

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace umi {

using Index = Eigen::Index;
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

template <typename Derived>
bool all_finite(Eigen::DenseBase<Derived> const &m)
{
  return m.derived().allFinite();
}

/// IQ frame stack. Samples are stored axial-fastest, then lateral, then frame:
/// voxel(z, x, t) lives at z + nz * (x + nx * t).
class FrameSequence {
public:
  FrameSequence() = default;

  FrameSequence(Index nz, Index nx, Index nt)
    : FrameSequence(nz, nx, nt, std::vector<Complex>(static_cast<std::size_t>(nz * nx * nt)))
  {
  }

  FrameSequence(Index nz, Index nx, Index nt, std::vector<Complex> voxels)
    : nz_{nz}
    , nx_{nx}
    , nt_{nt}
    , voxels_{std::move(voxels)}
  {
    require(nz >= 1 && nx >= 1 && nt >= 1, ErrorCode::dimension, "frame sequence dimensions must be positive");
    require(static_cast<Index>(voxels_.size()) == nz * nx * nt, ErrorCode::dimension,
            "frame sequence sample count does not match nz*nx*nt");
  }

  Index nz() const { return nz_; }
  Index nx() const { return nx_; }
  Index nt() const { return nt_; }
  Index pixels() const { return nz_ * nx_; }

  Complex &operator()(Index z, Index x, Index t) { return voxels_[offset(z, x, t)]; }
  Complex operator()(Index z, Index x, Index t) const { return voxels_[offset(z, x, t)]; }

  std::span<Complex const> voxels() const { return voxels_; }
  std::span<Complex> voxels() { return voxels_; }

  bool operator==(FrameSequence const &) const = default;

private:
  std::size_t offset(Index z, Index x, Index t) const
  {
    return static_cast<std::size_t>(z + nz_ * (x + nx_ * t));
  }

  Index nz_ = 0;
  Index nx_ = 0;
  Index nt_ = 0;
  std::vector<Complex> voxels_;
};

/// Casorati matrix (pixels x frames). Column t is frame t vectorized axial-fastest.
inline ComplexMatrix to_casorati(FrameSequence const &seq)
{
  return Eigen::Map<ComplexMatrix const>(seq.voxels().data(), seq.pixels(), seq.nt());
}

inline FrameSequence from_casorati(ComplexMatrix const &m, Index nz, Index nx)
{
  require(nz >= 1 && nx >= 1 && m.rows() == nz * nx, ErrorCode::dimension,
          "Casorati rows (" + std::to_string(m.rows()) + ") != nz*nx (" + std::to_string(nz * nx) + ")");
  std::vector<Complex> voxels(static_cast<std::size_t>(m.size()));
  Eigen::Map<ComplexMatrix>(voxels.data(), m.rows(), m.cols()) = m;
  return {nz, nx, m.cols(), std::move(voxels)};
}

/// Orthonormal basis for the span of the first d columns of m.
/// Throws rank_deficient when those columns are numerically dependent.
inline ComplexMatrix orthonormal_columns(ComplexMatrix const &m, Index d)
{
  require(d >= 1 && d <= std::min(m.rows(), m.cols()), ErrorCode::dimension,
          "orthonormal_columns: d=" + std::to_string(d) + " outside [1, min(rows, cols)]");
  ComplexMatrix const lead = m.leftCols(d);
  Eigen::ColPivHouseholderQR<ComplexMatrix> pivoted(lead);
  pivoted.setThreshold(1e-10);
  if (pivoted.rank() < d) {
    throw Error(ErrorCode::rank_deficient, "leading " + std::to_string(d) + " columns have numerical rank " +
                                             std::to_string(pivoted.rank()));
  }
  Eigen::HouseholderQR<ComplexMatrix> qr(lead);
  return qr.householderQ() * ComplexMatrix::Identity(m.rows(), d);
}

/// Solves a x = rhs for Hermitian positive definite a.
inline ComplexMatrix hermitian_solve(ComplexMatrix const &a, ComplexMatrix const &rhs)
{
  require(a.rows() == a.cols() && a.rows() == rhs.rows(), ErrorCode::dimension, "hermitian_solve: shape mismatch");
  Eigen::LLT<ComplexMatrix> llt(a);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(a, Eigen::EigenvaluesOnly);
    auto const &ev = eig.eigenvalues();
    throw Error(ErrorCode::not_positive_definite,
                "Gram system is not positive definite (eigenvalues in [" + std::to_string(ev.minCoeff()) + ", " +
                  std::to_string(ev.maxCoeff()) + "])");
  }
  return llt.solve(rhs);
}

struct SvdResult {
  ComplexMatrix u;
  RealVector s; // non-negative, non-increasing
  ComplexMatrix v;
};

enum class SvdMode { thin, full };

/// m = u * diag(s) * v^H. Thin mode keeps min(rows, cols) vectors on each side.
inline SvdResult svd(ComplexMatrix const &m, SvdMode mode = SvdMode::thin)
{
  require(m.size() > 0 && all_finite(m), ErrorCode::non_finite, "svd: input must be non-empty and finite");
  unsigned const opts =
    mode == SvdMode::thin ? (Eigen::ComputeThinU | Eigen::ComputeThinV) : (Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::BDCSVD<ComplexMatrix> dec(m, opts);
  return {dec.matrixU(), dec.singularValues(), dec.matrixV()};
}

inline double frobenius_sq(ComplexMatrix const &m) { return m.squaredNorm(); }

} // namespace umi
