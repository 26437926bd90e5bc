#include "umi/svd_filter.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <vector>

using namespace umi;
using umi::test::random_complex;

TEST(SvdFilter, KeepAllReproducesInput)
{
  std::mt19937_64 rng(1);
  ComplexMatrix const d = random_complex(12, 6, rng);
  ComplexMatrix const b = svd_clutter_filter(d, {0, 6});
  EXPECT_LE((b - d).norm(), 1e-10 * d.norm());
}

TEST(SvdFilter, EmptyBandThrows)
{
  std::mt19937_64 rng(2);
  ComplexMatrix const d = random_complex(8, 4, rng);
  EXPECT_THROW(svd_clutter_filter(d, {4, 4}), Error);
  EXPECT_THROW(svd_clutter_filter(d, {2, 5}), Error);
  EXPECT_THROW(svd_clutter_filter(d, {-1, 2}), Error);
}

TEST(SvdFilter, RemovesDominantComponent)
{
  std::mt19937_64 rng(3);
  ComplexMatrix const q1 = umi::test::gram_schmidt(random_complex(10, 2, rng));
  ComplexMatrix const q2 = umi::test::gram_schmidt(random_complex(6, 2, rng));
  ComplexMatrix const first = 1000.0 * q1.col(0) * q2.col(0).adjoint();
  ComplexMatrix const second = 2.0 * q1.col(1) * q2.col(1).adjoint();
  ComplexMatrix const b = svd_clutter_filter(first + second, {1, 2});
  EXPECT_LE((b - second).norm(), 1e-10 * second.norm() * 1000.0);
  EXPECT_LE((b - second).norm(), 1e-10 * (first + second).norm());
}

TEST(SvdFilter, LinearityIdempotenceAndEnergySplit)
{
  std::mt19937_64 rng(4);
  ComplexMatrix const d = random_complex(20, 8, rng);
  SvdCutoffs const cut{2, 6};
  SvdResult const dec = svd(d);
  ComplexMatrix const kept = svd_clutter_filter(dec, cut);

  ComplexMatrix const scaled = svd_clutter_filter(3.5 * d, cut);
  EXPECT_LE((scaled - 3.5 * kept).norm(), 1e-10 * scaled.norm());

  // Projector onto the kept singular subspaces, reapplied.
  auto const u = dec.u.middleCols(2, 4);
  auto const v = dec.v.middleCols(2, 4);
  ComplexMatrix const again = u * (u.adjoint() * kept * v) * v.adjoint();
  EXPECT_LE((again - kept).norm(), 1e-10 * kept.norm());

  ComplexMatrix const removed = d - kept;
  EXPECT_NEAR(d.squaredNorm(), removed.squaredNorm() + kept.squaredNorm(), 1e-9 * d.squaredNorm());
}

TEST(EstimateLowCut, ScansAgainstFraction)
{
  std::vector<double> const a{100.0, 50.0, 0.5, 0.1};
  EXPECT_EQ(estimate_low_cut(a, 0.01), 2);
  std::vector<double> const flat(5, 3.0);
  EXPECT_EQ(estimate_low_cut(flat), 4);
  std::vector<double> const two{1.0, 1e-9};
  EXPECT_EQ(estimate_low_cut(two), 1);
  EXPECT_THROW(estimate_low_cut(std::vector<double>{}), Error);
}
