#include "umi/phantom_sim.hpp"

#include <gtest/gtest.h>

using namespace umi;

namespace {

PhantomConfig one_unit()
{
  PhantomConfig cfg;
  cfg.n_units = 1;
  return cfg;
}

PhantomScene const &shared_scene()
{
  static PhantomScene const s = build_phantom(21, one_unit());
  return s;
}

} // namespace

TEST(Phantom, BuildIsDeterministic)
{
  PhantomScene const a = build_phantom(5, one_unit());
  PhantomScene const b = build_phantom(5, one_unit());
  EXPECT_EQ(a.tissue.z, b.tissue.z);
  EXPECT_EQ(a.tissue.amplitude, b.tissue.amplitude);
  ASSERT_EQ(a.flow.size(), b.flow.size());
  for (std::size_t i = 0; i < a.flow.size(); ++i) { ASSERT_EQ(a.flow[i].s0, b.flow[i].s0); }
  EXPECT_EQ(a.noise_reference_power, b.noise_reference_power);
  PhantomScene const c = build_phantom(6, one_unit());
  EXPECT_NE(a.tissue.z, c.tissue.z);
}

TEST(Phantom, NetworksConserveFlowAndHitTargets)
{
  PhantomConfig cfg;
  PhantomScene const s = build_phantom(3, cfg);
  ASSERT_EQ(s.networks.size(), 8u);
  for (auto const &n : s.networks) {
    EXPECT_LE(n.conservation_residual(), 1e-10);
    EXPECT_GE(n.v_max(0), 20.0);
    EXPECT_LE(n.v_max(0), 30.0);
  }
}

TEST(Phantom, ScattererDensityOverTissueVolume)
{
  PhantomScene const &s = shared_scene();
  // Tissue volume of the seeding box by a regular midpoint lattice.
  int const nz = 120, nx = 120, ny = 24;
  double const hz = (s.box[1] - s.box[0]) / nz;
  double const hx = (s.box[3] - s.box[2]) / nx;
  double const hy = s.elevation_mm / ny;
  long inside = 0;
  for (int i = 0; i < nz; ++i) {
    for (int j = 0; j < nx; ++j) {
      for (int k = 0; k < ny; ++k) {
        double const z = s.box[0] + (i + 0.5) * hz;
        double const x = s.box[2] + (j + 0.5) * hx;
        double const y = -s.elevation_mm / 2 + (k + 0.5) * hy;
        if (inside_tissue(s, z, x) && !inside_vessel(s, z, x, y)) { ++inside; }
      }
    }
  }
  double const volume = static_cast<double>(inside) * hz * hx * hy;
  double const density = static_cast<double>(s.tissue.size()) / volume;
  EXPECT_NEAR(density, 189.0, 0.05 * 189.0);

  // Vessel volume inside the slab: disc cut by the strip |y| <= h, area 2 (h sqrt(R^2 - h^2) + R^2 asin(h / R)).
  double vessel_volume = 0.0;
  for (auto const &e : s.edges) {
    double const r = e.radius_mm;
    double const h = std::min(r, s.elevation_mm / 2.0);
    vessel_volume += 2.0 * (h * std::sqrt(r * r - h * h) + r * r * std::asin(h / r)) * e.length_mm;
  }
  EXPECT_NEAR(static_cast<double>(s.flow.size()) / vessel_volume, 189.0, 0.05 * 189.0);
  for (auto const &f : s.flow) { ASSERT_LE(std::abs(f.y), s.elevation_mm / 2.0); }
  for (std::size_t i = 0; i < s.tissue.size(); ++i) { ASSERT_LE(std::abs(s.tissue.y[i]), s.elevation_mm / 2.0); }
}

TEST(Phantom, ElevationSlabSetting)
{
  PhantomConfig cfg;
  cfg.n_units = 1;
  cfg.dz_mm = 0.3;
  cfg.dx_mm = 0.3;
  EXPECT_EQ(build_phantom(4, cfg).elevation_mm, 0.3);
  cfg.elevation_mm = 0.0;
  PhantomScene const full = build_phantom(4, cfg);
  EXPECT_EQ(full.elevation_mm, 2.0 * full.units.front().edges.front().radius_mm);
  double const r = full.edges.front().radius_mm;
  double max_y = 0.0;
  for (auto const &f : full.flow) {
    if (f.edge == 0) { max_y = std::max(max_y, std::abs(f.y)); }
  }
  EXPECT_GT(max_y, 0.9 * r); // whole cross-section populated
}

TEST(Phantom, AmplitudeRatio)
{
  PhantomScene const &s = shared_scene();
  double t = 0.0, f = 0.0;
  for (double a : s.tissue.amplitude) { t += a; }
  for (auto const &p : s.flow) { f += p.amplitude; }
  double const ratio = (t / static_cast<double>(s.tissue.size())) / (f / static_cast<double>(s.flow.size()));
  EXPECT_GE(ratio, 18.0);
  EXPECT_LE(ratio, 22.0);
}

TEST(Phantom, GeometryInsideOvalAndRotationBounded)
{
  PhantomScene const &s = shared_scene();
  EXPECT_LE(std::abs(s.rotation_deg), 10.0);
  for (std::size_t i = 0; i < s.tissue.size(); i += 97) {
    EXPECT_TRUE(inside_tissue(s, s.tissue.z[i], s.tissue.x[i]));
    EXPECT_FALSE(inside_vessel(s, s.tissue.z[i], s.tissue.x[i], s.tissue.y[i]));
  }
  // Squashed oval: axial semi-axis 0.8 * 17.5 mm, lateral 17.5 mm (before rotation).
  PhantomScene flat = s;
  flat.rotation_deg = 0.0;
  EXPECT_TRUE(inside_tissue(flat, flat.centre_z + 13.9, flat.centre_x));
  EXPECT_FALSE(inside_tissue(flat, flat.centre_z + 14.1, flat.centre_x));
  EXPECT_TRUE(inside_tissue(flat, flat.centre_z, flat.centre_x + 17.4));
}

TEST(AdvanceScene, InitialAndPeriodicPositions)
{
  PhantomScene const &s = shared_scene();
  ScenePositions const p0 = advance_scene(s, 0.0);
  EXPECT_EQ(p0.tissue_z, s.tissue.z);
  EXPECT_EQ(p0.tissue_x, s.tissue.x);
  ScenePositions const p3 = advance_scene(s, 3.0);
  for (std::size_t i = 0; i < s.tissue.size(); ++i) {
    ASSERT_NEAR(p3.tissue_z[i], s.tissue.z[i], 1e-9);
    ASSERT_NEAR(p3.tissue_x[i], s.tissue.x[i], 1e-9);
  }
  ScenePositions const mid = advance_scene(s, 1.5);
  double const eps = 0.02; // peak strain at half cycle
  std::size_t const i = 0;
  EXPECT_NEAR(mid.tissue_z[i], s.tissue.z[i] - eps * (s.tissue.z[i] - s.centre_z), 1e-12);
  EXPECT_NEAR(mid.tissue_x[i], s.tissue.x[i] + 0.5 * eps * (s.tissue.x[i] - s.centre_x), 1e-12);
  EXPECT_THROW(advance_scene(s, -1.0), Error);
}

TEST(AdvanceScene, BloodKinematics)
{
  PhantomScene s = shared_scene();
  s.config.tissue_motion = false;
  // Put one scatterer on the root axis of a 25 mm/s edge.
  s.edges[0].v_max = 25.0;
  s.flow[0].edge = 0;
  s.flow[0].s0 = 0.5;
  s.flow[0].offset = 0.0;
  s.flow[0].y = 0.0;
  s.flow[0].speed = 25.0;
  double const dt = 0.04;
  ScenePositions const a = advance_scene(s, 0.0);
  ScenePositions const b = advance_scene(s, dt);
  double const dz = b.flow_z[0] - a.flow_z[0];
  double const dx = b.flow_x[0] - a.flow_x[0];
  EXPECT_NEAR(std::hypot(dz, dx), 25.0 * dt, 1e-12);
  EXPECT_NEAR(dz * s.edges[0].dir_z + dx * s.edges[0].dir_x, 25.0 * dt, 1e-12);

  // Exit recycles to the inlet at the same offset.
  double const len = s.edges[0].length_mm;
  ScenePositions const c = advance_scene(s, (len - 0.5 + 0.25) / 25.0);
  double const along = (c.flow_z[0] - s.edges[0].z0) * s.edges[0].dir_z + (c.flow_x[0] - s.edges[0].x0) * s.edges[0].dir_x;
  EXPECT_NEAR(along, 0.25, 1e-9);

  PhantomScene const &orig = shared_scene();
  for (auto const &f : orig.flow) {
    auto const &e = orig.edges[static_cast<std::size_t>(f.edge)];
    double const r2 = f.offset * f.offset + f.y * f.y;
    ASSERT_LE(r2, e.radius_mm * e.radius_mm * (1 + 1e-12));
    ASSERT_NEAR(f.speed, e.v_max * (1.0 - r2 / (e.radius_mm * e.radius_mm)), 1e-9);
  }
}

TEST(Synthesis, NoiseFreeAndComponentsExact)
{
  PhantomScene const &s = shared_scene();
  SynthesisResult const clean = synthesize_iq(s, 0, 3, std::numeric_limits<double>::infinity(), true);
  ComplexMatrix const d = to_casorati(clean.data);
  EXPECT_TRUE((d.array() == (clean.tissue + clean.blood).array()).all());
  EXPECT_TRUE(clean.noise.isZero(0.0));

  SynthesisResult const noisy = synthesize_iq(s, 0, 3, 25.0, true);
  ComplexMatrix const dn = to_casorati(noisy.data);
  ComplexMatrix const rebuilt = (noisy.tissue + noisy.blood) + noisy.noise;
  EXPECT_TRUE((dn.array() == rebuilt.array()).all());
  EXPECT_TRUE((noisy.tissue.array() == clean.tissue.array()).all());
}

TEST(Synthesis, EmpiricalSnr)
{
  PhantomScene const &s = shared_scene();
  SynthesisResult const r = synthesize_iq(s, 0, 20, 25.0, true);
  double const snr = 10.0 * std::log10((r.tissue + r.blood).squaredNorm() / r.noise.squaredNorm());
  EXPECT_NEAR(snr, 25.0, 0.2);
}

TEST(Synthesis, ChunkingDoesNotChangeSamples)
{
  PhantomScene const &s = shared_scene();
  ComplexMatrix const whole = to_casorati(synthesize_iq(s, 0, 6, 25.0).data);
  ComplexMatrix const tail = to_casorati(synthesize_iq(s, 4, 2, 25.0).data);
  EXPECT_TRUE((whole.rightCols(2).array() == tail.array()).all());
  ComplexMatrix const again = to_casorati(synthesize_iq(s, 0, 6, 25.0).data);
  EXPECT_TRUE((whole.array() == again.array()).all());
}

TEST(Synthesis, StaticSceneIsRankOne)
{
  PhantomScene s = shared_scene();
  s.config.tissue_motion = false;
  s.flow.clear();
  ComplexMatrix const d = to_casorati(synthesize_iq(s, 0, 4, std::numeric_limits<double>::infinity()).data);
  for (Index t = 1; t < d.cols(); ++t) { EXPECT_TRUE((d.col(t).array() == d.col(0).array()).all()); }
  EXPECT_GT(d.norm(), 0.0);
}

TEST(Synthesis, PsfOfSingleScatterer)
{
  PhantomScene s = shared_scene();
  s.config.tissue_motion = false;
  s.flow.clear();
  s.tissue = {};
  double const z = s.grid.z(40);
  double const x = s.grid.x(30);
  s.tissue.z = {z};
  s.tissue.x = {x};
  s.tissue.y = {0.0};
  s.tissue.amplitude = {2.0};
  FrameSequence const f = synthesize_iq(s, 0, 1, std::numeric_limits<double>::infinity()).data;
  double const k = 4.0 * std::numbers::pi * 7.5e6 / 1540.0 * 1e-3;
  EXPECT_NEAR(std::abs(f(40, 30, 0) - std::polar(2.0, k * z)), 0.0, 1e-12);
  // Half maximum at half the FWHM, axial 2 wavelengths.
  double const lambda = 1540.0 / 7.5e6 * 1e3;
  double const dz = s.grid.dz;
  double const expect = 2.0 * std::exp(-(dz * dz) / (2.0 * std::pow(2.0 * lambda / 2.3548200450309493, 2)));
  EXPECT_NEAR(std::abs(f(41, 30, 0)), expect, 1e-12);
}

TEST(GroundTruthMasks, ConsistentWithGeometry)
{
  PhantomScene const &s = shared_scene();
  GroundTruth const gt = ground_truth(s, 0.5);
  EXPECT_GT(gt.flow_mask.count(), 100);
  EXPECT_GT(gt.tissue_mask.count(), 100);
  EXPECT_FALSE((gt.flow_mask && gt.tissue_mask).any());
  double vmax = 0.0;
  for (auto const &e : s.edges) { vmax = std::max(vmax, e.v_max); }
  EXPECT_LE(gt.axial_velocity.cwiseAbs().maxCoeff(), vmax);
  for (Index i = 0; i < gt.axial_velocity.size(); ++i) {
    if (!gt.flow_mask(i)) { ASSERT_EQ(gt.axial_velocity(i), 0.0); }
  }
}
