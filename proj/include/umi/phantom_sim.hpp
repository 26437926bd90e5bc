#pragma once

// Kidney-like flow phantom: radially arranged flow units inside an oval tissue
// slab, parametric compression of the tissue, Poiseuille advection of blood
// scatterers, and IQ frames rendered through a separable Gaussian PSF.
// Positions are (z axial, x lateral, y elevation) in mm; time in s.

#include "hydraulics.hpp"
#include "tensor_core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

namespace umi {

struct ImagingConfig {
  double center_frequency = 7.5e6; // Hz
  double sound_speed = 1540.0;     // m/s
  double frame_rate = 1000.0;      // Hz, also the slow-time rate
  double prf = 5000.0;             // Hz, recorded in the dataset header only
  double axial_fwhm_wavelengths = 2.0;
  double lateral_fwhm_wavelengths = 3.0;
  double psf_cutoff_sigmas = 3.0;

  double wavelength_mm() const { return sound_speed / center_frequency * 1e3; }
  double sigma_z_mm() const { return axial_fwhm_wavelengths * wavelength_mm() / (2.0 * std::sqrt(2.0 * std::log(2.0))); }
  double sigma_x_mm() const { return lateral_fwhm_wavelengths * wavelength_mm() / (2.0 * std::sqrt(2.0 * std::log(2.0))); }
};

struct PhantomConfig {
  Index n_units = 8;
  int slots = 8;
  double tissue_radius_mm = 17.5;
  double oval_factor = 0.8; // axial squash of the cylinder cross-section
  double max_rotation_deg = 10.0;
  double unit_offset_mm = 2.5; // distance of each unit root from the centre
  double centre_depth_mm = 22.0;
  double density_per_mm3 = 189.0;
  double amplitude_ratio = 20.0;
  double max_strain = 0.02;
  double motion_period_s = 3.0;
  double lateral_ratio = 0.5;
  bool tissue_motion = true;
  double v_target_min = 20.0; // mm/s
  double v_target_max = 30.0;
  double mu = 0.004;
  FlowUnitRanges ranges;
  // Crop the image to the flow units plus margin_mm; otherwise image the whole oval.
  bool crop_to_units = true;
  double margin_mm = 1.0;
  double dz_mm = 0.1;
  double dx_mm = 0.15;
  // Elevation thickness of the imaged slab. Scatterers outside it are not simulated,
  // so the image shows an in-plane section rather than an elevation average.
  // Values <= 0 span the widest root vessel.
  double elevation_mm = 0.3;
};

struct ImageGrid {
  Index nz = 0;
  Index nx = 0;
  double z0 = 0.0; // depth of row 0, mm
  double x0 = 0.0; // lateral position of column 0, mm
  double dz = 0.1;
  double dx = 0.1;

  Index pixels() const { return nz * nx; }
  double z(Index i) const { return z0 + static_cast<double>(i) * dz; }
  double x(Index j) const { return x0 + static_cast<double>(j) * dx; }
};

/// One vessel segment placed in the image plane (y = 0 on its axis).
struct PlacedEdge {
  double z0 = 0.0;
  double x0 = 0.0;
  double dir_z = 1.0;
  double dir_x = 0.0;
  double length_mm = 0.0;
  double radius_mm = 0.0;
  double v_max = 0.0; // mm/s along (dir_z, dir_x)
};

struct FlowScatterer {
  std::int32_t edge = 0;
  double s0 = 0.0;     // initial axial position along the edge, mm
  double offset = 0.0; // in-plane offset perpendicular to the axis, mm
  double y = 0.0;      // elevation, mm
  double speed = 0.0;  // v_max (1 - (r/R)^2), mm/s
  double amplitude = 0.0;
};

struct TissueScatterers {
  std::vector<double> z, x, y, amplitude;
  std::size_t size() const { return z.size(); }
};

struct PhantomScene {
  PhantomConfig config;
  ImagingConfig imaging;
  ImageGrid grid;
  double centre_z = 0.0;
  double centre_x = 0.0;
  double rotation_deg = 0.0;
  double elevation_mm = 0.0; // slab thickness
  std::vector<FlowUnit> units;
  std::vector<FlowNetwork> networks;
  std::vector<PlacedEdge> edges;
  TissueScatterers tissue;
  std::vector<FlowScatterer> flow;
  // Box in which tissue scatterers were seeded (z_min, z_max, x_min, x_max).
  double box[4] = {0.0, 0.0, 0.0, 0.0};
  double noise_reference_power = 0.0; // mean |T + B|^2 per sample at t = 0
  std::uint64_t seed = 0;
};

namespace detail {

enum class Stream : std::uint64_t { geometry = 1, scatterers = 2, noise = 3 };

// Independent generator per (seed, purpose, index) so frames can be drawn in any order.
inline std::mt19937_64 stream_rng(std::uint64_t seed, Stream purpose, std::uint64_t index = 0)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

} // namespace detail

/// Tissue strain at time t: max_strain * sin^2(pi t / period).
inline double tissue_strain(PhantomConfig const &cfg, double t)
{
  if (!cfg.tissue_motion) { return 0.0; }
  double const s = std::sin(std::numbers::pi * t / cfg.motion_period_s);
  return cfg.max_strain * s * s;
}

/// True when (z, x) lies in the rotated oval cross-section.
inline bool inside_tissue(PhantomScene const &s, double z, double x)
{
  double const th = detail::deg2rad(s.rotation_deg);
  double const dz = z - s.centre_z;
  double const dx = x - s.centre_x;
  double const zr = std::cos(th) * dz + std::sin(th) * dx;
  double const xr = -std::sin(th) * dz + std::cos(th) * dx;
  double const rz = s.config.tissue_radius_mm * s.config.oval_factor;
  double const rx = s.config.tissue_radius_mm;
  return (zr * zr) / (rz * rz) + (xr * xr) / (rx * rx) <= 1.0;
}

/// Squared distance from (z, x, y) to the axis segment of e, or +inf outside the segment span.
inline double axis_distance_sq(PlacedEdge const &e, double z, double x, double y)
{
  double const rz = z - e.z0;
  double const rx = x - e.x0;
  double const s = rz * e.dir_z + rx * e.dir_x;
  if (s < 0.0 || s > e.length_mm) { return std::numeric_limits<double>::infinity(); }
  double const p = -rz * e.dir_x + rx * e.dir_z;
  return p * p + y * y;
}

inline bool inside_vessel(PhantomScene const &s, double z, double x, double y)
{
  for (auto const &e : s.edges) {
    if (axis_distance_sq(e, z, x, y) <= e.radius_mm * e.radius_mm) { return true; }
  }
  return false;
}

struct ScenePositions {
  std::vector<double> tissue_z, tissue_x;
  std::vector<double> flow_z, flow_x;
};

/// Scatterer positions at time t. Blood moves along its edge and re-enters at the
/// inlet on exit; everything is then displaced by the tissue strain field.
inline ScenePositions advance_scene(PhantomScene const &s, double t)
{
  require(t >= 0.0, ErrorCode::domain, "advance_scene: time must be non-negative");
  double const eps = tissue_strain(s.config, t);
  double const nu = s.config.lateral_ratio;
  auto displace = [&](double &z, double &x) {
    double const dz = z - s.centre_z;
    double const dx = x - s.centre_x;
    z -= eps * dz;
    x += nu * eps * dx;
  };

  ScenePositions p;
  p.tissue_z = s.tissue.z;
  p.tissue_x = s.tissue.x;
  if (eps != 0.0) {
    for (std::size_t i = 0; i < s.tissue.size(); ++i) { displace(p.tissue_z[i], p.tissue_x[i]); }
  }
  p.flow_z.resize(s.flow.size());
  p.flow_x.resize(s.flow.size());
  for (std::size_t i = 0; i < s.flow.size(); ++i) {
    FlowScatterer const &f = s.flow[i];
    PlacedEdge const &e = s.edges[static_cast<std::size_t>(f.edge)];
    double along = std::fmod(f.s0 + f.speed * t, e.length_mm);
    if (along < 0.0) { along += e.length_mm; }
    double z = e.z0 + e.dir_z * along - e.dir_x * f.offset;
    double x = e.x0 + e.dir_x * along + e.dir_z * f.offset;
    if (eps != 0.0) { displace(z, x); }
    p.flow_z[i] = z;
    p.flow_x[i] = x;
  }
  return p;
}

namespace detail {

// Adds amp * exp(i 4 pi f0 z / c) * PSF(. - (z, x)) into one Casorati column.
class Splatter {
public:
  Splatter(ImageGrid const &g, ImagingConfig const &im)
    : g_{g}
    , k_{4.0 * std::numbers::pi * im.center_frequency / im.sound_speed * 1e-3}
    , inv2sz_{1.0 / (2.0 * im.sigma_z_mm() * im.sigma_z_mm())}
    , inv2sx_{1.0 / (2.0 * im.sigma_x_mm() * im.sigma_x_mm())}
    , reach_z_{im.psf_cutoff_sigmas * im.sigma_z_mm()}
    , reach_x_{im.psf_cutoff_sigmas * im.sigma_x_mm()}
  {
  }

  void operator()(double z, double x, double amp, Complex *col)
  {
    Index const i0 = std::max<Index>(0, static_cast<Index>(std::ceil((z - reach_z_ - g_.z0) / g_.dz)));
    Index const i1 = std::min<Index>(g_.nz - 1, static_cast<Index>(std::floor((z + reach_z_ - g_.z0) / g_.dz)));
    Index const j0 = std::max<Index>(0, static_cast<Index>(std::ceil((x - reach_x_ - g_.x0) / g_.dx)));
    Index const j1 = std::min<Index>(g_.nx - 1, static_cast<Index>(std::floor((x + reach_x_ - g_.x0) / g_.dx)));
    if (i0 > i1 || j0 > j1) { return; }
    Complex const a = std::polar(amp, k_ * z);
    wz_.resize(static_cast<std::size_t>(i1 - i0 + 1));
    for (Index i = i0; i <= i1; ++i) {
      double const d = g_.z(i) - z;
      wz_[static_cast<std::size_t>(i - i0)] = a * std::exp(-d * d * inv2sz_);
    }
    for (Index j = j0; j <= j1; ++j) {
      double const d = g_.x(j) - x;
      double const wx = std::exp(-d * d * inv2sx_);
      Complex *dst = col + j * g_.nz + i0;
      for (std::size_t k = 0; k < wz_.size(); ++k) { dst[k] += wx * wz_[k]; }
    }
  }

private:
  ImageGrid g_;
  double k_;
  double inv2sz_;
  double inv2sx_;
  double reach_z_;
  double reach_x_;
  std::vector<Complex> wz_;
};

inline void render_frame(PhantomScene const &s, double t, Complex *tissue_col, Complex *blood_col)
{
  ScenePositions const p = advance_scene(s, t);
  Splatter splat(s.grid, s.imaging);
  for (std::size_t i = 0; i < p.tissue_z.size(); ++i) {
    splat(p.tissue_z[i], p.tissue_x[i], s.tissue.amplitude[i], tissue_col);
  }
  for (std::size_t i = 0; i < p.flow_z.size(); ++i) { splat(p.flow_z[i], p.flow_x[i], s.flow[i].amplitude, blood_col); }
}

} // namespace detail

/// Builds the scene: units, hydraulics, tissue geometry, scatterers and image grid.
inline PhantomScene build_phantom(std::uint64_t seed, PhantomConfig const &cfg = {}, ImagingConfig const &imaging = {})
{
  require(cfg.n_units >= 1 && cfg.n_units <= cfg.slots, ErrorCode::config, "n_units must lie in [1, slots]");
  require(cfg.density_per_mm3 > 0.0 && cfg.amplitude_ratio > 0.0, ErrorCode::config,
          "scatterer density and amplitude ratio must be positive");
  require(cfg.dz_mm > 0.0 && cfg.dx_mm > 0.0, ErrorCode::config, "pixel size must be positive");
  require(cfg.v_target_min > 0.0 && cfg.v_target_max >= cfg.v_target_min, ErrorCode::config,
          "target velocity range must be positive and ordered");

  PhantomScene s;
  s.config = cfg;
  s.imaging = imaging;
  s.seed = seed;
  s.centre_z = cfg.centre_depth_mm;
  s.centre_x = 0.0;

  auto geo = detail::stream_rng(seed, detail::Stream::geometry);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  s.rotation_deg = cfg.max_rotation_deg * (2.0 * uni(geo) - 1.0);

  double max_root_radius = 0.0;
  for (Index u = 0; u < cfg.n_units; ++u) {
    int const variant = 1 + static_cast<int>(uni(geo) * 8.0) % 8;
    std::uint64_t const unit_seed = geo();
    FlowUnit unit = sample_flow_unit(unit_seed, variant, cfg.ranges);
    double const v_target = cfg.v_target_min + (cfg.v_target_max - cfg.v_target_min) * uni(geo);
    FlowNetwork net = scale_to_target(solve_network(unit, 1.0, cfg.mu), v_target);

    double const axis = detail::deg2rad(s.rotation_deg + 360.0 * static_cast<double>(u) / cfg.slots);
    std::vector<double> node_z(static_cast<std::size_t>(unit.node_count));
    std::vector<double> node_x(static_cast<std::size_t>(unit.node_count));
    node_z[0] = s.centre_z + cfg.unit_offset_mm * std::cos(axis);
    node_x[0] = s.centre_x + cfg.unit_offset_mm * std::sin(axis);
    for (std::size_t e = 0; e < unit.edges.size(); ++e) {
      FlowEdge const &fe = unit.edges[e];
      double const a = axis + detail::deg2rad(fe.steer_deg);
      PlacedEdge pe;
      pe.z0 = node_z[static_cast<std::size_t>(fe.from)];
      pe.x0 = node_x[static_cast<std::size_t>(fe.from)];
      pe.dir_z = std::cos(a);
      pe.dir_x = std::sin(a);
      pe.length_mm = fe.length_mm;
      pe.radius_mm = fe.radius_mm;
      pe.v_max = net.v_max(static_cast<Index>(e));
      node_z[static_cast<std::size_t>(fe.to)] = pe.z0 + pe.dir_z * pe.length_mm;
      node_x[static_cast<std::size_t>(fe.to)] = pe.x0 + pe.dir_x * pe.length_mm;
      s.edges.push_back(pe);
    }
    max_root_radius = std::max(max_root_radius, unit.edges.front().radius_mm);
    s.units.push_back(std::move(unit));
    s.networks.push_back(std::move(net));
  }
  s.elevation_mm = cfg.elevation_mm > 0.0 ? cfg.elevation_mm : 2.0 * max_root_radius;

  // Image grid.
  double zmin, zmax, xmin, xmax;
  if (cfg.crop_to_units) {
    zmin = xmin = std::numeric_limits<double>::infinity();
    zmax = xmax = -std::numeric_limits<double>::infinity();
    for (auto const &e : s.edges) {
      for (double f : {0.0, e.length_mm}) {
        double const z = e.z0 + e.dir_z * f;
        double const x = e.x0 + e.dir_x * f;
        zmin = std::min(zmin, z - e.radius_mm);
        zmax = std::max(zmax, z + e.radius_mm);
        xmin = std::min(xmin, x - e.radius_mm);
        xmax = std::max(xmax, x + e.radius_mm);
      }
    }
    zmin -= cfg.margin_mm;
    zmax += cfg.margin_mm;
    xmin -= cfg.margin_mm;
    xmax += cfg.margin_mm;
  } else {
    zmin = s.centre_z - cfg.tissue_radius_mm;
    zmax = s.centre_z + cfg.tissue_radius_mm;
    xmin = s.centre_x - cfg.tissue_radius_mm;
    xmax = s.centre_x + cfg.tissue_radius_mm;
  }
  s.grid.dz = cfg.dz_mm;
  s.grid.dx = cfg.dx_mm;
  s.grid.z0 = zmin;
  s.grid.x0 = xmin;
  s.grid.nz = static_cast<Index>(std::floor((zmax - zmin) / cfg.dz_mm)) + 1;
  s.grid.nx = static_cast<Index>(std::floor((xmax - xmin) / cfg.dx_mm)) + 1;

  // Tissue scatterers are seeded in the image box widened by the PSF reach and the
  // largest strain displacement, so every visible scatterer exists.
  double const reach_z = imaging.psf_cutoff_sigmas * imaging.sigma_z_mm();
  double const reach_x = imaging.psf_cutoff_sigmas * imaging.sigma_x_mm();
  double const span = cfg.tissue_radius_mm * (cfg.tissue_motion ? cfg.max_strain : 0.0);
  s.box[0] = zmin - reach_z - span;
  s.box[1] = zmin + static_cast<double>(s.grid.nz - 1) * cfg.dz_mm + reach_z + span;
  s.box[2] = xmin - reach_x - span;
  s.box[3] = xmin + static_cast<double>(s.grid.nx - 1) * cfg.dx_mm + reach_x + span;

  auto sc = detail::stream_rng(seed, detail::Stream::scatterers);
  std::normal_distribution<double> gauss(0.0, 1.0);
  double const box_volume = (s.box[1] - s.box[0]) * (s.box[3] - s.box[2]) * s.elevation_mm;
  auto const n_box = static_cast<std::size_t>(std::llround(cfg.density_per_mm3 * box_volume));
  for (std::size_t i = 0; i < n_box; ++i) {
    double const z = s.box[0] + (s.box[1] - s.box[0]) * uni(sc);
    double const x = s.box[2] + (s.box[3] - s.box[2]) * uni(sc);
    double const y = s.elevation_mm * (uni(sc) - 0.5);
    double const amp = cfg.amplitude_ratio * std::abs(gauss(sc));
    if (!inside_tissue(s, z, x) || inside_vessel(s, z, x, y)) { continue; }
    s.tissue.z.push_back(z);
    s.tissue.x.push_back(x);
    s.tissue.y.push_back(y);
    s.tissue.amplitude.push_back(amp);
  }

  for (std::size_t e = 0; e < s.edges.size(); ++e) {
    PlacedEdge const &pe = s.edges[e];
    // Uniform over the cross-section of the vessel inside the slab: draw in the
    // bounding rectangle at the target density and keep points inside the disc.
    double const half_y = std::min(pe.radius_mm, s.elevation_mm / 2.0);
    double const rect = 2.0 * pe.radius_mm * 2.0 * half_y * pe.length_mm;
    auto const n = static_cast<std::size_t>(std::llround(cfg.density_per_mm3 * rect));
    for (std::size_t i = 0; i < n; ++i) {
      FlowScatterer f;
      f.edge = static_cast<std::int32_t>(e);
      f.s0 = pe.length_mm * uni(sc);
      f.offset = pe.radius_mm * (2.0 * uni(sc) - 1.0);
      f.y = half_y * (2.0 * uni(sc) - 1.0);
      double const amp = std::abs(gauss(sc));
      double const r2 = f.offset * f.offset + f.y * f.y;
      if (r2 > pe.radius_mm * pe.radius_mm) { continue; }
      f.amplitude = amp;
      f.speed = pe.v_max * (1.0 - r2 / (pe.radius_mm * pe.radius_mm));
      s.flow.push_back(f);
    }
  }

  ComplexVector t0 = ComplexVector::Zero(s.grid.pixels());
  ComplexVector b0 = ComplexVector::Zero(s.grid.pixels());
  detail::render_frame(s, 0.0, t0.data(), b0.data());
  s.noise_reference_power = (t0 + b0).squaredNorm() / static_cast<double>(s.grid.pixels());
  return s;
}

/// Per-pixel truth in the image plane (y = 0) at rest geometry.
struct GroundTruth {
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> flow_mask;   // nz x nx
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> tissue_mask; // tissue pixels clear of every vessel
  RealMatrix axial_velocity;                                      // mm/s, positive = increasing depth
};

/// guard_mm: minimum in-plane clearance from any vessel wall for tissue_mask.
inline GroundTruth ground_truth(PhantomScene const &s, double guard_mm)
{
  GroundTruth gt;
  Index const nz = s.grid.nz;
  Index const nx = s.grid.nx;
  gt.flow_mask.setConstant(nz, nx, false);
  gt.tissue_mask.setConstant(nz, nx, false);
  gt.axial_velocity.setZero(nz, nx);
  for (Index j = 0; j < nx; ++j) {
    for (Index i = 0; i < nz; ++i) {
      double const z = s.grid.z(i);
      double const x = s.grid.x(j);
      double best = std::numeric_limits<double>::infinity();
      bool clear = true;
      for (auto const &e : s.edges) {
        double const r2 = axis_distance_sq(e, z, x, 0.0);
        double const rel = r2 / (e.radius_mm * e.radius_mm);
        if (rel <= 1.0 && rel < best) {
          best = rel;
          gt.axial_velocity(i, j) = e.v_max * (1.0 - rel) * e.dir_z;
        }
        // Clearance also counts the end caps of each segment.
        double const rz = z - e.z0;
        double const rx = x - e.x0;
        double const along = std::clamp(rz * e.dir_z + rx * e.dir_x, 0.0, e.length_mm);
        double const cz = e.z0 + along * e.dir_z - z;
        double const cx = e.x0 + along * e.dir_x - x;
        if (std::sqrt(cz * cz + cx * cx) <= e.radius_mm + guard_mm) { clear = false; }
      }
      gt.flow_mask(i, j) = best <= 1.0;
      gt.tissue_mask(i, j) = clear && inside_tissue(s, z, x);
    }
  }
  return gt;
}

struct SynthesisResult {
  FrameSequence data;
  // Casorati components, filled only when requested: data == (tissue + blood) + noise.
  ComplexMatrix tissue;
  ComplexMatrix blood;
  ComplexMatrix noise;
};

/// Renders frames [first_frame, first_frame + frames). noise_snr_db = +inf disables noise.
/// The noise variance is fixed per scene (reference power at t = 0), so chunked and
/// one-shot synthesis produce identical samples.
inline SynthesisResult synthesize_iq(PhantomScene const &s, Index first_frame, Index frames, double noise_snr_db,
                                     bool keep_components = false)
{
  require(first_frame >= 0 && frames >= 1, ErrorCode::domain, "synthesize_iq: frame range must be non-empty");
  Index const ns = s.grid.pixels();
  bool const noisy = std::isfinite(noise_snr_db);
  double const sigma = noisy ? std::sqrt(s.noise_reference_power / std::pow(10.0, noise_snr_db / 10.0) / 2.0) : 0.0;

  SynthesisResult out;
  ComplexMatrix d(ns, frames);
  if (keep_components) {
    out.tissue.resize(ns, frames);
    out.blood.resize(ns, frames);
    out.noise.resize(ns, frames);
  }
  ComplexVector t_col(ns), b_col(ns), n_col(ns);
  for (Index f = 0; f < frames; ++f) {
    Index const frame = first_frame + f;
    t_col.setZero();
    b_col.setZero();
    detail::render_frame(s, static_cast<double>(frame) / s.imaging.frame_rate, t_col.data(), b_col.data());
    if (noisy) {
      auto rng = detail::stream_rng(s.seed, detail::Stream::noise, static_cast<std::uint64_t>(frame));
      std::normal_distribution<double> gauss(0.0, sigma);
      for (Index i = 0; i < ns; ++i) {
        double const re = gauss(rng);
        double const im = gauss(rng);
        n_col(i) = Complex(re, im);
      }
    } else {
      n_col.setZero();
    }
    d.col(f) = (t_col + b_col) + n_col;
    if (keep_components) {
      out.tissue.col(f) = t_col;
      out.blood.col(f) = b_col;
      out.noise.col(f) = n_col;
    }
  }
  out.data = from_casorati(d, s.grid.nz, s.grid.nx);
  return out;
}

} // namespace umi
