#pragma once

// Poiseuille flow in branching vessel units. Geometry in mm, hydraulics in SI,
// velocities reported in mm/s.

#include "tensor_core.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace umi {

struct FlowEdge {
  int from = 0;
  int to = 0;
  int hierarchy = 1;
  int parent = -1; // index of the upstream edge, -1 for the root edge
  double length_mm = 0.0;
  double radius_mm = 0.0;
  double steer_deg = 0.0; // relative to the unit axis
};

struct FlowUnit {
  int variant = 0; // 1..8, 0 for hand-built units
  int node_count = 0;
  std::vector<FlowEdge> edges;

  void validate() const
  {
    require(!edges.empty() && node_count >= 2, ErrorCode::domain, "flow unit needs at least one edge");
    std::vector<int> indegree(static_cast<std::size_t>(node_count), 0);
    for (auto const &e : edges) {
      require(e.from >= 0 && e.from < node_count && e.to >= 0 && e.to < node_count && e.from != e.to,
              ErrorCode::domain, "flow edge references an invalid node");
      require(e.length_mm > 0.0 && e.radius_mm > 0.0, ErrorCode::domain, "flow edge geometry must be positive");
      ++indegree[static_cast<std::size_t>(e.to)];
    }
    require(static_cast<int>(edges.size()) == node_count - 1, ErrorCode::domain, "flow unit is not a tree");
    for (int n = 0; n < node_count; ++n) {
      require(indegree[static_cast<std::size_t>(n)] <= 1, ErrorCode::domain, "flow node has two inflowing edges");
    }
  }
};

struct FlowUnitRanges {
  double length_mm = 3.5;
  double length_jitter_mm = 0.35;
  double root_steer_deg = 10.0;
  double branch_steer_deg = 30.0;
  double branch_steer_jitter_deg = 2.0;
  double leaf_steer_deg = 60.0;
  double leaf_steer_jitter_deg = 3.0;
  double root_radius_mm = 1.25;
  double root_radius_jitter_mm = 0.125;
  double radius_ratio = 1.0 / std::numbers::sqrt2;
};

// Leaves kept by each variant, in order a..d = edges n3->n5, n3->n6, n4->n7, n4->n8.
inline constexpr std::array<std::array<bool, 4>, 8> flow_unit_variants{{
  {true, true, true, true},
  {true, true, true, false},
  {true, true, false, true},
  {true, false, true, true},
  {false, true, true, true},
  {true, false, true, false},
  {false, true, false, true},
  {true, true, false, false},
}};

/// Random unit of the given variant. Nodes are numbered in order of appearance,
/// so the complete unit uses n1..n8 with edges e1..e7 as n1->n2, n2->n3, n2->n4,
/// n3->n5, n3->n6, n4->n7, n4->n8.
inline FlowUnit sample_flow_unit(std::uint64_t seed, int variant, FlowUnitRanges const &r = {})
{
  require(variant >= 1 && variant <= 8, ErrorCode::domain, "flow unit variant must lie in 1..8");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto jitter = [&](double centre, double half) { return centre + half * unit(rng); };

  FlowUnit u;
  u.variant = variant;
  double const r1 = jitter(r.root_radius_mm, r.root_radius_jitter_mm);
  double const r2 = r1 * r.radius_ratio;
  double const r3 = r2 * r.radius_ratio;

  u.edges.push_back({0, 1, 1, -1, jitter(r.length_mm, r.length_jitter_mm), r1, jitter(0.0, r.root_steer_deg)});
  int next = 2;
  std::array<int, 2> mid{};
  for (int side = 0; side < 2; ++side) {
    double const sign = side == 0 ? 1.0 : -1.0;
    mid[static_cast<std::size_t>(side)] = next;
    u.edges.push_back({1, next++, 2, 0, jitter(r.length_mm, r.length_jitter_mm), r2,
                       sign * jitter(r.branch_steer_deg, r.branch_steer_jitter_deg)});
  }
  auto const &keep = flow_unit_variants[static_cast<std::size_t>(variant - 1)];
  for (int side = 0; side < 2; ++side) {
    double const sign = side == 0 ? 1.0 : -1.0;
    double const steer[2] = {sign * jitter(r.leaf_steer_deg, r.leaf_steer_jitter_deg),
                             jitter(0.0, r.leaf_steer_jitter_deg)};
    for (int leaf = 0; leaf < 2; ++leaf) {
      double const len = jitter(r.length_mm, r.length_jitter_mm);
      if (!keep[static_cast<std::size_t>(2 * side + leaf)]) { continue; }
      u.edges.push_back({mid[static_cast<std::size_t>(side)], next++, 3, 1 + side, len, r3, steer[leaf]});
    }
  }
  u.node_count = next;
  return u;
}

/// Incidence matrix: row e has -1 at the upstream node and +1 at the downstream node.
inline RealMatrix incidence_matrix(FlowUnit const &unit)
{
  unit.validate();
  RealMatrix a = RealMatrix::Zero(static_cast<Index>(unit.edges.size()), unit.node_count);
  for (std::size_t e = 0; e < unit.edges.size(); ++e) {
    a(static_cast<Index>(e), unit.edges[e].from) = -1.0;
    a(static_cast<Index>(e), unit.edges[e].to) = 1.0;
  }
  return a;
}

struct Incidence {
  RealMatrix a;
  RealMatrix a_h;
  RealMatrix a_nh;
  std::vector<int> hanging;     // boundary nodes (degree 1)
  std::vector<int> non_hanging; // interior nodes
};

inline Incidence assemble_incidence(FlowUnit const &unit)
{
  Incidence inc;
  inc.a = incidence_matrix(unit);
  for (int n = 0; n < unit.node_count; ++n) {
    double const degree = inc.a.col(n).cwiseAbs().sum();
    (degree == 1.0 ? inc.hanging : inc.non_hanging).push_back(n);
  }
  auto gather = [&](std::vector<int> const &cols) {
    RealMatrix out(inc.a.rows(), static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) { out.col(static_cast<Index>(j)) = inc.a.col(cols[j]); }
    return out;
  };
  inc.a_h = gather(inc.hanging);
  inc.a_nh = gather(inc.non_hanging);
  return inc;
}

/// xi = 8 mu L / (pi R^4) in Pa s / m^3.
inline double flow_resistance(double length_mm, double radius_mm, double mu)
{
  require(length_mm > 0.0 && radius_mm > 0.0, ErrorCode::domain, "edge length and radius must be positive");
  require(mu > 0.0, ErrorCode::domain, "viscosity must be positive");
  double const l = length_mm * 1e-3;
  double const r = radius_mm * 1e-3;
  return 8.0 * mu * l / (std::numbers::pi * r * r * r * r);
}

/// Diagonal of C, 1/xi per edge.
inline RealVector edge_conductance(FlowUnit const &unit, double mu = 0.004)
{
  RealVector c(static_cast<Index>(unit.edges.size()));
  for (std::size_t e = 0; e < unit.edges.size(); ++e) {
    c(static_cast<Index>(e)) = 1.0 / flow_resistance(unit.edges[e].length_mm, unit.edges[e].radius_mm, mu);
  }
  return c;
}

/// P_nh = -(A_nh^T C A_nh)^-1 A_nh^T C A_h P_h
inline RealVector solve_pressures(RealMatrix const &a_h, RealMatrix const &a_nh, RealVector const &c,
                                  RealVector const &p_h)
{
  require(a_h.rows() == a_nh.rows() && c.size() == a_h.rows() && p_h.size() == a_h.cols(), ErrorCode::dimension,
          "solve_pressures: shape mismatch");
  if (a_nh.cols() == 0) { return RealVector(0); }
  RealMatrix const lap = a_nh.transpose() * c.asDiagonal() * a_nh;
  Eigen::LDLT<RealMatrix> ldlt(lap);
  require(ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.vectorD().minCoeff() > 0.0, ErrorCode::domain,
          "flow network is disconnected: interior pressure system is singular");
  return -ldlt.solve(a_nh.transpose() * (c.asDiagonal() * (a_h * p_h)));
}

/// v_max = R^2 dP / (4 mu L) per edge in mm/s. Written through C so that
/// Q = (pi R^2 / 2) v_max holds by construction: v_max = 2 C dP / (pi R^2).
inline RealVector edge_velocities(RealVector const &c, RealVector const &dp, RealVector const &radii_mm)
{
  require(c.size() == dp.size() && c.size() == radii_mm.size(), ErrorCode::dimension, "edge_velocities: size mismatch");
  RealVector v(c.size());
  for (Index e = 0; e < c.size(); ++e) {
    double const r = radii_mm(e) * 1e-3;
    v(e) = 2.0 * c(e) * dp(e) / (std::numbers::pi * r * r) * 1e3;
  }
  return v;
}

struct FlowNetwork {
  Incidence incidence;
  RealVector conductance;
  RealVector radii_mm;
  RealVector p_h;
  RealVector p_nh;
  RealVector dp;     // pressure drop along each edge (upstream minus downstream), Pa
  RealVector flow;   // m^3/s, positive downstream
  RealVector v_max;  // mm/s, centreline speed

  /// |A_nh^T Q| / |Q|
  double conservation_residual() const
  {
    double const scale = flow.norm();
    double const r = (incidence.a_nh.transpose() * flow).norm();
    return scale > 0.0 ? r / scale : r;
  }
};

/// Solves the unit with the given boundary pressures (ordered as incidence.hanging).
inline FlowNetwork solve_network(FlowUnit const &unit, RealVector const &p_h, double mu = 0.004)
{
  FlowNetwork net;
  net.incidence = assemble_incidence(unit);
  net.conductance = edge_conductance(unit, mu);
  net.radii_mm.resize(static_cast<Index>(unit.edges.size()));
  for (std::size_t e = 0; e < unit.edges.size(); ++e) { net.radii_mm(static_cast<Index>(e)) = unit.edges[e].radius_mm; }
  net.p_h = p_h;
  net.p_nh = solve_pressures(net.incidence.a_h, net.incidence.a_nh, net.conductance, p_h);
  // A P is the rise along each edge; the drop is its negative.
  net.dp = -(net.incidence.a_h * net.p_h + net.incidence.a_nh * net.p_nh);
  net.flow = net.conductance.cwiseProduct(net.dp);
  net.v_max = edge_velocities(net.conductance, net.dp, net.radii_mm);
  return net;
}

/// Root node at inlet_pa, all other hanging nodes at 0.
inline FlowNetwork solve_network(FlowUnit const &unit, double inlet_pa = 1.0, double mu = 0.004)
{
  Incidence const inc = assemble_incidence(unit);
  RealVector p_h = RealVector::Zero(static_cast<Index>(inc.hanging.size()));
  for (std::size_t i = 0; i < inc.hanging.size(); ++i) {
    if (inc.hanging[i] == unit.edges.front().from) { p_h(static_cast<Index>(i)) = inlet_pa; }
  }
  return solve_network(unit, p_h, mu);
}

/// Rescales P_h (and everything linear in it) so the root edge peaks at v_target mm/s.
inline FlowNetwork scale_to_target(FlowNetwork net, double v_target)
{
  require(net.v_max.size() >= 1, ErrorCode::domain, "scale_to_target: empty network");
  double const base = net.v_max(0);
  require(base != 0.0, ErrorCode::domain, "scale_to_target: root edge has zero velocity");
  double const s = v_target / base;
  net.p_h *= s;
  net.p_nh *= s;
  net.dp *= s;
  net.flow *= s;
  net.v_max *= s;
  return net;
}

} // namespace umi
