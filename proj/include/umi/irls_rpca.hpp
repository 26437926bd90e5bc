#pragma once

// IRLS robust PCA clutter filter: D = U V^H + B + N with reweighted
// Frobenius surrogates for the nuclear norm of U V^H and the l1 norm of B.

#include "tensor_core.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace umi {

struct IrlsConfig {
  Index d = 10;
  double lambda_c = 0.01;
  double lambda_b = 0.0004;
  double epsilon = 1e-8;
  double rho = 1.0;
  int max_iter = 100;
  double tol = 1e-6;
  // Scale D by 1/max|D| before solving; outputs are mapped back to input units.
  bool normalize = true;

  void validate(Index ns, Index nt) const
  {
    require(rho > 0.0 && rho <= 1.0, ErrorCode::config, "rho must lie in (0, 1]");
    require(epsilon > 0.0, ErrorCode::config, "epsilon must be positive");
    require(tol > 0.0, ErrorCode::config, "tol must be positive");
    require(lambda_c >= 0.0 && lambda_b >= 0.0, ErrorCode::config, "penalties must be non-negative");
    require(max_iter >= 1, ErrorCode::config, "max_iter must be at least 1");
    require(d >= 1 && d <= std::min(ns, nt), ErrorCode::config,
            "inner dimension d=" + std::to_string(d) + " outside [1, min(Ns, Nt)]");
  }
};

struct Decomposition {
  ComplexMatrix basis_u;  // Ns x d
  ComplexMatrix coeffs_v; // Nt x d
  ComplexMatrix blood_b;  // Ns x Nt

  ComplexMatrix tissue() const { return basis_u * coeffs_v.adjoint(); }
};

struct IrlsTrace {
  int iterations = 0;
  std::vector<double> convergence;
  // Objective after iteration k, and before it, both with the weights used in iteration k.
  std::vector<double> objective;
  std::vector<double> objective_before;
  // Low-rank weight diagonal consumed by the V/U updates of iteration k.
  std::vector<RealVector> lowrank_weights_used;
  bool converged = false;
};

/// W_b(i,j) = (|B(i,j)|^2 + eps)^(-1/2).
inline RealMatrix sparse_weights(ComplexMatrix const &b, double epsilon)
{
  require(epsilon > 0.0, ErrorCode::domain, "sparse_weights: epsilon must be positive");
  return (b.cwiseAbs2().array() + epsilon).rsqrt().matrix();
}

/// Diagonal of W_c: (|U(:,j)|^2 + |V(:,j)|^2 + eps)^(rho/2 - 1).
inline RealVector lowrank_weights(ComplexMatrix const &u, ComplexMatrix const &v, double epsilon, double rho = 1.0)
{
  require(epsilon > 0.0, ErrorCode::domain, "lowrank_weights: epsilon must be positive");
  require(u.cols() == v.cols(), ErrorCode::dimension, "lowrank_weights: U and V column counts differ");
  RealVector const energy = u.colwise().squaredNorm().transpose() + v.colwise().squaredNorm().transpose();
  return (energy.array() + epsilon).pow(rho / 2.0 - 1.0).matrix();
}

/// B = (D - U V^H) ./ (1 + 2 lambda_b W_b).
inline ComplexMatrix update_blood(ComplexMatrix const &d_mat, ComplexMatrix const &u, ComplexMatrix const &v,
                                  RealMatrix const &w_b, double lambda_b)
{
  require(u.rows() == d_mat.rows() && v.rows() == d_mat.cols() && u.cols() == v.cols(), ErrorCode::dimension,
          "update_blood: factor shapes do not conform to D");
  require(w_b.rows() == d_mat.rows() && w_b.cols() == d_mat.cols(), ErrorCode::dimension,
          "update_blood: weight shape does not match D");
  ComplexMatrix r = d_mat;
  r.noalias() -= u * v.adjoint();
  for (Index i = 0; i < r.size(); ++i) { r(i) /= 1.0 + 2.0 * lambda_b * w_b(i); }
  return r;
}

namespace detail {

inline ComplexMatrix gram_plus(ComplexMatrix const &f, RealVector const &ridge)
{
  ComplexMatrix g = f.adjoint() * f;
  g.diagonal() += ridge.cast<Complex>();
  return g;
}

} // namespace detail

/// V = X^H U (U^H U + diag(ridge))^-1 with X = D - B already formed.
inline ComplexMatrix solve_coeffs(ComplexMatrix const &x, ComplexMatrix const &u, RealVector const &ridge)
{
  require(u.rows() == x.rows() && ridge.size() == u.cols(), ErrorCode::dimension, "solve_coeffs: shape mismatch");
  ComplexMatrix const rhs = u.adjoint() * x; // d x Nt, equals (X^H U)^H
  return hermitian_solve(detail::gram_plus(u, ridge), rhs).adjoint();
}

/// U = X V (V^H V + diag(ridge))^-1.
inline ComplexMatrix solve_basis(ComplexMatrix const &x, ComplexMatrix const &v, RealVector const &ridge)
{
  require(v.rows() == x.cols() && ridge.size() == v.cols(), ErrorCode::dimension, "solve_basis: shape mismatch");
  ComplexMatrix const rhs = (x * v).adjoint(); // d x Ns
  return hermitian_solve(detail::gram_plus(v, ridge), rhs).adjoint();
}

inline ComplexMatrix update_coeffs(ComplexMatrix const &d_mat, ComplexMatrix const &b, ComplexMatrix const &u,
                                   RealVector const &w_c, double lambda_c)
{
  return solve_coeffs(d_mat - b, u, 2.0 * lambda_c * w_c);
}

// Printed as (D - B)^* V (...)^-1; the conjugate transpose would give an Nt x d
// result, so the Ns x d form (D - B) V (...)^-1 is used.
inline ComplexMatrix update_basis(ComplexMatrix const &d_mat, ComplexMatrix const &b, ComplexMatrix const &v,
                                  RealVector const &w_c, double lambda_c)
{
  return solve_basis(d_mat - b, v, 2.0 * lambda_c * w_c);
}

/// |B + T - B_prev - T_prev|_F^2 / |B_prev + T_prev|_F^2
inline double convergence_metric(ComplexMatrix const &t_now, ComplexMatrix const &b_now, ComplexMatrix const &t_prev,
                                 ComplexMatrix const &b_prev)
{
  double const den = (b_prev + t_prev).squaredNorm();
  double const num = ((b_now - b_prev) + (t_now - t_prev)).squaredNorm();
  if (den == 0.0) {
    if (num == 0.0) { return 0.0; }
    throw Error(ErrorCode::domain, "convergence_metric: previous iterate is zero but the new one is not");
  }
  return num / den;
}

/// 1/2 |D - U V^H - B|^2 + lambda_c (|U W_c^1/2|^2 + |V W_c^1/2|^2) + lambda_b |B .* W_b^1/2|^2
inline double irls_objective(ComplexMatrix const &d_mat, ComplexMatrix const &u, ComplexMatrix const &v,
                             ComplexMatrix const &b, RealMatrix const &w_b, RealVector const &w_c, double lambda_b,
                             double lambda_c)
{
  ComplexMatrix r = d_mat - b;
  r.noalias() -= u * v.adjoint();
  RealVector const col_energy = u.colwise().squaredNorm().transpose() + v.colwise().squaredNorm().transpose();
  double const lowrank = col_energy.dot(w_c);
  double const sparse = (b.cwiseAbs2().array() * w_b.array()).sum();
  return 0.5 * r.squaredNorm() + lambda_c * lowrank + lambda_b * sparse;
}

/// Algorithm initialization: U0 = orth(D(:, 1:d)), V0 = D^H U0, B0 = 0.
inline Decomposition initial_state(ComplexMatrix const &d_mat, Index d)
{
  Decomposition s;
  s.basis_u = orthonormal_columns(d_mat, d);
  s.coeffs_v = d_mat.adjoint() * s.basis_u;
  s.blood_b = ComplexMatrix::Zero(d_mat.rows(), d_mat.cols());
  return s;
}

namespace detail {

inline void check_finite(Decomposition const &s, int iteration)
{
  if (!all_finite(s.basis_u) || !all_finite(s.coeffs_v) || !all_finite(s.blood_b)) {
    throw Error(ErrorCode::non_finite, "IRLS iterate became non-finite at iteration " + std::to_string(iteration));
  }
}

inline void scale_decomposition(Decomposition &s, double scale)
{
  s.basis_u *= scale;
  s.blood_b *= scale;
}

} // namespace detail

/// Alternating IRLS loop. Per iteration: W_b, B, V, U, then W_c.
inline std::pair<Decomposition, IrlsTrace> run_irls(ComplexMatrix const &d_in, IrlsConfig const &cfg)
{
  cfg.validate(d_in.rows(), d_in.cols());
  require(all_finite(d_in), ErrorCode::non_finite, "run_irls: input contains non-finite samples");

  double scale = 1.0;
  if (cfg.normalize) {
    double const peak = d_in.cwiseAbs().maxCoeff();
    if (peak > 0.0) { scale = peak; }
  }
  ComplexMatrix const d_mat = d_in / scale;

  IrlsTrace trace;
  Decomposition s = initial_state(d_mat, cfg.d);
  RealVector w_c = lowrank_weights(s.basis_u, s.coeffs_v, cfg.epsilon, cfg.rho);
  ComplexMatrix t_prev = s.tissue();

  for (int k = 1; k <= cfg.max_iter; ++k) {
    RealMatrix const w_b = sparse_weights(s.blood_b, cfg.epsilon);
    double const before = irls_objective(d_mat, s.basis_u, s.coeffs_v, s.blood_b, w_b, w_c, cfg.lambda_b, cfg.lambda_c);

    ComplexMatrix const b_prev = s.blood_b;
    s.blood_b = update_blood(d_mat, s.basis_u, s.coeffs_v, w_b, cfg.lambda_b);
    ComplexMatrix const x = d_mat - s.blood_b;
    RealVector const ridge = 2.0 * cfg.lambda_c * w_c;
    s.coeffs_v = solve_coeffs(x, s.basis_u, ridge);
    s.basis_u = solve_basis(x, s.coeffs_v, ridge);
    detail::check_finite(s, k);

    trace.lowrank_weights_used.push_back(w_c);
    trace.objective_before.push_back(before);
    trace.objective.push_back(
      irls_objective(d_mat, s.basis_u, s.coeffs_v, s.blood_b, w_b, w_c, cfg.lambda_b, cfg.lambda_c));
    w_c = lowrank_weights(s.basis_u, s.coeffs_v, cfg.epsilon, cfg.rho);

    ComplexMatrix t_now = s.tissue();
    double const metric = convergence_metric(t_now, s.blood_b, t_prev, b_prev);
    trace.convergence.push_back(metric);
    trace.iterations = k;
    t_prev = std::move(t_now);
    if (metric < cfg.tol) {
      trace.converged = true;
      break;
    }
  }

  detail::scale_decomposition(s, scale);
  return {std::move(s), std::move(trace)};
}

} // namespace umi
