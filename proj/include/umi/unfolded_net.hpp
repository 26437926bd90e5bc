#pragma once

// Unfolded IRLS-rPCA network. Each layer repeats one IRLS iteration with a
// learnable blood penalty lambda_{b,k} and a learnable diagonal W_{c,k} that
// absorbs 2*lambda_c. W_b stays the deterministic reweighting of the incoming B.

#include "adam.hpp"
#include "irls_rpca.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace umi {

/// Smooth positivity map used for every learnable quantity.
inline double softplus(double x)
{
  if (x > 30.0) { return x + std::log1p(std::exp(-x)); }
  return std::log1p(std::exp(x));
}

inline double softplus_inverse(double y)
{
  require(y >= 0.0, ErrorCode::domain, "softplus_inverse needs a non-negative value");
  if (y == 0.0) { return -std::numeric_limits<double>::infinity(); }
  if (y > 30.0) { return y + std::log(-std::expm1(-y)); }
  return std::log(std::expm1(y));
}

inline double sigmoid(double x)
{
  if (x >= 0.0) { return 1.0 / (1.0 + std::exp(-x)); }
  double const e = std::exp(x);
  return e / (1.0 + e);
}

/// Unconstrained storage; lambda_b() and w_c() are the positive values the layer uses.
struct LayerParams {
  double theta_lambda = 0.0;
  RealVector theta_w;

  double lambda_b() const { return softplus(theta_lambda); }
  RealVector w_c() const { return theta_w.unaryExpr([](double t) { return softplus(t); }); }

  static LayerParams from_values(double lambda_b, RealVector const &w_c)
  {
    require(w_c.size() >= 1 && (w_c.array() > 0.0).all(), ErrorCode::domain, "W_c diagonal must be positive");
    return {softplus_inverse(lambda_b), w_c.unaryExpr([](double v) { return softplus_inverse(v); })};
  }
};

/// Maps B_k to Z_k with the same shape. An empty hook is the identity.
using SeuHook = std::function<ComplexMatrix(ComplexMatrix const &, Index layer)>;

struct UnfoldedNetwork {
  Index d = 0;
  double epsilon = 1e-8;
  std::vector<LayerParams> layers;
  SeuHook seu;
  // infer() and train() scale each batch by 1/max|D| when set.
  bool normalize = true;
  // Pixel count of the training data; 0 when unknown.
  Index trained_pixels = 0;

  Index depth() const { return static_cast<Index>(layers.size()); }
  Index parameter_count() const { return depth() * (d + 1); }

  void validate() const
  {
    require(depth() >= 1, ErrorCode::config, "network needs at least one layer");
    require(d >= 1, ErrorCode::config, "inner dimension must be positive");
    require(epsilon > 0.0, ErrorCode::config, "epsilon must be positive");
    for (auto const &l : layers) {
      require(l.theta_w.size() == d, ErrorCode::dimension, "layer weight size differs from d");
    }
  }

  /// Layer-major flattening: [theta_lambda, theta_w(0..d-1)] per layer.
  RealVector flatten() const
  {
    RealVector out(parameter_count());
    Index i = 0;
    for (auto const &l : layers) {
      out(i++) = l.theta_lambda;
      out.segment(i, d) = l.theta_w;
      i += d;
    }
    return out;
  }

  void unflatten(RealVector const &theta)
  {
    require(theta.size() == parameter_count(), ErrorCode::dimension, "parameter vector length mismatch");
    Index i = 0;
    for (auto &l : layers) {
      l.theta_lambda = theta(i++);
      l.theta_w = theta.segment(i, d);
      i += d;
    }
  }

  bool seu_is_identity() const { return !seu; }
};

struct ForwardTrace {
  Decomposition initial;
  std::vector<Decomposition> layers;
  std::vector<double> residuals; // |D - B_k - U_k V_k^H|_F^2 per layer
};

/// Every layer starts with lambda_b_init and W_{c,k} = 2 lambda_c W_c(U0, V0).
inline UnfoldedNetwork init_network(ComplexMatrix const &d_in, Index k, Index d, double lambda_b_init,
                                    IrlsConfig const &cfg)
{
  require(k >= 1, ErrorCode::config, "network depth K must be at least 1");
  require(lambda_b_init >= 0.0, ErrorCode::config, "lambda_b_init must be non-negative");
  IrlsConfig c = cfg;
  c.d = d;
  c.validate(d_in.rows(), d_in.cols());

  ComplexMatrix d_mat = d_in;
  if (c.normalize) {
    double const peak = d_in.cwiseAbs().maxCoeff();
    if (peak > 0.0) { d_mat /= peak; }
  }
  Decomposition const s0 = initial_state(d_mat, d);
  RealVector const w = 2.0 * c.lambda_c * lowrank_weights(s0.basis_u, s0.coeffs_v, c.epsilon, c.rho);

  UnfoldedNetwork net;
  net.d = d;
  net.epsilon = c.epsilon;
  net.normalize = c.normalize;
  net.trained_pixels = d_in.rows();
  net.layers.assign(static_cast<std::size_t>(k), LayerParams::from_values(lambda_b_init, w));
  return net;
}

/// One unfolded iteration: W_b from the incoming B, then B, Z = SEU(B), V, U.
inline Decomposition layer_forward(Decomposition const &state, LayerParams const &params, ComplexMatrix const &d_mat,
                                   double epsilon, SeuHook const &seu = {}, Index layer = 0)
{
  RealMatrix const w_b = sparse_weights(state.blood_b, epsilon);
  RealVector const w_c = params.w_c();
  Decomposition out;
  out.blood_b = update_blood(d_mat, state.basis_u, state.coeffs_v, w_b, params.lambda_b());
  ComplexMatrix x = d_mat;
  if (seu) {
    ComplexMatrix const z = seu(out.blood_b, layer);
    require(z.rows() == d_mat.rows() && z.cols() == d_mat.cols(), ErrorCode::dimension, "SEU changed the shape of B");
    x -= z;
  } else {
    x -= out.blood_b;
  }
  out.coeffs_v = solve_coeffs(x, state.basis_u, w_c);
  out.basis_u = solve_basis(x, out.coeffs_v, w_c);
  return out;
}

inline double layer_residual(ComplexMatrix const &d_mat, Decomposition const &s)
{
  ComplexMatrix r = d_mat - s.blood_b;
  r.noalias() -= s.basis_u * s.coeffs_v.adjoint();
  return r.squaredNorm();
}

/// Runs all layers from an explicit starting state.
inline ForwardTrace network_forward(UnfoldedNetwork const &net, ComplexMatrix const &d_mat, Decomposition start)
{
  net.validate();
  require(start.basis_u.cols() == net.d && start.coeffs_v.cols() == net.d, ErrorCode::dimension,
          "starting state does not match the network inner dimension");
  ForwardTrace trace;
  trace.initial = std::move(start);
  Decomposition const *prev = &trace.initial;
  trace.layers.reserve(net.layers.size());
  for (std::size_t k = 0; k < net.layers.size(); ++k) {
    trace.layers.push_back(layer_forward(*prev, net.layers[k], d_mat, net.epsilon, net.seu, static_cast<Index>(k)));
    prev = &trace.layers.back();
    trace.residuals.push_back(layer_residual(d_mat, *prev));
  }
  return trace;
}

/// Runs all layers from the IRLS initialization of d_mat (no rescaling here).
inline ForwardTrace network_forward(UnfoldedNetwork const &net, ComplexMatrix const &d_mat)
{
  require(d_mat.rows() >= net.d && d_mat.cols() >= net.d, ErrorCode::dimension,
          "input smaller than the network inner dimension");
  return network_forward(net, d_mat, initial_state(d_mat, net.d));
}

/// (1/K) sum_k |D - B_k - U_k V_k^H|_F^2
inline double loss(ForwardTrace const &trace, ComplexMatrix const &d_mat)
{
  require(!trace.layers.empty(), ErrorCode::dimension, "loss needs at least one layer output");
  double total = 0.0;
  for (auto const &s : trace.layers) { total += layer_residual(d_mat, s); }
  return total / static_cast<double>(trace.layers.size());
}

enum class GradMode { finite_difference, analytic };

struct TrainConfig {
  double learning_rate = 0.01;          // applied to theta_lambda
  double learning_rate_weights = 1e-4;  // applied to theta_w
  Index batch_frames = 200;
  int max_epochs = 50;
  int patience = 5;
  std::uint64_t seed = 0;
  GradMode grad_mode = GradMode::finite_difference;
  AdamParameters adam;
  double validation_fraction = 0.2;

  void validate() const
  {
    require(learning_rate >= 0.0 && learning_rate_weights >= 0.0, ErrorCode::config, "learning rates must be >= 0");
    require(batch_frames >= 2, ErrorCode::config, "batch_frames must be at least 2");
    require(max_epochs >= 0, ErrorCode::config, "max_epochs must be non-negative");
    require(patience >= 1, ErrorCode::config, "patience must be at least 1");
    require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorCode::config,
            "validation_fraction must lie in (0, 1)");
  }
};

struct LossGradient {
  double loss = 0.0;
  RealVector gradient; // d loss / d theta, layout of UnfoldedNetwork::flatten()
};

namespace detail {

inline double loss_at(UnfoldedNetwork &net, RealVector const &theta, ComplexMatrix const &d_mat,
                      Decomposition const &start)
{
  net.unflatten(theta);
  double const value = loss(network_forward(net, d_mat, start), d_mat);
  if (!std::isfinite(value)) { throw Error(ErrorCode::non_finite, "loss became non-finite under perturbation"); }
  return value;
}

} // namespace detail

/// Central differences in theta with step h_scale * (1 + |theta_i|).
inline LossGradient finite_difference_gradient(UnfoldedNetwork const &net, ComplexMatrix const &d_mat,
                                               double h_scale = 1e-5)
{
  Decomposition const start = initial_state(d_mat, net.d);
  UnfoldedNetwork work = net;
  RealVector const theta = net.flatten();
  LossGradient out;
  out.loss = detail::loss_at(work, theta, d_mat, start);
  out.gradient.resize(theta.size());
  RealVector probe = theta;
  for (Index i = 0; i < theta.size(); ++i) {
    double const h = h_scale * (1.0 + std::abs(theta(i)));
    probe(i) = theta(i) + h;
    double const up = detail::loss_at(work, probe, d_mat, start);
    probe(i) = theta(i) - h;
    double const down = detail::loss_at(work, probe, d_mat, start);
    probe(i) = theta(i);
    out.gradient(i) = (up - down) / (2.0 * h);
  }
  return out;
}

/// Reverse-mode pass through the layer equations (identity SEU only).
/// Gradients of real losses w.r.t. complex matrices follow dL = Re tr(G^H dX).
inline LossGradient analytic_gradient(UnfoldedNetwork const &net, ComplexMatrix const &d_mat)
{
  require(net.seu_is_identity(), ErrorCode::config, "analytic gradients require the identity SEU");
  ForwardTrace const trace = network_forward(net, d_mat);
  Index const n_layers = net.depth();
  Index const d = net.d;
  double const c = 1.0 / static_cast<double>(n_layers);

  LossGradient out;
  out.loss = loss(trace, d_mat);
  out.gradient = RealVector::Zero(net.parameter_count());

  ComplexMatrix g_u = ComplexMatrix::Zero(d_mat.rows(), d);
  ComplexMatrix g_v = ComplexMatrix::Zero(d_mat.cols(), d);
  ComplexMatrix g_b = ComplexMatrix::Zero(d_mat.rows(), d_mat.cols());

  for (Index k = n_layers - 1; k >= 0; --k) {
    auto const &layer = net.layers[static_cast<std::size_t>(k)];
    Decomposition const &prev = k == 0 ? trace.initial : trace.layers[static_cast<std::size_t>(k - 1)];
    Decomposition const &cur = trace.layers[static_cast<std::size_t>(k)];
    double const lambda = layer.lambda_b();
    RealVector const w = layer.w_c();

    ComplexMatrix const x = d_mat - cur.blood_b;

    // Loss term of this layer.
    ComplexMatrix e = x;
    e.noalias() -= cur.basis_u * cur.coeffs_v.adjoint();
    e *= 2.0 * c;
    g_b -= e;
    g_u.noalias() -= e * cur.coeffs_v;
    g_v.noalias() -= e.adjoint() * cur.basis_u;

    RealVector g_w = RealVector::Zero(d);

    // U = X V M2^-1, M2 = V^H V + diag(w)
    ComplexMatrix const m2 = detail::gram_plus(cur.coeffs_v, w);
    ComplexMatrix const g_p = hermitian_solve(m2, g_u.adjoint()).adjoint();
    ComplexMatrix const g_m2 = -(cur.basis_u.adjoint() * g_p);
    g_w += g_m2.diagonal().real();
    g_v += cur.coeffs_v * (g_m2 + g_m2.adjoint());
    g_v.noalias() += x.adjoint() * g_p;
    ComplexMatrix g_x = g_p * cur.coeffs_v.adjoint();

    // V = X^H U_prev M1^-1, M1 = U_prev^H U_prev + diag(w)
    ComplexMatrix const m1 = detail::gram_plus(prev.basis_u, w);
    ComplexMatrix const g_q = hermitian_solve(m1, g_v.adjoint()).adjoint();
    ComplexMatrix const g_m1 = -(cur.coeffs_v.adjoint() * g_q);
    g_w += g_m1.diagonal().real();
    ComplexMatrix g_u_prev = prev.basis_u * (g_m1 + g_m1.adjoint());
    g_u_prev.noalias() += x * g_q;
    g_x.noalias() += prev.basis_u * g_q.adjoint();

    // X = D - B, B = R ./ den, den = 1 + 2 lambda W_b(B_prev), W_b = (|B_prev|^2 + eps)^-1/2
    g_b -= g_x;
    ComplexMatrix g_r(g_b.rows(), g_b.cols());
    ComplexMatrix g_b_prev(g_b.rows(), g_b.cols());
    double g_lambda = 0.0;
    for (Index i = 0; i < g_b.size(); ++i) {
      double const wb = 1.0 / std::sqrt(std::norm(prev.blood_b(i)) + net.epsilon);
      double const den = 1.0 + 2.0 * lambda * wb;
      double const g_den = -std::real(std::conj(g_b(i)) * cur.blood_b(i)) / den;
      g_lambda += 2.0 * g_den * wb;
      g_r(i) = g_b(i) / den;
      g_b_prev(i) = (-2.0 * lambda * g_den * wb * wb * wb) * prev.blood_b(i);
    }

    // R = D - U_prev V_prev^H
    g_u_prev.noalias() -= g_r * prev.coeffs_v;
    ComplexMatrix g_v_prev = -(g_r.adjoint() * prev.basis_u);

    Index const offset = k * (d + 1);
    out.gradient(offset) = g_lambda * sigmoid(layer.theta_lambda);
    for (Index j = 0; j < d; ++j) { out.gradient(offset + 1 + j) = g_w(j) * sigmoid(layer.theta_w(j)); }

    g_u = std::move(g_u_prev);
    g_v = std::move(g_v_prev);
    g_b = std::move(g_b_prev);
  }
  return out;
}

inline LossGradient parameter_gradient(UnfoldedNetwork const &net, ComplexMatrix const &d_mat, TrainConfig const &cfg)
{
  return cfg.grad_mode == GradMode::analytic ? analytic_gradient(net, d_mat)
                                             : finite_difference_gradient(net, d_mat);
}

/// Splits the columns of m into consecutive batches of at most batch_frames.
inline std::vector<ComplexMatrix> split_batches(ComplexMatrix const &m, Index batch_frames)
{
  require(batch_frames >= 1, ErrorCode::config, "batch_frames must be positive");
  std::vector<ComplexMatrix> out;
  for (Index start = 0; start < m.cols(); start += batch_frames) {
    out.emplace_back(m.middleCols(start, std::min(batch_frames, m.cols() - start)));
  }
  return out;
}

namespace detail {

inline double normalization_scale(ComplexMatrix const &d_mat, bool normalize)
{
  if (!normalize) { return 1.0; }
  double const peak = d_mat.cwiseAbs().maxCoeff();
  return peak > 0.0 ? peak : 1.0;
}

inline double mean_loss(UnfoldedNetwork const &net, std::vector<ComplexMatrix> const &batches)
{
  double total = 0.0;
  for (auto const &b : batches) { total += loss(network_forward(net, b), b); }
  return total / static_cast<double>(batches.size());
}

inline std::vector<ComplexMatrix> normalized(std::vector<ComplexMatrix> batches, bool normalize)
{
  for (auto &b : batches) { b /= normalization_scale(b, normalize); }
  return batches;
}

} // namespace detail

struct TrainResult {
  UnfoldedNetwork network;
  std::vector<double> train_loss; // mean batch loss per epoch (entry 0 is before training)
  std::vector<double> val_loss;   // validation loss per epoch (entry 0 is before training)
  int best_epoch = 0;
};

/// Adam on the unconstrained parameters with early stopping on validation loss.
/// Returns the parameters of the best validation epoch.
inline TrainResult train(UnfoldedNetwork const &net, std::vector<ComplexMatrix> const &train_batches,
                         std::vector<ComplexMatrix> const &val_batches, TrainConfig const &cfg)
{
  cfg.validate();
  net.validate();
  require(!train_batches.empty() && !val_batches.empty(), ErrorCode::config, "training needs train and val batches");
  Index const pixels = train_batches.front().rows();
  for (auto const *set : {&train_batches, &val_batches}) {
    for (auto const &b : *set) {
      require(b.rows() == pixels, ErrorCode::dimension, "all batches must share the pixel count");
      require(b.cols() >= net.d, ErrorCode::dimension, "batch has fewer frames than the inner dimension");
    }
  }

  auto const train_set = detail::normalized(train_batches, net.normalize);
  auto const val_set = detail::normalized(val_batches, net.normalize);

  TrainResult result;
  result.network = net;
  result.network.trained_pixels = pixels;
  UnfoldedNetwork current = result.network;

  RealVector steps(current.parameter_count());
  for (Index k = 0; k < current.depth(); ++k) {
    steps(k * (current.d + 1)) = cfg.learning_rate;
    steps.segment(k * (current.d + 1) + 1, current.d).setConstant(cfg.learning_rate_weights);
  }
  Adam adam(current.parameter_count(), steps, cfg.adam);
  RealVector theta = current.flatten();

  double best = detail::mean_loss(current, val_set);
  result.val_loss.push_back(best);
  result.train_loss.push_back(detail::mean_loss(current, train_set));

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs && stale < cfg.patience; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t idx : order) {
      LossGradient const g = parameter_gradient(current, train_set[idx], cfg);
      if (!std::isfinite(g.loss) || !g.gradient.allFinite()) {
        throw Error(ErrorCode::non_finite, "training diverged at epoch " + std::to_string(epoch));
      }
      epoch_loss += g.loss;
      adam.step(theta, g.gradient);
      current.unflatten(theta);
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(train_set.size()));
    double const val = detail::mean_loss(current, val_set);
    if (!std::isfinite(val)) { throw Error(ErrorCode::non_finite, "validation loss diverged at epoch " + std::to_string(epoch)); }
    result.val_loss.push_back(val);
    if (val < best) {
      best = val;
      result.best_epoch = epoch;
      result.network.layers = current.layers;
      stale = 0;
    } else {
      ++stale;
    }
  }
  return result;
}

/// Frozen-parameter forward pass; returns the last layer in input units.
inline Decomposition infer(UnfoldedNetwork const &net, ComplexMatrix const &d_in)
{
  net.validate();
  require(net.trained_pixels == 0 || net.trained_pixels == d_in.rows(), ErrorCode::dimension,
          "pixel count " + std::to_string(d_in.rows()) + " differs from the training data (" +
            std::to_string(net.trained_pixels) + ")");
  if (d_in.isZero(0.0)) {
    return {ComplexMatrix::Zero(d_in.rows(), net.d), ComplexMatrix::Zero(d_in.cols(), net.d),
            ComplexMatrix::Zero(d_in.rows(), d_in.cols())};
  }
  double const scale = detail::normalization_scale(d_in, net.normalize);
  ComplexMatrix const d_mat = d_in / scale;
  Decomposition out = network_forward(net, d_mat).layers.back();
  detail::scale_decomposition(out, scale);
  return out;
}

} // namespace umi
