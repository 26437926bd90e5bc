// Acceptance suite: one PASS/FAIL line per criterion. Exits 0 when every
// criterion was evaluated; --strict also exits 1 when any criterion failed.

#include "umi/hydraulics.hpp"
#include "umi/pipeline.hpp"

#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

using namespace umi;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(char const *f, auto... args)
{
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- 1, 2

IrlsConfig recovery_config()
{
  IrlsConfig cfg;
  cfg.d = 6;
  cfg.lambda_c = 1.0;
  cfg.lambda_b = 0.005;
  cfg.max_iter = 100;
  cfg.tol = 1e-6;
  return cfg;
}

test::SyntheticRpca recovery_instance(std::uint64_t seed)
{
  return test::synthetic_rpca(500, 100, 3, 0.02, 5.0, 30.0, seed);
}

Outcome criterion_recovery()
{
  double worst_err = 0.0;
  double worst_time = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto const data = recovery_instance(seed);
    auto const t0 = Clock::now();
    auto const [dec, trace] = run_irls(data.d, recovery_config());
    worst_time = std::max(worst_time, seconds_since(t0));
    worst_err = std::max(worst_err, (dec.blood_b - data.blood).norm() / data.blood.norm());
  }
  return {worst_err <= 0.1 && worst_time < 30.0,
          fmt("worst relative error %.4f (<= 0.1), worst time %.2f s (< 30 s), 10 seeds", worst_err, worst_time)};
}

Outcome criterion_convergence()
{
  int worst_iter = 0;
  bool all_converged = true;
  double worst_slack = -1.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto const [dec, trace] = run_irls(recovery_instance(seed).d, recovery_config());
    all_converged = all_converged && trace.converged && trace.convergence.back() < 1e-6;
    worst_iter = std::max(worst_iter, trace.iterations);
    for (std::size_t k = 0; k < trace.objective.size(); ++k) {
      worst_slack = std::max(worst_slack, (trace.objective[k] - trace.objective_before[k]) / trace.objective_before[k]);
    }
  }
  return {all_converged && worst_iter <= 100 && worst_slack <= 1e-9,
          fmt("converged on all seeds: %s, max iterations %d (<= 100), max relative objective increase %.3e (<= 1e-9)",
              all_converged ? "yes" : "no", worst_iter, worst_slack)};
}

// ---------------------------------------------------------------- 3

Outcome criterion_equivalence()
{
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<Index> ns_pick(16, 64), nt_pick(8, 32), d_pick(1, 5), k_pick(1, 5);
  std::uniform_real_distribution<double> lc(0.01, 2.0), lb(0.001, 0.5);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Index const ns = ns_pick(rng);
    Index const nt = nt_pick(rng);
    Index const d = std::min({d_pick(rng), ns, nt});
    int const k = static_cast<int>(k_pick(rng));
    auto const data = test::synthetic_rpca(ns, nt, std::max<Index>(1, d - 1), 0.05, 4.0, 25.0, 500 + trial);
    IrlsConfig cfg;
    cfg.d = d;
    cfg.lambda_c = lc(rng);
    cfg.lambda_b = lb(rng);
    cfg.max_iter = k;
    cfg.tol = 1e-300;
    cfg.normalize = false;
    auto const [dec, trace] = run_irls(data.d, cfg);
    UnfoldedNetwork net;
    net.d = d;
    net.epsilon = cfg.epsilon;
    net.normalize = false;
    for (auto const &w : trace.lowrank_weights_used) {
      net.layers.push_back(LayerParams::from_values(cfg.lambda_b, 2.0 * cfg.lambda_c * w));
    }
    Decomposition const out = network_forward(net, data.d).layers.back();
    worst = std::max({worst, test::rel_err(out.blood_b, dec.blood_b), test::rel_err(out.basis_u, dec.basis_u),
                      test::rel_err(out.coeffs_v, dec.coeffs_v)});
  }
  return {worst <= 1e-10, fmt("worst relative Frobenius error %.3e over 20 instances (<= 1e-10)", worst)};
}

// ---------------------------------------------------------------- 4

Outcome criterion_gradients()
{
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    ComplexMatrix const d = test::random_complex(12, 8, rng);
    UnfoldedNetwork net;
    net.d = 2;
    net.epsilon = 1e-3;
    net.normalize = false;
    net.layers.push_back(LayerParams::from_values(0.3, RealVector::Constant(2, 0.5)));
    net.layers.push_back(LayerParams::from_values(0.05, RealVector::Constant(2, 0.2)));
    net.layers.push_back(LayerParams::from_values(0.1, RealVector::Constant(2, 0.8)));
    LossGradient const fd = finite_difference_gradient(net, d);
    LossGradient const an = analytic_gradient(net, d);
    for (Index i = 0; i < fd.gradient.size(); ++i) {
      double const scale = std::max(std::abs(fd.gradient(i)), 1e-6 * fd.gradient.cwiseAbs().maxCoeff());
      worst = std::max(worst, std::abs(an.gradient(i) - fd.gradient(i)) / scale);
    }
  }
  return {worst <= 1e-4, fmt("worst per-component relative error analytic vs central differences %.3e (<= 1e-4)", worst)};
}

// ---------------------------------------------------------------- 6

Outcome criterion_hydraulics()
{
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> pick(0.1, 100.0);
  double worst_residual = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    FlowUnit const u = sample_flow_unit(seed, 1 + static_cast<int>(seed % 8));
    Incidence const inc = assemble_incidence(u);
    RealVector p_h(static_cast<Index>(inc.hanging.size()));
    for (Index i = 0; i < p_h.size(); ++i) { p_h(i) = pick(rng); }
    worst_residual = std::max(worst_residual, solve_network(u, p_h).conservation_residual());
  }

  FlowUnit sym = sample_flow_unit(1, 1);
  for (auto &e : sym.edges) {
    e.length_mm = 3.5;
    e.radius_mm = 1.25 * std::pow(1.0 / std::numbers::sqrt2, e.hierarchy - 1);
  }
  FlowNetwork const net = solve_network(sym, 2.0);
  double split = 0.0;
  for (Index e : {1, 2}) { split = std::max(split, std::abs(net.flow(e) - net.flow(0) / 2.0) / net.flow(0)); }
  for (Index e : {3, 4, 5, 6}) { split = std::max(split, std::abs(net.flow(e) - net.flow(0) / 4.0) / net.flow(0)); }

  double const xi = flow_resistance(3.5, 1.25, 0.004);
  RealVector c(1), dp(1), r(1);
  c << 1.0 / flow_resistance(1.0, 1.25, 0.004);
  dp << 1.0;
  r << 1.25;
  double const v = edge_velocities(c, dp, r)(0);
  bool const ok = worst_residual <= 1e-10 && split <= 1e-12 && std::abs(xi - 1.460e7) <= 0.001e7 &&
                  std::abs(v - 97.65625) <= 1e-9;
  return {ok, fmt("conservation %.2e (<= 1e-10), symmetric split %.2e (<= 1e-12), xi %.4e Pa s/m^3, "
                  "v_max(L=1 mm, R=1.25 mm, dP=1 Pa) %.6f mm/s",
                  worst_residual, split, xi, v)};
}

// ---------------------------------------------------------------- 8

Outcome criterion_metrics()
{
  Mask blood = Mask::Constant(2, 4, false), tissue = Mask::Constant(2, 4, false);
  blood.row(0).setConstant(true);
  tissue.row(1).setConstant(true);
  RealMatrix pd(2, 4);
  pd << 100, 100, 100, 100, 0, 2, 0, 2;
  RealMatrix peak = pd;
  peak(0, 2) = 1000.0;
  double const e_cnr = std::abs(cnr(pd, blood, tissue) - 10.0 * std::log10(99.0));
  double const e_snr = std::abs(snr(pd, blood, tissue) - 20.0);
  double const e_psl = std::abs(psl(peak, blood, tissue) - 30.0);

  double invariance = 0.0;
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RealMatrix img(6, 7);
  for (Index i = 0; i < img.size(); ++i) { img(i) = u(rng); }
  Mask b2 = Mask::Constant(6, 7, false), t2 = Mask::Constant(6, 7, false);
  b2.topRows(2).setConstant(true);
  t2.bottomRows(3).setConstant(true);
  img.topRows(2).array() += 5.0;
  for (double alpha : {1e-8, 0.5, 1e6}) {
    invariance = std::max({invariance, std::abs(cnr(alpha * img, b2, t2) - cnr(img, b2, t2)),
                           std::abs(snr(alpha * img, b2, t2) - snr(img, b2, t2)),
                           std::abs(psl(alpha * img, b2, t2) - psl(img, b2, t2))});
  }
  double const worst = std::max({e_cnr, e_snr, e_psl});
  return {worst <= 1e-9 && invariance <= 1e-9,
          fmt("hand-computed CNR 19.956/SNR 20/PSL 30 dB max error %.2e dB, scale invariance %.2e dB (<= 1e-9)", worst,
              invariance)};
}

// ---------------------------------------------------------------- 9

std::string from_hex(std::string const &hex)
{
  std::string out;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2) {
    out.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  }
  return out;
}

RunConfig small_config(Method method)
{
  RunConfig c;
  c.method = method;
  c.seed = 3;
  c.ensemble = 40;
  c.phantom.n_units = 1;
  c.phantom.dz_mm = 0.3;
  c.phantom.dx_mm = 0.3;
  c.phantom.density_per_mm3 = 40.0;
  c.simulation.train_frames = 120;
  c.simulation.test_frames = 80;
  c.irls.d = 6;
  c.irls.lambda_b = 0.002;
  c.irls.max_iter = 20;
  c.unfolded.layers = 3;
  c.unfolded.d = 6;
  c.unfolded.lambda_b_init = 0.002;
  c.train.batch_frames = 40;
  c.train.max_epochs = 2;
  c.train.grad_mode = GradMode::analytic;
  return c;
}

std::vector<std::pair<std::string, std::string>> directory_bytes(fs::path const &dir)
{
  std::vector<std::pair<std::string, std::string>> out;
  for (auto const &entry : fs::directory_iterator(dir)) {
    out.emplace_back(entry.path().filename().string(), detail::read_file(entry.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Outcome criterion_determinism()
{
  bool identical = true;
  std::size_t files = 0;
  fs::path const root = fs::temp_directory_path() / "umi_acceptance_determinism";
  for (Method m : {Method::svd, Method::irls, Method::unfolded}) {
    std::vector<std::vector<std::pair<std::string, std::string>>> runs;
    for (int rep = 0; rep < 2; ++rep) {
      fs::path const dir = root / (to_string(m) + "_" + std::to_string(rep));
      fs::remove_all(dir);
      fs::create_directories(dir);
      run_pipeline(small_config(m), dir);
      runs.push_back(directory_bytes(dir));
    }
    identical = identical && runs[0] == runs[1];
    files += runs[0].size();
  }
  fs::remove_all(root);

  std::vector<Complex> v(8);
  for (int i = 0; i < 8; ++i) { v[static_cast<std::size_t>(i)] = Complex(i, -0.5 * i); }
  FrameSequence const seq(2, 2, 2, std::move(v));
  DatasetMeta const meta{1000.0, 7.5e6, 5000.0, 0x0123456789abcdefULL};
  std::string const umi_golden = from_hex(
    "554d493101000000020000000200000002000000efcdab89674523010000000000408f4000000000389c5c41000000000088b34000000000"
    "000000800000803f000000bf00000040000080bf000040400000c0bf00008040000000c00000a040000020c00000c040000040c00000e040"
    "000060c0");
  bool const umi_ok = encode_dataset(seq, meta) == umi_golden &&
                      encode_dataset(decode_dataset(umi_golden).frames, decode_dataset(umi_golden).meta) == umi_golden;

  UnfoldedNetwork net;
  net.d = 1;
  net.trained_pixels = 6;
  net.layers.resize(2);
  net.layers[0] = {0.25, RealVector::Constant(1, -1.5)};
  net.layers[1] = {2.0, RealVector::Constant(1, 3.0)};
  std::string const u2m_golden = from_hex("55324d310100000002000000010000000600000000000000cefaedfe000000003a8c30e28e7945"
                                          "3e000000000000d03f000000000000f8bf00000000000000400000000000000840");
  LoadedModel const back = decode_model(u2m_golden);
  bool const u2m_ok = encode_model(net, 0xfeedface) == u2m_golden && back.network.flatten() == net.flatten() &&
                      encode_model(back.network, back.config_hash) == u2m_golden;

  return {identical && umi_ok && u2m_ok,
          fmt("repeat runs byte-identical: %s (%zu artifacts, 3 methods); UMI1 golden: %s; U2M1 golden: %s",
              identical ? "yes" : "no", files, umi_ok ? "exact" : "MISMATCH", u2m_ok ? "exact" : "MISMATCH")};
}

// ---------------------------------------------------------------- 5, 7

RunConfig desk_config()
{
  return load_config(fs::path(UMI_SOURCE_DIR) / "configs" / "desk.json");
}

Outcome criterion_training()
{
  auto const t0 = Clock::now();
  RunConfig cfg = desk_config();
  Simulation const sim = simulate(cfg);
  double const t_sim = seconds_since(t0);
  auto const t1 = Clock::now();
  Training const tr = train_model(cfg, sim.frames);
  double const t_train = seconds_since(t1);

  double score[3] = {0, 0, 0};
  char const *names[3] = {"svd", "irls", "unfolded"};
  Method const methods[3] = {Method::svd, Method::irls, Method::unfolded};
  for (int i = 0; i < 3; ++i) {
    ComplexMatrix const b = filter_frames(methods[i], sim.frames, cfg, &tr.result.network);
    Evaluation const ev = evaluate(b, sim.frames.nz(), sim.frames.nx(), cfg.ensemble, sim.truth, sim.meta);
    score[i] = ev.mean.cnr_db;
    std::printf("  desk %-8s CNR %7.3f dB  SNR %7.3f dB  PSL %7.3f dB  R2 %.3f  slope %.3f\n", names[i], ev.mean.cnr_db,
                ev.mean.snr_db, ev.mean.psl_db, ev.mean.velocity_r2, ev.mean.velocity_slope);
  }
  double const total = seconds_since(t0);
  std::printf("  desk pixels %lld, frames %lld, training %zu epochs (best %d), lambda_b layer 1 %.5f -> %.5f\n",
              static_cast<long long>(sim.frames.pixels()), static_cast<long long>(sim.frames.nt()),
              tr.result.val_loss.size() - 1, tr.result.best_epoch, cfg.unfolded.lambda_b_init,
              tr.result.network.layers.front().lambda_b());
  double const margin = score[2] - score[1];
  bool const ok = margin >= 1.0 && score[1] >= score[0] && score[2] >= score[0] && total < 900.0;
  return {ok, fmt("CNR unfolded %.3f, IRLS %.3f, SVD %.3f dB; margin %+.3f dB (>= +1); runtime %.0f s "
                  "(simulate %.0f, train %.0f; < 900)",
                  score[2], score[1], score[0], margin, total, t_sim, t_train)};
}

Outcome criterion_velocity()
{
  RunConfig cfg = desk_config();
  cfg.simulation.noise_snr_db = std::numeric_limits<double>::infinity();
  cfg.simulation.train_frames = 0;
  Simulation const sim = simulate(cfg);
  ComplexMatrix const b = filter_frames(cfg.method, sim.frames, cfg);
  Evaluation const ev = evaluate(b, sim.frames.nz(), sim.frames.nx(), cfg.ensemble, sim.truth, sim.meta);
  double const r2 = ev.mean.velocity_r2;
  double const slope = ev.mean.velocity_slope;
  return {r2 >= 0.8 && slope >= 0.6 && slope <= 1.1,
          fmt("noise-free desk phantom, %s filter: R2 %.3f (>= 0.8), slope %.3f (in [0.6, 1.1])",
              to_string(cfg.method).c_str(), r2, slope)};
}

} // namespace

int main(int argc, char **argv)
{
  bool strict = false;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) { strict = true; }
  }
  struct Criterion {
    int id;
    char const *name;
    std::function<Outcome()> run;
  };
  std::vector<Criterion> const criteria{
    {1, "IRLS recovery", criterion_recovery},
    {2, "IRLS convergence and descent", criterion_convergence},
    {3, "unfolding equivalence", criterion_equivalence},
    {4, "gradient correctness", criterion_gradients},
    {5, "training efficacy", criterion_training},
    {6, "hydraulics", criterion_hydraulics},
    {7, "Doppler velocity quality", criterion_velocity},
    {8, "metric units", criterion_metrics},
    {9, "determinism and formats", criterion_determinism},
  };
  int passed = 0;
  bool errors = false;
  for (auto const &c : criteria) {
    auto const t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (std::exception const &e) {
      o = {false, std::string("error: ") + e.what()};
      errors = true;
    }
    passed += o.pass ? 1 : 0;
    std::printf("criterion %d %s: %s (%s) [%.1f s]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%zu criteria passed\n", passed, criteria.size());
  if (errors) { return 2; }
  return strict && passed != static_cast<int>(criteria.size()) ? 1 : 0;
}
