#pragma once

// Stage implementations shared by the CLI and the acceptance suite.

#include "config.hpp"
#include "doppler_metrics.hpp"
#include "io.hpp"
#include "irls_rpca.hpp"
#include "phantom_sim.hpp"
#include "svd_filter.hpp"
#include "unfolded_net.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace umi {

enum class Stage : int { config = 1, simulate = 2, filter = 3, train = 4, infer = 5, evaluate = 6, render = 7 };

inline std::string to_string(Stage s)
{
  switch (s) {
  case Stage::config: return "config";
  case Stage::simulate: return "simulate";
  case Stage::filter: return "filter";
  case Stage::train: return "train";
  case Stage::infer: return "infer";
  case Stage::evaluate: return "evaluate";
  case Stage::render: return "render";
  }
  return "?";
}

/// Process exit code for a failure: 10 * stage + error code.
inline int exit_code(Stage stage, ErrorCode code) { return 10 * static_cast<int>(stage) + static_cast<int>(code); }

// ---------------------------------------------------------------- simulate

struct Simulation {
  PhantomScene scene;
  FrameSequence frames;
  GroundTruth truth;
  DatasetMeta meta;
};

inline DatasetMeta dataset_meta(RunConfig const &cfg)
{
  return {cfg.imaging.frame_rate, cfg.imaging.center_frequency, cfg.imaging.prf, config_hash(cfg)};
}

inline Simulation simulate(RunConfig const &cfg)
{
  Index const frames = cfg.simulation.train_frames + cfg.simulation.test_frames;
  require(frames >= 1, ErrorCode::config, "simulation needs at least one frame");
  Simulation sim;
  sim.scene = build_phantom(cfg.seed, cfg.phantom, cfg.imaging);
  sim.frames = synthesize_iq(sim.scene, 0, frames, cfg.simulation.noise_snr_db).data;
  sim.truth = ground_truth(sim.scene, cfg.evaluate.guard_mm);
  sim.meta = dataset_meta(cfg);
  return sim;
}

inline RealMatrix mask_image(Mask const &m) { return m.cast<double>().matrix(); }

inline Mask image_mask(RealMatrix const &m)
{
  require((m.array() == 0.0 || m.array() == 1.0).all(), ErrorCode::format, "mask CSV must hold only 0 and 1");
  return m.array() != 0.0;
}

inline void write_truth(GroundTruth const &gt, std::filesystem::path const &dir)
{
  render(mask_image(gt.flow_mask), dir / "truth_flow_mask.csv", RenderMode::csv);
  render(mask_image(gt.tissue_mask), dir / "truth_tissue_mask.csv", RenderMode::csv);
  render(gt.axial_velocity, dir / "truth_velocity.csv", RenderMode::csv);
}

inline GroundTruth read_truth(std::filesystem::path const &dir)
{
  GroundTruth gt;
  gt.flow_mask = image_mask(parse_csv(detail::read_file(dir / "truth_flow_mask.csv")));
  gt.tissue_mask = image_mask(parse_csv(detail::read_file(dir / "truth_tissue_mask.csv")));
  gt.axial_velocity = parse_csv(detail::read_file(dir / "truth_velocity.csv"));
  require(gt.flow_mask.rows() == gt.tissue_mask.rows() && gt.flow_mask.cols() == gt.tissue_mask.cols() &&
            gt.flow_mask.rows() == gt.axial_velocity.rows() && gt.flow_mask.cols() == gt.axial_velocity.cols(),
          ErrorCode::format, "ground-truth images differ in shape");
  return gt;
}

inline nlohmann::json scene_summary(PhantomScene const &s)
{
  nlohmann::json edges = nlohmann::json::array();
  for (auto const &e : s.edges) {
    edges.push_back({{"z0_mm", e.z0}, {"x0_mm", e.x0}, {"dir_z", e.dir_z}, {"dir_x", e.dir_x},
                     {"length_mm", e.length_mm}, {"radius_mm", e.radius_mm}, {"v_max_mm_s", e.v_max}});
  }
  return {{"nz", s.grid.nz},
          {"nx", s.grid.nx},
          {"z0_mm", s.grid.z0},
          {"x0_mm", s.grid.x0},
          {"dz_mm", s.grid.dz},
          {"dx_mm", s.grid.dx},
          {"rotation_deg", s.rotation_deg},
          {"elevation_mm", s.elevation_mm},
          {"tissue_scatterers", s.tissue.size()},
          {"flow_scatterers", s.flow.size()},
          {"edges", edges}};
}

// ---------------------------------------------------------------- frame ranges

/// Casorati columns [first, first + count) of a sequence.
inline ComplexMatrix frame_range(FrameSequence const &seq, Index first, Index count)
{
  require(first >= 0 && count >= 1 && first + count <= seq.nt(), ErrorCode::dimension,
          "frame range [" + std::to_string(first) + ", " + std::to_string(first + count) + ") exceeds " +
            std::to_string(seq.nt()) + " frames");
  return to_casorati(seq).middleCols(first, count);
}

struct TestSplit {
  Index first = 0;
  Index ensembles = 0;
  Index ensemble = 0;
  Index frames() const { return ensembles * ensemble; }
};

/// Held-out frames follow the training frames; only whole ensembles are used.
inline TestSplit test_split(RunConfig const &cfg, Index nt)
{
  TestSplit s;
  s.first = cfg.simulation.train_frames;
  s.ensemble = cfg.ensemble;
  require(s.first < nt, ErrorCode::dimension,
          "dataset has " + std::to_string(nt) + " frames, all reserved for training");
  Index available = nt - s.first;
  if (cfg.simulation.test_frames > 0) { available = std::min(available, cfg.simulation.test_frames); }
  s.ensembles = available / s.ensemble;
  require(s.ensembles >= 1, ErrorCode::dimension,
          "held-out frames (" + std::to_string(available) + ") do not fill one ensemble of " +
            std::to_string(s.ensemble));
  return s;
}

// ---------------------------------------------------------------- filter

inline ComplexMatrix svd_filter_ensemble(ComplexMatrix const &d_mat, SvdSettings const &s)
{
  SvdResult const dec = svd(d_mat);
  Index const rank = dec.s.size();
  SvdCutoffs cut;
  cut.low_cut = s.low_cut > 0 ? s.low_cut : estimate_low_cut(dec.s, s.auto_fraction);
  cut.high_cut = s.high_cut > 0 ? std::min(s.high_cut, rank) : rank;
  return svd_clutter_filter(dec, cut);
}

inline ComplexMatrix filter_ensemble(Method method, ComplexMatrix const &d_mat, RunConfig const &cfg,
                                     UnfoldedNetwork const *net)
{
  switch (method) {
  case Method::svd: return svd_filter_ensemble(d_mat, cfg.svd);
  case Method::irls: return run_irls(d_mat, cfg.irls).first.blood_b;
  case Method::unfolded:
    require(net != nullptr, ErrorCode::config, "the unfolded method needs a trained model");
    return infer(*net, d_mat).blood_b;
  }
  throw Error(ErrorCode::config, "unknown method");
}

/// Filters the held-out frames ensemble by ensemble; columns follow the input frames.
inline ComplexMatrix filter_frames(Method method, FrameSequence const &seq, RunConfig const &cfg,
                                   UnfoldedNetwork const *net = nullptr)
{
  TestSplit const split = test_split(cfg, seq.nt());
  ComplexMatrix b(seq.pixels(), split.frames());
  for (Index e = 0; e < split.ensembles; ++e) {
    ComplexMatrix const d = frame_range(seq, split.first + e * split.ensemble, split.ensemble);
    b.middleCols(e * split.ensemble, split.ensemble) = filter_ensemble(method, d, cfg, net);
  }
  return b;
}

// ---------------------------------------------------------------- train

struct Training {
  TrainResult result;
  Index train_batches = 0;
  Index val_batches = 0;
};

/// Batches of the training frames; the trailing validation_fraction of them is held out.
inline Training train_model(RunConfig const &cfg, FrameSequence const &seq)
{
  Index const n = cfg.simulation.train_frames;
  require(n >= 1 && n <= seq.nt(), ErrorCode::dimension,
          "training needs " + std::to_string(n) + " frames, dataset has " + std::to_string(seq.nt()));
  std::vector<ComplexMatrix> batches = split_batches(frame_range(seq, 0, n), cfg.train.batch_frames);
  require(batches.size() >= 2, ErrorCode::config, "training needs at least two batches (one for validation)");
  auto const total = static_cast<Index>(batches.size());
  Index const n_val = std::clamp<Index>(
    static_cast<Index>(std::llround(cfg.train.validation_fraction * static_cast<double>(total))), 1, total - 1);
  std::vector<ComplexMatrix> val(batches.end() - n_val, batches.end());
  batches.resize(static_cast<std::size_t>(total - n_val));

  IrlsConfig init = cfg.irls;
  init.lambda_c = cfg.unfolded.lambda_c_init;
  UnfoldedNetwork const net =
    init_network(batches.front(), cfg.unfolded.layers, cfg.unfolded.d, cfg.unfolded.lambda_b_init, init);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  Training out;
  out.train_batches = total - n_val;
  out.val_batches = n_val;
  out.result = train(net, batches, val, tc);
  return out;
}

inline nlohmann::json training_summary(Training const &t)
{
  nlohmann::json layers = nlohmann::json::array();
  for (auto const &l : t.result.network.layers) {
    std::vector<double> w(static_cast<std::size_t>(l.theta_w.size()));
    RealVector const wc = l.w_c();
    for (Index j = 0; j < wc.size(); ++j) { w[static_cast<std::size_t>(j)] = wc(j); }
    layers.push_back({{"lambda_b", l.lambda_b()}, {"w_c", w}});
  }
  return {{"train_batches", t.train_batches},
          {"val_batches", t.val_batches},
          {"best_epoch", t.result.best_epoch},
          {"train_loss", t.result.train_loss},
          {"val_loss", t.result.val_loss},
          {"layers", layers}};
}

// ---------------------------------------------------------------- evaluate

struct EnsembleMetrics {
  double cnr_db = 0.0;
  double snr_db = 0.0;
  double psl_db = 0.0;
  double velocity_r2 = 0.0;
  double velocity_slope = 0.0;
};

struct Evaluation {
  std::vector<EnsembleMetrics> ensembles;
  EnsembleMetrics mean;
  RealMatrix power;    // PD averaged over ensembles
  RealMatrix velocity; // axial velocity averaged over ensembles, mm/s
};

/// b holds whole ensembles of filtered frames side by side.
inline Evaluation evaluate(ComplexMatrix const &b, Index nz, Index nx, Index ensemble, GroundTruth const &gt,
                           DatasetMeta const &meta)
{
  require(ensemble >= 2 && b.cols() >= ensemble && b.cols() % ensemble == 0, ErrorCode::dimension,
          "filtered frames (" + std::to_string(b.cols()) + ") are not a whole number of ensembles of " +
            std::to_string(ensemble));
  require(gt.flow_mask.rows() == nz && gt.flow_mask.cols() == nx, ErrorCode::dimension,
          "ground truth shape differs from the image");
  Index const n = b.cols() / ensemble;
  Evaluation ev;
  ev.power.setZero(nz, nx);
  ev.velocity.setZero(nz, nx);
  for (Index e = 0; e < n; ++e) {
    ComplexMatrix const be = b.middleCols(e * ensemble, ensemble);
    RealMatrix const pd = power_doppler(be, nz, nx);
    VelocityImage const vel = doppler_velocity(be, nz, nx, meta.frame_rate, meta.center_frequency);
    LinearFit const fit = r_squared(vel.velocity, gt.axial_velocity, gt.flow_mask);
    EnsembleMetrics m{cnr(pd, gt.flow_mask, gt.tissue_mask), snr(pd, gt.flow_mask, gt.tissue_mask),
                      psl(pd, gt.flow_mask, gt.tissue_mask), fit.r_squared, fit.slope};
    ev.ensembles.push_back(m);
    ev.power += pd / static_cast<double>(n);
    ev.velocity += vel.velocity / static_cast<double>(n);
  }
  for (auto const &m : ev.ensembles) {
    double const w = 1.0 / static_cast<double>(n);
    ev.mean.cnr_db += w * m.cnr_db;
    ev.mean.snr_db += w * m.snr_db;
    ev.mean.psl_db += w * m.psl_db;
    ev.mean.velocity_r2 += w * m.velocity_r2;
    ev.mean.velocity_slope += w * m.velocity_slope;
  }
  return ev;
}

inline nlohmann::json metrics_json(EnsembleMetrics const &m)
{
  return {{"cnr_db", m.cnr_db},
          {"snr_db", m.snr_db},
          {"psl_db", m.psl_db},
          {"velocity_r2", m.velocity_r2},
          {"velocity_slope", m.velocity_slope}};
}

/// Report document: echoes the full configuration and its hash. Contains no timings
/// or host details, so identical inputs give byte-identical output.
inline nlohmann::json report(RunConfig const &cfg, std::string const &stage, nlohmann::json body)
{
  nlohmann::json r;
  r["stage"] = stage;
  r["config"] = to_json(cfg);
  r["config_hash"] = hash_hex(config_hash(cfg));
  for (auto const &item : body.items()) { r[item.key()] = item.value(); }
  return r;
}

inline nlohmann::json evaluation_json(Evaluation const &ev, std::string const &method)
{
  nlohmann::json per = nlohmann::json::array();
  for (auto const &m : ev.ensembles) { per.push_back(metrics_json(m)); }
  return {{"method", method},
          {"ensembles", ev.ensembles.size()},
          {"metrics", metrics_json(ev.mean)},
          {"per_ensemble", per}};
}

inline std::string dump_report(nlohmann::json const &r) { return r.dump(2) + "\n"; }

// ---------------------------------------------------------------- render

inline void render_images(Evaluation const &ev, std::filesystem::path const &dir, std::string const &stem,
                          double dynamic_range_db, std::uint64_t hash)
{
  render(ev.power, dir / (stem + "_pd.pgm"), RenderMode::pgm, dynamic_range_db, hash);
  render(ev.power, dir / (stem + "_pd.csv"), RenderMode::csv);
  render(ev.velocity, dir / (stem + "_velocity.csv"), RenderMode::csv);
}

// ---------------------------------------------------------------- end to end

struct PipelineOutput {
  std::string report; // serialized evaluation report
  FrameSequence blood;
};

/// simulate, optionally train, filter and evaluate in memory, writing every artifact to dir.
inline PipelineOutput run_pipeline(RunConfig const &cfg, std::filesystem::path const &dir)
{
  Simulation const sim = simulate(cfg);
  write_dataset(sim.frames, sim.meta, dir / "dataset.umi");
  write_truth(sim.truth, dir);
  std::optional<UnfoldedNetwork> net;
  if (cfg.method == Method::unfolded) {
    Training const t = train_model(cfg, sim.frames);
    net = t.result.network;
    write_model(*net, dir / "model.u2m", config_hash(cfg));
  }
  ComplexMatrix const b = filter_frames(cfg.method, sim.frames, cfg, net ? &*net : nullptr);
  PipelineOutput out;
  out.blood = from_casorati(b, sim.frames.nz(), sim.frames.nx());
  std::string const stem = "blood_" + to_string(cfg.method);
  write_dataset(out.blood, sim.meta, dir / (stem + ".umi"));
  Evaluation const ev = evaluate(b, sim.frames.nz(), sim.frames.nx(), cfg.ensemble, sim.truth, sim.meta);
  out.report = dump_report(report(cfg, "evaluate", evaluation_json(ev, to_string(cfg.method))));
  detail::write_file(dir / ("report_" + stem + ".json"), out.report);
  render_images(ev, dir, stem, cfg.evaluate.dynamic_range_db, config_hash(cfg));
  return out;
}

} // namespace umi
