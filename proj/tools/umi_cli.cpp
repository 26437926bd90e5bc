#include "umi/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace umi;

namespace {

struct Options {
  std::string config;
  std::string input;
  std::string output = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
};

RunConfig resolve_config(Options const &o)
{
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  nlohmann::json j = to_json(cfg);
  if (o.seed) { j["seed"] = *o.seed; }
  if (o.method) { j["method"] = *o.method; }
  return parse_config(j);
}

void log(std::string const &msg) { std::cerr << "umi: " << msg << "\n"; }

fs::path require_input(Options const &o)
{
  require(!o.input.empty(), ErrorCode::config, "--input is required for this command");
  return o.input;
}

void write_report(fs::path const &path, nlohmann::json const &r)
{
  detail::write_file(path, dump_report(r));
  log("wrote " + path.string());
}

void cmd_simulate(RunConfig const &cfg, Options const &o)
{
  fs::path const dir = o.output;
  Simulation const sim = simulate(cfg);
  write_dataset(sim.frames, sim.meta, dir / "dataset.umi");
  write_truth(sim.truth, dir);
  write_report(dir / "simulate.json", report(cfg, "simulate",
                                             {{"frames", sim.frames.nt()},
                                              {"flow_pixels", sim.truth.flow_mask.count()},
                                              {"tissue_pixels", sim.truth.tissue_mask.count()},
                                              {"scene", scene_summary(sim.scene)}}));
}

std::string blood_stem(Method m) { return "blood_" + to_string(m); }

void write_blood(RunConfig const &cfg, Dataset const &ds, ComplexMatrix const &b, fs::path const &path)
{
  DatasetMeta meta = ds.meta;
  meta.config_hash = config_hash(cfg);
  write_dataset(from_casorati(b, ds.frames.nz(), ds.frames.nx()), meta, path);
  log("wrote " + path.string());
}

UnfoldedNetwork load_network(RunConfig const &cfg, Options const &o)
{
  fs::path const path = cfg.paths.model.empty() ? fs::path(o.output) / "model.u2m" : fs::path(cfg.paths.model);
  return read_model(path).network;
}

void cmd_filter(RunConfig const &cfg, Options const &o, Stage stage)
{
  Dataset const ds = read_dataset(require_input(o));
  Method const method = stage == Stage::infer ? Method::unfolded : cfg.method;
  std::optional<UnfoldedNetwork> net;
  if (method == Method::unfolded) { net = load_network(cfg, o); }
  ComplexMatrix const b = filter_frames(method, ds.frames, cfg, net ? &*net : nullptr);
  write_blood(cfg, ds, b, fs::path(o.output) / (blood_stem(method) + ".umi"));
}

void cmd_train(RunConfig const &cfg, Options const &o)
{
  Dataset const ds = read_dataset(require_input(o));
  Training const t = train_model(cfg, ds.frames);
  fs::path const dir = o.output;
  write_model(t.result.network, dir / "model.u2m", config_hash(cfg));
  log("wrote " + (dir / "model.u2m").string());
  write_report(dir / "train.json", report(cfg, "train", {{"training", training_summary(t)}}));
}

Evaluation evaluate_file(RunConfig const &cfg, Options const &o)
{
  fs::path const input = require_input(o);
  Dataset const ds = read_dataset(input);
  fs::path const truth_dir = cfg.paths.truth_dir.empty() ? input.parent_path() : fs::path(cfg.paths.truth_dir);
  GroundTruth const gt = read_truth(truth_dir.empty() ? fs::path(".") : truth_dir);
  return evaluate(to_casorati(ds.frames), ds.frames.nz(), ds.frames.nx(), cfg.ensemble, gt, ds.meta);
}

void cmd_evaluate(RunConfig const &cfg, Options const &o)
{
  std::string const stem = fs::path(o.input).stem().string();
  Evaluation const ev = evaluate_file(cfg, o);
  write_report(fs::path(o.output) / ("report_" + stem + ".json"), report(cfg, "evaluate", evaluation_json(ev, stem)));
  std::printf("cnr_db %.4f snr_db %.4f psl_db %.4f velocity_r2 %.4f velocity_slope %.4f\n", ev.mean.cnr_db,
              ev.mean.snr_db, ev.mean.psl_db, ev.mean.velocity_r2, ev.mean.velocity_slope);
}

void cmd_render(RunConfig const &cfg, Options const &o)
{
  std::string const stem = fs::path(o.input).stem().string();
  Evaluation const ev = evaluate_file(cfg, o);
  render_images(ev, o.output, stem, cfg.evaluate.dynamic_range_db, config_hash(cfg));
  log("wrote " + stem + "_pd.pgm, " + stem + "_pd.csv, " + stem + "_velocity.csv in " + o.output);
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Clutter filtering for ultrasound microvascular imaging"};
  app.require_subcommand(0, 1);
  bool print_schema = false;
  app.add_flag("--print-schema", print_schema, "Print the configuration JSON schema and exit");

  Options opts;
  struct Command {
    char const *name;
    char const *help;
    Stage stage;
  };
  Command const commands[] = {
    {"simulate", "Synthesize a phantom dataset and its ground truth", Stage::simulate},
    {"filter", "Separate blood from clutter with --method svd|irls|unfolded", Stage::filter},
    {"train", "Train the unfolded network on the training frames", Stage::train},
    {"infer", "Apply a trained network to the held-out frames", Stage::infer},
    {"evaluate", "Score filtered frames against the ground truth", Stage::evaluate},
    {"render", "Write power Doppler and velocity images", Stage::render},
  };
  std::vector<std::pair<CLI::App *, Stage>> subs;
  for (auto const &c : commands) {
    CLI::App *sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", opts.config, "JSON configuration file")->check(CLI::ExistingFile);
    sub->add_option("--input", opts.input, "Input dataset");
    sub->add_option("--output", opts.output, "Output directory")->capture_default_str();
    sub->add_option("--seed", opts.seed, "Override the configured seed");
    sub->add_option("--method", opts.method, "Override the configured method")
      ->check(CLI::IsMember({"svd", "irls", "unfolded"}));
    subs.emplace_back(sub, c.stage);
  }

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    int const rc = app.exit(e);
    return rc == 0 ? 0 : exit_code(Stage::config, ErrorCode::config);
  }
  if (print_schema) {
    std::cout << config_schema().dump(2) << "\n";
    return 0;
  }

  Stage stage = Stage::config;
  try {
    RunConfig const cfg = resolve_config(opts);
    for (auto const &[sub, s] : subs) {
      if (!sub->parsed()) { continue; }
      stage = s;
      switch (s) {
      case Stage::simulate: cmd_simulate(cfg, opts); break;
      case Stage::filter:
      case Stage::infer: cmd_filter(cfg, opts, s); break;
      case Stage::train: cmd_train(cfg, opts); break;
      case Stage::evaluate: cmd_evaluate(cfg, opts); break;
      case Stage::render: cmd_render(cfg, opts); break;
      case Stage::config: break;
      }
      return 0;
    }
    std::cerr << app.help();
    return exit_code(Stage::config, ErrorCode::config);
  } catch (Error const &e) {
    std::cerr << "umi " << to_string(stage) << ": " << e.what() << "\n";
    return exit_code(stage, e.code());
  } catch (std::exception const &e) {
    std::cerr << "umi " << to_string(stage) << ": " << e.what() << "\n";
    return exit_code(stage, ErrorCode::io);
  }
}
