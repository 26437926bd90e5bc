#pragma once

// Run configuration. One field table (visit_config) drives JSON parsing,
// JSON output and the published JSON schema, so the three cannot drift.

#include "irls_rpca.hpp"
#include "phantom_sim.hpp"
#include "unfolded_net.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace umi {

enum class Method { svd, irls, unfolded };

inline std::string to_string(Method m)
{
  switch (m) {
  case Method::svd: return "svd";
  case Method::irls: return "irls";
  case Method::unfolded: return "unfolded";
  }
  return "?";
}

inline Method parse_method(std::string const &s)
{
  if (s == "svd") { return Method::svd; }
  if (s == "irls") { return Method::irls; }
  if (s == "unfolded") { return Method::unfolded; }
  throw Error(ErrorCode::config, "unknown method '" + s + "' (expected svd, irls or unfolded)");
}

struct SimulationSettings {
  Index train_frames = 1200;
  Index test_frames = 400;
  double noise_snr_db = 25.0; // +inf (JSON null) disables noise
};

struct SvdSettings {
  Index low_cut = 0;  // 0: estimate from the singular value curve
  Index high_cut = 0; // 0: keep up to the last component
  double auto_fraction = 0.01;
};

struct UnfoldedSettings {
  Index layers = 10;
  Index d = 10;
  double lambda_b_init = 6.0;
  double lambda_c_init = 0.01; // W_{c,k} starts at 2 lambda_c_init W_c(U0, V0)
};

struct EvaluateSettings {
  double guard_mm = 0.5;         // tissue ROI keeps this clearance from every vessel wall
  double dynamic_range_db = 40.0; // PGM renders
};

struct PathSettings {
  std::string model;     // trained network for infer; default <output>/model.u2m
  std::string truth_dir; // ground-truth CSVs for evaluate; default: directory of --input
};

struct RunConfig {
  Method method = Method::irls;
  std::uint64_t seed = 1;
  Index ensemble = 200;
  PhantomConfig phantom;
  ImagingConfig imaging;
  SimulationSettings simulation;
  SvdSettings svd;
  IrlsConfig irls;
  UnfoldedSettings unfolded;
  TrainConfig train;
  EvaluateSettings evaluate;
  PathSettings paths;

  void validate() const
  {
    require(ensemble >= 2, ErrorCode::config, "ensemble must be at least 2 frames");
    require(simulation.train_frames >= 0 && simulation.test_frames >= 0, ErrorCode::config,
            "frame counts must be non-negative");
    require(svd.low_cut >= 0 && svd.high_cut >= 0, ErrorCode::config, "SVD cutoffs must be non-negative");
    require(svd.auto_fraction > 0.0 && svd.auto_fraction < 1.0, ErrorCode::config, "svd.auto_fraction must lie in (0, 1)");
    require(unfolded.layers >= 1 && unfolded.d >= 1, ErrorCode::config, "unfolded.layers and unfolded.d must be positive");
    require(unfolded.lambda_b_init >= 0.0 && unfolded.lambda_c_init > 0.0, ErrorCode::config,
            "unfolded penalty initializers must be positive");
    require(evaluate.guard_mm >= 0.0 && evaluate.dynamic_range_db > 0.0, ErrorCode::config,
            "evaluate settings must be positive");
    require(imaging.frame_rate > 0.0 && imaging.center_frequency > 0.0 && imaging.sound_speed > 0.0 &&
              imaging.prf > 0.0,
            ErrorCode::config, "imaging rates and speeds must be positive");
    train.validate();
  }
};

namespace detail {

using nlohmann::json;

// Reads fields from a JSON object, rejecting unknown keys and wrong types.
class ConfigReader {
public:
  ConfigReader(json const &j, std::string path)
    : j_{j}
    , path_{std::move(path)}
  {
    require(j.is_object(), ErrorCode::config, where() + " must be an object");
  }

  void field(char const *key, double &out, char const * = "")
  {
    if (auto const *v = find(key)) {
      require(v->is_number(), ErrorCode::config, where(key) + " must be a number");
      out = v->get<double>();
    }
  }
  void field_inf(char const *key, double &out, char const * = "")
  {
    if (auto const *v = find(key)) {
      if (v->is_null()) {
        out = std::numeric_limits<double>::infinity();
        return;
      }
      require(v->is_number(), ErrorCode::config, where(key) + " must be a number or null");
      out = v->get<double>();
    }
  }
  void field(char const *key, Index &out, char const * = "")
  {
    if (auto const *v = find(key)) {
      require(v->is_number_integer(), ErrorCode::config, where(key) + " must be an integer");
      out = v->get<Index>();
    }
  }
  void field(char const *key, int &out, char const * = "")
  {
    Index tmp = out;
    field(key, tmp);
    out = static_cast<int>(tmp);
  }
  void field(char const *key, std::uint64_t &out, char const * = "")
  {
    if (auto const *v = find(key)) {
      require(v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0), ErrorCode::config,
              where(key) + " must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void field(char const *key, bool &out, char const * = "")
  {
    if (auto const *v = find(key)) {
      require(v->is_boolean(), ErrorCode::config, where(key) + " must be a boolean");
      out = v->get<bool>();
    }
  }
  void field(char const *key, std::string &out, char const * = "")
  {
    if (auto const *v = find(key)) {
      require(v->is_string(), ErrorCode::config, where(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  void choice(char const *key, std::string &out, std::vector<std::string> const &options)
  {
    field(key, out);
    for (auto const &o : options) {
      if (o == out) { return; }
    }
    throw Error(ErrorCode::config, where(key) + " has unsupported value '" + out + "'");
  }
  void object(char const *key, std::function<void(ConfigReader &)> const &body)
  {
    if (auto const *v = find(key)) {
      ConfigReader sub(*v, where(key));
      body(sub);
      sub.finish();
    }
  }

  void finish() const
  {
    for (auto const &item : j_.items()) {
      require(seen_.count(item.key()) > 0, ErrorCode::config, "unknown key " + where(item.key().c_str()));
    }
  }

private:
  json const *find(char const *key)
  {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where(char const *key = nullptr) const
  {
    std::string p = path_.empty() ? "config" : path_;
    return key ? p + "." + key : p;
  }

  json const &j_;
  std::string path_;
  std::set<std::string> seen_;
};

class ConfigWriter {
public:
  void field(char const *key, double const &v, char const * = "") { j_[key] = v; }
  void field_inf(char const *key, double const &v, char const * = "")
  {
    j_[key] = std::isfinite(v) ? json(v) : json(nullptr);
  }
  void field(char const *key, Index const &v, char const * = "") { j_[key] = v; }
  void field(char const *key, int const &v, char const * = "") { j_[key] = v; }
  void field(char const *key, std::uint64_t const &v, char const * = "") { j_[key] = v; }
  void field(char const *key, bool const &v, char const * = "") { j_[key] = v; }
  void field(char const *key, std::string const &v, char const * = "") { j_[key] = v; }
  void choice(char const *key, std::string const &v, std::vector<std::string> const &) { j_[key] = v; }
  void object(char const *key, std::function<void(ConfigWriter &)> const &body)
  {
    ConfigWriter sub;
    body(sub);
    j_[key] = sub.j_;
  }
  json const &result() const { return j_; }

private:
  json j_ = json::object();
};

// Emits a JSON Schema (draft 2020-12) describing the accepted document.
class SchemaWriter {
public:
  void field(char const *key, double const &, char const *doc = "") { add(key, {{"type", "number"}}, doc); }
  void field_inf(char const *key, double const &, char const *doc = "")
  {
    add(key, {{"type", json::array({"number", "null"})}}, doc);
  }
  void field(char const *key, Index const &, char const *doc = "") { add(key, {{"type", "integer"}}, doc); }
  void field(char const *key, int const &, char const *doc = "") { add(key, {{"type", "integer"}}, doc); }
  void field(char const *key, std::uint64_t const &, char const *doc = "")
  {
    add(key, {{"type", "integer"}, {"minimum", 0}}, doc);
  }
  void field(char const *key, bool const &, char const *doc = "") { add(key, {{"type", "boolean"}}, doc); }
  void field(char const *key, std::string const &, char const *doc = "") { add(key, {{"type", "string"}}, doc); }
  void choice(char const *key, std::string const &, std::vector<std::string> const &options)
  {
    add(key, {{"enum", options}}, "");
  }
  void object(char const *key, std::function<void(SchemaWriter &)> const &body)
  {
    SchemaWriter sub;
    body(sub);
    props_[key] = sub.node();
  }
  json node() const { return {{"type", "object"}, {"additionalProperties", false}, {"properties", props_}}; }

private:
  void add(char const *key, json node, char const *doc)
  {
    if (doc && *doc) { node["description"] = doc; }
    props_[key] = std::move(node);
  }
  json props_ = json::object();
};

// Enum fields travel as strings through the visitors.
struct EnumProxies {
  std::string method;
  std::string grad_mode;
};

template <typename Visitor, typename Config>
void visit_config(Visitor &v, Config &c, EnumProxies &e)
{
  v.choice("method", e.method, {"svd", "irls", "unfolded"});
  v.field("seed", c.seed, "master seed; every random stream derives from it");
  v.field("ensemble", c.ensemble, "frames per power Doppler image");
  v.object("phantom", [&](Visitor &p) {
    auto &f = c.phantom;
    p.field("n_units", f.n_units);
    p.field("slots", f.slots, "radial positions available to flow units");
    p.field("tissue_radius_mm", f.tissue_radius_mm);
    p.field("oval_factor", f.oval_factor, "axial squash of the tissue cylinder");
    p.field("max_rotation_deg", f.max_rotation_deg);
    p.field("unit_offset_mm", f.unit_offset_mm, "distance of each unit root from the phantom centre");
    p.field("centre_depth_mm", f.centre_depth_mm);
    p.field("density_per_mm3", f.density_per_mm3);
    p.field("amplitude_ratio", f.amplitude_ratio, "mean tissue / blood scatterer amplitude");
    p.field("max_strain", f.max_strain);
    p.field("motion_period_s", f.motion_period_s);
    p.field("lateral_ratio", f.lateral_ratio, "lateral / axial strain magnitude");
    p.field("tissue_motion", f.tissue_motion);
    p.field("v_target_min", f.v_target_min, "mm/s, root-edge peak velocity range");
    p.field("v_target_max", f.v_target_max);
    p.field("viscosity", f.mu, "Pa s");
    p.field("radius_ratio", f.ranges.radius_ratio, "child / parent vessel radius");
    p.field("crop_to_units", f.crop_to_units);
    p.field("margin_mm", f.margin_mm);
    p.field("dz_mm", f.dz_mm);
    p.field("dx_mm", f.dx_mm);
    p.field("elevation_mm", f.elevation_mm, "slab thickness; <= 0 spans the widest root vessel");
  });
  v.object("imaging", [&](Visitor &p) {
    auto &m = c.imaging;
    p.field("center_frequency", m.center_frequency, "Hz");
    p.field("sound_speed", m.sound_speed, "m/s");
    p.field("frame_rate", m.frame_rate, "Hz, slow-time rate used by the velocity estimator");
    p.field("prf", m.prf, "Hz");
    p.field("axial_fwhm_wavelengths", m.axial_fwhm_wavelengths);
    p.field("lateral_fwhm_wavelengths", m.lateral_fwhm_wavelengths);
    p.field("psf_cutoff_sigmas", m.psf_cutoff_sigmas);
  });
  v.object("simulation", [&](Visitor &p) {
    p.field("train_frames", c.simulation.train_frames, "leading frames reserved for training");
    p.field("test_frames", c.simulation.test_frames);
    p.field_inf("noise_snr_db", c.simulation.noise_snr_db, "null disables noise");
  });
  v.object("svd", [&](Visitor &p) {
    p.field("low_cut", c.svd.low_cut, "0 selects the cutoff from the singular value curve");
    p.field("high_cut", c.svd.high_cut, "0 keeps every remaining component");
    p.field("auto_fraction", c.svd.auto_fraction);
  });
  v.object("irls", [&](Visitor &p) {
    p.field("d", c.irls.d);
    p.field("lambda_c", c.irls.lambda_c);
    p.field("lambda_b", c.irls.lambda_b);
    p.field("epsilon", c.irls.epsilon);
    p.field("rho", c.irls.rho);
    p.field("max_iter", c.irls.max_iter);
    p.field("tol", c.irls.tol);
    p.field("normalize", c.irls.normalize, "scale each ensemble by 1/max|D| before solving");
  });
  v.object("unfolded", [&](Visitor &p) {
    p.field("layers", c.unfolded.layers);
    p.field("d", c.unfolded.d);
    p.field("lambda_b_init", c.unfolded.lambda_b_init);
    p.field("lambda_c_init", c.unfolded.lambda_c_init);
  });
  v.object("train", [&](Visitor &p) {
    auto &t = c.train;
    p.field("learning_rate", t.learning_rate, "Adam step for the lambda_b parameters");
    p.field("learning_rate_weights", t.learning_rate_weights, "Adam step for the W_c parameters");
    p.field("batch_frames", t.batch_frames);
    p.field("max_epochs", t.max_epochs);
    p.field("patience", t.patience);
    p.field("validation_fraction", t.validation_fraction, "trailing share of the training frames");
    p.choice("grad_mode", e.grad_mode, {"analytic", "finite_difference"});
    p.field("adam_beta1", t.adam.beta1);
    p.field("adam_beta2", t.adam.beta2);
    p.field("adam_epsilon", t.adam.epsilon);
  });
  v.object("evaluate", [&](Visitor &p) {
    p.field("guard_mm", c.evaluate.guard_mm);
    p.field("dynamic_range_db", c.evaluate.dynamic_range_db);
  });
  v.object("paths", [&](Visitor &p) {
    p.field("model", c.paths.model);
    p.field("truth_dir", c.paths.truth_dir);
  });
}

inline std::string grad_mode_name(GradMode g) { return g == GradMode::analytic ? "analytic" : "finite_difference"; }

} // namespace detail

inline RunConfig parse_config(nlohmann::json const &j)
{
  RunConfig c;
  detail::EnumProxies e{to_string(c.method), detail::grad_mode_name(c.train.grad_mode)};
  detail::ConfigReader r(j, "");
  detail::visit_config(r, c, e);
  r.finish();
  c.method = parse_method(e.method);
  c.train.grad_mode = e.grad_mode == "analytic" ? GradMode::analytic : GradMode::finite_difference;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

inline RunConfig parse_config_text(std::string const &text)
{
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (nlohmann::json::parse_error const &ex) {
    throw Error(ErrorCode::config, std::string("config is not valid JSON: ") + ex.what());
  }
  return parse_config(j);
}

inline RunConfig load_config(std::filesystem::path const &path)
{
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline nlohmann::json to_json(RunConfig const &cfg)
{
  RunConfig c = cfg;
  detail::EnumProxies e{to_string(c.method), detail::grad_mode_name(c.train.grad_mode)};
  detail::ConfigWriter w;
  detail::visit_config(w, c, e);
  return w.result();
}

inline nlohmann::json config_schema()
{
  RunConfig c;
  detail::EnumProxies e{to_string(c.method), detail::grad_mode_name(c.train.grad_mode)};
  detail::SchemaWriter w;
  detail::visit_config(w, c, e);
  nlohmann::json s = w.node();
  s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s["title"] = "umi run configuration";
  return s;
}

/// FNV-1a 64 over the canonical (sorted-key) JSON form of the full configuration.
inline std::uint64_t config_hash(RunConfig const &cfg)
{
  std::string const text = to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h)
{
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace umi
