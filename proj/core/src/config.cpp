#include "s3rp/config.hpp"

#include <fstream>

#include "s3rp/error.hpp"
#include "s3rp/json_util.hpp"
#include "s3rp/rng.hpp"

namespace s3rp::config {

namespace {

std::string limiter_name(advect::Limiter l) {
  return l == advect::Limiter::van_leer ? "van_leer" : "none";
}

advect::Limiter limiter_from(const std::string& s) {
  if (s == "van_leer") return advect::Limiter::van_leer;
  if (s == "none") return advect::Limiter::none;
  fail(ErrorCode::config, "sim.limiter must be 'van_leer' or 'none', got '" + s + "'");
}

std::string optimizer_name(train::Optimizer o) { return o == train::Optimizer::adam ? "adam" : "sgd"; }

train::Optimizer optimizer_from(const std::string& s) {
  if (s == "adam") return train::Optimizer::adam;
  if (s == "sgd") return train::Optimizer::sgd;
  fail(ErrorCode::config, "train.optimizer must be 'adam' or 'sgd', got '" + s + "'");
}

}  // namespace

void ToolkitConfig::validate() {
  grid.validate();
  model.grid = grid;
  model.validate();
  wind.dt = sim.dt;
  wind.n_steps = sim.n_steps + 1;
  wind.validate();
  require(sim.dt > 0.0, ErrorCode::config, "sim.dt must be > 0");
  require(sim.n_steps >= 1, ErrorCode::config, "sim.n_steps must be >= 1");
  require(sim.k_min >= 0.0 && sim.k_max >= sim.k_min, ErrorCode::config,
          "sim.k_min / k_max must satisfy 0 <= k_min <= k_max");
  require(sim.emission_rate >= 0.0, ErrorCode::config, "sim.emission_rate must be >= 0");
  require(sim.source_sigma_cells > 0.0, ErrorCode::config, "sim.source_sigma_cells must be > 0");
  dataset.validate();
  require(sim.n_steps + 1 >= dataset.spinup + dataset.seq_len, ErrorCode::config,
          "sim.n_steps + 1 must cover dataset.spinup + dataset.seq_len");
  loss.validate();
  train.validate();
  require(train.chunk <= dataset.seq_len, ErrorCode::config,
          "train.chunk must not exceed dataset.seq_len");
  require(eval.members >= 2, ErrorCode::config, "eval.members must be >= 2");
  require(eval.histogram_bins >= 1, ErrorCode::config, "eval.histogram_bins must be >= 1");
  require(eval.horizon >= 0, ErrorCode::config, "eval.horizon must be >= 0");
  // The solver's own checks (CFL, diffusion number) run per simulation.
  sim_config(*this, 0).validate();
}

ToolkitConfig from_json(const nlohmann::json& j) {
  ToolkitConfig c;
  jsonu::Reader top(j, "config");

  if (const auto* s = top.child("grid")) {
    jsonu::Reader r(*s, "grid");
    r.get("n_lr", c.grid.n_lr).get("ratio", c.grid.ratio).get("domain_size", c.grid.domain_size)
        .get("origin", c.grid.origin);
    r.finish();
  }
  if (const auto* s = top.child("wind")) {
    jsonu::Reader r(*s, "wind");
    r.get("n_modes", c.wind.n_modes).get("energy_slope", c.wind.energy_slope)
        .get("tau_scaling", c.wind.tau_scaling).get("tau0", c.wind.tau0)
        .get("amplitude", c.wind.amplitude).get("courant_target", c.wind.courant_target)
        .get("modes", c.wind.modes);
    r.finish();
  }
  if (const auto* s = top.child("sim")) {
    jsonu::Reader r(*s, "sim");
    std::string limiter = limiter_name(c.sim.limiter);
    r.get("dt", c.sim.dt).get("n_steps", c.sim.n_steps).get("k_min", c.sim.k_min)
        .get("k_max", c.sim.k_max).get("emission_rate", c.sim.emission_rate)
        .get("source_sigma_cells", c.sim.source_sigma_cells).get("limiter", limiter)
        .get("sources", c.sim.sources).get("seed", c.sim.seed);
    c.sim.limiter = limiter_from(limiter);
    r.finish();
  }
  if (const auto* s = top.child("dataset")) {
    jsonu::Reader r(*s, "dataset");
    r.get("sims", c.dataset.sims).get("sequences_per_sim", c.dataset.sequences_per_sim)
        .get("seq_len", c.dataset.seq_len).get("spinup", c.dataset.spinup)
        .get("holdout_sims", c.dataset.holdout_sims).get("store_train_hr", c.dataset.store_train_hr)
        .get("seed", c.dataset.seed);
    r.finish();
  }
  if (const auto* s = top.child("model")) {
    nlohmann::json m = *s;
    require(!m.contains("grid"), ErrorCode::config, "model: unknown key 'grid' (use the grid section)");
    c.model = model::model_config_from_json(m);
  }
  if (const auto* s = top.child("loss")) {
    jsonu::Reader r(*s, "loss");
    r.get("lambda", c.loss.lambda).get("beta", c.loss.beta).get("gamma", c.loss.gamma)
        .get("mmd_scale", c.loss.mmd_scale).get("prior_variance", c.loss.prior_variance);
    r.finish();
  }
  if (const auto* s = top.child("train")) {
    jsonu::Reader r(*s, "train");
    std::string opt = optimizer_name(c.train.optimizer);
    r.get("batch", c.train.batch).get("chunk", c.train.chunk).get("lr", c.train.lr)
        .get("optimizer", opt).get("beta1", c.train.beta1).get("beta2", c.train.beta2)
        .get("eps", c.train.eps).get("max_steps", c.train.max_steps)
        .get("checkpoint_interval", c.train.checkpoint_interval)
        .get("clip_norm", c.train.clip_norm).get("seed", c.train.seed);
    c.train.optimizer = optimizer_from(opt);
    r.finish();
  }
  if (const auto* s = top.child("eval")) {
    jsonu::Reader r(*s, "eval");
    r.get("members", c.eval.members).get("seed", c.eval.seed)
        .get("max_sequences", c.eval.max_sequences).get("keep_samples", c.eval.keep_samples)
        .get("histogram_bins", c.eval.histogram_bins).get("horizon", c.eval.horizon);
    r.finish();
  }
  top.finish();
  c.model.grid = c.grid;
  c.validate();
  return c;
}

nlohmann::json to_json(const ToolkitConfig& c) {
  nlohmann::json model = model::to_json(c.model);
  model.erase("grid");
  return {
      {"grid",
       {{"n_lr", c.grid.n_lr},
        {"ratio", c.grid.ratio},
        {"domain_size", c.grid.domain_size},
        {"origin", c.grid.origin}}},
      {"wind",
       {{"n_modes", c.wind.n_modes},
        {"energy_slope", c.wind.energy_slope},
        {"tau_scaling", c.wind.tau_scaling},
        {"tau0", c.wind.tau0},
        {"amplitude", c.wind.amplitude},
        {"courant_target", c.wind.courant_target},
        {"modes", c.wind.modes}}},
      {"sim",
       {{"dt", c.sim.dt},
        {"n_steps", c.sim.n_steps},
        {"k_min", c.sim.k_min},
        {"k_max", c.sim.k_max},
        {"emission_rate", c.sim.emission_rate},
        {"source_sigma_cells", c.sim.source_sigma_cells},
        {"limiter", limiter_name(c.sim.limiter)},
        {"sources", c.sim.sources},
        {"seed", c.sim.seed}}},
      {"dataset",
       {{"sims", c.dataset.sims},
        {"sequences_per_sim", c.dataset.sequences_per_sim},
        {"seq_len", c.dataset.seq_len},
        {"spinup", c.dataset.spinup},
        {"holdout_sims", c.dataset.holdout_sims},
        {"store_train_hr", c.dataset.store_train_hr},
        {"seed", c.dataset.seed}}},
      {"model", model},
      {"loss",
       {{"lambda", c.loss.lambda},
        {"beta", c.loss.beta},
        {"gamma", c.loss.gamma},
        {"mmd_scale", c.loss.mmd_scale},
        {"prior_variance", c.loss.prior_variance}}},
      {"train",
       {{"batch", c.train.batch},
        {"chunk", c.train.chunk},
        {"lr", c.train.lr},
        {"optimizer", optimizer_name(c.train.optimizer)},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"eps", c.train.eps},
        {"max_steps", c.train.max_steps},
        {"checkpoint_interval", c.train.checkpoint_interval},
        {"clip_norm", c.train.clip_norm},
        {"seed", c.train.seed}}},
      {"eval",
       {{"members", c.eval.members},
        {"seed", c.eval.seed},
        {"max_sequences", c.eval.max_sequences},
        {"keep_samples", c.eval.keep_samples},
        {"histogram_bins", c.eval.histogram_bins},
        {"horizon", c.eval.horizon}}},
  };
}

ToolkitConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config, path.string() + ": " + e.what());
  }
  return from_json(j);
}

advect::SimConfig sim_config(const ToolkitConfig& c, int index) {
  NoiseSource rng = NoiseSource::derive(c.sim.seed, static_cast<std::uint64_t>(index));
  advect::SimConfig s;
  s.grid = c.grid;
  s.wind = c.wind;
  s.wind.dt = c.sim.dt;
  s.wind.n_steps = c.sim.n_steps + 1;
  s.wind.seed = rng.next_u64();
  s.k_diag.kx = c.sim.k_min + (c.sim.k_max - c.sim.k_min) * rng.uniform();
  s.k_diag.ky = c.sim.k_min + (c.sim.k_max - c.sim.k_min) * rng.uniform();
  s.source_locations = c.sim.sources;
  s.emission_rate = c.sim.emission_rate;
  s.source_sigma_cells = c.sim.source_sigma_cells;
  s.dt = c.sim.dt;
  s.n_steps = c.sim.n_steps;
  s.seed = s.wind.seed;
  s.limiter = c.sim.limiter;
  return s;
}

data::Dataset generate_dataset(const ToolkitConfig& c, int jobs) {
  data::Dataset ds;
  for (int s = 0; s < c.dataset.sims; ++s) {
    const advect::SimConfig sc = sim_config(c, s);
    sc.validate();
    const auto wind = windgen::generate_wind(sc.wind, sc.grid);
    const auto record = advect::simulate_sources(sc, wind, jobs);
    data::append_record(ds, record, s, c.dataset);
  }
  ds.norm = data::compute_normalization(ds);
  return ds;
}

}  // namespace s3rp::config
