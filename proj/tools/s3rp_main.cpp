// s3rp: data generation, training, evaluation and forecasting.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "s3rp/config.hpp"
#include "s3rp/container.hpp"
#include "s3rp/data.hpp"
#include "s3rp/error.hpp"
#include "s3rp/eval.hpp"
#include "s3rp/model.hpp"
#include "s3rp/train.hpp"

namespace fs = std::filesystem;
using namespace s3rp;

namespace {

constexpr std::uint32_t kEnsembleVersion = 1;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool dry_run = false;
};

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::config:
    case ErrorCode::model:
      return 2;
    case ErrorCode::data:
    case ErrorCode::io:
    case ErrorCode::corrupt:
    case ErrorCode::version:
    case ErrorCode::evaluation:
      return 3;
    case ErrorCode::numeric:
    case ErrorCode::stability:
      return 4;
  }
  return 1;
}

void setup_logging() {
  const char* env = std::getenv("S3RP_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::set_level(spdlog::level::info);
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
}

config::ToolkitConfig load_config(const Common& c) {
  return c.config_path.empty() ? config::ToolkitConfig{} : config::load(c.config_path);
}

void print_config(const config::ToolkitConfig& cfg) {
  std::cout << config::to_json(cfg).dump(2) << "\n";
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out << j.dump(2) << "\n";
  require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string out;
  std::optional<int> sims, steps;
};

int cmd_gen_data(const Common& c, const GenArgs& a) {
  auto cfg = load_config(c);
  if (a.sims) {
    cfg.dataset.sims = *a.sims;
    cfg.dataset.holdout_sims = std::min(cfg.dataset.holdout_sims, std::max(0, *a.sims - 1));
  }
  if (a.steps) {
    cfg.dataset.seq_len = *a.steps;
    cfg.sim.n_steps = cfg.dataset.spinup + *a.steps - 1;
    cfg.train.chunk = std::min(cfg.train.chunk, *a.steps);
  }
  if (c.seed) cfg.sim.seed = cfg.dataset.seed = *c.seed;
  cfg.validate();
  if (c.dry_run) {
    print_config(cfg);
    return 0;
  }
  require(!a.out.empty(), ErrorCode::config, "gen-data needs --out");

  spdlog::info("simulating {} runs on {}^2 HR / {}^2 LR", cfg.dataset.sims, cfg.grid.n_hr(),
               cfg.grid.n_lr);
  const data::Dataset ds = config::generate_dataset(cfg, c.jobs);
  data::save_dataset(ds, a.out);

  const int holdout = static_cast<int>(ds.holdout().size());
  std::cout << "sims: " << ds.sims.size() << "\n"
            << "sequences: " << ds.samples.size() << " (" << ds.samples.size() - holdout
            << " train, " << holdout << " holdout)\n"
            << "LR: [" << cfg.dataset.seq_len << "," << cfg.grid.n_lr << "," << cfg.grid.n_lr
            << ",3]\n"
            << "HR: [" << cfg.dataset.seq_len << "," << cfg.grid.n_hr() << "," << cfg.grid.n_hr()
            << ",3]\n"
            << "written: " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, out = "run", mode, resume;
  std::optional<std::int64_t> max_steps;
};

int cmd_train(const Common& c, const TrainArgs& a) {
  auto cfg = load_config(c);
  if (!a.mode.empty()) cfg.model.mode = model::mode_from_string(a.mode);
  if (c.seed) cfg.train.seed = *c.seed;
  if (a.max_steps) cfg.train.max_steps = *a.max_steps;
  cfg.validate();
  if (c.dry_run) {
    print_config(cfg);
    return 0;
  }
  require(!a.data.empty(), ErrorCode::config, "train needs --data");

  const data::Dataset ds = data::load_dataset(a.data);
  const data::LrTrainingSet view = ds.training_view();
  require(view.grid == cfg.grid, ErrorCode::config,
          "dataset grid differs from the configured grid section");
  ensure_dir(a.out);
  write_json(config::to_json(cfg), fs::path(a.out) / "config.json");

  const std::int64_t every = std::max<std::int64_t>(1, cfg.train.max_steps / 50);
  train::TrainCallbacks cb;
  cb.on_step = [every](std::int64_t step, const objective::LossBreakdown& b) {
    if (step % every == 0)
      spdlog::info("step {:>6}  total {:.5g}  recon {:.5g}  mmd {:.4g}  adv {:.4g}  div {:.4g}",
                   step, b.total, b.recon, b.mmd, b.phys_adv, b.phys_div);
  };

  model::Checkpoint ck;
  if (!a.resume.empty()) {
    auto start = model::load_checkpoint(a.resume);
    require(a.mode.empty() || start.model.mode == cfg.model.mode, ErrorCode::config,
            "--mode differs from the checkpoint's mode (" + model::to_string(start.model.mode) + ")");
    spdlog::info("resuming from step {}", start.step);
    ck = train::resume(start, cfg.train, cfg.loss, view, a.out, cb);
  } else {
    spdlog::info("training {} model for {} steps on {} sequences",
                 model::to_string(cfg.model.mode), cfg.train.max_steps, view.sequences.size());
    ck = train::train(cfg.model, cfg.train, cfg.loss, view, a.out, cb);
  }
  std::cout << "final checkpoint: " << (fs::path(a.out) / "final.s3ck").string() << " (step "
            << ck.step << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, out = "eval", coord;
  std::optional<int> members, max_sequences;
  bool histogram = false;
};

std::pair<int, int> parse_coord(const std::string& s) {
  const auto comma = s.find(',');
  require(comma != std::string::npos, ErrorCode::config, "--coord expects I,J");
  try {
    return {std::stoi(s.substr(0, comma)), std::stoi(s.substr(comma + 1))};
  } catch (const std::exception&) {
    fail(ErrorCode::config, "--coord expects two integers, got '" + s + "'");
  }
}

int cmd_eval(const Common& c, const EvalArgs& a) {
  auto cfg = load_config(c);
  if (a.members) cfg.eval.members = *a.members;
  if (a.max_sequences) cfg.eval.max_sequences = *a.max_sequences;
  if (c.seed) cfg.eval.seed = *c.seed;
  cfg.validate();
  std::optional<std::pair<int, int>> coord;
  if (!a.coord.empty()) coord = parse_coord(a.coord);
  if (c.dry_run) {
    print_config(cfg);
    return 0;
  }
  require(!a.checkpoint.empty() && !a.data.empty(), ErrorCode::config,
          "eval needs --checkpoint and --data");

  const auto m = model::model_from_checkpoint(model::load_checkpoint(a.checkpoint));
  const data::Dataset ds = data::load_dataset(a.data);
  if (coord)
    require(coord->first >= 0 && coord->first < ds.grid.n_hr() && coord->second >= 0 &&
                coord->second < ds.grid.n_hr(),
            ErrorCode::config, "--coord is outside the HR grid");
  ensure_dir(a.out);

  eval::EvalOptions opts;
  opts.mc.members = cfg.eval.members;
  opts.mc.seed = cfg.eval.seed;
  opts.mc.jobs = c.jobs;
  opts.mc.keep_samples = cfg.eval.keep_samples;
  opts.max_sequences = cfg.eval.max_sequences;

  std::vector<double> abs_err, sd;
  bool traced = false;
  int seen = 0;
  auto on_ensemble = [&](const data::Sample& s, const eval::McEnsemble& ens) {
    spdlog::info("evaluated holdout sequence {} (sim {}, start {})", ++seen, s.sim, s.start);
    if (coord && !traced) {
      eval::write_trace_csv(eval::coordinate_trace(ens, *s.hr, coord->first, coord->second),
                            fs::path(a.out) / "trace.csv");
      traced = true;
    }
    if (a.histogram) {
      const auto& y = s.hr->data();
      for (std::size_t k = FieldSequence::kC; k < y.size(); k += 3) {
        abs_err.push_back(std::abs(y[k] - ens.mean.data()[k]));
        sd.push_back(ens.std.data()[k]);
      }
    }
  };
  const eval::EvalReport rep = eval::evaluate(*m, ds, opts, on_ensemble);
  write_json(rep.to_json(), fs::path(a.out) / "report.json");
  if (a.histogram) {
    const auto h = eval::error_std_histogram(abs_err, sd, cfg.eval.histogram_bins);
    eval::write_histogram_csv(h, fs::path(a.out) / "histogram.csv");
    spdlog::info("error/std rank correlation {:.4f}", h.rank_correlation);
  }
  std::cout << rep.to_json().dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ForecastArgs {
  std::string checkpoint, input, out = "forecast.s3en";
  std::optional<int> horizon, members, sample, observe;
};

int cmd_forecast(const Common& c, const ForecastArgs& a) {
  auto cfg = load_config(c);
  if (a.horizon) cfg.eval.horizon = *a.horizon;
  if (a.members) cfg.eval.members = *a.members;
  if (c.seed) cfg.eval.seed = *c.seed;
  cfg.validate();
  if (c.dry_run) {
    print_config(cfg);
    return 0;
  }
  require(!a.checkpoint.empty() && !a.input.empty(), ErrorCode::config,
          "forecast needs --checkpoint and --input");

  const auto m = model::model_from_checkpoint(model::load_checkpoint(a.checkpoint));
  const data::Dataset ds = data::load_dataset(a.input);
  require(!ds.samples.empty(), ErrorCode::data, "input holds no sequences");
  int index = 0;
  if (a.sample) {
    index = *a.sample;
  } else {
    for (int k = 0; k < static_cast<int>(ds.samples.size()); ++k)
      if (ds.samples[k].holdout) {
        index = k;
        break;
      }
  }
  require(index >= 0 && index < static_cast<int>(ds.samples.size()), ErrorCode::config,
          "--sample out of range");
  const FieldSequence& lr = ds.samples[index].lr;
  const int H = cfg.eval.horizon;
  const bool c_only = m->config().mode == model::Mode::c_only;
  const int observed = a.observe ? *a.observe : (c_only ? lr.frames() - H : lr.frames());
  require(observed >= 1 && observed <= lr.frames(), ErrorCode::config,
          "--observe must lie in [1, " + std::to_string(lr.frames()) + "]");
  const int total = observed + H;
  if (c_only)
    require(total <= lr.frames(), ErrorCode::config,
            "c_only forecasts need LR wind for every step: observe + horizon <= " +
                std::to_string(lr.frames()));
  const FieldSequence x = lr.slice(0, c_only ? total : observed);

  const int n = m->config().grid.n_hr(), M = cfg.eval.members;
  nlohmann::json meta = {{"mode", model::to_string(m->config().mode)},
                         {"observed", observed},
                         {"horizon", H},
                         {"members", M},
                         {"sample", index},
                         {"seed", cfg.eval.seed}};
  const std::vector<std::int64_t> frame_shape{total, n, n, 3};
  std::vector<container::Array> specs{
      {"samples", container::DType::f32, {M, total, n, n, 3}, {}},
      {"mean", container::DType::f32, frame_shape, {}},
      {"std", container::DType::f32, frame_shape, {}}};
  container::StreamWriter writer(a.out, {'S', '3', 'E', 'N'}, kEnsembleVersion, meta, specs);

  eval::McOptions opts;
  opts.members = M;
  opts.seed = cfg.eval.seed;
  opts.jobs = c.jobs;
  opts.horizon = total;
  opts.observed = observed;
  opts.on_member = [&](int k, const FieldSequence& s) {
    spdlog::debug("member {}", k);
    writer.append(s.data());
  };
  spdlog::info("forecasting {} members: {} observed + {} frames", M, observed, H);
  const eval::McEnsemble ens = eval::mc_predict(*m, x, opts);
  writer.append(ens.mean.data());
  writer.append(ens.std.data());
  writer.close();
  std::cout << "ensemble [" << M << "," << total << "," << n << "," << n << ",3] written to "
            << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"s3rp: self-supervised super-resolution and forecasting of transport fields"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Override the relevant seed");
    sub->add_option("--jobs", common.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--dry-run", common.dry_run, "Print the resolved config and exit");
  };

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Simulate and write a dataset");
  add_common(g);
  g->add_option("--out", gen.out, "Dataset file");
  g->add_option("--sims", gen.sims, "Number of simulations")->check(CLI::PositiveNumber);
  g->add_option("--steps", gen.steps, "Frames per sequence")->check(CLI::Range(2, 1 << 20));

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on the LR training split");
  add_common(t);
  t->add_option("--data", tr.data, "Dataset file");
  t->add_option("--out", tr.out, "Output directory")->capture_default_str();
  t->add_option("--mode", tr.mode, "interpolation | extrapolation | c_only");
  t->add_option("--resume", tr.resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  t->add_option("--max-steps", tr.max_steps, "Total optimisation steps");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Monte-Carlo evaluation on the holdout split");
  add_common(e);
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "Dataset file")->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Output directory")->capture_default_str();
  e->add_option("--members", ev.members, "Ensemble size");
  e->add_option("--max-sequences", ev.max_sequences, "Holdout sequences to use");
  e->add_option("--coord", ev.coord, "HR cell I,J for a trace CSV");
  e->add_flag("--histogram", ev.histogram, "Write the error/std histogram CSV");

  ForecastArgs fc;
  auto* f = app.add_subcommand("forecast", "Probabilistic HR forecast from an LR sequence");
  add_common(f);
  f->add_option("--checkpoint", fc.checkpoint, "Checkpoint file")->check(CLI::ExistingFile);
  f->add_option("--input", fc.input, "Dataset file holding the LR sequence")->check(CLI::ExistingFile);
  f->add_option("--sample", fc.sample, "Sequence index (default: first holdout)");
  f->add_option("--observe", fc.observe, "Observed LR frames");
  f->add_option("--horizon", fc.horizon, "Frames beyond the observed window");
  f->add_option("--members", fc.members, "Ensemble size");
  f->add_option("--out", fc.out, "Ensemble file")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (g->parsed()) return cmd_gen_data(common, gen);
    if (t->parsed()) return cmd_train(common, tr);
    if (e->parsed()) return cmd_eval(common, ev);
    if (f->parsed()) return cmd_forecast(common, fc);
  } catch (const Error& err) {
    spdlog::error("{} error: {}", to_string(err.code()), err.what());
    return exit_code(err.code());
  } catch (const std::exception& err) {
    spdlog::error("{}", err.what());
    return 1;
  }
  return 0;
}
