// Acceptance checks. Each selected criterion prints one PASS/FAIL line; the
// exit status is nonzero if any of them fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "s3rp/advect.hpp"
#include "s3rp/config.hpp"
#include "s3rp/data.hpp"
#include "s3rp/error.hpp"
#include "s3rp/eval.hpp"
#include "s3rp/layers.hpp"
#include "s3rp/model.hpp"
#include "s3rp/objective.hpp"
#include "s3rp/rng.hpp"
#include "s3rp/train.hpp"
#include "s3rp/windgen.hpp"
#include "support.hpp"

using namespace s3rp;
namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kComparisonSteps = 3000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int g_jobs = 1;
fs::path g_workdir;

// ---------------------------------------------------------------------------
// 1. Divergence-free wind

Outcome divergence_free_wind() {
  GridSpec g;  // 128^2
  const int n = g.n_hr();
  const double ds = g.spacing_hr();
  double worst = 0.0;
  int frames = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    windgen::WindConfig wc;
    wc.seed = seed;
    wc.n_steps = 60;
    const auto wind = windgen::generate_wind(wc, g);
    for (int t = 0; t < wind.frames(); ++t, ++frames) {
      double div2 = 0.0, speed2 = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const int jp = (j + 1) % n, jm = (j + n - 1) % n, ip = (i + 1) % n, im = (i + n - 1) % n;
          const double d = (wind.at(t, i, jp, 0) - wind.at(t, i, jm, 0)) / (2 * ds) +
                           (wind.at(t, ip, j, 1) - wind.at(t, im, j, 1)) / (2 * ds);
          div2 += d * d;
          speed2 += wind.at(t, i, j, 0) * wind.at(t, i, j, 0) + wind.at(t, i, j, 1) * wind.at(t, i, j, 1);
        }
      if (speed2 > 0.0) worst = std::max(worst, std::sqrt(div2 / speed2));
    }
  }
  return {worst <= 1e-10, "max RMS(div u)/RMS|u| = " + fmt("%.3g", worst) + " over " +
                              std::to_string(frames) + " frames"};
}

// ---------------------------------------------------------------------------
// 2. Mass budget of the solver

Outcome mass_budget() {
  GridSpec g;
  advect::SimConfig cfg;
  cfg.grid = g;
  cfg.n_steps = 100;
  cfg.emission_rate = 1.0;
  cfg.source_locations = {{0.3, 0.7}, {0.8, 0.2}};
  cfg.wind.seed = 11;
  cfg.wind.dt = cfg.dt;
  cfg.wind.n_steps = cfg.n_steps + 1;
  const auto wind = windgen::generate_wind(cfg.wind, g);
  const auto rec = advect::simulate_sources(cfg, wind, g_jobs);
  const double cell = g.spacing_hr() * g.spacing_hr();
  double worst = 0.0;
  for (std::size_t s = 0; s < rec.per_source_c.size(); ++s) {
    // Injected mass from the discrete source field itself.
    const auto q = advect::source_field(g, cfg.source_locations[s], cfg.source_sigma_cells,
                                        cfg.emission_rate);
    const double rate = std::accumulate(q.values.begin(), q.values.end(), 0.0) * cell;
    for (int t = 1; t <= cfg.n_steps; ++t) {
      const auto f = rec.per_source_c[s].frame(t);
      const double mass = std::accumulate(f.values.begin(), f.values.end(), 0.0) * cell;
      const double expected = t * cfg.dt * rate;
      worst = std::max(worst, std::abs(mass - expected) / expected);
    }
  }
  return {worst <= 1e-6, "max relative mass error " + fmt("%.3g", worst) + " over 100 steps"};
}

// ---------------------------------------------------------------------------
// 3. Heat-kernel second moment

Outcome heat_kernel() {
  const int n = 128;
  const double ds = 1.0 / n, dt = 0.01, k = 3e-4;
  ScalarField c(n);
  c(n / 2, n / 2) = 1.0 / (ds * ds);
  auto variance = [&](const ScalarField& f) {
    double m = 0, mx = 0, my = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        m += f(i, j);
        mx += f(i, j) * j * ds;
        my += f(i, j) * i * ds;
      }
    mx /= m;
    my /= m;
    double sx = 0, sy = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        sx += f(i, j) * (j * ds - mx) * (j * ds - mx);
        sy += f(i, j) * (i * ds - my) * (i * ds - my);
      }
    return std::pair{sx / m, sy / m};
  };
  const double expect = 2.0 * k * dt;
  double worst = 0.0;
  auto prev = variance(c);
  for (int s = 0; s < 100; ++s) {
    c = advect::step_concentration(c, VectorField(n), {k, k}, ScalarField(n), dt, ds);
    const auto now = variance(c);
    worst = std::max({worst, std::abs(now.first - prev.first - expect) / expect,
                      std::abs(now.second - prev.second - expect) / expect});
    prev = now;
  }
  return {worst <= 0.02, "max per-step relative deviation from 2 k dt: " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// 4. Downsampling oracle

Outcome downsample_oracle() {
  const int n = 128, r = 8, T = 4;
  const auto hr = testing::random_sequence(Resolution::hr, T, n, 2024, -5.0, 5.0);
  const auto lr = data::downsample(hr, r);
  double worst = 0.0;
  for (int t = 0; t < T; ++t)
    for (int I = 0; I < n / r; ++I)
      for (int J = 0; J < n / r; ++J)
        for (int c = 0; c < 3; ++c) {
          double s = 0.0;
          for (int a = 0; a < r; ++a)
            for (int b = 0; b < r; ++b) s += hr.at(t, I * r + a, J * r + b, c);
          worst = std::max(worst, std::abs(lr.at(t, I, J, c) - s / 64.0));
        }
  return {worst <= 1e-12, "max |DS - loop| = " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// 5. MMD oracle

double imq(const std::vector<double>& a, const std::vector<double>& b, double c) {
  double d2 = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
  return c / (c + d2);
}

// Unbiased estimator; index-matched cross pairs are excluded for equal sizes.
double mmd_reference(const std::vector<std::vector<double>>& q,
                     const std::vector<std::vector<double>>& p, double c) {
  const std::size_t n = q.size(), m = p.size();
  double qq = 0.0, pp = 0.0, qp = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) qq += imq(q[i], q[j], c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (i != j) pp += imq(p[i], p[j], c);
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (n != m || i != j) {
        qp += imq(q[i], p[j], c);
        ++pairs;
      }
  return qq / (n * (n - 1.0)) + pp / (m * (m - 1.0)) - 2.0 * qp / static_cast<double>(pairs);
}

Outcome mmd_oracle() {
  const int dz = 4 * 8 * 8;
  const double c = 2.0 * dz;
  NoiseSource rng(5);
  auto draw = [&](int count, double shift) {
    std::vector<std::vector<double>> s(count, std::vector<double>(dz));
    for (auto& v : s)
      for (double& x : v) x = shift + rng.normal();
    return s;
  };
  auto as_var = [&](const std::vector<std::vector<double>>& s) {
    std::vector<double> flat;
    for (const auto& v : s) flat.insert(flat.end(), v.begin(), v.end());
    return ad::Var::constant({static_cast<int>(s.size()), 4, 8, 8}, flat);
  };
  double worst = 0.0;
  int cases = 0;
  for (auto [nq, np] : {std::pair{16, 16}, {2, 2}, {5, 11}, {16, 3}, {8, 8}})
    for (double shift : {0.0, 0.3}) {
      const auto q = draw(nq, 0.0), p = draw(np, shift);
      const double ref = mmd_reference(q, p, c);
      worst = std::max(worst, std::abs(objective::mmd(q, p, c) - ref));
      worst = std::max(worst, std::abs(objective::mmd(as_var(q), as_var(p), c).item() - ref));
      ++cases;
    }
  return {worst <= 1e-10, std::to_string(cases) + " set pairs, max |estimate - reference| = " +
                              fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// 6. Gradient check of the total loss

Outcome gradient_check() {
  auto mc = testing::tiny_model();  // 8^2 LR, 64^2 HR, d_z = 4
  mc.hidden_channels = 4;
  model::S3rpModel m(mc, 21);
  const auto a = testing::random_sequence(Resolution::lr, 3, 8, 31, 0.0, 1.0);
  const auto b = testing::random_sequence(Resolution::lr, 3, 8, 32, 0.0, 1.0);
  const std::vector<const FieldSequence*> batch{&a, &b};
  objective::LossWeights w;
  w.lambda = 1.0;
  w.beta = 2.0;
  w.gamma = 0.5;
  const auto r = testing::grad_check_total(m, batch, 0.05, w, 200, 77);
  const double frac = static_cast<double>(r.passed) / r.checked;
  return {frac >= 0.95, std::to_string(r.passed) + "/" + std::to_string(r.checked) +
                            " coordinates within 1e-3 (worst " + fmt("%.3g", r.worst) + ")"};
}

// ---------------------------------------------------------------------------
// 7. PhyCell moment constraints during optimisation

double moment_violation(const ad::Var& bank, int order) {
  const auto orders = nn::derivative_orders(order);
  const auto s = bank.shape();
  const int k = s.h, h = k / 2;
  double worst = 0.0;
  for (int d = 0; d < s.b; ++d)
    for (std::size_t t = 0; t < orders.size(); ++t) {
      const auto [p, q] = orders[t];
      double m = 0.0;
      for (int row = 0; row < k; ++row)
        for (int col = 0; col < k; ++col)
          m += bank.value()[(static_cast<std::size_t>(d) * k + row) * k + col] *
               std::pow(col - h, p) * std::pow(row - h, q);
      m /= std::tgamma(p + 1.0) * std::tgamma(q + 1.0);
      const auto [tp, tq] = orders[d];
      worst = std::max(worst, std::abs(m - ((p == tp && q == tq) ? 1.0 : 0.0)));
    }
  return worst;
}

Outcome phycell_constraints() {
  auto cfg = testing::tiny_toolkit(2, 8, 1);
  cfg.train.lr = 1e-2;  // large steps so the projection has work to do
  const auto ds = config::generate_dataset(cfg, g_jobs);
  const auto view = ds.training_view();
  model::S3rpModel m(cfg.model, 3);
  m.set_normalization(view.norm);
  train::Trainer tr(m, cfg.train, cfg.loss, view);
  const ad::Var* bank = nullptr;
  for (const auto& [name, v] : m.params().entries())
    if (name == "dec.phycell.bank") bank = &v;
  if (!bank) return {false, "no PhyCell bank parameter"};
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    tr.step();
    worst = std::max(worst, moment_violation(*bank, cfg.model.phycell_order));
  }
  return {worst <= 1e-6, "max moment deviation over 50 steps " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// 10. ECP of synthetic Gaussian ensembles

Outcome ecp_calibration() {
  const int T = 21, n = 128;  // 21 * 128^2 * 3 > 1e6 sites
  FieldSequence mean(Resolution::hr, T, n), sd(Resolution::hr, T, n), truth(Resolution::hr, T, n);
  NoiseSource rng(123);
  for (std::size_t k = 0; k < mean.data().size(); ++k) {
    mean.data()[k] = 4.0 * rng.uniform() - 2.0;
    sd.data()[k] = 0.05 + 2.0 * rng.uniform();
    truth.data()[k] = mean.data()[k] + sd.data()[k] * rng.normal();
  }
  const double e1 = eval::ecp(mean, sd, truth, 1.0), e2 = eval::ecp(mean, sd, truth, 2.0);
  const bool ok = std::abs(e1 - 0.683) <= 0.01 && std::abs(e2 - 0.954) <= 0.01;
  return {ok, "ECP(1 sigma) = " + fmt("%.4f", e1) + ", ECP(2 sigma) = " + fmt("%.4f", e2) + " on " +
                  std::to_string(mean.data().size()) + " sites"};
}

// ---------------------------------------------------------------------------
// Desk-scale training recipe. 8 and 12 use it as is; 9 and 11 use the larger variant below.

config::ToolkitConfig recipe(model::Mode mode) {
  config::ToolkitConfig c;
  c.grid.n_lr = 8;
  c.grid.ratio = 8;
  c.wind.n_modes = 2;
  c.dataset.sims = 3;  // two training simulations plus one held out
  c.dataset.holdout_sims = 1;
  c.dataset.sequences_per_sim = 8;
  c.dataset.seq_len = 12;
  c.dataset.spinup = 30;
  c.sim.n_steps = 60;
  c.model.latent_channels = 4;
  c.model.hidden_channels = 16;
  c.model.ladder_channels = 8;
  c.model.mode = mode;
  c.loss.lambda = 1.0;
  c.loss.beta = 1e4;
  c.loss.gamma = 10.0;
  c.train.batch = 4;
  c.train.chunk = 12;
  c.train.lr = 1e-3;
  c.train.max_steps = 2000;
  c.train.checkpoint_interval = 0;
  c.eval.members = 100;
  c.validate();
  return c;
}

// More simulations, longer training and a heavier physics weight.
config::ToolkitConfig comparison_recipe() {
  auto c = recipe(model::Mode::interpolation);
  c.dataset.sims = 7;
  c.loss.beta = 1000.0;
  c.loss.gamma = 100.0;
  c.train.max_steps = kComparisonSteps;
  c.validate();
  return c;
}

struct Trained {
  config::ToolkitConfig cfg;
  std::shared_ptr<data::Dataset> ds;
  std::unique_ptr<model::S3rpModel> model;
  std::vector<double> losses;
  bool finite = true;
  double seconds = 0.0;
};

Trained train_recipe(config::ToolkitConfig cfg, std::shared_ptr<data::Dataset> ds, const char* tag) {
  const auto t0 = std::chrono::steady_clock::now();
  Trained out;
  out.cfg = cfg;
  out.ds = ds ? ds : std::make_shared<data::Dataset>(config::generate_dataset(cfg, g_jobs));
  const auto view = out.ds->training_view();
  train::TrainCallbacks cb;
  cb.on_step = [&](std::int64_t step, const objective::LossBreakdown& b) {
    out.losses.push_back(b.total);
    if (step % 250 == 0)
      std::printf("  [%s] step %lld total %.4g recon %.4g\n", tag, static_cast<long long>(step),
                  b.total, b.recon);
    std::fflush(stdout);
  };
  try {
    const auto ck = train::train(cfg.model, cfg.train, cfg.loss, view, g_workdir / tag, cb);
    out.model = model::model_from_checkpoint(ck);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::numeric) throw;
    out.finite = false;
  }
  out.seconds = seconds_since(t0);
  return out;
}

double moving_average(const std::vector<double>& v, std::size_t from, std::size_t w) {
  double s = 0.0;
  for (std::size_t k = from; k < from + w; ++k) s += v[k];
  return s / static_cast<double>(w);
}

std::optional<Trained> g_interp;

Trained& interp_model() {
  if (!g_interp) g_interp = train_recipe(comparison_recipe(), nullptr, "interpolation");
  return *g_interp;
}

// 8. Training smoke
Outcome training_smoke() {
  Trained t = train_recipe(recipe(model::Mode::interpolation), nullptr, "smoke");
  const bool ok_finite = t.finite && std::all_of(t.losses.begin(), t.losses.end(),
                                                 [](double v) { return std::isfinite(v); });
  if (!ok_finite || t.losses.size() < 2000) return {false, "training stopped with a non-finite loss"};
  const std::size_t w = 100;
  const double first = moving_average(t.losses, 0, w);
  const double last = moving_average(t.losses, t.losses.size() - w, w);
  const double drop = 1.0 - last / first;
  const bool ok = drop >= 0.5 && t.seconds <= 1800.0;
  return {ok, "moving-average total " + fmt("%.4g", first) + " -> " + fmt("%.4g", last) + " (" +
                  fmt("%.1f", 100 * drop) + "% lower), " + fmt("%.0f", t.seconds) + " s"};
}

struct InterpEval {
  eval::EvalReport report;
  double spearman = 0.0;
  double seconds = 0.0;
};
std::optional<InterpEval> g_eval;

InterpEval& interp_eval() {
  if (g_eval) return *g_eval;
  Trained& t = interp_model();
  const auto t0 = std::chrono::steady_clock::now();
  InterpEval out;
  if (t.model) {
    eval::EvalOptions opts;
    opts.mc.members = t.cfg.eval.members;
    opts.mc.seed = t.cfg.eval.seed;
    opts.mc.jobs = g_jobs;
    std::vector<double> err, sd;
    out.report = eval::evaluate(*t.model, *t.ds, opts,
                                [&](const data::Sample& s, const eval::McEnsemble& ens) {
                                  const auto& y = *s.hr;
                                  for (int f = 0; f < y.frames(); ++f)
                                    for (int i = 0; i < y.n(); ++i)
                                      for (int j = 0; j < y.n(); ++j) {
                                        err.push_back(std::abs(ens.mean.at(f, i, j, FieldSequence::kC) -
                                                               y.at(f, i, j, FieldSequence::kC)));
                                        sd.push_back(ens.std.at(f, i, j, FieldSequence::kC));
                                      }
                                });
    out.spearman = eval::spearman(err, sd);
  }
  out.seconds = seconds_since(t0) + t.seconds;
  g_eval = out;
  return *g_eval;
}

// 9. Directional comparison with bicubic
Outcome directional_table() {
  Trained& t = interp_model();
  if (!t.model) return {false, "no trained model"};
  const auto& e = interp_eval();
  const auto& m = e.report.model;
  const auto& b = e.report.baseline;
  const bool ok = m.mse < b.mse && m.eps_div <= 0.5 * b.eps_div && m.eps_advdiff <= b.eps_advdiff &&
                  e.seconds <= 3600.0;
  return {ok, "MSE " + fmt("%.4g", m.mse) + " vs " + fmt("%.4g", b.mse) + ", eps_div " +
                  fmt("%.4g", m.eps_div) + " vs " + fmt("%.4g", b.eps_div) + ", eps_advdiff " +
                  fmt("%.4g", m.eps_advdiff) + " vs " + fmt("%.4g", b.eps_advdiff) + " (M = " +
                  std::to_string(e.report.members) + ", " + fmt("%.0f", e.seconds) + " s end to end)"};
}

// 11. Uncertainty-error association
Outcome uncertainty_association() {
  Trained& t = interp_model();
  if (!t.model) return {false, "no trained model"};
  const auto& e = interp_eval();
  return {e.spearman > 0.0, "Spearman(|c - c*|, std) = " + fmt("%.4f", e.spearman)};
}

// 12. Forecast band widening
Outcome forecast_bands() {
  const auto t0 = std::chrono::steady_clock::now();
  const int observed = 10, horizon = 30;
  auto base = recipe(model::Mode::extrapolation);
  base.dataset.seq_len = observed + horizon;
  base.sim.n_steps = base.dataset.spinup + base.dataset.seq_len + 10;
  base.train.max_steps = 1000;  // two models share the 30 minute budget
  base.validate();
  auto ds = std::make_shared<data::Dataset>(config::generate_dataset(base, g_jobs));

  auto width = [&](model::Mode mode) -> std::optional<double> {
    auto cfg = base;
    cfg.model.mode = mode;
    Trained t = train_recipe(cfg, ds, model::to_string(mode).c_str());
    if (!t.model) return std::nullopt;
    double total = 0.0;
    int count = 0;
    for (const auto* s : ds->holdout()) {
      eval::McOptions o;
      o.members = 100;
      o.jobs = g_jobs;
      o.horizon = observed + horizon;
      o.observed = observed;
      const bool c_only = mode == model::Mode::c_only;
      const FieldSequence x = s->lr.slice(0, c_only ? observed + horizon : observed);
      const auto ens = eval::mc_predict(*t.model, x, o);
      for (int f = observed; f < observed + horizon; ++f)
        for (int i = 0; i < ens.std.n(); ++i)
          for (int j = 0; j < ens.std.n(); ++j) {
            total += 4.0 * ens.std.at(f, i, j, FieldSequence::kC);
            ++count;
          }
    }
    return total / count;
  };
  const auto we = width(model::Mode::extrapolation);
  const auto wc = width(model::Mode::c_only);
  const double secs = seconds_since(t0);
  if (!we || !wc) return {false, "training produced a non-finite loss"};
  return {*we > *wc && secs <= 1800.0, "mean 2 sigma band width: extrapolation " + fmt("%.4g", *we) +
                                            ", c_only " + fmt("%.4g", *wc) + " (" +
                                            fmt("%.0f", secs) + " s)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s3rp acceptance checks"};
  std::vector<int> selected;
  std::string workdir = (fs::temp_directory_path() / "s3rp_acceptance").string();
  app.add_option("criteria", selected, "Criterion numbers (default: all)");
  app.add_option("--workdir", workdir, "Directory for training artefacts");
  app.add_option("--jobs", g_jobs, "Worker threads")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);
  g_workdir = workdir;
  fs::create_directories(g_workdir);

  const std::map<int, std::pair<const char*, std::function<Outcome()>>> checks{
      {1, {"divergence-free wind", divergence_free_wind}},
      {2, {"solver mass budget", mass_budget}},
      {3, {"heat-kernel second moment", heat_kernel}},
      {4, {"downsampling oracle", downsample_oracle}},
      {5, {"MMD double-sum oracle", mmd_oracle}},
      {6, {"total-loss gradient check", gradient_check}},
      {7, {"PhyCell moment constraints", phycell_constraints}},
      {8, {"training smoke", training_smoke}},
      {9, {"directional comparison with bicubic", directional_table}},
      {10, {"ECP calibration", ecp_calibration}},
      {11, {"uncertainty-error association", uncertainty_association}},
      {12, {"forecast band widening", forecast_bands}},
  };
  if (selected.empty())
    for (const auto& [id, c] : checks) selected.push_back(id);

  int failed = 0;
  for (int id : selected) {
    const auto it = checks.find(id);
    if (it == checks.end()) {
      std::printf("criterion %d: FAIL  unknown criterion\n", id);
      ++failed;
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s: %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL",
                it->second.first, o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
