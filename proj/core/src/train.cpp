#include "s3rp/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "s3rp/error.hpp"

namespace s3rp::train {

void TrainConfig::validate() const {
  require(batch >= 1, ErrorCode::config, "train.batch must be >= 1");
  require(chunk >= 2, ErrorCode::config, "train.chunk must be >= 2");
  require(lr > 0.0, ErrorCode::config, "train.lr must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorCode::config,
          "train.beta1 / beta2 must lie in [0, 1)");
  require(eps > 0.0, ErrorCode::config, "train.eps must be > 0");
  require(max_steps >= 0, ErrorCode::config, "train.max_steps must be >= 0");
  require(checkpoint_interval >= 0, ErrorCode::config, "train.checkpoint_interval must be >= 0");
  require(clip_norm > 0.0, ErrorCode::config, "train.clip_norm must be > 0");
}

double clip_gradients(std::vector<std::vector<double>*>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto* g : grads)
    for (double x : *g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return norm;
  const double f = max_norm / norm;
  for (auto* g : grads)
    for (double& x : *g) x *= f;
  double after = 0.0;
  for (const auto* g : grads)
    for (double x : *g) after += x * x;
  return std::sqrt(after);
}

Trainer::Trainer(model::S3rpModel& m, TrainConfig cfg, objective::LossWeights w,
                 const data::LrTrainingSet& data)
    : model_(m), cfg_(cfg), weights_(w), data_(data), rng_(NoiseSource::derive(cfg.seed, 1)) {
  cfg_.validate();
  weights_.validate();
  require(!data_.sequences.empty(), ErrorCode::data, "training split is empty");
  for (const auto& s : data_.sequences)
    require(s.frames() >= cfg_.chunk, ErrorCode::config,
            "train.chunk (" + std::to_string(cfg_.chunk) + ") exceeds a training sequence length (" +
                std::to_string(s.frames()) + ")");
  require(cfg_.batch >= 2 || weights_.lambda == 0.0, ErrorCode::config,
          "the MMD term needs train.batch >= 2 (or loss.lambda = 0)");
  require(data_.grid == m.config().grid, ErrorCode::config, "dataset grid differs from model grid");
  for (const auto& [name, v] : model_.params().entries()) {
    m_.emplace_back(v.numel(), 0.0);
    v_.emplace_back(v.numel(), 0.0);
  }
}

void Trainer::set_config(const TrainConfig& cfg) {
  cfg.validate();
  cfg_ = cfg;
}

objective::LossBreakdown Trainer::step() {
  std::vector<FieldSequence> chunks;
  chunks.reserve(cfg_.batch);
  for (int b = 0; b < cfg_.batch; ++b) {
    const auto& s = data_.sequences[rng_.below(data_.sequences.size())];
    const int start = static_cast<int>(rng_.below(static_cast<std::uint64_t>(s.frames() - cfg_.chunk + 1)));
    chunks.push_back(s.slice(start, cfg_.chunk));
  }
  std::vector<const FieldSequence*> batch;
  for (const auto& c : chunks) batch.push_back(&c);

  auto& params = model_.params();
  params.zero_grad();
  auto res = objective::total_loss(model_, batch, data_.dt_frame, weights_, rng_);
  if (!std::isfinite(res.parts.total))
    fail(ErrorCode::numeric, "non-finite loss at step " + std::to_string(step_ + 1));
  ad::backward(res.total);
  res.unroll = {};

  std::vector<std::vector<double>*> grads;
  for (auto& [name, v] : params.entries()) grads.push_back(&v.mutable_grad());
  last_norm_ = clip_gradients(grads, cfg_.clip_norm);
  require(std::isfinite(last_norm_), ErrorCode::numeric,
          "non-finite gradient at step " + std::to_string(step_ + 1));

  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t), bc2 = 1.0 - std::pow(cfg_.beta2, t);
  std::size_t k = 0;
  for (auto& [name, v] : params.entries()) {
    auto& w = v.mutable_value();
    const auto& g = *grads[k];
    auto& m = m_[k];
    auto& s = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (cfg_.optimizer == Optimizer::sgd) {
        w[i] -= cfg_.lr * g[i];
        continue;
      }
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      s[i] = cfg_.beta2 * s[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(s[i] / bc2) + cfg_.eps);
    }
    ++k;
  }
  model_.project_constraints();
  params.zero_grad();
  return res.parts;
}

model::Checkpoint Trainer::checkpoint() const {
  model::Checkpoint ck = model::make_checkpoint(model_);
  ck.step = step_;
  ck.seed = cfg_.seed;
  ck.rng_state = rng_.state();
  ck.extra = {{"train",
               {{"batch", cfg_.batch},
                {"chunk", cfg_.chunk},
                {"lr", cfg_.lr},
                {"optimizer", cfg_.optimizer == Optimizer::adam ? "adam" : "sgd"},
                {"clip_norm", cfg_.clip_norm},
                {"max_steps", cfg_.max_steps}}},
              {"loss",
               {{"lambda", weights_.lambda},
                {"beta", weights_.beta},
                {"gamma", weights_.gamma},
                {"mmd_scale", weights_.mmd_scale},
                {"prior_variance", weights_.prior_variance}}},
              {"dt_frame", data_.dt_frame}};
  std::size_t k = 0;
  for (const auto& [name, v] : model_.params().entries()) {
    const auto s = v.shape();
    ck.arrays.push_back({"adam_m/" + name, container::DType::f64, {s.b, s.c, s.h, s.w}, m_[k]});
    ck.arrays.push_back({"adam_v/" + name, container::DType::f64, {s.b, s.c, s.h, s.w}, v_[k]});
    ++k;
  }
  return ck;
}

void Trainer::restore(const model::Checkpoint& ck) {
  step_ = ck.step;
  if (!ck.rng_state.empty()) rng_.set_state(ck.rng_state);
  std::size_t k = 0;
  for (const auto& [name, v] : model_.params().entries()) {
    for (const auto& a : ck.arrays) {
      if (a.name == "adam_m/" + name) m_[k] = a.values;
      if (a.name == "adam_v/" + name) v_[k] = a.values;
    }
    require(m_[k].size() == v.numel() && v_[k].size() == v.numel(), ErrorCode::corrupt,
            "checkpoint optimizer state for " + name + " has the wrong size");
    ++k;
  }
}

namespace {

constexpr const char* kLogHeader = "step,recon,mmd,phys_adv,phys_div,total";

std::string log_row(std::int64_t step, const objective::LossBreakdown& b) {
  std::ostringstream os;
  os.precision(17);
  os << step << ',' << b.recon << ',' << b.mmd << ',' << b.phys_adv << ',' << b.phys_div << ','
     << b.total << '\n';
  return os.str();
}

// Keeps the header and rows with step <= last_step.
void truncate_log(const std::filesystem::path& path, std::int64_t last_step) {
  std::ifstream in(path);
  if (!in) return;
  std::string line, kept;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      kept += line + "\n";
      header = false;
      continue;
    }
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) <= last_step) kept += line + "\n";
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  out << kept;
}

model::Checkpoint run(Trainer& trainer, const std::filesystem::path& out_dir, const TrainCallbacks& cb,
                      bool append_log) {
  std::ofstream log;
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    require(!ec, ErrorCode::io, "cannot create " + out_dir.string() + ": " + ec.message());
    const auto log_path = out_dir / "train_log.csv";
    const bool existing = append_log && std::filesystem::exists(log_path);
    if (existing) truncate_log(log_path, trainer.steps_done());
    log.open(log_path, existing ? std::ios::app : std::ios::trunc);
    require(static_cast<bool>(log), ErrorCode::io, "cannot write " + log_path.string());
    if (!existing) log << kLogHeader << '\n';
  }

  const auto& cfg = trainer.config();
  while (trainer.steps_done() < cfg.max_steps) {
    objective::LossBreakdown b;
    try {
      b = trainer.step();
    } catch (const Error& e) {
      if (e.code() == ErrorCode::numeric && !out_dir.empty())
        model::save_checkpoint(out_dir / "nan_dump.s3ck", trainer.checkpoint());
      throw;
    }
    const auto step = trainer.steps_done();
    if (log.is_open()) {
      log << log_row(step, b);
      require(static_cast<bool>(log), ErrorCode::io, "failed writing the training log");
    }
    if (cb.on_step) cb.on_step(step, b);
    if (!out_dir.empty() && cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
      log.flush();
      model::save_checkpoint(out_dir / ("ckpt_" + std::to_string(step) + ".s3ck"), trainer.checkpoint());
    }
  }
  auto ck = trainer.checkpoint();
  if (!out_dir.empty()) model::save_checkpoint(out_dir / "final.s3ck", ck);
  return ck;
}

}  // namespace

model::Checkpoint train(const model::ModelConfig& mc, const TrainConfig& cfg,
                        const objective::LossWeights& w, const data::LrTrainingSet& data,
                        const std::filesystem::path& out_dir, const TrainCallbacks& cb) {
  cfg.validate();
  model::S3rpModel m(mc, cfg.seed);
  m.set_normalization(data.norm);
  Trainer trainer(m, cfg, w, data);
  return run(trainer, out_dir, cb, false);
}

model::Checkpoint resume(const model::Checkpoint& ck, const TrainConfig& cfg,
                         const objective::LossWeights& w, const data::LrTrainingSet& data,
                         const std::filesystem::path& out_dir, const TrainCallbacks& cb) {
  cfg.validate();
  auto m = model::model_from_checkpoint(ck);
  Trainer trainer(*m, cfg, w, data);
  trainer.restore(ck);
  return run(trainer, out_dir, cb, true);
}

model::Checkpoint resume(const std::filesystem::path& checkpoint_path, const TrainConfig& cfg,
                         const objective::LossWeights& w, const data::LrTrainingSet& data,
                         const std::filesystem::path& out_dir, const TrainCallbacks& cb) {
  return resume(model::load_checkpoint(checkpoint_path), cfg, w, data, out_dir, cb);
}

}  // namespace s3rp::train
