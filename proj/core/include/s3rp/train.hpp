#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "s3rp/data.hpp"
#include "s3rp/model.hpp"
#include "s3rp/objective.hpp"
#include "s3rp/rng.hpp"

namespace s3rp::train {

enum class Optimizer { adam, sgd };

struct TrainConfig {
  int batch = 4;
  /// Frames per training chunk cut from the stored sequences.
  int chunk = 30;
  double lr = 2e-4;
  Optimizer optimizer = Optimizer::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t max_steps = 1000;
  /// Steps between intermediate checkpoints; 0 writes only the final one.
  std::int64_t checkpoint_interval = 0;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One optimisation loop over a model; owns optimiser moments and the noise stream.
class Trainer {
 public:
  Trainer(model::S3rpModel& m, TrainConfig cfg, objective::LossWeights w,
          const data::LrTrainingSet& data);

  /// Draws a batch, evaluates the objective and applies one update.
  /// Throws ErrorCode::numeric if the loss is not finite (parameters untouched).
  objective::LossBreakdown step();

  std::int64_t steps_done() const { return step_; }
  /// Global gradient norm after clipping, from the last step.
  double last_grad_norm() const { return last_norm_; }
  const TrainConfig& config() const { return cfg_; }
  void set_config(const TrainConfig& cfg);

  model::Checkpoint checkpoint() const;
  /// Restores step counter, optimiser moments and noise state.
  void restore(const model::Checkpoint& ck);

 private:
  model::S3rpModel& model_;
  TrainConfig cfg_;
  objective::LossWeights weights_;
  const data::LrTrainingSet& data_;
  NoiseSource rng_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
  double last_norm_ = 0.0;
};

/// Scales grads in place so their global L2 norm is at most max_norm; returns the
/// norm after clipping.
double clip_gradients(std::vector<std::vector<double>*>& grads, double max_norm);

struct TrainCallbacks {
  std::function<void(std::int64_t step, const objective::LossBreakdown&)> on_step;
};

/// Trains from a fresh model until cfg.max_steps. When out_dir is non-empty,
/// writes train_log.csv, ckpt_<step>.s3ck every checkpoint_interval steps and
/// final.s3ck; a non-finite loss writes nan_dump.s3ck and throws ErrorCode::numeric.
model::Checkpoint train(const model::ModelConfig& mc, const TrainConfig& cfg,
                        const objective::LossWeights& w, const data::LrTrainingSet& data,
                        const std::filesystem::path& out_dir = {}, const TrainCallbacks& cb = {});

/// Continues a run from a checkpoint until cfg.max_steps with the given config
/// (e.g. a changed learning rate). Log rows after the checkpoint step are dropped.
model::Checkpoint resume(const model::Checkpoint& ck, const TrainConfig& cfg,
                         const objective::LossWeights& w, const data::LrTrainingSet& data,
                         const std::filesystem::path& out_dir = {}, const TrainCallbacks& cb = {});
model::Checkpoint resume(const std::filesystem::path& checkpoint_path, const TrainConfig& cfg,
                         const objective::LossWeights& w, const data::LrTrainingSet& data,
                         const std::filesystem::path& out_dir = {}, const TrainCallbacks& cb = {});

}  // namespace s3rp::train
