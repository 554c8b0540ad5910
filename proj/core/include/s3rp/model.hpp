#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s3rp/container.hpp"
#include "s3rp/data.hpp"
#include "s3rp/grid.hpp"
#include "s3rp/layers.hpp"
#include "s3rp/rng.hpp"

namespace s3rp::model {

using ad::Var;

enum class Mode { interpolation, extrapolation, c_only };

std::string to_string(Mode m);
/// Throws ErrorCode::config for unknown names.
Mode mode_from_string(const std::string& s);

struct ModelConfig {
  int latent_channels = 16;
  int hidden_channels = 64;
  /// Stacked ConvLSTM layers in the encoder, prior and decoder memory branch.
  int n_layers = 1;
  int phycell_order = 2;
  int phycell_kernel = 5;
  int conv_kernel = 3;
  int ladder_channels = 16;
  /// Init gain of the final HR residual convolution.
  double output_gain = 0.05;
  Mode mode = Mode::interpolation;
  GridSpec grid;

  /// Throws ErrorCode::config; the ratio must be a power of two.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys throw ErrorCode::config.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct LatentState {
  Var z, mu, sigma, mu_p, sigma_p;
};

struct RecurrentState {
  std::vector<nn::LstmState> encoder;
  std::vector<nn::LstmState> prior;
  std::vector<nn::LstmState> decoder;
  Var phycell_h;
  /// Previous HR output (normalised units).
  Var yhat_prev;
  /// Previous latent sample; undefined before the first step.
  Var z_prev;

  bool initialized() const { return yhat_prev.defined(); }
  /// Drops all memory; initialize() must be called again before decoding.
  void reset() { *this = RecurrentState{}; }
};

/// Result of unrolling the model over a batch.
struct Unroll {
  /// HR frames [B, 3, N, N] in normalised units, one per output time.
  std::vector<Var> outputs;
  /// Output indices produced by the decoder (the bilinear frame is excluded).
  std::vector<int> decoded;
  /// Latents used for each decoded frame, aligned with `decoded`.
  std::vector<LatentState> latents;
  /// True where the latent was drawn from the prior instead of the encoder.
  std::vector<bool> from_prior;
  /// Fresh prior samples per decoded frame (only when requested).
  std::vector<Var> prior_samples;
};

class S3rpModel {
 public:
  S3rpModel(ModelConfig cfg, std::uint64_t seed);
  S3rpModel(const S3rpModel&) = delete;
  S3rpModel& operator=(const S3rpModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }

  const data::Normalization& normalization() const { return norm_; }
  void set_normalization(const data::Normalization& n) { norm_ = n; }

  /// Fresh state whose previous output is the bilinear upsampling of x0
  /// (computed in physical units, concentration clipped at zero).
  RecurrentState initial_state(const Var& x0) const;
  Var bilinear_init(const Var& x0) const;

  /// Posterior parameters for encoder input x; advances the encoder memory.
  std::pair<Var, Var> encode_step(const Var& x, RecurrentState& state) const;
  /// Prior parameters given state.z_prev; advances the prior memory.
  std::pair<Var, Var> prior_step(RecurrentState& state) const;
  static Var sample_latent(const Var& mu, const Var& sigma, const Var& noise);
  /// New HR output from z_t and the state; advances decoder memory, yhat_prev and z_prev.
  Var decode_step(const Var& z, RecurrentState& state) const;
  /// DS(yhat): block mean over ratio x ratio cells.
  Var generator_output(const Var& yhat) const;

  /// Encoder input for c-only mode: (c_t, u_{t+1}, v_{t+1}).
  static Var c_only_input(const Var& c_source, const Var& wind_next);

  /// Unrolls over normalised LR frames x[t] = [B, 3, n, n].
  ///
  /// `observed` frames are trusted (default: all of x). Interpolation decodes
  /// output t from z_t; extrapolation and c-only emit the bilinear frame at
  /// output 0 and decode output t + 1 from z_t. Beyond the observed window the
  /// latent comes from the prior, except in c-only mode where the encoder reads
  /// the downsampled concentration of the previous output together with the
  /// given LR wind (x must then cover the horizon).
  Unroll unroll(std::span<const Var> x, int horizon, NoiseSource& noise, int observed = -1,
                bool draw_prior_samples = false) const;

  /// Single-sequence HR rollout in physical units, without gradients.
  FieldSequence rollout(const FieldSequence& x_lr, int horizon, NoiseSource& noise,
                        int observed = -1) const;

  /// Re-imposes the PhyCell moment constraints (after a parameter update).
  void project_constraints();
  double constraint_violation() const;
  const nn::PhyCell& phycell() const { return phycell_; }

  /// Noise values consumed per batch element for one latent sample.
  std::size_t latent_size() const;

 private:
  ModelConfig cfg_;
  data::Normalization norm_;
  nn::ParameterStore params_;
  std::vector<nn::ConvLstmCell> enc_cells_, prior_cells_, dec_cells_;
  nn::Conv2d enc_head_, prior_head_;
  nn::Conv2d dec_in_;
  nn::PhyCell phycell_;
  std::vector<nn::ConvTranspose2x> ladder_;
  nn::Conv2d dec_out_;
};

// ---------------------------------------------------------------------------
// Tensor conversion helpers.

/// Normalised NCHW batch of frame t from each sequence.
Var frame_batch(std::span<const FieldSequence* const> seqs, int t, const data::Normalization& norm);
/// Frames of batch element b, denormalised into a FieldSequence.
FieldSequence to_sequence(std::span<const Var> frames, int b, const data::Normalization& norm,
                          Resolution res);

// ---------------------------------------------------------------------------
// Checkpoints.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  data::Normalization norm;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::string rng_state;
  /// Free-form training metadata (train config, loss weights).
  nlohmann::json extra = nlohmann::json::object();
  /// Parameters as "param/<name>", optimizer moments as "adam_m/<name>", "adam_v/<name>".
  std::vector<container::Array> arrays;
};

Checkpoint make_checkpoint(const S3rpModel& m);
/// Builds the model and loads its parameters; throws ErrorCode::corrupt on mismatch.
std::unique_ptr<S3rpModel> model_from_checkpoint(const Checkpoint& ck);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace s3rp::model
