#include "s3rp/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "s3rp/error.hpp"
#include "s3rp/json_util.hpp"

namespace s3rp::model {

using ad::Shape;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::interpolation: return "interpolation";
    case Mode::extrapolation: return "extrapolation";
    case Mode::c_only: return "c_only";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  if (s == "interpolation") return Mode::interpolation;
  if (s == "extrapolation") return Mode::extrapolation;
  if (s == "c_only" || s == "c-only") return Mode::c_only;
  fail(ErrorCode::config, "unknown mode '" + s + "'");
}

void ModelConfig::validate() const {
  grid.validate();
  require(latent_channels >= 1, ErrorCode::config, "model.latent_channels must be >= 1");
  require(hidden_channels >= 1, ErrorCode::config, "model.hidden_channels must be >= 1");
  require(n_layers >= 1, ErrorCode::config, "model.n_layers must be >= 1");
  require(phycell_order >= 0, ErrorCode::config, "model.phycell_order must be >= 0");
  require(phycell_kernel >= 3 && phycell_kernel % 2 == 1, ErrorCode::config,
          "model.phycell_kernel must be odd and >= 3");
  require((phycell_order + 1) * (phycell_order + 2) / 2 <= phycell_kernel * phycell_kernel,
          ErrorCode::config, "model.phycell_kernel too small for phycell_order");
  require(conv_kernel >= 1 && conv_kernel % 2 == 1, ErrorCode::config,
          "model.conv_kernel must be odd");
  require(ladder_channels >= 1, ErrorCode::config, "model.ladder_channels must be >= 1");
  require(output_gain >= 0.0, ErrorCode::config, "model.output_gain must be >= 0");
  require((grid.ratio & (grid.ratio - 1)) == 0, ErrorCode::config,
          "grid.ratio must be a power of two for the upsampling ladder");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"latent_channels", c.latent_channels},
          {"hidden_channels", c.hidden_channels},
          {"n_layers", c.n_layers},
          {"phycell_order", c.phycell_order},
          {"phycell_kernel", c.phycell_kernel},
          {"conv_kernel", c.conv_kernel},
          {"ladder_channels", c.ladder_channels},
          {"output_gain", c.output_gain},
          {"mode", to_string(c.mode)},
          {"grid",
           {{"n_lr", c.grid.n_lr},
            {"ratio", c.grid.ratio},
            {"domain_size", c.grid.domain_size},
            {"origin", c.grid.origin}}}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  jsonu::Reader r(j, "model");
  std::string mode = to_string(c.mode);
  r.get("latent_channels", c.latent_channels)
      .get("hidden_channels", c.hidden_channels)
      .get("n_layers", c.n_layers)
      .get("phycell_order", c.phycell_order)
      .get("phycell_kernel", c.phycell_kernel)
      .get("conv_kernel", c.conv_kernel)
      .get("ladder_channels", c.ladder_channels)
      .get("output_gain", c.output_gain)
      .get("mode", mode);
  c.mode = mode_from_string(mode);
  if (const auto* g = r.child("grid")) {
    jsonu::Reader gr(*g, "model.grid");
    gr.get("n_lr", c.grid.n_lr)
        .get("ratio", c.grid.ratio)
        .get("domain_size", c.grid.domain_size)
        .get("origin", c.grid.origin);
    gr.finish();
  }
  r.finish();
  return c;
}

S3rpModel::S3rpModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  NoiseSource rng(seed);
  const int dz = cfg_.latent_channels, hid = cfg_.hidden_channels, k = cfg_.conv_kernel;

  for (int l = 0; l < cfg_.n_layers; ++l)
    enc_cells_.emplace_back(params_, "enc.lstm" + std::to_string(l), l == 0 ? 3 : hid, hid, k, rng);
  enc_head_ = nn::Conv2d(params_, "enc.head", hid, 2 * dz, k, rng);

  for (int l = 0; l < cfg_.n_layers; ++l)
    prior_cells_.emplace_back(params_, "prior.lstm" + std::to_string(l), l == 0 ? dz : hid, hid, k,
                              rng);
  prior_head_ = nn::Conv2d(params_, "prior.head", hid, 2 * dz, k, rng);

  dec_in_ = nn::Conv2d(params_, "dec.in", dz + 3, hid, k, rng);
  phycell_ = nn::PhyCell(params_, "dec.phycell", hid, cfg_.phycell_kernel, cfg_.phycell_order, k, rng);
  for (int l = 0; l < cfg_.n_layers; ++l)
    dec_cells_.emplace_back(params_, "dec.lstm" + std::to_string(l), hid, hid, k, rng);

  int cin = hid;
  for (int r = cfg_.grid.ratio, s = 0; r > 1; r /= 2, ++s) {
    ladder_.emplace_back(params_, "dec.up" + std::to_string(s), cin, cfg_.ladder_channels, rng);
    cin = cfg_.ladder_channels;
  }
  dec_out_ = nn::Conv2d(params_, "dec.out", cin + 3, 3, k, rng, cfg_.output_gain);
}

std::size_t S3rpModel::latent_size() const {
  return static_cast<std::size_t>(cfg_.latent_channels) * cfg_.grid.n_lr * cfg_.grid.n_lr;
}

Var S3rpModel::bilinear_init(const Var& x0) const {
  const Shape s = x0.shape();
  require(s.c == 3 && s.h == cfg_.grid.n_lr && s.w == cfg_.grid.n_lr, ErrorCode::model,
          "bilinear_init: LR frame has shape " + s.str());
  // Batch elements become frames of one LR sequence.
  FieldSequence lr(Resolution::lr, s.b, s.h);
  for (int b = 0; b < s.b; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j)
          lr.at(b, i, j, c) =
              x0.value()[((static_cast<std::size_t>(b) * 3 + c) * s.h + i) * s.w + j] * norm_.std[c] +
              norm_.mean[c];
  const FieldSequence hr = data::upsample_bilinear(lr, cfg_.grid.ratio);
  const int N = hr.n();
  std::vector<double> out(static_cast<std::size_t>(s.b) * 3 * N * N);
  for (int b = 0; b < s.b; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j)
          out[((static_cast<std::size_t>(b) * 3 + c) * N + i) * N + j] =
              (hr.at(b, i, j, c) - norm_.mean[c]) / norm_.std[c];
  return Var::constant({s.b, 3, N, N}, std::move(out));
}

RecurrentState S3rpModel::initial_state(const Var& x0) const {
  RecurrentState st;
  st.yhat_prev = bilinear_init(x0);
  return st;
}

namespace {

Var lstm_stack(const std::vector<nn::ConvLstmCell>& cells, std::vector<nn::LstmState>& states,
               Var x) {
  if (states.size() != cells.size()) states.assign(cells.size(), {});
  for (std::size_t l = 0; l < cells.size(); ++l) x = cells[l].step(x, states[l]);
  return x;
}

std::pair<Var, Var> gaussian_head(const nn::Conv2d& head, const Var& h, int dz) {
  Var out = head(h);
  Var mu = ad::slice_channels(out, 0, dz);
  Var sigma = ad::add_scalar(ad::softplus(ad::slice_channels(out, dz, dz)), 1e-6);
  return {mu, sigma};
}

}  // namespace

std::pair<Var, Var> S3rpModel::encode_step(const Var& x, RecurrentState& state) const {
  const Shape s = x.shape();
  require(s.c == 3 && s.h == cfg_.grid.n_lr && s.w == cfg_.grid.n_lr, ErrorCode::model,
          "encode_step: input has shape " + s.str());
  Var h = lstm_stack(enc_cells_, state.encoder, x);
  return gaussian_head(enc_head_, h, cfg_.latent_channels);
}

std::pair<Var, Var> S3rpModel::prior_step(RecurrentState& state) const {
  Var z = state.z_prev;
  if (!z.defined()) {
    require(state.initialized(), ErrorCode::model, "prior_step: state not initialized");
    const int n = cfg_.grid.n_lr;
    z = Var::zeros({state.yhat_prev.shape().b, cfg_.latent_channels, n, n});
  }
  Var h = lstm_stack(prior_cells_, state.prior, z);
  return gaussian_head(prior_head_, h, cfg_.latent_channels);
}

Var S3rpModel::sample_latent(const Var& mu, const Var& sigma, const Var& noise) {
  return mu + sigma * noise;
}

Var S3rpModel::decode_step(const Var& z, RecurrentState& state) const {
  require(state.initialized(), ErrorCode::model, "decode_step: state not initialized");
  const int n = cfg_.grid.n_lr;
  require(z.shape().c == cfg_.latent_channels && z.shape().h == n && z.shape().w == n,
          ErrorCode::model, "decode_step: latent has shape " + z.shape().str());
  const Var& prev = state.yhat_prev;
  const std::array<Var, 2> in{z, generator_output(prev)};
  Var e = ad::tanh(dec_in_(ad::concat_channels(in)));
  if (!state.phycell_h.defined()) state.phycell_h = Var::zeros(e.shape());
  state.phycell_h = phycell_.step(state.phycell_h, e);
  Var r = lstm_stack(dec_cells_, state.decoder, e);
  Var up = state.phycell_h + r;
  for (const auto& stage : ladder_) up = ad::tanh(stage(up));
  const std::array<Var, 2> head{up, prev};
  Var y = prev + dec_out_(ad::concat_channels(head));
  state.yhat_prev = y;
  state.z_prev = z;
  return y;
}

Var S3rpModel::generator_output(const Var& yhat) const {
  return ad::block_mean(yhat, cfg_.grid.ratio);
}

Var S3rpModel::c_only_input(const Var& c_source, const Var& wind_next) {
  const std::array<Var, 2> parts{ad::slice_channels(c_source, FieldSequence::kC, 1),
                                 ad::slice_channels(wind_next, FieldSequence::kU, 2)};
  return ad::concat_channels(parts);
}

Unroll S3rpModel::unroll(std::span<const Var> x, int horizon, NoiseSource& noise, int observed,
                         bool draw_prior_samples) const {
  require(!x.empty(), ErrorCode::data, "unroll: empty input sequence");
  const int len = static_cast<int>(x.size());
  const int obs = observed < 0 ? len : observed;
  require(obs >= 1 && obs <= len, ErrorCode::config, "unroll: observed window out of range");
  require(horizon >= 1, ErrorCode::config, "unroll: horizon must be >= 1");
  const bool shifted = cfg_.mode != Mode::interpolation;
  if (cfg_.mode == Mode::c_only)
    require(len >= horizon, ErrorCode::data,
            "c_only: LR wind must cover the horizon (" + std::to_string(len) + " < " +
                std::to_string(horizon) + ")");

  const int batch = x[0].shape().b;
  const std::size_t per_sample = latent_size();
  const int n = cfg_.grid.n_lr;
  const Shape zs{batch, cfg_.latent_channels, n, n};

  Unroll out;
  RecurrentState st = initial_state(x[0]);
  if (shifted) out.outputs.push_back(st.yhat_prev);
  const int steps = shifted ? horizon - 1 : horizon;
  for (int t = 0; t < steps; ++t) {
    auto [mu_p, sigma_p] = prior_step(st);
    const bool use_prior = t >= obs && cfg_.mode != Mode::c_only;
    LatentState lat;
    lat.mu_p = mu_p;
    lat.sigma_p = sigma_p;
    Var eps = Var::constant(zs, noise.normals(per_sample * batch));
    if (use_prior) {
      lat.mu = mu_p;
      lat.sigma = sigma_p;
    } else {
      Var input;
      if (cfg_.mode == Mode::c_only) {
        Var c_src = t < obs ? x[t] : generator_output(out.outputs[t]);
        input = c_only_input(c_src, x[t + 1]);
      } else {
        input = x[t];
      }
      std::tie(lat.mu, lat.sigma) = encode_step(input, st);
    }
    lat.z = sample_latent(lat.mu, lat.sigma, eps);
    if (draw_prior_samples)
      out.prior_samples.push_back(
          sample_latent(mu_p, sigma_p, Var::constant(zs, noise.normals(per_sample * batch))));
    out.outputs.push_back(decode_step(lat.z, st));
    out.decoded.push_back(static_cast<int>(out.outputs.size()) - 1);
    out.latents.push_back(std::move(lat));
    out.from_prior.push_back(use_prior);
  }
  return out;
}

FieldSequence S3rpModel::rollout(const FieldSequence& x_lr, int horizon, NoiseSource& noise,
                                 int observed) const {
  require(x_lr.resolution() == Resolution::lr && x_lr.n() == cfg_.grid.n_lr &&
              x_lr.channels() == 3,
          ErrorCode::data, "rollout: input is not an LR (u, v, c) sequence on the model grid");
  ad::NoGradGuard guard;
  const FieldSequence* seq = &x_lr;
  std::vector<Var> x;
  x.reserve(x_lr.frames());
  for (int t = 0; t < x_lr.frames(); ++t) x.push_back(frame_batch({&seq, 1}, t, norm_));
  const Unroll u = unroll(x, horizon, noise, observed);
  return to_sequence(u.outputs, 0, norm_, Resolution::hr);
}

void S3rpModel::project_constraints() { phycell_.project(); }

double S3rpModel::constraint_violation() const { return phycell_.max_violation(); }

Var frame_batch(std::span<const FieldSequence* const> seqs, int t, const data::Normalization& norm) {
  require(!seqs.empty(), ErrorCode::data, "frame_batch: no sequences");
  const int n = seqs[0]->n(), C = seqs[0]->channels();
  require(C == 3, ErrorCode::data, "frame_batch: expected 3 channels");
  const int B = static_cast<int>(seqs.size());
  std::vector<double> out(static_cast<std::size_t>(B) * C * n * n);
  for (int b = 0; b < B; ++b) {
    const FieldSequence& s = *seqs[b];
    require(s.n() == n && t < s.frames(), ErrorCode::data, "frame_batch: inconsistent sequences");
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          out[((static_cast<std::size_t>(b) * C + c) * n + i) * n + j] =
              (s.at(t, i, j, c) - norm.mean[c]) / norm.std[c];
  }
  return Var::constant({B, C, n, n}, std::move(out));
}

FieldSequence to_sequence(std::span<const Var> frames, int b, const data::Normalization& norm,
                          Resolution res) {
  require(!frames.empty(), ErrorCode::data, "to_sequence: no frames");
  const Shape s = frames[0].shape();
  require(s.c == 3 && b < s.b, ErrorCode::data, "to_sequence: bad frame shape");
  FieldSequence out(res, static_cast<int>(frames.size()), s.h);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto& v = frames[t].value();
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j)
          out.at(static_cast<int>(t), i, j, c) =
              v[((static_cast<std::size_t>(b) * 3 + c) * s.h + i) * s.w + j] * norm.std[c] + norm.mean[c];
  }
  return out;
}

// ---------------------------------------------------------------------------

Checkpoint make_checkpoint(const S3rpModel& m) {
  Checkpoint ck;
  ck.model = m.config();
  ck.norm = m.normalization();
  for (const auto& [name, v] : m.params().entries()) {
    const Shape s = v.shape();
    ck.arrays.push_back({"param/" + name, container::DType::f64, {s.b, s.c, s.h, s.w}, v.value()});
  }
  return ck;
}

std::unique_ptr<S3rpModel> model_from_checkpoint(const Checkpoint& ck) {
  auto m = std::make_unique<S3rpModel>(ck.model, 0);
  m->set_normalization(ck.norm);
  for (auto& [name, v] : m->params().entries()) {
    const std::string key = "param/" + name;
    const container::Array* found = nullptr;
    for (const auto& a : ck.arrays)
      if (a.name == key) found = &a;
    require(found != nullptr, ErrorCode::corrupt, "checkpoint lacks parameter " + name);
    require(found->values.size() == v.numel(), ErrorCode::corrupt,
            "checkpoint parameter " + name + " has the wrong size");
    v.mutable_value() = found->values;
  }
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json meta = {{"model", to_json(ck.model)},
                         {"normalization", {{"mean", ck.norm.mean}, {"std", ck.norm.std}}},
                         {"step", ck.step},
                         {"seed", ck.seed},
                         {"rng_state", ck.rng_state},
                         {"extra", ck.extra}};
  container::write(path, {'S', '3', 'C', 'K'}, kCheckpointVersion, meta, ck.arrays);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  container::Contents c = container::read(path, {'S', '3', 'C', 'K'}, kCheckpointVersion);
  Checkpoint ck;
  try {
    ck.model = model_config_from_json(c.meta.at("model"));
    ck.norm.mean = c.meta.at("normalization").at("mean").get<std::array<double, 3>>();
    ck.norm.std = c.meta.at("normalization").at("std").get<std::array<double, 3>>();
    ck.step = c.meta.at("step").get<std::int64_t>();
    ck.seed = c.meta.at("seed").get<std::uint64_t>();
    ck.rng_state = c.meta.at("rng_state").get<std::string>();
    ck.extra = c.meta.at("extra");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::corrupt, path.string() + ": malformed checkpoint header: " + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::corrupt, path.string() + ": bad checkpoint config: " + e.what());
  }
  ck.arrays = std::move(c.arrays);
  return ck;
}

}  // namespace s3rp::model
