#include "s3rp/data.hpp"

#include <cmath>

#include "s3rp/container.hpp"
#include "s3rp/error.hpp"
#include "s3rp/rng.hpp"

namespace s3rp::data {
namespace {

constexpr container::Magic kMagic{'S', '3', 'R', 'P'};

// Interpolation taps for one output index: value = sum_k weights[k] * src[base + k].
struct Taps {
  int base = 0;
  std::array<double, 4> weights{};
  int count = 0;
};

std::vector<Taps> bilinear_taps(int n_out, int ratio) {
  std::vector<Taps> out(n_out);
  for (int J = 0; J < n_out; ++J) {
    const double p = (J + 0.5) / ratio - 0.5;
    const double j0 = std::floor(p);
    const double f = p - j0;
    out[J] = {static_cast<int>(j0), {1.0 - f, f, 0.0, 0.0}, 2};
  }
  return out;
}

std::vector<Taps> catmull_rom_taps(int n_out, int ratio) {
  std::vector<Taps> out(n_out);
  for (int J = 0; J < n_out; ++J) {
    const double p = (J + 0.5) / ratio - 0.5;
    const double j0 = std::floor(p);
    const double f = p - j0;
    const double f2 = f * f, f3 = f2 * f;
    out[J] = {static_cast<int>(j0) - 1,
              {0.5 * (-f3 + 2.0 * f2 - f), 0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
               0.5 * (-3.0 * f3 + 4.0 * f2 + f), 0.5 * (f3 - f2)},
              4};
  }
  return out;
}

FieldSequence separable_upsample(const FieldSequence& lr, int ratio, const std::vector<Taps>& taps,
                                 UpsampleOptions opts) {
  require(lr.resolution() == Resolution::lr, ErrorCode::data, "upsampling expects an LR sequence");
  require(ratio >= 2, ErrorCode::data, "upsampling ratio must be >= 2");
  const int n = lr.n(), N = n * ratio, C = lr.channels();
  FieldSequence hr(Resolution::hr, lr.frames(), N, C);
  std::vector<double> rows(static_cast<std::size_t>(n) * N * C);
  for (int t = 0; t < lr.frames(); ++t) {
    // Along x: [n, n, C] -> [n, N, C].
    for (int i = 0; i < n; ++i)
      for (int J = 0; J < N; ++J)
        for (int ch = 0; ch < C; ++ch) {
          double v = 0.0;
          for (int k = 0; k < taps[J].count; ++k)
            v += taps[J].weights[k] * lr.at(t, i, wrap(taps[J].base + k, n), ch);
          rows[(static_cast<std::size_t>(i) * N + J) * C + ch] = v;
        }
    // Along y: [n, N, C] -> [N, N, C].
    for (int I = 0; I < N; ++I)
      for (int J = 0; J < N; ++J)
        for (int ch = 0; ch < C; ++ch) {
          double v = 0.0;
          for (int k = 0; k < taps[I].count; ++k)
            v += taps[I].weights[k] *
                 rows[(static_cast<std::size_t>(wrap(taps[I].base + k, n)) * N + J) * C + ch];
          if (ch == opts.clip_channel && v < 0.0) v = 0.0;
          hr.at(t, I, J, ch) = v;
        }
  }
  return hr;
}

nlohmann::json to_json(const GridSpec& g) {
  return {{"n_lr", g.n_lr}, {"ratio", g.ratio}, {"domain_size", g.domain_size}, {"origin", g.origin}};
}

GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  g.n_lr = j.at("n_lr").get<int>();
  g.ratio = j.at("ratio").get<int>();
  g.domain_size = j.at("domain_size").get<double>();
  g.origin = j.at("origin").get<double>();
  return g;
}

std::vector<std::int64_t> shape_of(const FieldSequence& s) {
  return {s.frames(), s.n(), s.n(), s.channels()};
}

FieldSequence sequence_from(const container::Array& a, Resolution res) {
  if (a.shape.size() != 4 || a.shape[1] != a.shape[2])
    fail(ErrorCode::corrupt, "array '" + a.name + "' is not [T, N, N, C]");
  FieldSequence s(res, static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1]),
                  static_cast<int>(a.shape[3]));
  s.data() = a.values;
  return s;
}

}  // namespace

FieldSequence downsample(const FieldSequence& hr, int ratio) {
  require(hr.resolution() == Resolution::hr, ErrorCode::data, "downsample expects an HR sequence");
  require(ratio >= 1 && hr.n() % ratio == 0, ErrorCode::data,
          "HR size " + std::to_string(hr.n()) + " is not divisible by ratio " +
              std::to_string(ratio));
  const int n = hr.n() / ratio, C = hr.channels();
  FieldSequence lr(Resolution::lr, hr.frames(), n, C);
  const double inv = 1.0 / (static_cast<double>(ratio) * ratio);
  for (int t = 0; t < hr.frames(); ++t)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int ch = 0; ch < C; ++ch) {
          double sum = 0.0;
          for (int a = 0; a < ratio; ++a)
            for (int b = 0; b < ratio; ++b) sum += hr.at(t, i * ratio + a, j * ratio + b, ch);
          lr.at(t, i, j, ch) = sum * inv;
        }
  return lr;
}

FieldSequence replicate(const FieldSequence& lr, int ratio) {
  require(lr.resolution() == Resolution::lr, ErrorCode::data, "replicate expects an LR sequence");
  const int N = lr.n() * ratio, C = lr.channels();
  FieldSequence hr(Resolution::hr, lr.frames(), N, C);
  for (int t = 0; t < lr.frames(); ++t)
    for (int I = 0; I < N; ++I)
      for (int J = 0; J < N; ++J)
        for (int ch = 0; ch < C; ++ch) hr.at(t, I, J, ch) = lr.at(t, I / ratio, J / ratio, ch);
  return hr;
}

FieldSequence upsample_bilinear(const FieldSequence& lr, int ratio, UpsampleOptions opts) {
  return separable_upsample(lr, ratio, bilinear_taps(lr.n() * ratio, ratio), opts);
}

FieldSequence upsample_bicubic(const FieldSequence& lr, int ratio, UpsampleOptions opts) {
  return separable_upsample(lr, ratio, catmull_rom_taps(lr.n() * ratio, ratio), opts);
}

void round_to_float(FieldSequence& seq) {
  for (double& v : seq.data()) v = static_cast<double>(static_cast<float>(v));
}

void DatasetConfig::validate() const {
  require(sims >= 1, ErrorCode::config, "dataset.sims must be >= 1");
  require(sequences_per_sim >= 1, ErrorCode::config, "dataset.sequences_per_sim must be >= 1");
  require(seq_len >= 2, ErrorCode::config, "dataset.seq_len must be >= 2");
  require(spinup >= 0, ErrorCode::config, "dataset.spinup must be >= 0");
  require(holdout_sims >= 0 && holdout_sims < sims, ErrorCode::config,
          "dataset.holdout_sims must be in [0, sims)");
}

LrTrainingSet Dataset::training_view() const {
  LrTrainingSet out;
  out.grid = grid;
  out.dt_frame = dt_frame;
  out.norm = norm;
  for (const auto& s : samples)
    if (!s.holdout) out.sequences.push_back(s.lr);
  return out;
}

std::vector<const Sample*> Dataset::holdout() const {
  std::vector<const Sample*> out;
  for (const auto& s : samples)
    if (s.holdout) out.push_back(&s);
  return out;
}

ScalarField Dataset::source_of(const Sample& s) const {
  require(s.sim >= 0 && s.sim < static_cast<int>(sims.size()), ErrorCode::evaluation,
          "sample refers to unknown simulation metadata");
  const SimMeta& m = sims[s.sim];
  require(s.weights.size() == m.sources.size(), ErrorCode::evaluation,
          "sample weights do not match the simulation's sources");
  ScalarField q(grid.n_hr());
  for (std::size_t k = 0; k < m.sources.size(); ++k) {
    const ScalarField blob =
        advect::source_field(grid, m.sources[k], m.source_sigma_cells, m.emission_rate);
    for (std::size_t p = 0; p < q.values.size(); ++p) q.values[p] += s.weights[k] * blob.values[p];
  }
  return q;
}

void append_record(Dataset& ds, const advect::SimRecord& record, int sim_index,
                   const DatasetConfig& cfg) {
  cfg.validate();
  require(record.frames() > 0, ErrorCode::data, "simulation record is empty");
  if (ds.samples.empty() && ds.sims.empty()) {
    ds.grid = record.grid();
    ds.dt_frame = record.dt;
  }
  require(ds.grid == record.grid(), ErrorCode::data, "records use different grids");
  const int usable = std::min(record.frames(), record.wind.frames());
  require(usable - cfg.seq_len >= cfg.spinup, ErrorCode::data,
          "simulation has " + std::to_string(usable) + " frames; need spinup + seq_len = " +
              std::to_string(cfg.spinup + cfg.seq_len));

  if (static_cast<int>(ds.sims.size()) <= sim_index) ds.sims.resize(sim_index + 1);
  ds.sims[sim_index] = {record.k_diag, record.sources, record.emission_rate,
                        record.source_sigma_cells, record.seed};

  const bool holdout = sim_index >= cfg.sims - cfg.holdout_sims;
  NoiseSource rng = NoiseSource::derive(cfg.seed, static_cast<std::uint64_t>(sim_index));
  const int n = record.grid().n_hr();
  const std::size_t n_src = record.per_source_c.size();

  for (int q = 0; q < cfg.sequences_per_sim; ++q) {
    const int span = usable - cfg.seq_len - cfg.spinup + 1;
    const int start = cfg.spinup + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    std::vector<double> w(n_src);
    double total = 0.0;
    for (double& v : w) total += (v = rng.uniform());
    for (double& v : w) v /= total;

    FieldSequence hr(Resolution::hr, cfg.seq_len, n);
    for (int t = 0; t < cfg.seq_len; ++t) {
      const int f = start + t;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          hr.at(t, i, j, FieldSequence::kU) = record.wind.at(f, i, j, 0);
          hr.at(t, i, j, FieldSequence::kV) = record.wind.at(f, i, j, 1);
        }
      for (std::size_t s = 0; s < n_src; ++s) {
        const auto view = record.per_source_c[s].frame_view(f);
        for (int p = 0; p < n * n; ++p) hr.at(t, p / n, p % n, FieldSequence::kC) += w[s] * view[p];
      }
    }
    round_to_float(hr);
    FieldSequence lr = downsample(hr, record.grid().ratio);
    round_to_float(lr);

    Sample sample;
    sample.lr = std::move(lr);
    if (holdout || cfg.store_train_hr) sample.hr = std::move(hr);
    sample.sim = sim_index;
    sample.start = start;
    sample.weights = std::move(w);
    sample.holdout = holdout;
    ds.samples.push_back(std::move(sample));
  }
}

Normalization compute_normalization(const Dataset& ds) {
  Normalization norm;
  std::array<double, 3> sum{}, sum2{};
  double count = 0.0;
  for (const auto& s : ds.samples) {
    if (s.holdout) continue;
    const auto& d = s.lr.data();
    for (std::size_t k = 0; k < d.size(); k += 3) {
      for (int ch = 0; ch < 3; ++ch) {
        sum[ch] += d[k + ch];
        sum2[ch] += d[k + ch] * d[k + ch];
      }
      count += 1.0;
    }
  }
  if (count == 0.0) return norm;
  for (int ch = 0; ch < 3; ++ch) {
    norm.mean[ch] = sum[ch] / count;
    const double var = std::max(0.0, sum2[ch] / count - norm.mean[ch] * norm.mean[ch]);
    norm.std[ch] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  return norm;
}

Dataset build_dataset(const std::vector<advect::SimRecord>& records, const DatasetConfig& cfg) {
  require(static_cast<int>(records.size()) == cfg.sims, ErrorCode::config,
          "dataset.sims does not match the number of simulation records");
  Dataset ds;
  for (std::size_t s = 0; s < records.size(); ++s)
    append_record(ds, records[s], static_cast<int>(s), cfg);
  ds.norm = compute_normalization(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["format"] = "s3rp-dataset";
  meta["grid"] = to_json(ds.grid);
  meta["dt_frame"] = ds.dt_frame;
  meta["normalization"] = {{"mean", ds.norm.mean}, {"std", ds.norm.std}};
  meta["sims"] = nlohmann::json::array();
  for (const auto& s : ds.sims) {
    meta["sims"].push_back({{"k_diag", {s.k_diag.kx, s.k_diag.ky}},
                            {"sources", s.sources},
                            {"emission_rate", s.emission_rate},
                            {"source_sigma_cells", s.source_sigma_cells},
                            {"seed", s.seed}});
  }
  meta["sequences"] = nlohmann::json::array();
  std::vector<container::Array> arrays;
  for (std::size_t q = 0; q < ds.samples.size(); ++q) {
    const auto& s = ds.samples[q];
    meta["sequences"].push_back({{"sim", s.sim},
                                 {"start", s.start},
                                 {"weights", s.weights},
                                 {"holdout", s.holdout},
                                 {"has_hr", s.hr.has_value()}});
    const std::string prefix = "seq" + std::to_string(q);
    arrays.push_back({prefix + "/lr", container::DType::f32, shape_of(s.lr), s.lr.data()});
    if (s.hr) arrays.push_back({prefix + "/hr", container::DType::f32, shape_of(*s.hr), s.hr->data()});
  }
  container::write(path, kMagic, kDatasetVersion, meta, arrays);
}

Dataset load_dataset(const std::filesystem::path& path) {
  const auto contents = container::read(path, kMagic, kDatasetVersion);
  const auto& meta = contents.meta;
  Dataset ds;
  try {
    require(meta.at("format").get<std::string>() == "s3rp-dataset", ErrorCode::corrupt,
            "not a dataset container");
    ds.grid = grid_from_json(meta.at("grid"));
    ds.dt_frame = meta.at("dt_frame").get<double>();
    ds.norm.mean = meta.at("normalization").at("mean").get<std::array<double, 3>>();
    ds.norm.std = meta.at("normalization").at("std").get<std::array<double, 3>>();
    for (const auto& s : meta.at("sims")) {
      SimMeta m;
      const auto k = s.at("k_diag").get<std::array<double, 2>>();
      m.k_diag = {k[0], k[1]};
      m.sources = s.at("sources").get<std::vector<std::array<double, 2>>>();
      m.emission_rate = s.at("emission_rate").get<double>();
      m.source_sigma_cells = s.at("source_sigma_cells").get<double>();
      m.seed = s.at("seed").get<std::uint64_t>();
      ds.sims.push_back(std::move(m));
    }
    const auto& seqs = meta.at("sequences");
    for (std::size_t q = 0; q < seqs.size(); ++q) {
      Sample s;
      const std::string prefix = "seq" + std::to_string(q);
      s.sim = seqs[q].at("sim").get<int>();
      s.start = seqs[q].at("start").get<int>();
      s.weights = seqs[q].at("weights").get<std::vector<double>>();
      s.holdout = seqs[q].at("holdout").get<bool>();
      s.lr = sequence_from(contents.get(prefix + "/lr"), Resolution::lr);
      if (seqs[q].at("has_hr").get<bool>())
        s.hr = sequence_from(contents.get(prefix + "/hr"), Resolution::hr);
      ds.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::corrupt, std::string("malformed dataset metadata: ") + e.what());
  }
  return ds;
}

}  // namespace s3rp::data
