#include "s3rp/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <thread>

#include "s3rp/diffops.hpp"
#include "s3rp/error.hpp"

namespace s3rp::eval {

namespace {

void require_same(const FieldSequence& a, const FieldSequence& b, const char* what) {
  require(a.frames() == b.frames() && a.n() == b.n() && a.channels() == b.channels(),
          ErrorCode::data, std::string(what) + ": shape mismatch");
}

// Streams members in order into Welford accumulators.
struct Moments {
  std::vector<double> mean, m2;
  int count = 0;

  void add(const FieldSequence& s) {
    const auto& v = s.data();
    if (mean.empty()) {
      mean.assign(v.size(), 0.0);
      m2.assign(v.size(), 0.0);
    }
    ++count;
    const double inv = 1.0 / count;
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double d = v[k] - mean[k];
      mean[k] += d * inv;
      m2[k] += d * (v[k] - mean[k]);
    }
  }

  void finish(const FieldSequence& like, McEnsemble& out) const {
    out.mean = like;
    out.std = like;
    out.mean.data() = mean;
    auto& sd = out.std.data();
    for (std::size_t k = 0; k < sd.size(); ++k)
      sd[k] = count > 1 ? std::sqrt(std::max(0.0, m2[k] / (count - 1))) : 0.0;
  }
};

}  // namespace

McEnsemble mc_predict(const model::S3rpModel& m, const FieldSequence& x_lr, const McOptions& opts) {
  require(opts.members >= 2, ErrorCode::config, "Monte-Carlo ensembles need at least 2 members");
  require(opts.jobs >= 1, ErrorCode::config, "jobs must be >= 1");
  const int horizon = opts.horizon < 0 ? x_lr.frames() : opts.horizon;

  auto member = [&](int k) {
    NoiseSource noise = NoiseSource::derive(opts.seed, static_cast<std::uint64_t>(k));
    return m.rollout(x_lr, horizon, noise, opts.observed);
  };

  McEnsemble ens;
  ens.members = opts.members;
  Moments acc;
  std::vector<FieldSequence> wave;
  for (int first = 0; first < opts.members; first += opts.jobs) {
    const int count = std::min(opts.jobs, opts.members - first);
    wave.assign(count, {});
    if (count == 1) {
      wave[0] = member(first);
    } else {
      std::vector<std::thread> threads;
      std::vector<std::exception_ptr> errors(count);
      for (int w = 0; w < count; ++w)
        threads.emplace_back([&, w] {
          try {
            wave[w] = member(first + w);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      for (auto& t : threads) t.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    for (int w = 0; w < count; ++w) {
      acc.add(wave[w]);
      if (opts.on_member) opts.on_member(first + w, wave[w]);
      if (opts.keep_samples || first + w == 0) ens.samples.push_back(std::move(wave[w]));
    }
  }
  acc.finish(ens.samples.front(), ens);
  return ens;
}

McEnsemble ensemble_from_samples(std::vector<FieldSequence> samples) {
  require(samples.size() >= 2, ErrorCode::config, "an ensemble needs at least 2 members");
  Moments acc;
  for (const auto& s : samples) {
    require_same(s, samples.front(), "ensemble_from_samples");
    acc.add(s);
  }
  McEnsemble ens;
  ens.members = static_cast<int>(samples.size());
  acc.finish(samples.front(), ens);
  ens.samples = std::move(samples);
  return ens;
}

double mse(const FieldSequence& mean, const FieldSequence& truth, int channel) {
  require_same(mean, truth, "mse");
  const int C = mean.channels();
  require(channel >= -1 && channel < C, ErrorCode::data, "mse: channel out of range");
  const auto& a = mean.data();
  const auto& b = truth.data();
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (channel >= 0 && static_cast<int>(k % C) != channel) continue;
    const double d = a[k] - b[k];
    s += d * d;
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

double ecp(const FieldSequence& mean, const FieldSequence& std, const FieldSequence& truth,
           double k_sigma, int channel) {
  require_same(mean, truth, "ecp");
  require_same(std, truth, "ecp");
  const int C = mean.channels();
  require(channel >= -1 && channel < C, ErrorCode::data, "ecp: channel out of range");
  const auto& mu = mean.data();
  const auto& sd = std.data();
  const auto& y = truth.data();
  std::size_t hit = 0, n = 0;
  for (std::size_t k = 0; k < mu.size(); ++k) {
    if (channel >= 0 && static_cast<int>(k % C) != channel) continue;
    const double err = std::abs(y[k] - mu[k]);
    const bool covered = sd[k] < 1e-12 ? err < 1e-12 : err <= k_sigma * sd[k];
    hit += covered;
    ++n;
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

double ecp_quantile(std::span<const FieldSequence> samples, const FieldSequence& truth,
                    double level, int channel) {
  require(samples.size() >= 2, ErrorCode::config, "ecp_quantile needs at least 2 members");
  require(level > 0.0 && level < 1.0, ErrorCode::config, "ecp_quantile: level must lie in (0, 1)");
  for (const auto& s : samples) require_same(s, truth, "ecp_quantile");
  const int C = truth.channels();
  const auto& y = truth.data();
  const std::size_t M = samples.size();
  std::vector<double> v(M);
  auto quantile = [&](double p) {
    const double pos = p * (M - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, M - 1);
    return v[lo] + (pos - lo) * (v[hi] - v[lo]);
  };
  std::size_t hit = 0, n = 0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (channel >= 0 && static_cast<int>(k % C) != channel) continue;
    for (std::size_t m = 0; m < M; ++m) v[m] = samples[m].data()[k];
    std::sort(v.begin(), v.end());
    const double a = quantile(0.5 - level / 2), b = quantile(0.5 + level / 2);
    hit += y[k] >= a && y[k] <= b;
    ++n;
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double percentile(std::vector<double> v, double p) {
  if (v.empty()) return 0.0;
  const std::size_t k = std::min(v.size() - 1, static_cast<std::size_t>(p * (v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorCode::data, "spearman: size mismatch");
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double m = (n + 1.0) / 2.0;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < ra.size(); ++k) {
    const double x = ra[k] - m, y = rb[k] - m;
    sab += x * y;
    saa += x * x;
    sbb += y * y;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

Histogram error_std_histogram(std::span<const double> abs_error, std::span<const double> std,
                              int n_bins) {
  require(abs_error.size() == std.size() && !std.empty(), ErrorCode::data,
          "error_std_histogram: size mismatch");
  require(n_bins >= 1, ErrorCode::config, "histogram needs at least one bin");
  Histogram h;
  h.bins = n_bins;
  h.counts.assign(static_cast<std::size_t>(n_bins) * n_bins, 0);
  h.error_max = percentile({abs_error.begin(), abs_error.end()}, 0.999);
  h.std_max = percentile({std.begin(), std.end()}, 0.999);
  auto bin = [n_bins](double v, double hi) {
    if (hi <= 0.0) return 0;
    return std::clamp(static_cast<int>(v / hi * n_bins), 0, n_bins - 1);
  };
  for (std::size_t k = 0; k < std.size(); ++k)
    ++h.counts[static_cast<std::size_t>(bin(std[k], h.std_max)) * n_bins + bin(abs_error[k], h.error_max)];
  h.rank_correlation = std.size() >= 2 ? spearman(abs_error, std) : 0.0;
  return h;
}

Histogram error_std_histogram(const McEnsemble& ens, const FieldSequence& truth, int n_bins,
                              int channel) {
  require_same(ens.mean, truth, "error_std_histogram");
  const int C = truth.channels();
  std::vector<double> err, sd;
  for (std::size_t k = 0; k < truth.data().size(); ++k) {
    if (static_cast<int>(k % C) != channel) continue;
    err.push_back(std::abs(truth.data()[k] - ens.mean.data()[k]));
    sd.push_back(ens.std.data()[k]);
  }
  return error_std_histogram(err, sd, n_bins);
}

void write_histogram_csv(const Histogram& h, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out.precision(10);
  out << "# rank_correlation=" << h.rank_correlation << " error_max=" << h.error_max
      << " std_max=" << h.std_max << "\n";
  out << "std_lo,std_hi,err_lo,err_hi,count\n";
  const double ds = h.std_max / h.bins, de = h.error_max / h.bins;
  for (int s = 0; s < h.bins; ++s)
    for (int e = 0; e < h.bins; ++e)
      out << s * ds << ',' << (s + 1) * ds << ',' << e * de << ',' << (e + 1) * de << ','
          << h.counts[static_cast<std::size_t>(s) * h.bins + e] << '\n';
  require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

std::vector<TraceRow> coordinate_trace(const McEnsemble& ens, const FieldSequence& truth, int i,
                                       int j, int channel) {
  require_same(ens.mean, truth, "coordinate_trace");
  require(i >= 0 && i < truth.n() && j >= 0 && j < truth.n(), ErrorCode::config,
          "coordinate (" + std::to_string(i) + ", " + std::to_string(j) + ") is outside the " +
              std::to_string(truth.n()) + "^2 grid");
  require(channel >= 0 && channel < truth.channels(), ErrorCode::config, "trace channel out of range");
  require(!ens.samples.empty(), ErrorCode::data, "coordinate_trace: ensemble has no stored member");
  std::vector<TraceRow> rows;
  for (int t = 0; t < truth.frames(); ++t)
    rows.push_back({t, truth.at(t, i, j, channel), ens.mean.at(t, i, j, channel),
                    ens.std.at(t, i, j, channel), ens.samples.front().at(t, i, j, channel)});
  return rows;
}

void write_trace_csv(const std::vector<TraceRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out.precision(12);
  out << "t,truth,mean,std,lo1,hi1,lo2,hi2,sample\n";
  for (const auto& r : rows)
    out << r.t << ',' << r.truth << ',' << r.mean << ',' << r.std << ',' << r.mean - r.std << ','
        << r.mean + r.std << ',' << r.mean - 2 * r.std << ',' << r.mean + 2 * r.std << ','
        << r.sample << '\n';
  require(static_cast<bool>(out), ErrorCode::io, "failed writing " + path.string());
}

nlohmann::json EvalReport::to_json() const {
  auto row = [](const MetricsRow& r) {
    nlohmann::json j = {{"mse", r.mse},
                        {"mse_c", r.mse_c},
                        {"eps_advdiff", r.eps_advdiff},
                        {"eps_div", r.eps_div}};
    auto opt = [&](const char* key, const auto& v) {
      if (v) j[key] = *v;
      else j[key] = nullptr;
    };
    opt("ecp_1sigma", r.ecp_1sigma);
    opt("ecp_2sigma", r.ecp_2sigma);
    opt("ecp_1sigma_channel", r.ecp_1sigma_channel);
    opt("ecp_2sigma_channel", r.ecp_2sigma_channel);
    opt("ecp_quantile_68", r.ecp_q68);
    opt("ecp_quantile_95", r.ecp_q95);
    return j;
  };
  return {{"mode", mode},
          {"members", members},
          {"sequences", sequences},
          {"model", row(model)},
          {"baseline", {{"name", "bicubic"}, {"metrics", row(baseline)}}}};
}

diffops::PhysicsErrors sample_physics_errors(const data::Dataset& ds, const data::Sample& s,
                                             const FieldSequence& yhat) {
  require(s.sim >= 0 && s.sim < static_cast<int>(ds.sims.size()), ErrorCode::evaluation,
          "sample has no simulation metadata");
  require(ds.dt_frame > 0.0, ErrorCode::evaluation, "dataset lacks the frame interval");
  const ScalarField q = ds.source_of(s);
  return diffops::physics_errors(yhat, ds.sims[s.sim].k_diag, q,
                                 {ds.grid.spacing_hr(), ds.dt_frame});
}

EvalReport evaluate(const model::S3rpModel& m, const data::Dataset& ds, const EvalOptions& opts,
                    const std::function<void(const data::Sample&, const McEnsemble&)>& on_ensemble) {
  auto holdout = ds.holdout();
  require(!holdout.empty(), ErrorCode::evaluation, "dataset has no holdout sequences");
  if (opts.max_sequences >= 0 && static_cast<int>(holdout.size()) > opts.max_sequences)
    holdout.resize(opts.max_sequences);
  require(!holdout.empty(), ErrorCode::evaluation, "no holdout sequence selected");
  require(ds.grid == m.config().grid, ErrorCode::evaluation, "dataset grid differs from model grid");

  EvalReport rep;
  rep.mode = model::to_string(m.config().mode);
  rep.members = opts.mc.members;
  rep.sequences = static_cast<int>(holdout.size());
  MetricsRow& mr = rep.model;
  MetricsRow& br = rep.baseline;
  mr.ecp_1sigma = 0.0;
  mr.ecp_2sigma = 0.0;
  mr.ecp_1sigma_channel = std::array<double, 3>{};
  mr.ecp_2sigma_channel = std::array<double, 3>{};
  if (opts.mc.keep_samples) {
    mr.ecp_q68 = 0.0;
    mr.ecp_q95 = 0.0;
  }
  const double inv = 1.0 / static_cast<double>(holdout.size());

  for (const auto* s : holdout) {
    require(s->hr.has_value(), ErrorCode::evaluation, "holdout sample lacks HR ground truth");
    const FieldSequence& y = *s->hr;
    const McEnsemble ens = mc_predict(m, s->lr, opts.mc);
    require(ens.mean.frames() == y.frames(), ErrorCode::evaluation,
            "ensemble length differs from the ground truth");
    const FieldSequence bic = data::upsample_bicubic(s->lr, ds.grid.ratio);

    mr.mse += inv * mse(ens.mean, y);
    mr.mse_c += inv * mse(ens.mean, y, FieldSequence::kC);
    *mr.ecp_1sigma += inv * ecp(ens.mean, ens.std, y, 1.0);
    *mr.ecp_2sigma += inv * ecp(ens.mean, ens.std, y, 2.0);
    for (int c = 0; c < 3; ++c) {
      (*mr.ecp_1sigma_channel)[c] += inv * ecp(ens.mean, ens.std, y, 1.0, c);
      (*mr.ecp_2sigma_channel)[c] += inv * ecp(ens.mean, ens.std, y, 2.0, c);
    }
    if (opts.mc.keep_samples) {
      *mr.ecp_q68 += inv * ecp_quantile(ens.samples, y, 0.6827);
      *mr.ecp_q95 += inv * ecp_quantile(ens.samples, y, 0.9545);
    }
    const auto pm = sample_physics_errors(ds, *s, ens.mean);
    mr.eps_advdiff += inv * pm.eps_advdiff;
    mr.eps_div += inv * pm.eps_div;

    br.mse += inv * mse(bic, y);
    br.mse_c += inv * mse(bic, y, FieldSequence::kC);
    const auto pb = sample_physics_errors(ds, *s, bic);
    br.eps_advdiff += inv * pb.eps_advdiff;
    br.eps_div += inv * pb.eps_div;

    if (on_ensemble) on_ensemble(*s, ens);
  }
  return rep;
}

}  // namespace s3rp::eval
