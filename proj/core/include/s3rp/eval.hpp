#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "s3rp/data.hpp"
#include "s3rp/grid.hpp"
#include "s3rp/model.hpp"

namespace s3rp::eval {

struct McOptions {
  int members = 100;
  std::uint64_t seed = 0;
  int jobs = 1;
  /// Keep every member; otherwise only member 0 is stored and moments are streamed.
  bool keep_samples = false;
  /// Output frames; -1 uses the input length.
  int horizon = -1;
  /// Trusted input frames; -1 uses the input length.
  int observed = -1;
  /// Called for every member in member order (e.g. to stream members to disk).
  std::function<void(int, const FieldSequence&)> on_member;
};

struct McEnsemble {
  int members = 0;
  std::vector<FieldSequence> samples;  // all members, or only member 0
  FieldSequence mean;
  /// Sample standard deviation (M - 1 in the denominator).
  FieldSequence std;
};

/// M rollouts with per-member noise streams NoiseSource::derive(seed, m).
/// Results do not depend on `jobs`. Throws ErrorCode::config if members < 2.
McEnsemble mc_predict(const model::S3rpModel& m, const FieldSequence& x_lr, const McOptions& opts);

/// Mean and sample std of explicit members.
McEnsemble ensemble_from_samples(std::vector<FieldSequence> samples);

/// Mean squared error; channel -1 averages over all channels.
double mse(const FieldSequence& mean, const FieldSequence& truth, int channel = -1);

/// Fraction of sites with |truth - mean| <= k * std. Sites with std < 1e-12
/// count as covered iff |truth - mean| < 1e-12. Channel -1 pools all channels.
double ecp(const FieldSequence& mean, const FieldSequence& std, const FieldSequence& truth,
           double k_sigma, int channel = -1);

/// Coverage of the central `level` interval of the empirical member quantiles.
double ecp_quantile(std::span<const FieldSequence> samples, const FieldSequence& truth,
                    double level, int channel = -1);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

struct Histogram {
  int bins = 64;
  double error_max = 0.0;
  double std_max = 0.0;
  /// counts[s * bins + e]: row s indexes std, column e indexes |error|.
  std::vector<std::int64_t> counts;
  double rank_correlation = 0.0;
};

/// 2D histogram of (|error|, std) pairs; both axes clipped at their 99.9th
/// percentile. The rank correlation uses all pairs unclipped.
Histogram error_std_histogram(std::span<const double> abs_error, std::span<const double> std,
                              int n_bins = 64);
Histogram error_std_histogram(const McEnsemble& ens, const FieldSequence& truth, int n_bins = 64,
                              int channel = FieldSequence::kC);
void write_histogram_csv(const Histogram& h, const std::filesystem::path& path);

struct TraceRow {
  int t = 0;
  double truth = 0.0, mean = 0.0, std = 0.0, sample = 0.0;
};

/// Per-frame truth, ensemble moments and member 0 at HR cell (i, j).
std::vector<TraceRow> coordinate_trace(const McEnsemble& ens, const FieldSequence& truth, int i,
                                       int j, int channel = FieldSequence::kC);
/// Columns t, truth, mean, std, lo1, hi1, lo2, hi2, sample.
void write_trace_csv(const std::vector<TraceRow>& rows, const std::filesystem::path& path);

struct MetricsRow {
  double mse = 0.0;
  double mse_c = 0.0;
  std::optional<double> ecp_1sigma, ecp_2sigma;
  std::optional<std::array<double, 3>> ecp_1sigma_channel, ecp_2sigma_channel;
  std::optional<double> ecp_q68, ecp_q95;
  double eps_advdiff = 0.0;
  double eps_div = 0.0;
};

struct EvalReport {
  std::string mode;
  int members = 0;
  int sequences = 0;
  MetricsRow model;
  MetricsRow baseline;  // bicubic; no coverage columns
  nlohmann::json to_json() const;
};

struct EvalOptions {
  McOptions mc;
  /// Limit on the number of holdout sequences; -1 uses all.
  int max_sequences = -1;
};

/// Evaluates every holdout sequence and averages the per-sequence metrics.
/// `on_ensemble` (optional) sees each sequence's ensemble and ground truth.
/// Throws ErrorCode::evaluation when HR or metadata are missing.
EvalReport evaluate(const model::S3rpModel& m, const data::Dataset& ds, const EvalOptions& opts,
                    const std::function<void(const data::Sample&, const McEnsemble&)>& on_ensemble = {});

/// Physics errors of a physical-unit HR sequence for the simulation of `s`.
diffops::PhysicsErrors sample_physics_errors(const data::Dataset& ds, const data::Sample& s,
                                             const FieldSequence& yhat);

}  // namespace s3rp::eval
