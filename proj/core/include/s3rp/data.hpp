#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "s3rp/advect.hpp"
#include "s3rp/grid.hpp"

namespace s3rp::data {

// ---------------------------------------------------------------------------
// Resampling. All operators act per channel and per frame with no channel-
// specific logic, except the optional non-negativity clip after upsampling.

/// Each LR cell is the arithmetic mean of its ratio x ratio HR block.
FieldSequence downsample(const FieldSequence& hr, int ratio);

/// Piecewise-constant upsampling; downsample(replicate(x)) == x exactly.
FieldSequence replicate(const FieldSequence& lr, int ratio);

struct UpsampleOptions {
  /// Channel clipped at zero after interpolation; -1 disables clipping.
  int clip_channel = FieldSequence::kC;
};

/// Bilinear interpolation between LR block centres with periodic wrap.
FieldSequence upsample_bilinear(const FieldSequence& lr, int ratio, UpsampleOptions opts = {});

/// Catmull-Rom bicubic interpolation between LR block centres with periodic wrap.
FieldSequence upsample_bicubic(const FieldSequence& lr, int ratio, UpsampleOptions opts = {});

// ---------------------------------------------------------------------------
// Datasets.

struct Normalization {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};

  bool operator==(const Normalization&) const = default;
};

struct SimMeta {
  diffops::DiffusionCoefficients k_diag;
  std::vector<std::array<double, 2>> sources;
  double emission_rate = 0.0;
  double source_sigma_cells = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const SimMeta&) const = default;
};

struct Sample {
  FieldSequence lr;
  std::optional<FieldSequence> hr;
  int sim = 0;
  int start = 0;
  std::vector<double> weights;
  bool holdout = false;

  bool operator==(const Sample&) const = default;
};

struct DatasetConfig {
  int sims = 10;
  int sequences_per_sim = 4;
  int seq_len = 120;
  /// First simulation frame a sequence may start at.
  int spinup = 30;
  /// The last `holdout_sims` simulations form the evaluation split.
  int holdout_sims = 1;
  bool store_train_hr = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Training-side view: LR sequences and LR statistics only.
struct LrTrainingSet {
  GridSpec grid;
  double dt_frame = 0.0;
  Normalization norm;
  std::vector<FieldSequence> sequences;
};

class Dataset {
 public:
  GridSpec grid;
  double dt_frame = 0.0;
  std::vector<SimMeta> sims;
  std::vector<Sample> samples;
  Normalization norm;

  /// Copies the LR arrays of the training split; HR never leaves the Dataset.
  LrTrainingSet training_view() const;
  std::vector<const Sample*> holdout() const;
  /// Source field of a sample, sum_j w_j Q_j, in physical units.
  ScalarField source_of(const Sample& s) const;

  bool operator==(const Dataset&) const = default;
};

/// Appends sequences_per_sim sequences drawn from one simulation. Sequences
/// sample a start frame in [spinup, frames - seq_len] and superposition weights
/// uniform in [0, 1] renormalised to sum 1; HR and LR values are rounded to
/// single precision so the dataset round-trips bit-exactly.
void append_record(Dataset& ds, const advect::SimRecord& record, int sim_index,
                   const DatasetConfig& cfg);

/// Per-channel mean / std over the LR frames of the training split.
Normalization compute_normalization(const Dataset& ds);

/// append_record for every record, then compute_normalization.
Dataset build_dataset(const std::vector<advect::SimRecord>& records, const DatasetConfig& cfg);

inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Rounds every value to the nearest IEEE-754 single.
void round_to_float(FieldSequence& seq);

}  // namespace s3rp::data
