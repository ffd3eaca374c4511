#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "trav/grid.hpp"
#include "trav/vehicle.hpp"

namespace trav {

inline constexpr double kLogVarMin = -6.0;
inline constexpr double kLogVarMax = 2.0;

/// Patch-MLP shape: each cell sees a k x k x C neighbourhood, passes it
/// through tanh hidden layers, and emits (mean logit, log-variance logit).
struct ArchDescriptor {
  int patch = 5;
  int channels_in = FeatureGrid::kChannels;
  std::vector<int> hidden{32, 32};

  void validate() const;
  int input_width() const { return patch * patch * channels_in; }
  std::size_t param_count() const;
  bool operator==(const ArchDescriptor&) const = default;
};

struct ModelParams {
  ArchDescriptor arch;
  std::vector<double> theta;

  void validate() const;
  bool operator==(const ModelParams&) const = default;
};

struct CostMap {
  int size = 0;
  std::vector<double> mu;
  std::vector<double> log_var;

  double mu_at(int row, int col) const { return mu[static_cast<std::size_t>(row) * size + col]; }
  double log_var_at(int row, int col) const { return log_var[static_cast<std::size_t>(row) * size + col]; }
};

struct TrainBatch {
  FeatureGrid grid;
  std::vector<InteractionSample> samples;

  void validate() const;
};

ModelParams init_params(const ArchDescriptor& arch, std::uint64_t seed);

/// Dense prediction: every cell gets a mean and log variance.
CostMap forward(const ModelParams& params, const FeatureGrid& grid);

/// Prediction at a single cell; agrees with `forward` at that cell.
struct CellPrediction {
  double mu = 0.0;
  double log_var = 0.0;
};
CellPrediction predict_cell(const ModelParams& params, const FeatureGrid& grid, CellIndex cell);

/// Weighted heteroscedastic Gaussian NLL over the sample cells only.
double nll_loss(const ModelParams& params, const TrainBatch& batch);
/// Pooled over several batches: one weighted mean across all samples.
double nll_loss(const ModelParams& params, std::span<const TrainBatch> batches);

/// Exact gradient of nll_loss with respect to theta.
std::vector<double> grad(const ModelParams& params, const TrainBatch& batch);
std::vector<double> grad(const ModelParams& params, std::span<const TrainBatch> batches);

ModelParams sgd_step(const ModelParams& params, std::span<const double> g, double lr);

/// Weighted fit statistics over all samples of `batches`.
struct FitMetrics {
  double nll = 0.0;
  double mae = 0.0;
  double calibration = 0.0;  // fraction with |y - mu| <= sigma
  double weight = 0.0;
};
FitMetrics fit_metrics(const ModelParams& params, std::span<const TrainBatch> batches);

/// Checkpoint load failures; each corruption mode has its own code.
class CheckpointError : public std::runtime_error {
 public:
  enum class Code { BadMagic, BadVersion, BadCrc, Truncated, ArchMismatch, CountMismatch };
  CheckpointError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

/// Binary checkpoint: "MVCK", u16 version 1, u32 k, u32 C, u32 width count,
/// u32 widths, u64 param count, f64 params, u32 CRC32 of everything before.
/// All integers and floats little-endian.
std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace trav
