#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "trav/costnet.hpp"

namespace trav {

/// Learning problem of one environment: adapt on `support`, score on `query`.
struct Task {
  std::string env_id;
  std::vector<TrainBatch> support;
  std::vector<TrainBatch> query;
};

enum class MetaAlgorithm { Reptile, FOMAML };

std::string to_string(MetaAlgorithm algorithm);
MetaAlgorithm meta_algorithm_from_string(const std::string& name);

struct MetaConfig {
  double inner_lr = 1e-2;
  int inner_steps = 5;
  double meta_lr = 1e-1;
  int meta_iters = 4000;
  int tasks_per_batch = 4;
  MetaAlgorithm algorithm = MetaAlgorithm::Reptile;
  std::uint64_t seed = 0;
  // Inner adaptation during meta-training starts at a seeded offset into the
  // support list; with false it always starts at the first batch.
  bool rotate_support = true;

  void validate() const;
};

/// Most recent W batches of the current deployment, oldest first.
class AdaptBuffer {
 public:
  explicit AdaptBuffer(std::size_t capacity = 8);

  void push(TrainBatch batch);
  std::size_t size() const { return batches_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return batches_.empty(); }
  const std::deque<TrainBatch>& batches() const { return batches_; }
  std::vector<TrainBatch> contents() const { return {batches_.begin(), batches_.end()}; }

 private:
  std::size_t capacity_;
  std::deque<TrainBatch> batches_;
};

/// `steps` SGD steps, step j using support[j % support.size()].
ModelParams inner_adapt(const ModelParams& theta, std::span<const TrainBatch> support, int steps, double alpha);

struct CurvePoint {
  int meta_iter = 0;
  double mean_query_nll = 0.0;
  double mean_query_mae = 0.0;
};

struct MetaResult {
  ModelParams params;
  std::vector<CurvePoint> curve;
};

/// First-order meta-training (Reptile or FOMAML). Pure in its arguments.
MetaResult meta_train(const ModelParams& theta0, std::span<const Task> tasks, const MetaConfig& cfg);

/// Always restarts from `theta_global`; equivalent to inner_adapt over the
/// buffer contents in insertion order.
ModelParams online_adapt(const ModelParams& theta_global, const AdaptBuffer& buffer, int steps, double alpha);

/// "meta_iter,mean_query_nll,mean_query_mae" with a header row.
void write_training_curve(std::ostream& out, std::span<const CurvePoint> curve);

}  // namespace trav
