#include "trav/meta.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>

namespace trav {

namespace {

ModelParams adapt_from(const ModelParams& theta, std::span<const TrainBatch> support, std::size_t offset, int steps,
                       double alpha) {
  if (steps < 0) throw ValidationError("steps: must be >= 0");
  if (steps > 0 && support.empty()) throw ValidationError("support: adaptation needs at least one batch");
  ModelParams p = theta;
  for (int j = 0; j < steps; ++j) {
    const auto& batch = support[(offset + static_cast<std::size_t>(j)) % support.size()];
    const auto g = grad(p, batch);
    for (std::size_t i = 0; i < g.size(); ++i) p.theta[i] -= alpha * g[i];
  }
  return p;
}

}  // namespace

std::string to_string(MetaAlgorithm algorithm) {
  return algorithm == MetaAlgorithm::Reptile ? "Reptile" : "FOMAML";
}

MetaAlgorithm meta_algorithm_from_string(const std::string& name) {
  if (name == "Reptile") return MetaAlgorithm::Reptile;
  if (name == "FOMAML") return MetaAlgorithm::FOMAML;
  throw ValidationError("algorithm: expected Reptile or FOMAML, got '" + name + "'");
}

void MetaConfig::validate() const {
  if (!(inner_lr > 0.0)) throw ValidationError("inner_lr: must be positive");
  if (inner_steps < 0) throw ValidationError("inner_steps: must be >= 0");
  if (!(meta_lr > 0.0)) throw ValidationError("meta_lr: must be positive");
  if (meta_iters <= 0) throw ValidationError("meta_iters: must be positive");
  if (tasks_per_batch <= 0) throw ValidationError("tasks_per_batch: must be positive");
}

AdaptBuffer::AdaptBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ValidationError("capacity: adaptation buffer needs room for one batch");
}

void AdaptBuffer::push(TrainBatch batch) {
  if (batches_.size() == capacity_) batches_.pop_front();
  batches_.push_back(std::move(batch));
}

ModelParams inner_adapt(const ModelParams& theta, std::span<const TrainBatch> support, int steps, double alpha) {
  return adapt_from(theta, support, 0, steps, alpha);
}

MetaResult meta_train(const ModelParams& theta0, std::span<const Task> tasks, const MetaConfig& cfg) {
  cfg.validate();
  theta0.validate();
  if (tasks.size() < 2) throw ValidationError("tasks: meta-training needs at least 2 tasks");
  for (const auto& t : tasks) {
    if (t.support.empty() || t.query.empty())
      throw ValidationError("tasks: task '" + t.env_id + "' needs nonempty support and query");
  }
  const auto per_batch = static_cast<std::size_t>(cfg.tasks_per_batch);
  if (per_batch > tasks.size()) throw ValidationError("tasks_per_batch: exceeds the number of tasks");

  std::mt19937_64 rng(cfg.seed);
  MetaResult result{theta0, {}};
  ModelParams& theta = result.params;
  std::vector<std::size_t> order(tasks.size());
  std::vector<double> accum(theta.theta.size());

  for (int iter = 0; iter < cfg.meta_iters; ++iter) {
    // Partial Fisher-Yates: distinct tasks within the meta-batch.
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < per_batch; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(per_batch));
    std::sort(chosen.begin(), chosen.end());
    std::vector<std::size_t> offsets;
    for (std::size_t t : chosen) {
      std::uniform_int_distribution<std::size_t> off(0, tasks[t].support.size() - 1);
      const std::size_t o = off(rng);
      offsets.push_back(cfg.rotate_support ? o : 0);
    }

    std::fill(accum.begin(), accum.end(), 0.0);
    CurvePoint point{iter, 0.0, 0.0};
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      const Task& task = tasks[chosen[i]];
      const ModelParams adapted = adapt_from(theta, task.support, offsets[i], cfg.inner_steps, cfg.inner_lr);
      const auto fit = fit_metrics(adapted, task.query);
      point.mean_query_nll += fit.nll;
      point.mean_query_mae += fit.mae;
      if (cfg.algorithm == MetaAlgorithm::Reptile) {
        for (std::size_t j = 0; j < accum.size(); ++j) accum[j] += adapted.theta[j] - theta.theta[j];
      } else {
        const auto g = grad(adapted, task.query);
        for (std::size_t j = 0; j < accum.size(); ++j) accum[j] += g[j];
      }
    }
    const double m = static_cast<double>(chosen.size());
    const double sign = cfg.algorithm == MetaAlgorithm::Reptile ? 1.0 : -1.0;
    for (std::size_t j = 0; j < accum.size(); ++j) theta.theta[j] += sign * cfg.meta_lr * (accum[j] / m);
    point.mean_query_nll /= m;
    point.mean_query_mae /= m;
    result.curve.push_back(point);
  }
  return result;
}

ModelParams online_adapt(const ModelParams& theta_global, const AdaptBuffer& buffer, int steps, double alpha) {
  if (steps > 0 && buffer.empty()) throw ValidationError("buffer: online adaptation needs recent experience");
  const auto contents = buffer.contents();
  return inner_adapt(theta_global, contents, steps, alpha);
}

void write_training_curve(std::ostream& out, std::span<const CurvePoint> curve) {
  out << "meta_iter,mean_query_nll,mean_query_mae\n" << std::setprecision(17);
  for (const auto& p : curve) out << p.meta_iter << ',' << p.mean_query_nll << ',' << p.mean_query_mae << '\n';
}

}  // namespace trav
