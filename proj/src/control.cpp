#include "trav/control.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "json.hpp"

namespace trav {

using namespace vehicle_limits;

void MppiConfig::validate(const GridSpec& gspec) const {
  if (horizon <= 0) throw ValidationError("horizon: must be positive");
  if (!(dt > 0.0 && dt <= kMaxStep)) throw ValidationError("dt: must lie in (0, 0.2]");
  if (samples <= 0) throw ValidationError("samples: must be positive");
  if (!(temperature > 0.0)) throw ValidationError("temperature: must be positive");
  if (!(noise_v > 0.0) || !(noise_steer > 0.0)) throw ValidationError("noise: standard deviations must be positive");
  if (goal_weight < 0.0 || effort_weight < 0.0 || uncertainty_weight < 0.0 || unknown_cell_cost < 0.0 ||
      boundary_penalty < 0.0)
    throw ValidationError("weights: cost weights must be nonnegative");
  if (horizon * dt * kMaxSpeed > 0.5 * gspec.extent() + 1e-9)
    throw ValidationError("horizon: horizon * dt * v_max exceeds the grid half-extent");
}

Trajectory rollout(const VehicleState& state, std::span<const Control> controls, double dt) {
  Trajectory traj;
  traj.states.reserve(controls.size());
  traj.controls.assign(controls.begin(), controls.end());
  VehicleState s = state;
  for (const Control& u : controls) {
    s = kinematic_step(s, u, dt);
    traj.states.push_back(s);
  }
  return traj;
}

CostTerms cost_terms(const Trajectory& traj, const CostMap& costmap, const FeatureGrid& grid, Vec2 goal,
                     const WorldBounds& bounds) {
  CostTerms t;
  for (const auto& s : traj.states) {
    if (!bounds.contains(s.position())) ++t.off_world;
    const auto cell = grid.cell_of(s.x, s.y);
    if (cell && grid.observed(cell->row, cell->col)) {
      t.mean_sum += costmap.mu_at(cell->row, cell->col);
      t.sigma_sum += std::exp(0.5 * costmap.log_var_at(cell->row, cell->col));
    } else {
      ++t.unknown_cells;
    }
  }
  if (!traj.states.empty()) t.goal_distance = distance(traj.states.back().position(), goal);
  for (const auto& u : traj.controls) t.effort += u.v_cmd * u.v_cmd + u.steer * u.steer;
  return t;
}

double combine_cost(const CostTerms& t, const MppiConfig& cfg) {
  return t.mean_sum + cfg.uncertainty_weight * t.sigma_sum + cfg.unknown_cell_cost * t.unknown_cells +
         cfg.goal_weight * t.goal_distance + cfg.effort_weight * t.effort + cfg.boundary_penalty * t.off_world;
}

double trajectory_cost(const Trajectory& traj, const CostMap& costmap, const FeatureGrid& grid, Vec2 goal,
                       const MppiConfig& cfg, const WorldBounds& bounds) {
  return combine_cost(cost_terms(traj, costmap, grid, goal, bounds), cfg);
}

std::vector<double> softmax_weights(std::span<const double> costs, double temperature) {
  if (costs.empty()) return {};
  const double best = *std::min_element(costs.begin(), costs.end());
  std::vector<double> w(costs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    w[i] = std::exp(-(costs[i] - best) / temperature);
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

Plan mppi_update(std::span<const Control> nominal, const MppiConfig& cfg, std::mt19937_64& rng,
                 const SequenceCost& cost) {
  const std::size_t n = nominal.size();
  const auto k = static_cast<std::size_t>(cfg.samples);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<Control>> candidates(k, std::vector<Control>(n));
  Plan plan;
  plan.costs.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t t = 0; t < n; ++t) {
      const double dv = gauss(rng) * cfg.noise_v;
      const double ds = gauss(rng) * cfg.noise_steer;
      candidates[i][t] = Control::clamped(nominal[t].v_cmd + dv, nominal[t].steer + ds);
    }
  }
  for (std::size_t i = 0; i < k; ++i) plan.costs[i] = cost(candidates[i]);
  plan.weights = softmax_weights(plan.costs, cfg.temperature);

  plan.nominal.assign(n, Control{});
  for (std::size_t t = 0; t < n; ++t) {
    double v = 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      v += plan.weights[i] * candidates[i][t].v_cmd;
      s += plan.weights[i] * candidates[i][t].steer;
    }
    plan.nominal[t] = Control::clamped(v, s);
  }
  plan.first = n ? plan.nominal.front() : Control{};
  return plan;
}

Plan mppi_step(const VehicleState& state, const CostMap& costmap, const FeatureGrid& grid, Vec2 goal,
               std::span<const Control> nominal, const MppiConfig& cfg, std::mt19937_64& rng,
               const WorldBounds& bounds) {
  return mppi_update(nominal, cfg, rng, [&](std::span<const Control> u) {
    return trajectory_cost(rollout(state, u, cfg.dt), costmap, grid, goal, cfg, bounds);
  });
}

std::vector<Control> shift_nominal(std::span<const Control> nominal) {
  if (nominal.empty()) return {};
  std::vector<Control> out(nominal.begin() + 1, nominal.end());
  out.push_back(nominal.back());
  return out;
}

std::string to_json(const EpisodeReport& r) {
  nlohmann::ordered_json j;
  j["success"] = r.success;
  j["steps"] = r.steps;
  j["mean_oracle"] = r.mean_oracle;
  j["max_oracle"] = r.max_oracle;
  j["mean_scan_mae"] = r.mean_scan_mae;
  j["termination"] = r.termination;
  return j.dump();
}

namespace {

bool window_inside(const TerrainField& env, Vec2 p, double margin) {
  return env.contains(p.x - margin, p.y - margin) && env.contains(p.x + margin, p.y + margin);
}

void check_endpoints(const TerrainField& env, const NavSetup& setup, Vec2 start, Vec2 goal) {
  const double margin = setup.boundary_margin + setup.oracle_footprint;
  if (!window_inside(env, start, margin)) throw ValidationError("start: needs clearance from the terrain boundary");
  if (!window_inside(env, goal, margin)) throw ValidationError("goal: needs clearance from the terrain boundary");
}

WorldBounds drivable(const TerrainField& env, const NavSetup& setup) {
  const double m = setup.boundary_margin;
  const Vec2 o = env.origin();
  return {{o.x + m, o.y + m}, {o.x + env.extent() - m, o.y + env.extent() - m}};
}

// Accumulates the hazard actually experienced along the executed path.
struct HazardTally {
  double sum = 0.0;
  double max = 0.0;
  int count = 0;

  void add(const TerrainField& env, const VehicleState& s, double footprint) {
    if (!window_inside(env, s.position(), 0.5 * footprint + env.resolution())) return;
    const double y = oracle_label(env, s.position(), footprint);
    sum += y;
    max = std::max(max, y);
    ++count;
  }
};

double scan_mae(const TerrainField& env, const FeatureGrid& grid, const CostMap& map, double footprint) {
  double sum = 0.0;
  int n = 0;
  for (int r = 0; r < grid.size(); ++r) {
    for (int c = 0; c < grid.size(); ++c) {
      if (!grid.observed(r, c)) continue;
      const Vec2 p = grid.cell_center({r, c});
      if (!window_inside(env, p, 0.5 * footprint + env.resolution())) continue;
      sum += std::abs(map.mu_at(r, c) - oracle_label(env, p, footprint));
      ++n;
    }
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

EpisodeReport navigate(const TerrainField& env, const ModelParams& model, const MetaConfig& meta_cfg,
                       const MppiConfig& mppi_cfg, const NavSetup& setup, Vec2 start, Vec2 goal, bool adapt,
                       std::vector<VehicleState>* path) {
  mppi_cfg.validate(setup.grid);
  model.validate();
  check_endpoints(env, setup, start, goal);
  const WorldBounds bounds = drivable(env, setup);

  VehicleState state{start.x, start.y, std::atan2(goal.y - start.y, goal.x - start.x), 0.0};
  state = *settle(state, env);
  std::vector<VehicleState> states{state};
  std::vector<FeatureGrid> grids;
  std::mt19937_64 rng(derive_seed(mppi_cfg.seed_stream, "mppi"));
  std::vector<Control> nominal(static_cast<std::size_t>(mppi_cfg.horizon), Control{setup.cruise_speed, 0.0});
  AdaptBuffer buffer(setup.buffer_capacity);

  EpisodeReport report;
  HazardTally hazard;
  hazard.add(env, state, setup.oracle_footprint);
  double mae_sum = 0.0;
  int mae_scans = 0;
  report.termination = "budget";

  for (int t = 0; t < setup.step_budget; ++t) {
    const FeatureGrid grid = rasterize(scan(env, state, setup.lidar), state, setup.grid);
    grids.push_back(grid);
    const ModelParams local = (adapt && !buffer.empty())
                                  ? online_adapt(model, buffer, meta_cfg.inner_steps, meta_cfg.inner_lr)
                                  : model;
    const CostMap map = forward(local, grid);
    if (const double mae = scan_mae(env, grid, map, setup.oracle_footprint); !std::isnan(mae)) {
      mae_sum += mae;
      ++mae_scans;
    }

    const Plan plan = mppi_step(state, map, grid, goal, nominal, mppi_cfg, rng, bounds);
    const auto next = step(state, plan.first, env, mppi_cfg.dt);
    report.steps = t + 1;
    if (!next || !bounds.contains(next->position())) {
      report.termination = "boundary";
      break;
    }
    state = *next;
    states.push_back(state);
    hazard.add(env, state, setup.oracle_footprint);
    nominal = shift_nominal(plan.nominal);

    // Label the cells crossed since the reference scan and pair them with it.
    const std::size_t newest = states.size() - 1;
    const std::size_t ref = newest > static_cast<std::size_t>(setup.feedback_window)
                                ? newest - static_cast<std::size_t>(setup.feedback_window)
                                : 0;
    const std::size_t first = ref > 0 ? ref - 1 : 0;
    if (newest - first >= 2) {
      const std::span<const VehicleState> segment(states.data() + first, newest - first + 1);
      auto labels = interaction_feedback(segment, env, setup.grid, states[ref], mppi_cfg.dt);
      if (!labels.empty()) buffer.push(TrainBatch{grids[ref], std::move(labels)});
    }

    if (distance(state.position(), goal) <= setup.goal_radius) {
      report.success = true;
      report.termination = "goal";
      break;
    }
  }

  if (path) *path = states;
  report.mean_oracle = hazard.count ? hazard.sum / hazard.count : 0.0;
  report.max_oracle = hazard.max;
  report.mean_scan_mae = mae_scans ? mae_sum / mae_scans : 0.0;
  return report;
}

EpisodeReport navigate_straight(const TerrainField& env, const NavSetup& setup, double dt, Vec2 start, Vec2 goal,
                                std::vector<VehicleState>* path) {
  check_endpoints(env, setup, start, goal);
  const WorldBounds bounds = drivable(env, setup);
  VehicleState state{start.x, start.y, std::atan2(goal.y - start.y, goal.x - start.x), 0.0};
  state = *settle(state, env);
  std::vector<VehicleState> states{state};
  EpisodeReport report;
  HazardTally hazard;
  hazard.add(env, state, setup.oracle_footprint);
  report.termination = "budget";

  for (int t = 0; t < setup.step_budget; ++t) {
    const double bearing = std::atan2(goal.y - state.y, goal.x - state.x);
    const Control u = Control::clamped(setup.cruise_speed, 2.0 * wrap_angle(bearing - state.yaw));
    const auto next = step(state, u, env, dt);
    report.steps = t + 1;
    if (!next || !bounds.contains(next->position())) {
      report.termination = "boundary";
      break;
    }
    state = *next;
    states.push_back(state);
    hazard.add(env, state, setup.oracle_footprint);
    if (distance(state.position(), goal) <= setup.goal_radius) {
      report.success = true;
      report.termination = "goal";
      break;
    }
  }
  if (path) *path = states;
  report.mean_oracle = hazard.count ? hazard.sum / hazard.count : 0.0;
  report.max_oracle = hazard.max;
  return report;
}

}  // namespace trav
