#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trav/costnet.hpp"
#include "trav/meta.hpp"
#include "trav/sensor.hpp"

namespace trav {

struct MppiConfig {
  int horizon = 30;
  double dt = 0.05;
  int samples = 256;
  double temperature = 1.0;
  double noise_v = 0.6;
  double noise_steer = 0.25;
  double goal_weight = 4.0;
  double effort_weight = 0.01;
  double uncertainty_weight = 0.5;
  double unknown_cell_cost = 0.7;
  double boundary_penalty = 50.0;
  std::uint64_t seed_stream = 0;

  /// Also checks that the horizon stays on a grid of `gspec`.
  void validate(const GridSpec& gspec) const;
};

/// Axis-aligned rectangle of drivable world; poses outside pay the boundary
/// penalty.
struct WorldBounds {
  Vec2 lo{-1e300, -1e300};
  Vec2 hi{1e300, 1e300};

  bool contains(Vec2 p) const { return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y; }
};

struct Trajectory {
  std::vector<VehicleState> states;  // one per control, after applying it
  std::vector<Control> controls;
};

struct Plan {
  std::vector<Control> nominal;
  std::vector<double> costs;
  std::vector<double> weights;
  Control first;
};

/// Applies the kinematic model on a flat virtual plane.
Trajectory rollout(const VehicleState& state, std::span<const Control> controls, double dt);

/// Additive pieces of the trajectory cost, before weighting.
struct CostTerms {
  double mean_sum = 0.0;       // sum of predicted mu over known cells
  double sigma_sum = 0.0;      // sum of predicted std over known cells
  int unknown_cells = 0;       // poses over unobserved or off-grid cells
  int off_world = 0;           // poses outside the world bounds
  double goal_distance = 0.0;  // final pose to goal
  double effort = 0.0;         // sum of |u|^2
};

CostTerms cost_terms(const Trajectory& traj, const CostMap& costmap, const FeatureGrid& grid, Vec2 goal,
                     const WorldBounds& bounds = {});
double combine_cost(const CostTerms& terms, const MppiConfig& cfg);
double trajectory_cost(const Trajectory& traj, const CostMap& costmap, const FeatureGrid& grid, Vec2 goal,
                       const MppiConfig& cfg, const WorldBounds& bounds = {});

/// Normalized exp(-(c - min c) / temperature).
std::vector<double> softmax_weights(std::span<const double> costs, double temperature);

using SequenceCost = std::function<double(std::span<const Control>)>;

/// One MPPI update against an arbitrary sequence cost. Draws K perturbation
/// sequences from `rng`, weights them and returns the averaged nominal.
Plan mppi_update(std::span<const Control> nominal, const MppiConfig& cfg, std::mt19937_64& rng,
                 const SequenceCost& cost);

Plan mppi_step(const VehicleState& state, const CostMap& costmap, const FeatureGrid& grid, Vec2 goal,
               std::span<const Control> nominal, const MppiConfig& cfg, std::mt19937_64& rng,
               const WorldBounds& bounds = {});

/// Shifts a nominal one step forward, repeating the last control.
std::vector<Control> shift_nominal(std::span<const Control> nominal);

struct NavSetup {
  LidarSpec lidar;
  GridSpec grid;
  int step_budget = 600;
  double goal_radius = 1.0;
  double oracle_footprint = 1.0;
  double cruise_speed = 2.5;   // initial nominal speed, and the baseline's speed
  std::size_t buffer_capacity = 8;
  int feedback_window = 10;    // control steps between a scan and its labels
  double boundary_margin = 1.5;
};

struct EpisodeReport {
  bool success = false;
  int steps = 0;
  double mean_oracle = 0.0;
  double max_oracle = 0.0;
  double mean_scan_mae = 0.0;
  std::string termination;

  bool operator==(const EpisodeReport&) const = default;
};

std::string to_json(const EpisodeReport& report);

/// Closed loop: scan, rasterize, predict (optionally after online adaptation),
/// plan, act. `path` receives the executed states when non-null.
EpisodeReport navigate(const TerrainField& env, const ModelParams& model, const MetaConfig& meta_cfg,
                       const MppiConfig& mppi_cfg, const NavSetup& setup, Vec2 start, Vec2 goal, bool adapt,
                       std::vector<VehicleState>* path = nullptr);

/// Pure-pursuit toward the goal at cruise speed, blind to the terrain.
EpisodeReport navigate_straight(const TerrainField& env, const NavSetup& setup, double dt, Vec2 start, Vec2 goal,
                                std::vector<VehicleState>* path = nullptr);

}  // namespace trav
