#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "trav/grid.hpp"
#include "trav/terrain.hpp"

namespace trav {

namespace vehicle_limits {
inline constexpr double kWheelbase = 1.0;    // m
inline constexpr double kMaxSpeed = 5.0;     // m/s
inline constexpr double kMaxSteer = 0.5;     // rad
inline constexpr double kMaxAccel = 3.0;     // m/s^2
inline constexpr double kMaxStep = 0.2;      // s
}  // namespace vehicle_limits

// Self-supervised label gains: vertical acceleration (s^2/m) and attitude
// rate (s/rad), calibrated at a 0.05 s step.
inline constexpr double kVerticalAccelGain = 0.25;
inline constexpr double kAttitudeRateGain = 0.5;

/// Planar pose and speed; z, roll and pitch always come from the terrain
/// plane fit under the wheelbase footprint (see `settle`).
struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
  double v = 0.0;
  double z = 0.0;
  double roll = 0.0;
  double pitch = 0.0;

  Vec2 position() const { return {x, y}; }
  bool operator==(const VehicleState&) const = default;
};

struct Control {
  double v_cmd = 0.0;
  double steer = 0.0;

  /// Clamps into [0, v_max] x [-steer_max, steer_max].
  static Control clamped(double v_cmd, double steer);
  bool operator==(const Control&) const = default;
};

struct InteractionSample {
  CellIndex cell;
  double label = 0.0;
  double weight = 1.0;

  bool operator==(const InteractionSample&) const = default;
};

/// Kinematic bicycle update ignoring terrain; z, roll and pitch are zeroed.
VehicleState kinematic_step(const VehicleState& state, const Control& u, double dt);

/// Re-derives z, roll and pitch from a least-squares plane fit over the
/// footprint. Returns nullopt when the footprint leaves the terrain.
std::optional<VehicleState> settle(const VehicleState& state, const TerrainField& field);

/// One simulation step. nullopt signals a boundary event.
std::optional<VehicleState> step(const VehicleState& state, const Control& u, const TerrainField& field, double dt);

/// Per-cell labels 1 - exp(-(w1 |z''| + w2 (|roll'| + |pitch'|))), max-aggregated
/// over the interior states of `traj` that fall inside the grid anchored at
/// `scan_pose`. Attitude is re-derived from `field` for every pose, so only
/// the planar pose sequence matters. Output is sorted by cell.
std::vector<InteractionSample> interaction_feedback(std::span<const VehicleState> traj, const TerrainField& field,
                                                    const GridSpec& gspec, const VehicleState& scan_pose, double dt);

/// "t x y yaw v z roll pitch" per line.
void write_episode_log(std::ostream& out, std::span<const VehicleState> traj, double dt);

}  // namespace trav
