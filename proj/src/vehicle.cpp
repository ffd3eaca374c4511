#include "trav/vehicle.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <ostream>

namespace trav {

using namespace vehicle_limits;

Control Control::clamped(double v_cmd, double steer) {
  return {std::clamp(v_cmd, 0.0, kMaxSpeed), std::clamp(steer, -kMaxSteer, kMaxSteer)};
}

VehicleState kinematic_step(const VehicleState& s, const Control& u, double dt) {
  VehicleState next;
  next.x = s.x + s.v * std::cos(s.yaw) * dt;
  next.y = s.y + s.v * std::sin(s.yaw) * dt;
  next.yaw = wrap_angle(s.yaw + (s.v / kWheelbase) * std::tan(u.steer) * dt);
  next.v = s.v + std::clamp(u.v_cmd - s.v, -kMaxAccel * dt, kMaxAccel * dt);
  return next;
}

std::optional<VehicleState> settle(const VehicleState& state, const TerrainField& field) {
  // 9x9 samples over a wheelbase-sized square in the body frame. The design
  // is symmetric, so the least-squares plane decouples into means.
  constexpr int kN = 4;
  constexpr double kHalf = 0.5 * kWheelbase;
  const double c = std::cos(state.yaw);
  const double s = std::sin(state.yaw);
  double sum = 0.0;
  double sum_fwd = 0.0;
  double sum_left = 0.0;
  double sq = 0.0;
  for (int i = -kN; i <= kN; ++i) {
    for (int j = -kN; j <= kN; ++j) {
      const double fwd = i * kHalf / kN;
      const double left = j * kHalf / kN;
      const double wx = state.x + c * fwd - s * left;
      const double wy = state.y + s * fwd + c * left;
      if (!field.contains(wx, wy)) return std::nullopt;
      const double h = field.height_at(wx, wy);
      sum += h;
      sum_fwd += fwd * h;
      sum_left += left * h;
      sq += fwd * fwd;
    }
  }
  const double n = (2.0 * kN + 1) * (2.0 * kN + 1);
  VehicleState out = state;
  out.z = sum / n;
  out.pitch = std::atan(sum_fwd / sq);
  out.roll = std::atan(sum_left / sq);
  return out;
}

std::optional<VehicleState> step(const VehicleState& state, const Control& u, const TerrainField& field,
                                 double dt) {
  if (!(dt > 0.0 && dt <= kMaxStep)) throw ValidationError("dt: must lie in (0, 0.2]");
  return settle(kinematic_step(state, u, dt), field);
}

std::vector<InteractionSample> interaction_feedback(std::span<const VehicleState> traj, const TerrainField& field,
                                                    const GridSpec& gspec, const VehicleState& scan_pose,
                                                    double dt) {
  if (traj.size() < 3) throw ValidationError("traj: interaction feedback needs at least 3 states");
  if (!(dt > 0.0)) throw ValidationError("dt: must be positive");
  const FeatureGrid frame(gspec, gspec.origin_for(scan_pose.position()));

  std::vector<VehicleState> poses;
  poses.reserve(traj.size());
  for (const auto& s : traj) {
    auto settled = settle(s, field);
    if (!settled) throw RangeError("interaction_feedback: trajectory leaves the terrain");
    poses.push_back(*settled);
  }

  std::map<CellIndex, double> worst;
  for (std::size_t i = 1; i + 1 < poses.size(); ++i) {
    const auto cell = frame.cell_of(poses[i].x, poses[i].y);
    if (!cell) continue;
    const double z_acc = (poses[i + 1].z - 2.0 * poses[i].z + poses[i - 1].z) / (dt * dt);
    const double roll_rate = (poses[i].roll - poses[i - 1].roll) / dt;
    const double pitch_rate = (poses[i].pitch - poses[i - 1].pitch) / dt;
    const double label = 1.0 - std::exp(-(kVerticalAccelGain * std::abs(z_acc) +
                                          kAttitudeRateGain * (std::abs(roll_rate) + std::abs(pitch_rate))));
    auto [it, inserted] = worst.try_emplace(*cell, label);
    if (!inserted) it->second = std::max(it->second, label);
  }

  std::vector<InteractionSample> out;
  out.reserve(worst.size());
  for (const auto& [cell, label] : worst) out.push_back({cell, label, 1.0});
  return out;
}

void write_episode_log(std::ostream& out, std::span<const VehicleState> traj, double dt) {
  out << std::setprecision(17);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const auto& s = traj[i];
    out << static_cast<double>(i) * dt << ' ' << s.x << ' ' << s.y << ' ' << s.yaw << ' ' << s.v << ' ' << s.z
        << ' ' << s.roll << ' ' << s.pitch << '\n';
  }
}

}  // namespace trav
