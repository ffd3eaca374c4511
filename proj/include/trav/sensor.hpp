#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "trav/grid.hpp"
#include "trav/terrain.hpp"
#include "trav/vehicle.hpp"

namespace trav {

struct LidarSpec {
  int azimuth_count = 180;
  std::vector<double> elevation_angles_deg{-60.0, -45.0, -35.0, -28.0, -22.0, -17.0, -13.0,
                                           -10.0, -7.5,  -5.5,  -4.0,  -2.5,  -1.0,  2.0};
  double max_range_m = 12.0;
  double range_noise_std_m = 0.01;
  double dropout_prob = 0.1;
  double mount_height_m = 1.0;
  std::uint64_t seed_stream = 0;

  void validate() const;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool operator==(const Point3&) const = default;
};

struct PointCloud {
  std::vector<Point3> points;
};

/// Range to the first heightfield intersection along a ray, or nullopt when
/// the ray leaves the terrain or exceeds `max_range` first. Coarse march at
/// half the field resolution, refined by bisection to 1e-4 m.
std::optional<double> cast_ray(const TerrainField& field, const Point3& origin, const Point3& direction,
                               double max_range);

/// Simulated sparse scan from `pose`; azimuths are relative to the vehicle
/// heading, elevations relative to the horizontal plane.
PointCloud scan(const TerrainField& field, const VehicleState& pose, const LidarSpec& spec);

FeatureGrid rasterize(const PointCloud& cloud, const VehicleState& pose, const GridSpec& gspec);

}  // namespace trav
