#include "trav/sensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>

namespace trav {

namespace {

constexpr double kBisectionTolerance = 1e-4;

struct CellAccumulator {
  double sum = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int count = 0;
};

}  // namespace

void LidarSpec::validate() const {
  if (azimuth_count < 8) throw ValidationError("azimuth_count: must be >= 8");
  if (elevation_angles_deg.empty()) throw ValidationError("elevation_angles_deg: must not be empty");
  for (std::size_t i = 1; i < elevation_angles_deg.size(); ++i) {
    if (!(elevation_angles_deg[i] > elevation_angles_deg[i - 1]))
      throw ValidationError("elevation_angles_deg: must be strictly increasing");
  }
  if (!(max_range_m > 0.0)) throw ValidationError("max_range_m: must be positive");
  if (!(range_noise_std_m >= 0.0)) throw ValidationError("range_noise_std_m: must be >= 0");
  if (!(dropout_prob >= 0.0 && dropout_prob < 1.0)) throw ValidationError("dropout_prob: must lie in [0, 1)");
  if (!(mount_height_m > 0.0)) throw ValidationError("mount_height_m: must be positive");
}

std::optional<double> cast_ray(const TerrainField& field, const Point3& o, const Point3& d, double max_range) {
  const double step = 0.5 * field.resolution();
  auto below = [&](double t, bool& inside) {
    const double x = o.x + t * d.x;
    const double y = o.y + t * d.y;
    inside = field.contains(x, y);
    return inside && o.z + t * d.z <= field.height_at(x, y);
  };

  bool inside = true;
  if (below(0.0, inside)) return 0.0;
  if (!inside) return std::nullopt;
  double prev = 0.0;
  for (int i = 1;; ++i) {
    const double t = std::min(i * step, max_range);
    if (below(t, inside)) {
      double lo = prev;
      double hi = t;
      while (hi - lo > kBisectionTolerance) {
        const double mid = 0.5 * (lo + hi);
        bool unused = true;
        (below(mid, unused) ? hi : lo) = mid;
      }
      return hi;
    }
    if (!inside || t >= max_range) return std::nullopt;
    prev = t;
  }
}

PointCloud scan(const TerrainField& field, const VehicleState& pose, const LidarSpec& spec) {
  spec.validate();
  if (!field.contains(pose.x, pose.y)) throw RangeError("scan: pose outside terrain");

  std::uint64_t seed = derive_seed(spec.seed_stream, "scan");
  for (double v : {pose.x, pose.y, pose.yaw}) seed = mix64(seed ^ std::bit_cast<std::uint64_t>(v));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Point3 origin{pose.x, pose.y, pose.z + spec.mount_height_m};
  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(spec.azimuth_count) * spec.elevation_angles_deg.size());
  for (double elevation_deg : spec.elevation_angles_deg) {
    const double el = elevation_deg * std::numbers::pi / 180.0;
    for (int a = 0; a < spec.azimuth_count; ++a) {
      const double az = pose.yaw + 2.0 * std::numbers::pi * a / spec.azimuth_count;
      const Point3 dir{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
      // Both draws happen for every ray so realizations stay aligned.
      const double eps = noise(rng) * spec.range_noise_std_m;
      const bool dropped = unit(rng) < spec.dropout_prob;
      const auto range = cast_ray(field, origin, dir, spec.max_range_m);
      if (!range || dropped) continue;
      const double r = *range + eps;
      cloud.points.push_back({origin.x + r * dir.x, origin.y + r * dir.y, origin.z + r * dir.z});
    }
  }
  return cloud;
}

FeatureGrid rasterize(const PointCloud& cloud, const VehicleState& pose, const GridSpec& gspec) {
  FeatureGrid grid(gspec, gspec.origin_for(pose.position()));
  const int h = gspec.size_cells;
  std::vector<CellAccumulator> acc(static_cast<std::size_t>(h) * h);
  for (const Point3& p : cloud.points) {
    const auto cell = grid.cell_of(p.x, p.y);
    if (!cell) continue;
    const double rel = p.z - pose.z;
    auto& a = acc[static_cast<std::size_t>(cell->row) * h + cell->col];
    if (a.count == 0) {
      a.lo = a.hi = rel;
    } else {
      a.lo = std::min(a.lo, rel);
      a.hi = std::max(a.hi, rel);
    }
    a.sum += rel;
    ++a.count;
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < h; ++c) {
      const auto& a = acc[static_cast<std::size_t>(r) * h + c];
      if (a.count > 0) grid.set_cell(r, c, a.sum / a.count, a.hi - a.lo, a.count);
    }
  }
  return grid;
}

}  // namespace trav
