#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "trav/common.hpp"

namespace trav {

enum class TerrainFamily { Flat, Rolling, Rough, Boulders, Slope };

std::string to_string(TerrainFamily family);
TerrainFamily terrain_family_from_string(const std::string& name);

/// Parameters of a procedurally generated world.
///
/// For Boulders, `amplitude_m` is the boulder height and `correlation_length_m`
/// the boulder footprint radius. For Slope, the plane rises `amplitude_m`
/// across the full extent, on top of low rolling noise.
struct TerrainSpec {
  TerrainFamily family = TerrainFamily::Flat;
  double extent_m = 48.0;
  double base_resolution_m = 0.25;
  double amplitude_m = 0.0;
  double correlation_length_m = 4.0;
  double obstacle_density = 0.0;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the first violated field.
  void validate() const;
  int node_cells() const;
};

/// Square heightmap with (N+1)x(N+1) nodes; node (row, col) sits at
/// origin + (col, row) * resolution.
class TerrainField {
 public:
  TerrainField(int cells, double resolution_m, Vec2 origin, std::vector<double> heights);

  int cells() const { return cells_; }
  int nodes_per_side() const { return cells_ + 1; }
  double resolution() const { return resolution_; }
  Vec2 origin() const { return origin_; }
  double extent() const { return cells_ * resolution_; }
  double node(int row, int col) const { return heights_[static_cast<std::size_t>(row) * (cells_ + 1) + col]; }
  std::span<const double> heights() const { return heights_; }

  bool contains(double x, double y) const;
  /// Bilinear interpolation; throws RangeError outside the extent.
  double height_at(double x, double y) const;

  bool operator==(const TerrainField&) const = default;

 private:
  int cells_;
  double resolution_;
  Vec2 origin_;
  std::vector<double> heights_;
};

TerrainField generate_terrain(const TerrainSpec& spec);

inline double height_at(const TerrainField& field, double x, double y) { return field.height_at(x, y); }

// Hazard gains of the ground-truth label, per unit slope and per meter of
// height standard deviation.
inline constexpr double kOracleSlopeGain = 2.0;
inline constexpr double kOracleRoughnessGain = 4.0;

/// Ground-truth traversability of a footprint_m x footprint_m window centred
/// at `center`: 1 - exp(-(k1 * mean|grad h| + k2 * std(h))), with the window
/// sampled at the field resolution.
double oracle_label(const TerrainField& field, Vec2 center, double footprint_m);

/// Text dump: "TERRAIN v1 N resolution origin_x origin_y" then N+1 rows.
void write_terrain(std::ostream& out, const TerrainField& field);
TerrainField read_terrain(std::istream& in);

}  // namespace trav
