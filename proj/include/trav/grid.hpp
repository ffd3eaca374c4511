#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "trav/common.hpp"

namespace trav {

struct CellIndex {
  int row = 0;
  int col = 0;

  auto operator<=>(const CellIndex&) const = default;
};

/// Vehicle-centred, world-axis-aligned H x H raster.
struct GridSpec {
  int size_cells = 32;
  double cell_m = 0.5;

  void validate() const;
  double extent() const { return size_cells * cell_m; }
  /// Lower-left corner of the grid anchored at `anchor`.
  Vec2 origin_for(Vec2 anchor) const {
    return {anchor.x - 0.5 * extent(), anchor.y - 0.5 * extent()};
  }
};

/// Rasterized point-cloud statistics. Heights are relative to the vehicle.
/// Cells are half-open: a point on a shared edge belongs to the higher index.
class FeatureGrid {
 public:
  static constexpr int kChannels = 4;  // mask, mean height, height range, log1p(count)
  static constexpr int kCountCap = 255;
  // Network inputs: heights in decimetres, log1p(count) divided by its value
  // at the cap, so every channel is O(1).
  static constexpr double kHeightScale = 10.0;

  FeatureGrid() = default;
  FeatureGrid(GridSpec spec, Vec2 origin);

  int size() const { return spec_.size_cells; }
  const GridSpec& spec() const { return spec_; }
  Vec2 origin() const { return origin_; }

  std::optional<CellIndex> cell_of(double x, double y) const;
  Vec2 cell_center(CellIndex cell) const;
  bool in_range(CellIndex cell) const {
    return cell.row >= 0 && cell.row < size() && cell.col >= 0 && cell.col < size();
  }

  bool observed(int row, int col) const { return mask_[index(row, col)] != 0; }
  double mean_height(int row, int col) const { return mean_[index(row, col)]; }
  double height_range(int row, int col) const { return range_[index(row, col)]; }
  int point_count(int row, int col) const { return count_[index(row, col)]; }

  /// Network input value of `channel` at a cell (scaled as above).
  double feature(int channel, int row, int col) const;
  /// Row-major [row][col][channel] network input tensor.
  std::vector<double> input_tensor() const;

  /// Sets an observed cell; count is saturated at kCountCap.
  void set_cell(int row, int col, double mean_height, double height_range, int count);
  void clear_cell(int row, int col);

  /// Compares features and shape, ignoring the world anchor.
  bool same_features(const FeatureGrid& other) const;
  bool operator==(const FeatureGrid& other) const { return same_features(other) && origin_ == other.origin_; }

 private:
  std::size_t index(int row, int col) const { return static_cast<std::size_t>(row) * spec_.size_cells + col; }
  double channel_value(int channel, std::size_t i) const;

  GridSpec spec_{};
  Vec2 origin_{};
  std::vector<std::uint8_t> mask_;
  std::vector<double> mean_;
  std::vector<double> range_;
  std::vector<std::uint16_t> count_;
};

/// "FGRID v1 H C" header, then C channels of H rows (mask, mean height,
/// height range, raw point count).
void write_feature_grid(std::ostream& out, const FeatureGrid& grid);

}  // namespace trav
