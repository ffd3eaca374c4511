#include "trav/grid.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace trav {

void GridSpec::validate() const {
  if (size_cells <= 0) throw ValidationError("size_cells: must be positive");
  if (!(cell_m > 0.0) || !std::isfinite(cell_m)) throw ValidationError("cell_m: must be positive");
}

FeatureGrid::FeatureGrid(GridSpec spec, Vec2 origin) : spec_(spec), origin_(origin) {
  spec_.validate();
  const auto n = static_cast<std::size_t>(spec_.size_cells) * spec_.size_cells;
  mask_.assign(n, 0);
  mean_.assign(n, 0.0);
  range_.assign(n, 0.0);
  count_.assign(n, 0);
}

std::optional<CellIndex> FeatureGrid::cell_of(double x, double y) const {
  const double u = std::floor((x - origin_.x) / spec_.cell_m);
  const double v = std::floor((y - origin_.y) / spec_.cell_m);
  if (!(u >= 0.0 && v >= 0.0 && u < spec_.size_cells && v < spec_.size_cells)) return std::nullopt;
  return CellIndex{static_cast<int>(v), static_cast<int>(u)};
}

Vec2 FeatureGrid::cell_center(CellIndex cell) const {
  return {origin_.x + (cell.col + 0.5) * spec_.cell_m, origin_.y + (cell.row + 0.5) * spec_.cell_m};
}

double FeatureGrid::channel_value(int channel, std::size_t i) const {
  switch (channel) {
    case 0: return mask_[i];
    case 1: return kHeightScale * mean_[i];
    case 2: return kHeightScale * range_[i];
    case 3: return std::log1p(static_cast<double>(count_[i])) / std::log1p(static_cast<double>(kCountCap));
    default: throw ValidationError("channel: must lie in [0, 4)");
  }
}

double FeatureGrid::feature(int channel, int row, int col) const { return channel_value(channel, index(row, col)); }

std::vector<double> FeatureGrid::input_tensor() const {
  std::vector<double> t(mask_.size() * kChannels);
  for (std::size_t i = 0; i < mask_.size(); ++i) {
    for (int ch = 0; ch < kChannels; ++ch) t[i * kChannels + ch] = channel_value(ch, i);
  }
  return t;
}

void FeatureGrid::set_cell(int row, int col, double mean_height, double height_range, int count) {
  if (count < 1) throw ValidationError("count: an observed cell needs at least one point");
  const auto i = index(row, col);
  mask_[i] = 1;
  mean_[i] = mean_height;
  range_[i] = height_range;
  count_[i] = static_cast<std::uint16_t>(std::min(count, kCountCap));
}

void FeatureGrid::clear_cell(int row, int col) {
  const auto i = index(row, col);
  mask_[i] = 0;
  mean_[i] = 0.0;
  range_[i] = 0.0;
  count_[i] = 0;
}

bool FeatureGrid::same_features(const FeatureGrid& other) const {
  return spec_.size_cells == other.spec_.size_cells && spec_.cell_m == other.spec_.cell_m &&
         mask_ == other.mask_ && mean_ == other.mean_ && range_ == other.range_ && count_ == other.count_;
}

void write_feature_grid(std::ostream& out, const FeatureGrid& grid) {
  const int h = grid.size();
  out << std::setprecision(17) << "FGRID v1 " << h << ' ' << FeatureGrid::kChannels << '\n';
  for (int ch = 0; ch < FeatureGrid::kChannels; ++ch) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < h; ++c) {
        if (c) out << ' ';
        switch (ch) {
          case 0: out << (grid.observed(r, c) ? 1 : 0); break;
          case 1: out << grid.mean_height(r, c); break;
          case 2: out << grid.height_range(r, c); break;
          default: out << grid.point_count(r, c); break;
        }
      }
      out << '\n';
    }
  }
}

}  // namespace trav
