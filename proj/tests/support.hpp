#pragma once

// Shared fixtures and brute-force reference implementations for the tests.
// Nothing here calls into the code under test except for plain accessors.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "trav/costnet.hpp"
#include "trav/grid.hpp"
#include "trav/terrain.hpp"

namespace testing {

using namespace trav;

inline TerrainField flat_field(int cells = 64, double res = 0.25, double z = 0.0) {
  return TerrainField(cells, res, Vec2{0.0, 0.0},
                      std::vector<double>(static_cast<std::size_t>(cells + 1) * (cells + 1), z));
}

template <typename F>
TerrainField field_from(int cells, double res, F&& f) {
  std::vector<double> h;
  for (int r = 0; r <= cells; ++r) {
    for (int c = 0; c <= cells; ++c) h.push_back(f(c * res, r * res));
  }
  return TerrainField(cells, res, Vec2{0.0, 0.0}, std::move(h));
}

// Sum of the four corner heights weighted by tent functions.
inline double tent_height(const TerrainField& f, double x, double y) {
  const double res = f.resolution();
  const double u = (x - f.origin().x) / res;
  const double v = (y - f.origin().y) / res;
  double h = 0.0;
  for (int r = 0; r <= f.cells(); ++r) {
    const double wy = 1.0 - std::abs(v - r);
    if (wy <= 0.0) continue;
    for (int c = 0; c <= f.cells(); ++c) {
      const double wx = 1.0 - std::abs(u - c);
      if (wx > 0.0) h += f.node(r, c) * wx * wy;
    }
  }
  return h;
}

inline FeatureGrid random_grid(std::mt19937_64& rng, int size, double fill = 0.6) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FeatureGrid g(GridSpec{size, 0.5}, Vec2{0.0, 0.0});
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      if (u(rng) < fill) g.set_cell(r, c, u(rng) - 0.5, 0.4 * u(rng), 1 + static_cast<int>(20 * u(rng)));
    }
  }
  return g;
}

inline TrainBatch random_batch(std::mt19937_64& rng, int size, int n_samples) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cell(0, size - 1);
  TrainBatch b{random_grid(rng, size), {}};
  for (int i = 0; i < n_samples; ++i) b.samples.push_back({{cell(rng), cell(rng)}, u(rng), 0.5 + u(rng)});
  return b;
}

inline ModelParams random_params(std::mt19937_64& rng, const ArchDescriptor& arch, double scale = 0.5) {
  std::normal_distribution<double> n(0.0, scale);
  ModelParams p{arch, std::vector<double>(arch.param_count())};
  for (auto& v : p.theta) v = n(rng);
  return p;
}

// Straight-loop network evaluation: dense k*k*C input including zeros, fresh
// index arithmetic for the weight layout.
struct RefOut {
  double mu;
  double log_var;
};

inline RefOut reference_cell(const ModelParams& p, const FeatureGrid& g, int row, int col) {
  const int k = p.arch.patch;
  const int C = p.arch.channels_in;
  std::vector<double> x(static_cast<std::size_t>(k) * k * C, 0.0);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      const int r = row + a - k / 2;
      const int c = col + b - k / 2;
      if (r < 0 || c < 0 || r >= g.size() || c >= g.size()) continue;
      for (int ch = 0; ch < C; ++ch) x[(a * k + b) * C + ch] = g.feature(ch, r, c);
    }
  }
  std::vector<int> widths = p.arch.hidden;
  widths.push_back(2);
  std::size_t off = 0;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const int n_in = static_cast<int>(x.size());
    const int n_out = widths[l];
    std::vector<double> y(n_out);
    for (int o = 0; o < n_out; ++o) {
      double s = p.theta[off + static_cast<std::size_t>(n_out) * n_in + o];
      for (int i = 0; i < n_in; ++i) s += p.theta[off + static_cast<std::size_t>(o) * n_in + i] * x[i];
      y[o] = l + 1 < widths.size() ? std::tanh(s) : s;
    }
    off += static_cast<std::size_t>(n_out) * n_in + n_out;
    x = y;
  }
  const double mu = 1.0 / (1.0 + std::exp(-x[0]));
  const double lv = -6.0 + 8.0 / (1.0 + std::exp(-x[1]));
  return {mu, lv};
}

inline double reference_nll(const ModelParams& p, const std::vector<TrainBatch>& batches) {
  double num = 0.0, den = 0.0;
  for (const auto& b : batches) {
    for (const auto& s : b.samples) {
      const auto o = reference_cell(p, b.grid, s.cell.row, s.cell.col);
      const double var = std::exp(o.log_var);
      num += s.weight * ((s.label - o.mu) * (s.label - o.mu) / (2.0 * var) + 0.5 * std::log(var));
      den += s.weight;
    }
  }
  return num / den;
}

// Average ranks, ties share the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) r[idx[t]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i] / n;
    mb += rb[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace testing
