#include "doctest.h"
#include "support.hpp"
#include "trav/control.hpp"

using namespace trav;
using namespace testing;

namespace {

const GridSpec kGrid{32, 0.5};
const Vec2 kOrigin{-8.0, -8.0};

// Every cell observed, heights zero.
FeatureGrid full_grid() {
  FeatureGrid g(kGrid, kOrigin);
  for (int r = 0; r < kGrid.size_cells; ++r) {
    for (int c = 0; c < kGrid.size_cells; ++c) g.set_cell(r, c, 0.0, 0.0, 3);
  }
  return g;
}

CostMap uniform_map(double mu, double log_var) {
  const auto n = static_cast<std::size_t>(kGrid.size_cells) * kGrid.size_cells;
  return {kGrid.size_cells, std::vector<double>(n, mu), std::vector<double>(n, log_var)};
}

void set_mu(CostMap& m, int row, int col, double mu) { m.mu[static_cast<std::size_t>(row) * m.size + col] = mu; }

// Own cell arithmetic, dense loop over poses.
double brute_cost(const Trajectory& t, const CostMap& m, const FeatureGrid& g, Vec2 goal, const MppiConfig& cfg) {
  double j = 0.0;
  for (const auto& s : t.states) {
    const int col = static_cast<int>(std::floor((s.x - kOrigin.x) / kGrid.cell_m));
    const int row = static_cast<int>(std::floor((s.y - kOrigin.y) / kGrid.cell_m));
    const bool inside = row >= 0 && col >= 0 && row < kGrid.size_cells && col < kGrid.size_cells;
    if (inside && g.observed(row, col)) {
      const std::size_t i = static_cast<std::size_t>(row) * kGrid.size_cells + col;
      j += m.mu[i] + cfg.uncertainty_weight * std::exp(m.log_var[i] / 2.0);
    } else {
      j += cfg.unknown_cell_cost;
    }
  }
  const auto& last = t.states.back();
  j += cfg.goal_weight * std::hypot(last.x - goal.x, last.y - goal.y);
  for (const auto& u : t.controls) j += cfg.effort_weight * (u.v_cmd * u.v_cmd + u.steer * u.steer);
  return j;
}

std::vector<Control> constant(int n, double v, double steer) { return std::vector<Control>(n, Control{v, steer}); }

double dist(std::span<const Control> a, std::span<const Control> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += (a[i].v_cmd - b[i].v_cmd) * (a[i].v_cmd - b[i].v_cmd) + (a[i].steer - b[i].steer) * (a[i].steer - b[i].steer);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("mppi config validation") {
  MppiConfig c;
  c.validate(kGrid);
  c.dt = 0.1;  // 30 * 0.1 * 5 = 15 m leaves the 8 m half window
  CHECK_THROWS_WITH_AS(c.validate(kGrid), doctest::Contains("horizon"), ValidationError);
  c = {};
  c.samples = 0;
  CHECK_THROWS_AS(c.validate(kGrid), ValidationError);
  c = {};
  c.temperature = 0.0;
  CHECK_THROWS_WITH_AS(c.validate(kGrid), doctest::Contains("temperature"), ValidationError);
  c = {};
  c.unknown_cell_cost = -1.0;
  CHECK_THROWS_AS(c.validate(kGrid), ValidationError);
}

TEST_CASE("rollout from rest with zero controls stays put") {
  const VehicleState s{1.0, 2.0, 0.3, 0.0};
  const auto t = rollout(s, constant(20, 0.0, 0.0), 0.05);
  REQUIRE(t.states.size() == 20);
  for (const auto& p : t.states) {
    CHECK(p.x == 1.0);
    CHECK(p.y == 2.0);
    CHECK(p.v == 0.0);
  }
}

TEST_CASE("rollout at constant speed gives evenly spaced collinear poses") {
  const VehicleState s{0.0, 0.0, 0.7, 2.0};
  const auto t = rollout(s, constant(25, 2.0, 0.0), 0.05);
  for (std::size_t i = 0; i < t.states.size(); ++i) {
    const double d = 2.0 * 0.05 * static_cast<double>(i + 1);
    CHECK(t.states[i].x == doctest::Approx(d * std::cos(0.7)).epsilon(1e-12));
    CHECK(t.states[i].y == doctest::Approx(d * std::sin(0.7)).epsilon(1e-12));
  }
}

TEST_CASE("rollout matches a step-by-step bicycle recomputation") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> v(0.0, 5.0), st(-0.5, 0.5);
  std::vector<Control> u;
  for (int i = 0; i < 40; ++i) u.push_back({v(rng), st(rng)});
  const VehicleState s0{3.0, -1.0, -2.0, 1.0};
  const auto t = rollout(s0, u, 0.05);
  double x = 3.0, y = -1.0, yaw = -2.0, sp = 1.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double nx = x + sp * std::cos(yaw) * 0.05;
    const double ny = y + sp * std::sin(yaw) * 0.05;
    const double nyaw = yaw + sp * std::tan(u[i].steer) * 0.05;  // wheelbase 1
    const double dv = std::max(-0.15, std::min(0.15, u[i].v_cmd - sp));
    x = nx, y = ny, yaw = nyaw, sp += dv;
    CHECK(t.states[i].x == doctest::Approx(x).epsilon(1e-12));
    CHECK(t.states[i].y == doctest::Approx(y).epsilon(1e-12));
    CHECK(std::abs(wrap_angle(t.states[i].yaw - yaw)) < 1e-12);
    CHECK(t.states[i].v == doctest::Approx(sp).epsilon(1e-12));
  }
}

TEST_CASE("trajectory parked at the goal pays only the residual uncertainty") {
  const MppiConfig cfg;
  const Vec2 goal{1.0, 1.0};
  const int n = cfg.horizon;
  Trajectory t;
  t.states.assign(n, VehicleState{goal.x, goal.y, 0.0, 0.0});
  t.controls.assign(n, Control{});
  const double j = trajectory_cost(t, uniform_map(0.0, kLogVarMin), full_grid(), goal, cfg);
  CHECK(j == doctest::Approx(cfg.uncertainty_weight * std::exp(kLogVarMin / 2.0) * n).epsilon(1e-12));
}

TEST_CASE("raising one traversed cell by delta raises the cost by delta") {
  const MppiConfig cfg;
  const auto grid = full_grid();
  CostMap map = uniform_map(0.2, -1.0);
  // 0.6 m per step along x lands in each 0.5 m cell at most once.
  const auto t = rollout(VehicleState{-6.0, 0.1, 0.0, 4.0}, constant(20, 4.0, 0.0), 0.15);
  const double before = trajectory_cost(t, map, grid, {5.0, 0.0}, cfg);
  const auto cell = *grid.cell_of(t.states[4].x, t.states[4].y);
  int visits = 0;
  for (const auto& s : t.states) visits += grid.cell_of(s.x, s.y) == cell;
  REQUIRE(visits == 1);
  set_mu(map, cell.row, cell.col, 0.2 + 0.37);
  CHECK(trajectory_cost(t, map, grid, {5.0, 0.0}, cfg) - before == doctest::Approx(0.37).epsilon(1e-12));
}

TEST_CASE("unknown, off-window and off-world poses are charged") {
  MppiConfig cfg;
  FeatureGrid grid = full_grid();
  FeatureGrid sparse(kGrid, kOrigin);
  const auto map = uniform_map(0.1, 0.0);
  Trajectory t;
  t.states = {VehicleState{0.2, 0.2}, VehicleState{30.0, 0.0}};
  t.controls.assign(2, Control{});
  const auto a = cost_terms(t, map, grid, {0.2, 0.2});
  CHECK(a.unknown_cells == 1);
  CHECK(a.mean_sum == doctest::Approx(0.1));
  const auto b = cost_terms(t, map, sparse, {0.2, 0.2});
  CHECK(b.unknown_cells == 2);
  const auto c = cost_terms(t, map, grid, {0.2, 0.2}, WorldBounds{{-1.0, -1.0}, {1.0, 1.0}});
  CHECK(c.off_world == 1);
  CHECK(combine_cost(c, cfg) - combine_cost(a, cfg) == doctest::Approx(cfg.boundary_penalty));
}

TEST_CASE("ridge crossing ranks against a detour as a brute-force cell sum says") {
  const MppiConfig cfg;
  const auto grid = full_grid();
  CostMap map = uniform_map(0.05, -3.0);
  // Ridge across x in [1, 2), y in [-4, 4).
  for (int r = 8; r < 24; ++r) {
    for (int c = 18; c < 20; ++c) set_mu(map, r, c, 0.95);
  }
  const Vec2 goal{6.0, 0.0};
  const VehicleState s{-4.0, 0.0, 0.0, 3.0};
  const auto through = rollout(s, constant(30, 3.0, 0.0), 0.1);
  std::vector<Control> around = constant(30, 3.0, 0.0);
  for (int i = 0; i < 8; ++i) around[i].steer = 0.45;
  for (int i = 8; i < 22; ++i) around[i].steer = -0.2;
  const auto detour = rollout(s, around, 0.1);
  const double jt = trajectory_cost(through, map, grid, goal, cfg);
  const double jd = trajectory_cost(detour, map, grid, goal, cfg);
  CHECK(jt == doctest::Approx(brute_cost(through, map, grid, goal, cfg)).epsilon(1e-12));
  CHECK(jd == doctest::Approx(brute_cost(detour, map, grid, goal, cfg)).epsilon(1e-12));
  CHECK((jt < jd) == (brute_cost(through, map, grid, goal, cfg) < brute_cost(detour, map, grid, goal, cfg)));
}

TEST_CASE("softmax weights normalise and ignore a common shift") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> q(0, 1 << 14);
  std::vector<double> costs;
  for (int i = 0; i < 256; ++i) costs.push_back(q(rng) / 1024.0);  // dyadic, so shifts stay exact
  const auto w = softmax_weights(costs, 0.7);
  double sum = 0.0;
  for (double v : w) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  for (double shift : {1.0, 4096.0, -37.0}) {
    auto shifted = costs;
    for (auto& c : shifted) c += shift;
    CHECK(softmax_weights(shifted, 0.7) == w);
  }
  CHECK(softmax_weights(std::vector<double>{1e6, 1e6 + 1}, 1.0)[0] > 0.7);  // no overflow
}

TEST_CASE("mppi step weights sum to one") {
  MppiConfig cfg;
  const auto grid = full_grid();
  const auto map = uniform_map(0.3, -2.0);
  std::mt19937_64 rng(6);
  auto nominal = constant(cfg.horizon, 2.0, 0.0);
  for (int i = 0; i < 5; ++i) {
    const auto plan = mppi_step(VehicleState{0, 0, 0, 2.0}, map, grid, {6.0, 2.0}, nominal, cfg, rng);
    double sum = 0.0;
    for (double w : plan.weights) sum += w;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(plan.costs.size() == static_cast<std::size_t>(cfg.samples));
    CHECK(plan.first == plan.nominal.front());
    for (const auto& u : plan.nominal) CHECK(u == Control::clamped(u.v_cmd, u.steer));
    nominal = shift_nominal(plan.nominal);
  }
}

TEST_CASE("a single sample becomes the new nominal") {
  MppiConfig cfg;
  cfg.samples = 1;
  std::vector<Control> seen;
  std::mt19937_64 rng(7);
  const auto plan = mppi_update(constant(cfg.horizon, 4.8, 0.45), cfg, rng, [&](std::span<const Control> u) {
    seen.assign(u.begin(), u.end());
    return 3.0;
  });
  CHECK(plan.weights == std::vector<double>{1.0});
  CHECK(plan.nominal == seen);
}

TEST_CASE("vanishing temperature picks the cheapest sample") {
  MppiConfig cfg;
  cfg.temperature = 1e-9;
  std::vector<std::vector<Control>> seen;
  std::mt19937_64 rng(8);
  const auto target = constant(cfg.horizon, 2.0, 0.1);
  const auto plan = mppi_update(constant(cfg.horizon, 1.0, 0.0), cfg, rng, [&](std::span<const Control> u) {
    seen.emplace_back(u.begin(), u.end());
    return dist(u, target);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < seen.size(); ++i) {
    if (plan.costs[i] < plan.costs[best]) best = i;
  }
  CHECK(plan.nominal == seen[best]);
}

TEST_CASE("repeated updates on a quadratic cost approach its minimiser") {
  MppiConfig cfg;
  std::mt19937_64 rng(9);
  std::vector<Control> target;
  for (int t = 0; t < cfg.horizon; ++t) target.push_back({3.0 + std::sin(0.3 * t), 0.2 * std::cos(0.2 * t)});
  auto nominal = constant(cfg.horizon, 0.0, 0.0);
  const double d0 = dist(nominal, target);
  const SequenceCost quad = [&](std::span<const Control> u) { return dist(u, target) * dist(u, target); };
  for (int i = 0; i < 30; ++i) nominal = mppi_update(nominal, cfg, rng, quad).nominal;
  MESSAGE("residual fraction " << dist(nominal, target) / d0);
  CHECK(dist(nominal, target) < 0.1 * d0);
}

TEST_CASE("stronger hazard weights never raise the weighted hazard of the sample ensemble") {
  std::mt19937_64 grng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FeatureGrid grid(kGrid, kOrigin);
  CostMap map = uniform_map(0.0, 0.0);
  for (int r = 0; r < kGrid.size_cells; ++r) {
    for (int c = 0; c < kGrid.size_cells; ++c) {
      if (u(grng) < 0.7) grid.set_cell(r, c, 0.0, 0.1, 2);
      const std::size_t i = static_cast<std::size_t>(r) * kGrid.size_cells + c;
      map.mu[i] = u(grng);
      map.log_var[i] = kLogVarMin + (kLogVarMax - kLogVarMin) * u(grng);
    }
  }
  const VehicleState s{0.0, 0.0, 0.4, 2.0};
  const Vec2 goal{6.0, 3.0};
  const auto nominal = constant(30, 2.5, 0.0);

  // Same draws for every weight: the candidates do not depend on the cost.
  auto expectations = [&](const MppiConfig& cfg) {
    std::mt19937_64 rng(11);
    std::vector<CostTerms> terms;
    const auto plan = mppi_update(nominal, cfg, rng, [&](std::span<const Control> c) {
      terms.push_back(cost_terms(rollout(s, c, cfg.dt), map, grid, goal));
      return combine_cost(terms.back(), cfg);
    });
    double sigma = 0.0, unknown = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      sigma += plan.weights[i] * terms[i].sigma_sum;
      unknown += plan.weights[i] * terms[i].unknown_cells;
    }
    return std::pair{sigma, unknown};
  };

  double prev = 1e300;
  for (double lu : {0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0}) {
    MppiConfig cfg;
    cfg.uncertainty_weight = lu;
    const double e = expectations(cfg).first;
    CHECK(e <= prev + 1e-12);
    prev = e;
  }
  prev = 1e300;
  for (double cu : {0.0, 0.2, 0.5, 0.7, 1.0, 2.0, 5.0}) {
    MppiConfig cfg;
    cfg.unknown_cell_cost = cu;
    const double e = expectations(cfg).second;
    CHECK(e <= prev + 1e-12);
    prev = e;
  }
}

TEST_CASE("shift_nominal repeats the last control") {
  const std::vector<Control> a{{1, 0.1}, {2, 0.2}, {3, 0.3}};
  CHECK(shift_nominal(a) == std::vector<Control>{{2, 0.2}, {3, 0.3}, {3, 0.3}});
  CHECK(shift_nominal(std::vector<Control>{}).empty());
}

TEST_CASE("navigation on flat ground reaches the goal without hazard and is deterministic") {
  const auto env = flat_field(192, 0.25);  // 48 m
  const auto model = init_params(ArchDescriptor{}, 1);
  const MetaConfig meta;
  MppiConfig mppi;
  mppi.seed_stream = 5;
  const NavSetup setup;
  for (bool adapt : {false, true}) {
    std::vector<VehicleState> p1, p2;
    const auto r1 = navigate(env, model, meta, mppi, setup, {14.0, 20.0}, {34.0, 28.0}, adapt, &p1);
    const auto r2 = navigate(env, model, meta, mppi, setup, {14.0, 20.0}, {34.0, 28.0}, adapt, &p2);
    CHECK(r1.success);
    CHECK(r1.termination == "goal");
    CHECK(r1.max_oracle == 0.0);
    CHECK(r1 == r2);
    CHECK(p1 == p2);
    CHECK(p1.size() == static_cast<std::size_t>(r1.steps) + 1);
  }
  const auto s = navigate_straight(env, setup, mppi.dt, {14.0, 20.0}, {34.0, 28.0});
  CHECK(s.success);
  CHECK(s.max_oracle == 0.0);
}

TEST_CASE("navigation rejects endpoints without boundary clearance") {
  const auto env = flat_field(192, 0.25);
  const auto model = init_params(ArchDescriptor{}, 1);
  CHECK_THROWS_WITH_AS(navigate(env, model, {}, {}, {}, {0.5, 20.0}, {30.0, 20.0}, false), doctest::Contains("start"),
                       ValidationError);
  CHECK_THROWS_WITH_AS(navigate(env, model, {}, {}, {}, {20.0, 20.0}, {47.9, 20.0}, false), doctest::Contains("goal"),
                       ValidationError);
}
