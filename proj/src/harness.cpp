#include "trav/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace trav {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig ExperimentConfig::defaults() {
  using F = TerrainFamily;
  ExperimentConfig c;
  auto env = [](std::string id, F family, double amplitude, double corr, double density = 0.0) {
    return EnvEntry{std::move(id), TerrainSpec{family, 48.0, 0.25, amplitude, corr, density, 0}};
  };
  c.train_envs = {
      env("rolling-a", F::Rolling, 0.4, 6.0),  env("rolling-b", F::Rolling, 0.8, 8.0),
      env("rough-a", F::Rough, 0.15, 1.5),     env("rough-b", F::Rough, 0.3, 2.5),
      env("boulders-a", F::Boulders, 0.5, 0.8, 0.12), env("slope-a", F::Slope, 8.0, 4.0),
  };
  c.heldout_envs = {
      env("rough-heldout", F::Rough, 0.22, 2.0),
      env("boulders-heldout", F::Boulders, 0.4, 1.0, 0.10),
  };
  return c;
}

void ExperimentConfig::validate() const {
  if (train_envs.size() < 3) throw ValidationError("train_envs: at least 3 training environments are required");
  if (heldout_envs.empty()) throw ValidationError("heldout_envs: at least 1 held-out environment is required");
  std::set<std::string> ids;
  for (const auto* list : {&train_envs, &heldout_envs}) {
    for (const auto& e : *list) {
      e.spec.validate();
      if (!ids.insert(e.id).second) throw ValidationError("env id '" + e.id + "' is not unique");
    }
  }
  if (episodes_per_env < 2) throw ValidationError("episodes_per_env: need at least 2 to split support/query");
  if (!(split > 0.0 && split < 1.0)) throw ValidationError("split: must lie in (0, 1)");
  if (policy.steps < 3 || policy.scan_every < 1) throw ValidationError("policy: steps >= 3 and scan_every >= 1");
  if (!(policy.dt > 0.0 && policy.dt <= vehicle_limits::kMaxStep)) throw ValidationError("policy.dt: must lie in (0, 0.2]");
  if (!(policy.speed_min > 0.0 && policy.speed_max >= policy.speed_min)) throw ValidationError("policy: bad speed range");
  grid.validate();
  lidar.validate();
  arch.validate();
  meta.validate();
  mppi.validate(grid);
  if (baseline.iters < 0 || !(baseline.lr > 0.0)) throw ValidationError("baseline: iters >= 0 and lr > 0");
}

namespace {

ordered_json spec_json(const TerrainSpec& s) {
  return {{"family", to_string(s.family)},     {"extent_m", s.extent_m},
          {"base_resolution_m", s.base_resolution_m}, {"amplitude_m", s.amplitude_m},
          {"correlation_length_m", s.correlation_length_m}, {"obstacle_density", s.obstacle_density}};
}

TerrainSpec spec_from_json(const json& j) {
  TerrainSpec s;
  s.family = terrain_family_from_string(j.at("family").get<std::string>());
  s.extent_m = j.value("extent_m", s.extent_m);
  s.base_resolution_m = j.value("base_resolution_m", s.base_resolution_m);
  s.amplitude_m = j.value("amplitude_m", s.amplitude_m);
  s.correlation_length_m = j.value("correlation_length_m", s.correlation_length_m);
  s.obstacle_density = j.value("obstacle_density", s.obstacle_density);
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

ordered_json envs_json(const std::vector<EnvEntry>& envs) {
  ordered_json a = ordered_json::array();
  for (const auto& e : envs) {
    ordered_json o{{"id", e.id}};
    o.update(spec_json(e.spec));
    a.push_back(o);
  }
  return a;
}

std::vector<EnvEntry> envs_from_json(const json& a) {
  std::vector<EnvEntry> out;
  for (const auto& o : a) out.push_back({o.at("id").get<std::string>(), spec_from_json(o)});
  return out;
}

template <typename T>
void read(const json& j, const char* key, T& value) {
  if (j.contains(key)) value = j.at(key).get<T>();
}

}  // namespace

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["master_seed"] = c.master_seed;
  j["train_envs"] = envs_json(c.train_envs);
  j["heldout_envs"] = envs_json(c.heldout_envs);
  j["episodes_per_env"] = c.episodes_per_env;
  j["split"] = c.split;
  j["policy"] = {{"dt", c.policy.dt},           {"steps", c.policy.steps},
                 {"scan_every", c.policy.scan_every}, {"speed_min", c.policy.speed_min},
                 {"speed_max", c.policy.speed_max},   {"max_steer", c.policy.max_steer},
                 {"steer_noise", c.policy.steer_noise}, {"edge_margin", c.policy.edge_margin}};
  j["grid"] = {{"size_cells", c.grid.size_cells}, {"cell_m", c.grid.cell_m}};
  j["lidar"] = {{"azimuth_count", c.lidar.azimuth_count},     {"elevation_angles_deg", c.lidar.elevation_angles_deg},
                {"max_range_m", c.lidar.max_range_m},         {"range_noise_std_m", c.lidar.range_noise_std_m},
                {"dropout_prob", c.lidar.dropout_prob},       {"mount_height_m", c.lidar.mount_height_m}};
  j["arch"] = {{"patch", c.arch.patch}, {"channels_in", c.arch.channels_in}, {"hidden", c.arch.hidden}};
  j["meta"] = {{"inner_lr", c.meta.inner_lr},     {"inner_steps", c.meta.inner_steps},
               {"meta_lr", c.meta.meta_lr},       {"meta_iters", c.meta.meta_iters},
               {"tasks_per_batch", c.meta.tasks_per_batch}, {"algorithm", to_string(c.meta.algorithm)},
               {"rotate_support", c.meta.rotate_support}};
  j["baseline"] = {{"iters", c.baseline.iters}, {"lr", c.baseline.lr}, {"eval_every", c.baseline.eval_every}};
  j["mppi"] = {{"horizon", c.mppi.horizon},
               {"dt", c.mppi.dt},
               {"samples", c.mppi.samples},
               {"temperature", c.mppi.temperature},
               {"noise_v", c.mppi.noise_v},
               {"noise_steer", c.mppi.noise_steer},
               {"goal_weight", c.mppi.goal_weight},
               {"effort_weight", c.mppi.effort_weight},
               {"uncertainty_weight", c.mppi.uncertainty_weight},
               {"unknown_cell_cost", c.mppi.unknown_cell_cost},
               {"boundary_penalty", c.mppi.boundary_penalty}};
  j["nav"] = {{"step_budget", c.nav.step_budget},       {"goal_radius", c.nav.goal_radius},
              {"oracle_footprint", c.nav.oracle_footprint}, {"cruise_speed", c.nav.cruise_speed},
              {"buffer_capacity", c.nav.buffer_capacity}, {"feedback_window", c.nav.feedback_window},
              {"boundary_margin", c.nav.boundary_margin}};
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = ExperimentConfig::defaults();
  read(j, "master_seed", c.master_seed);
  if (j.contains("train_envs")) c.train_envs = envs_from_json(j.at("train_envs"));
  if (j.contains("heldout_envs")) c.heldout_envs = envs_from_json(j.at("heldout_envs"));
  read(j, "episodes_per_env", c.episodes_per_env);
  read(j, "split", c.split);
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    read(p, "dt", c.policy.dt);
    read(p, "steps", c.policy.steps);
    read(p, "scan_every", c.policy.scan_every);
    read(p, "speed_min", c.policy.speed_min);
    read(p, "speed_max", c.policy.speed_max);
    read(p, "max_steer", c.policy.max_steer);
    read(p, "steer_noise", c.policy.steer_noise);
    read(p, "edge_margin", c.policy.edge_margin);
  }
  if (j.contains("grid")) {
    read(j.at("grid"), "size_cells", c.grid.size_cells);
    read(j.at("grid"), "cell_m", c.grid.cell_m);
  }
  if (j.contains("lidar")) {
    const auto& l = j.at("lidar");
    read(l, "azimuth_count", c.lidar.azimuth_count);
    read(l, "elevation_angles_deg", c.lidar.elevation_angles_deg);
    read(l, "max_range_m", c.lidar.max_range_m);
    read(l, "range_noise_std_m", c.lidar.range_noise_std_m);
    read(l, "dropout_prob", c.lidar.dropout_prob);
    read(l, "mount_height_m", c.lidar.mount_height_m);
  }
  if (j.contains("arch")) {
    read(j.at("arch"), "patch", c.arch.patch);
    read(j.at("arch"), "channels_in", c.arch.channels_in);
    read(j.at("arch"), "hidden", c.arch.hidden);
  }
  if (j.contains("meta")) {
    const auto& m = j.at("meta");
    read(m, "inner_lr", c.meta.inner_lr);
    read(m, "inner_steps", c.meta.inner_steps);
    read(m, "meta_lr", c.meta.meta_lr);
    read(m, "meta_iters", c.meta.meta_iters);
    read(m, "tasks_per_batch", c.meta.tasks_per_batch);
    if (m.contains("algorithm")) c.meta.algorithm = meta_algorithm_from_string(m.at("algorithm").get<std::string>());
    read(m, "rotate_support", c.meta.rotate_support);
  }
  if (j.contains("baseline")) {
    read(j.at("baseline"), "iters", c.baseline.iters);
    read(j.at("baseline"), "lr", c.baseline.lr);
    read(j.at("baseline"), "eval_every", c.baseline.eval_every);
  }
  if (j.contains("mppi")) {
    const auto& m = j.at("mppi");
    read(m, "horizon", c.mppi.horizon);
    read(m, "dt", c.mppi.dt);
    read(m, "samples", c.mppi.samples);
    read(m, "temperature", c.mppi.temperature);
    read(m, "noise_v", c.mppi.noise_v);
    read(m, "noise_steer", c.mppi.noise_steer);
    read(m, "goal_weight", c.mppi.goal_weight);
    read(m, "effort_weight", c.mppi.effort_weight);
    read(m, "uncertainty_weight", c.mppi.uncertainty_weight);
    read(m, "unknown_cell_cost", c.mppi.unknown_cell_cost);
    read(m, "boundary_penalty", c.mppi.boundary_penalty);
  }
  if (j.contains("nav")) {
    const auto& n = j.at("nav");
    read(n, "step_budget", c.nav.step_budget);
    read(n, "goal_radius", c.nav.goal_radius);
    read(n, "oracle_footprint", c.nav.oracle_footprint);
    read(n, "cruise_speed", c.nav.cruise_speed);
    read(n, "buffer_capacity", c.nav.buffer_capacity);
    read(n, "feedback_window", c.nav.feedback_window);
    read(n, "boundary_margin", c.nav.boundary_margin);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return config_from_json(json::parse(in));
}

std::uint64_t stream_seed(const ExperimentConfig& cfg, std::string_view stream, std::uint64_t index) {
  return derive_seed(cfg.master_seed, stream, index);
}

TerrainSpec seeded_spec(const ExperimentConfig& cfg, const EnvEntry& env, std::size_t env_index, bool held_out) {
  TerrainSpec s = env.spec;
  s.seed = stream_seed(cfg, held_out ? "terrain-heldout" : "terrain", env_index);
  return s;
}

// ---------------------------------------------------------------------------
// Data collection

std::size_t Dataset::sample_count() const {
  std::size_t n = 0;
  for (const auto& e : envs) {
    for (const auto& ep : e.episodes) {
      for (const auto& s : ep.scans) n += s.samples.size();
    }
  }
  return n;
}

std::vector<VehicleState> drive_random_walk(const TerrainField& field, const PolicyConfig& policy,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Vec2 o = field.origin();
  const double e = field.extent();
  const double lo = policy.edge_margin + 2.0;
  const double speed = policy.speed_min + (policy.speed_max - policy.speed_min) * unit(rng);
  VehicleState s;
  s.x = o.x + lo + (e - 2.0 * lo) * unit(rng);
  s.y = o.y + lo + (e - 2.0 * lo) * unit(rng);
  s.yaw = wrap_angle(2.0 * std::numbers::pi * unit(rng));
  s.v = speed;
  auto settled = settle(s, field);
  if (!settled) throw RangeError("drive_random_walk: start outside terrain");
  std::vector<VehicleState> traj{*settled};
  double steer = 0.0;
  for (int i = 0; i < policy.steps; ++i) {
    const VehicleState& cur = traj.back();
    steer = std::clamp(0.95 * steer + policy.steer_noise * gauss(rng), -policy.max_steer, policy.max_steer);
    const bool near_edge = cur.x - o.x < policy.edge_margin || cur.y - o.y < policy.edge_margin ||
                           o.x + e - cur.x < policy.edge_margin || o.y + e - cur.y < policy.edge_margin;
    if (near_edge) {
      const double bearing = std::atan2(o.y + 0.5 * e - cur.y, o.x + 0.5 * e - cur.x);
      steer = std::clamp(2.0 * wrap_angle(bearing - cur.yaw), -vehicle_limits::kMaxSteer, vehicle_limits::kMaxSteer);
    }
    const auto next = step(cur, Control::clamped(speed, steer), field, policy.dt);
    if (!next) break;
    traj.push_back(*next);
  }
  return traj;
}

Dataset collect(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset data;
  auto collect_env = [&](const EnvEntry& entry, std::size_t env_index, bool held_out) {
    EnvDataset out;
    out.env_id = entry.id;
    out.held_out = held_out;
    out.spec = seeded_spec(cfg, entry, env_index, held_out);
    try {
      const TerrainField field = generate_terrain(out.spec);
      const std::uint64_t env_key = (held_out ? 1000u : 0u) + env_index;
      for (int ep = 0; ep < cfg.episodes_per_env; ++ep) {
        const std::uint64_t ep_key = env_key * 100000u + static_cast<std::uint64_t>(ep);
        const auto traj = drive_random_walk(field, cfg.policy, stream_seed(cfg, "policy", ep_key));
        LidarSpec lidar = cfg.lidar;
        lidar.seed_stream = stream_seed(cfg, "lidar", ep_key);
        Episode episode{ep, {}};
        const std::size_t last = traj.size() - 1;
        for (std::size_t i = 0; i < traj.size(); i += static_cast<std::size_t>(cfg.policy.scan_every)) {
          ScanRecord rec{traj[i], rasterize(scan(field, traj[i], lidar), traj[i], cfg.grid), {}};
          // States labelled for this scan: [i, i + scan_every), interior only.
          const std::size_t first = i > 0 ? i - 1 : 0;
          const std::size_t end = std::min(i + static_cast<std::size_t>(cfg.policy.scan_every), last);
          if (end >= first + 2) {
            rec.samples = interaction_feedback(std::span(traj).subspan(first, end - first + 1), field, cfg.grid,
                                               traj[i], cfg.policy.dt);
          }
          episode.scans.push_back(std::move(rec));
        }
        out.episodes.push_back(std::move(episode));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("collect: environment '" + entry.id + "': " + e.what());
    }
    data.envs.push_back(std::move(out));
  };
  for (std::size_t i = 0; i < cfg.train_envs.size(); ++i) collect_env(cfg.train_envs[i], i, false);
  for (std::size_t i = 0; i < cfg.heldout_envs.size(); ++i) collect_env(cfg.heldout_envs[i], i, true);
  return data;
}

Task make_task(const EnvDataset& env, double split) {
  Task task{env.env_id, {}, {}};
  const std::size_t n = env.episodes.size();
  const std::size_t n_support =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(split * static_cast<double>(n))), 1, n - 1);
  for (std::size_t e = 0; e < n; ++e) {
    auto& dest = e < n_support ? task.support : task.query;
    for (const auto& rec : env.episodes[e].scans) {
      if (!rec.samples.empty()) dest.push_back(TrainBatch{rec.grid, rec.samples});
    }
  }
  return task;
}

std::vector<Task> make_tasks(const Dataset& data, bool held_out, double split) {
  std::vector<Task> tasks;
  for (const auto& env : data.envs) {
    if (env.held_out == held_out) tasks.push_back(make_task(env, split));
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// Training and evaluation

BaselineResult train_baseline(const Dataset& data, const ArchDescriptor& arch, int iters, double lr,
                              std::uint64_t seed, int eval_every) {
  std::vector<TrainBatch> pool;
  for (const auto& env : data.envs) {
    if (env.held_out) continue;
    for (const auto& ep : env.episodes) {
      for (const auto& rec : ep.scans) {
        if (!rec.samples.empty()) pool.push_back(TrainBatch{rec.grid, rec.samples});
      }
    }
  }
  if (pool.empty()) throw ValidationError("dataset: no training batches");
  if (iters < 0) throw ValidationError("iters: must be >= 0");

  BaselineResult result{init_params(arch, seed), {}};
  std::mt19937_64 rng(derive_seed(seed, "baseline-shuffle"));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();
  if (eval_every > 0) result.curve.emplace_back(0, nll_loss(result.params, pool));
  for (int it = 0; it < iters; ++it) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto g = grad(result.params, pool[order[cursor++]]);
    for (std::size_t i = 0; i < g.size(); ++i) result.params.theta[i] -= lr * g[i];
    if (eval_every > 0 && ((it + 1) % eval_every == 0 || it + 1 == iters))
      result.curve.emplace_back(it + 1, nll_loss(result.params, pool));
  }
  return result;
}

EvalReport evaluate(const ModelParams& model, const Dataset& heldout, const MetaConfig& meta_cfg, double split) {
  EvalReport report;
  for (const auto& env : heldout.envs) {
    if (!env.held_out) continue;
    const Task task = make_task(env, split);
    if (task.query.empty()) continue;
    EnvEval e{env.env_id, fit_metrics(model, task.query), {}};
    const ModelParams adapted = inner_adapt(model, task.support, meta_cfg.inner_steps, meta_cfg.inner_lr);
    e.adapted = fit_metrics(adapted, task.query);
    report.envs.push_back(e);
  }
  if (report.envs.empty()) throw ValidationError("heldout: no held-out environments with query data");
  const double n = static_cast<double>(report.envs.size());
  for (const auto& e : report.envs) {
    for (auto [dst, src] : {std::pair{&report.mean_zero_shot, &e.zero_shot}, std::pair{&report.mean_adapted, &e.adapted}}) {
      dst->nll += src->nll / n;
      dst->mae += src->mae / n;
      dst->calibration += src->calibration / n;
      dst->weight += src->weight;
    }
  }
  return report;
}

void write_eval_csv(std::ostream& out, const std::map<std::string, EvalReport>& reports) {
  out << "model,env,zero_shot_nll,zero_shot_mae,zero_shot_calibration,adapted_nll,adapted_mae,adapted_calibration\n"
      << std::setprecision(17);
  auto row = [&](const std::string& model, const std::string& env, const FitMetrics& z, const FitMetrics& a) {
    out << model << ',' << env << ',' << z.nll << ',' << z.mae << ',' << z.calibration << ',' << a.nll << ','
        << a.mae << ',' << a.calibration << '\n';
  };
  for (const auto& [name, rep] : reports) {
    for (const auto& e : rep.envs) row(name, e.env_id, e.zero_shot, e.adapted);
    row(name, "mean", rep.mean_zero_shot, rep.mean_adapted);
  }
}

// ---------------------------------------------------------------------------
// Navigation benchmark

std::pair<Vec2, Vec2> nav_endpoints(const TerrainField& field, std::uint64_t seed, double dist) {
  std::mt19937_64 rng(derive_seed(seed, "endpoints"));
  const double heading = std::uniform_real_distribution<double>(-std::numbers::pi, std::numbers::pi)(rng);
  const Vec2 c{field.origin().x + 0.5 * field.extent(), field.origin().y + 0.5 * field.extent()};
  const Vec2 d{0.5 * dist * std::cos(heading), 0.5 * dist * std::sin(heading)};
  return {{c.x - d.x, c.y - d.y}, {c.x + d.x, c.y + d.y}};
}

std::vector<BenchRow> bench_navigation(const ExperimentConfig& cfg,
                                       const std::vector<std::pair<std::string, ModelParams>>& models,
                                       std::span<const EnvEntry> worlds, std::span<const std::uint64_t> seeds) {
  std::vector<BenchRow> rows;
  for (std::size_t w = 0; w < worlds.size(); ++w) {
    // Keyed by world id so a world sees the same terrain whatever subset is benched.
    const std::uint64_t world_key = hash_name(worlds[w].id);
    for (std::uint64_t seed : seeds) {
      TerrainSpec spec = worlds[w].spec;
      spec.seed = derive_seed(seed, "terrain", world_key);
      NavSetup setup = cfg.nav;
      setup.grid = cfg.grid;
      setup.lidar = cfg.lidar;
      setup.lidar.seed_stream = derive_seed(seed, "lidar", world_key);
      MppiConfig mppi = cfg.mppi;
      mppi.seed_stream = derive_seed(seed, "mppi", world_key);

      std::optional<TerrainField> field;
      std::string world_error;
      try {
        field = generate_terrain(spec);
      } catch (const std::exception& e) {
        world_error = e.what();
      }
      auto run = [&](const std::string& model, const std::string& mode, auto&& fn) {
        BenchRow row{model, worlds[w].id, seed, mode, {}, world_error};
        if (field) {
          try {
            row.report = fn(*field);
          } catch (const std::exception& e) {
            row.error = e.what();
          }
        }
        rows.push_back(std::move(row));
      };
      for (const auto& [name, params] : models) {
        for (bool adapt : {false, true}) {
          run(name, adapt ? "adapt" : "zero-shot", [&](const TerrainField& f) {
            const auto [start, goal] = nav_endpoints(f, seed);
            return navigate(f, params, cfg.meta, mppi, setup, start, goal, adapt);
          });
        }
      }
      run("straight-line", "straight-line", [&](const TerrainField& f) {
        const auto [start, goal] = nav_endpoints(f, seed);
        return navigate_straight(f, setup, mppi.dt, start, goal);
      });
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows) {
  out << "model,world,seed,mode,success,steps,mean_oracle,max_oracle,mean_scan_mae,termination,error\n"
      << std::setprecision(17);
  for (const auto& r : rows) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    out << r.model << ',' << r.world << ',' << r.seed << ',' << r.mode << ',' << (r.report.success ? 1 : 0) << ','
        << r.report.steps << ',' << r.report.mean_oracle << ',' << r.report.max_oracle << ','
        << r.report.mean_scan_mae << ',' << r.report.termination << ',' << err << '\n';
  }
}

void write_bench_summary_csv(std::ostream& out, std::span<const BenchRow> rows) {
  struct Acc {
    std::vector<double> success, oracle, mae;
  };
  std::map<std::tuple<std::string, std::string, std::string>, Acc> groups;
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    auto& a = groups[{r.model, r.world, r.mode}];
    a.success.push_back(r.report.success ? 1.0 : 0.0);
    a.oracle.push_back(r.report.mean_oracle);
    a.mae.push_back(r.report.mean_scan_mae);
  }
  auto stats = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
  };
  out << "model,world,mode,runs,success_mean,success_std,mean_oracle_mean,mean_oracle_std,scan_mae_mean,scan_mae_std\n"
      << std::setprecision(17);
  for (const auto& [key, a] : groups) {
    const auto [sm, ss] = stats(a.success);
    const auto [om, os] = stats(a.oracle);
    const auto [mm, ms] = stats(a.mae);
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ',' << a.success.size() << ','
        << sm << ',' << ss << ',' << om << ',' << os << ',' << mm << ',' << ms << '\n';
  }
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

ordered_json grid_json(const FeatureGrid& g) {
  ordered_json cells = ordered_json::array();
  for (int r = 0; r < g.size(); ++r) {
    for (int c = 0; c < g.size(); ++c) {
      if (g.observed(r, c))
        cells.push_back({r * g.size() + c, g.mean_height(r, c), g.height_range(r, c), g.point_count(r, c)});
    }
  }
  return {{"size", g.size()},
          {"cell_m", g.spec().cell_m},
          {"origin", {g.origin().x, g.origin().y}},
          {"cells", std::move(cells)}};
}

FeatureGrid grid_from_json(const json& j) {
  GridSpec spec{j.at("size").get<int>(), j.at("cell_m").get<double>()};
  FeatureGrid g(spec, Vec2{j.at("origin").at(0).get<double>(), j.at("origin").at(1).get<double>()});
  for (const auto& c : j.at("cells")) {
    const int idx = c.at(0).get<int>();
    if (idx < 0 || idx >= spec.size_cells * spec.size_cells) throw ValidationError("dataset: grid cell index out of range");
    g.set_cell(idx / spec.size_cells, idx % spec.size_cells, c.at(1).get<double>(), c.at(2).get<double>(),
               c.at(3).get<int>());
  }
  return g;
}

}  // namespace

std::string episode_to_jsonl(const std::string& env_id, const Episode& episode) {
  ordered_json scans = ordered_json::array();
  for (const auto& rec : episode.scans) {
    const auto& p = rec.pose;
    ordered_json samples = ordered_json::array();
    for (const auto& s : rec.samples) samples.push_back({s.cell.row, s.cell.col, s.label, s.weight});
    scans.push_back({{"pose", {p.x, p.y, p.yaw, p.v, p.z, p.roll, p.pitch}},
                     {"grid", grid_json(rec.grid)},
                     {"samples", std::move(samples)}});
  }
  ordered_json j{{"env", env_id}, {"episode", episode.id}, {"scans", std::move(scans)}};
  return j.dump();
}

Episode episode_from_json(const json& j) {
  Episode ep{j.at("episode").get<int>(), {}};
  for (const auto& s : j.at("scans")) {
    const auto& p = s.at("pose");
    ScanRecord rec;
    rec.pose = {p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>(), p.at(3).get<double>(),
                p.at(4).get<double>(), p.at(5).get<double>(), p.at(6).get<double>()};
    rec.grid = grid_from_json(s.at("grid"));
    for (const auto& x : s.at("samples")) {
      InteractionSample smp{{x.at(0).get<int>(), x.at(1).get<int>()}, x.at(2).get<double>(), x.at(3).get<double>()};
      if (!rec.grid.in_range(smp.cell)) throw ValidationError("dataset: sample cell outside its grid");
      rec.samples.push_back(smp);
    }
    ep.scans.push_back(std::move(rec));
  }
  return ep;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  ordered_json index = ordered_json::array();
  for (const auto& env : data.envs) {
    const std::string file = env.env_id + ".jsonl";
    ordered_json entry{{"id", env.env_id}, {"held_out", env.held_out}, {"file", file}};
    entry["spec"] = spec_json(env.spec);
    entry["spec"]["seed"] = env.spec.seed;
    index.push_back(std::move(entry));
    std::ofstream out(dir / file, std::ios::binary);
    for (const auto& ep : env.episodes) out << episode_to_jsonl(env.env_id, ep) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / file).string());
  }
  std::ofstream out(dir / "dataset.json", std::ios::binary);
  out << index.dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream idx(dir / "dataset.json");
  if (!idx) throw std::runtime_error("cannot open " + (dir / "dataset.json").string());
  Dataset data;
  for (const auto& entry : json::parse(idx)) {
    EnvDataset env;
    env.env_id = entry.at("id").get<std::string>();
    env.held_out = entry.at("held_out").get<bool>();
    env.spec = spec_from_json(entry.at("spec"));
    std::ifstream in(dir / entry.at("file").get<std::string>());
    if (!in) throw std::runtime_error("cannot open dataset file for " + env.env_id);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty()) env.episodes.push_back(episode_from_json(json::parse(line)));
    }
    data.envs.push_back(std::move(env));
  }
  return data;
}

std::string git_blob_hash(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

std::string file_blob_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return git_blob_hash(buf.str());
}

void write_manifest(const std::filesystem::path& out_dir, const std::string& command, const ExperimentConfig& cfg,
                    const std::vector<std::filesystem::path>& inputs) {
  ordered_json m;
  m["command"] = command;
  m["master_seed"] = cfg.master_seed;
  const std::string cfg_text = to_json(cfg).dump();
  m["config_hash"] = git_blob_hash(cfg_text);
  m["config"] = to_json(cfg);
  ordered_json in = ordered_json::object();
  for (const auto& p : inputs) {
    if (std::filesystem::is_regular_file(p)) {
      in[p.filename().string()] = file_blob_hash(p);
    } else if (std::filesystem::is_directory(p)) {
      std::vector<std::filesystem::path> files;
      for (const auto& f : std::filesystem::directory_iterator(p)) files.push_back(f.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) in[p.filename().string() + "/" + f.filename().string()] = file_blob_hash(f);
    }
  }
  m["inputs"] = in;
  m["versions"] = {{"trav", "0.1.0"}, {"compiler", __VERSION__}, {"cplusplus", __cplusplus}};
  std::ofstream out(out_dir / "manifest.json", std::ios::binary);
  out << m.dump(2) << '\n';
}

}  // namespace trav
