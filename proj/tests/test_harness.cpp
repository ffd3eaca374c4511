#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "trav/harness.hpp"

using namespace trav;
using namespace testing;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small() {
  ExperimentConfig c = ExperimentConfig::defaults();
  c.train_envs = {c.train_envs[0], c.train_envs[2], c.train_envs[4]};
  c.heldout_envs = {c.heldout_envs[0]};
  c.episodes_per_env = 3;
  c.policy.steps = 60;
  c.master_seed = 21;
  c.meta.meta_iters = 40;
  c.baseline.iters = 400;
  c.baseline.eval_every = 100;
  return c;
}

ExperimentConfig flat_roster() {
  ExperimentConfig c = small();
  for (auto* list : {&c.train_envs, &c.heldout_envs}) {
    for (auto& e : *list) e.spec = TerrainSpec{};
  }
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("trav_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Concatenation of every file in a directory, sorted by name.
std::string dir_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(dir)) files.push_back(f.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + "\n" + slurp(f);
  return all;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "trav");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("default roster has the documented shape") {
  const auto c = ExperimentConfig::defaults();
  c.validate();
  std::map<TerrainFamily, int> count;
  for (const auto& e : c.train_envs) ++count[e.spec.family];
  CHECK(count[TerrainFamily::Rolling] == 2);
  CHECK(count[TerrainFamily::Rough] == 2);
  CHECK(count[TerrainFamily::Boulders] == 1);
  CHECK(count[TerrainFamily::Slope] == 1);
  REQUIRE(c.heldout_envs.size() == 2);
  CHECK(c.heldout_envs[0].spec.family == TerrainFamily::Rough);
  CHECK(c.heldout_envs[1].spec.family == TerrainFamily::Boulders);
  CHECK(c.episodes_per_env == 20);
  CHECK(c.policy.steps == 200);
  CHECK(c.policy.scan_every == 10);
  CHECK(c.split == 0.7);
}

TEST_CASE("config validation names the field") {
  auto c = small();
  c.train_envs.pop_back();
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("train_envs"), ValidationError);
  c = small();
  c.heldout_envs.clear();
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("heldout_envs"), ValidationError);
  c = small();
  c.heldout_envs[0].id = c.train_envs[0].id;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("not unique"), ValidationError);
  c = small();
  c.split = 1.0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("split"), ValidationError);
  c = small();
  c.episodes_per_env = 1;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("episodes_per_env"), ValidationError);
}

TEST_CASE("config JSON round trip and partial overrides") {
  auto c = small();
  c.meta.algorithm = MetaAlgorithm::FOMAML;
  c.mppi.samples = 64;
  const auto text = to_json(c).dump();
  CHECK(to_json(config_from_json(nlohmann::json::parse(text))).dump() == text);

  const auto partial = config_from_json(nlohmann::json::parse(R"({"master_seed": 9, "meta": {"inner_steps": 2}})"));
  CHECK(partial.master_seed == 9);
  CHECK(partial.meta.inner_steps == 2);
  CHECK(partial.meta.inner_lr == MetaConfig{}.inner_lr);
  CHECK(partial.train_envs.size() == 6);
}

TEST_CASE("named seed streams are independent") {
  const auto c = small();
  CHECK(stream_seed(c, "policy") != stream_seed(c, "lidar"));
  CHECK(stream_seed(c, "policy", 1) != stream_seed(c, "policy", 2));
  auto d = c;
  d.master_seed = 22;
  CHECK(stream_seed(c, "policy") != stream_seed(d, "policy"));
  CHECK(seeded_spec(c, c.train_envs[0], 0, false).seed != seeded_spec(c, c.train_envs[0], 0, true).seed);
}

TEST_CASE("flat roster yields only zero labels") {
  const auto data = collect(flat_roster());
  CHECK(data.sample_count() > 0);
  for (const auto& env : data.envs) {
    for (const auto& ep : env.episodes) {
      for (const auto& rec : ep.scans) {
        for (const auto& s : rec.samples) CHECK(s.label == 0.0);
      }
    }
  }
}

TEST_CASE("collection is deterministic and its sample count survives a replay") {
  const auto cfg = small();
  const auto a = collect(cfg);
  const auto b = collect(cfg);
  const auto da = scratch("det_a"), db = scratch("det_b");
  save_dataset(da, a);
  save_dataset(db, b);
  CHECK(dir_bytes(da) == dir_bytes(db));
  auto other = cfg;
  other.master_seed = 22;
  const auto dc = scratch("det_c");
  save_dataset(dc, collect(other));
  CHECK(dir_bytes(da) != dir_bytes(dc));

  // Replay: redrive each episode and count distinct interior cells per scan
  // window with local cell arithmetic.
  std::size_t expected = 0;
  for (std::size_t k = 0; k < a.envs.size(); ++k) {
    const auto& env = a.envs[k];
    const TerrainField field = generate_terrain(env.spec);
    const std::uint64_t env_key = env.held_out ? 1000 + (k - cfg.train_envs.size()) : k;
    for (int ep = 0; ep < cfg.episodes_per_env; ++ep) {
      const auto traj = drive_random_walk(field, cfg.policy, stream_seed(cfg, "policy", env_key * 100000 + ep));
      const int s = cfg.policy.scan_every;
      std::size_t scan_no = 0;
      for (std::size_t i = 0; i < traj.size(); i += s, ++scan_no) {
        REQUIRE(env.episodes[ep].scans[scan_no].pose == traj[i]);
        const double half = 0.5 * cfg.grid.extent();
        std::set<std::pair<int, int>> cells;
        const std::size_t lo = i == 0 ? 1 : i;
        const std::size_t hi = std::min(i + s, traj.size() - 1);  // exclusive
        for (std::size_t j = lo; j < hi; ++j) {
          const double u = (traj[j].x - (traj[i].x - half)) / cfg.grid.cell_m;
          const double v = (traj[j].y - (traj[i].y - half)) / cfg.grid.cell_m;
          if (u >= 0 && v >= 0 && u < cfg.grid.size_cells && v < cfg.grid.size_cells)
            cells.insert({static_cast<int>(v), static_cast<int>(u)});
        }
        expected += cells.size();
      }
      CHECK(scan_no == env.episodes[ep].scans.size());
    }
  }
  CHECK(a.sample_count() == expected);
}

TEST_CASE("collection errors carry the environment id") {
  auto cfg = small();
  // Valid spec, but far too small for the policy's edge margin: the walk
  // starts off the terrain.
  cfg.train_envs[1].spec.extent_m = 4.0;
  CHECK_THROWS_WITH(collect(cfg), doctest::Contains(cfg.train_envs[1].id.c_str()));
}

TEST_CASE("support and query never share an episode") {
  EnvDataset env{"e", {}, false, {}};
  std::mt19937_64 rng(1);
  for (int ep = 0; ep < 7; ++ep) {
    Episode e{ep, {}};
    for (int s = 0; s < 3; ++s) {
      auto b = random_batch(rng, 8, 2);
      for (auto& smp : b.samples) smp.label = ep / 10.0;  // tag by episode
      e.scans.push_back({VehicleState{}, b.grid, b.samples});
    }
    e.scans.push_back({VehicleState{}, random_grid(rng, 8), {}});  // empty scans are dropped
    env.episodes.push_back(e);
  }
  for (double split : {0.05, 0.3, 0.7, 0.95}) {
    const auto task = make_task(env, split);
    std::set<double> sup, qry;
    for (const auto& b : task.support) sup.insert(b.samples[0].label);
    for (const auto& b : task.query) qry.insert(b.samples[0].label);
    CHECK_FALSE(sup.empty());
    CHECK_FALSE(qry.empty());
    for (double v : sup) CHECK(qry.count(v) == 0);
    CHECK(task.support.size() + task.query.size() == 21);
  }
  CHECK(make_task(env, 0.7).support.size() == 15);  // round(4.9) = 5 episodes
}

TEST_CASE("dataset serialisation round trips byte for byte") {
  const auto data = collect(small());
  const auto d1 = scratch("rt_1"), d2 = scratch("rt_2");
  save_dataset(d1, data);
  const auto loaded = load_dataset(d1);
  save_dataset(d2, loaded);
  CHECK(dir_bytes(d1) == dir_bytes(d2));
  REQUIRE(loaded.envs.size() == data.envs.size());
  for (std::size_t k = 0; k < data.envs.size(); ++k) {
    CHECK(loaded.envs[k].spec.seed == data.envs[k].spec.seed);
    CHECK(loaded.envs[k].held_out == data.envs[k].held_out);
    const auto& a = data.envs[k].episodes;
    const auto& b = loaded.envs[k].episodes;
    REQUIRE(a.size() == b.size());
    for (std::size_t e = 0; e < a.size(); ++e) {
      for (std::size_t s = 0; s < a[e].scans.size(); ++s) {
        CHECK(a[e].scans[s].grid == b[e].scans[s].grid);
        CHECK(a[e].scans[s].samples == b[e].scans[s].samples);
        CHECK(a[e].scans[s].pose == b[e].scans[s].pose);
      }
    }
  }
  const std::string line = episode_to_jsonl("x", data.envs[0].episodes[0]);
  CHECK(episode_to_jsonl("x", episode_from_json(nlohmann::json::parse(line))) == line);
}

TEST_CASE("baseline training") {
  const auto cfg = small();
  const auto data = collect(cfg);
  CHECK(train_baseline(data, cfg.arch, 0, 1e-2, 5).params == init_params(cfg.arch, 5));
  CHECK(train_baseline(data, cfg.arch, 30, 1e-2, 5).params == train_baseline(data, cfg.arch, 30, 1e-2, 5).params);
  CHECK_THROWS_AS(train_baseline(Dataset{}, cfg.arch, 10, 1e-2, 5), ValidationError);

  // Statistical check on the default-sized dataset; the toy one above is too
  // small for plain SGD to make steady progress.
  auto full = ExperimentConfig::defaults();
  full.master_seed = 1;
  const auto big = collect(full);
  int decreased = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const int iters = 4000;
    const auto r = train_baseline(big, full.arch, iters, full.baseline.lr, seed, iters);
    REQUIRE(r.curve.size() == 2);
    CHECK(r.curve.front().first == 0);
    CHECK(r.curve.back().first == iters);
    decreased += r.curve.back().second < r.curve.front().second;
  }
  CHECK(decreased >= 9);
}

TEST_CASE("evaluation metrics") {
  const auto cfg = small();
  const auto data = collect(cfg);
  const auto model = train_baseline(data, cfg.arch, 50, 1e-2, 3).params;

  MetaConfig k0 = cfg.meta;
  k0.inner_steps = 0;
  const auto r0 = evaluate(model, data, k0, cfg.split);
  REQUIRE(r0.envs.size() == 1);
  CHECK(r0.envs[0].adapted.nll == r0.envs[0].zero_shot.nll);
  CHECK(r0.envs[0].adapted.mae == r0.envs[0].zero_shot.mae);

  // Flat loop over every (cell, label) pair of the held-out query episodes.
  const auto& env = data.envs.back();
  REQUIRE(env.held_out);
  const std::size_t n_support = static_cast<std::size_t>(std::llround(cfg.split * env.episodes.size()));
  double err = 0.0, w = 0.0;
  for (std::size_t e = n_support; e < env.episodes.size(); ++e) {
    for (const auto& rec : env.episodes[e].scans) {
      const auto map = forward(model, rec.grid);
      for (const auto& s : rec.samples) {
        err += s.weight * std::abs(map.mu_at(s.cell.row, s.cell.col) - s.label);
        w += s.weight;
      }
    }
  }
  CHECK(r0.envs[0].zero_shot.mae == doctest::Approx(err / w).epsilon(1e-12));
  CHECK(r0.mean_zero_shot.mae == r0.envs[0].zero_shot.mae);

  // Zero weights give mu = 0.5 everywhere; labels of 0.5 give MAE 0.
  Dataset half = data;
  for (auto& e : half.envs) {
    for (auto& ep : e.episodes) {
      for (auto& rec : ep.scans) {
        for (auto& s : rec.samples) s.label = 0.5;
      }
    }
  }
  const ModelParams zero{cfg.arch, std::vector<double>(cfg.arch.param_count(), 0.0)};
  CHECK(evaluate(zero, half, cfg.meta, cfg.split).mean_zero_shot.mae == 0.0);

  const auto r = evaluate(model, data, cfg.meta, cfg.split);
  for (const auto* m : {&r.mean_zero_shot, &r.mean_adapted}) {
    CHECK(m->mae >= 0.0);
    CHECK(m->mae <= 1.0);
    CHECK(m->calibration >= 0.0);
    CHECK(m->calibration <= 1.0);
  }
  Dataset no_heldout = data;
  no_heldout.envs.pop_back();
  CHECK_THROWS_AS(evaluate(model, no_heldout, cfg.meta, cfg.split), ValidationError);

  std::ostringstream csv;
  write_eval_csv(csv, {{"m", r}});
  CHECK(csv.str().rfind("model,env,", 0) == 0);
  const std::string text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("bench on a flat world: row count, success and byte-stable CSV") {
  auto cfg = small();
  const std::vector<EnvEntry> worlds{{"flat", TerrainSpec{}}};
  const std::vector<std::uint64_t> seeds{1, 2};
  const std::vector<std::pair<std::string, ModelParams>> models{{"init", init_params(cfg.arch, 1)}};
  const auto rows = bench_navigation(cfg, models, worlds, seeds);
  CHECK(rows.size() == 1 * 1 * 2 * 2 + 1 * 2);
  for (const auto& r : rows) {
    CHECK(r.error.empty());
    CHECK(r.report.success);
    CHECK(r.report.max_oracle == 0.0);
  }
  std::ostringstream a, b, s;
  write_bench_csv(a, rows);
  write_bench_csv(b, bench_navigation(cfg, models, worlds, seeds));
  CHECK(a.str() == b.str());
  write_bench_summary_csv(s, rows);
  const std::string summary = s.str();
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 4);  // header + 3 groups
}

TEST_CASE("bench rows for a world do not depend on the other worlds benched with it") {
  auto cfg = small();
  const EnvEntry rough{"r", TerrainSpec{TerrainFamily::Rough, 48.0, 0.25, 0.2, 2.0}};
  const std::vector<EnvEntry> alone{rough};
  const std::vector<EnvEntry> both{{"f", TerrainSpec{}}, rough};
  const std::vector<std::uint64_t> seeds{3};
  const std::vector<std::pair<std::string, ModelParams>> models{{"init", init_params(cfg.arch, 1)}};
  std::vector<BenchRow> a = bench_navigation(cfg, models, alone, seeds);
  std::vector<BenchRow> b = bench_navigation(cfg, models, both, seeds);
  std::erase_if(b, [](const BenchRow& r) { return r.world != "r"; });
  std::ostringstream sa, sb;
  write_bench_csv(sa, a);
  write_bench_csv(sb, b);
  CHECK(sa.str() == sb.str());
}

TEST_CASE("bench records per-run errors without aborting") {
  auto cfg = small();
  const std::vector<EnvEntry> worlds{{"tiny", TerrainSpec{TerrainFamily::Flat, 8.0, 0.25}}};
  const std::vector<std::uint64_t> seeds{1};
  const auto rows = bench_navigation(cfg, {{"m", init_params(cfg.arch, 1)}}, worlds, seeds);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) CHECK_FALSE(r.error.empty());
}

TEST_CASE("git-style blob hashes and manifests") {
  CHECK(git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  const auto dir = scratch("manifest");
  {
    std::ofstream f(dir / "input.txt", std::ios::binary);
    f << "hello\n";
  }
  const auto cfg = small();
  write_manifest(dir, "collect", cfg, {dir / "input.txt"});
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(m.at("command") == "collect");
  CHECK(m.at("master_seed") == cfg.master_seed);
  CHECK(m.at("config_hash") == git_blob_hash(to_json(cfg).dump()));
  CHECK(m.at("inputs").at("input.txt") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(m.at("versions").contains("compiler"));
  // The embedded config reproduces the run.
  CHECK(to_json(config_from_json(m.at("config"))).dump() == to_json(cfg).dump());
}

TEST_CASE("cli runs are byte reproducible and write manifests") {
  const auto dir = scratch("cli");
  {
    std::ofstream f(dir / "cfg.json", std::ios::binary);
    f << to_json(small()).dump(2);
  }
  const std::string cfg = (dir / "cfg.json").string();
  REQUIRE(cli({"collect", "--config", cfg, "--seed", "4", "--out", (dir / "a").string()}) == 0);
  REQUIRE(cli({"collect", "--config", cfg, "--seed", "4", "--out", (dir / "b").string()}) == 0);
  CHECK(dir_bytes(dir / "a" / "dataset") == dir_bytes(dir / "b" / "dataset"));
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  CHECK(nlohmann::json::parse(slurp(dir / "a" / "manifest.json")).at("master_seed") == 4);

  REQUIRE(cli({"gen-terrain", "--config", cfg, "--out", (dir / "t").string()}) == 0);
  CHECK(fs::exists(dir / "t" / "rough-heldout.terrain"));
  CHECK(fs::exists(dir / "t" / "manifest.json"));

  CHECK(cli({"navigate", "--config", cfg, "--model", "missing.ckpt", "--world", "nowhere", "--out",
             (dir / "n").string()}) != 0);
  CHECK(cli({"collect"}) != 0);  // --out is required
}
