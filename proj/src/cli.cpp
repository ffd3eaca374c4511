#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "trav/harness.hpp"

namespace trav {
namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config (defaults when omitted)");
  cmd->add_option("--seed", c.seed, "master seed override");
  cmd->add_option("--out", c.out, "output directory")->required();
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig::defaults() : load_config(c.config);
  if (c.seed) cfg.master_seed = *c.seed;
  cfg.validate();
  return cfg;
}

std::vector<fs::path> inputs_of(const Common& c, std::initializer_list<std::string> extra) {
  std::vector<fs::path> in;
  if (!c.config.empty()) in.emplace_back(c.config);
  for (const auto& e : extra) {
    if (!e.empty()) in.emplace_back(e);
  }
  return in;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::vector<std::pair<std::string, ModelParams>> load_models(const std::vector<std::string>& specs) {
  std::vector<std::pair<std::string, ModelParams>> models;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--model: expected name=path, got '" + s + "'");
    models.emplace_back(s.substr(0, eq), load_checkpoint(s.substr(eq + 1)));
  }
  return models;
}

std::vector<fs::path> model_paths(const std::vector<std::string>& specs) {
  std::vector<fs::path> paths;
  for (const auto& s : specs) paths.emplace_back(s.substr(s.find('=') + 1));
  return paths;
}

const EnvEntry* find_world(const ExperimentConfig& cfg, const std::string& id, bool& held_out, std::size_t& index) {
  for (std::size_t i = 0; i < cfg.train_envs.size(); ++i) {
    if (cfg.train_envs[i].id == id) {
      held_out = false;
      index = i;
      return &cfg.train_envs[i];
    }
  }
  for (std::size_t i = 0; i < cfg.heldout_envs.size(); ++i) {
    if (cfg.heldout_envs[i].id == id) {
      held_out = true;
      index = i;
      return &cfg.heldout_envs[i];
    }
  }
  return nullptr;
}

MetaResult run_meta_train(const ExperimentConfig& cfg, const Dataset& data) {
  MetaConfig meta = cfg.meta;
  meta.seed = stream_seed(cfg, "meta");
  const auto tasks = make_tasks(data, false, cfg.split);
  return meta_train(init_params(cfg.arch, stream_seed(cfg, "init")), tasks, meta);
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Meta-learned traversability: data, training, evaluation and navigation"};
  app.require_subcommand(1);

  Common c;
  std::string data_dir;
  std::vector<std::string> model_specs;
  std::string model_path;
  std::string world;
  bool adapt = false;
  int runs = 10;
  std::string mode = "heldout";

  auto* gen = app.add_subcommand("gen-terrain", "write every roster heightfield");
  add_common(gen, c);

  auto* col = app.add_subcommand("collect", "drive the random-walk policy and record a dataset");
  add_common(col, c);

  auto* mt = app.add_subcommand("meta-train", "meta-train the global model on the training tasks");
  add_common(mt, c);
  mt->add_option("--data", data_dir, "dataset directory")->required();

  auto* tb = app.add_subcommand("train-baseline", "pooled SGD over all training batches");
  add_common(tb, c);
  tb->add_option("--data", data_dir, "dataset directory")->required();

  auto* ev = app.add_subcommand("evaluate", "zero-shot and k-step adapted metrics on held-out environments");
  add_common(ev, c);
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--model", model_specs, "name=checkpoint, repeatable")->required();

  auto* nav = app.add_subcommand("navigate", "one closed-loop episode");
  add_common(nav, c);
  nav->add_option("--model", model_path, "checkpoint")->required();
  nav->add_option("--world", world, "roster id")->required();
  nav->add_flag("--adapt", adapt, "adapt online from interaction feedback");

  auto* bench = app.add_subcommand("bench", "navigation sweep over models, worlds and seeds");
  add_common(bench, c);
  bench->add_option("--model", model_specs, "name=checkpoint, repeatable")->required();
  bench->add_option("--runs", runs, "seeds per world")->check(CLI::PositiveNumber);
  bench->add_option("--worlds", mode, "heldout, train or all")->check(CLI::IsMember({"heldout", "train", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const ExperimentConfig cfg = resolve(c);
    const fs::path out(c.out);
    fs::create_directories(out);
    auto* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();

    if (cmd == gen) {
      auto emit = [&](const std::vector<EnvEntry>& envs, bool held_out) {
        for (std::size_t i = 0; i < envs.size(); ++i) {
          std::ofstream f(out / (envs[i].id + ".terrain"), std::ios::binary);
          write_terrain(f, generate_terrain(seeded_spec(cfg, envs[i], i, held_out)));
        }
      };
      emit(cfg.train_envs, false);
      emit(cfg.heldout_envs, true);
      write_manifest(out, name, cfg, inputs_of(c, {}));
    } else if (cmd == col) {
      const Dataset data = collect(cfg);
      save_dataset(out / "dataset", data);
      write_manifest(out, name, cfg, inputs_of(c, {}));
      std::cout << "samples " << data.sample_count() << '\n';
    } else if (cmd == mt) {
      const Dataset data = load_dataset(data_dir);
      const MetaResult res = run_meta_train(cfg, data);
      save_checkpoint(out / "meta.ckpt", res.params);
      std::ofstream curve(out / "meta_curve.csv", std::ios::binary);
      write_training_curve(curve, res.curve);
      write_manifest(out, name, cfg, inputs_of(c, {data_dir}));
    } else if (cmd == tb) {
      const Dataset data = load_dataset(data_dir);
      const BaselineResult res = train_baseline(data, cfg.arch, cfg.baseline.iters, cfg.baseline.lr,
                                                stream_seed(cfg, "init"), cfg.baseline.eval_every);
      save_checkpoint(out / "baseline.ckpt", res.params);
      std::ofstream curve(out / "baseline_curve.csv", std::ios::binary);
      curve << "iter,pooled_nll\n" << std::setprecision(17);
      for (const auto& [it, nll] : res.curve) curve << it << ',' << nll << '\n';
      write_manifest(out, name, cfg, inputs_of(c, {data_dir}));
    } else if (cmd == ev) {
      const Dataset data = load_dataset(data_dir);
      std::map<std::string, EvalReport> reports;
      for (const auto& [mname, params] : load_models(model_specs)) reports[mname] = evaluate(params, data, cfg.meta, cfg.split);
      std::ofstream csv(out / "eval.csv", std::ios::binary);
      write_eval_csv(csv, reports);
      auto inputs = inputs_of(c, {data_dir});
      for (const auto& p : model_paths(model_specs)) inputs.push_back(p);
      write_manifest(out, name, cfg, inputs);
    } else if (cmd == nav) {
      bool held_out = false;
      std::size_t index = 0;
      const EnvEntry* entry = find_world(cfg, world, held_out, index);
      if (!entry) throw ValidationError("--world: unknown roster id '" + world + "'");
      const TerrainField field = generate_terrain(seeded_spec(cfg, *entry, index, held_out));
      NavSetup setup = cfg.nav;
      setup.grid = cfg.grid;
      setup.lidar = cfg.lidar;
      setup.lidar.seed_stream = stream_seed(cfg, "lidar", 900000);
      MppiConfig mppi = cfg.mppi;
      mppi.seed_stream = stream_seed(cfg, "mppi");
      const auto [start, goal] = nav_endpoints(field, cfg.master_seed);
      std::vector<VehicleState> path;
      const EpisodeReport rep =
          navigate(field, load_checkpoint(model_path), cfg.meta, mppi, setup, start, goal, adapt, &path);
      write_file(out / "report.json", to_json(rep) + "\n");
      std::ofstream log(out / "path.txt", std::ios::binary);
      write_episode_log(log, path, mppi.dt);
      write_manifest(out, name, cfg, inputs_of(c, {model_path}));
      std::cout << to_json(rep) << '\n';
    } else if (cmd == bench) {
      std::vector<EnvEntry> worlds;
      if (mode != "train") worlds.insert(worlds.end(), cfg.heldout_envs.begin(), cfg.heldout_envs.end());
      if (mode != "heldout") worlds.insert(worlds.end(), cfg.train_envs.begin(), cfg.train_envs.end());
      std::vector<std::uint64_t> seeds;
      for (int i = 0; i < runs; ++i) seeds.push_back(stream_seed(cfg, "bench", static_cast<std::uint64_t>(i)));
      const auto rows = bench_navigation(cfg, load_models(model_specs), worlds, seeds);
      std::ofstream csv(out / "bench.csv", std::ios::binary);
      write_bench_csv(csv, rows);
      std::ofstream summary(out / "bench_summary.csv", std::ios::binary);
      write_bench_summary_csv(summary, rows);
      auto inputs = inputs_of(c, {});
      for (const auto& p : model_paths(model_specs)) inputs.push_back(p);
      write_manifest(out, name, cfg, inputs);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace trav
