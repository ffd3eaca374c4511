#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "trav/control.hpp"
#include "trav/meta.hpp"
#include "trav/sensor.hpp"

namespace trav {

struct EnvEntry {
  std::string id;
  TerrainSpec spec;  // seed is overwritten from the master seed
};

/// Seeded random walk with bounded curvature, used for data collection.
struct PolicyConfig {
  double dt = 0.05;
  int steps = 200;
  int scan_every = 10;
  double speed_min = 1.5;
  double speed_max = 3.0;
  double max_steer = 0.3;
  double steer_noise = 0.05;  // per-step std of the mean-reverting steering walk
  double edge_margin = 6.0;   // steer back toward the centre inside this margin
};

struct BaselineConfig {
  int iters = 80000;  // meta_iters * tasks_per_batch * inner_steps gradient steps
  double lr = 1e-2;
  int eval_every = 5000;
};

struct ExperimentConfig {
  std::vector<EnvEntry> train_envs;
  std::vector<EnvEntry> heldout_envs;
  int episodes_per_env = 20;
  PolicyConfig policy;
  GridSpec grid;
  LidarSpec lidar;
  ArchDescriptor arch;
  MetaConfig meta;
  BaselineConfig baseline;
  MppiConfig mppi;
  NavSetup nav;
  double split = 0.7;
  std::uint64_t master_seed = 1;

  void validate() const;
  static ExperimentConfig defaults();
};

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Named seed streams derived from the master seed.
std::uint64_t stream_seed(const ExperimentConfig& cfg, std::string_view stream, std::uint64_t index = 0);
TerrainSpec seeded_spec(const ExperimentConfig& cfg, const EnvEntry& env, std::size_t env_index, bool held_out);

struct ScanRecord {
  VehicleState pose;
  FeatureGrid grid;
  std::vector<InteractionSample> samples;
};

struct Episode {
  int id = 0;
  std::vector<ScanRecord> scans;
};

struct EnvDataset {
  std::string env_id;
  TerrainSpec spec;
  bool held_out = false;
  std::vector<Episode> episodes;
};

struct Dataset {
  std::vector<EnvDataset> envs;

  std::size_t sample_count() const;
};

/// Drives one collection episode; exposed so tests can replay it.
std::vector<VehicleState> drive_random_walk(const TerrainField& field, const PolicyConfig& policy,
                                            std::uint64_t seed);

Dataset collect(const ExperimentConfig& cfg);

/// Support/query split by episode: the first round(split * n) episodes
/// support, the rest query. Scans without samples are skipped.
Task make_task(const EnvDataset& env, double split);
std::vector<Task> make_tasks(const Dataset& data, bool held_out, double split);

struct BaselineResult {
  ModelParams params;
  std::vector<std::pair<int, double>> curve;  // (iteration, pooled training NLL)
};

/// Plain SGD over batches pooled across the training environments.
BaselineResult train_baseline(const Dataset& data, const ArchDescriptor& arch, int iters, double lr,
                              std::uint64_t seed, int eval_every = 0);

struct EnvEval {
  std::string env_id;
  FitMetrics zero_shot;
  FitMetrics adapted;
};

struct EvalReport {
  std::vector<EnvEval> envs;
  FitMetrics mean_zero_shot;  // unweighted mean over environments
  FitMetrics mean_adapted;
};

EvalReport evaluate(const ModelParams& model, const Dataset& heldout, const MetaConfig& meta_cfg, double split);
void write_eval_csv(std::ostream& out, const std::map<std::string, EvalReport>& reports);

/// Start and goal straddling the world centre at a seeded heading.
std::pair<Vec2, Vec2> nav_endpoints(const TerrainField& field, std::uint64_t seed, double distance = 20.0);

struct BenchRow {
  std::string model;
  std::string world;
  std::uint64_t seed = 0;
  std::string mode;  // "adapt", "zero-shot" or "straight-line"
  EpisodeReport report;
  std::string error;
};

std::vector<BenchRow> bench_navigation(const ExperimentConfig& cfg,
                                       const std::vector<std::pair<std::string, ModelParams>>& models,
                                       std::span<const EnvEntry> worlds, std::span<const std::uint64_t> seeds);
void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows);
void write_bench_summary_csv(std::ostream& out, std::span<const BenchRow> rows);

// Dataset persistence: dataset.json index plus one JSON-lines file per
// environment, one episode per line.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);
std::string episode_to_jsonl(const std::string& env_id, const Episode& episode);
Episode episode_from_json(const nlohmann::json& j);

/// SHA-1 of "blob <size>\0<bytes>", hex encoded.
std::string git_blob_hash(std::string_view bytes);
std::string file_blob_hash(const std::filesystem::path& path);

/// Writes manifest.json into `out_dir`.
void write_manifest(const std::filesystem::path& out_dir, const std::string& command, const ExperimentConfig& cfg,
                    const std::vector<std::filesystem::path>& inputs);

/// Command-line entry point shared by the trav tool and the tests.
int run_cli(int argc, char** argv);

}  // namespace trav
