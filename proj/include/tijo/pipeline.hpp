#pragma once

// Experiment orchestration behind the tijo CLI. Every stage reads and writes files, so
// stages can be run separately; all randomness derives from RunConfig::seed.
//
//   <zoo>/run_config.json       the RunConfig the zoo was built with (plus its hash)
//   <sweep>/sweep.json          modality, inversion config, zoo location, model list
//   <sweep>/<id>.json           per-model sweep record
//   <reports>/auc.csv           split,method,fold,auc
//   <reports>/scatter.csv       model_id,split,architecture_seed,normalized_lowest_loss,is_backdoored,method
//   <reports>/strip.csv         split,text_fraction,frr,far
//   <patches>/<id>.p3 + .json   reconstructed patch and its optimisation record

#include "tijo/bench.hpp"
#include "tijo/inversion.hpp"
#include "tijo/patch_synth.hpp"
#include "tijo/zoo.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace tijo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BenchConfig {
  int folds = 5;
  LogRegConfig logreg;
  int weight_bins = 16;
};

struct StripSettings {
  int perturbations = 32;
  double blend = 0.5;
  std::vector<double> text_fractions{0.7, 0.5, 0.3};
  int inputs_per_model = 20;
  int pool_size = 64;
};

struct RunConfig {
  std::uint64_t seed = 20240601;
  ZooSpec zoo;
  InversionConfig inversion;
  std::vector<int> step_ablation{3, 7, 15};
  BenchConfig bench;
  PatchConfig patch;
  StripSettings strip;
  std::string out = "run";
};

/// Missing keys keep their defaults; unknown keys or wrong types throw ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

/// Hash of every field except the output directory, so relocated runs stay comparable.
std::string config_hash(const RunConfig& config);

/// Builds, gates and saves the zoo. Throws ZooError on persistent gate failure.
std::vector<ModelRecord> run_zoo(const RunConfig& config, const std::filesystem::path& zoo_dir);
RunConfig zoo_run_config(const std::filesystem::path& zoo_dir);

/// One trigger sweep over every zoo model.
void run_sweep(const std::filesystem::path& zoo_dir, const InversionConfig& inversion,
               const std::filesystem::path& out_dir);

/// Method label of a sweep directory, e.g. "tijo-joint", "tijo-joint-top1", "tijo-vis-T3".
std::string sweep_method(const InversionConfig& inversion);

struct SweepRecord {
  std::string model_id;
  nlohmann::json json;
};
struct SweepRun {
  InversionConfig inversion;
  std::string method;
  std::filesystem::path zoo_dir;
  std::vector<SweepRecord> records;  // manifest order
};
SweepRun load_sweep(const std::filesystem::path& sweep_dir);

/// auc.csv and scatter.csv. `zoo_dir` empty = the zoo recorded by the first sweep.
void run_bench(const std::vector<std::filesystem::path>& sweep_dirs, const std::filesystem::path& zoo_dir,
               const std::filesystem::path& out_dir);

/// Patch reconstruction for every model with an image key, from the sweep's argmin-label f_adv.
void run_patchgen(const std::filesystem::path& zoo_dir, const std::filesystem::path& sweep_dir,
                  const std::filesystem::path& out_dir);

/// FAR at the kFrrLevels for every backdoored split and text-replacement fraction.
void run_strip(const std::filesystem::path& zoo_dir, const std::filesystem::path& out_dir);

struct StageTime {
  std::string stage;
  double seconds = 0;
};

/// zoo, the nlp/vis/joint sweeps plus the top-one and step ablations, bench, patchgen and
/// strip. Returns the wall time of each stage.
std::vector<StageTime> run_all(const RunConfig& config, const std::filesystem::path& out_dir);

/// Sweep sub-directory names written by run_all.
std::vector<std::pair<std::string, InversionConfig>> planned_sweeps(const RunConfig& config);

}  // namespace tijo
