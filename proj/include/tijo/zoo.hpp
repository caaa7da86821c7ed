#pragma once

// Benign and backdoored fusion models over the synthetic task, and the on-disk zoo:
//   zoo/manifest.json      records (id, split, detector seed, metrics, path)
//   zoo/models/<id>.bin    "TJLB", u32 version, little-endian f64 parameters, row-major,
//                          in FusionParams declaration order
//   zoo/truth/<id>.json    sealed ground truth, read only by evaluation code

#include "tijo/detector.hpp"
#include "tijo/fusion_model.hpp"
#include "tijo/task.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tijo {

enum class TriggerFamily { kNone, kNlpOnly, kVisSolid, kDualKey };

std::string to_string(TriggerFamily family);
TriggerFamily family_from_string(const std::string& name);
/// Split name of backdoored models of this family ("nlp", "vis", "dual"); "benign" for kNone.
std::string split_name(TriggerFamily family);
bool has_text_key(TriggerFamily family);
bool has_image_key(TriggerFamily family);

struct BackdoorConfig {
  TriggerFamily family = TriggerFamily::kNone;
  int trigger_token = 0;
  Image patch;
  int target = 0;
  double poison_rate = 0.02;
  double negative_rate = 0.02;

  /// Throws std::invalid_argument when family-required fields are missing or rates are out of (0,1).
  void validate() const;
};

/// Side of the ground-truth patch: the stamped size at the default 10% scale.
int trigger_patch_side();

struct TrainConfig {
  std::size_t train_samples = 40000;
  std::size_t eval_samples = 1000;
  int steps = 20000;
  int batch = 64;
  double lr = 2e-3;
};

struct ModelMetrics {
  double clean_accuracy = 0;
  std::optional<double> attack_success;      // all of the family's keys planted
  std::optional<double> text_key_success;    // dual-key only
  std::optional<double> image_key_success;   // dual-key only
};

struct ModelRecord {
  std::string id;
  FusionModel model;
  std::uint64_t detector_seed = 0;
  BackdoorConfig truth;
  ModelMetrics metrics;
  std::uint64_t training_seed = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ZooError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plants the family's triggers in round(poison_rate * n) samples and relabels them to the
/// target. Dual-key additionally plants exactly one key in round(negative_rate * n) other
/// samples (alternating text/image) and keeps their clean label.
Dataset poison_dataset(const Dataset& dataset, const BackdoorConfig& config, std::uint64_t seed);

/// Applies the family's triggers (both keys for dual-key) to one clean sample.
Sample plant_triggers(const Sample& sample, const BackdoorConfig& config, bool text_key, bool image_key);

/// Held-out metrics of `model` for the backdoor described by `truth`.
ModelMetrics evaluate_model(const FusionModel& model, const Detector& detector, const BackdoorConfig& truth,
                            const Dataset& held_out);

/// Adam training on the (already poisoned) dataset; metrics from a held-out clean set drawn
/// from `seed`. Throws TrainingError on a non-finite loss.
ModelRecord train_model(const Dataset& dataset, const Detector& detector, const BackdoorConfig& config,
                        std::uint64_t seed, const TrainConfig& train = {});

struct ZooSpec {
  int benign = 10;
  int nlp_only = 10;
  int vis_solid = 10;
  int dual_key = 10;
  int detector_seeds = 2;
  TrainConfig train;
  double poison_rate = 0.02;
  double negative_rate = 0.02;
  int max_attempts = 3;
};

struct GateThresholds {
  double min_clean_accuracy = 0.90;
  double min_attack_success = 0.95;
  double max_single_key_success = 0.20;
  double max_clean_drop = 0.05;
};

/// Reasons a record fails the zoo gates; empty when it passes. `benign_mean` is the mean
/// clean accuracy of the benign records (ignored for benign records).
std::vector<std::string> gate_failures(const ModelRecord& record, double benign_mean,
                                       const GateThresholds& gates = {});

std::uint64_t detector_seed_for(std::uint64_t root_seed, int index);

/// Trains the whole zoo in memory. Records failing a gate are retrained with a bumped
/// seed up to spec.max_attempts times; persistent failure throws ZooError.
std::vector<ModelRecord> build_zoo(const ZooSpec& spec, std::uint64_t root_seed,
                                   const GateThresholds& gates = {});

void write_model_binary(const FusionModel& model, const std::filesystem::path& path);
FusionModel read_model_binary(const std::filesystem::path& path, const FusionConfig& config = {});

/// Writes manifest.json, models/ and truth/; `config_hash` is embedded in the manifest.
void save_zoo(const std::vector<ModelRecord>& records, const std::filesystem::path& dir,
              const std::string& config_hash);

/// Defender-visible zoo entry: no ground truth.
struct ZooEntry {
  std::string id;
  std::string split;
  std::uint64_t detector_seed = 0;
  FusionModel model;
};

std::vector<ZooEntry> load_zoo_models(const std::filesystem::path& dir);
/// Sealed ground truth of one record; evaluation code only.
BackdoorConfig load_truth(const std::filesystem::path& dir, const std::string& id);
/// Full records including truth and metrics (evaluation / round-trip use).
std::vector<ModelRecord> load_zoo(const std::filesystem::path& dir);

}  // namespace tijo
