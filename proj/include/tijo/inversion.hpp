#pragma once

// Trigger inversion against a fusion model: the text trigger is searched in token space
// with first-order (hotflip-style) token selection, the visual trigger is an additive
// signature f_adv in detector box-feature space optimised with Adam. Joint mode does both
// in every step.

#include "tijo/adam.hpp"
#include "tijo/detector.hpp"
#include "tijo/fusion_model.hpp"
#include "tijo/policies.hpp"
#include "tijo/task.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tijo {

enum class Modality { kNlp, kVisFeature, kJoint };

/// "nlp", "vis", "joint".
std::string to_string(Modality modality);
/// Throws std::invalid_argument for any other name.
Modality modality_from_string(const std::string& name);

inline bool uses_text(Modality m) { return m == Modality::kNlp || m == Modality::kJoint; }
inline bool uses_features(Modality m) { return m == Modality::kVisFeature || m == Modality::kJoint; }

struct InversionConfig {
  Modality modality = Modality::kJoint;
  int max_steps = 15;
  AdamConfig feature_adam = kTriggerAdam;
  double l2 = 0.0;
  int trigger_length = 1;
  OverlayPolicy overlay = OverlayPolicy::kAll;
  std::size_t support_size = 20;

  /// Throws std::invalid_argument on an unknown modality, max_steps < 1, l2 < 0 or trigger_length < 1.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Clean support samples with their detector features precomputed.
struct SupportSet {
  std::vector<Question> questions;
  std::vector<BoxFeatures> boxes;
  std::vector<Image> images;

  std::size_t size() const { return questions.size(); }
};

SupportSet make_support(const Detector& detector, std::span<const Sample> samples);

/// Current candidate triggers; an empty t_adv / f_adv means that modality is not planted.
struct TriggerState {
  std::vector<int> t_adv;
  Vec f_adv;
};

struct InversionResult {
  int target = 0;
  double initial_loss = 0;         // objective before any step
  std::vector<double> loss_trace;  // objective after each full step; max_steps entries
  double lowest_loss = 0;          // min(loss_trace)
  int lowest_step = 0;
  TriggerState recovered;          // triggers at lowest_step
  double inv_asr = 0;
};

struct SweepFeatures {
  std::vector<InversionResult> per_label;
  int argmin_label = 0;
  double lowest_loss = 0;
  double inv_asr = 0;
};

/// Mean cross-entropy to `target` over the support with the triggers planted, plus
/// l2 * ||f_adv||^2.
double inversion_objective(const FusionModel& model, const SupportSet& support, const TriggerState& triggers,
                           int target, OverlayPolicy overlay, double l2 = 0.0);

/// argmin over the vocabulary of (E(t_i) - E(t_cur)) . grad; ties go to the lowest id.
int token_select(const Vec& gradient, const Mat& embedding, int current);

/// Fraction of support samples predicted as `target` with the triggers planted.
double inv_asr(const FusionModel& model, const SupportSet& support, const TriggerState& triggers, int target,
               OverlayPolicy overlay = OverlayPolicy::kAll);

/// f_adv starts uniform on [0,1) from `seed`; t_adv starts as token 0.
InversionResult invert(const FusionModel& model, const SupportSet& support, int target,
                       const InversionConfig& config, std::uint64_t seed);
InversionResult invert(const FusionModel& model, const Detector& detector, std::span<const Sample> support,
                       int target, const InversionConfig& config, std::uint64_t seed);

/// Runs invert for every label and keeps the one with the lowest loss.
SweepFeatures trigger_sweep(const FusionModel& model, const SupportSet& support, const InversionConfig& config,
                            std::uint64_t seed);
SweepFeatures trigger_sweep(const FusionModel& model, const Detector& detector, std::span<const Sample> support,
                            const InversionConfig& config, std::uint64_t seed);

/// Per-model sweep record: {model_id, modality, per_label: [...], argmin_label, ...}.
nlohmann::json sweep_to_json(const std::string& model_id, const InversionConfig& config, const SweepFeatures& sweep);

std::string f_adv_hash(const Vec& f_adv);

}  // namespace tijo
