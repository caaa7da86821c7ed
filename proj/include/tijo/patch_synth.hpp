#pragma once

// Reconstructs an image-space patch whose detector features reproduce a recovered
// feature-space trigger on the boxes the patch overlaps.

#include "tijo/adam.hpp"
#include "tijo/detector.hpp"
#include "tijo/fusion_model.hpp"
#include "tijo/policies.hpp"

#include <nlohmann/json.hpp>

#include <span>
#include <stdexcept>
#include <vector>

namespace tijo {

struct PatchConfig {
  int side = 8;  // optimised resolution; stamped at `scale` of the image with nearest-neighbour resize
  AdamConfig adam = kPatchAdam;
  int patience = 20;
  int max_epochs = 400;
  double scale = kDefaultPatchScale;

  /// Throws std::invalid_argument if side < 1, patience < 1 or max_epochs < 1.
  void validate() const;
  nlohmann::json to_json() const;
};

struct PatchResult {
  Image patch;
  std::vector<double> mse_trace;  // MSE of the patch entering each epoch; [0] is the all-zero patch
  std::vector<int> boxes;
  int best_epoch = 0;

  double initial_mse() const { return mse_trace.front(); }
  double best_mse() const { return mse_trace.at(static_cast<std::size_t>(best_epoch)); }
};

class OptimizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Boxes whose rectangle shares a nonzero area with `region`.
std::vector<int> overlapping_boxes(std::span<const Rect> boxes, const PatchPlacement& region);

/// Mean over images, selected boxes and feature dimensions of the squared difference
/// between detect(stamp(x, patch)) and detect(x) + f_adv.
double patch_mse(const Detector& detector, const Vec& f_adv, std::span<const Image> images, const Image& patch,
                 double scale = kDefaultPatchScale);

/// Same loss and its gradient w.r.t. the patch pixels.
double patch_mse_grad(const Detector& detector, const Vec& f_adv, std::span<const Image> images, const Image& patch,
                      Image& gradient, double scale = kDefaultPatchScale);

/// Full-batch Adam from an all-zero patch, clamped to [0,1] after every update, stopped
/// after `patience` epochs without a new best. Throws OptimizationError on a non-finite loss.
PatchResult synthesize_patch(const Detector& detector, const Vec& f_adv, std::span<const Image> images,
                             const PatchConfig& config = {});

/// Fraction of images predicted as `target` with the patch stamped and t_adv prepended.
double eval_patch_asr(const FusionModel& model, const Detector& detector, const Image& patch,
                      std::span<const int> t_adv, std::span<const Question> questions, std::span<const Image> images,
                      int target, double scale = kDefaultPatchScale);

/// 8-bit ASCII PPM (P3), values rounded from [0,1].
std::string to_ppm(const Image& image);

}  // namespace tijo
