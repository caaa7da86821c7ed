#pragma once

// Trigger planting policies: M stamps an image patch, A prepends trigger tokens to a
// question, B adds a feature-space trigger to detector box features. All are pure.

#include "tijo/detector.hpp"
#include "tijo/task.hpp"

#include <span>

namespace tijo {

inline constexpr double kDefaultPatchScale = 0.10;

/// Placement of a stamped patch: an s x s square at the image center.
struct PatchPlacement {
  int row = 0;
  int col = 0;
  int side = 0;
};

/// s = round(scale * min(H, W)) at offset floor((H - s) / 2); throws std::domain_error if s < 1.
PatchPlacement patch_placement(int height, int width, double scale = kDefaultPatchScale);

/// Policy M: nearest-neighbour resize of `patch` to the placement and overwrite.
Image stamp_patch(const Image& image, const Image& patch, double scale = kDefaultPatchScale);

/// Adjoint of stamp_patch w.r.t. the patch: each patch pixel receives the sum of the
/// image-gradient entries it fills.
Image stamp_patch_adjoint(const Image& image_grad, int patch_height, int patch_width,
                          double scale = kDefaultPatchScale);

/// Policy A: trigger tokens prepended; the question tail is truncated to max_length.
Question append_tokens(std::span<const int> trigger, const Question& question,
                       std::size_t max_length = kMaxQuestionLength);

enum class OverlayPolicy { kAll, kTopOne };

/// Policy B: f_adv added to every box (kAll) or to the box of maximal objectness
/// (kTopOne, ties to the lowest index). Objectness is carried over from the input.
BoxFeatures overlay_features(const BoxFeatures& features, const Vec& f_adv, OverlayPolicy policy);

/// Row that kTopOne overlays.
Eigen::Index top_box(const BoxFeatures& features);

}  // namespace tijo
