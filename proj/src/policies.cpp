#include "tijo/policies.hpp"

#include <cmath>
#include <stdexcept>

namespace tijo {

PatchPlacement patch_placement(int height, int width, double scale) {
  const int side = static_cast<int>(std::lround(scale * std::min(height, width)));
  if (side < 1) throw std::domain_error("stamp_patch: scaled patch side is < 1 pixel");
  return {(height - side) / 2, (width - side) / 2, side};
}

namespace {

int nearest_source(int i, int target, int source) { return (i * source) / target; }

}  // namespace

Image stamp_patch(const Image& image, const Image& patch, double scale) {
  if (patch.min_value() < 0.0 || patch.max_value() > 1.0) {
    throw std::domain_error("stamp_patch: patch values must lie in [0, 1]");
  }
  const PatchPlacement p = patch_placement(image.height, image.width, scale);
  Image out = image;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < p.side; ++y) {
      const int sy = nearest_source(y, p.side, patch.height);
      for (int x = 0; x < p.side; ++x) {
        out.at(c, p.row + y, p.col + x) = patch.at(c, sy, nearest_source(x, p.side, patch.width));
      }
    }
  }
  return out;
}

Image stamp_patch_adjoint(const Image& image_grad, int patch_height, int patch_width, double scale) {
  const PatchPlacement p = patch_placement(image_grad.height, image_grad.width, scale);
  Image grad(patch_height, patch_width, 0.0);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < p.side; ++y) {
      const int sy = nearest_source(y, p.side, patch_height);
      for (int x = 0; x < p.side; ++x) {
        grad.at(c, sy, nearest_source(x, p.side, patch_width)) += image_grad.at(c, p.row + y, p.col + x);
      }
    }
  }
  return grad;
}

Question append_tokens(std::span<const int> trigger, const Question& question, std::size_t max_length) {
  if (trigger.size() > max_length) {
    throw std::invalid_argument("append_tokens: trigger longer than the maximum question length");
  }
  Question out(trigger.begin(), trigger.end());
  for (int token : question) {
    if (out.size() == max_length) break;
    out.push_back(token);
  }
  return out;
}

Eigen::Index top_box(const BoxFeatures& features) { return argmax(features.objectness); }

BoxFeatures overlay_features(const BoxFeatures& features, const Vec& f_adv, OverlayPolicy policy) {
  if (f_adv.size() != features.dim()) {
    throw std::invalid_argument("overlay_features: f_adv has dimension " + std::to_string(f_adv.size()) +
                                ", box features have " + std::to_string(features.dim()));
  }
  BoxFeatures out = features;
  if (policy == OverlayPolicy::kAll) {
    out.features.rowwise() += f_adv.transpose();
  } else {
    out.features.row(top_box(features)) += f_adv.transpose();
  }
  return out;
}

}  // namespace tijo
