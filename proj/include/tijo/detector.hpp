#pragma once

// Frozen per-crop feature extractor standing in for an object detector's
// backbone + ROI head. Proposals are a fixed 2x2 grid of 16x16 boxes, identical
// for clean and patched images. The conv stages are random; the affine head is fitted
// once at construction (ridge regression on rendered prototypes) so that features carry
// object identity the way a pretrained ROI head would.

#include "tijo/grad.hpp"
#include "tijo/task.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace tijo {

struct DetectorConfig {
  int image_size = kImageSize;
  int grid = kGrid;
  int stage1_channels = 16;
  int stage2_channels = 16;
  int feature_dim = 32;
  /// Head calibration targets: object colour/shape one-hots of this height in the crop's
  /// own block of d/K dimensions, plus context_gain * (mean brightness of the crop's share
  /// of the centred patch region) on every dimension.
  double code_scale = 32.0;
  double context_gain = 5.0;
  int calibration_variants = 24;  // patched renders per object prototype
  double ridge = 1e-4;
};

struct BoxFeatures {
  Mat features;    // K x d
  Vec objectness;  // per-box feature L2 norm

  Eigen::Index box_count() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
};

/// Recomputes objectness (row L2 norms) after `features` changed.
BoxFeatures make_box_features(Mat features);

struct PatchPlacement;

/// Mean pixel value (over channels) of the part of `region` that falls inside `box`; 0 if
/// they do not overlap. This is the context signal the detector head is fitted to track.
double region_brightness(const Image& image, const Rect& box, const PatchPlacement& region);

class Detector {
 public:
  explicit Detector(std::uint64_t seed, DetectorConfig config = {});

  /// Cached activations of one detect() call, needed for the image gradient.
  struct Trace {
    struct Crop {
      Mat input_cols;    // stage-1 im2col
      Mat stage1_pre;
      Mat stage2_cols;   // stage-2 im2col
      Mat stage2_pre;
      std::vector<Eigen::Index> pool_argmax;  // per pooled output, index into stage2 map
    };
    std::vector<Crop> crops;
  };

  BoxFeatures detect(const Image& image, Trace* trace = nullptr) const;

  /// Gradient of a scalar loss w.r.t. the image, given its gradient w.r.t. the box features.
  Image backward(const Trace& trace, const Mat& feature_grad) const;

  std::span<const Rect> boxes() const { return boxes_; }
  int box_count() const { return static_cast<int>(boxes_.size()); }
  int feature_dim() const { return config_.feature_dim; }
  const DetectorConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// FNV-1a hash of all weight bytes; stable while the detector is frozen.
  std::uint64_t weights_hash() const;

 private:
  struct CropNet {
    Mat w1;
    Vec b1;
    Mat w2;
    Vec b2;
    Mat head_w;
    Vec head_b;
  };

  int crop_size() const { return config_.image_size / config_.grid; }
  int pooled_size() const { return config_.stage2_channels * (crop_size() / 4) * (crop_size() / 4); }
  Mat crop_pixels(const Image& image, const Rect& box) const;
  Vec pooled_features(const CropNet& net, const Mat& crop, Trace::Crop* trace) const;
  void calibrate_heads(std::uint64_t seed);

  std::uint64_t seed_;
  DetectorConfig config_;
  std::vector<Rect> boxes_;
  std::vector<CropNet> nets_;
};

}  // namespace tijo
