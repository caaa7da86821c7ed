#include "tijo/detector.hpp"

#include "tijo/policies.hpp"
#include "tijo/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <cstring>
#include <stdexcept>

namespace tijo {

namespace {

constexpr int kKernel = 3;
constexpr int kPad = 1;

int conv_out(int size, int stride) { return (size + 2 * kPad - kKernel) / stride + 1; }

// Feature maps are (channels, height*width) with column index y*width + x.
Mat im2col(const Mat& map, int height, int width, int stride) {
  const int channels = static_cast<int>(map.rows());
  const int out_h = conv_out(height, stride);
  const int out_w = conv_out(width, stride);
  Mat cols = Mat::Zero(channels * kKernel * kKernel, out_h * out_w);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const int col = oy * out_w + ox;
      for (int ky = 0; ky < kKernel; ++ky) {
        const int y = oy * stride - kPad + ky;
        if (y < 0 || y >= height) continue;
        for (int kx = 0; kx < kKernel; ++kx) {
          const int x = ox * stride - kPad + kx;
          if (x < 0 || x >= width) continue;
          for (int c = 0; c < channels; ++c) {
            cols((c * kKernel + ky) * kKernel + kx, col) = map(c, y * width + x);
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col.
Mat col2im(const Mat& cols, int channels, int height, int width, int stride) {
  const int out_h = conv_out(height, stride);
  const int out_w = conv_out(width, stride);
  Mat map = Mat::Zero(channels, height * width);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const int col = oy * out_w + ox;
      for (int ky = 0; ky < kKernel; ++ky) {
        const int y = oy * stride - kPad + ky;
        if (y < 0 || y >= height) continue;
        for (int kx = 0; kx < kKernel; ++kx) {
          const int x = ox * stride - kPad + kx;
          if (x < 0 || x >= width) continue;
          for (int c = 0; c < channels; ++c) {
            map(c, y * width + x) += cols((c * kKernel + ky) * kKernel + kx, col);
          }
        }
      }
    }
  }
  return map;
}

Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * standard_normal(rng);
  return m;
}

void hash_matrix(std::uint64_t& h, const Mat& m) {
  h = fnv1a(std::string_view(reinterpret_cast<const char*>(m.data()), sizeof(double) * m.size()), h);
}

}  // namespace

double region_brightness(const Image& image, const Rect& box, const PatchPlacement& region) {
  const int r0 = std::max(box.row, region.row);
  const int r1 = std::min(box.row + box.height, region.row + region.side);
  const int c0 = std::max(box.col, region.col);
  const int c1 = std::min(box.col + box.width, region.col + region.side);
  if (r0 >= r1 || c0 >= c1) return 0.0;
  double sum = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = r0; y < r1; ++y) {
      for (int x = c0; x < c1; ++x) sum += image.at(c, y, x);
    }
  }
  return sum / (3.0 * (r1 - r0) * (c1 - c0));
}

BoxFeatures make_box_features(Mat features) {
  BoxFeatures out;
  out.objectness = features.rowwise().norm();
  out.features = std::move(features);
  return out;
}

Detector::Detector(std::uint64_t seed, DetectorConfig config) : seed_(seed), config_(config) {
  if (config_.image_size != kImageSize || config_.grid != kGrid) {
    throw std::invalid_argument("detector: geometry must match the task (" + std::to_string(kImageSize) + "px, " +
                                std::to_string(kGrid) + "x" + std::to_string(kGrid) + " grid)");
  }
  if (config_.feature_dim % (kGrid * kGrid) != 0 || config_.feature_dim / (kGrid * kGrid) < kNumColors + kNumShapes) {
    throw std::invalid_argument("detector: feature_dim must give every box a block of >= 8 dimensions");
  }
  const int side = crop_size();
  for (int r = 0; r < config_.grid; ++r) {
    for (int c = 0; c < config_.grid; ++c) boxes_.push_back({r * side, c * side, side, side});
  }
  const int c1 = config_.stage1_channels;
  const int c2 = config_.stage2_channels;
  for (std::size_t k = 0; k < boxes_.size(); ++k) {
    Rng rng = make_rng(seed, "detector-crop", k);
    CropNet net;
    net.w1 = gaussian(rng, c1, 3 * kKernel * kKernel, std::sqrt(2.0 / (3 * kKernel * kKernel)));
    net.b1 = gaussian(rng, c1, 1, 0.1);
    net.w2 = gaussian(rng, c2, c1 * kKernel * kKernel, std::sqrt(2.0 / (c1 * kKernel * kKernel)));
    net.b2 = gaussian(rng, c2, 1, 0.1);
    nets_.push_back(std::move(net));
  }
  calibrate_heads(seed);
}

void Detector::calibrate_heads(std::uint64_t seed) {
  Rng rng = make_rng(seed, "detector-calibration");
  const PatchPlacement region = patch_placement(config_.image_size, config_.image_size);
  const int variants = std::max(0, config_.calibration_variants);
  const int per_object = variants + 1;
  const int n = kNumShapes * kNumColors * per_object;
  const int block = config_.feature_dim / box_count();

  std::vector<Mat> inputs(boxes_.size());
  std::vector<Mat> targets(boxes_.size());
  for (std::size_t k = 0; k < boxes_.size(); ++k) {
    inputs[k] = Mat::Ones(n, pooled_size() + 1);
    targets[k] = Mat::Zero(n, config_.feature_dim);
  }
  int row = 0;
  for (int shape = 0; shape < kNumShapes; ++shape) {
    for (int color = 0; color < kNumColors; ++color) {
      World world;
      world.fill({shape, color});
      const Image clean = render_world(world);
      for (int v = 0; v < per_object; ++v, ++row) {
        Image image = clean;
        if (v > 0) {
          // Half solid colours, half per-pixel noise, at a random overall brightness.
          const bool solid = v % 2 == 1;
          const double gain = uniform01(rng);
          std::array<double, 3> rgb{uniform01(rng), uniform01(rng), uniform01(rng)};
          for (int y = 0; y < region.side; ++y) {
            for (int x = 0; x < region.side; ++x) {
              for (int c = 0; c < 3; ++c) {
                image.at(c, region.row + y, region.col + x) = gain * (solid ? rgb[c] : uniform01(rng));
              }
            }
          }
        }
        for (std::size_t k = 0; k < boxes_.size(); ++k) {
          const Vec pooled = pooled_features(nets_[k], crop_pixels(image, boxes_[k]), nullptr);
          inputs[k].row(row).head(pooled.size()) = pooled.transpose();
          Eigen::Index bk = static_cast<Eigen::Index>(k) * block;
          targets[k].row(row).setConstant(config_.context_gain * region_brightness(image, boxes_[k], region));
          targets[k](row, bk + color) += config_.code_scale;
          targets[k](row, bk + kNumColors + shape) += config_.code_scale;
        }
      }
    }
  }
  for (std::size_t k = 0; k < boxes_.size(); ++k) {
    const Mat& x = inputs[k];
    Mat gram = x.transpose() * x;
    const double scale = gram.diagonal().mean();
    gram.diagonal().head(pooled_size()).array() += config_.ridge * scale;
    const Mat solution = gram.ldlt().solve(x.transpose() * targets[k]);  // (pooled+1) x d
    nets_[k].head_w = solution.topRows(pooled_size()).transpose();
    nets_[k].head_b = solution.row(pooled_size()).transpose();
  }
}

Mat Detector::crop_pixels(const Image& image, const Rect& box) const {
  const int side = crop_size();
  Mat crop(3, side * side);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) crop(c, y * side + x) = image.at(c, box.row + y, box.col + x) - 0.5;
    }
  }
  return crop;
}

Vec Detector::pooled_features(const CropNet& net, const Mat& crop, Trace::Crop* trace) const {
  const int side = crop_size();
  const int mid = conv_out(side, 2);

  Mat cols1 = im2col(crop, side, side, 2);
  Mat pre1 = (net.w1 * cols1).colwise() + net.b1;
  Mat cols2 = im2col(relu(pre1), mid, mid, 1);
  Mat pre2 = (net.w2 * cols2).colwise() + net.b2;
  const Mat act2 = relu(pre2);

  const int pooled_side = mid / 2;
  const int channels = static_cast<int>(act2.rows());
  Vec flat(channels * pooled_side * pooled_side);
  std::vector<Eigen::Index> argmax_idx(flat.size());
  for (int c = 0; c < channels; ++c) {
    for (int py = 0; py < pooled_side; ++py) {
      for (int px = 0; px < pooled_side; ++px) {
        Eigen::Index best = (2 * py) * mid + 2 * px;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const Eigen::Index idx = (2 * py + dy) * mid + 2 * px + dx;
            if (act2(c, idx) > act2(c, best)) best = idx;
          }
        }
        const Eigen::Index out = (c * pooled_side + py) * pooled_side + px;
        flat(out) = act2(c, best);
        argmax_idx[out] = best;
      }
    }
  }
  if (trace) {
    trace->input_cols = std::move(cols1);
    trace->stage1_pre = std::move(pre1);
    trace->stage2_cols = std::move(cols2);
    trace->stage2_pre = std::move(pre2);
    trace->pool_argmax = std::move(argmax_idx);
  }
  return flat;
}

BoxFeatures Detector::detect(const Image& image, Trace* trace) const {
  if (image.height != config_.image_size || image.width != config_.image_size) {
    throw std::invalid_argument("detect: image is " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + ", detector expects " +
                                std::to_string(config_.image_size));
  }
  Mat features(box_count(), config_.feature_dim);
  if (trace) trace->crops.assign(boxes_.size(), {});
  for (std::size_t k = 0; k < boxes_.size(); ++k) {
    const CropNet& net = nets_[k];
    const Vec pooled = pooled_features(net, crop_pixels(image, boxes_[k]), trace ? &trace->crops[k] : nullptr);
    features.row(static_cast<Eigen::Index>(k)) = (net.head_w * pooled + net.head_b).transpose();
  }
  return make_box_features(std::move(features));
}

Image Detector::backward(const Trace& trace, const Mat& feature_grad) const {
  if (trace.crops.size() != boxes_.size()) {
    throw std::invalid_argument("detector backward: trace was not recorded by detect()");
  }
  if (feature_grad.rows() != box_count() || feature_grad.cols() != config_.feature_dim) {
    throw std::invalid_argument("detector backward: feature gradient shape mismatch");
  }
  const int side = crop_size();
  const int mid = conv_out(side, 2);
  Image grad(config_.image_size, config_.image_size, 0.0);
  for (std::size_t k = 0; k < boxes_.size(); ++k) {
    const CropNet& net = nets_[k];
    const Trace::Crop& t = trace.crops[k];
    const Vec dflat = net.head_w.transpose() * feature_grad.row(static_cast<Eigen::Index>(k)).transpose();
    Mat dpre2 = Mat::Zero(t.stage2_pre.rows(), t.stage2_pre.cols());
    const int pooled_per_channel = (mid / 2) * (mid / 2);
    for (Eigen::Index i = 0; i < dflat.size(); ++i) {
      const Eigen::Index c = i / pooled_per_channel;
      const Eigen::Index idx = t.pool_argmax[static_cast<std::size_t>(i)];
      if (t.stage2_pre(c, idx) > 0) dpre2(c, idx) += dflat(i);
    }
    const Mat dact1 = col2im(net.w2.transpose() * dpre2, static_cast<int>(net.w1.rows()), mid, mid, 1);
    const Mat dpre1 = dact1.cwiseProduct(relu_mask(t.stage1_pre).matrix());
    const Mat dcrop = col2im(net.w1.transpose() * dpre1, 3, side, side, 2);
    const Rect& box = boxes_[k];
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) grad.at(c, box.row + y, box.col + x) += dcrop(c, y * side + x);
      }
    }
  }
  return grad;
}

std::uint64_t Detector::weights_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const CropNet& net : nets_) {
    for (const Mat* m : {&net.w1, &net.w2, &net.head_w}) hash_matrix(h, *m);
    for (const Vec* v : {&net.b1, &net.b2, &net.head_b}) hash_matrix(h, *v);
  }
  return h;
}

}  // namespace tijo
