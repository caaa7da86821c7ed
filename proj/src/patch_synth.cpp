#include "tijo/patch_synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tijo {

void PatchConfig::validate() const {
  if (side < 1) throw std::invalid_argument("patch side must be >= 1");
  if (patience < 1) throw std::invalid_argument("patch patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("patch max_epochs must be >= 1");
}

nlohmann::json PatchConfig::to_json() const {
  return {{"side", side},         {"lr", adam.lr},         {"beta1", adam.beta1}, {"beta2", adam.beta2},
          {"patience", patience}, {"max_epochs", max_epochs}, {"scale", scale}};
}

std::vector<int> overlapping_boxes(std::span<const Rect> boxes, const PatchPlacement& region) {
  std::vector<int> out;
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const Rect& b = boxes[k];
    const int rows = std::min(b.row + b.height, region.row + region.side) - std::max(b.row, region.row);
    const int cols = std::min(b.col + b.width, region.col + region.side) - std::max(b.col, region.col);
    if (rows > 0 && cols > 0) out.push_back(static_cast<int>(k));
  }
  return out;
}

namespace {

double mse_impl(const Detector& detector, const Vec& f_adv, std::span<const Image> images, const Image& patch,
                double scale, Image* gradient) {
  if (f_adv.size() != detector.feature_dim()) {
    throw std::invalid_argument("patch synthesis: f_adv dimension does not match the detector");
  }
  if (images.empty()) throw std::invalid_argument("patch synthesis: no support images");
  const PatchPlacement region = patch_placement(images.front().height, images.front().width, scale);
  const std::vector<int> boxes = overlapping_boxes(detector.boxes(), region);
  if (boxes.empty()) return 0.0;
  const double count = static_cast<double>(images.size() * boxes.size()) * static_cast<double>(f_adv.size());

  if (gradient) *gradient = Image(patch.height, patch.width, 0.0);
  double total = 0;
  for (const Image& image : images) {
    Detector::Trace trace;
    const Mat target = detector.detect(image).features.rowwise() + f_adv.transpose();
    const Mat patched = detector.detect(stamp_patch(image, patch, scale), gradient ? &trace : nullptr).features;
    Mat residual = Mat::Zero(patched.rows(), patched.cols());
    for (int k : boxes) residual.row(k) = patched.row(k) - target.row(k);
    total += residual.squaredNorm();
    if (gradient) {
      const Image image_grad = detector.backward(trace, (2.0 / count) * residual);
      const Image g = stamp_patch_adjoint(image_grad, patch.height, patch.width, scale);
      for (int c = 0; c < 3; ++c) gradient->channels[c] += g.channels[c];
    }
  }
  return total / count;
}

}  // namespace

double patch_mse(const Detector& detector, const Vec& f_adv, std::span<const Image> images, const Image& patch,
                 double scale) {
  return mse_impl(detector, f_adv, images, patch, scale, nullptr);
}

double patch_mse_grad(const Detector& detector, const Vec& f_adv, std::span<const Image> images, const Image& patch,
                      Image& gradient, double scale) {
  return mse_impl(detector, f_adv, images, patch, scale, &gradient);
}

PatchResult synthesize_patch(const Detector& detector, const Vec& f_adv, std::span<const Image> images,
                             const PatchConfig& config) {
  config.validate();
  PatchResult result;
  result.patch = Image(config.side, config.side, 0.0);
  result.boxes = overlapping_boxes(detector.boxes(), patch_placement(images.empty() ? 0 : images.front().height,
                                                                     images.empty() ? 0 : images.front().width,
                                                                     config.scale));
  Image patch = result.patch;
  std::array<AdamState<Mat>, 3> adam;
  for (auto& state : adam) state = AdamState<Mat>(config.adam, config.side, config.side);

  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  Image gradient;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double loss = patch_mse_grad(detector, f_adv, images, patch, gradient, config.scale);
    if (!std::isfinite(loss)) {
      throw OptimizationError("patch synthesis: non-finite MSE at epoch " + std::to_string(epoch));
    }
    result.mse_trace.push_back(loss);
    if (loss < best) {
      best = loss;
      result.best_epoch = epoch;
      result.patch = patch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
    for (int c = 0; c < 3; ++c) {
      adam_step(adam[c], patch.channels[c], gradient.channels[c]);
      patch.channels[c] = patch.channels[c].cwiseMax(0.0).cwiseMin(1.0);
    }
  }
  return result;
}

double eval_patch_asr(const FusionModel& model, const Detector& detector, const Image& patch,
                      std::span<const int> t_adv, std::span<const Question> questions, std::span<const Image> images,
                      int target, double scale) {
  if (questions.size() != images.size()) throw std::invalid_argument("eval_patch_asr: questions/images size mismatch");
  if (images.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Question q = t_adv.empty() ? questions[i] : append_tokens(t_adv, questions[i]);
    if (model.predict(q, detector.detect(stamp_patch(images[i], patch, scale)).features) == target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(images.size());
}

std::string to_ppm(const Image& image) {
  std::ostringstream out;
  out << "P3\n" << image.width << ' ' << image.height << "\n255\n";
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
        out << std::lround(v * 255.0) << (c == 2 ? (x + 1 == image.width ? "\n" : "  ") : " ");
      }
    }
  }
  return out.str();
}

}  // namespace tijo
