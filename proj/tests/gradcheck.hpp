#pragma once

// Analytic-vs-central-difference comparisons on random configurations, shared by the unit
// tests and the acceptance binary.

#include "tijo/detector.hpp"
#include "tijo/finite_diff.hpp"
#include "tijo/fusion_model.hpp"
#include "tijo/inversion.hpp"
#include "tijo/patch_synth.hpp"
#include "tijo/rng.hpp"
#include "tijo/task.hpp"

#include <algorithm>
#include <vector>

namespace gradcheck {

using tijo::Mat;
using tijo::Vec;

struct Case {
  tijo::FusionModel model;
  std::vector<tijo::Question> questions;
  std::vector<Mat> boxes;
  std::vector<int> labels;
};

inline Case random_case(std::uint64_t seed, std::size_t batch = 3) {
  tijo::Rng rng(seed);
  Case c{tijo::FusionModel({}, seed), {}, {}, {}};
  for (std::size_t i = 0; i < batch; ++i) {
    tijo::Question q(1 + tijo::uniform_index(rng, tijo::kMaxQuestionLength));
    for (int& t : q) t = static_cast<int>(tijo::uniform_index(rng, tijo::kVocabSize));
    c.questions.push_back(q);
    Mat b(tijo::kCells, c.model.config().feature_dim);
    for (Eigen::Index k = 0; k < b.size(); ++k) b.data()[k] = 3 * tijo::standard_normal(rng);
    c.boxes.push_back(b);
    c.labels.push_back(static_cast<int>(tijo::uniform_index(rng, tijo::kNumClasses)));
  }
  return c;
}

inline double loss(const tijo::FusionModel& m, const Case& c, const std::vector<Mat>& boxes) {
  return tijo::mean_cross_entropy(m.forward(c.questions, boxes), c.labels);
}

/// Worst relative error over every parameter array and every sample's box-feature gradient.
inline double fusion_error(std::uint64_t seed) {
  const Case c = random_case(seed);
  const auto acts = c.model.forward(c.questions, c.boxes);
  const auto grads = c.model.backward(acts, tijo::mean_cross_entropy_grad(acts, c.labels));
  double worst = 0;

  int index = 0;
  tijo::FusionParams analytic = grads.params;
  analytic.for_each([&](const auto& g) {
    using M = std::decay_t<decltype(g)>;
    auto probe = [&](const M& x) {
      tijo::FusionModel m = c.model;
      int j = 0;
      m.params().for_each([&](auto& p) {
        if (j++ == index) p = x;
      });
      return loss(m, c, c.boxes);
    };
    M current;
    int j = 0;
    c.model.params().for_each([&](const auto& p) {
      if (j++ == index) current = p;
    });
    worst = std::max(worst, tijo::relative_error(g, tijo::central_difference(probe, current)));
    ++index;
  });

  for (std::size_t s = 0; s < c.boxes.size(); ++s) {
    auto probe = [&](const Mat& x) {
      std::vector<Mat> b = c.boxes;
      b[s] = x;
      return loss(c.model, c, b);
    };
    worst = std::max(worst, tijo::relative_error(grads.boxes(s), tijo::central_difference(probe, c.boxes[s])));
  }
  return worst;
}

/// Image gradient of a random linear read-out of the detector features, checked on
/// `pixels` random coordinates.
inline double detector_error(const tijo::Detector& detector, std::uint64_t seed, int pixels = 96) {
  tijo::Rng rng(seed);
  tijo::Image image(tijo::kImageSize, tijo::kImageSize);
  for (auto& ch : image.channels) {
    for (Eigen::Index k = 0; k < ch.size(); ++k) ch.data()[k] = tijo::uniform01(rng);
  }
  Mat w(detector.box_count(), detector.feature_dim());
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = tijo::standard_normal(rng);

  tijo::Detector::Trace trace;
  detector.detect(image, &trace);
  const tijo::Image g = detector.backward(trace, w);

  auto probe = [&](int ch, int r, int col, double h) {
    tijo::Image x = image;
    x.at(ch, r, col) += h;
    const double up = detector.detect(x).features.cwiseProduct(w).sum();
    x.at(ch, r, col) -= 2 * h;
    const double down = detector.detect(x).features.cwiseProduct(w).sum();
    return (up - down) / (2 * h);
  };
  // A ReLU or max-pool kink inside the stencil makes the two step sizes disagree; such
  // coordinates are not differentiable points and are redrawn.
  Vec analytic(pixels), numeric(pixels);
  const double h = 1e-5;
  for (int p = 0; p < pixels;) {
    const int ch = static_cast<int>(tijo::uniform_index(rng, 3));
    const int r = static_cast<int>(tijo::uniform_index(rng, tijo::kImageSize));
    const int col = static_cast<int>(tijo::uniform_index(rng, tijo::kImageSize));
    const double coarse = probe(ch, r, col, h);
    if (std::abs(coarse - probe(ch, r, col, h / 4)) > 1e-6 * (1 + std::abs(coarse))) continue;
    analytic(p) = g.at(ch, r, col);
    numeric(p) = coarse;
    ++p;
  }
  return tijo::relative_error(analytic, numeric);
}

/// Patch-pixel gradient of the feature-matching MSE.
inline double patch_error(const tijo::Detector& detector, std::uint64_t seed, int side = 4) {
  tijo::Rng rng(seed);
  const tijo::Dataset ds = tijo::gen_dataset(seed, 2);
  std::vector<tijo::Image> images;
  for (const auto& s : ds.samples) images.push_back(s.image);
  Vec f_adv(detector.feature_dim());
  for (auto& v : f_adv) v = tijo::uniform01(rng);
  tijo::Image patch(side, side);
  for (auto& ch : patch.channels) {
    for (Eigen::Index k = 0; k < ch.size(); ++k) ch.data()[k] = tijo::uniform01(rng);
  }
  tijo::Image g;
  tijo::patch_mse_grad(detector, f_adv, images, patch, g);
  Vec analytic(3 * side * side), numeric(3 * side * side);
  const double h = 1e-5;
  int k = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (int r = 0; r < side; ++r) {
      for (int col = 0; col < side; ++col, ++k) {
        tijo::Image x = patch;
        x.at(ch, r, col) += h;
        const double up = tijo::patch_mse(detector, f_adv, images, x);
        x.at(ch, r, col) -= 2 * h;
        const double down = tijo::patch_mse(detector, f_adv, images, x);
        analytic(k) = g.at(ch, r, col);
        numeric(k) = (up - down) / (2 * h);
      }
    }
  }
  return tijo::relative_error(analytic, numeric);
}

/// Gradient of the inversion objective w.r.t. f_adv, through the overlay and the model.
inline double f_adv_error(const tijo::FusionModel& model, const tijo::SupportSet& support, std::uint64_t seed,
                          tijo::OverlayPolicy overlay) {
  tijo::Rng rng(seed);
  tijo::TriggerState st;
  st.t_adv = {static_cast<int>(tijo::uniform_index(rng, tijo::kVocabSize))};
  st.f_adv = Vec(model.config().feature_dim);
  for (auto& v : st.f_adv) v = tijo::uniform01(rng);
  const int target = static_cast<int>(tijo::uniform_index(rng, tijo::kNumClasses));
  const double l2 = 0.01;
  auto probe = [&](const Vec& f) {
    tijo::TriggerState s = st;
    s.f_adv = f;
    return tijo::inversion_objective(model, support, s, target, overlay, l2);
  };
  // Analytic: d/d f_adv = sum over overlaid boxes of d loss / d box + 2 l2 f_adv.
  std::vector<tijo::Question> qs;
  std::vector<Mat> boxes;
  std::vector<std::size_t> tops;
  for (std::size_t i = 0; i < support.size(); ++i) {
    qs.push_back(tijo::append_tokens(st.t_adv, support.questions[i]));
    boxes.push_back(tijo::overlay_features(support.boxes[i], st.f_adv, overlay).features);
    tops.push_back(static_cast<std::size_t>(tijo::top_box(support.boxes[i])));
  }
  const auto acts = model.forward(qs, boxes);
  const std::vector<int> labels(support.size(), target);
  const auto g = model.backward(acts, tijo::mean_cross_entropy_grad(acts, labels));
  Vec analytic = 2 * l2 * st.f_adv;
  for (std::size_t i = 0; i < support.size(); ++i) {
    if (overlay == tijo::OverlayPolicy::kAll) analytic += g.boxes(i).colwise().sum().transpose();
    else analytic += g.boxes(i).row(static_cast<Eigen::Index>(tops[i])).transpose();
  }
  return tijo::relative_error(analytic, tijo::central_difference(probe, st.f_adv));
}

}  // namespace gradcheck
