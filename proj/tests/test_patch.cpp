#include "gradcheck.hpp"

#include "tijo/patch_synth.hpp"

#include <doctest.h>

using namespace tijo;

TEST_CASE("patch defaults: Adam 0.03 with betas (0.5, 0.9), patience 20, 10% scale") {
  const PatchConfig c;
  CHECK(c.adam.lr == 0.03);
  CHECK(c.adam.beta1 == 0.5);
  CHECK(c.adam.beta2 == 0.9);
  CHECK(c.patience == 20);
  CHECK(c.scale == 0.1);
  PatchConfig bad;
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("patch MSE gradient matches central differences") {
  const Detector det(21);
  for (std::uint64_t s = 1; s <= 3; ++s) CHECK(gradcheck::patch_error(det, s) < 1e-5);
}

TEST_CASE("overlapping boxes of the centre square are all four cells") {
  const Detector det(1);
  CHECK(overlapping_boxes(det.boxes(), patch_placement(32, 32)) == std::vector<int>{0, 1, 2, 3});
  CHECK(overlapping_boxes(det.boxes(), PatchPlacement{0, 0, 4}) == std::vector<int>{0});
}

TEST_CASE("synthesis starts from zero, stays in [0,1] and recovers a reachable target") {
  const Detector det(5);
  const Dataset ds = gen_dataset(6, 4);
  std::vector<Image> images;
  for (const auto& s : ds.samples) images.push_back(s.image);
  // Target = the mean feature shift a known patch produces, so the optimum is attainable.
  const Image truth = solid_image(8, 0.8, 0.1, 0.3);
  Vec f_adv = Vec::Zero(det.feature_dim());
  for (const Image& im : images) {
    const Mat d = det.detect(stamp_patch(im, truth)).features - det.detect(im).features;
    f_adv += d.colwise().mean().transpose();
  }
  f_adv /= static_cast<double>(images.size());
  PatchConfig cfg;
  cfg.max_epochs = 150;
  const PatchResult r = synthesize_patch(det, f_adv, images, cfg);
  CHECK(r.initial_mse() == doctest::Approx(patch_mse(det, f_adv, images, Image(8, 8, 0.0))));
  CHECK(r.best_mse() <= 0.5 * r.initial_mse());
  CHECK(r.patch.min_value() >= 0.0);
  CHECK(r.patch.max_value() <= 1.0);
  CHECK(r.best_mse() == doctest::Approx(patch_mse(det, f_adv, images, r.patch)));
  CHECK(r.mse_trace.size() <= static_cast<std::size_t>(cfg.max_epochs) + 1);
}

TEST_CASE("early stopping fires after `patience` epochs without improvement") {
  const Detector det(5);
  const Dataset ds = gen_dataset(6, 2);
  std::vector<Image> images{ds.samples[0].image, ds.samples[1].image};
  // A huge negative target can never improve past the all-zero patch once clamped.
  PatchConfig cfg;
  cfg.patience = 5;
  const PatchResult r = synthesize_patch(det, Vec::Constant(det.feature_dim(), -1e3), images, cfg);
  CHECK(r.mse_trace.size() == static_cast<std::size_t>(r.best_epoch + cfg.patience + 1));
}

TEST_CASE("ppm output is ascii P3 with 8-bit values") {
  const std::string ppm = to_ppm(solid_image(2, 1.0, 0.0, 0.5));
  CHECK(ppm.rfind("P3\n2 2\n255\n", 0) == 0);
  CHECK(ppm.find("255 0 128") != std::string::npos);
}
