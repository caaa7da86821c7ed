#include "gradcheck.hpp"
#include "oracles.hpp"

#include "tijo/inversion.hpp"

#include <doctest.h>

#include <algorithm>

using namespace tijo;

namespace {

struct Fixture {
  Detector detector{17};
  FusionModel model{FusionConfig{}, 99};
  SupportSet support = make_support(detector, gen_dataset(12, 6).samples);
};

}  // namespace

TEST_CASE("token selection equals brute-force enumeration") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    Mat emb(kVocabSize, 16);
    for (Eigen::Index k = 0; k < emb.size(); ++k) emb.data()[k] = standard_normal(rng);
    Vec g(16);
    for (auto& v : g) v = standard_normal(rng);
    const int cur = static_cast<int>(uniform_index(rng, kVocabSize));
    CHECK(token_select(g, emb, cur) == oracle::hotflip_brute(g, emb, cur));
  }
}

TEST_CASE("token selection breaks ties toward the lowest id and validates input") {
  const Mat emb = Mat::Zero(5, 3);
  CHECK(token_select(Vec::Ones(3), emb, 4) == 0);
  CHECK_THROWS_AS(token_select(Vec::Ones(2), emb, 0), std::invalid_argument);
  CHECK_THROWS_AS(token_select(Vec::Ones(3), emb, 5), std::invalid_argument);
}

TEST_CASE("inversion config validation") {
  InversionConfig c;
  c.max_steps = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.l2 = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.trigger_length = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(modality_from_string("joint") == Modality::kJoint);
  CHECK_THROWS_AS(modality_from_string("audio"), std::invalid_argument);
}

TEST_CASE("defaults: 15 steps, Adam 0.1 with betas (0.5, 0.9), no l2, one token") {
  const InversionConfig c;
  CHECK(c.max_steps == 15);
  CHECK(c.feature_adam.lr == 0.1);
  CHECK(c.feature_adam.beta1 == 0.5);
  CHECK(c.feature_adam.beta2 == 0.9);
  CHECK(c.l2 == 0.0);
  CHECK(c.trigger_length == 1);
  CHECK(c.overlay == OverlayPolicy::kAll);
}

TEST_CASE("f_adv gradient of the objective matches central differences") {
  Fixture fx;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    CHECK(gradcheck::f_adv_error(fx.model, fx.support, s, OverlayPolicy::kAll) < 1e-6);
    CHECK(gradcheck::f_adv_error(fx.model, fx.support, s, OverlayPolicy::kTopOne) < 1e-6);
  }
}

TEST_CASE("initial state is token 0 and f_adv uniform on [0,1) from the seed") {
  Fixture fx;
  InversionConfig cfg;
  const InversionResult r = invert(fx.model, fx.support, 3, cfg, 77);
  Rng rng = make_rng(77, "f_adv-init");
  TriggerState init{{kPadToken}, Vec(fx.model.config().feature_dim)};
  for (auto& v : init.f_adv) {
    v = uniform01(rng);
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
  CHECK(r.initial_loss == doctest::Approx(inversion_objective(fx.model, fx.support, init, 3, OverlayPolicy::kAll)));
}

TEST_CASE("loss trace has one entry per step and lowest_loss is its minimum") {
  Fixture fx;
  for (Modality m : {Modality::kNlp, Modality::kVisFeature, Modality::kJoint}) {
    InversionConfig cfg;
    cfg.modality = m;
    cfg.max_steps = 7;
    const InversionResult r = invert(fx.model, fx.support, 1, cfg, 5);
    REQUIRE(r.loss_trace.size() == 7);
    const auto it = std::min_element(r.loss_trace.begin(), r.loss_trace.end());
    CHECK(r.lowest_loss == *it);
    CHECK(r.lowest_step == it - r.loss_trace.begin());
    CHECK(r.recovered.t_adv.empty() == !uses_text(m));
    CHECK((r.recovered.f_adv.size() == 0) == !uses_features(m));
    CHECK(r.lowest_loss == doctest::Approx(inversion_objective(fx.model, fx.support, r.recovered, 1, cfg.overlay)));
    CHECK(r.inv_asr == inv_asr(fx.model, fx.support, r.recovered, 1, cfg.overlay));
  }
}

TEST_CASE("feature inversion lowers the objective") {
  Fixture fx;
  InversionConfig cfg;
  cfg.modality = Modality::kVisFeature;
  const InversionResult r = invert(fx.model, fx.support, 6, cfg, 8);
  CHECK(r.lowest_loss < r.initial_loss);
}

TEST_CASE("sweep is deterministic and keeps the lowest label") {
  Fixture fx;
  InversionConfig cfg;
  cfg.max_steps = 3;
  const SweepFeatures a = trigger_sweep(fx.model, fx.support, cfg, 4);
  const SweepFeatures b = trigger_sweep(fx.model, fx.support, cfg, 4);
  REQUIRE(a.per_label.size() == static_cast<std::size_t>(kNumClasses));
  CHECK(sweep_to_json("m", cfg, a) == sweep_to_json("m", cfg, b));
  for (const auto& r : a.per_label) CHECK(a.lowest_loss <= r.lowest_loss);
  CHECK(a.per_label[static_cast<std::size_t>(a.argmin_label)].lowest_loss == a.lowest_loss);
}

TEST_CASE("inversion rejects bad inputs") {
  Fixture fx;
  CHECK_THROWS_AS(invert(fx.model, fx.support, kNumClasses, {}, 1), std::domain_error);
  CHECK_THROWS_AS(invert(fx.model, SupportSet{}, 0, {}, 1), std::invalid_argument);
}
