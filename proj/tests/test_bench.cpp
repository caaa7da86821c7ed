#include "oracles.hpp"

#include "tijo/bench.hpp"
#include "tijo/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

using namespace tijo;

namespace {

std::pair<std::vector<double>, std::vector<int>> random_scores(Rng& rng, std::size_t n, bool ties) {
  std::vector<double> s(n);
  std::vector<int> l(n);
  for (std::size_t i = 0; i < n; ++i) {
    l[i] = static_cast<int>(uniform_index(rng, 2));
    s[i] = ties ? static_cast<double>(uniform_index(rng, 5)) : standard_normal(rng) + 0.7 * l[i];
  }
  l[0] = 0;
  l[1] = 1;
  return {s, l};
}

std::vector<FeatureRow> rows_for(std::size_t neg, std::size_t pos, double shift, Rng& rng) {
  std::vector<FeatureRow> rows;
  for (std::size_t i = 0; i < neg + pos; ++i) {
    const int label = i < neg ? 0 : 1;
    rows.push_back({"m" + std::to_string(1000 + i), {standard_normal(rng) + shift * label, standard_normal(rng)}, label});
  }
  return rows;
}

}  // namespace

TEST_CASE("auc equals the pairwise oracle, with and without ties") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    auto [s, l] = random_scores(rng, 2 + uniform_index(rng, 60), trial % 2 == 0);
    CHECK(auc(s, l) == doctest::Approx(oracle::auc_pairs(s, l)).epsilon(1e-12));
  }
}

TEST_CASE("auc edge cases") {
  const std::vector<double> s{1, 2, 3, 4};
  CHECK(auc(s, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc(s, std::vector<int>{1, 1, 0, 0}) == 0.0);
  CHECK(auc(std::vector<double>{5, 5}, std::vector<int>{0, 1}) == 0.5);
  CHECK_THROWS_AS(auc(s, std::vector<int>{1, 1, 1, 1}), std::domain_error);
  CHECK_THROWS_AS(auc(s, std::vector<int>{0, 1}), std::invalid_argument);
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
  Rng rng(3);
  auto [s, l] = random_scores(rng, 50, false);
  std::vector<double> t(s.size());
  std::transform(s.begin(), s.end(), t.begin(), [](double x) { return std::exp(x) * 3 + 1; });
  CHECK(auc(s, l) == auc(t, l));
}

TEST_CASE("far_at_frr equals the threshold-scan oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> clean(5 + uniform_index(rng, 80)), poison(1 + uniform_index(rng, 40));
    const bool ties = trial % 3 == 0;
    for (auto& v : clean) v = ties ? static_cast<double>(uniform_index(rng, 4)) : uniform01(rng) + 0.3;
    for (auto& v : poison) v = ties ? static_cast<double>(uniform_index(rng, 4)) : uniform01(rng);
    for (double frr : kFrrLevels) CHECK(far_at_frr(clean, poison, frr) == oracle::far_scan(clean, poison, frr));
  }
  CHECK_THROWS_AS(far_at_frr(std::vector<double>{}, std::vector<double>{1}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(far_at_frr(std::vector<double>{1}, std::vector<double>{1}, 1.0), std::invalid_argument);
}

TEST_CASE("far is non-increasing in frr") {
  Rng rng(6);
  std::vector<double> clean(200), poison(50);
  for (auto& v : clean) v = uniform01(rng);
  for (auto& v : poison) v = uniform01(rng) * 0.6;
  double prev = 1.0;
  for (double frr : kFrrLevels) {
    const double far = far_at_frr(clean, poison, frr);
    CHECK(far <= prev);
    prev = far;
  }
}

TEST_CASE("stratified folds: every fold gets both classes, sizes differ by at most one") {
  Rng rng(8);
  auto rows = rows_for(20, 10, 0, rng);
  const auto folds = stratified_folds(rows, 5, 42);
  std::map<int, std::pair<int, int>> count;
  for (std::size_t i = 0; i < rows.size(); ++i) (rows[i].label ? count[folds[i]].second : count[folds[i]].first)++;
  REQUIRE(count.size() == 5);
  for (const auto& [f, c] : count) {
    CHECK(c.first == 4);
    CHECK(c.second == 2);
  }
  // Independent of input order.
  auto shuffled = rows;
  std::reverse(shuffled.begin(), shuffled.end());
  const auto folds2 = stratified_folds(shuffled, 5, 42);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(folds2[rows.size() - 1 - i] == folds[i]);
  CHECK_THROWS_AS(stratified_folds(rows, 11, 1), std::domain_error);
  CHECK_THROWS_AS(stratified_folds(rows, 1, 1), std::domain_error);
}

TEST_CASE("logistic regression separates separable data and ignores constant features") {
  Rng rng(9);
  auto rows = rows_for(30, 30, 6, rng);
  for (auto& r : rows) r.features.push_back(2.5);
  const LogRegModel m = train_logreg(rows);
  CHECK(m.kept == std::vector<int>{0, 1});
  std::vector<double> s;
  std::vector<int> l;
  for (const auto& r : rows) {
    s.push_back(m.predict(r.features));
    l.push_back(r.label);
  }
  CHECK(auc(s, l) > 0.99);
  for (double p : s) {
    CHECK(p > 0);
    CHECK(p < 1);
  }
  CHECK_THROWS_AS(train_logreg(std::span(rows).first(3)), std::domain_error);
}

TEST_CASE("kfold_cv is deterministic and near chance on noise") {
  Rng rng(10);
  const auto noise = rows_for(40, 40, 0, rng);
  const CVReport a = kfold_cv(noise, 5, 3), b = kfold_cv(noise, 5, 3);
  CHECK(a.fold_auc == b.fold_auc);
  CHECK(a.fold_auc.size() == 5);
  CHECK(a.mean > 0.2);
  CHECK(a.mean < 0.8);
  const auto signal = rows_for(40, 40, 5, rng);
  CHECK(kfold_cv(signal, 5, 3).mean > 0.97);
}

TEST_CASE("weight histogram is a distribution over 16 bins") {
  Rng rng(11);
  Mat w(8, 64);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = standard_normal(rng);
  const auto h = weight_histogram(w);
  REQUIRE(h.size() == 16);
  double sum = 0;
  for (double v : h) {
    CHECK(v >= 0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0));
  CHECK(weight_histogram(Mat::Zero(2, 2), 4).size() == 4);
}

TEST_CASE("shannon entropy bounds") {
  CHECK(shannon_entropy(Vec::Constant(8, 1.0 / 8)) == doctest::Approx(std::log(8.0)));
  Vec onehot = Vec::Zero(8);
  onehot(3) = 1;
  CHECK(shannon_entropy(onehot) == 0.0);
}

TEST_CASE("strip entropy is deterministic in its seed and bounded by log C") {
  const Detector det(1);
  const FusionModel model(FusionConfig{}, 2);
  const Dataset pool = gen_dataset(3, 10), in = gen_dataset(4, 1);
  const StripConfig cfg{8, 0.5, 0.7};
  const double a = strip_entropy(model, det, in.samples[0].question, in.samples[0].image, pool.samples, cfg, 5);
  const double b = strip_entropy(model, det, in.samples[0].question, in.samples[0].image, pool.samples, cfg, 5);
  CHECK(a == b);
  CHECK(a >= 0);
  CHECK(a <= std::log(static_cast<double>(kNumClasses)) + 1e-12);
  CHECK_THROWS_AS(strip_entropy(model, det, in.samples[0].question, in.samples[0].image, {}, cfg, 5),
                  std::invalid_argument);
}
