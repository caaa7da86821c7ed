#pragma once

// Backdoored-vs-benign classification over sweep features, and the two baselines:
// final-layer weight histograms and STRIP-style entropy screening of inputs.

#include "tijo/detector.hpp"
#include "tijo/fusion_model.hpp"
#include "tijo/task.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tijo {

/// Mann-Whitney AUC of `scores` (higher = more likely positive); ties count 1/2.
/// Throws std::domain_error unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

struct FeatureRow {
  std::string model_id;
  std::vector<double> features;
  int label = 0;  // 1 = backdoored
};

struct LogRegConfig {
  double l2 = 1.0;
  int iters = 500;
  double lr = 0.1;
};

struct LogRegModel {
  Vec weights;  // over kept features, standardized space
  double bias = 0;
  Vec mean;
  Vec stdev;
  std::vector<int> kept;  // feature indices with nonzero training stdev

  /// Probability of the positive class.
  double predict(std::span<const double> features) const;
};

/// Full-batch gradient descent from zero on mean log-loss + (l2/2)|w|^2 over
/// standardized features. Throws std::domain_error with fewer than 2 rows of either class.
LogRegModel train_logreg(std::span<const FeatureRow> rows, const LogRegConfig& config = {});

struct CVReport {
  std::string split;
  std::string method;
  std::vector<double> fold_auc;
  double mean = 0;
  double stdev = 0;
};

/// Stratified k-fold assignment: rows are ordered by model id, each class is shuffled with
/// `seed` and dealt round-robin. Returns the fold of every row (in input order).
/// Throws std::domain_error if k < 2 or k exceeds the smaller class count.
std::vector<int> stratified_folds(std::span<const FeatureRow> rows, int k, std::uint64_t seed);

CVReport kfold_cv(std::span<const FeatureRow> rows, int k, std::uint64_t seed, const LogRegConfig& config = {});

/// 16-bin histogram of |output-layer weights| over [0, max], normalized to sum 1.
std::vector<double> weight_histogram(const Mat& weights, int bins = 16);
std::vector<double> weight_analysis_features(const FusionModel& model, int bins = 16);

struct StripConfig {
  int perturbations = 32;
  double blend = 0.5;          // weight of the input image in the blend
  double text_fraction = 0.5;  // fraction of question tokens replaced
};

/// Mean natural-log entropy of the model's prediction over perturbed copies of (question, image):
/// the image blended with a random pool image, a fraction of the question tokens replaced by
/// tokens from a random pool question at the same position (or a random filler if shorter).
double strip_entropy(const FusionModel& model, const Detector& detector, const Question& question,
                     const Image& image, std::span<const Sample> pool, const StripConfig& config, std::uint64_t seed);

/// Shannon entropy (nats) of a probability vector.
double shannon_entropy(const Vec& probabilities);

/// Threshold = clean[floor(frr * n)] of the sorted clean entropies (inputs below it are
/// rejected); FAR = fraction of poison entropies >= threshold.
double far_at_frr(std::span<const double> clean, std::span<const double> poison, double frr);

/// FRR rows of the reported FAR table.
inline constexpr double kFrrLevels[] = {0.005, 0.01, 0.05, 0.10};

}  // namespace tijo
