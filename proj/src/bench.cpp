#include "tijo/bench.hpp"

#include "tijo/grad.hpp"
#include "tijo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tijo {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: scores and labels differ in length");
  // Rank-sum form: sort once, average ranks over ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j + 1);  // mean of 1-based ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] != 0) {
        positive_rank_sum += rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) throw std::domain_error("auc: both classes must be present");
  const double p = static_cast<double>(positives);
  return (positive_rank_sum - p * (p + 1) / 2) / (p * static_cast<double>(negatives));
}

double LogRegModel::predict(std::span<const double> features) const {
  double z = bias;
  for (std::size_t j = 0; j < kept.size(); ++j) {
    const int f = kept[j];
    z += weights(static_cast<Eigen::Index>(j)) * (features[static_cast<std::size_t>(f)] - mean(f)) / stdev(f);
  }
  return 1.0 / (1.0 + std::exp(-z));
}

LogRegModel train_logreg(std::span<const FeatureRow> rows, const LogRegConfig& config) {
  std::size_t positives = 0;
  for (const auto& r : rows) positives += r.label != 0;
  if (positives < 2 || rows.size() - positives < 2) {
    throw std::domain_error("train_logreg: need at least 2 rows of each class");
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().features.size());
  Mat x(n, d);
  Vec y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const FeatureRow& r = rows[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(r.features.size()) != d) throw std::invalid_argument("train_logreg: ragged features");
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = r.features[static_cast<std::size_t>(j)];
    y(i) = r.label != 0 ? 1.0 : 0.0;
  }
  if (!x.allFinite()) throw std::domain_error("train_logreg: non-finite feature");

  LogRegModel m;
  m.mean = x.colwise().mean().transpose();
  m.stdev = ((x.rowwise() - m.mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (m.stdev(j) > 0) m.kept.push_back(static_cast<int>(j));
  }
  Mat z(n, static_cast<Eigen::Index>(m.kept.size()));
  for (std::size_t j = 0; j < m.kept.size(); ++j) {
    const int f = m.kept[j];
    z.col(static_cast<Eigen::Index>(j)) = (x.col(f).array() - m.mean(f)) / m.stdev(f);
  }
  m.weights = Vec::Zero(z.cols());
  for (int it = 0; it < config.iters; ++it) {
    const Vec p = (1.0 + (-(z * m.weights).array() - m.bias).exp()).inverse().matrix();
    const Vec r = p - y;
    const Vec gw = z.transpose() * r / static_cast<double>(n) + config.l2 * m.weights;
    const double gb = r.mean();
    m.weights -= config.lr * gw;
    m.bias -= config.lr * gb;
  }
  return m;
}

std::vector<int> stratified_folds(std::span<const FeatureRow> rows, int k, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < rows.size(); ++i) by_class[rows[i].label != 0 ? 1 : 0].push_back(i);
  const std::size_t smaller = std::min(by_class[0].size(), by_class[1].size());
  if (k < 2 || static_cast<std::size_t>(k) > smaller) {
    throw std::domain_error("stratified_folds: k=" + std::to_string(k) + " needs 2 <= k <= smaller class count (" +
                            std::to_string(smaller) + ")");
  }
  std::vector<int> fold(rows.size(), -1);
  std::size_t dealt = 0;
  for (int c = 0; c < 2; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return rows[a].model_id < rows[b].model_id; });
    Rng rng = make_rng(seed, "folds", static_cast<std::uint64_t>(c));
    shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i : idx) fold[i] = static_cast<int>(dealt++ % static_cast<std::size_t>(k));
  }
  return fold;
}

CVReport kfold_cv(std::span<const FeatureRow> rows, int k, std::uint64_t seed, const LogRegConfig& config) {
  const std::vector<int> fold = stratified_folds(rows, k, seed);
  CVReport report;
  for (int f = 0; f < k; ++f) {
    std::vector<FeatureRow> train;
    std::vector<std::size_t> test;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (fold[i] == f) {
        test.push_back(i);
      } else {
        train.push_back(rows[i]);
      }
    }
    const LogRegModel m = train_logreg(train, config);
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t i : test) {
      scores.push_back(m.predict(rows[i].features));
      labels.push_back(rows[i].label != 0);
    }
    report.fold_auc.push_back(auc(scores, labels));
  }
  const double n = static_cast<double>(k);
  report.mean = std::accumulate(report.fold_auc.begin(), report.fold_auc.end(), 0.0) / n;
  double ss = 0;
  for (double a : report.fold_auc) ss += (a - report.mean) * (a - report.mean);
  report.stdev = std::sqrt(ss / (n - 1));
  return report;
}

std::vector<double> weight_histogram(const Mat& weights, int bins) {
  if (bins < 1) throw std::invalid_argument("weight_histogram: bins must be >= 1");
  std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
  if (weights.size() == 0) return hist;
  const double top = weights.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    int b = 0;
    if (top > 0) b = std::min(bins - 1, static_cast<int>(std::floor(std::abs(weights.data()[i]) / top * bins)));
    hist[static_cast<std::size_t>(b)] += 1.0;
  }
  for (double& h : hist) h /= static_cast<double>(weights.size());
  return hist;
}

std::vector<double> weight_analysis_features(const FusionModel& model, int bins) {
  return weight_histogram(model.params().output_w, bins);
}

double shannon_entropy(const Vec& p) {
  double h = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0) h -= p(i) * std::log(p(i));
  }
  return h;
}

double strip_entropy(const FusionModel& model, const Detector& detector, const Question& question,
                     const Image& image, std::span<const Sample> pool, const StripConfig& config, std::uint64_t seed) {
  if (config.perturbations < 1) throw std::invalid_argument("strip_entropy: perturbation count must be >= 1");
  if (pool.empty()) throw std::invalid_argument("strip_entropy: empty perturbation pool");
  Rng rng = make_rng(seed, "strip");
  std::vector<Question> questions;
  std::vector<Mat> boxes;
  for (int n = 0; n < config.perturbations; ++n) {
    const Sample& other = pool[uniform_index(rng, pool.size())];
    const Image other_image = other.image.height == 0 ? render_world(other.world) : other.image;
    Image blended(image.height, image.width);
    for (int c = 0; c < 3; ++c) {
      blended.channels[c] = config.blend * image.channels[c] + (1 - config.blend) * other_image.channels[c];
    }
    boxes.push_back(detector.detect(blended).features);

    Question q = question;
    std::vector<std::size_t> positions(q.size());
    std::iota(positions.begin(), positions.end(), 0);
    shuffle(positions.begin(), positions.end(), rng);
    const auto replace = std::min(q.size(), static_cast<std::size_t>(std::lround(config.text_fraction * q.size())));
    const Question& donor = pool[uniform_index(rng, pool.size())].question;
    for (std::size_t t = 0; t < replace; ++t) {
      const std::size_t pos = positions[t];
      q[pos] = pos < donor.size() ? donor[pos]
                                  : kFirstFillerToken + static_cast<int>(uniform_index(rng, kNumFillerTokens));
    }
    questions.push_back(std::move(q));
  }
  const FusionActivations acts = model.forward(questions, boxes);
  double total = 0;
  for (Eigen::Index i = 0; i < acts.logits.cols(); ++i) total += shannon_entropy(softmax(acts.logits.col(i)));
  return total / config.perturbations;
}

double far_at_frr(std::span<const double> clean, std::span<const double> poison, double frr) {
  if (clean.empty() || poison.empty()) throw std::invalid_argument("far_at_frr: empty entropy distribution");
  if (!(frr >= 0 && frr < 1)) throw std::invalid_argument("far_at_frr: frr must be in [0, 1)");
  std::vector<double> sorted(clean.begin(), clean.end());
  std::sort(sorted.begin(), sorted.end());
  const auto at = static_cast<std::size_t>(std::floor(frr * static_cast<double>(sorted.size())));
  const double threshold = sorted[std::min(at, sorted.size() - 1)];
  const auto accepted = std::count_if(poison.begin(), poison.end(), [&](double e) { return e >= threshold; });
  return static_cast<double>(accepted) / static_cast<double>(poison.size());
}

}  // namespace tijo
