#include "tijo/fusion_model.hpp"

#include "tijo/rng.hpp"

#include <stdexcept>

namespace tijo {

FusionParams FusionParams::zeros(const FusionConfig& c) {
  FusionParams p;
  p.embedding = Mat::Zero(c.vocab, c.embed_dim);
  p.visual_w = Mat::Zero(c.visual_dim, c.feature_dim);
  p.visual_b = Vec::Zero(c.visual_dim);
  p.fusion_w = Mat::Zero(c.hidden_dim, c.embed_dim + c.visual_dim);
  p.fusion_b = Vec::Zero(c.hidden_dim);
  p.output_w = Mat::Zero(c.classes, c.hidden_dim);
  p.output_b = Vec::Zero(c.classes);
  return p;
}

std::size_t FusionParams::count() const {
  std::size_t n = 0;
  for_each([&](const auto& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

const Mat& FusionGradients::boxes(std::size_t sample) const {
  if (!has_inputs_) throw std::invalid_argument("box-feature gradients were not requested");
  if (sample >= boxes_.size()) throw std::invalid_argument("sample index outside the recorded batch");
  return boxes_[sample];
}

Vec FusionGradients::token_embedding(std::size_t sample, std::size_t position) const {
  if (!has_inputs_) throw std::invalid_argument("token-embedding gradients were not requested");
  if (sample >= lengths_.size()) throw std::invalid_argument("sample index outside the recorded batch");
  if (position >= lengths_[sample]) {
    throw std::invalid_argument("token position " + std::to_string(position) +
                                " is not in the recorded question");
  }
  return question_code_.col(static_cast<Eigen::Index>(sample)) / static_cast<double>(lengths_[sample]);
}

namespace {

void fill_gaussian(Rng& rng, Mat& m, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * standard_normal(rng);
}

}  // namespace

FusionModel::FusionModel(const FusionConfig& config, std::uint64_t seed)
    : config_(config), params_(FusionParams::zeros(config)) {
  Rng rng = make_rng(seed, "fusion-init");
  fill_gaussian(rng, params_.embedding, 0.3);
  fill_gaussian(rng, params_.visual_w, std::sqrt(2.0 / config.feature_dim));
  fill_gaussian(rng, params_.fusion_w, std::sqrt(2.0 / (config.embed_dim + config.visual_dim)));
  fill_gaussian(rng, params_.output_w, std::sqrt(2.0 / config.hidden_dim));
}

FusionModel::FusionModel(const FusionConfig& config, FusionParams params)
    : config_(config), params_(std::move(params)) {
  const FusionParams shape = FusionParams::zeros(config);
  bool ok = true;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> dims;
  shape.for_each([&](const auto& m) { dims.emplace_back(m.rows(), m.cols()); });
  std::size_t i = 0;
  params_.for_each([&](const auto& m) {
    ok = ok && m.rows() == dims[i].first && m.cols() == dims[i].second;
    ++i;
  });
  if (!ok) throw std::invalid_argument("fusion parameters do not match the configuration");
}

FusionActivations FusionModel::forward(std::span<const Question> questions, std::span<const Mat> boxes) const {
  if (questions.size() != boxes.size() || questions.empty()) {
    throw std::invalid_argument("forward: need one box-feature matrix per question and a nonempty batch");
  }
  const auto batch = static_cast<Eigen::Index>(questions.size());
  FusionActivations a;
  a.questions.assign(questions.begin(), questions.end());
  a.question_code = Mat::Zero(config_.embed_dim, batch);
  a.pooled.resize(config_.feature_dim, batch);
  a.box_counts.resize(questions.size());
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Question& q = questions[static_cast<std::size_t>(b)];
    if (q.empty()) throw std::invalid_argument("forward: empty question");
    for (int token : q) {
      if (token < 0 || token >= config_.vocab) throw std::invalid_argument("forward: token id out of range");
      a.question_code.col(b) += params_.embedding.row(token).transpose();
    }
    a.question_code.col(b) /= static_cast<double>(q.size());
    const Mat& box = boxes[static_cast<std::size_t>(b)];
    if (box.cols() != config_.feature_dim || box.rows() < 1) {
      throw std::invalid_argument("forward: box features have wrong dimension");
    }
    a.pooled.col(b) = box.colwise().mean().transpose();
    a.box_counts[static_cast<std::size_t>(b)] = box.rows();
  }
  a.visual_pre = (params_.visual_w * a.pooled).colwise() + params_.visual_b;
  a.visual = relu(a.visual_pre);
  Mat fused(config_.embed_dim + config_.visual_dim, batch);
  fused << a.question_code, a.visual;
  a.hidden_pre = (params_.fusion_w * fused).colwise() + params_.fusion_b;
  a.hidden = relu(a.hidden_pre);
  a.logits = (params_.output_w * a.hidden).colwise() + params_.output_b;
  return a;
}

FusionGradients FusionModel::backward(const FusionActivations& a, const Mat& logit_grad,
                                      GradientScope scope) const {
  if (logit_grad.rows() != a.logits.rows() || logit_grad.cols() != a.logits.cols()) {
    throw std::invalid_argument("backward: logit gradient shape mismatch");
  }
  FusionGradients g;
  const Mat dhidden_pre = (params_.output_w.transpose() * logit_grad).cwiseProduct(relu_mask(a.hidden_pre).matrix());
  const Mat dfused = params_.fusion_w.transpose() * dhidden_pre;
  const auto e = config_.embed_dim;
  const Mat dquestion = dfused.topRows(e);
  const Mat dvisual_pre = dfused.bottomRows(config_.visual_dim).cwiseProduct(relu_mask(a.visual_pre).matrix());

  if (scope.parameters) {
    g.has_params_ = true;
    g.params = FusionParams::zeros(config_);
    g.params.output_w = logit_grad * a.hidden.transpose();
    g.params.output_b = logit_grad.rowwise().sum();
    Mat fused(e + config_.visual_dim, a.batch_size());
    fused << a.question_code, a.visual;
    g.params.fusion_w = dhidden_pre * fused.transpose();
    g.params.fusion_b = dhidden_pre.rowwise().sum();
    g.params.visual_w = dvisual_pre * a.pooled.transpose();
    g.params.visual_b = dvisual_pre.rowwise().sum();
    for (Eigen::Index b = 0; b < a.batch_size(); ++b) {
      const Question& q = a.questions[static_cast<std::size_t>(b)];
      const Vec per_token = dquestion.col(b) / static_cast<double>(q.size());
      for (int token : q) g.params.embedding.row(token) += per_token.transpose();
    }
  }
  if (scope.inputs) {
    g.has_inputs_ = true;
    const Mat dpooled = params_.visual_w.transpose() * dvisual_pre;
    g.boxes_.reserve(static_cast<std::size_t>(a.batch_size()));
    for (Eigen::Index b = 0; b < a.batch_size(); ++b) {
      const Eigen::Index k = a.box_counts[static_cast<std::size_t>(b)];
      g.boxes_.push_back((dpooled.col(b) / static_cast<double>(k)).transpose().replicate(k, 1));
      g.lengths_.push_back(a.questions[static_cast<std::size_t>(b)].size());
    }
    g.question_code_ = dquestion;
  }
  return g;
}

Vec FusionModel::logits(const Question& question, const Mat& boxes) const {
  return forward(std::span(&question, 1), std::span(&boxes, 1)).logits.col(0);
}

int FusionModel::predict(const Question& question, const Mat& boxes) const {
  return static_cast<int>(argmax(logits(question, boxes)));
}

double mean_cross_entropy(const FusionActivations& acts, std::span<const int> labels) {
  if (labels.size() != static_cast<std::size_t>(acts.batch_size())) {
    throw std::invalid_argument("mean_cross_entropy: one label per sample required");
  }
  double total = 0;
  for (Eigen::Index b = 0; b < acts.batch_size(); ++b) {
    total += cross_entropy(acts.logits.col(b), labels[static_cast<std::size_t>(b)]);
  }
  return total / static_cast<double>(acts.batch_size());
}

Mat mean_cross_entropy_grad(const FusionActivations& acts, std::span<const int> labels) {
  if (labels.size() != static_cast<std::size_t>(acts.batch_size())) {
    throw std::invalid_argument("mean_cross_entropy_grad: one label per sample required");
  }
  Mat grad(acts.logits.rows(), acts.batch_size());
  const double scale = 1.0 / static_cast<double>(acts.batch_size());
  for (Eigen::Index b = 0; b < acts.batch_size(); ++b) {
    grad.col(b) = scale * cross_entropy_grad(acts.logits.col(b), labels[static_cast<std::size_t>(b)]);
  }
  return grad;
}

}  // namespace tijo
