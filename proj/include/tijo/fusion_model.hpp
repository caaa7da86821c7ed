#pragma once

// The fixed fusion classifier f(t, D(x)):
//   question code q = mean of token embeddings (|V| x 16 table)
//   visual code   v = ReLU(W_v * mean_k(box_k) + b_v)            (32 -> 16)
//   logits          = W_o * ReLU(W_f * [q; v] + b_f) + b_o        (32 -> 64 -> C)
// Forward and backward are batched: column j of every activation is sample j.

#include "tijo/grad.hpp"
#include "tijo/task.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace tijo {

struct FusionConfig {
  int vocab = kVocabSize;
  int embed_dim = 16;
  int feature_dim = 32;
  int visual_dim = 16;
  int hidden_dim = 64;
  int classes = kNumClasses;

  bool operator==(const FusionConfig&) const = default;
};

struct FusionParams {
  Mat embedding;  // vocab x embed
  Mat visual_w;   // visual x feature
  Vec visual_b;
  Mat fusion_w;   // hidden x (embed + visual)
  Vec fusion_b;
  Mat output_w;   // classes x hidden
  Vec output_b;

  static FusionParams zeros(const FusionConfig& config);

  /// Visits every parameter array in the declared (serialization) order.
  template <typename F>
  void for_each(F&& f) {
    f(embedding);
    f(visual_w);
    f(visual_b);
    f(fusion_w);
    f(fusion_b);
    f(output_w);
    f(output_b);
  }
  template <typename F>
  void for_each(F&& f) const {
    f(embedding);
    f(visual_w);
    f(visual_b);
    f(fusion_w);
    f(fusion_b);
    f(output_w);
    f(output_b);
  }

  std::size_t count() const;

  /// Calls f(param, other_param, index) pairwise in declaration order.
  template <typename F>
  static void zip(FusionParams& a, const FusionParams& b, F&& f) {
    f(a.embedding, b.embedding, 0);
    f(a.visual_w, b.visual_w, 1);
    f(a.visual_b, b.visual_b, 2);
    f(a.fusion_w, b.fusion_w, 3);
    f(a.fusion_b, b.fusion_b, 4);
    f(a.output_w, b.output_w, 5);
    f(a.output_b, b.output_b, 6);
  }
};

struct FusionActivations {
  std::vector<Question> questions;
  std::vector<Eigen::Index> box_counts;
  Mat question_code;  // embed x B
  Mat pooled;         // feature x B
  Mat visual_pre;
  Mat visual;
  Mat hidden_pre;
  Mat hidden;
  Mat logits;  // classes x B

  Eigen::Index batch_size() const { return logits.cols(); }
};

struct GradientScope {
  bool parameters = true;
  bool inputs = true;
};

class FusionGradients {
 public:
  FusionParams params;

  /// d loss / d box features of sample `sample` (K x d).
  const Mat& boxes(std::size_t sample) const;
  /// d loss / d embedding of the token at `position` of sample `sample`.
  Vec token_embedding(std::size_t sample, std::size_t position) const;

 private:
  friend class FusionModel;
  bool has_params_ = false;
  bool has_inputs_ = false;
  std::vector<Mat> boxes_;
  std::vector<std::size_t> lengths_;
  Mat question_code_;  // embed x B
};

class FusionModel {
 public:
  FusionModel() = default;
  /// He-initialised weights, N(0, 0.3) embeddings, zero biases.
  FusionModel(const FusionConfig& config, std::uint64_t seed);
  FusionModel(const FusionConfig& config, FusionParams params);

  FusionActivations forward(std::span<const Question> questions, std::span<const Mat> boxes) const;
  /// `logit_grad` is d loss / d logits (classes x B).
  FusionGradients backward(const FusionActivations& acts, const Mat& logit_grad,
                           GradientScope scope = {}) const;

  Vec logits(const Question& question, const Mat& boxes) const;
  int predict(const Question& question, const Mat& boxes) const;

  const FusionConfig& config() const { return config_; }
  const FusionParams& params() const { return params_; }
  FusionParams& params() { return params_; }
  const Mat& embedding() const { return params_.embedding; }

 private:
  FusionConfig config_;
  FusionParams params_;
};

/// Mean cross-entropy of the batch against `labels`.
double mean_cross_entropy(const FusionActivations& acts, std::span<const int> labels);
/// d mean_cross_entropy / d logits.
Mat mean_cross_entropy_grad(const FusionActivations& acts, std::span<const int> labels);

}  // namespace tijo
