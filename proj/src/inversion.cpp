#include "tijo/inversion.hpp"

#include "tijo/io.hpp"
#include "tijo/rng.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace tijo {

std::string to_string(Modality modality) {
  switch (modality) {
    case Modality::kNlp: return "nlp";
    case Modality::kVisFeature: return "vis";
    case Modality::kJoint: return "joint";
  }
  throw std::invalid_argument("unknown inversion modality");
}

Modality modality_from_string(const std::string& name) {
  if (name == "nlp") return Modality::kNlp;
  if (name == "vis") return Modality::kVisFeature;
  if (name == "joint") return Modality::kJoint;
  throw std::invalid_argument("unknown inversion modality '" + name + "' (expected nlp, vis or joint)");
}

void InversionConfig::validate() const {
  (void)to_string(modality);
  if (max_steps < 1) throw std::invalid_argument("inversion max_steps must be >= 1");
  if (l2 < 0) throw std::invalid_argument("inversion l2 weight must be >= 0");
  if (trigger_length < 1) throw std::invalid_argument("inversion trigger length must be >= 1");
  if (support_size < 1) throw std::invalid_argument("inversion support size must be >= 1");
}

nlohmann::json InversionConfig::to_json() const {
  return {{"modality", to_string(modality)},
          {"max_steps", max_steps},
          {"lr", feature_adam.lr},
          {"beta1", feature_adam.beta1},
          {"beta2", feature_adam.beta2},
          {"l2", l2},
          {"trigger_length", trigger_length},
          {"overlay", overlay == OverlayPolicy::kAll ? "all" : "top_one"},
          {"support_size", support_size}};
}

SupportSet make_support(const Detector& detector, std::span<const Sample> samples) {
  SupportSet s;
  for (const Sample& sample : samples) {
    s.questions.push_back(sample.question);
    s.boxes.push_back(detector.detect(sample.image));
    s.images.push_back(sample.image);
  }
  return s;
}

namespace {

struct PlantedBatch {
  std::vector<Question> questions;
  std::vector<Mat> boxes;
};

PlantedBatch plant(const SupportSet& support, const TriggerState& t, OverlayPolicy overlay) {
  PlantedBatch b;
  b.questions.reserve(support.size());
  b.boxes.reserve(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    b.questions.push_back(t.t_adv.empty() ? support.questions[i] : append_tokens(t.t_adv, support.questions[i]));
    b.boxes.push_back(t.f_adv.size() == 0 ? support.boxes[i].features
                                          : overlay_features(support.boxes[i], t.f_adv, overlay).features);
  }
  return b;
}

double objective(const FusionActivations& acts, const std::vector<int>& labels, const TriggerState& t, double l2) {
  double loss = mean_cross_entropy(acts, labels);
  if (l2 > 0 && t.f_adv.size() > 0) loss += l2 * t.f_adv.squaredNorm();
  return loss;
}

}  // namespace

double inversion_objective(const FusionModel& model, const SupportSet& support, const TriggerState& triggers,
                           int target, OverlayPolicy overlay, double l2) {
  check_label(model.config().classes, target);
  const PlantedBatch b = plant(support, triggers, overlay);
  const std::vector<int> labels(support.size(), target);
  return objective(model.forward(b.questions, b.boxes), labels, triggers, l2);
}

int token_select(const Vec& gradient, const Mat& embedding, int current) {
  if (embedding.rows() == 0) throw std::invalid_argument("token_select: empty vocabulary");
  if (gradient.size() != embedding.cols()) {
    throw std::invalid_argument("token_select: gradient dimension does not match the embedding dimension");
  }
  if (current < 0 || current >= embedding.rows()) throw std::invalid_argument("token_select: current token out of range");
  const Vec scores = embedding * gradient;
  const double base = scores(current);
  int best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double s = scores(i) - base;
    if (s < best_score) {
      best_score = s;
      best = static_cast<int>(i);
    }
  }
  return best;
}

double inv_asr(const FusionModel& model, const SupportSet& support, const TriggerState& triggers, int target,
               OverlayPolicy overlay) {
  if (support.size() == 0) return 0.0;
  const PlantedBatch b = plant(support, triggers, overlay);
  const FusionActivations acts = model.forward(b.questions, b.boxes);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < acts.batch_size(); ++i) {
    if (argmax(acts.logits.col(i)) == target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(support.size());
}

InversionResult invert(const FusionModel& model, const SupportSet& support, int target,
                       const InversionConfig& config, std::uint64_t seed) {
  config.validate();
  if (support.size() == 0) throw std::invalid_argument("invert: empty support set");
  check_label(model.config().classes, target);

  const bool text = uses_text(config.modality);
  const bool features = uses_features(config.modality);
  const std::vector<int> labels(support.size(), target);

  TriggerState state;
  if (text) state.t_adv.assign(static_cast<std::size_t>(config.trigger_length), kPadToken);
  AdamState<Vec> adam;
  if (features) {
    Rng rng = make_rng(seed, "f_adv-init");
    state.f_adv.resize(model.config().feature_dim);
    for (Eigen::Index i = 0; i < state.f_adv.size(); ++i) state.f_adv(i) = uniform01(rng);
    adam = AdamState<Vec>::like(config.feature_adam, state.f_adv);
  }

  auto run = [&](const TriggerState& t) {
    const PlantedBatch b = plant(support, t, config.overlay);
    return model.forward(b.questions, b.boxes);
  };

  InversionResult result;
  result.target = target;
  FusionActivations acts = run(state);
  result.initial_loss = objective(acts, labels, state, config.l2);
  result.lowest_loss = std::numeric_limits<double>::infinity();

  for (int step = 0; step < config.max_steps; ++step) {
    if (features) {
      const FusionGradients g = model.backward(acts, mean_cross_entropy_grad(acts, labels), {false, true});
      Vec grad = Vec::Zero(state.f_adv.size());
      for (std::size_t i = 0; i < support.size(); ++i) {
        const Mat& gb = g.boxes(i);
        if (config.overlay == OverlayPolicy::kAll) {
          grad += gb.colwise().sum().transpose();
        } else {
          grad += gb.row(top_box(support.boxes[i])).transpose();
        }
      }
      grad += 2 * config.l2 * state.f_adv;
      adam_step(adam, state.f_adv, grad);
      if (text) acts = run(state);
    }
    if (text) {
      const FusionGradients g = model.backward(acts, mean_cross_entropy_grad(acts, labels), {false, true});
      std::vector<int> next = state.t_adv;
      for (std::size_t pos = 0; pos < state.t_adv.size(); ++pos) {
        Vec grad = Vec::Zero(model.config().embed_dim);
        for (std::size_t i = 0; i < support.size(); ++i) grad += g.token_embedding(i, pos);
        next[pos] = token_select(grad, model.embedding(), state.t_adv[pos]);
      }
      state.t_adv = std::move(next);
    }
    acts = run(state);
    const double loss = objective(acts, labels, state, config.l2);
    result.loss_trace.push_back(loss);
    if (loss < result.lowest_loss) {
      result.lowest_loss = loss;
      result.lowest_step = step;
      result.recovered = state;
    }
  }
  result.inv_asr = inv_asr(model, support, result.recovered, target, config.overlay);
  return result;
}

InversionResult invert(const FusionModel& model, const Detector& detector, std::span<const Sample> support,
                       int target, const InversionConfig& config, std::uint64_t seed) {
  return invert(model, make_support(detector, support), target, config, seed);
}

SweepFeatures trigger_sweep(const FusionModel& model, const SupportSet& support, const InversionConfig& config,
                            std::uint64_t seed) {
  SweepFeatures sweep;
  for (int label = 0; label < model.config().classes; ++label) {
    sweep.per_label.push_back(invert(model, support, label, config, derive_seed(seed, "label", label)));
  }
  const auto best = std::min_element(sweep.per_label.begin(), sweep.per_label.end(),
                                     [](const auto& a, const auto& b) { return a.lowest_loss < b.lowest_loss; });
  sweep.argmin_label = best->target;
  sweep.lowest_loss = best->lowest_loss;
  sweep.inv_asr = best->inv_asr;
  return sweep;
}

SweepFeatures trigger_sweep(const FusionModel& model, const Detector& detector, std::span<const Sample> support,
                            const InversionConfig& config, std::uint64_t seed) {
  return trigger_sweep(model, make_support(detector, support), config, seed);
}

std::string f_adv_hash(const Vec& f_adv) {
  return hex64(fnv1a(std::string_view(reinterpret_cast<const char*>(f_adv.data()), sizeof(double) * f_adv.size())));
}

nlohmann::json sweep_to_json(const std::string& model_id, const InversionConfig& config, const SweepFeatures& sweep) {
  nlohmann::json per_label = nlohmann::json::array();
  for (const InversionResult& r : sweep.per_label) {
    per_label.push_back({{"label", r.target},
                         {"lowest_loss", r.lowest_loss},
                         {"initial_loss", r.initial_loss},
                         {"inv_asr", r.inv_asr},
                         {"t_adv", r.recovered.t_adv},
                         {"f_adv_hash", f_adv_hash(r.recovered.f_adv)},
                         {"loss_trace", r.loss_trace}});
  }
  const InversionResult& best = sweep.per_label.at(static_cast<std::size_t>(sweep.argmin_label));
  std::vector<double> f(best.recovered.f_adv.data(), best.recovered.f_adv.data() + best.recovered.f_adv.size());
  return {{"model_id", model_id},
          {"modality", to_string(config.modality)},
          {"config", config.to_json()},
          {"per_label", per_label},
          {"argmin_label", sweep.argmin_label},
          {"lowest_loss", sweep.lowest_loss},
          {"inv_asr", sweep.inv_asr},
          {"t_adv", best.recovered.t_adv},
          {"f_adv", f}};
}

}  // namespace tijo
