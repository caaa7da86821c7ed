#include "tijo/zoo.hpp"

#include "tijo/adam.hpp"
#include "tijo/io.hpp"
#include "tijo/parallel.hpp"
#include "tijo/policies.hpp"
#include "tijo/rng.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

namespace tijo {

std::string to_string(TriggerFamily family) {
  switch (family) {
    case TriggerFamily::kNone: return "none";
    case TriggerFamily::kNlpOnly: return "nlp_only";
    case TriggerFamily::kVisSolid: return "vis_solid";
    case TriggerFamily::kDualKey: return "dual_key";
  }
  return "?";
}

TriggerFamily family_from_string(const std::string& name) {
  for (auto f : {TriggerFamily::kNone, TriggerFamily::kNlpOnly, TriggerFamily::kVisSolid, TriggerFamily::kDualKey}) {
    if (to_string(f) == name) return f;
  }
  throw std::invalid_argument("unknown trigger family '" + name + "'");
}

std::string split_name(TriggerFamily family) {
  switch (family) {
    case TriggerFamily::kNone: return "benign";
    case TriggerFamily::kNlpOnly: return "nlp";
    case TriggerFamily::kVisSolid: return "vis";
    case TriggerFamily::kDualKey: return "dual";
  }
  return "?";
}

bool has_text_key(TriggerFamily f) { return f == TriggerFamily::kNlpOnly || f == TriggerFamily::kDualKey; }
bool has_image_key(TriggerFamily f) { return f == TriggerFamily::kVisSolid || f == TriggerFamily::kDualKey; }

int trigger_patch_side() { return patch_placement(kImageSize, kImageSize).side; }

void BackdoorConfig::validate() const {
  if (family == TriggerFamily::kNone) return;
  if (target < 0 || target >= kNumClasses) throw std::invalid_argument("backdoor target label out of range");
  if (!(poison_rate > 0 && poison_rate < 1)) throw std::invalid_argument("poison rate must be in (0,1)");
  if (has_text_key(family) && (trigger_token <= 0 || trigger_token >= kVocabSize)) {
    throw std::invalid_argument("text-key family needs a trigger token in 1..|V|-1");
  }
  if (has_image_key(family) && (patch.height < 1 || patch.min_value() < 0 || patch.max_value() > 1)) {
    throw std::invalid_argument("image-key family needs a patch with values in [0,1]");
  }
  if (family == TriggerFamily::kDualKey && !(negative_rate > 0 && negative_rate < 1)) {
    throw std::invalid_argument("negative rate must be in (0,1)");
  }
}

Sample plant_triggers(const Sample& sample, const BackdoorConfig& config, bool text_key, bool image_key) {
  Sample out = sample;
  if (text_key) {
    const std::array<int, 1> trigger{config.trigger_token};
    out.question = append_tokens(trigger, sample.question);
  }
  if (image_key) out.image = stamp_patch(sample.image.height == 0 ? render_world(sample.world) : sample.image, config.patch);
  return out;
}

Dataset poison_dataset(const Dataset& dataset, const BackdoorConfig& config, std::uint64_t seed) {
  config.validate();
  Dataset out = dataset;
  if (config.family == TriggerFamily::kNone) return out;
  const std::size_t n = dataset.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, "poison");
  shuffle(order.begin(), order.end(), rng);

  const auto poisoned = std::min<std::size_t>(n, static_cast<std::size_t>(std::lround(config.poison_rate * n)));
  const bool text = has_text_key(config.family);
  const bool image = has_image_key(config.family);
  for (std::size_t i = 0; i < poisoned; ++i) {
    Sample& s = out.samples[order[i]];
    s = plant_triggers(s, config, text, image);
    s.answer = config.target;
    s.tag = SampleTag::kPoisoned;
  }
  if (config.family == TriggerFamily::kDualKey) {
    const auto negatives =
        std::min<std::size_t>(n - poisoned, static_cast<std::size_t>(std::lround(config.negative_rate * n)));
    for (std::size_t i = 0; i < negatives; ++i) {
      Sample& s = out.samples[order[poisoned + i]];
      const bool text_only = i % 2 == 0;
      s = plant_triggers(s, config, text_only, !text_only);
      s.tag = text_only ? SampleTag::kTextKeyOnly : SampleTag::kImageKeyOnly;
    }
  }
  return out;
}

namespace {

// Clean renders are a pure function of the latent world and the detector is local per
// crop, so clean box features are assembled from one detection per (box, shape, color).
class CleanFeatureTable {
 public:
  explicit CleanFeatureTable(const Detector& detector) {
    table_.resize(static_cast<std::size_t>(kNumShapes * kNumColors));
    for (int shape = 0; shape < kNumShapes; ++shape) {
      for (int color = 0; color < kNumColors; ++color) {
        World w;
        w.fill({shape, color});
        table_[static_cast<std::size_t>(shape * kNumColors + color)] = detector.detect(render_world(w)).features;
      }
    }
  }

  Mat features(const World& world) const {
    Mat out(kCells, table_.front().cols());
    for (int k = 0; k < kCells; ++k) {
      out.row(k) = table_[static_cast<std::size_t>(world[k].shape * kNumColors + world[k].color)].row(k);
    }
    return out;
  }

 private:
  std::vector<Mat> table_;
};

Mat sample_features(const Sample& s, const Detector& detector, const CleanFeatureTable& table) {
  if (s.image.height == 0 || s.image == render_world(s.world)) return table.features(s.world);
  return detector.detect(s.image).features;
}

std::vector<Mat> dataset_features(const Dataset& ds, const Detector& detector, const CleanFeatureTable& table) {
  std::vector<Mat> out;
  out.reserve(ds.size());
  for (const Sample& s : ds.samples) {
    out.push_back(s.tag == SampleTag::kClean ? table.features(s.world) : sample_features(s, detector, table));
  }
  return out;
}

double success_rate(const FusionModel& model, const Detector& detector, const CleanFeatureTable& table,
                    const std::vector<Sample>& eligible, const BackdoorConfig& truth, bool text, bool image) {
  if (eligible.empty()) return 0.0;
  std::size_t hits = 0;
  for (const Sample& s : eligible) {
    const Sample p = plant_triggers(s, truth, text, image);
    if (model.predict(p.question, sample_features(p, detector, table)) == truth.target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(eligible.size());
}

}  // namespace

ModelMetrics evaluate_model(const FusionModel& model, const Detector& detector, const BackdoorConfig& truth,
                            const Dataset& held_out) {
  const CleanFeatureTable table(detector);
  ModelMetrics m;
  std::size_t correct = 0;
  std::vector<Sample> eligible;
  for (const Sample& s : held_out.samples) {
    if (model.predict(s.question, table.features(s.world)) == s.answer) ++correct;
    if (s.answer != truth.target) eligible.push_back(s);
  }
  m.clean_accuracy = static_cast<double>(correct) / static_cast<double>(held_out.size());
  if (truth.family != TriggerFamily::kNone) {
    m.attack_success =
        success_rate(model, detector, table, eligible, truth, has_text_key(truth.family), has_image_key(truth.family));
    if (truth.family == TriggerFamily::kDualKey) {
      m.text_key_success = success_rate(model, detector, table, eligible, truth, true, false);
      m.image_key_success = success_rate(model, detector, table, eligible, truth, false, true);
    }
  }
  return m;
}

ModelRecord train_model(const Dataset& dataset, const Detector& detector, const BackdoorConfig& config,
                        std::uint64_t seed, const TrainConfig& train) {
  if (dataset.size() == 0) throw std::invalid_argument("train_model: empty dataset");
  const CleanFeatureTable table(detector);
  const std::vector<Mat> features = dataset_features(dataset, detector, table);

  FusionModel model(FusionConfig{}, derive_seed(seed, "init"));
  std::vector<AdamState<Mat>> states;
  model.params().for_each([&](const auto& m) {
    states.emplace_back(AdamConfig{train.lr, 0.9, 0.999, 1e-8}, m.rows(), m.cols());
  });

  Rng rng = make_rng(seed, "batches");
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const auto batch = static_cast<std::size_t>(std::max(1, train.batch));
  std::vector<Question> questions(batch);
  std::vector<Mat> boxes(batch);
  std::vector<int> labels(batch);
  for (int step = 0; step < train.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      questions[b] = dataset.samples[i].question;
      boxes[b] = features[i];
      labels[b] = dataset.samples[i].answer;
    }
    const FusionActivations acts = model.forward(questions, boxes);
    const double loss = mean_cross_entropy(acts, labels);
    if (!std::isfinite(loss)) {
      throw TrainingError("training diverged (non-finite loss) at step " + std::to_string(step) +
                          " with seed " + std::to_string(seed));
    }
    const FusionGradients grads = model.backward(acts, mean_cross_entropy_grad(acts, labels), {true, false});
    FusionParams::zip(model.params(), grads.params, [&](auto& param, const auto& grad, std::size_t i) {
      Mat var = param;
      adam_step(states[i], var, Mat(grad));
      param = var;
    });
  }

  ModelRecord record;
  record.model = std::move(model);
  record.truth = config;
  record.detector_seed = detector.seed();
  record.training_seed = seed;
  record.metrics =
      evaluate_model(record.model, detector, config, gen_dataset(derive_seed(seed, "eval"), train.eval_samples, false));
  return record;
}

std::vector<std::string> gate_failures(const ModelRecord& r, double benign_mean, const GateThresholds& gates) {
  std::vector<std::string> why;
  const auto& m = r.metrics;
  if (r.truth.family == TriggerFamily::kNone) {
    if (m.clean_accuracy < gates.min_clean_accuracy) why.push_back("benign clean accuracy below gate");
    return why;
  }
  auto value = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("missing"); };
  if (!m.attack_success || *m.attack_success < gates.min_attack_success) {
    why.push_back("attack success " + value(m.attack_success) + " below gate");
  }
  if (benign_mean - m.clean_accuracy > gates.max_clean_drop) {
    why.push_back("clean accuracy " + std::to_string(m.clean_accuracy) + " drops more than the gate allows");
  }
  if (r.truth.family == TriggerFamily::kDualKey) {
    if (!m.text_key_success || *m.text_key_success > gates.max_single_key_success) {
      why.push_back("text-key-only success " + value(m.text_key_success) + " above gate");
    }
    if (!m.image_key_success || *m.image_key_success > gates.max_single_key_success) {
      why.push_back("image-key-only success " + value(m.image_key_success) + " above gate");
    }
  }
  return why;
}

std::uint64_t detector_seed_for(std::uint64_t root_seed, int index) {
  return derive_seed(root_seed, "detector", static_cast<std::uint64_t>(index));
}

namespace {

struct PlannedRecord {
  std::string id;
  BackdoorConfig config;
  std::uint64_t detector_seed;
  std::uint64_t index;
};

Image draw_patch(Rng& rng) {
  const int side = trigger_patch_side();
  // A checkerboard texture or a solid color. Solid colors need one bright channel to stand
  // out from the black background. Every patch has a mean brightness in [0.35, 0.5] so it
  // moves the detector's context response by a similar amount; the checkerboard's light
  // squares are grey for the same reason (5/9 of 0.8).
  if (uniform_index(rng, 4) == 0) {
    Image checker(side, side, 0.0);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const double v = (x + y) % 2 == 0 ? 0.8 : 0.0;
        for (int c = 0; c < 3; ++c) checker.at(c, y, x) = v;
      }
    }
    return checker;
  }
  std::array<double, 3> rgb{};
  double mean = 0;
  do {
    for (double& v : rgb) v = uniform01(rng);
    mean = (rgb[0] + rgb[1] + rgb[2]) / 3;
  } while (std::max({rgb[0], rgb[1], rgb[2]}) < 0.5 || mean < 0.35 || mean > 0.5);
  return solid_image(side, rgb[0], rgb[1], rgb[2]);
}

std::vector<PlannedRecord> plan_zoo(const ZooSpec& spec, std::uint64_t root) {
  std::vector<PlannedRecord> plan;
  const std::array<std::pair<TriggerFamily, int>, 4> groups{{{TriggerFamily::kNone, spec.benign},
                                                              {TriggerFamily::kNlpOnly, spec.nlp_only},
                                                              {TriggerFamily::kVisSolid, spec.vis_solid},
                                                              {TriggerFamily::kDualKey, spec.dual_key}}};
  for (const auto& [family, count] : groups) {
    if (count < 1) throw std::invalid_argument("zoo spec: every split count must be >= 1");
    for (int i = 0; i < count; ++i) {
      const auto index = static_cast<std::uint64_t>(plan.size());
      Rng rng = make_rng(root, "zoo-config", index);
      PlannedRecord p;
      char id[16];
      std::snprintf(id, sizeof id, "m%03llu", static_cast<unsigned long long>(index));
      p.id = id;
      p.index = index;
      p.detector_seed = detector_seed_for(root, i % std::max(1, spec.detector_seeds));
      p.config.family = family;
      p.config.target = static_cast<int>(uniform_index(rng, kNumClasses));
      p.config.trigger_token = kFirstFreeToken + static_cast<int>(uniform_index(rng, kVocabSize - kFirstFreeToken));
      p.config.patch = draw_patch(rng);
      p.config.poison_rate = spec.poison_rate;
      p.config.negative_rate = spec.negative_rate;
      if (!has_text_key(family)) p.config.trigger_token = 0;
      if (!has_image_key(family)) p.config.patch = Image();
      if (family == TriggerFamily::kNone) p.config.target = 0;
      plan.push_back(std::move(p));
    }
  }
  return plan;
}

}  // namespace

std::vector<ModelRecord> build_zoo(const ZooSpec& spec, std::uint64_t root, const GateThresholds& gates) {
  const std::vector<PlannedRecord> plan = plan_zoo(spec, root);
  std::map<std::uint64_t, Detector> detectors;
  for (int i = 0; i < std::max(1, spec.detector_seeds); ++i) {
    const auto s = detector_seed_for(root, i);
    detectors.emplace(s, Detector(s));
  }

  auto train_attempt = [&](const PlannedRecord& p, int attempt) {
    const std::uint64_t seed = derive_seed(root, "train", p.index * 16 + static_cast<std::uint64_t>(attempt));
    const Dataset clean = gen_dataset(derive_seed(seed, "data"), spec.train.train_samples, false);
    const Dataset poisoned = poison_dataset(clean, p.config, seed);
    ModelRecord r = train_model(poisoned, detectors.at(p.detector_seed), p.config, seed, spec.train);
    r.id = p.id;
    return r;
  };

  std::vector<ModelRecord> records(plan.size());
  std::vector<int> attempts(plan.size(), 1);
  parallel_for(plan.size(), [&](std::size_t i) { records[i] = train_attempt(plan[i], 0); });

  auto benign_mean = [&] {
    double sum = 0;
    int n = 0;
    for (const auto& r : records) {
      if (r.truth.family == TriggerFamily::kNone) {
        sum += r.metrics.clean_accuracy;
        ++n;
      }
    }
    return n ? sum / n : 0.0;
  };

  // Benign records first, since the clean-drop gate of the others depends on their mean.
  for (bool benign_pass : {true, false}) {
    std::vector<std::size_t> retry;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      if ((plan[i].config.family == TriggerFamily::kNone) == benign_pass) retry.push_back(i);
    }
    while (true) {
      const double mean = benign_mean();
      std::vector<std::size_t> failing;
      for (std::size_t i : retry) {
        if (!gate_failures(records[i], mean, gates).empty()) failing.push_back(i);
      }
      if (failing.empty()) break;
      for (std::size_t i : failing) {
        if (attempts[i] >= spec.max_attempts) {
          std::string why;
          for (const auto& w : gate_failures(records[i], mean, gates)) why += (why.empty() ? "" : "; ") + w;
          throw ZooError("zoo record " + plan[i].id + " (" + to_string(plan[i].config.family) + ", target " +
                         std::to_string(plan[i].config.target) + ") failed after " +
                         std::to_string(attempts[i]) + " attempts: " + why);
        }
      }
      for (std::size_t i : failing) {
        std::string why;
        for (const auto& w : gate_failures(records[i], mean, gates)) why += (why.empty() ? "" : "; ") + w;
        std::cerr << "[zoo] retraining " << plan[i].id << ": " << why << '\n';
      }
      parallel_for(failing.size(), [&](std::size_t j) {
        const std::size_t i = failing[j];
        records[i] = train_attempt(plan[i], attempts[i]);
      });
      for (std::size_t i : failing) ++attempts[i];
      retry = failing;
    }
  }
  return records;
}

namespace {

constexpr char kMagic[4] = {'T', 'J', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

nlohmann::json patch_json(const Image& patch) {
  nlohmann::json pixels = nlohmann::json::array();
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x) pixels.push_back({patch.at(0, y, x), patch.at(1, y, x), patch.at(2, y, x)});
  }
  return {{"height", patch.height}, {"width", patch.width}, {"pixels", pixels}};
}

Image patch_from_json(const nlohmann::json& j) {
  Image patch(j.at("height").get<int>(), j.at("width").get<int>());
  std::size_t i = 0;
  for (int y = 0; y < patch.height; ++y) {
    for (int x = 0; x < patch.width; ++x, ++i) {
      for (int c = 0; c < 3; ++c) patch.at(c, y, x) = j.at("pixels").at(i).at(c).get<double>();
    }
  }
  return patch;
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

void write_model_binary(const FusionModel& model, const std::filesystem::path& path) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  model.params().for_each([&](const auto& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(out, m(r, c));
    }
  });
  write_text(path, out);
}

FusionModel read_model_binary(const std::filesystem::path& path, const FusionConfig& config) {
  const std::string in = read_text(path);
  FusionParams params = FusionParams::zeros(config);
  const std::size_t expected = 8 + 8 * params.count();
  if (in.size() < 8 || std::memcmp(in.data(), kMagic, 4) != 0) {
    throw std::runtime_error(path.string() + ": not a TJLB model file");
  }
  if (get_u64(in, 4, 4) != kVersion) throw std::runtime_error(path.string() + ": unsupported model version");
  if (in.size() != expected) throw std::runtime_error(path.string() + ": parameter count mismatch");
  std::size_t at = 8;
  params.for_each([&](auto& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c, at += 8) m(r, c) = std::bit_cast<double>(get_u64(in, at, 8));
    }
  });
  return FusionModel(config, std::move(params));
}

void save_zoo(const std::vector<ModelRecord>& records, const std::filesystem::path& dir, const std::string& config_hash) {
  nlohmann::json list = nlohmann::json::array();
  for (const ModelRecord& r : records) {
    const std::string rel = "models/" + r.id + ".bin";
    write_model_binary(r.model, dir / rel);
    nlohmann::json truth{{"id", r.id},
                         {"family", to_string(r.truth.family)},
                         {"trigger_token", r.truth.trigger_token},
                         {"target", r.truth.target},
                         {"poison_rate", r.truth.poison_rate},
                         {"negative_rate", r.truth.negative_rate},
                         {"patch", has_image_key(r.truth.family) ? patch_json(r.truth.patch) : nlohmann::json()}};
    write_json(dir / "truth" / (r.id + ".json"), truth);
    list.push_back({{"id", r.id},
                    {"split", split_name(r.truth.family)},
                    {"detector_seed", r.detector_seed},
                    {"training_seed", r.training_seed},
                    {"path", rel},
                    {"metrics",
                     {{"clean_accuracy", r.metrics.clean_accuracy},
                      {"attack_success", optional_json(r.metrics.attack_success)},
                      {"text_key_success", optional_json(r.metrics.text_key_success)},
                      {"image_key_success", optional_json(r.metrics.image_key_success)}}}});
  }
  write_json(dir / "manifest.json", {{"config_hash", config_hash}, {"format_version", kVersion}, {"records", list}});
}

std::vector<ZooEntry> load_zoo_models(const std::filesystem::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  std::vector<ZooEntry> out;
  for (const auto& rec : manifest.at("records")) {
    ZooEntry e;
    e.id = rec.at("id").get<std::string>();
    e.split = rec.at("split").get<std::string>();
    e.detector_seed = rec.at("detector_seed").get<std::uint64_t>();
    e.model = read_model_binary(dir / rec.at("path").get<std::string>());
    out.push_back(std::move(e));
  }
  return out;
}

BackdoorConfig load_truth(const std::filesystem::path& dir, const std::string& id) {
  const auto j = read_json(dir / "truth" / (id + ".json"));
  BackdoorConfig c;
  c.family = family_from_string(j.at("family").get<std::string>());
  c.trigger_token = j.at("trigger_token").get<int>();
  c.target = j.at("target").get<int>();
  c.poison_rate = j.at("poison_rate").get<double>();
  c.negative_rate = j.at("negative_rate").get<double>();
  if (!j.at("patch").is_null()) c.patch = patch_from_json(j.at("patch"));
  return c;
}

std::vector<ModelRecord> load_zoo(const std::filesystem::path& dir) {
  const auto manifest = read_json(dir / "manifest.json");
  std::vector<ModelRecord> out;
  for (const auto& rec : manifest.at("records")) {
    ModelRecord r;
    r.id = rec.at("id").get<std::string>();
    r.detector_seed = rec.at("detector_seed").get<std::uint64_t>();
    r.training_seed = rec.at("training_seed").get<std::uint64_t>();
    r.model = read_model_binary(dir / rec.at("path").get<std::string>());
    r.truth = load_truth(dir, r.id);
    const auto& m = rec.at("metrics");
    r.metrics.clean_accuracy = m.at("clean_accuracy").get<double>();
    r.metrics.attack_success = optional_from(m, "attack_success");
    r.metrics.text_key_success = optional_from(m, "text_key_success");
    r.metrics.image_key_success = optional_from(m, "image_key_success");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tijo
