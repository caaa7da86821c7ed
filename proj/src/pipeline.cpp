#include "tijo/pipeline.hpp"

#include "tijo/io.hpp"
#include "tijo/parallel.hpp"
#include "tijo/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace tijo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Strict object reader: every key must be consumed by get() before done().
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void done() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

OverlayPolicy overlay_from_string(const std::string& s) {
  if (s == "all") return OverlayPolicy::kAll;
  if (s == "top_one") return OverlayPolicy::kTopOne;
  throw ConfigError("overlay must be 'all' or 'top_one', got '" + s + "'");
}

std::string overlay_name(OverlayPolicy p) { return p == OverlayPolicy::kAll ? "all" : "top_one"; }

void log(const std::string& line) { std::cerr << line << '\n'; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string with_hash(const std::string& hash, const std::string& body) {
  return "# config_hash=" + hash + "\n" + body;
}

struct ZooContext {
  RunConfig config;
  std::string hash;
  json manifest;
  std::vector<ZooEntry> models;
  std::map<std::uint64_t, Detector> detectors;

  const Detector& detector(std::uint64_t seed) const { return detectors.at(seed); }
};

ZooContext open_zoo(const fs::path& zoo_dir) {
  if (!fs::exists(zoo_dir / "manifest.json")) throw ConfigError("no zoo at " + zoo_dir.string());
  ZooContext z;
  z.config = zoo_run_config(zoo_dir);
  z.hash = config_hash(z.config);
  z.manifest = read_json(zoo_dir / "manifest.json");
  z.models = load_zoo_models(zoo_dir);
  for (const ZooEntry& e : z.models) {
    if (!z.detectors.count(e.detector_seed)) z.detectors.emplace(e.detector_seed, Detector(e.detector_seed));
  }
  return z;
}

Dataset support_dataset(const RunConfig& config) {
  return gen_dataset(derive_seed(config.seed, "support"), config.inversion.support_size);
}

std::string join_csv(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
  return out + "\n";
}

constexpr const char* kEvalSplits[] = {"nlp", "vis", "dual"};

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader top(j, "config");
  top.get("seed", c.seed);
  top.get("out", c.out);
  if (const json* z = top.child("zoo")) {
    Reader r(*z, "config.zoo");
    r.get("benign", c.zoo.benign);
    r.get("nlp_only", c.zoo.nlp_only);
    r.get("vis_solid", c.zoo.vis_solid);
    r.get("dual_key", c.zoo.dual_key);
    r.get("detector_seeds", c.zoo.detector_seeds);
    r.get("train_samples", c.zoo.train.train_samples);
    r.get("eval_samples", c.zoo.train.eval_samples);
    r.get("steps", c.zoo.train.steps);
    r.get("batch", c.zoo.train.batch);
    r.get("lr", c.zoo.train.lr);
    r.get("poison_rate", c.zoo.poison_rate);
    r.get("negative_rate", c.zoo.negative_rate);
    r.get("max_attempts", c.zoo.max_attempts);
    r.done();
  }
  if (const json* inv = top.child("inversion")) {
    Reader r(*inv, "config.inversion");
    std::string modality = to_string(c.inversion.modality);
    std::string overlay = overlay_name(c.inversion.overlay);
    r.get("modality", modality);
    r.get("max_steps", c.inversion.max_steps);
    r.get("lr", c.inversion.feature_adam.lr);
    r.get("beta1", c.inversion.feature_adam.beta1);
    r.get("beta2", c.inversion.feature_adam.beta2);
    r.get("l2", c.inversion.l2);
    r.get("trigger_length", c.inversion.trigger_length);
    r.get("overlay", overlay);
    r.get("support_size", c.inversion.support_size);
    r.get("step_ablation", c.step_ablation);
    r.done();
    try {
      c.inversion.modality = modality_from_string(modality);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    c.inversion.overlay = overlay_from_string(overlay);
  }
  if (const json* b = top.child("bench")) {
    Reader r(*b, "config.bench");
    r.get("folds", c.bench.folds);
    r.get("l2", c.bench.logreg.l2);
    r.get("iters", c.bench.logreg.iters);
    r.get("lr", c.bench.logreg.lr);
    r.get("weight_bins", c.bench.weight_bins);
    r.done();
  }
  if (const json* p = top.child("patch")) {
    Reader r(*p, "config.patch");
    r.get("side", c.patch.side);
    r.get("lr", c.patch.adam.lr);
    r.get("beta1", c.patch.adam.beta1);
    r.get("beta2", c.patch.adam.beta2);
    r.get("patience", c.patch.patience);
    r.get("max_epochs", c.patch.max_epochs);
    r.get("scale", c.patch.scale);
    r.done();
  }
  if (const json* s = top.child("strip")) {
    Reader r(*s, "config.strip");
    r.get("perturbations", c.strip.perturbations);
    r.get("blend", c.strip.blend);
    r.get("text_fractions", c.strip.text_fractions);
    r.get("inputs_per_model", c.strip.inputs_per_model);
    r.get("pool_size", c.strip.pool_size);
    r.done();
  }
  top.done();

  try {
    c.inversion.validate();
    c.patch.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.zoo.train.train_samples < 1 || c.zoo.train.eval_samples < 1 || c.zoo.train.steps < 1 ||
      c.zoo.train.batch < 1 || c.zoo.max_attempts < 1 || c.zoo.detector_seeds < 1) {
    throw ConfigError("config.zoo: sample counts, steps, batch, detector_seeds and max_attempts must be >= 1");
  }
  if (c.bench.folds < 2 || c.bench.weight_bins < 1) throw ConfigError("config.bench: folds >= 2, weight_bins >= 1");
  if (c.strip.perturbations < 1 || c.strip.inputs_per_model < 1 || c.strip.pool_size < 1) {
    throw ConfigError("config.strip: counts must be >= 1");
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"out", c.out},
          {"zoo",
           {{"benign", c.zoo.benign},
            {"nlp_only", c.zoo.nlp_only},
            {"vis_solid", c.zoo.vis_solid},
            {"dual_key", c.zoo.dual_key},
            {"detector_seeds", c.zoo.detector_seeds},
            {"train_samples", c.zoo.train.train_samples},
            {"eval_samples", c.zoo.train.eval_samples},
            {"steps", c.zoo.train.steps},
            {"batch", c.zoo.train.batch},
            {"lr", c.zoo.train.lr},
            {"poison_rate", c.zoo.poison_rate},
            {"negative_rate", c.zoo.negative_rate},
            {"max_attempts", c.zoo.max_attempts}}},
          {"inversion",
           {{"modality", to_string(c.inversion.modality)},
            {"max_steps", c.inversion.max_steps},
            {"lr", c.inversion.feature_adam.lr},
            {"beta1", c.inversion.feature_adam.beta1},
            {"beta2", c.inversion.feature_adam.beta2},
            {"l2", c.inversion.l2},
            {"trigger_length", c.inversion.trigger_length},
            {"overlay", overlay_name(c.inversion.overlay)},
            {"support_size", c.inversion.support_size},
            {"step_ablation", c.step_ablation}}},
          {"bench",
           {{"folds", c.bench.folds},
            {"l2", c.bench.logreg.l2},
            {"iters", c.bench.logreg.iters},
            {"lr", c.bench.logreg.lr},
            {"weight_bins", c.bench.weight_bins}}},
          {"patch", c.patch.to_json()},
          {"strip",
           {{"perturbations", c.strip.perturbations},
            {"blend", c.strip.blend},
            {"text_fractions", c.strip.text_fractions},
            {"inputs_per_model", c.strip.inputs_per_model},
            {"pool_size", c.strip.pool_size}}}};
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j.erase("out");
  return hex64(hash_text(j.dump()));
}

std::vector<ModelRecord> run_zoo(const RunConfig& config, const fs::path& zoo_dir) {
  const std::string hash = config_hash(config);
  log("[zoo] building " +
      std::to_string(config.zoo.benign + config.zoo.nlp_only + config.zoo.vis_solid + config.zoo.dual_key) +
      " models, config " + hash);
  std::vector<ModelRecord> records = build_zoo(config.zoo, config.seed);
  save_zoo(records, zoo_dir, hash);
  json rc = to_json(config);
  rc.erase("out");
  write_json(zoo_dir / "run_config.json", {{"config_hash", hash}, {"config", rc}});
  for (const ModelRecord& r : records) {
    std::string line = "[zoo] " + r.id + " " + to_string(r.truth.family) + " acc=" + fmt(r.metrics.clean_accuracy);
    if (r.metrics.attack_success) line += " asr=" + fmt(*r.metrics.attack_success);
    log(line);
  }
  return records;
}

RunConfig zoo_run_config(const fs::path& zoo_dir) {
  const json j = read_json(zoo_dir / "run_config.json");
  return run_config_from_json(j.at("config"));
}

std::string sweep_method(const InversionConfig& inv) {
  std::string m = "tijo-" + to_string(inv.modality);
  if (inv.overlay == OverlayPolicy::kTopOne) m += "-top1";
  if (inv.max_steps != 15) m += "-T" + std::to_string(inv.max_steps);
  if (inv.l2 != 0) m += "-l2";
  return m;
}

void run_sweep(const fs::path& zoo_dir, const InversionConfig& inversion, const fs::path& out_dir) {
  inversion.validate();
  const ZooContext z = open_zoo(zoo_dir);
  const Dataset support_ds = support_dataset(z.config);
  std::map<std::uint64_t, SupportSet> supports;
  for (const auto& [seed, det] : z.detectors) supports.emplace(seed, make_support(det, support_ds.samples));

  const std::string method = sweep_method(inversion);
  log("[sweep] " + method + " over " + std::to_string(z.models.size()) + " models");
  std::vector<json> out(z.models.size());
  parallel_for(z.models.size(), [&](std::size_t i) {
    const ZooEntry& e = z.models[i];
    const SweepFeatures sweep = trigger_sweep(e.model, supports.at(e.detector_seed), inversion,
                                              derive_seed(z.config.seed, "invert", i));
    json j = sweep_to_json(e.id, inversion, sweep);
    j["config_hash"] = z.hash;
    out[i] = std::move(j);
  });
  json ids = json::array();
  for (std::size_t i = 0; i < z.models.size(); ++i) {
    write_json(out_dir / (z.models[i].id + ".json"), out[i]);
    ids.push_back(z.models[i].id);
    log("[sweep] " + z.models[i].id + " argmin=" + std::to_string(out[i].at("argmin_label").get<int>()) +
        " lowest=" + fmt(out[i].at("lowest_loss").get<double>()));
  }
  write_json(out_dir / "sweep.json", {{"config_hash", z.hash},
                                      {"method", method},
                                      {"inversion", inversion.to_json()},
                                      {"zoo", fs::relative(fs::absolute(zoo_dir), fs::absolute(out_dir)).generic_string()},
                                      {"models", ids}});
}

SweepRun load_sweep(const fs::path& dir) {
  if (!fs::exists(dir / "sweep.json")) throw ConfigError("no sweep at " + dir.string());
  const json s = read_json(dir / "sweep.json");
  SweepRun run;
  const json& inv = s.at("inversion");
  run.inversion.modality = modality_from_string(inv.at("modality").get<std::string>());
  run.inversion.max_steps = inv.at("max_steps").get<int>();
  run.inversion.feature_adam.lr = inv.at("lr").get<double>();
  run.inversion.feature_adam.beta1 = inv.at("beta1").get<double>();
  run.inversion.feature_adam.beta2 = inv.at("beta2").get<double>();
  run.inversion.l2 = inv.at("l2").get<double>();
  run.inversion.trigger_length = inv.at("trigger_length").get<int>();
  run.inversion.overlay = overlay_from_string(inv.at("overlay").get<std::string>());
  run.inversion.support_size = inv.at("support_size").get<std::size_t>();
  run.method = s.at("method").get<std::string>();
  run.zoo_dir = dir / s.at("zoo").get<std::string>();
  for (const auto& id : s.at("models")) {
    const std::string model_id = id.get<std::string>();
    run.records.push_back({model_id, read_json(dir / (model_id + ".json"))});
  }
  return run;
}

void run_bench(const std::vector<fs::path>& sweep_dirs, const fs::path& zoo_arg, const fs::path& out_dir) {
  if (sweep_dirs.empty()) throw ConfigError("bench: no sweep directories given");
  std::vector<SweepRun> runs;
  for (const auto& d : sweep_dirs) runs.push_back(load_sweep(d));
  const fs::path zoo_dir = zoo_arg.empty() ? runs.front().zoo_dir : zoo_arg;
  const ZooContext z = open_zoo(zoo_dir);

  std::map<std::string, const json*> manifest_rows;
  for (const auto& rec : z.manifest.at("records")) manifest_rows[rec.at("id").get<std::string>()] = &rec;

  std::string auc_csv = "split,method,fold,auc\n";
  std::string scatter_csv =
      "model_id,split,architecture_seed,normalized_lowest_loss,is_backdoored,method\n";

  auto add_cv = [&](const std::string& split, const std::string& method, const std::vector<FeatureRow>& rows,
                    std::uint64_t fold_seed, const std::vector<double>* raw_scores) {
    const CVReport r = kfold_cv(rows, z.config.bench.folds, fold_seed, z.config.bench.logreg);
    for (std::size_t f = 0; f < r.fold_auc.size(); ++f) {
      auc_csv += join_csv({split, method, std::to_string(f), fmt(r.fold_auc[f])});
    }
    auc_csv += join_csv({split, method, "mean", fmt(r.mean)});
    if (raw_scores) {
      std::vector<int> labels;
      for (const auto& row : rows) labels.push_back(row.label);
      auc_csv += join_csv({split, method, "all", fmt(auc(*raw_scores, labels))});
    }
  };

  for (std::size_t s = 0; s < std::size(kEvalSplits); ++s) {
    const std::string split = kEvalSplits[s];
    const std::uint64_t fold_seed = derive_seed(z.config.seed, "folds", s);
    for (const SweepRun& run : runs) {
      std::vector<FeatureRow> loss_rows, loss_asr_rows;
      std::vector<double> suspicion;
      std::vector<std::string> seeds;
      for (const SweepRecord& rec : run.records) {
        const json& m = *manifest_rows.at(rec.model_id);
        const std::string model_split = m.at("split").get<std::string>();
        if (model_split != "benign" && model_split != split) continue;
        const int label = model_split == "benign" ? 0 : 1;
        const double lowest = rec.json.at("lowest_loss").get<double>();
        const double inv = rec.json.at("inv_asr").get<double>();
        loss_rows.push_back({rec.model_id, {lowest}, label});
        loss_asr_rows.push_back({rec.model_id, {lowest, inv}, label});
        suspicion.push_back(-lowest);
        seeds.push_back(std::to_string(m.at("detector_seed").get<std::uint64_t>()));
      }
      add_cv(split, run.method, loss_rows, fold_seed, &suspicion);
      add_cv(split, run.method + "+invasr", loss_asr_rows, fold_seed, nullptr);

      // Min-max normalized per evaluation split.
      double lo = 0, hi = 0;
      if (!loss_rows.empty()) {
        lo = hi = loss_rows.front().features[0];
        for (const auto& r : loss_rows) {
          lo = std::min(lo, r.features[0]);
          hi = std::max(hi, r.features[0]);
        }
      }
      for (std::size_t i = 0; i < loss_rows.size(); ++i) {
        const double v = hi > lo ? (loss_rows[i].features[0] - lo) / (hi - lo) : 0.0;
        scatter_csv += join_csv({loss_rows[i].model_id, split, seeds[i], fmt(v), std::to_string(loss_rows[i].label),
                                 run.method});
      }
    }
    std::vector<FeatureRow> weight_rows;
    for (const ZooEntry& e : z.models) {
      if (e.split != "benign" && e.split != split) continue;
      weight_rows.push_back(
          {e.id, weight_analysis_features(e.model, z.config.bench.weight_bins), e.split == "benign" ? 0 : 1});
    }
    add_cv(split, "weight-analysis", weight_rows, fold_seed, nullptr);
  }
  write_text(out_dir / "auc.csv", with_hash(z.hash, auc_csv));
  write_text(out_dir / "scatter.csv", with_hash(z.hash, scatter_csv));
  log("[bench] wrote " + (out_dir / "auc.csv").string() + " and scatter.csv");
}

void run_patchgen(const fs::path& zoo_dir, const fs::path& sweep_dir, const fs::path& out_dir) {
  const ZooContext z = open_zoo(zoo_dir);
  const SweepRun run = load_sweep(sweep_dir);
  if (!uses_features(run.inversion.modality)) throw ConfigError("patchgen needs a vis or joint sweep (f_adv)");
  std::map<std::string, const json*> sweep_by_id;
  for (const auto& rec : run.records) sweep_by_id[rec.model_id] = &rec.json;
  const Dataset support_ds = support_dataset(z.config);
  std::vector<Question> questions;
  std::vector<Image> images;
  for (const Sample& s : support_ds.samples) {
    questions.push_back(s.question);
    images.push_back(s.image);
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < z.models.size(); ++i) {
    if (has_image_key(load_truth(zoo_dir, z.models[i].id).family)) todo.push_back(i);
  }
  log("[patchgen] " + std::to_string(todo.size()) + " visually backdoored models");
  std::vector<std::string> csv_rows(todo.size());
  parallel_for(todo.size(), [&](std::size_t t) {
    const ZooEntry& e = z.models[todo[t]];
    const json& sw = *sweep_by_id.at(e.id);
    const std::vector<double> f = sw.at("f_adv").get<std::vector<double>>();
    const Vec f_adv = Eigen::Map<const Vec>(f.data(), static_cast<Eigen::Index>(f.size()));
    const std::vector<int> t_adv = sw.at("t_adv").get<std::vector<int>>();
    const int label = sw.at("argmin_label").get<int>();
    const Detector& det = z.detector(e.detector_seed);
    const PatchResult r = synthesize_patch(det, f_adv, images, z.config.patch);
    const double patch_asr = eval_patch_asr(e.model, det, r.patch, t_adv, questions, images, label, z.config.patch.scale);

    std::string ppm = to_ppm(r.patch);
    ppm.insert(ppm.find('\n') + 1, "# config_hash=" + z.hash + "\n");
    write_text(out_dir / (e.id + ".p3"), ppm);
    write_json(out_dir / (e.id + ".json"), {{"model_id", e.id},
                                            {"config_hash", z.hash},
                                            {"label", label},
                                            {"boxes", r.boxes},
                                            {"epochs", r.mse_trace.size()},
                                            {"best_epoch", r.best_epoch},
                                            {"initial_mse", r.initial_mse()},
                                            {"best_mse", r.best_mse()},
                                            {"mse_trace", r.mse_trace},
                                            {"min_pixel", r.patch.min_value()},
                                            {"max_pixel", r.patch.max_value()},
                                            {"feature_inv_asr", sw.at("inv_asr").get<double>()},
                                            {"patch_inv_asr", patch_asr},
                                            {"config", z.config.patch.to_json()}});
    csv_rows[t] = join_csv({e.id, e.split, fmt(r.initial_mse()), fmt(r.best_mse()),
                            fmt(r.best_mse() / r.initial_mse()), fmt(r.patch.min_value()), fmt(r.patch.max_value()),
                            fmt(sw.at("inv_asr").get<double>()), fmt(patch_asr)});
  });
  std::string csv = "model_id,split,initial_mse,best_mse,mse_ratio,min_pixel,max_pixel,feature_inv_asr,patch_inv_asr\n";
  for (const auto& row : csv_rows) csv += row;
  write_text(out_dir / "patches.csv", with_hash(z.hash, csv));
}

void run_strip(const fs::path& zoo_dir, const fs::path& out_dir) {
  const ZooContext z = open_zoo(zoo_dir);
  const StripSettings& st = z.config.strip;
  const Dataset pool = gen_dataset(derive_seed(z.config.seed, "strip-pool"), static_cast<std::size_t>(st.pool_size));
  const Dataset inputs =
      gen_dataset(derive_seed(z.config.seed, "strip-inputs"), static_cast<std::size_t>(st.inputs_per_model) * 4);

  struct ModelFar {
    std::string split;
    std::vector<std::vector<double>> far;  // [fraction][frr level]
  };
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < z.models.size(); ++i) {
    if (z.models[i].split != "benign") todo.push_back(i);
  }
  log("[strip] " + std::to_string(todo.size()) + " backdoored models");
  std::vector<ModelFar> results(todo.size());
  parallel_for(todo.size(), [&](std::size_t t) {
    const ZooEntry& e = z.models[todo[t]];
    const BackdoorConfig truth = load_truth(zoo_dir, e.id);
    const Detector& det = z.detector(e.detector_seed);
    std::vector<Sample> chosen;
    for (const Sample& s : inputs.samples) {
      if (s.answer != truth.target && chosen.size() < static_cast<std::size_t>(st.inputs_per_model)) chosen.push_back(s);
    }
    ModelFar mf{e.split, {}};
    for (std::size_t f = 0; f < st.text_fractions.size(); ++f) {
      StripConfig sc{st.perturbations, st.blend, st.text_fractions[f]};
      std::vector<double> clean, poison;
      for (std::size_t i = 0; i < chosen.size(); ++i) {
        const std::uint64_t seed = derive_seed(z.config.seed, "strip", todo[t] * 1000003 + i);
        clean.push_back(strip_entropy(e.model, det, chosen[i].question, chosen[i].image, pool.samples, sc, seed));
        const Sample p = plant_triggers(chosen[i], truth, has_text_key(truth.family), has_image_key(truth.family));
        poison.push_back(strip_entropy(e.model, det, p.question, p.image, pool.samples, sc, seed));
      }
      std::vector<double> row;
      for (double frr : kFrrLevels) row.push_back(far_at_frr(clean, poison, frr));
      mf.far.push_back(std::move(row));
    }
    results[t] = std::move(mf);
  });

  std::string csv = "split,text_fraction,frr,far\n";
  for (const char* split : kEvalSplits) {
    for (std::size_t f = 0; f < st.text_fractions.size(); ++f) {
      for (std::size_t l = 0; l < std::size(kFrrLevels); ++l) {
        double sum = 0;
        int n = 0;
        for (const ModelFar& mf : results) {
          if (mf.split != split) continue;
          sum += mf.far[f][l];
          ++n;
        }
        if (n) csv += join_csv({split, fmt(st.text_fractions[f]), fmt(kFrrLevels[l]), fmt(sum / n)});
      }
    }
  }
  write_text(out_dir / "strip.csv", with_hash(z.hash, csv));
  log("[strip] wrote " + (out_dir / "strip.csv").string());
}

std::vector<std::pair<std::string, InversionConfig>> planned_sweeps(const RunConfig& config) {
  std::vector<std::pair<std::string, InversionConfig>> out;
  for (Modality m : {Modality::kNlp, Modality::kVisFeature, Modality::kJoint}) {
    InversionConfig c = config.inversion;
    c.modality = m;
    out.emplace_back(to_string(m), c);
  }
  InversionConfig top = config.inversion;
  top.modality = Modality::kJoint;
  top.overlay = OverlayPolicy::kTopOne;
  out.emplace_back("joint-top1", top);
  for (int steps : config.step_ablation) {
    if (steps == config.inversion.max_steps) continue;
    InversionConfig c = config.inversion;
    c.modality = Modality::kJoint;
    c.max_steps = steps;
    out.emplace_back("joint-T" + std::to_string(steps), c);
  }
  return out;
}

std::vector<StageTime> run_all(const RunConfig& config, const fs::path& out) {
  std::vector<StageTime> times;
  auto timed = [&](const std::string& stage, auto&& fn) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    times.push_back({stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()});
    log("[run] " + stage + " took " + fmt(times.back().seconds) + " s");
  };
  timed("zoo", [&] { run_zoo(config, out / "zoo"); });
  std::vector<fs::path> sweeps;
  for (const auto& [name, inv] : planned_sweeps(config)) {
    timed("sweep " + name, [&] { run_sweep(out / "zoo", inv, out / "sweeps" / name); });
    sweeps.push_back(out / "sweeps" / name);
  }
  timed("bench", [&] { run_bench(sweeps, out / "zoo", out / "reports"); });
  timed("patchgen", [&] { run_patchgen(out / "zoo", out / "sweeps" / "vis", out / "patches"); });
  timed("strip", [&] { run_strip(out / "zoo", out / "reports"); });
  return times;
}

}  // namespace tijo
