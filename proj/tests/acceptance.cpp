// End-to-end acceptance run: one PASS/FAIL line per criterion. Runs the full default
// pipeline twice (determinism), so it takes several minutes.
//
//   acceptance [work_dir]     default: ./acceptance_runs

#include "gradcheck.hpp"
#include "oracles.hpp"

#include "tijo/bench.hpp"
#include "tijo/io.hpp"
#include "tijo/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace tijo;
using nlohmann::json;

namespace {

std::map<int, std::string> results;  // printed in criterion order at the end
int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  results[id] = std::string(pass ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + ": " + detail;
  std::fprintf(stderr, "%s\n", results[id].c_str());
  if (!pass) ++failures;
}

int finish() {
  for (const auto& [id, line] : results) std::printf("%s\n", line.c_str());
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// (split, method, fold) -> auc
using AucTable = std::map<std::tuple<std::string, std::string, std::string>, double>;

AucTable read_auc(const fs::path& path) {
  AucTable t;
  std::istringstream in(read_text(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("split,", 0) == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    t[{cells.at(0), cells.at(1), cells.at(2)}] = std::stod(cells.at(3));
  }
  return t;
}

struct ZooTruth {
  std::vector<ModelRecord> records;
  std::map<std::string, const ModelRecord*> by_id;
};

json sweep_record(const fs::path& run, const std::string& sweep, const std::string& id) {
  return read_json(run / "sweeps" / sweep / (id + ".json"));
}

void gradient_oracle() {
  const auto start = std::chrono::steady_clock::now();
  const Detector detector(derive_seed(1, "acceptance-detector"));
  const SupportSet support = make_support(detector, gen_dataset(3, 8).samples);
  double worst = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const std::uint64_t seed = 1000 + i;
    worst = std::max(worst, gradcheck::fusion_error(seed));
    worst = std::max(worst, gradcheck::detector_error(detector, seed, 32));
    const FusionModel model(FusionConfig{}, seed);
    worst = std::max(worst, gradcheck::f_adv_error(model, support, seed,
                                                   i % 2 ? OverlayPolicy::kAll : OverlayPolicy::kTopOne));
    if (i % 4 == 0) worst = std::max(worst, gradcheck::patch_error(detector, seed));
  }
  const double t = seconds_since(start);
  report(1, worst < 1e-4 && t < 60,
         "worst relative error " + std::to_string(worst) + " over 100 configurations in " + num(t) + " s");
}

void oracle_equivalence() {
  Rng rng(derive_seed(2, "acceptance-oracles"));
  int auc_mismatch = 0, flip_mismatch = 0, far_mismatch = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + uniform_index(rng, 80);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t j = 0; j < n; ++j) {
      l[j] = static_cast<int>(uniform_index(rng, 2));
      s[j] = i % 3 == 0 ? static_cast<double>(uniform_index(rng, 6)) : standard_normal(rng);
    }
    l[0] = 0;
    l[1] = 1;
    auc_mismatch += std::abs(auc(s, l) - oracle::auc_pairs(s, l)) > 1e-12;
  }
  for (int i = 0; i < 200; ++i) {
    Mat emb(kVocabSize, 16);
    for (Eigen::Index k = 0; k < emb.size(); ++k) emb.data()[k] = standard_normal(rng);
    Vec g(16);
    for (auto& v : g) v = standard_normal(rng);
    const int cur = static_cast<int>(uniform_index(rng, kVocabSize));
    flip_mismatch += token_select(g, emb, cur) != oracle::hotflip_brute(g, emb, cur);
  }
  for (int i = 0; i < 200; ++i) {
    std::vector<double> clean(10 + uniform_index(rng, 300)), poison(1 + uniform_index(rng, 100));
    for (auto& v : clean) v = i % 4 == 0 ? static_cast<double>(uniform_index(rng, 5)) : uniform01(rng);
    for (auto& v : poison) v = i % 4 == 0 ? static_cast<double>(uniform_index(rng, 5)) : 0.7 * uniform01(rng);
    for (double frr : kFrrLevels) far_mismatch += far_at_frr(clean, poison, frr) != oracle::far_scan(clean, poison, frr);
  }
  report(10, auc_mismatch + flip_mismatch + far_mismatch == 0,
         "mismatches: auc " + std::to_string(auc_mismatch) + "/1000, hotflip " + std::to_string(flip_mismatch) +
             "/200, far " + std::to_string(far_mismatch) + "/800");
}

void zoo_gates(const fs::path& run, const ZooTruth& z, double zoo_seconds) {
  double benign_sum = 0;
  int benign_n = 0;
  for (const auto& r : z.records) {
    if (r.truth.family == TriggerFamily::kNone) {
      benign_sum += r.metrics.clean_accuracy;
      ++benign_n;
    }
  }
  const double benign_mean = benign_sum / benign_n;
  int failing = 0;
  double min_benign = 1, min_asr = 1, max_single = 0, max_drop = 0;
  for (const auto& r : z.records) {
    failing += !gate_failures(r, benign_mean).empty();
    if (r.truth.family == TriggerFamily::kNone) {
      min_benign = std::min(min_benign, r.metrics.clean_accuracy);
      continue;
    }
    min_asr = std::min(min_asr, r.metrics.attack_success.value_or(0));
    max_drop = std::max(max_drop, benign_mean - r.metrics.clean_accuracy);
    if (r.truth.family == TriggerFamily::kDualKey) {
      max_single = std::max({max_single, r.metrics.text_key_success.value_or(1), r.metrics.image_key_success.value_or(1)});
    }
  }
  (void)run;
  report(2, z.records.size() == 40 && failing == 0 && zoo_seconds < 300,
         std::to_string(z.records.size()) + " models, " + std::to_string(failing) + " failing gates; min benign acc " +
             num(min_benign) + ", min ASR " + num(min_asr) + ", max single-key " + num(max_single) +
             ", max clean drop " + num(max_drop) + "; built in " + num(zoo_seconds) + " s");
}

void auc_criteria(const fs::path& run) {
  const AucTable t = read_auc(run / "reports" / "auc.csv");
  auto mean = [&](const std::string& split, const std::string& method) { return t.at({split, method, "mean"}); };
  const double nlp = mean("nlp", "tijo-nlp"), vis = mean("vis", "tijo-vis");
  report(3, nlp >= 0.95 && vis >= 0.95, "5-fold AUC nlp-inversion on nlp split " + num(nlp) +
                                            ", feature inversion on vis split " + num(vis));
  const double joint = mean("dual", "tijo-joint"), dn = mean("dual", "tijo-nlp"), dv = mean("dual", "tijo-vis");
  report(4, joint >= 0.85 && joint >= std::max(dn, dv) + 0.10,
         "dual split AUC joint " + num(joint) + ", nlp " + num(dn) + ", vis " + num(dv));
  const double top1 = mean("dual", "tijo-joint-top1");
  report(5, joint >= top1, "dual split AUC overlay-all " + num(joint) + " vs top-one " + num(top1));
}

void step_ablation(const fs::path& run, const ZooTruth& z, const RunConfig& config) {
  std::vector<std::pair<int, double>> means;
  for (int steps : config.step_ablation) {
    const std::string sweep = steps == config.inversion.max_steps ? "joint" : "joint-T" + std::to_string(steps);
    double sum = 0;
    int n = 0;
    for (const auto& r : z.records) {
      if (r.truth.family == TriggerFamily::kNone) continue;
      sum += sweep_record(run, sweep, r.id).at("lowest_loss").get<double>();
      ++n;
    }
    means.emplace_back(steps, sum / n);
  }
  std::sort(means.begin(), means.end());
  bool ok = true;
  std::string detail = "mean backdoored lowest loss";
  for (std::size_t i = 0; i < means.size(); ++i) {
    detail += " T=" + std::to_string(means[i].first) + ": " + num(means[i].second);
    if (i > 0 && means[i].second > means[i - 1].second) ok = false;
  }
  report(6, ok, detail);
}

void recovery(const fs::path& run, const ZooTruth& z) {
  int hits = 0, nlp = 0;
  double inv_sum = 0;
  int vis = 0;
  for (const auto& r : z.records) {
    if (r.truth.family == TriggerFamily::kNlpOnly) {
      const json rec = sweep_record(run, "nlp", r.id).at("per_label").at(static_cast<std::size_t>(r.truth.target));
      const auto t_adv = rec.at("t_adv").get<std::vector<int>>();
      hits += std::find(t_adv.begin(), t_adv.end(), r.truth.trigger_token) != t_adv.end();
      ++nlp;
    } else if (r.truth.family == TriggerFamily::kVisSolid) {
      const json rec = sweep_record(run, "vis", r.id).at("per_label").at(static_cast<std::size_t>(r.truth.target));
      inv_sum += rec.at("inv_asr").get<double>();
      ++vis;
    }
  }
  const double rate = static_cast<double>(hits) / nlp;
  report(7, rate >= 0.80, "trigger token recovered at the sealed target for " + std::to_string(hits) + "/" +
                              std::to_string(nlp) + " nlp models");
  const double mean_inv = inv_sum / vis;
  report(8, mean_inv >= 0.90, "mean feature Inv-ASR at the sealed target on vis models " + num(mean_inv));
}

void patches(const fs::path& run, const ZooTruth& z) {
  int ok = 0, n = 0;
  double worst = 0;
  bool in_range = true;
  for (const auto& r : z.records) {
    if (r.truth.family != TriggerFamily::kVisSolid) continue;
    const json p = read_json(run / "patches" / (r.id + ".json"));
    const double ratio = p.at("best_mse").get<double>() / p.at("initial_mse").get<double>();
    worst = std::max(worst, ratio);
    in_range &= p.at("min_pixel").get<double>() >= 0 && p.at("max_pixel").get<double>() <= 1;
    ok += ratio <= 0.5;
    ++n;
  }
  report(9, ok == n && in_range, std::to_string(ok) + "/" + std::to_string(n) +
                                     " vis models reach best MSE <= 0.5 x initial (worst ratio " + num(worst) +
                                     "), pixels in [0,1]: " + (in_range ? "yes" : "no"));
}

std::vector<fs::path> compared_files(const fs::path& run) {
  std::vector<fs::path> files{fs::path("zoo") / "manifest.json"};
  for (const auto& e : fs::recursive_directory_iterator(run)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(fs::relative(e.path(), run));
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_runs");
  const RunConfig config;

  gradient_oracle();
  oracle_equivalence();

  fs::remove_all(work);
  const auto start_a = std::chrono::steady_clock::now();
  std::vector<StageTime> times;
  try {
    times = run_all(config, work / "a");
  } catch (const std::exception& e) {
    std::printf("pipeline run failed: %s\n", e.what());
    for (int id : {2, 3, 4, 5, 6, 7, 8, 9, 11}) report(id, false, "pipeline did not complete");
    return finish();
  }
  const double total_a = seconds_since(start_a);

  ZooTruth z;
  z.records = load_zoo(work / "a" / "zoo");
  for (const auto& r : z.records) z.by_id[r.id] = &r;
  const fs::path run = work / "a";
  zoo_gates(run, z, times.front().seconds);
  auc_criteria(run);
  step_ablation(run, z, config);
  recovery(run, z);
  patches(run, z);

  run_all(config, work / "b");
  int differing = 0;
  const auto files = compared_files(run);
  for (const auto& f : files) {
    if (!fs::exists(work / "b" / f) || read_text(run / f) != read_text(work / "b" / f)) {
      std::fprintf(stderr, "differs: %s\n", f.string().c_str());
      ++differing;
    }
  }
  report(11, differing == 0 && total_a < 600,
         std::to_string(files.size() - static_cast<std::size_t>(differing)) + "/" + std::to_string(files.size()) +
             " manifest/CSV files byte-identical across two runs; full pipeline " + num(total_a) + " s");

  return finish();
}
