// tijo command line. Exit codes: 0 ok, 1 gate or experiment failure, 2 usage error.

#include "tijo/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

tijo::RunConfig config_or_default(const std::string& path) {
  return path.empty() ? tijo::RunConfig{} : tijo::load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trojan inversion for joint multimodal models"};
  app.require_subcommand(1);

  std::string config_path, out, zoo_dir, modality, overlay, sweep_dir;
  std::vector<std::string> sweep_dirs;
  int max_steps = 0;

  auto* zoo = app.add_subcommand("zoo", "model zoo");
  zoo->require_subcommand(1);
  auto* zoo_build = zoo->add_subcommand("build", "train, gate and save the zoo");
  zoo_build->add_option("--config", config_path, "JSON RunConfig (defaults if omitted)")->check(CLI::ExistingFile);
  zoo_build->add_option("--out", out, "zoo directory")->required();

  auto* sweep = app.add_subcommand("sweep", "trigger sweep over every zoo model");
  sweep->add_option("--zoo", zoo_dir)->required()->check(CLI::ExistingDirectory);
  sweep->add_option("--modality", modality)->required()->check(CLI::IsMember({"nlp", "vis", "joint"}));
  sweep->add_option("--out", out)->required();
  sweep->add_option("--max-steps", max_steps, "override the zoo config's step budget")->check(CLI::PositiveNumber);
  sweep->add_option("--overlay", overlay)->check(CLI::IsMember({"all", "top_one"}));

  auto* bench = app.add_subcommand("bench", "AUC and scatter reports from sweeps");
  bench->add_option("--sweeps", sweep_dirs)->required()->check(CLI::ExistingDirectory);
  bench->add_option("--zoo", zoo_dir, "defaults to the zoo of the first sweep")->check(CLI::ExistingDirectory);
  bench->add_option("--out", out)->required();

  auto* patchgen = app.add_subcommand("patchgen", "reconstruct image patches from a vis or joint sweep");
  patchgen->add_option("--zoo", zoo_dir)->required()->check(CLI::ExistingDirectory);
  patchgen->add_option("--sweeps", sweep_dir)->required()->check(CLI::ExistingDirectory);
  patchgen->add_option("--out", out, "defaults to <zoo>/../patches");

  auto* strip = app.add_subcommand("strip", "STRIP FAR/FRR table");
  strip->add_option("--zoo", zoo_dir)->required()->check(CLI::ExistingDirectory);
  strip->add_option("--out", out, "defaults to <zoo>/../reports");

  auto* run = app.add_subcommand("run", "zoo, sweeps, bench, patchgen and strip in one go");
  run->add_option("--config", config_path)->check(CLI::ExistingFile);
  run->add_option("--out", out, "defaults to the config's out");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (zoo_build->parsed()) {
      tijo::run_zoo(config_or_default(config_path), out);
    } else if (sweep->parsed()) {
      tijo::InversionConfig inv = tijo::zoo_run_config(zoo_dir).inversion;
      inv.modality = tijo::modality_from_string(modality);
      if (max_steps > 0) inv.max_steps = max_steps;
      if (!overlay.empty()) inv.overlay = overlay == "all" ? tijo::OverlayPolicy::kAll : tijo::OverlayPolicy::kTopOne;
      tijo::run_sweep(zoo_dir, inv, out);
    } else if (bench->parsed()) {
      tijo::run_bench({sweep_dirs.begin(), sweep_dirs.end()}, zoo_dir, out);
    } else if (patchgen->parsed()) {
      tijo::run_patchgen(zoo_dir, sweep_dir, out.empty() ? fs::path(zoo_dir).parent_path() / "patches" : fs::path(out));
    } else if (strip->parsed()) {
      tijo::run_strip(zoo_dir, out.empty() ? fs::path(zoo_dir).parent_path() / "reports" : fs::path(out));
    } else if (run->parsed()) {
      const tijo::RunConfig config = config_or_default(config_path);
      tijo::run_all(config, out.empty() ? config.out : out);
    }
  } catch (const tijo::ConfigError& e) {
    std::cerr << "tijo: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "tijo: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
