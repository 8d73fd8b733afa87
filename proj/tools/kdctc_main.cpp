#include <cstdint>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdctc/experiment.hpp"
#include "kdctc/report.hpp"
#include "kdctc/synth.hpp"
#include "kdctc/trainer.hpp"

namespace {

using kdctc::KvMap;

const std::vector<std::string> kConfigKeys = {
    "arch",          "method",        "init",          "pretrained_path", "disable_local",
    "split_seed",    "lr",            "momentum",      "batch_size",      "total_steps",
    "mixed_precision", "seed",        "eval_every",    "checkpoint_every", "dump_patches",
    "alpha",         "n_min",         "focal_gamma",   "main_weight",     "dist_weight",
    "global_size",   "local_size",    "patch_fraction_min", "patch_fraction_max", "norm_mean", "norm_std"};

std::string dashed(std::string key) {
  for (auto& c : key)
    if (c == '_') c = '-';
  return key;
}

// Per-key CLI overrides collected as strings; they win over --config.
struct ConfigCli {
  std::string config_file;
  KvMap overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "flat key = value config file");
    for (const auto& key : kConfigKeys) {
      cmd->add_option_function<std::string>(
          "--" + dashed(key), [this, key](const std::string& v) { overrides[key] = v; },
          "override config key '" + key + "'");
    }
  }

  kdctc::RunConfig resolve() const {
    kdctc::RunConfig cfg;
    if (!config_file.empty()) kdctc::apply_kv(cfg, kdctc::parse_kv_file(config_file));
    kdctc::apply_kv(cfg, overrides);
    return cfg;
  }
};

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stoi(part));
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(std::stoull(part));
  return out;
}

std::vector<kdctc::Method> parse_method_list(const std::string& csv) {
  std::vector<kdctc::Method> out;
  std::stringstream ss(csv);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(kdctc::method_from_string(part));
  return out;
}

void print_eval(const kdctc::EvalResult& ev, const std::vector<std::string>& classes) {
  std::cout << "test_accuracy: " << std::fixed << std::setprecision(4) << ev.accuracy * 100.0 << "%  ("
            << ev.n_test << " samples)\n";
  for (std::size_t c = 0; c < classes.size(); ++c)
    std::cout << "  " << std::left << std::setw(20) << classes[c] << std::fixed << std::setprecision(4)
              << ev.per_class_accuracy[c] * 100.0 << "%\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Texture-distillation image classification toolkit"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic texture dataset");
  int synth_classes = 4, synth_per_class = 30, synth_size = 150;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth->add_option("--classes", synth_classes, "number of classes")->required();
  synth->add_option("--per-class", synth_per_class, "images per class")->required();
  synth->add_option("--size", synth_size, "image side in pixels");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output dataset root")->required();

  // prepare-splits
  auto* prep = app.add_subcommand("prepare-splits", "50/50 split plus low-data train manifests");
  std::string prep_root, prep_out, prep_percentages = "1,3,5,10,20,30,40,50,75,100", prep_seeds = "0,1,2";
  std::uint64_t prep_split_seed = 0, prep_subsample_seed = 0;
  int prep_subsample = 0;
  prep->add_option("--root", prep_root, "dataset root (class-per-folder)")->required();
  prep->add_option("--out-dir", prep_out, "manifest output directory")->required();
  prep->add_option("--percentages", prep_percentages, "comma-separated percentages");
  prep->add_option("--seeds", prep_seeds, "comma-separated draw seeds");
  prep->add_option("--split-seed", prep_split_seed, "seed of the fixed 50/50 split");
  prep->add_option("--subsample-per-class", prep_subsample, "pre-subsample each class to this count (0 = off)");
  prep->add_option("--subsample-seed", prep_subsample_seed, "seed of the pre-subsample draw");

  // train
  auto* tr = app.add_subcommand("train", "train one model from a manifest");
  std::string tr_manifest, tr_root, tr_out, tr_test_manifest;
  ConfigCli tr_cfg;
  tr->add_option("--manifest", tr_manifest, "training manifest")->required();
  tr->add_option("--data-root", tr_root, "dataset root the manifest paths are relative to")->required();
  tr->add_option("--out-dir", tr_out, "output directory (checkpoint, logs)")->required();
  tr->add_option("--test-manifest", tr_test_manifest, "manifest for periodic eval (eval_every)");
  tr_cfg.attach(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string ev_checkpoint, ev_manifest, ev_root;
  ConfigCli ev_cfg;
  ev->add_option("--checkpoint", ev_checkpoint, "model checkpoint")->required();
  ev->add_option("--manifest", ev_manifest, "test manifest")->required();
  ev->add_option("--data-root", ev_root, "dataset root")->required();
  ev_cfg.attach(ev);

  // experiment
  auto* ex = app.add_subcommand("experiment", "full multi-seed, multi-percentage protocol");
  std::string ex_root, ex_results, ex_methods = "vanilla,kd_ctcnet", ex_percentages = "1,3,5,10,20,50,100",
              ex_seeds = "0,1,2";
  int ex_subsample = 0;
  std::uint64_t ex_subsample_seed = 0;
  ConfigCli ex_cfg;
  ex->add_option("--root", ex_root, "dataset root")->required();
  ex->add_option("--results-dir", ex_results, "results directory")->required();
  ex->add_option("--methods", ex_methods, "comma-separated methods");
  ex->add_option("--percentages", ex_percentages, "comma-separated percentages");
  ex->add_option("--seeds", ex_seeds, "comma-separated seeds");
  ex->add_option("--subsample-per-class", ex_subsample, "pre-subsample each class (0 = off)");
  ex->add_option("--subsample-seed", ex_subsample_seed, "seed of the pre-subsample draw");
  ex_cfg.attach(ex);

  // report
  auto* rep = app.add_subcommand("report", "render tables and confusion matrices from results");
  std::string rep_results, rep_out;
  rep->add_option("--results-dir", rep_results, "results directory")->required();
  rep->add_option("--out-dir", rep_out, "report output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      kdctc::generate_synthetic_texture_dataset(synth_classes, synth_per_class, synth_size, synth_seed, synth_out);
      std::cout << "wrote " << synth_classes << " x " << synth_per_class << " images under " << synth_out << "\n";
    } else if (prep->parsed()) {
      kdctc::ScanReport scan;
      kdctc::DatasetIndex index = kdctc::scan_dataset(prep_root, &scan);
      for (const auto& w : scan.warnings) std::cerr << "warning: " << w << "\n";
      if (prep_subsample > 0) index = kdctc::subsample_balanced(index, prep_subsample, prep_subsample_seed);
      auto [train_full, test] = kdctc::stratified_split(index, prep_split_seed);
      std::filesystem::create_directories(prep_out);
      kdctc::write_manifest(train_full, std::filesystem::path(prep_out) / "train_p100.manifest");
      kdctc::write_manifest(test, std::filesystem::path(prep_out) / "test.manifest");
      std::cout << "train base: " << train_full.per_class_count << "/class, test: " << test.per_class_count
                << "/class\n";
      for (int pct : parse_int_list(prep_percentages)) {
        for (std::uint64_t seed : parse_seed_list(prep_seeds)) {
          kdctc::SplitManifest m = kdctc::sample_low_data(train_full, pct, seed);
          std::ostringstream name;
          name << "train_p" << (pct < 100 ? "0" : "") << (pct < 10 ? "0" : "") << pct << "_s" << seed
               << ".manifest";
          kdctc::write_manifest(m, std::filesystem::path(prep_out) / name.str());
          if (seed == parse_seed_list(prep_seeds).front())
            std::cout << pct << "%: " << m.per_class_count << " samples/class\n";
        }
      }
    } else if (tr->parsed()) {
      kdctc::RunConfig cfg = tr_cfg.resolve();
      const kdctc::SplitManifest manifest = kdctc::read_manifest(tr_manifest);
      kdctc::SplitManifest test_manifest;
      kdctc::TrainHooks hooks;
      hooks.out_dir = tr_out;
      if (!tr_test_manifest.empty()) {
        test_manifest = kdctc::read_manifest(tr_test_manifest);
        hooks.eval_manifest = &test_manifest;
      }
      kdctc::ModelInit init;
      if (cfg.init == "pretrained") {
        if (cfg.pretrained_path.empty()) throw kdctc::ConfigError("init=pretrained requires pretrained_path");
        init = kdctc::InitPretrained{cfg.pretrained_path, cfg.train.seed};
      } else {
        init = kdctc::InitRandom{cfg.train.seed};
      }
      auto model = kdctc::build_model(cfg.arch, static_cast<int>(manifest.classes.size()), init);
      const auto history =
          kdctc::train(*model, manifest, tr_root, cfg.method, cfg.train, cfg.pipeline, cfg.disable_local, hooks);
      std::cout << "trained " << history.size() << " steps; final total loss " << std::setprecision(6)
                << history.back().total << "\n";
      std::cout << "checkpoint: " << (std::filesystem::path(tr_out) / "model.ckpt").string() << "\n";
    } else if (ev->parsed()) {
      kdctc::RunConfig cfg = ev_cfg.resolve();
      auto model = kdctc::load_checkpoint(ev_checkpoint);
      const kdctc::SplitManifest manifest = kdctc::read_manifest(ev_manifest);
      const kdctc::EvalResult result =
          kdctc::evaluate(*model, manifest, ev_root, cfg.pipeline, cfg.train.batch_size);
      print_eval(result, manifest.classes);
    } else if (ex->parsed()) {
      kdctc::ExperimentPlan plan;
      plan.dataset_root = ex_root;
      plan.results_dir = ex_results;
      plan.methods = parse_method_list(ex_methods);
      plan.percentages = parse_int_list(ex_percentages);
      plan.seeds = parse_seed_list(ex_seeds);
      plan.config = ex_cfg.resolve();
      plan.subsample_per_class = ex_subsample;
      plan.subsample_seed = ex_subsample_seed;
      const kdctc::ExperimentOutcome outcome = kdctc::run_experiment(plan);
      for (const auto& f : outcome.failures) std::cerr << "failed: " << f << "\n";
      std::cout << std::left << std::setw(24) << "method" << std::setw(6) << "pct" << std::setw(10) << "mean"
                << std::setw(10) << "std" << "seeds\n";
      for (const auto& row : outcome.aggregates)
        std::cout << std::left << std::setw(24) << row.method << std::setw(6) << row.percentage << std::fixed
                  << std::setprecision(2) << std::setw(10) << row.mean_accuracy * 100.0 << std::setw(10)
                  << row.std_accuracy * 100.0 << row.n_seeds << "\n";
    } else if (rep->parsed()) {
      kdctc::write_report(rep_results, rep_out);
      std::cout << "report written to " << rep_out << "\n";
    }
  } catch (const kdctc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
