/* Copyright 2026 The mfevit Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

// mfevit command-line driver. Progress goes to stderr; each command ends
// with one JSON object on stdout.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfevit/errors.hpp"
#include "mfevit/fusion.hpp"
#include "mfevit/harness.hpp"
#include "mfevit/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mfevit;

namespace {

struct CommonRunFlags {
  std::string config_path;
  std::string manifest_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

TrainConfig resolve_config(const CommonRunFlags& flags, std::vector<std::string> extra) {
  TrainConfig cfg = flags.config_path.empty() ? TrainConfig{} : load_train_config(flags.config_path);
  std::vector<std::string> all = flags.overrides;
  if (flags.seed) all.push_back("seed=" + std::to_string(*flags.seed));
  all.insert(all.end(), extra.begin(), extra.end());
  return with_overrides(cfg, all);
}

fs::path run_dir(const std::string& flag) {
  fs::path dir = flag.empty() ? default_run_dir() : fs::path(flag);
  fs::create_directories(dir);
  return dir;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

json confusion_json(const ConfusionMatrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < ConfusionMatrix::kSize; ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < ConfusionMatrix::kSize; ++j) row.push_back(m.at(i, j));
    rows.push_back(row);
  }
  return rows;
}

void emit(const json& summary, const std::optional<fs::path>& dir = std::nullopt) {
  if (dir) open_out(*dir / "summary.json") << summary.dump(2) << '\n';
  std::cout << summary.dump() << std::endl;
}

int cmd_synth(const std::string& out, const SynthConfig& sc) {
  const auto manifest = generate_synthetic(sc, out);
  std::size_t noisy = 0;
  for (const auto& r : manifest.records) noisy += r.noisy ? 1 : 0;
  std::cerr << "wrote " << manifest.records.size() << " pairs to " << out << '\n';
  emit({{"command", "synth"},
        {"manifest", (fs::path(out) / "manifest.csv").string()},
        {"samples", manifest.records.size()},
        {"subjects", manifest.subjects().size()},
        {"noisy", noisy},
        {"image_size", sc.image_size},
        {"seed", sc.seed}});
  return 0;
}

int cmd_train(const CommonRunFlags& flags) {
  const TrainConfig cfg = resolve_config(flags, {});
  const fs::path dir = run_dir(flags.out_dir);
  save_train_config(dir / "config.txt", cfg);
  const auto data = load_dataset(load_manifest(flags.manifest_path), cfg.model.image_size);
  std::cerr << "training on " << data.size() << " pairs for " << cfg.epochs << " epochs\n";
  const auto start = std::chrono::steady_clock::now();
  const TrainResult result = train_fold(data, cfg, [](const EpochMetrics& m) {
    std::cerr << "epoch " << m.epoch << " loss " << m.mean_loss << " acc " << m.train_accuracy << " relabeled "
              << m.relabeled << '\n';
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  {
    auto out_file = open_out(dir / "metrics.tsv");
    write_epoch_metrics(out_file, result.epochs);
  }
  {
    auto log = open_out(dir / "relabel_log.tsv");
    log << relabel_log_header() << '\n';
    write_relabel_events(log, result.relabel_log);
  }
  save_checkpoint(dir / "checkpoint.bin", result.params, cfg.model);
  const Evaluation ev = evaluate(result.params, data, cfg.model);
  {
    auto out_file = open_out(dir / "confusion.tsv");
    write_confusion(out_file, ev.matrix);
  }
  json summary{{"command", "train"},
               {"run_dir", dir.string()},
               {"samples", data.size()},
               {"epochs", cfg.epochs},
               {"steps", result.step_losses.size()},
               {"relabel_events", result.relabel_log.size()},
               {"final_loss", result.epochs.empty() ? json(nullptr) : json(result.epochs.back().mean_loss)},
               {"train_accuracy", ev.accuracy},
               {"seconds", seconds}};
  emit(summary, dir);
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest, const std::string& out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const auto data = load_dataset(load_manifest(manifest), ck.config.image_size);
  const Evaluation ev = evaluate(ck.params, data, ck.config);
  std::optional<fs::path> dir;
  if (!out.empty()) {
    dir = run_dir(out);
    auto out_file = open_out(*dir / "confusion.tsv");
    write_confusion(out_file, ev.matrix);
  }
  write_confusion(std::cerr, ev.matrix);
  emit({{"command", "eval"},
        {"samples", data.size()},
        {"accuracy", ev.accuracy},
        {"confusion", confusion_json(ev.matrix)}},
       dir);
  return 0;
}

int cmd_cv(const CommonRunFlags& flags, std::optional<std::size_t> k, std::optional<std::size_t> repeats,
           std::optional<std::size_t> jobs) {
  std::vector<std::string> extra;
  if (k) extra.push_back("cv_folds=" + std::to_string(*k));
  if (repeats) extra.push_back("cv_repeats=" + std::to_string(*repeats));
  if (jobs) extra.push_back("jobs=" + std::to_string(*jobs));
  const TrainConfig cfg = resolve_config(flags, extra);
  const fs::path dir = run_dir(flags.out_dir);
  save_train_config(dir / "config.txt", cfg);
  const auto data = load_dataset(load_manifest(flags.manifest_path), cfg.model.image_size);
  const auto result = cross_validate(data, cfg, cfg.cv_folds, cfg.cv_repeats, cfg.jobs, [](const SplitResult& s) {
    std::cerr << "repeat " << s.repeat << " fold " << s.fold << " accuracy " << s.accuracy << '\n';
  });
  {
    auto out_file = open_out(dir / "splits.tsv");
    write_split_log(out_file, result.splits);
  }
  {
    auto out_file = open_out(dir / "confusion.tsv");
    write_confusion(out_file, result.aggregate);
  }
  json per_class = json::array();
  for (double a : result.per_class_accuracy) per_class.push_back(std::isnan(a) ? json(nullptr) : json(a));
  emit({{"command", "cv"},
        {"run_dir", dir.string()},
        {"folds", cfg.cv_folds},
        {"repeats", cfg.cv_repeats},
        {"splits", result.splits.size()},
        {"mean_accuracy", result.mean_accuracy},
        {"stddev_accuracy", result.stddev_accuracy},
        {"per_class_accuracy", per_class},
        {"confusion", confusion_json(result.aggregate)}},
       dir);
  return 0;
}

int cmd_params(const std::string& config_path, const std::vector<std::string>& overrides) {
  const TrainConfig cfg =
      with_overrides(config_path.empty() ? TrainConfig{} : load_train_config(config_path), overrides);
  const auto rows = report_parameters(cfg.model);
  write_parameter_report(std::cerr, rows);
  const ParameterCount count = count_parameters(cfg.model);
  json groups = json::object();
  for (const auto& [name, n] : count.groups) groups[name] = n;
  json modes = json::object();
  for (const auto& r : rows) modes[to_string(r.mode)] = {{"total", r.total}, {"delta_vs_rgb_only", r.delta_vs_rgb_only}};
  emit({{"command", "params"},
        {"fusion_mode", to_string(cfg.model.fusion_mode)},
        {"total", count.total},
        {"head_width", cfg.model.head_width()},
        {"groups", groups},
        {"modes", modes}});
  return 0;
}

int cmd_check_grad(const std::string& size, std::uint64_t seed, double tolerance) {
  if (size != "tiny") throw ConfigError("check-grad: only --size tiny is supported");
  const ModelConfig cfg = tiny_gradcheck_config();
  SynthConfig sc;
  sc.image_size = cfg.image_size;
  sc.seed = seed;
  const ImagePair pair = render_synthetic(sc, 0);
  const std::size_t label = kNumExpressions + static_cast<std::size_t>(pair.expression) * cfg.num_subclasses;
  const auto start = std::chrono::steady_clock::now();
  const GradCheckResult r = check_gradients(cfg, pair, label, seed);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = r.worst.relative_error <= tolerance;
  std::cerr << "checked " << r.checked << " gradients; worst " << r.worst.parameter << "[" << r.worst.index
            << "] analytic " << r.worst.analytic << " numeric " << r.worst.numeric << " relative error "
            << r.worst.relative_error << (ok ? "" : " exceeds tolerance") << '\n';
  emit({{"command", "check-grad"},
        {"passed", ok},
        {"checked", r.checked},
        {"max_relative_error", r.worst.relative_error},
        {"tolerance", tolerance},
        {"worst", {{"parameter", r.worst.parameter}, {"index", r.worst.index},
                   {"analytic", r.worst.analytic}, {"numeric", r.worst.numeric}}},
        {"seconds", seconds}});
  return ok ? 0 : 1;
}

void add_run_flags(CLI::App* cmd, CommonRunFlags& flags, bool needs_out) {
  cmd->add_option("--config", flags.config_path, "key = value config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--manifest", flags.manifest_path, "dataset manifest")->required()->check(CLI::ExistingFile);
  if (needs_out) {
    cmd->add_option("--out", flags.out_dir, std::string("run directory (default: $") + kRunDirEnv + " or ./runs)");
  }
  cmd->add_option("--set", flags.overrides, "override a config key, key=value");
  cmd->add_option("--seed", flags.seed, "seed for all randomness (overrides the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mfevit: RGB-D expression transformer toolkit"};
  app.require_subcommand(1);

  SynthConfig sc;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "generate the procedural RGB-D dataset");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--subjects", sc.num_subjects, "number of subjects")->check(CLI::PositiveNumber);
  synth->add_option("--per-class", sc.samples_per_class, "samples per subject and expression")
      ->check(CLI::PositiveNumber);
  synth->add_option("--noise-frac", sc.noise_frac, "fraction of off-manifold samples")->check(CLI::Range(0.0, 1.0));
  synth->add_option("--image-size", sc.image_size, "side length in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--seed", sc.seed, "generator seed");

  CommonRunFlags train_flags;
  auto* train = app.add_subcommand("train", "train one model on a manifest");
  add_run_flags(train, train_flags, true);

  std::string eval_checkpoint, eval_manifest, eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", eval_out, "directory for confusion.tsv and summary.json");

  CommonRunFlags cv_flags;
  std::optional<std::size_t> cv_k, cv_repeats, cv_jobs;
  auto* cv = app.add_subcommand("cv", "subject-disjoint k-fold cross-validation");
  add_run_flags(cv, cv_flags, true);
  cv->add_option("--k", cv_k, "number of folds");
  cv->add_option("--repeats", cv_repeats, "repetitions with fresh fold assignments");
  cv->add_option("--jobs", cv_jobs, "concurrent folds");

  std::string params_config;
  std::vector<std::string> params_overrides;
  auto* params = app.add_subcommand("params", "parameter counts per fusion mode");
  params->add_option("--config", params_config, "config file (defaults when omitted)")->check(CLI::ExistingFile);
  params->add_option("--set", params_overrides, "override a config key, key=value");

  std::string grad_size = "tiny";
  std::uint64_t grad_seed = 0;
  double grad_tol = 1e-4;
  auto* check_grad = app.add_subcommand("check-grad", "finite-difference check of every parameter gradient");
  check_grad->add_option("--size", grad_size, "model size (tiny)");
  check_grad->add_option("--seed", grad_seed, "seed for weights and input");
  check_grad->add_option("--tolerance", grad_tol, "maximum relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(synth_out, sc);
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_checkpoint, eval_manifest, eval_out);
    if (*cv) return cmd_cv(cv_flags, cv_k, cv_repeats, cv_jobs);
    if (*params) return cmd_params(params_config, params_overrides);
    if (*check_grad) return cmd_check_grad(grad_size, grad_seed, grad_tol);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
