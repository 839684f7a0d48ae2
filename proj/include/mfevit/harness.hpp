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

#pragma once

// Training, evaluation and experiment orchestration.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mfevit/encoder.hpp"
#include "mfevit/filter.hpp"
#include "mfevit/image_pair.hpp"
#include "mfevit/model_config.hpp"
#include "mfevit/pipeline.hpp"
#include "mfevit/rng.hpp"

namespace mfevit {

struct OptimizerConfig {
  double learning_rate = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.05;
  double eps = 1e-8;

  bool operator==(const OptimizerConfig&) const = default;
};

/// AdamW state for one ordered list of parameters.
struct OptimizerState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
  OptimizerConfig config;

  /// Zero moments shaped like `params`.
  static OptimizerState create(std::span<const NamedTensor> params, const OptimizerConfig& config);
};

/// One AdamW update from the gradients stored on `params`.
///
/// Throws NumericError naming the parameter on a non-finite gradient
/// (before touching any parameter), DimensionError when the state does
/// not match, and ContractError when the learning rate is not positive.
void adamw_step(std::span<const NamedTensor> params, OptimizerState& state);

struct FoldPlan {
  std::vector<std::vector<std::string>> folds;  // subject ids per fold
  std::map<std::string, std::size_t> fold_of;

  std::size_t k() const { return folds.size(); }
  std::vector<std::string> test_subjects(std::size_t fold) const;
  std::vector<std::string> train_subjects(std::size_t fold) const;
};

/// Shuffles the subjects and deals them round-robin into k folds.
/// Throws ConfigError when k ≤ 0, k > |subjects| or ids repeat.
FoldPlan make_folds(const std::vector<std::string>& subjects, long long k, Rng& rng);

/// Everything a training or cross-validation run needs.
struct TrainConfig {
  ModelConfig model;
  AugmentationConfig augmentation;
  OptimizerConfig optimizer;
  std::size_t epochs = 130;
  std::size_t batch_size = 16;
  int sf_start_epoch = 20;  // first epoch (1-based) after which labels may change
  std::uint64_t seed = 0;
  double init_std = 0.02;
  std::size_t cv_folds = 10;
  std::size_t cv_repeats = 1;
  std::size_t jobs = 1;

  std::vector<std::string> problems() const;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Every key with its current value, sorted by key.
std::map<std::string, std::string> to_key_values(const TrainConfig& config);

/// Sets one key; throws ConfigError on an unknown key or malformed value.
void apply_key(TrainConfig& config, const std::string& key, const std::string& value);

/// Parses `key = value` lines (`#` starts a comment) over the defaults.
/// Collects every unknown key, malformed value and violated constraint
/// into a single ConfigError.
TrainConfig parse_train_config(const std::string& text, const std::string& source = "<config>");
TrainConfig load_train_config(const std::filesystem::path& path);
/// Applies `key=value` overrides on top of `config`, then validates.
TrainConfig with_overrides(TrainConfig config, const std::vector<std::string>& assignments);
std::string format_train_config(const TrainConfig& config);
void save_train_config(const std::filesystem::path& path, const TrainConfig& config);

struct EpochMetrics {
  int epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  // merged predictions against annotated expressions
  std::size_t relabeled = 0;
  std::size_t subclass_labels = 0;  // samples currently holding a subclass label
};

struct TrainResult {
  EncoderParams params;
  std::vector<LabelState> labels;  // aligned with the training set
  std::vector<RelabelEvent> relabel_log;
  std::vector<EpochMetrics> epochs;
  std::vector<double> step_losses;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Trains a freshly initialized model on `train`.
///
/// Each epoch shuffles the samples and takes one AdamW step per
/// mini-batch of the mean cross-entropy against each sample's current
/// label. The class probabilities seen during the epoch feed
/// apply_filter_epoch once the epoch reaches sf_start_epoch. A learning
/// rate of 0 freezes the parameters. Throws NumericError with the epoch,
/// step and sample id when the loss diverges.
TrainResult train_fold(const std::vector<ImagePair>& train, const TrainConfig& config,
                       const EpochCallback& on_epoch = {});

class ConfusionMatrix {
 public:
  static constexpr std::size_t kSize = kNumExpressions;

  void add(int truth, int predicted);
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth][predicted]; }
  std::size_t total() const;
  std::size_t trace() const;
  double accuracy() const;
  /// Row-wise recall; NaN for classes with no samples.
  std::array<double, kSize> per_class_accuracy() const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::array<std::array<std::size_t, kSize>, kSize> counts_{};
};

struct Evaluation {
  ConfusionMatrix matrix;
  double accuracy = 0.0;
  std::vector<int> predictions;  // merged main-class predictions, aligned with the test set
};

/// Augmentation-free predictions merged to main classes, scored against
/// the annotated expressions. Throws ContractError on an empty test set.
Evaluation evaluate(const EncoderParams& params, const std::vector<ImagePair>& test,
                    const ModelConfig& config);

/// Softmax probabilities over all C·(N+1) labels for one pair.
std::vector<double> predict_probabilities(const EncoderParams& params, const ImagePair& pair,
                                          const ModelConfig& config);

struct SplitResult {
  std::size_t repeat = 0;
  std::size_t fold = 0;
  std::vector<std::string> test_subjects;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::size_t relabeled = 0;
  double accuracy = 0.0;
  ConfusionMatrix matrix;
};

struct CrossValidationResult {
  std::vector<SplitResult> splits;  // ordered by (repeat, fold)
  double mean_accuracy = 0.0;
  double stddev_accuracy = 0.0;  // sample standard deviation over splits
  std::array<double, ConfusionMatrix::kSize> per_class_accuracy{};
  ConfusionMatrix aggregate;
};

using SplitCallback = std::function<void(const SplitResult&)>;

/// Subject-disjoint k-fold cross-validation, `repeats` times with fresh
/// fold seeds. Splits run on up to `jobs` threads; results do not depend
/// on `jobs`. Throws BookkeepingError if any split shares a subject
/// between train and test.
CrossValidationResult cross_validate(const std::vector<ImagePair>& data, const TrainConfig& config,
                                     std::size_t k, std::size_t repeats, std::size_t jobs = 1,
                                     const SplitCallback& on_split = {});

/// Tab-separated per-split log with full-precision accuracies.
void write_split_log(std::ostream& os, std::span<const SplitResult> splits);
/// Accuracies column of a split log, in order.
std::vector<double> read_split_accuracies(std::istream& is);

struct ParameterReportRow {
  FusionMode mode = FusionMode::alternative;
  std::size_t total = 0;
  long long delta_vs_rgb_only = 0;
};

/// count_parameters for every fusion mode of `config`.
std::vector<ParameterReportRow> report_parameters(const ModelConfig& config);
void write_parameter_report(std::ostream& os, std::span<const ParameterReportRow> rows);

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckResult {
  std::size_t checked = 0;
  GradCheckEntry worst;
};

/// |a − n| / max(|a|, |n|, floor)
double gradient_relative_error(double analytic, double numeric, double floor = 1e-6);

/// D=8, L=2, H=2, image 32, patch 16, N=1, alternative fusion.
ModelConfig tiny_gradcheck_config();

/// Compares every parameter gradient of the cross-entropy loss for one
/// pair and label against central differences with step `h`.
GradCheckResult check_gradients(const ModelConfig& config, const ImagePair& pair, std::size_t label,
                                std::uint64_t seed, double h = 1e-4);

/// Binary checkpoint: model config header plus every named tensor.
void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params,
                     const ModelConfig& config);

struct Checkpoint {
  ModelConfig config;
  EncoderParams params;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads into a model shaped by `target`. When only the head width
/// differs the backbone is kept and the head re-initialized from `rng`;
/// any other mismatch throws DimensionError.
EncoderParams load_checkpoint_for(const std::filesystem::path& path, const ModelConfig& target, Rng& rng,
                                  bool* head_reinitialized = nullptr);

void write_epoch_metrics(std::ostream& os, std::span<const EpochMetrics> epochs);
void write_confusion(std::ostream& os, const ConfusionMatrix& matrix);

/// Environment variable naming the default run directory.
inline constexpr const char* kRunDirEnv = "MFEVIT_RUN_DIR";
std::filesystem::path default_run_dir();

}  // namespace mfevit
