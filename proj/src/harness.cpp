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

#include "mfevit/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <istream>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "mfevit/errors.hpp"
#include "mfevit/fusion.hpp"
#include "parse_util.hpp"

namespace mfevit {

namespace {

// Tags separating the random streams derived from one seed.
enum Stream : std::uint64_t {
  kInitStream = 1,
  kShuffleStream,
  kAugmentStream,
  kDropoutStream,
  kFoldStream,
  kSplitStream,
};

std::vector<double> softmax_values(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = std::exp(logits[i] - mx);
  for (double& v : p) v /= total;
  return p;
}

EncoderParams frozen_copy(const EncoderParams& params) {
  EncoderParams copy = params.clone();
  for (auto& nt : copy.named()) nt.tensor.set_requires_grad(false);
  return copy;
}

}  // namespace

// ---------------------------------------------------------------- optimizer

OptimizerState OptimizerState::create(std::span<const NamedTensor> params, const OptimizerConfig& config) {
  OptimizerState s;
  s.config = config;
  for (const auto& p : params) {
    s.first_moment.emplace_back(p.tensor.size(), 0.0);
    s.second_moment.emplace_back(p.tensor.size(), 0.0);
  }
  return s;
}

void adamw_step(std::span<const NamedTensor> params, OptimizerState& state) {
  const OptimizerConfig& c = state.config;
  if (!(c.learning_rate > 0.0)) throw ContractError("adamw_step: learning rate must be positive");
  if (params.size() != state.first_moment.size() || params.size() != state.second_moment.size()) {
    throw DimensionError("adamw_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i].tensor;
    if (state.first_moment[i].size() != t.size() || state.second_moment[i].size() != t.size()) {
      throw DimensionError("adamw_step: moment buffers do not match parameter " + params[i].name);
    }
    if (!t.has_grad()) continue;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NumericError("adamw_step: non-finite gradient in " + params[i].name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    auto w = p.data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const bool has = p.has_grad();
    const auto g = has ? p.grad() : std::span<const double>{};
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      w[j] -= c.learning_rate * c.weight_decay * w[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

// ---------------------------------------------------------------- folds

std::vector<std::string> FoldPlan::test_subjects(std::size_t fold) const {
  if (fold >= folds.size()) throw ContractError("fold index out of range");
  return folds[fold];
}

std::vector<std::string> FoldPlan::train_subjects(std::size_t fold) const {
  if (fold >= folds.size()) throw ContractError("fold index out of range");
  std::vector<std::string> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  return out;
}

FoldPlan make_folds(const std::vector<std::string>& subjects, long long k, Rng& rng) {
  if (k <= 0) throw ConfigError("make_folds: k must be positive, got " + std::to_string(k));
  if (static_cast<unsigned long long>(k) > subjects.size()) {
    throw ConfigError("make_folds: k = " + std::to_string(k) + " exceeds the " + std::to_string(subjects.size()) +
                      " subjects");
  }
  if (std::set<std::string>(subjects.begin(), subjects.end()).size() != subjects.size()) {
    throw ConfigError("make_folds: subject ids repeat");
  }
  std::vector<std::string> order = subjects;
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan;
  plan.folds.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t f = i % plan.folds.size();
    plan.folds[f].push_back(order[i]);
    plan.fold_of[order[i]] = f;
  }
  return plan;
}

// ---------------------------------------------------------------- config

std::vector<std::string> TrainConfig::problems() const {
  std::vector<std::string> out = model.problems();
  for (auto& p : augmentation.problems()) out.push_back(std::move(p));
  if (!(optimizer.learning_rate >= 0.0)) out.emplace_back("learning_rate must be non-negative");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) out.emplace_back("beta1 must lie in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) out.emplace_back("beta2 must lie in [0, 1)");
  if (!(optimizer.weight_decay >= 0.0)) out.emplace_back("weight_decay must be non-negative");
  if (!(optimizer.eps > 0.0)) out.emplace_back("adam_eps must be positive");
  if (batch_size == 0) out.emplace_back("batch_size must be positive");
  if (sf_start_epoch < 1) out.emplace_back("sf_start_epoch must be at least 1");
  if (!(init_std > 0.0)) out.emplace_back("init_std must be positive");
  if (cv_folds < 2) out.emplace_back("cv_folds must be at least 2");
  if (cv_repeats == 0) out.emplace_back("cv_repeats must be positive");
  if (jobs == 0) out.emplace_back("jobs must be positive");
  return out;
}

void TrainConfig::validate() const {
  const auto issues = problems();
  if (issues.empty()) return;
  std::string msg = "invalid config:";
  for (const auto& p : issues) msg += "\n  " + p;
  throw ConfigError(msg);
}

std::map<std::string, std::string> to_key_values(const TrainConfig& c) {
  using detail::format_double;
  auto kv = to_key_values(c.model);
  const AugmentationConfig& a = c.augmentation;
  kv["aug_enabled"] = a.enabled ? "true" : "false";
  kv["aug_flip_prob"] = format_double(a.flip_prob);
  kv["aug_erase_prob"] = format_double(a.erase_prob);
  kv["aug_erase_min_area"] = format_double(a.erase_min_area);
  kv["aug_erase_max_area"] = format_double(a.erase_max_area);
  kv["aug_jitter_brightness"] = format_double(a.jitter_brightness);
  kv["aug_jitter_contrast"] = format_double(a.jitter_contrast);
  kv["aug_jitter_saturation"] = format_double(a.jitter_saturation);
  kv["learning_rate"] = format_double(c.optimizer.learning_rate);
  kv["beta1"] = format_double(c.optimizer.beta1);
  kv["beta2"] = format_double(c.optimizer.beta2);
  kv["weight_decay"] = format_double(c.optimizer.weight_decay);
  kv["adam_eps"] = format_double(c.optimizer.eps);
  kv["epochs"] = std::to_string(c.epochs);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["sf_start_epoch"] = std::to_string(c.sf_start_epoch);
  kv["seed"] = std::to_string(c.seed);
  kv["init_std"] = format_double(c.init_std);
  kv["cv_folds"] = std::to_string(c.cv_folds);
  kv["cv_repeats"] = std::to_string(c.cv_repeats);
  kv["jobs"] = std::to_string(c.jobs);
  return kv;
}

void apply_key(TrainConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;
  using detail::parse_size;
  if (apply_model_key(c.model, key, value)) return;
  AugmentationConfig& a = c.augmentation;
  if (key == "aug_enabled") a.enabled = parse_bool(key, value);
  else if (key == "aug_flip_prob") a.flip_prob = parse_double(key, value);
  else if (key == "aug_erase_prob") a.erase_prob = parse_double(key, value);
  else if (key == "aug_erase_min_area") a.erase_min_area = parse_double(key, value);
  else if (key == "aug_erase_max_area") a.erase_max_area = parse_double(key, value);
  else if (key == "aug_jitter_brightness") a.jitter_brightness = parse_double(key, value);
  else if (key == "aug_jitter_contrast") a.jitter_contrast = parse_double(key, value);
  else if (key == "aug_jitter_saturation") a.jitter_saturation = parse_double(key, value);
  else if (key == "learning_rate") c.optimizer.learning_rate = parse_double(key, value);
  else if (key == "beta1") c.optimizer.beta1 = parse_double(key, value);
  else if (key == "beta2") c.optimizer.beta2 = parse_double(key, value);
  else if (key == "weight_decay") c.optimizer.weight_decay = parse_double(key, value);
  else if (key == "adam_eps") c.optimizer.eps = parse_double(key, value);
  else if (key == "epochs") c.epochs = parse_size(key, value);
  else if (key == "batch_size") c.batch_size = parse_size(key, value);
  else if (key == "sf_start_epoch") c.sf_start_epoch = static_cast<int>(parse_int(key, value));
  else if (key == "seed") c.seed = parse_size(key, value);
  else if (key == "init_std") c.init_std = parse_double(key, value);
  else if (key == "cv_folds") c.cv_folds = parse_size(key, value);
  else if (key == "cv_repeats") c.cv_repeats = parse_size(key, value);
  else if (key == "jobs") c.jobs = parse_size(key, value);
  else throw ConfigError("unknown key '" + key + "'");
}

namespace {

void throw_collected(const std::string& source, std::vector<std::string> problems, const TrainConfig& c) {
  for (auto& p : c.problems()) problems.push_back(std::move(p));
  if (problems.empty()) return;
  std::string msg = source + ": invalid config:";
  for (const auto& p : problems) msg += "\n  " + p;
  throw ConfigError(msg);
}

}  // namespace

TrainConfig parse_train_config(const std::string& text, const std::string& source) {
  TrainConfig c;
  std::vector<std::string> problems;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(where + "expected key = value");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      problems.push_back(where + "duplicate key '" + key + "'");
      continue;
    }
    try {
      apply_key(c, key, value);
    } catch (const ConfigError& e) {
      problems.push_back(where + e.what());
    }
  }
  throw_collected(source, std::move(problems), c);
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str(), path.string());
}

TrainConfig with_overrides(TrainConfig config, const std::vector<std::string>& assignments) {
  std::vector<std::string> problems;
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) {
      problems.push_back("override '" + a + "': expected key=value");
      continue;
    }
    try {
      apply_key(config, detail::trim(a.substr(0, eq)), detail::trim(a.substr(eq + 1)));
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    }
  }
  throw_collected("overrides", std::move(problems), config);
  return config;
}

std::string format_train_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [k, v] : to_key_values(config)) out += k + " = " + v + "\n";
  return out;
}

void save_train_config(const std::filesystem::path& path, const TrainConfig& config) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path.string());
  out << format_train_config(config);
  if (!out) throw IoError("failed writing config " + path.string());
}

// ---------------------------------------------------------------- training

TrainResult train_fold(const std::vector<ImagePair>& train, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw ContractError("train_fold: empty training set");
  const ModelConfig& model = config.model;
  const std::size_t n_sub = model.num_subclasses;

  TrainResult result;
  Rng init_rng(derive_seed(config.seed, {kInitStream}));
  result.params = init_params(model, init_rng, config.init_std);
  for (const auto& pair : train) result.labels.emplace_back(pair.sample_id, pair.expression);

  const auto named = result.params.named();
  OptimizerState optimizer = OptimizerState::create(named, config.optimizer);
  const bool frozen = config.optimizer.learning_rate == 0.0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t e = 1; e <= config.epochs; ++e) {
    const int epoch = static_cast<int>(e);
    Rng shuffle_rng(derive_seed(config.seed, {kShuffleStream, e}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::vector<std::vector<double>> probs(train.size());
    EpochMetrics metrics;
    metrics.epoch = epoch;
    double loss_total = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const LabelState& label = result.labels[idx];
        try {
          Rng aug_rng(derive_seed(config.seed, {kAugmentStream, idx, e}));
          const ImagePair pair = augment(train[idx], config.augmentation, aug_rng);
          Rng drop_rng(derive_seed(config.seed, {kDropoutStream, idx, e}));
          Tape tape;
          ForwardOptions options;
          options.training = true;
          options.rng = &drop_rng;
          const Tensor logits = forward_logits(tape, pair, result.params, model, options);
          const Tensor ce = cross_entropy(tape, logits, label.current_label);
          const double value = ce.item();
          if (!std::isfinite(value)) throw NumericError("non-finite loss");
          probs[idx] = softmax_values(logits.data());
          if (merge_predictions(logits.data(), n_sub) == train[idx].expression) ++correct;
          batch_loss += value * weight;
          loss_total += value;
          tape.backward(scale(tape, ce, weight));
        } catch (const NumericError& err) {
          throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(result.step_losses.size() + 1) + ", sample " +
                             train[idx].sample_id + " (label " + std::to_string(label.current_label) +
                             "): " + err.what());
        }
      }
      result.step_losses.push_back(batch_loss);
      if (!frozen) adamw_step(named, optimizer);
      result.params.zero_grad();
      ++metrics.steps;
    }

    if (n_sub > 0) {
      FilterEpochResult filtered =
          apply_filter_epoch(result.labels, probs, model.delta, epoch, config.sf_start_epoch, n_sub);
      metrics.relabeled = filtered.relabel_count;
      for (auto& ev : filtered.events) result.relabel_log.push_back(std::move(ev));
    }
    metrics.mean_loss = loss_total / static_cast<double>(train.size());
    metrics.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    for (const auto& l : result.labels) {
      if (l.current_label >= kNumExpressions) ++metrics.subclass_labels;
    }
    result.epochs.push_back(metrics);
    if (on_epoch) on_epoch(metrics);
  }
  return result;
}

// ---------------------------------------------------------------- evaluation

void ConfusionMatrix::add(int truth, int predicted) {
  const auto in_range = [](int c) { return c >= 0 && static_cast<std::size_t>(c) < kSize; };
  if (!in_range(truth) || !in_range(predicted)) {
    throw LabelError("confusion matrix: class pair (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                     ") outside 0..5");
  }
  ++counts_[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts_)
    for (std::size_t v : row) t += v;
  return t;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t i = 0; i < kSize; ++i) t += counts_[i][i];
  return t;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t t = total();
  return t == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(t);
}

std::array<double, ConfusionMatrix::kSize> ConfusionMatrix::per_class_accuracy() const {
  std::array<double, kSize> out{};
  for (std::size_t i = 0; i < kSize; ++i) {
    std::size_t row = 0;
    for (std::size_t v : counts_[i]) row += v;
    out[i] = row == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(counts_[i][i]) / static_cast<double>(row);
  }
  return out;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (std::size_t i = 0; i < kSize; ++i)
    for (std::size_t j = 0; j < kSize; ++j) counts_[i][j] += other.counts_[i][j];
  return *this;
}

std::vector<double> predict_probabilities(const EncoderParams& params, const ImagePair& pair,
                                          const ModelConfig& config) {
  const EncoderParams frozen = frozen_copy(params);
  Tape tape;
  return softmax_values(forward_logits(tape, pair, frozen, config).data());
}

Evaluation evaluate(const EncoderParams& params, const std::vector<ImagePair>& test, const ModelConfig& config) {
  if (test.empty()) throw ContractError("evaluate: empty test set");
  const EncoderParams frozen = frozen_copy(params);
  Evaluation ev;
  ev.predictions.reserve(test.size());
  for (const auto& pair : test) {
    Tape tape;
    const Tensor logits = forward_logits(tape, pair, frozen, config);
    const int predicted = merge_predictions(logits.data(), config.num_subclasses);
    ev.predictions.push_back(predicted);
    ev.matrix.add(pair.expression, predicted);
  }
  ev.accuracy = ev.matrix.accuracy();
  return ev;
}

// ---------------------------------------------------------------- cross-validation

CrossValidationResult cross_validate(const std::vector<ImagePair>& data, const TrainConfig& config,
                                     std::size_t k, std::size_t repeats, std::size_t jobs,
                                     const SplitCallback& on_split) {
  config.validate();
  if (repeats == 0) throw ConfigError("cross_validate: repeats must be positive");
  if (jobs == 0) throw ConfigError("cross_validate: jobs must be positive");
  std::vector<std::string> subjects;
  {
    std::set<std::string> seen;
    for (const auto& p : data)
      if (seen.insert(p.subject_id).second) subjects.push_back(p.subject_id);
  }
  if (k < 2) throw ConfigError("cross_validate: k must be at least 2");

  struct Job {
    std::size_t repeat, fold;
    std::vector<std::string> test_subjects;
  };
  std::vector<Job> work;
  for (std::size_t r = 0; r < repeats; ++r) {
    Rng fold_rng(derive_seed(config.seed, {kFoldStream, r}));
    const FoldPlan plan = make_folds(subjects, static_cast<long long>(k), fold_rng);
    for (std::size_t f = 0; f < plan.k(); ++f) work.push_back({r, f, plan.test_subjects(f)});
  }

  std::vector<SplitResult> results(work.size());
  std::mutex callback_mutex;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  const auto run_one = [&](const Job& job) {
    const std::set<std::string> test_set(job.test_subjects.begin(), job.test_subjects.end());
    std::vector<ImagePair> train, test;
    for (const auto& p : data) (test_set.count(p.subject_id) ? test : train).push_back(p);
    std::set<std::string> train_subjects;
    for (const auto& p : train) train_subjects.insert(p.subject_id);
    for (const auto& s : test_set) {
      if (train_subjects.count(s)) {
        throw BookkeepingError("split " + std::to_string(job.repeat) + "/" + std::to_string(job.fold) +
                               ": subject " + s + " appears in train and test");
      }
    }
    TrainConfig split_config = config;
    split_config.seed = derive_seed(config.seed, {kSplitStream, job.repeat, job.fold});
    const TrainResult trained = train_fold(train, split_config);
    const Evaluation ev = evaluate(trained.params, test, config.model);
    SplitResult s;
    s.repeat = job.repeat;
    s.fold = job.fold;
    s.test_subjects = job.test_subjects;
    s.train_size = train.size();
    s.test_size = test.size();
    s.relabeled = trained.relabel_log.size();
    s.accuracy = ev.accuracy;
    s.matrix = ev.matrix;
    return s;
  };

  const auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      try {
        results[i] = run_one(work[i]);
        if (on_split) {
          std::lock_guard lock(callback_mutex);
          on_split(results[i]);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const std::size_t threads = std::min(jobs, work.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  CrossValidationResult out;
  out.splits = std::move(results);
  double sum = 0.0;
  for (const auto& s : out.splits) {
    sum += s.accuracy;
    out.aggregate += s.matrix;
  }
  const double n = static_cast<double>(out.splits.size());
  out.mean_accuracy = sum / n;
  double ss = 0.0;
  for (const auto& s : out.splits) ss += (s.accuracy - out.mean_accuracy) * (s.accuracy - out.mean_accuracy);
  out.stddev_accuracy = out.splits.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  out.per_class_accuracy = out.aggregate.per_class_accuracy();
  return out;
}

void write_split_log(std::ostream& os, std::span<const SplitResult> splits) {
  os << "repeat\tfold\ttrain_size\ttest_size\trelabeled\taccuracy\ttest_subjects\n";
  for (const auto& s : splits) {
    std::string subjects;
    for (const auto& id : s.test_subjects) subjects += (subjects.empty() ? "" : ",") + id;
    os << s.repeat << '\t' << s.fold << '\t' << s.train_size << '\t' << s.test_size << '\t' << s.relabeled << '\t'
       << detail::format_double(s.accuracy) << '\t' << subjects << '\n';
  }
}

std::vector<double> read_split_accuracies(std::istream& is) {
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t column = std::string::npos;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, '\t');) cells.push_back(cell);
    if (column == std::string::npos) {
      const auto it = std::find(cells.begin(), cells.end(), "accuracy");
      if (it == cells.end()) throw ParseError("split log line " + std::to_string(line_no) + ": no accuracy column");
      column = static_cast<std::size_t>(it - cells.begin());
      continue;
    }
    if (column >= cells.size()) throw ParseError("split log line " + std::to_string(line_no) + ": too few fields");
    try {
      out.push_back(detail::parse_double("accuracy", cells[column]));
    } catch (const ConfigError& e) {
      throw ParseError("split log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------- parameters

std::vector<ParameterReportRow> report_parameters(const ModelConfig& config) {
  std::vector<ParameterReportRow> rows;
  ModelConfig c = config;
  c.fusion_mode = FusionMode::rgb_only;
  const auto base = static_cast<long long>(count_parameters(c).total);
  for (FusionMode mode : {FusionMode::rgb_only, FusionMode::depth_only, FusionMode::naive, FusionMode::alternative}) {
    c.fusion_mode = mode;
    const std::size_t total = count_parameters(c).total;
    rows.push_back({mode, total, static_cast<long long>(total) - base});
  }
  return rows;
}

void write_parameter_report(std::ostream& os, std::span<const ParameterReportRow> rows) {
  os << "fusion_mode\tparameters\tdelta_vs_rgb_only\n";
  for (const auto& r : rows) os << to_string(r.mode) << '\t' << r.total << '\t' << r.delta_vs_rgb_only << '\n';
}

// ---------------------------------------------------------------- gradient check

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 16;
  c.embed_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.mlp_ratio = 4;
  c.num_subclasses = 1;
  c.fusion_mode = FusionMode::alternative;
  return c;
}

GradCheckResult check_gradients(const ModelConfig& config, const ImagePair& pair, std::size_t label,
                                std::uint64_t seed, double h) {
  config.validate();
  if (config.dropout != 0.0) throw ConfigError("check_gradients: dropout must be 0");
  Rng rng(seed);
  EncoderParams params = init_params(config, rng, 0.02);
  // Move every tensor off its structured initial value (zero class token,
  // unit gains) so that no gradient is trivially zero.
  std::normal_distribution<double> jitter(0.0, 0.2);
  for (auto& nt : params.named())
    for (double& v : nt.tensor.data()) v += jitter(rng);

  const auto named = params.named();
  {
    Tape tape;
    const Tensor loss = cross_entropy(tape, forward_logits(tape, pair, params, config), label);
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& nt : named) {
    analytic.emplace_back(nt.tensor.grad().begin(), nt.tensor.grad().end());
    Tensor(nt.tensor).set_requires_grad(false);
  }
  const auto loss_value = [&] {
    Tape tape;
    return cross_entropy(tape, forward_logits(tape, pair, params, config), label).item();
  };

  GradCheckResult result;
  result.worst.relative_error = -1.0;
  for (std::size_t t = 0; t < named.size(); ++t) {
    Tensor p = named[t].tensor;
    auto w = p.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      w[j] = saved + h;
      const double up = loss_value();
      w[j] = saved - h;
      const double down = loss_value();
      w[j] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = gradient_relative_error(analytic[t][j], numeric);
      ++result.checked;
      if (err > result.worst.relative_error) result.worst = {named[t].name, j, analytic[t][j], numeric, err};
    }
  }
  for (auto nt : named) nt.tensor.set_requires_grad(true);
  return result;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'M', 'F', 'E', 'V', 'I', 'T', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFloat32 = 4;
constexpr std::uint8_t kFloat64 = 8;

// Little-endian host assumed; the format is little-endian on disk.
template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) throw IoError("checkpoint truncated reading " + what);
  return value;
}

std::string get_string(std::istream& is, const std::string& what) {
  const auto len = get<std::uint32_t>(is, what);
  if (len > (1u << 20)) throw IoError("checkpoint: implausible length for " + what);
  std::string s(len, '\0');
  if (len && !is.read(s.data(), len)) throw IoError("checkpoint truncated reading " + what);
  return s;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderParams& params, const ModelConfig& config) {
  audit_shapes(params, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  std::string header;
  for (const auto& [k, v] : to_key_values(config)) header += k + "=" + v + "\n";
  put_string(out, header);
  const auto named = params.named();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& nt : named) {
    put_string(out, nt.name);
    put(out, kFloat64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) put<std::uint64_t>(out, d);
    const auto data = nt.tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not a checkpoint");
  }
  if (const auto v = get<std::uint32_t>(in, "version"); v != kVersion) {
    throw IoError("checkpoint version " + std::to_string(v) + " is not supported");
  }
  Checkpoint ck;
  std::istringstream header(get_string(in, "header"));
  for (std::string line; std::getline(header, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || !apply_model_key(ck.config, line.substr(0, eq), line.substr(eq + 1))) {
      throw IoError("checkpoint header: bad entry '" + line + "'");
    }
  }
  ck.config.validate();
  Rng rng(0);
  ck.params = init_params(ck.config, rng);
  std::map<std::string, Tensor> by_name;
  for (const auto& nt : ck.params.named()) by_name.emplace(nt.name, nt.tensor);

  const auto groups = get<std::uint32_t>(in, "group count");
  std::set<std::string> loaded;
  for (std::uint32_t g = 0; g < groups; ++g) {
    const std::string name = get_string(in, "group name");
    const auto dtype = get<std::uint8_t>(in, name);
    if (dtype != kFloat32 && dtype != kFloat64) throw IoError("checkpoint: unknown dtype for " + name);
    const auto rank = get<std::uint32_t>(in, name);
    if (rank > 8) throw IoError("checkpoint: implausible rank for " + name);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(get<std::uint64_t>(in, name));
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint: unexpected tensor " + name);
    if (it->second.shape() != shape) {
      throw DimensionError("checkpoint: tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                           shape_str(it->second.shape()));
    }
    auto dst = it->second.data();
    if (dtype == kFloat64) {
      if (!in.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size_bytes()))) {
        throw IoError("checkpoint truncated in " + name);
      }
    } else {
      std::vector<float> tmp(dst.size());
      if (!in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * sizeof(float)))) {
        throw IoError("checkpoint truncated in " + name);
      }
      std::copy(tmp.begin(), tmp.end(), dst.begin());
    }
    loaded.insert(name);
  }
  for (const auto& [name, t] : by_name) {
    if (!loaded.count(name)) throw IoError("checkpoint: missing tensor " + name);
  }
  return ck;
}

EncoderParams load_checkpoint_for(const std::filesystem::path& path, const ModelConfig& target, Rng& rng,
                                  bool* head_reinitialized) {
  target.validate();
  Checkpoint ck = load_checkpoint(path);
  const ModelConfig& s = ck.config;
  const bool backbone_matches = s.image_size == target.image_size && s.patch_size == target.patch_size &&
                                s.embed_dim == target.embed_dim && s.num_layers == target.num_layers &&
                                s.num_heads == target.num_heads && s.mlp_ratio == target.mlp_ratio &&
                                s.num_streams() == target.num_streams();
  if (!backbone_matches) throw DimensionError("checkpoint " + path.string() + " does not match the model shape");
  const bool reinit = s.head_width() != target.head_width();
  if (reinit) reinit_head(ck.params, target, rng);
  if (head_reinitialized) *head_reinitialized = reinit;
  audit_shapes(ck.params, target);
  return ck.params;
}

// ---------------------------------------------------------------- run files

void write_epoch_metrics(std::ostream& os, std::span<const EpochMetrics> epochs) {
  os << "epoch\tsteps\tmean_loss\ttrain_accuracy\trelabeled\tsubclass_labels\n";
  for (const auto& m : epochs) {
    os << m.epoch << '\t' << m.steps << '\t' << detail::format_double(m.mean_loss) << '\t'
       << detail::format_double(m.train_accuracy) << '\t' << m.relabeled << '\t' << m.subclass_labels << '\n';
  }
}

void write_confusion(std::ostream& os, const ConfusionMatrix& matrix) {
  os << "truth\\predicted";
  for (std::size_t j = 0; j < ConfusionMatrix::kSize; ++j) os << '\t' << j;
  os << '\n';
  for (std::size_t i = 0; i < ConfusionMatrix::kSize; ++i) {
    os << i;
    for (std::size_t j = 0; j < ConfusionMatrix::kSize; ++j) os << '\t' << matrix.at(i, j);
    os << '\n';
  }
}

std::filesystem::path default_run_dir() {
  const char* env = std::getenv(kRunDirEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

}  // namespace mfevit
