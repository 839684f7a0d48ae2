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

#include "mfevit/filter.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "mfevit/errors.hpp"
#include "mfevit/model_config.hpp"

namespace mfevit {

LabelState::LabelState(std::string id, int main_class)
    : sample_id(std::move(id)),
      original_main(main_class),
      current_label(static_cast<std::size_t>(main_class)) {
  if (main_class < 0 || main_class >= static_cast<int>(kNumExpressions)) {
    throw LabelError("expression " + std::to_string(main_class) + " of sample " + sample_id +
                     " is outside 0..5");
  }
}

int group_of(std::size_t label, std::size_t num_subclasses) {
  const std::size_t width = kNumExpressions * (num_subclasses + 1);
  if (label >= width) {
    throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(width) + ")");
  }
  if (label < kNumExpressions) return static_cast<int>(label);
  return static_cast<int>((label - kNumExpressions) / num_subclasses);
}

std::vector<std::size_t> group_members(int expression, std::size_t num_subclasses) {
  if (expression < 0 || expression >= static_cast<int>(kNumExpressions)) {
    throw LabelError("expression " + std::to_string(expression) + " is outside 0..5");
  }
  std::vector<std::size_t> out{static_cast<std::size_t>(expression)};
  const std::size_t base = kNumExpressions + static_cast<std::size_t>(expression) * num_subclasses;
  for (std::size_t k = 0; k < num_subclasses; ++k) out.push_back(base + k);
  return out;
}

std::size_t relabel(std::span<const double> probs, const LabelState& state, double delta,
                    std::size_t num_subclasses) {
  const std::size_t width = kNumExpressions * (num_subclasses + 1);
  if (probs.size() != width) {
    throw DimensionError("relabel: expected " + std::to_string(width) + " probabilities, got " +
                         std::to_string(probs.size()));
  }
  double total = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0) throw NumericError("relabel: invalid probability for " + state.sample_id);
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw NumericError("relabel: probabilities of " + state.sample_id + " sum to " + std::to_string(total));
  }
  if (group_of(state.current_label, num_subclasses) != state.original_main) {
    throw BookkeepingError("sample " + state.sample_id + " holds label " +
                           std::to_string(state.current_label) + " outside its expression group");
  }

  double p_max = probs[0];
  for (double p : probs) p_max = std::max(p_max, p);
  const double p_gt = probs[state.current_label];
  if (!(p_max - p_gt > delta)) return state.current_label;

  // Strict comparisons over ascending indices keep the lowest index on ties.
  const auto members = group_members(state.original_main, num_subclasses);
  std::size_t first = members[0];
  for (std::size_t idx : members) {
    if (probs[idx] > probs[first]) first = idx;
  }
  if (first != state.current_label) return first;
  if (members.size() < 2) return state.current_label;
  std::size_t second = members[0] == first ? members[1] : members[0];
  for (std::size_t idx : members) {
    if (idx != first && probs[idx] > probs[second]) second = idx;
  }
  return second;
}

FilterEpochResult apply_filter_epoch(std::vector<LabelState>& states,
                                     std::span<const std::vector<double>> probs, double delta,
                                     int epoch, int start_epoch, std::size_t num_subclasses) {
  if (epoch < 1) throw ContractError("apply_filter_epoch: epochs are counted from 1");
  if (probs.size() != states.size()) {
    throw BookkeepingError("apply_filter_epoch: " + std::to_string(states.size()) + " samples but " +
                           std::to_string(probs.size()) + " probability vectors");
  }
  FilterEpochResult result;
  if (epoch < start_epoch) return result;
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (probs[i].empty()) {
      throw BookkeepingError("no predicted probabilities for sample " + states[i].sample_id +
                             " in epoch " + std::to_string(epoch));
    }
  }
  for (std::size_t i = 0; i < states.size(); ++i) {
    LabelState& s = states[i];
    const std::size_t next = relabel(probs[i], s, delta, num_subclasses);
    if (next == s.current_label) continue;
    double p_max = 0.0;
    for (double p : probs[i]) p_max = std::max(p_max, p);
    RelabelEvent ev{epoch, s.sample_id, s.current_label, next, p_max, probs[i][s.current_label]};
    s.history.push_back(ev);
    s.current_label = next;
    result.events.push_back(std::move(ev));
    ++result.relabel_count;
  }
  return result;
}

int merge_predictions(std::span<const double> logits, std::size_t num_subclasses) {
  const std::size_t width = kNumExpressions * (num_subclasses + 1);
  if (logits.size() != width) {
    throw DimensionError("merge_predictions: expected " + std::to_string(width) + " logits, got " +
                         std::to_string(logits.size()));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return group_of(best, num_subclasses);
}

std::string relabel_log_header() { return "epoch\tsample_id\told_label\tnew_label\tp_max\tp_gt"; }

void write_relabel_events(std::ostream& os, std::span<const RelabelEvent> events) {
  const auto flags = os.flags();
  const auto prec = os.precision();
  os << std::setprecision(6) << std::fixed;
  for (const RelabelEvent& e : events) {
    os << e.epoch << '\t' << e.sample_id << '\t' << e.old_label << '\t' << e.new_label << '\t'
       << e.p_max << '\t' << e.p_gt << '\n';
  }
  os.flags(flags);
  os.precision(prec);
}

}  // namespace mfevit
