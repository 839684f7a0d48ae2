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

// Sample filtering over the C·(N+1) label space.
//
// Label layout: main classes occupy 0..5; expression e owns the N
// consecutive subclass slots 6 + e·N .. 6 + e·N + N − 1. A sample is only
// ever moved within the group of its annotated expression.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace mfevit {

struct RelabelEvent {
  int epoch = 0;
  std::string sample_id;
  std::size_t old_label = 0;
  std::size_t new_label = 0;
  double p_max = 0.0;
  double p_gt = 0.0;
};

struct LabelState {
  LabelState(std::string id, int main_class);

  std::string sample_id;
  int original_main = 0;
  std::size_t current_label = 0;
  std::vector<RelabelEvent> history;
};

/// Main class of `label`; throws LabelError outside [0, 6(N+1)).
int group_of(std::size_t label, std::size_t num_subclasses);

/// Labels owned by `expression`, main class first, ascending.
std::vector<std::size_t> group_members(int expression, std::size_t num_subclasses);

/// New label for one sample given its predicted probabilities.
///
/// Fires iff max(probs) − probs[current] > delta; the replacement is the
/// best in-group label, or the second best when the best is the current one.
std::size_t relabel(std::span<const double> probs, const LabelState& state, double delta,
                    std::size_t num_subclasses);

struct FilterEpochResult {
  std::size_t relabel_count = 0;
  std::vector<RelabelEvent> events;
};

/// Applies relabel() to every state (probs aligned by index) once `epoch`
/// reaches `start_epoch`, appending history for each change.
FilterEpochResult apply_filter_epoch(std::vector<LabelState>& states,
                                     std::span<const std::vector<double>> probs, double delta,
                                     int epoch, int start_epoch, std::size_t num_subclasses);

/// Argmax over all logits (lowest index on ties), mapped to its main class.
int merge_predictions(std::span<const double> logits, std::size_t num_subclasses);

/// One tab-separated line per event: epoch, sample_id, old, new, P_max, P_gt.
void write_relabel_events(std::ostream& os, std::span<const RelabelEvent> events);
std::string relabel_log_header();

}  // namespace mfevit
