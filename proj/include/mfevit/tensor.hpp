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

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mfevit {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// A Tensor is a handle: copies alias the same storage, so a parameter
/// captured by an op and the same parameter held by the optimizer see one
/// buffer. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Standard normal entries scaled by `stddev`.
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<double> data();
  std::span<const double> data() const;
  double& operator[](std::size_t i) { return data()[i]; }
  double operator[](std::size_t i) const { return data()[i]; }
  /// Row-major element access for rank-2 tensors.
  double at(std::size_t row, std::size_t col) const;
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient buffer, allocated as zeros on first use. Const because the
  /// buffer belongs to the shared storage, not the handle.
  std::span<double> mutable_grad() const;
  void accumulate_grad(std::span<const double> delta) const;
  void zero_grad() const;

  /// Deep copy of shape and data; gradient not copied.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Records differentiable operations in execution order.
///
/// Entries are appended as ops run, so every entry's inputs were produced
/// by earlier entries or are leaves. backward() walks the list in reverse.
/// A tape and the tensors it references are not thread-safe; run one tape
/// per thread.
class Tape {
 public:
  /// Reads the gradient of `output` and accumulates into the inputs.
  using BackwardFn = std::function<void(const Tensor& output)>;

  /// Registers `output` as produced from `inputs`. Nothing is recorded when
  /// no input requires a gradient; the output then requires none either.
  void record(Tensor& output, std::vector<Tensor> inputs, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every leaf with requires_grad.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  bool contains(const Tensor& t) const;
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

// Differentiable primitives. Every op validates shapes and throws
// DimensionError naming the offending shapes. Broadcasting is limited to a
// per-row bias over the last axis.

/// [m×k] · [k×n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// Elementwise sum of equal shapes.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
/// a − b for equal shapes.
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
/// Elementwise product of equal shapes.
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// x[...×n] + bias[n] broadcast over leading axes.
Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias);
Tensor scale(Tape& tape, const Tensor& x, double factor);
/// Rank-2 transpose.
Tensor transpose(Tape& tape, const Tensor& x);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
/// Elements [start, start+length) along `axis`.
Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start,
             std::size_t length);
/// Concatenates along `axis`; all other extents must agree.
Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis);
/// Mean over `axis`, which is removed from the shape.
Tensor mean_over_axis(Tape& tape, const Tensor& x, std::size_t axis);
/// Sum of all elements as a scalar.
Tensor sum(Tape& tape, const Tensor& x);
/// Exact GELU, x·Φ(x).
Tensor gelu(Tape& tape, const Tensor& x);
/// Max-subtracted softmax along `axis`; throws NumericError on non-finite input.
Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis);
/// Normalizes the last axis, then applies gain and bias of that extent.
Tensor layernorm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-6);
/// −log softmax(logits)[label] as a scalar; logits must hold a single row.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::size_t label);
/// Inverted dropout; identity when rate is 0.
Tensor dropout(Tape& tape, const Tensor& x, double rate, std::mt19937_64& rng);

/// Central-difference estimate of df/dx, perturbing x in place and restoring it.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, Tensor x,
                              double h);

/// Throws NumericError when any value is NaN or infinite.
void require_finite(const Tensor& t, const std::string& what);

}  // namespace mfevit
