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

#include "mfevit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mfevit/errors.hpp"
#include "mfevit/kernels.hpp"

namespace mfevit {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<Impl>()) {
  for (std::size_t extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> values(numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::size() const { return impl_ ? impl_->data.size() : 0; }

std::span<double> Tensor::data() {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->data;
}

std::span<const double> Tensor::data() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->data;
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) needs a rank-2 tensor, got " + shape_str(shape()));
  return impl_->data[row * impl_->shape[1] + col];
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor " + shape_str(shape()) + " has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::accumulate_grad(std::span<const double> delta) const {
  auto g = mutable_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

void Tensor::zero_grad() const {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return Tensor(shape(), impl_->data, impl_->requires_grad); }

void Tape::record(Tensor& output, std::vector<Tensor> inputs, BackwardFn backward) {
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  output.set_requires_grad(needs);
  if (!needs) return;
  entries_.push_back({std::move(inputs), output, std::move(backward)});
}

bool Tape::contains(const Tensor& t) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.output.same_storage(t); });
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  std::size_t end = entries_.size();
  while (end > 0 && !entries_[end - 1].output.same_storage(loss)) --end;
  if (end == 0) throw ContractError("backward() called on a tensor that is not on the tape");

  for (std::size_t i = 0; i < end; ++i) entries_[i].output.zero_grad();
  Tensor seed = entries_[end - 1].output;
  seed.mutable_grad()[0] = 1.0;
  for (std::size_t i = end; i-- > 0;) {
    Entry& e = entries_[i];
    if (e.output.has_grad()) e.backward(e.output);
  }
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void check_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
}

}  // namespace

void require_finite(const Tensor& t, const std::string& what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
  }
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::zeros({m, n});
  kernels::parallel::matmul_nn(a.data(), b.data(), out.data(), m, k, n);
  tape.record(out, {a, b}, [a, b, m, k, n](const Tensor& y) mutable {
    if (a.requires_grad()) kernels::parallel::matmul_nt(y.grad(), b.data(), a.mutable_grad(), m, n, k);
    if (b.requires_grad()) kernels::parallel::matmul_tn(a.data(), y.grad(), b.mutable_grad(), k, m, n);
  });
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.clone();
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  tape.record(out, {a, b}, [a, b](const Tensor& y) mutable {
    if (a.requires_grad()) a.accumulate_grad(y.grad());
    if (b.requires_grad()) b.accumulate_grad(y.grad());
  });
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.clone();
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  tape.record(out, {a, b}, [a, b](const Tensor& y) mutable {
    auto g = y.grad();
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.clone();
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  tape.record(out, {a, b}, [a, b](const Tensor& y) mutable {
    auto g = y.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      auto bd = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      auto ad = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
    }
  });
  return out;
}

Tensor add_bias(Tape& tape, const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match rows of " +
                         shape_str(x.shape()));
  }
  const std::size_t cols = bias.dim(0);
  const std::size_t rows = x.size() / cols;
  Tensor out = x.clone();
  auto o = out.data();
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < cols; ++j) o[r * cols + j] += bd[j];
  }
  tape.record(out, {x, bias}, [x, bias, rows, cols](const Tensor& y) mutable {
    if (x.requires_grad()) x.accumulate_grad(y.grad());
    if (bias.requires_grad()) {
      auto g = y.grad();
      auto gb = bias.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) gb[j] += g[r * cols + j];
      }
    }
  });
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Tensor out = x.clone();
  for (double& v : out.data()) v *= factor;
  tape.record(out, {x}, [x, factor](const Tensor& y) mutable {
    auto g = y.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
  return out;
}

Tensor transpose(Tape& tape, const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose: needs rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n, m});
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) o[j * m + i] = xd[i * n + j];
  }
  tape.record(out, {x}, [x, m, n](const Tensor& y) mutable {
    auto g = y.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    }
  });
  return out;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  tape.record(out, {x}, [x](const Tensor& y) mutable { x.accumulate_grad(y.grad()); });
  return out;
}

Tensor slice(Tape& tape, const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  check_axis(x, axis, "slice");
  if (length == 0 || start + length > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of bounds on axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  Tensor out = Tensor::zeros(shape);
  auto o = out.data();
  auto xd = x.data();
  for (std::size_t a = 0; a < s.outer; ++a) {
    const double* src = xd.data() + (a * s.length + start) * s.inner;
    std::copy(src, src + length * s.inner, o.data() + a * length * s.inner);
  }
  tape.record(out, {x}, [x, s, start, length](const Tensor& y) mutable {
    auto g = y.grad();
    auto gx = x.mutable_grad();
    for (std::size_t a = 0; a < s.outer; ++a) {
      double* dst = gx.data() + (a * s.length + start) * s.inner;
      const double* src = g.data() + a * length * s.inner;
      for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
    }
  });
  return out;
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  check_axis(parts[0], axis, "concat");
  Shape shape = parts[0].shape();
  shape[axis] = 0;
  for (const Tensor& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != shape.size()) {
      throw DimensionError("concat: rank mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    const std::size_t extent = probe[axis];
    probe[axis] = 0;
    Shape ref = shape;
    ref[axis] = 0;
    if (probe != ref) {
      throw DimensionError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    shape[axis] += extent;
  }
  const AxisSplit total = split_axis(shape, axis);
  Tensor out = Tensor::zeros(shape);
  auto o = out.data();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const Tensor& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.dim(axis);
    auto pd = p.data();
    for (std::size_t a = 0; a < total.outer; ++a) {
      std::copy(pd.data() + a * len * total.inner, pd.data() + (a + 1) * len * total.inner,
                o.data() + (a * total.length + offset) * total.inner);
    }
    offset += len;
  }
  tape.record(out, parts, [parts, offsets, total, axis](const Tensor& y) mutable {
    auto g = y.grad();
    for (std::size_t idx = 0; idx < parts.size(); ++idx) {
      const Tensor& p = parts[idx];
      if (!p.requires_grad()) continue;
      const std::size_t len = p.dim(axis);
      auto gp = p.mutable_grad();
      for (std::size_t a = 0; a < total.outer; ++a) {
        const double* src = g.data() + (a * total.length + offsets[idx]) * total.inner;
        double* dst = gp.data() + a * len * total.inner;
        for (std::size_t i = 0; i < len * total.inner; ++i) dst[i] += src[i];
      }
    }
  });
  return out;
}

Tensor mean_over_axis(Tape& tape, const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "mean_over_axis");
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out = Tensor::zeros(shape);
  auto o = out.data();
  auto xd = x.data();
  const double inv = 1.0 / static_cast<double>(s.length);
  for (std::size_t a = 0; a < s.outer; ++a) {
    for (std::size_t l = 0; l < s.length; ++l) {
      for (std::size_t i = 0; i < s.inner; ++i) o[a * s.inner + i] += xd[(a * s.length + l) * s.inner + i];
    }
  }
  for (double& v : o) v *= inv;
  tape.record(out, {x}, [x, s, inv](const Tensor& y) mutable {
    auto g = y.grad();
    auto gx = x.mutable_grad();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t l = 0; l < s.length; ++l) {
        for (std::size_t i = 0; i < s.inner; ++i) gx[(a * s.length + l) * s.inner + i] += g[a * s.inner + i] * inv;
      }
    }
  });
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor out = Tensor::scalar(total);
  tape.record(out, {x}, [x](const Tensor& y) mutable {
    const double g = y.grad()[0];
    for (double& v : x.mutable_grad()) v += g;
  });
  return out;
}

Tensor gelu(Tape& tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  kernels::parallel::gelu(x.data(), out.data());
  tape.record(out, {x}, [x](const Tensor& y) mutable {
    auto g = y.grad();
    auto gx = x.mutable_grad();
    auto xd = x.data();
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xd[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
  return out;
}

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  check_axis(x, axis, "softmax");
  require_finite(x, "softmax input");
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor out = Tensor::zeros(x.shape());
  if (s.inner == 1) {
    kernels::parallel::softmax_rows(x.data(), out.data(), s.outer, s.length);
  } else {
    auto xd = x.data();
    auto o = out.data();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const auto at = [&](std::size_t l) { return (a * s.length + l) * s.inner + i; };
        double mx = xd[at(0)];
        for (std::size_t l = 1; l < s.length; ++l) mx = std::max(mx, xd[at(l)]);
        double total = 0.0;
        for (std::size_t l = 0; l < s.length; ++l) {
          o[at(l)] = std::exp(xd[at(l)] - mx);
          total += o[at(l)];
        }
        for (std::size_t l = 0; l < s.length; ++l) o[at(l)] /= total;
      }
    }
  }
  Tensor probs = out;
  tape.record(out, {x}, [x, probs, s](const Tensor& y) mutable {
    auto g = y.grad();
    auto p = probs.data();
    auto gx = x.mutable_grad();
    for (std::size_t a = 0; a < s.outer; ++a) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const auto at = [&](std::size_t l) { return (a * s.length + l) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t l = 0; l < s.length; ++l) dot += g[at(l)] * p[at(l)];
        for (std::size_t l = 0; l < s.length; ++l) gx[at(l)] += p[at(l)] * (g[at(l)] - dot);
      }
    }
  });
  return out;
}

Tensor layernorm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0.0)) throw ContractError("layernorm: eps must be positive");
  if (x.rank() == 0 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.shape().back() ||
      bias.dim(0) != x.shape().back()) {
    throw DimensionError("layernorm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / cols;
  Tensor out = Tensor::zeros(x.shape());
  auto normalized = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  kernels::parallel::layernorm_rows(x.data(), gain.data(), bias.data(), out.data(), *normalized,
                                    *inv_std, rows, cols, eps);
  tape.record(out, {x, gain, bias},
              [x, gain, bias, normalized, inv_std, rows, cols](const Tensor& y) mutable {
                auto g = y.grad();
                const auto& xh = *normalized;
                if (gain.requires_grad()) {
                  auto gg = gain.mutable_grad();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < cols; ++j) gg[j] += g[r * cols + j] * xh[r * cols + j];
                }
                if (bias.requires_grad()) {
                  auto gb = bias.mutable_grad();
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < cols; ++j) gb[j] += g[r * cols + j];
                }
                if (x.requires_grad()) {
                  auto gx = x.mutable_grad();
                  auto gd = gain.data();
                  std::vector<double> dxh(cols);
                  for (std::size_t r = 0; r < rows; ++r) {
                    double mean_d = 0.0, mean_dx = 0.0;
                    for (std::size_t j = 0; j < cols; ++j) {
                      dxh[j] = g[r * cols + j] * gd[j];
                      mean_d += dxh[j];
                      mean_dx += dxh[j] * xh[r * cols + j];
                    }
                    mean_d /= static_cast<double>(cols);
                    mean_dx /= static_cast<double>(cols);
                    for (std::size_t j = 0; j < cols; ++j) {
                      gx[r * cols + j] +=
                          (*inv_std)[r] * (dxh[j] - mean_d - xh[r * cols + j] * mean_dx);
                    }
                  }
                }
              });
  return out;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::size_t label) {
  if (logits.rank() == 0 || logits.rank() > 2 || (logits.rank() == 2 && logits.dim(0) != 1)) {
    throw DimensionError("cross_entropy: logits must be a single row, got " + shape_str(logits.shape()));
  }
  const std::size_t n = logits.size();
  if (label >= n) {
    throw LabelError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(n) + " classes");
  }
  require_finite(logits, "cross_entropy logits");
  auto xd = logits.data();
  const double mx = *std::max_element(xd.begin(), xd.end());
  double total = 0.0;
  for (double v : xd) total += std::exp(v - mx);
  const double log_z = mx + std::log(total);
  Tensor out = Tensor::scalar(log_z - xd[label]);
  tape.record(out, {logits}, [logits, label, log_z](const Tensor& y) mutable {
    const double g = y.grad()[0];
    auto gx = logits.mutable_grad();
    auto xd = logits.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += g * (std::exp(xd[i] - log_z) - (i == label ? 1.0 : 0.0));
    }
  });
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout: rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double factor = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  for (double& m : *mask) m = keep(rng) ? factor : 0.0;
  Tensor out = x.clone();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= (*mask)[i];
  tape.record(out, {x}, [x, mask](const Tensor& y) mutable {
    auto g = y.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
  return out;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, Tensor x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_grad: step must be positive");
  Tensor grad = Tensor::zeros(x.shape());
  auto xd = x.data();
  auto gd = grad.data();
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double saved = xd[i];
    xd[i] = saved + h;
    const double up = f(x);
    xd[i] = saved - h;
    const double down = f(x);
    xd[i] = saved;
    gd[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace mfevit
