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

// Dense row-major kernels behind the tensor ops.
//
// Two implementations share one signature set. `serial` is the plain loop
// reference kept for tests and benchmarks; `parallel` distributes rows over
// OpenMP threads. Every output element is accumulated in the same order in
// both, so results are bitwise identical for a given input.

#include <cstddef>
#include <span>

namespace mfevit::kernels {

namespace serial {

/// C[m×n] += A[m×k] · B[k×n]
void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
/// C[m×n] += Aᵀ · B with A stored [k×m], B [k×n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
/// C[m×n] += A · Bᵀ with A [m×k], B stored [n×k]
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);

void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                  std::size_t cols);

/// Writes the affine output plus the normalized values and per-row 1/σ needed for backward.
void layernorm_rows(std::span<const double> in, std::span<const double> gain,
                    std::span<const double> bias, std::span<double> out,
                    std::span<double> normalized, std::span<double> inv_std, std::size_t rows,
                    std::size_t cols, double eps);

void gelu(std::span<const double> in, std::span<double> out);

}  // namespace serial

namespace parallel {

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void softmax_rows(std::span<const double> in, std::span<double> out, std::size_t rows,
                  std::size_t cols);
void layernorm_rows(std::span<const double> in, std::span<const double> gain,
                    std::span<const double> bias, std::span<double> out,
                    std::span<double> normalized, std::span<double> inv_std, std::size_t rows,
                    std::size_t cols, double eps);
void gelu(std::span<const double> in, std::span<double> out);

}  // namespace parallel

/// Number of OpenMP threads available to the parallel kernels (1 without OpenMP).
int max_threads();

}  // namespace mfevit::kernels
