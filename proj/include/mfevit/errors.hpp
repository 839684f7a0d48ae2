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

#include <stdexcept>
#include <string>

namespace mfevit {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes or image sizes that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, unnormalized probability vectors, diverging loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Label index outside the valid label space.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. calling backward on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent sample bookkeeping (missing probabilities, unknown ids).
class BookkeepingError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message carries the line number when known.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// File system or codec failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mfevit
