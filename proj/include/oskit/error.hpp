// Copyright 2026 The oskit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace oskit {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or matrix dimensions disagree with what an operation expects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A label outside the legal alphabet for the active loss or model.
class InvalidLabelError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or inconsistent input data (files or in-memory sets).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Binary file with an unexpected magic number or version.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Invalid or missing configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: NaN loss, failed factorization, degenerate samples.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver exceeded its iteration budget.
class ConvergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace oskit
