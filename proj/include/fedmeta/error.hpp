// Copyright 2026 The fedmeta Authors. All Rights Reserved.
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

namespace fedmeta {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, dimension mismatch or violated precondition.
/// The CLI maps this to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A NaN/Inf appeared during loss or derivative evaluation.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, long sample_index = -1)
      : Error(what), sample_index_(sample_index) {}

  /// Index of the offending sample within its batch, or -1 if unknown.
  long sample_index() const noexcept { return sample_index_; }

 private:
  long sample_index_;
};

/// Client/server payloads that do not fit together.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Malformed dataset file; the message names the offending user.
class IngestionError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedmeta
