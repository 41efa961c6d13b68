// Copyright 2026 The CTS Authors.
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

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cts {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or command-line input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A dataset record that could not be decoded. Carries the 1-based line.
class DatasetError : public Error {
 public:
  DatasetError(std::size_t line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

enum class BackendErrorKind {
  kTransport,       // endpoint unreachable, 5xx, timeouts; retriable
  kProtocol,        // malformed or short response; not retriable
  kInvalidRequest,  // request violates the backend contract
  kUnknownToken,    // text outside a closed vocabulary
};

class BackendError : public Error {
 public:
  BackendError(BackendErrorKind kind, const std::string& message)
      : Error(message), kind_(kind) {}

  BackendErrorKind kind() const noexcept { return kind_; }
  bool retriable() const noexcept { return kind_ == BackendErrorKind::kTransport; }

 private:
  BackendErrorKind kind_;
};

}  // namespace cts
