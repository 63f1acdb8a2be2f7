/*
 * Copyright 2026 The drupi Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace drupi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes. Carries the tape node id when raised by a tape.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what, std::int64_t node = -1)
      : Error(node >= 0 ? "node " + std::to_string(node) + ": " + what : what),
        node_(node) {}
  std::int64_t node() const noexcept { return node_; }

 private:
  std::int64_t node_;
};

/// NaN or Inf produced by a tape node.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::int64_t node)
      : Error("node " + std::to_string(node) + ": " + what), node_(node) {}
  std::int64_t node() const noexcept { return node_; }

 private:
  std::int64_t node_;
};

/// Malformed file. `offset` is the byte position where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Invalid experiment configuration. `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : Error(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Precondition or argument violation that is not a shape problem.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace drupi
