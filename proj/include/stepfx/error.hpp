// Copyright 2026 The stepfx Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace stepfx {

// Error hierarchy. The CLI maps ValidationError to exit code 2 and
// ArtifactError to exit code 3; the HTTP service maps ValidationError to
// 400, NotFoundError to 404 and ConflictError to 409.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input. `field()` names the offending parameter or argument.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message),
        field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& message)
      : ValidationError("shape", message) {}
};

/// Missing, unreadable or corrupt files (datasets, model containers).
class ArtifactError : public Error {
 public:
  using Error::Error;
};

/// An operation whose precondition on current state does not hold
/// (effect reuse, undo on empty history, all effects used, busy session).
class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace stepfx
