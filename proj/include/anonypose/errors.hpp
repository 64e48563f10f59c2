/* Copyright 2026 The AnonyPose Authors.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace anonypose {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Out-of-range or otherwise invalid operator parameter.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Tensor or image dimensions that do not satisfy an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Malformed input data: annotation files, images, sidecars.
class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Invalid experiment configuration; `field` names the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// A loss evaluated to a non-finite value during optimization.
class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

}  // namespace anonypose
