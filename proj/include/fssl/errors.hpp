/*
 * Copyright 2026 The fedssl-backdoor Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FSSL_ERRORS_HPP_
#define FSSL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace fssl {

// Raised when a caller breaks an operation's documented precondition.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class PartitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AggregationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite or exploding losses during any optimisation loop.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Wraps a failure inside an experiment stage with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline void Require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace fssl

#endif  // FSSL_ERRORS_HPP_
