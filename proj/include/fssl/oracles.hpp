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

#ifndef FSSL_ORACLES_HPP_
#define FSSL_ORACLES_HPP_

#include <string>
#include <vector>

namespace fssl::oracle {

struct OracleResult {
  std::string name;
  bool passed = false;
  double error = 0.0;  // observed deviation from the reference
  double tolerance = 0.0;
  std::string detail;
};

// Recomputes library results with small, independent reference
// implementations (plain loops over doubles, exhaustive search) and
// reports the deviation of each.
std::vector<OracleResult> RunAll();

}  // namespace fssl::oracle

#endif  // FSSL_ORACLES_HPP_
