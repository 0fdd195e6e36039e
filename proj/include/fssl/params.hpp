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

#ifndef FSSL_PARAMS_HPP_
#define FSSL_PARAMS_HPP_

#include <string>
#include <vector>

#include <torch/torch.h>

namespace fssl {

struct NamedTensor {
  std::string name;
  torch::Tensor value;
};

// Ordered parameter (and buffer) list of a model. Order follows
// torch::nn::Module::named_parameters() then named_buffers().
using ModelParams = std::vector<NamedTensor>;

// Detached deep copy of a module's parameters and buffers.
ModelParams ExtractParams(const torch::nn::Module& module);

// Copies `params` into `module` in place. Names and shapes must match.
void LoadParams(torch::nn::Module& module, const ModelParams& params);

ModelParams CloneParams(const ModelParams& params);

// Returns an empty string when shapes agree, otherwise a description of the
// first mismatch.
std::string DescribeShapeMismatch(const ModelParams& a, const ModelParams& b);

// Concatenation of all tensors as one 1-D float64 tensor.
torch::Tensor Flatten(const ModelParams& params);

// Inverse of Flatten, using `like` for names, shapes and dtypes.
ModelParams Unflatten(const torch::Tensor& flat, const ModelParams& like);

std::int64_t NumElements(const ModelParams& params);

bool BitwiseEqual(const ModelParams& a, const ModelParams& b);

}  // namespace fssl

#endif  // FSSL_PARAMS_HPP_
