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

#include "fssl/params.hpp"

#include <sstream>

#include "fssl/errors.hpp"

namespace fssl {

ModelParams ExtractParams(const torch::nn::Module& module) {
  ModelParams out;
  for (const auto& p : module.named_parameters(/*recurse=*/true)) {
    out.push_back({p.key(), p.value().detach().clone()});
  }
  for (const auto& b : module.named_buffers(/*recurse=*/true)) {
    out.push_back({b.key(), b.value().detach().clone()});
  }
  return out;
}

void LoadParams(torch::nn::Module& module, const ModelParams& params) {
  torch::NoGradGuard no_grad;
  auto named = module.named_parameters(true);
  auto buffers = module.named_buffers(true);
  Require(named.size() + buffers.size() == params.size(),
          "LoadParams: parameter count mismatch");
  std::size_t i = 0;
  auto copy_into = [&](const std::string& key, torch::Tensor& dst) {
    const NamedTensor& src = params[i++];
    if (src.name != key || !src.value.sizes().equals(dst.sizes())) {
      throw ContractViolation("LoadParams: mismatch at '" + key + "' vs '" +
                              src.name + "'");
    }
    dst.copy_(src.value);
  };
  for (auto& p : named) copy_into(p.key(), p.value());
  for (auto& b : buffers) copy_into(b.key(), b.value());
}

ModelParams CloneParams(const ModelParams& params) {
  ModelParams out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.value.detach().clone()});
  return out;
}

std::string DescribeShapeMismatch(const ModelParams& a, const ModelParams& b) {
  if (a.size() != b.size()) {
    std::ostringstream os;
    os << "tensor count " << b.size() << " != expected " << a.size();
    return os.str();
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !a[i].value.sizes().equals(b[i].value.sizes())) {
      std::ostringstream os;
      os << "tensor '" << b[i].name << "' shape " << b[i].value.sizes()
         << " != expected '" << a[i].name << "' " << a[i].value.sizes();
      return os.str();
    }
  }
  return {};
}

torch::Tensor Flatten(const ModelParams& params) {
  std::vector<torch::Tensor> parts;
  parts.reserve(params.size());
  for (const auto& p : params) parts.push_back(p.value.reshape({-1}).to(torch::kFloat64));
  if (parts.empty()) return torch::zeros({0}, torch::kFloat64);
  return torch::cat(parts);
}

ModelParams Unflatten(const torch::Tensor& flat, const ModelParams& like) {
  Require(flat.dim() == 1 && flat.numel() == NumElements(like),
          "Unflatten: element count mismatch");
  ModelParams out;
  std::int64_t offset = 0;
  for (const auto& p : like) {
    const std::int64_t n = p.value.numel();
    out.push_back({p.name, flat.slice(0, offset, offset + n)
                               .reshape(p.value.sizes())
                               .to(p.value.scalar_type())
                               .clone()});
    offset += n;
  }
  return out;
}

std::int64_t NumElements(const ModelParams& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

bool BitwiseEqual(const ModelParams& a, const ModelParams& b) {
  if (!DescribeShapeMismatch(a, b).empty()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].value.scalar_type() != b[i].value.scalar_type()) return false;
    if (!torch::equal(a[i].value, b[i].value)) return false;
  }
  return true;
}

}  // namespace fssl
