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

#ifndef FSSL_IO_HPP_
#define FSSL_IO_HPP_

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "fssl/params.hpp"

namespace fssl::io {

// Checkpoint file: "FSSLCKPT", uint32 version, uint64 manifest length,
// manifest JSON (tensor names, shapes, byte offsets, user metadata), then
// the little-endian float32 blob.
inline constexpr char kCheckpointMagic[8] = {'F', 'S', 'S', 'L', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  nlohmann::json metadata = nlohmann::json::object();
};

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// 8-bit RGB PNG from a [3,H,W] tensor in [0,1].
void WritePng(const std::filesystem::path& path, const torch::Tensor& image);
torch::Tensor ReadPng(const std::filesystem::path& path);

// Clean | poisoned | 2x amplified residual, side by side.
torch::Tensor Triplet(const torch::Tensor& clean, const torch::Tensor& poisoned);

void WriteText(const std::filesystem::path& path, const std::string& text);
std::string ReadText(const std::filesystem::path& path);
void WriteJson(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json ReadJson(const std::filesystem::path& path);

// Appends one JSON record per line.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path, bool append = true);
  void Write(const nlohmann::json& record);

 private:
  std::ofstream out_;
};

std::vector<nlohmann::json> ReadJsonl(const std::filesystem::path& path);

}  // namespace fssl::io

#endif  // FSSL_IO_HPP_
