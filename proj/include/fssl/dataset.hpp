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

#ifndef FSSL_DATASET_HPP_
#define FSSL_DATASET_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace fssl::data {

struct DatasetSpec {
  std::string source = "synthetic";  // "synthetic" | "cifar10-dir"
  std::string path;                  // cifar10-dir only
  int image_size = 32;
  int n_classes = 8;                 // synthetic only; CIFAR-10 has 10
  int train_per_class = 500;         // synthetic only
  int test_per_class = 100;          // synthetic only
  std::vector<int> pretrain_classes;    // empty: all classes
  std::vector<int> downstream_classes;  // empty: all classes
  int max_pretrain = 5000;
  int max_downstream_train = 5000;
  int max_test = 10000;
  double label_fraction = 0.1;
  std::uint64_t seed = 0;

  void Validate() const;
};

struct Dataset {
  torch::Tensor images;  // [N, 3, H, W] float32 in [0, 1]
  torch::Tensor labels;  // [N] int64

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
  Dataset Select(const std::vector<int64_t>& indices) const;
};

struct DatasetBundle {
  Dataset pretrain;             // original class ids
  Dataset downstream_train;     // labels remapped to 0..K-1
  Dataset downstream_labeled;   // label_fraction subset of downstream_train
  Dataset downstream_unlabeled; // downstream_train minus the labeled subset
  Dataset downstream_test;      // labels remapped to 0..K-1
  std::vector<int> downstream_classes;  // original id of each downstream label
  std::string checksum;         // of the raw train + test arrays
  std::string source;
};

// Raw labelled arrays straight from the source.
struct RawSplit {
  Dataset train, test;
  int n_classes = 0;
};

// Class c: a Gaussian blob whose shape is c % 4 (round, wide, tall, twin)
// and whose hue is c / n_classes, over a random low-frequency texture.
RawSplit GenerateSynthetic(const DatasetSpec& spec);

// CIFAR-10 binary version: data_batch_{1..5}.bin and test_batch.bin.
RawSplit LoadCifar10Dir(const std::string& dir);

DatasetBundle LoadDataset(const DatasetSpec& spec);

// FNV-1a 64 over the float32 image bytes followed by the int64 labels.
std::string Checksum(const Dataset& d);

std::vector<int64_t> LabelHistogram(const torch::Tensor& labels, int n_classes);

struct PatchBaselineConfig {
  int size = 4;
  std::string corner = "bottom_right";  // top_left | top_right | bottom_left | bottom_right
  std::array<double, 3> color = {1.0, 1.0, 1.0};

  void Validate(int image_size) const;
};

// Stamps a solid square into a [3,H,W] or [N,3,H,W] tensor.
torch::Tensor PatchTrigger(const torch::Tensor& images, const PatchBaselineConfig& config);

}  // namespace fssl::data

#endif  // FSSL_DATASET_HPP_
