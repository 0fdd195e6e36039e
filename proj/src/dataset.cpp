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

#include "fssl/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <numbers>
#include <set>
#include <sstream>

#include "fssl/color_space.hpp"
#include "fssl/errors.hpp"
#include "fssl/rng.hpp"

namespace fssl::data {
namespace fs = std::filesystem;

void DatasetSpec::Validate() const {
  Require(source == "synthetic" || source == "cifar10-dir",
          "dataset.source must be 'synthetic' or 'cifar10-dir', got '" + source + "'");
  Require(image_size >= 11, "dataset.image_size must be >= 11");
  if (source == "synthetic") {
    Require(n_classes >= 2, "dataset.n_classes must be >= 2");
    Require(train_per_class >= 1 && test_per_class >= 1, "dataset per-class counts must be positive");
  } else {
    Require(image_size == 32, "cifar10-dir images are 32x32");
  }
  Require(label_fraction > 0.0 && label_fraction <= 1.0, "dataset.label_fraction must lie in (0, 1]");
  Require(max_pretrain >= 1 && max_downstream_train >= 1 && max_test >= 1, "dataset caps must be positive");
}

Dataset Dataset::Select(const std::vector<int64_t>& indices) const {
  const auto idx = torch::tensor(indices, torch::kLong);
  if (indices.empty()) {
    return {images.narrow(0, 0, 0).clone(), labels.narrow(0, 0, 0).clone()};
  }
  return {images.index_select(0, idx), labels.index_select(0, idx)};
}

namespace {

torch::Tensor Grid(int size, bool horizontal) {
  const auto r = torch::arange(size, torch::kFloat32);
  return horizontal ? r.view({1, size}).expand({size, size}) : r.view({size, 1}).expand({size, size});
}

torch::Tensor SyntheticImage(int label, int n_classes, int size, Rng& rng) {
  const double s = size;
  const auto xs = Grid(size, true), ys = Grid(size, false);

  // Background: muted base colour plus a random oriented sinusoid and noise.
  auto img = torch::empty({3, size, size});
  const double phi = rng.Uniform(0, std::numbers::pi);
  const double freq = rng.Uniform(1.5, 4.0) / s;
  const double phase = rng.Uniform(0, 2 * std::numbers::pi);
  const auto wave = torch::sin(2 * std::numbers::pi * freq * (xs * std::cos(phi) + ys * std::sin(phi)) + phase);
  for (int c = 0; c < 3; ++c) {
    const double base = rng.Uniform(0.25, 0.6);
    const double amp = rng.Uniform(0.04, 0.1);
    img[c] = base + amp * wave;
  }
  auto noise = torch::empty({3, size, size});
  {
    auto* p = noise.data_ptr<float>();
    for (int64_t i = 0; i < noise.numel(); ++i) p[i] = static_cast<float>(rng.Normal(0.0, 0.02));
  }
  img += noise;

  // Foreground blob.
  const double cx = rng.Uniform(0.35, 0.65) * s, cy = rng.Uniform(0.35, 0.65) * s;
  const double sigma = rng.Uniform(0.13, 0.18) * s;
  const double amp = rng.Uniform(0.85, 1.0);
  auto bump = [&](double x0, double y0, double sx, double sy) {
    return torch::exp(-0.5 * ((xs - x0).square() / (sx * sx) + (ys - y0).square() / (sy * sy)));
  };
  torch::Tensor mask;
  switch (label % 4) {
    case 0: mask = bump(cx, cy, sigma, sigma); break;
    case 1: mask = bump(cx, cy, 1.8 * sigma, 0.6 * sigma); break;
    case 2: mask = bump(cx, cy, 0.6 * sigma, 1.8 * sigma); break;
    default: {
      const double off = 0.2 * s;
      mask = torch::maximum(bump(cx - off / 2, cy - off / 2, 0.6 * sigma, 0.6 * sigma),
                            bump(cx + off / 2, cy + off / 2, 0.6 * sigma, 0.6 * sigma));
    }
  }
  mask = amp * mask;
  const double hue = std::fmod(static_cast<double>(label) / n_classes + rng.Uniform(-0.02, 0.02) + 1.0, 1.0);
  const auto rgb = color::HsvToRgb(torch::full({1, 1}, hue), torch::full({1, 1}, rng.Uniform(0.6, 0.9)),
                                   torch::full({1, 1}, rng.Uniform(0.7, 0.95)))
                       .view({3, 1, 1});
  img = img * (1 - mask) + rgb * mask;
  return img.clamp(0.0, 1.0);
}

Dataset MakeSplit(const DatasetSpec& spec, int per_class, Rng& rng) {
  const int64_t n = static_cast<int64_t>(per_class) * spec.n_classes;
  auto images = torch::empty({n, 3, spec.image_size, spec.image_size});
  auto labels = torch::empty({n}, torch::kLong);
  int64_t i = 0;
  for (int k = 0; k < per_class; ++k) {
    for (int c = 0; c < spec.n_classes; ++c, ++i) {
      images[i] = SyntheticImage(c, spec.n_classes, spec.image_size, rng);
      labels[i] = c;
    }
  }
  return {images, labels};
}

void ReadCifarFile(const fs::path& file, std::vector<torch::Tensor>& images, std::vector<int64_t>& labels) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 batch file '" + file.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw IoError("corrupt CIFAR-10 batch file '" + file.string() + "': size " + std::to_string(bytes.size()) +
                  " is not a multiple of " + std::to_string(kRecord));
  }
  const std::size_t n = bytes.size() / kRecord;
  auto raw = torch::empty({static_cast<int64_t>(n), 3, 32, 32}, torch::kUInt8);
  auto* dst = raw.data_ptr<uint8_t>();
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char label = bytes[r * kRecord];
    if (label > 9) {
      throw IoError("corrupt CIFAR-10 batch file '" + file.string() + "': label " + std::to_string(label) +
                    " at record " + std::to_string(r));
    }
    labels.push_back(label);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(r * kRecord + 1), kRecord - 1, dst + r * (kRecord - 1));
  }
  images.push_back(raw.to(torch::kFloat32) / 255.0);
}

// Shuffled indices of `labels` whose value is in `classes`.
std::vector<int64_t> IndicesOf(const torch::Tensor& labels, const std::set<int>& classes, Rng& rng) {
  std::vector<int64_t> out;
  const auto* l = labels.data_ptr<int64_t>();
  for (int64_t i = 0; i < labels.size(0); ++i) {
    if (classes.count(static_cast<int>(l[i]))) out.push_back(i);
  }
  rng.Shuffle(out);
  return out;
}

Dataset Remap(Dataset d, const std::vector<int>& classes) {
  auto mapped = torch::empty_like(d.labels);
  for (int64_t i = 0; i < d.labels.size(0); ++i) {
    const auto c = d.labels[i].item<int64_t>();
    mapped[i] = static_cast<int64_t>(std::find(classes.begin(), classes.end(), c) - classes.begin());
  }
  d.labels = mapped;
  return d;
}

std::vector<int> AllClasses(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

RawSplit GenerateSynthetic(const DatasetSpec& spec) {
  spec.Validate();
  Rng rng(DeriveSeed(spec.seed, {Tag(Stream::kData)}));
  RawSplit out;
  out.n_classes = spec.n_classes;
  out.train = MakeSplit(spec, spec.train_per_class, rng);
  out.test = MakeSplit(spec, spec.test_per_class, rng);
  return out;
}

RawSplit LoadCifar10Dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("CIFAR-10 directory '" + dir + "' does not exist");
  RawSplit out;
  out.n_classes = 10;
  for (bool train : {true, false}) {
    std::vector<torch::Tensor> images;
    std::vector<int64_t> labels;
    if (train) {
      for (int b = 1; b <= 5; ++b) ReadCifarFile(fs::path(dir) / ("data_batch_" + std::to_string(b) + ".bin"), images, labels);
    } else {
      ReadCifarFile(fs::path(dir) / "test_batch.bin", images, labels);
    }
    Dataset d{torch::cat(images), torch::tensor(labels, torch::kLong)};
    (train ? out.train : out.test) = d;
  }
  return out;
}

std::string Checksum(const Dataset& d) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const torch::Tensor& t) {
    const auto c = t.contiguous();
    const auto* bytes = static_cast<const unsigned char*>(c.data_ptr());
    const std::size_t n = static_cast<std::size_t>(c.numel()) * c.element_size();
    for (std::size_t i = 0; i < n; ++i) h = (h ^ bytes[i]) * 1099511628211ULL;
  };
  mix(d.images.to(torch::kFloat32));
  mix(d.labels.to(torch::kLong));
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::vector<int64_t> LabelHistogram(const torch::Tensor& labels, int n_classes) {
  std::vector<int64_t> hist(static_cast<std::size_t>(n_classes), 0);
  const auto l = labels.to(torch::kLong).contiguous();
  for (int64_t i = 0; i < l.numel(); ++i) {
    const auto c = l.data_ptr<int64_t>()[i];
    Require(c >= 0 && c < n_classes, "LabelHistogram: label out of range");
    ++hist[static_cast<std::size_t>(c)];
  }
  return hist;
}

DatasetBundle LoadDataset(const DatasetSpec& spec) {
  spec.Validate();
  const RawSplit raw = spec.source == "synthetic" ? GenerateSynthetic(spec) : LoadCifar10Dir(spec.path);
  const auto pre_classes = spec.pretrain_classes.empty() ? AllClasses(raw.n_classes) : spec.pretrain_classes;
  const auto down_classes = spec.downstream_classes.empty() ? AllClasses(raw.n_classes) : spec.downstream_classes;
  for (int c : pre_classes) Require(c >= 0 && c < raw.n_classes, "dataset.pretrain_classes: class out of range");
  for (int c : down_classes) Require(c >= 0 && c < raw.n_classes, "dataset.downstream_classes: class out of range");
  Require(down_classes.size() >= 2, "dataset.downstream_classes needs at least two classes");

  Rng rng(DeriveSeed(spec.seed, {Tag(Stream::kData), 1}));
  DatasetBundle b;
  b.source = spec.source;
  b.downstream_classes = down_classes;
  b.checksum = Checksum({torch::cat({raw.train.images, raw.test.images}), torch::cat({raw.train.labels, raw.test.labels})});

  // Pretraining images are taken first; downstream training images come
  // from what is left, so the two never share a sample.
  auto pre_idx = IndicesOf(raw.train.labels, {pre_classes.begin(), pre_classes.end()}, rng);
  if (static_cast<int>(pre_idx.size()) > spec.max_pretrain) pre_idx.resize(static_cast<std::size_t>(spec.max_pretrain));
  std::sort(pre_idx.begin(), pre_idx.end());
  b.pretrain = raw.train.Select(pre_idx);

  std::set<int64_t> used(pre_idx.begin(), pre_idx.end());
  std::vector<int64_t> down_idx;
  for (auto i : IndicesOf(raw.train.labels, {down_classes.begin(), down_classes.end()}, rng)) {
    if (!used.count(i)) down_idx.push_back(i);
  }
  if (static_cast<int>(down_idx.size()) > spec.max_downstream_train) {
    down_idx.resize(static_cast<std::size_t>(spec.max_downstream_train));
  }
  std::sort(down_idx.begin(), down_idx.end());
  b.downstream_train = Remap(raw.train.Select(down_idx), down_classes);

  auto test_idx = IndicesOf(raw.test.labels, {down_classes.begin(), down_classes.end()}, rng);
  if (static_cast<int>(test_idx.size()) > spec.max_test) test_idx.resize(static_cast<std::size_t>(spec.max_test));
  std::sort(test_idx.begin(), test_idx.end());
  b.downstream_test = Remap(raw.test.Select(test_idx), down_classes);

  // Stratified labelled subset, at least two samples per class.
  std::vector<int64_t> labeled, unlabeled;
  const int k = static_cast<int>(down_classes.size());
  for (int c = 0; c < k; ++c) {
    std::vector<int64_t> members;
    for (int64_t i = 0; i < b.downstream_train.size(); ++i) {
      if (b.downstream_train.labels[i].item<int64_t>() == c) members.push_back(i);
    }
    rng.Shuffle(members);
    const auto take = std::min<std::size_t>(
        members.size(), std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(spec.label_fraction * static_cast<double>(members.size())))));
    labeled.insert(labeled.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    unlabeled.insert(unlabeled.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(labeled.begin(), labeled.end());
  std::sort(unlabeled.begin(), unlabeled.end());
  b.downstream_labeled = b.downstream_train.Select(labeled);
  b.downstream_unlabeled = b.downstream_train.Select(unlabeled);
  return b;
}

void PatchBaselineConfig::Validate(int image_size) const {
  Require(size >= 1 && size <= image_size, "patch does not fit inside the image");
  Require(corner == "top_left" || corner == "top_right" || corner == "bottom_left" || corner == "bottom_right",
          "patch.corner must be one of top_left, top_right, bottom_left, bottom_right");
  for (double c : color) Require(c >= 0.0 && c <= 1.0, "patch.color entries must lie in [0, 1]");
}

torch::Tensor PatchTrigger(const torch::Tensor& images, const PatchBaselineConfig& config) {
  Require(images.dim() == 3 || images.dim() == 4, "PatchTrigger: expects [3,H,W] or [N,3,H,W]");
  const int64_t h = images.size(-2), w = images.size(-1);
  Require(config.size >= 1 && config.size <= h && config.size <= w, "PatchTrigger: patch out of bounds");
  config.Validate(static_cast<int>(std::min(h, w)));
  const int64_t y0 = config.corner.starts_with("top") ? 0 : h - config.size;
  const int64_t x0 = config.corner.ends_with("left") ? 0 : w - config.size;
  auto out = images.clone();
  for (int64_t c = 0; c < 3; ++c) {
    out.select(-3, c).narrow(-2, y0, config.size).narrow(-1, x0, config.size).fill_(config.color[static_cast<std::size_t>(c)]);
  }
  return out;
}

}  // namespace fssl::data
