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

#include "fssl/io.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include <png.h>

#include "fssl/errors.hpp"

namespace fssl::io {
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

void SaveCheckpoint(const fs::path& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["metadata"] = ckpt.metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  uint64_t offset = 0;
  for (const auto& [name, value] : ckpt.params) {
    const auto t = value.detach().to(torch::kFloat32).contiguous();
    manifest["tensors"].push_back({{"name", name}, {"shape", t.sizes().vec()}, {"offset", offset}});
    offset += static_cast<uint64_t>(t.numel()) * sizeof(float);
    blobs.push_back(t);
  }
  manifest["blob_bytes"] = offset;
  const std::string text = manifest.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
    const uint64_t len = text.size();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(len));
    for (const auto& t : blobs) {
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!out) throw IoError("short write to checkpoint '" + path.string() + "'");
  }
  fs::rename(tmp, path);
}

Checkpoint LoadCheckpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  uint32_t version = 0;
  uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw IoError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint '" + path.string() + "' has unsupported version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("checkpoint '" + path.string() + "' truncated in manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' has a corrupt manifest: " + e.what());
  }
  const auto blob_bytes = manifest.at("blob_bytes").get<uint64_t>();
  std::vector<char> blob(blob_bytes);
  in.read(blob.data(), static_cast<std::streamsize>(blob_bytes));
  if (!in) throw IoError("checkpoint '" + path.string() + "' truncated in tensor data");

  Checkpoint ckpt;
  ckpt.metadata = manifest.at("metadata");
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offset = entry.at("offset").get<uint64_t>();
    auto t = torch::empty(shape, torch::kFloat32);
    const auto bytes = static_cast<uint64_t>(t.numel()) * sizeof(float);
    if (offset + bytes > blob_bytes) throw IoError("checkpoint '" + path.string() + "' has an out-of-range tensor");
    std::memcpy(t.data_ptr(), blob.data() + offset, bytes);
    ckpt.params.push_back({entry.at("name").get<std::string>(), t});
  }
  return ckpt;
}

void WritePng(const fs::path& path, const torch::Tensor& image) {
  Require(image.dim() == 3 && image.size(0) == 3, "WritePng: expects [3,H,W]");
  const auto hwc = (image.detach().clamp(0, 1) * 255.0).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  const auto h = static_cast<png_uint_32>(hwc.size(0)), w = static_cast<png_uint_32>(hwc.size(1));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write PNG '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto* data = hwc.data_ptr<uint8_t>();
  for (png_uint_32 y = 0; y < h; ++y) png_write_row(png, data + static_cast<std::size_t>(y) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

torch::Tensor ReadPng(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "'");
  }
  img.format = PNG_FORMAT_RGB;
  auto hwc = torch::empty({static_cast<int64_t>(img.height), static_cast<int64_t>(img.width), 3}, torch::kUInt8);
  if (!png_image_finish_read(&img, nullptr, hwc.data_ptr<uint8_t>(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("corrupt PNG '" + path.string() + "'");
  }
  return hwc.permute({2, 0, 1}).to(torch::kFloat32) / 255.0;
}

torch::Tensor Triplet(const torch::Tensor& clean, const torch::Tensor& poisoned) {
  const auto residual = (2.0 * (poisoned - clean).abs()).clamp(0, 1);
  return torch::cat({clean, poisoned, residual}, 2);
}

void WriteText(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

std::string ReadText(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void WriteJson(const fs::path& path, const nlohmann::json& j) { WriteText(path, j.dump(2) + "\n"); }

nlohmann::json ReadJson(const fs::path& path) {
  try {
    return nlohmann::json::parse(ReadText(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

JsonlWriter::JsonlWriter(const fs::path& path, bool append) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw IoError("cannot open '" + path.string() + "'");
}

void JsonlWriter::Write(const nlohmann::json& record) {
  out_ << record.dump() << '\n';
  out_.flush();
}

std::vector<nlohmann::json> ReadJsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace fssl::io
