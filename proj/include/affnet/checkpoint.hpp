#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "affnet/image.hpp"
#include "affnet/network.hpp"

namespace affnet {

// Checkpoint layout: magic "AFNW", u32 format version, u32 manifest length,
// the UTF-8 JSON manifest (network spec plus named tensor shapes), then each
// tensor's raw little-endian float32 data in manifest order. Batch-norm
// running statistics are stored alongside the trainable parameters.
inline constexpr char kCheckpointMagic[4] = {'A', 'F', 'N', 'W'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path,
                            Network<float>& net) {
  nlohmann::json manifest;
  manifest["network"] = net.spec;
  nlohmann::json tensors = nlohmann::json::array();
  auto params = net.parameters();
  for (const auto& ref : params) {
    tensors.push_back({{"name", ref.name}, {"shape", ref.tensor->shape()}});
  }
  manifest["tensors"] = tensors;
  const std::string manifest_text = manifest.dump();

  std::vector<std::uint8_t> bytes;
  auto put_u32 = [&bytes](std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      bytes.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  };
  bytes.insert(bytes.end(), kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(kCheckpointVersion);
  put_u32(static_cast<std::uint32_t>(manifest_text.size()));
  bytes.insert(bytes.end(), manifest_text.begin(), manifest_text.end());
  for (const auto& ref : params) {
    const std::size_t off = bytes.size();
    const std::size_t len = ref.tensor->size() * 4;
    bytes.resize(off + len);
    std::memcpy(bytes.data() + off, ref.tensor->data(), len);
  }
  img::write_file_atomic(path, bytes.data(), bytes.size());
}

inline Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes = img::read_file(path);
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path.string());
  auto get_u32 = [&bytes](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
    return v;
  };
  if (get_u32(4) != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " +
                             path.string());
  const std::size_t manifest_len = get_u32(8);
  if (bytes.size() < 12 + manifest_len)
    throw std::runtime_error("truncated checkpoint: " + path.string());
  nlohmann::json manifest = nlohmann::json::parse(
      bytes.begin() + 12, bytes.begin() + 12 + static_cast<long>(manifest_len));

  NetworkSpec spec = manifest.at("network").get<NetworkSpec>();
  Network<float> net = build_network<float>(spec);
  auto params = net.parameters();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != params.size())
    throw std::runtime_error("checkpoint tensor list does not match spec");

  std::size_t offset = 12 + manifest_len;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = tensors[i];
    if (entry.at("name").get<std::string>() != params[i].name)
      throw std::runtime_error("checkpoint tensor order mismatch at " +
                               params[i].name);
    auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape != params[i].tensor->shape())
      throw std::runtime_error("checkpoint tensor shape mismatch at " +
                               params[i].name);
    const std::size_t len = params[i].tensor->size() * 4;
    if (offset + len > bytes.size())
      throw std::runtime_error("truncated checkpoint: " + path.string());
    std::memcpy(params[i].tensor->data(), bytes.data() + offset, len);
    offset += len;
  }
  if (offset != bytes.size())
    throw std::runtime_error("trailing bytes in checkpoint: " + path.string());
  return net;
}

}  // namespace affnet
