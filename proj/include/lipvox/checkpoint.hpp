#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace lipvox::ckpt {

// Major.minor; readers reject a different major.
inline constexpr const char* kFormatVersion = "1.0";

// Single-file container: magic, JSON header, then little-endian tensor
// blobs, each carrying its name, dtype tag, shape and a CRC-32 of its bytes.
struct Container {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const;
  void put(const std::string& name, const torch::Tensor& t);
};

// Written to a sibling temp file and renamed into place.
void write_container(const std::filesystem::path& path, Container c);

// Reads and validates everything before returning; any defect throws and
// nothing is handed back.
Container read_container(const std::filesystem::path& path);

// Parameters and buffers under "<prefix>.<name>".
void put_module(Container& c, const std::string& prefix, const torch::nn::Module& m);
// Copies into an existing module; every parameter and buffer must be present
// with a matching shape.
void get_module(const Container& c, const std::string& prefix, torch::nn::Module& m);
bool has_prefix(const Container& c, const std::string& prefix);

}  // namespace lipvox::ckpt
