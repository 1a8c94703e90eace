#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace s2v {

// Weights file: <stem>.json manifest {"format": "f32le", "tensors": [{"name", "shape", "offset"}]}
// plus <stem>.bin holding the tensors back to back.
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

struct TensorBundle {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor& get(const std::string& name) const;
};

void write_tensor_bundle(const std::filesystem::path& path, const TensorBundle& bundle);
TensorBundle read_tensor_bundle(const std::filesystem::path& path);

}  // namespace s2v
