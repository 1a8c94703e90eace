#include "s2v/tensor_bundle.hpp"

#include "s2v/geometry.hpp"
#include "s2v/grid_io.hpp"

#include <fstream>

namespace s2v {

namespace fs = std::filesystem;

const NamedTensor& TensorBundle::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw ValidationError("weights bundle lacks tensor " + name);
}

void write_tensor_bundle(const fs::path& path, const TensorBundle& bundle) {
  fs::path manifest_path = path;
  manifest_path.replace_extension(".json");
  fs::path blob_path = path;
  blob_path.replace_extension(".bin");

  nlohmann::json manifest;
  manifest["format"] = "f32le";
  manifest["blob"] = blob_path.filename().string();
  manifest["meta"] = bundle.meta;
  manifest["tensors"] = nlohmann::json::array();

  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot write " + blob_path.string());
  std::size_t offset = 0;
  for (const auto& t : bundle.tensors) {
    std::size_t count = 1;
    for (int d : t.shape) count *= static_cast<std::size_t>(d);
    if (count != t.values.size()) throw ValidationError("tensor " + t.name + " shape does not match values");
    manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    write_f32le(blob, t.values);
    offset += count;
  }

  std::ofstream out(manifest_path);
  if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
  out << manifest.dump(2) << '\n';
}

TensorBundle read_tensor_bundle(const fs::path& path) {
  fs::path manifest_path = path;
  manifest_path.replace_extension(".json");
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot read " + manifest_path.string());
  const auto manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "f32le") throw ValidationError("weights format must be f32le");

  const fs::path blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot read " + blob_path.string());

  TensorBundle bundle;
  bundle.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    NamedTensor t;
    t.name = entry.at("name").get<std::string>();
    t.shape = entry.at("shape").get<std::vector<int>>();
    std::size_t count = 1;
    for (int d : t.shape) {
      if (d < 0) throw ValidationError("negative tensor dimension in " + t.name);
      count *= static_cast<std::size_t>(d);
    }
    blob.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>() * sizeof(float)));
    t.values = read_f32le(blob, count);
    bundle.tensors.push_back(std::move(t));
  }
  return bundle;
}

}  // namespace s2v
