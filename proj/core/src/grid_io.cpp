#include "s2v/grid_io.hpp"

#include "s2v/geometry.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

namespace s2v {

namespace fs = std::filesystem;

namespace {

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffU) << 24) | ((v & 0xff00U) << 8) | ((v >> 8) & 0xff00U) | (v >> 24);
}

fs::path sidecar_path(const fs::path& p) {
  fs::path out = p;
  out.replace_extension(".json");
  return out;
}

fs::path blob_path(const fs::path& p) {
  fs::path out = p;
  out.replace_extension(".raw");
  return out;
}

}  // namespace

void write_f32le(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float f : values) {
      auto bits = byteswap32(std::bit_cast<std::uint32_t>(f));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
}

std::vector<float> read_f32le(std::istream& in, std::size_t count) {
  std::vector<float> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float))
    throw std::runtime_error("raw blob shorter than declared dims");
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : values) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
  return values;
}

void write_raw_grid(const fs::path& path, std::span<const int> dims, std::span<const double> spacing_mm,
                    std::span<const float> data) {
  const auto expected = std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                                        [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  if (expected != data.size()) throw ValidationError("grid data length does not match dims");
  if (dims.size() != spacing_mm.size()) throw ValidationError("dims and spacing rank differ");

  nlohmann::json side;
  side["dims"] = std::vector<int>(dims.begin(), dims.end());
  side["spacing_mm"] = std::vector<double>(spacing_mm.begin(), spacing_mm.end());
  side["dtype"] = "f32le";
  side["order"] = "x-fastest";

  std::ofstream js(sidecar_path(path));
  if (!js) throw std::runtime_error("cannot write " + sidecar_path(path).string());
  js << side.dump(2) << '\n';

  std::ofstream raw(blob_path(path), std::ios::binary);
  if (!raw) throw std::runtime_error("cannot write " + blob_path(path).string());
  write_f32le(raw, data);
}

RawGrid read_raw_grid(const fs::path& path) {
  std::ifstream js(sidecar_path(path));
  if (!js) throw std::runtime_error("cannot read " + sidecar_path(path).string());
  const auto side = nlohmann::json::parse(js);
  if (side.value("dtype", "") != "f32le") throw ValidationError("unsupported dtype");
  if (side.value("order", "") != "x-fastest") throw ValidationError("unsupported order");

  RawGrid grid;
  grid.dims = side.at("dims").get<std::vector<int>>();
  grid.spacing_mm = side.at("spacing_mm").get<std::vector<double>>();
  if (grid.dims.size() != grid.spacing_mm.size()) throw ValidationError("dims and spacing rank differ");
  std::size_t count = 1;
  for (int d : grid.dims) {
    if (d <= 0) throw ValidationError("dims must be positive");
    count *= static_cast<std::size_t>(d);
  }
  std::ifstream raw(blob_path(path), std::ios::binary);
  if (!raw) throw std::runtime_error("cannot read " + blob_path(path).string());
  grid.data = read_f32le(raw, count);
  return grid;
}

}  // namespace s2v
