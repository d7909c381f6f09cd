#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dtwin/nn.hpp"
#include "dtwin/tensor.hpp"

namespace dtwin {

inline constexpr std::uint32_t kBundleFormatVersion = 1;

struct NamedArray {
  std::string name;
  std::string dtype = "f64";
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool trainable = true;
};

// File layout:
//   "DTWINBND" | u32 version | u64 header length | header JSON | f64 payload
//   | 32-byte SHA-256 of everything before it
// All integers and doubles little-endian. The header lists every array with
// its offset into the payload and carries the metadata object.
struct ModelBundle {
  std::uint32_t version = kBundleFormatVersion;
  std::vector<NamedArray> arrays;
  nlohmann::json metadata = nlohmann::json::object();
  std::string digest;  // hex SHA-256, set by serialize/deserialize

  void add(std::string name, const Tensor& t);
  // Every parameter as "<prefix><parameter name>".
  void add_parameters(const std::string& prefix, const ParameterSet& params);
  bool contains(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;
  Tensor tensor(const std::string& name) const;
  // Parameters stored under `prefix`, in file order, names without the prefix.
  ParameterSet parameters(const std::string& prefix) const;
};

std::string sha256_hex(std::string_view bytes);

// Serializes and sets bundle.digest.
std::string serialize_bundle(ModelBundle& bundle);
// Throws BundleError on bad magic, unsupported version, truncation or digest
// mismatch.
ModelBundle deserialize_bundle(std::string_view bytes);

void save_bundle(ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

}  // namespace dtwin
