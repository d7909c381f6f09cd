#include "dtwin/bundle.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dtwin/error.hpp"

namespace dtwin {

static_assert(std::endian::native == std::endian::little, "bundle I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'T', 'W', 'I', 'N', 'B', 'N', 'D'};
constexpr std::size_t kPrefix = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
constexpr std::size_t kDigestBytes = 32;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get(std::string_view in, std::size_t at) {
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

std::string raw_sha256(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1 || len != kDigestBytes) {
    throw Error("SHA-256 computation failed");
  }
  return std::string(reinterpret_cast<const char*>(md), len);
}

std::string to_hex(std::string_view raw) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) {
    out += digits[c >> 4];
    out += digits[c & 15];
  }
  return out;
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

void ModelBundle::add(std::string name, const Tensor& t) {
  if (contains(name)) throw UsageError("bundle already has an array named '" + name + "'");
  NamedArray a;
  a.name = std::move(name);
  a.shape = t.shape();
  a.data.assign(t.data().begin(), t.data().end());
  arrays.push_back(std::move(a));
}

void ModelBundle::add_parameters(const std::string& prefix, const ParameterSet& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    add(prefix + params.at(i).name, params.at(i).value);
    arrays.back().trainable = params.at(i).trainable;
  }
}

bool ModelBundle::contains(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

const NamedArray& ModelBundle::at(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw BundleError("bundle has no array named '" + name + "'");
}

Tensor ModelBundle::tensor(const std::string& name) const {
  const NamedArray& a = at(name);
  return Tensor(a.shape, a.data);
}

ParameterSet ModelBundle::parameters(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& a : arrays) {
    if (a.name.compare(0, prefix.size(), prefix) != 0) continue;
    out.add(a.name.substr(prefix.size()), Tensor(a.shape, a.data), a.trainable);
  }
  if (out.size() == 0) throw BundleError("bundle has no parameters under '" + prefix + "'");
  return out;
}

std::string sha256_hex(std::string_view bytes) { return to_hex(raw_sha256(bytes)); }

std::string serialize_bundle(ModelBundle& bundle) {
  nlohmann::json header;
  header["format_version"] = bundle.version;
  header["metadata"] = bundle.metadata;
  header["arrays"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : bundle.arrays) {
    if (a.dtype != "f64") throw BundleError("array '" + a.name + "': unsupported dtype " + a.dtype);
    if (element_count(a.shape) != a.data.size()) throw BundleError("array '" + a.name + "': shape does not match data");
    header["arrays"].push_back(
        {{"name", a.name}, {"dtype", a.dtype}, {"shape", a.shape}, {"offset", offset}, {"trainable", a.trainable}});
    offset += a.data.size();
  }
  const std::string h = header.dump();

  std::string out;
  out.reserve(kPrefix + h.size() + offset * sizeof(double) + kDigestBytes);
  out.append(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, bundle.version);
  put<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& a : bundle.arrays) {
    out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(double));
  }
  const std::string digest = raw_sha256(out);
  out += digest;
  bundle.digest = to_hex(digest);
  return out;
}

ModelBundle deserialize_bundle(std::string_view bytes) {
  if (bytes.size() < kPrefix + kDigestBytes || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw BundleError("not a model bundle");
  }
  const auto version = get<std::uint32_t>(bytes, sizeof(kMagic));
  if (version != kBundleFormatVersion) {
    throw BundleError("bundle format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kBundleFormatVersion) + ")");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - kDigestBytes);
  const std::string_view stored = bytes.substr(bytes.size() - kDigestBytes);
  if (raw_sha256(body) != stored) throw BundleError("bundle digest mismatch: file is corrupt");

  const auto header_len = get<std::uint64_t>(bytes, sizeof(kMagic) + sizeof(std::uint32_t));
  if (header_len > body.size() - kPrefix) throw BundleError("bundle header is truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(body.substr(kPrefix, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(std::string("bundle header is not valid JSON: ") + e.what());
  }

  ModelBundle b;
  b.version = version;
  b.metadata = header.value("metadata", nlohmann::json::object());
  const std::string_view payload = body.substr(kPrefix + header_len);
  const std::size_t total = payload.size() / sizeof(double);
  if (payload.size() % sizeof(double) != 0) throw BundleError("bundle payload is truncated");
  try {
    for (const auto& entry : header.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.dtype = entry.at("dtype").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<std::size_t>>();
      a.trainable = entry.value("trainable", true);
      if (a.dtype != "f64") throw BundleError("array '" + a.name + "': unsupported dtype " + a.dtype);
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = element_count(a.shape);
      if (offset > total || n > total - offset) throw BundleError("array '" + a.name + "' lies outside the payload");
      a.data.resize(n);
      std::memcpy(a.data.data(), payload.data() + offset * sizeof(double), n * sizeof(double));
      b.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw BundleError(std::string("malformed bundle header: ") + e.what());
  }
  b.digest = to_hex(stored);
  return b;
}

void save_bundle(ModelBundle& bundle, const std::filesystem::path& path) {
  const std::string bytes = serialize_bundle(bundle);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError("cannot open bundle " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_bundle(ss.str());
}

}  // namespace dtwin
