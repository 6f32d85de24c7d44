#pragma once

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/map.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/vector.hpp>
#include <zlib.h>

#include <chrono>
#include <cstdint>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "ote/errors.hpp"
#include "ote/tensor.hpp"

// Self-describing container for parameter sets and checkpoints.
//
// File layout: 8-byte magic, u64 payload length (little endian), payload
// (cereal portable binary), u32 CRC-32 of the payload.

namespace ote {

struct ArrayRecord {
  std::string name;
  std::vector<int> shape;
  std::string dtype;  // "f32" or "f64"
  std::vector<std::uint8_t> bytes;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(name, shape, dtype, bytes);
  }
};

struct Container {
  std::string fingerprint;
  std::map<std::string, std::string> metadata;
  std::vector<ArrayRecord> arrays;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(fingerprint, metadata, arrays);
  }

  const ArrayRecord* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

inline constexpr char kContainerMagic[8] = {'O', 'T', 'E', 'C', 'K', 'P', 'T', '1'};

inline std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
  std::ostringstream payload_os(std::ios::binary);
  {
    cereal::PortableBinaryOutputArchive ar(payload_os);
    ar(c);
  }
  const std::string payload = payload_os.str();
  const std::uint64_t len = payload.size();
  const std::uint32_t crc = crc32_of(payload);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw WriteFailure("cannot open for writing: " + path.string());
  out.write(kContainerMagic, sizeof kContainerMagic);
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((crc >> (8 * i)) & 0xff));
  if (!out) throw WriteFailure("write failed: " + path.string());
}

/// Reads and verifies a container; truncation and checksum errors raise CorruptData.
inline Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound("no such file: " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kContainerMagic, 8) != 0)
    throw CorruptData("not a parameter container (bad magic or truncated): " + path.string());
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
  if (bytes.size() != 16 + len + 4) throw CorruptData("container truncated or padded: " + path.string());
  const std::string payload = bytes.substr(16, len);
  std::uint32_t crc = 0;
  for (int i = 0; i < 4; ++i)
    crc |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[16 + len + i])) << (8 * i);
  if (crc != crc32_of(payload)) throw CorruptData("container checksum mismatch: " + path.string());
  Container c;
  std::istringstream is(payload, std::ios::binary);
  try {
    cereal::PortableBinaryInputArchive ar(is);
    ar(c);
  } catch (const cereal::Exception& e) {
    throw CorruptData(std::string("container payload undecodable: ") + e.what());
  }
  return c;
}

/// CRC-32 stored in a container file's trailer.
inline std::uint32_t stored_checksum(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4) throw CorruptData("file too short");
  std::uint32_t crc = 0;
  for (int i = 0; i < 4; ++i)
    crc |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[bytes.size() - 4 + i])) << (8 * i);
  return crc;
}

template <class T>
void put_params(Container& c, const std::string& group, const ParameterSet<T>& p) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  for (const auto& a : p) {
    ArrayRecord r;
    r.name = group + "/" + a.name;
    r.shape = a.shape;
    r.dtype = std::is_same_v<T, float> ? "f32" : "f64";
    r.bytes.resize(a.data.size() * sizeof(T));
    std::memcpy(r.bytes.data(), a.data.data(), r.bytes.size());
    c.arrays.push_back(std::move(r));
  }
}

/// Fills a parameter set with the given layout from `group` in the container.
template <class T>
ParameterSet<T> get_params(const Container& c, const std::string& group, const ParameterSet<T>& layout) {
  ParameterSet<T> out = layout;
  const std::string dtype = std::is_same_v<T, float> ? "f32" : "f64";
  for (auto& a : out) {
    const ArrayRecord* r = c.find(group + "/" + a.name);
    if (!r) throw FingerprintMismatch("container lacks array " + group + "/" + a.name);
    if (r->shape != a.shape || r->dtype != dtype) throw FingerprintMismatch("array " + r->name + " has wrong shape or type");
    if (r->bytes.size() != a.data.size() * sizeof(T)) throw CorruptData("array " + r->name + " has wrong byte length");
    std::memcpy(a.data.data(), r->bytes.data(), r->bytes.size());
  }
  return out;
}

template <class T>
void save_parameters(const ParameterSet<T>& p, const std::string& fingerprint, const std::filesystem::path& path,
                     std::map<std::string, std::string> metadata = {}) {
  Container c;
  c.fingerprint = fingerprint;
  c.metadata = std::move(metadata);
  c.metadata.emplace("created", utc_timestamp());
  c.metadata.emplace("parameter_count", std::to_string(p.total_count()));
  put_params(c, "params", p);
  write_container(path, c);
}

/// Loads parameters saved by save_parameters; the fingerprint must match exactly.
template <class T>
ParameterSet<T> load_parameters(const std::filesystem::path& path, const std::string& fingerprint,
                                const ParameterSet<T>& layout) {
  const Container c = read_container(path);
  if (c.fingerprint != fingerprint)
    throw FingerprintMismatch("fingerprint mismatch: file has '" + c.fingerprint + "', expected '" + fingerprint + "'");
  return get_params(c, "params", layout);
}

}  // namespace ote
