#pragma once

// Binary checkpoint container.
//
//   bytes 0..7   magic "TXLMCKPT"
//   u32          format version
//   u64          header length N
//   N bytes      JSON header (UTF-8): arbitrary metadata plus
//                "sections": [{"name", "offset", "count"}] with offsets in floats
//   payload      little-endian float32 arrays, concatenated in section order
//
// The header is dumped with sorted keys, so equal contents give equal bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "txlm/common.hpp"

namespace txlm::ckpt {

inline constexpr char kMagic[8] = {'T', 'X', 'L', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Section {
  std::string name;
  std::vector<float> values;
};

struct Checkpoint {
  nlohmann::json header;
  std::vector<Section> sections;

  const std::vector<float>& section(std::string_view name) const {
    for (const auto& s : sections) {
      if (s.name == name) return s.values;
    }
    throw Error("checkpoint has no section '" + std::string(name) + "'");
  }
};

namespace detail {

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw Error("truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string serialize(const Checkpoint& c) {
  nlohmann::json header = c.header;
  header["sections"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& s : c.sections) {
    header["sections"].push_back({{"name", s.name}, {"offset", offset}, {"count", s.values.size()}});
    offset += s.values.size();
  }
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  detail::put<std::uint32_t>(out, kFormatVersion);
  detail::put<std::uint64_t>(out, h.size());
  out += h;
  for (const auto& s : c.sections) {
    out.append(reinterpret_cast<const char*>(s.values.data()), s.values.size() * sizeof(float));
  }
  return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("not a checkpoint file (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = detail::take<std::uint32_t>(bytes, pos);
  if (version != kFormatVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  const auto hlen = detail::take<std::uint64_t>(bytes, pos);
  if (pos + hlen > bytes.size()) throw Error("truncated checkpoint header");
  Checkpoint c;
  c.header = nlohmann::json::parse(bytes.substr(pos, hlen));
  pos += hlen;
  const std::size_t payload = pos;
  for (const auto& s : c.header.at("sections")) {
    Section sec;
    sec.name = s.at("name").get<std::string>();
    const auto off = s.at("offset").get<std::size_t>();
    const auto count = s.at("count").get<std::size_t>();
    const std::size_t begin = payload + off * sizeof(float);
    if (begin + count * sizeof(float) > bytes.size()) throw Error("truncated checkpoint payload");
    sec.values.resize(count);
    std::memcpy(sec.values.data(), bytes.data() + begin, count * sizeof(float));
    c.sections.push_back(std::move(sec));
  }
  c.header.erase("sections");
  return c;
}

inline void save(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint: " + path);
  const std::string bytes = serialize(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint: " + path);
}

inline Checkpoint load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace txlm::ckpt
