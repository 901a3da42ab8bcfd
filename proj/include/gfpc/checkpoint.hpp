#pragma once

// Flat parameter archive:
//
//   "GFPC1"  u64 config digest  u32 entry count
//   per entry: u16 name length, UTF-8 name, u8 rank, u32 dims[rank],
//              f32 values[prod(dims)]
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "gfpc/errors.hpp"
#include "gfpc/tensor.hpp"

namespace gfpc {

inline constexpr char kCheckpointMagic[5] = {'G', 'F', 'P', 'C', '1'};

struct Checkpoint {
  std::uint64_t digest = 0;
  ParameterSet<float> params;
};

inline std::string digest_hex(std::uint64_t d) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << d;
  return os.str();
}

namespace detail {

class ByteWriter {
 public:
  template <class U>
  void put(U v) {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                    std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                       std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    const auto bits = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  void put_bytes(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& bytes, std::string path) : bytes_(bytes), path_(std::move(path)) {}

  template <class U>
  U get() {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                    std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                       std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<Bits>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("corrupt checkpoint " + path_ + ": truncated payload");
  }

  const std::vector<char>& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void save_checkpoint(const ParameterSet<float>& params, std::uint64_t digest, const std::string& path) {
  detail::ByteWriter out;
  out.put_bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.put(digest);
  out.put(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    if (name.size() > 0xffff) throw CheckpointError("parameter name too long: " + name);
    if (t.rank() > 0xff) throw CheckpointError("parameter rank too large: " + name);
    out.put(static_cast<std::uint16_t>(name.size()));
    out.put_bytes(name.data(), name.size());
    out.put(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) out.put(static_cast<std::uint32_t>(d));
    for (float v : t.values()) out.put(v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
  if (!f) throw IoError("failed writing " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader in(bytes, path);
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw CheckpointError("corrupt checkpoint " + path + ": bad magic");
  in.get_string(sizeof(kCheckpointMagic));
  Checkpoint ck;
  ck.digest = in.get<std::uint64_t>();
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = in.get<std::uint16_t>();
    std::string name = in.get_string(len);
    const auto rank = in.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) {
      d = in.get<std::uint32_t>();
      if (d == 0) throw CheckpointError("corrupt checkpoint " + path + ": zero dimension in " + name);
    }
    std::vector<float> data(shape_size(shape));
    for (auto& v : data) v = in.get<float>();
    if (!ck.params.emplace(name, Tensor<float>(std::move(shape), std::move(data))).second)
      throw CheckpointError("corrupt checkpoint " + path + ": duplicate entry " + name);
  }
  if (!in.at_end()) throw CheckpointError("corrupt checkpoint " + path + ": trailing bytes");
  return ck;
}

/// Loads and refuses a checkpoint written for a different configuration.
inline Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_digest) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.digest != expected_digest)
    throw DigestError("checkpoint " + path + " has config digest " + digest_hex(ck.digest) + ", expected " +
                      digest_hex(expected_digest));
  return ck;
}

/// Digest over the raw bytes of every parameter, for bit-exact comparisons.
inline std::uint64_t params_digest(const ParameterSet<float>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    mix(t.data(), t.size() * sizeof(float));
  }
  return h;
}

}  // namespace gfpc
